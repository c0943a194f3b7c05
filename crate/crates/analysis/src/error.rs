use behavior_lm_model::ModelError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("sequence {0} is empty")]
    EmptySequence(usize),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{k} components requested but at most {max} are available")]
    TooManyComponents { k: usize, max: usize },
    #[error("need at least {need} rows, got {got}")]
    TooFewRows { need: usize, got: usize },
    #[error("covariance of component {0} is not positive definite after regularization")]
    Singular(usize),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

pub(crate) fn check_finite(x: &[f64], what: &'static str) -> Result<()> {
    if x.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(AnalysisError::NonFinite(what))
    }
}

pub(crate) fn check_shape(x: &[f64], rows: usize, dims: usize) -> Result<()> {
    if x.len() == rows * dims {
        Ok(())
    } else {
        Err(AnalysisError::Shape(format!("{} values for {rows}x{dims}", x.len())))
    }
}
