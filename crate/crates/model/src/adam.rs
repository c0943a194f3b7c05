//! Adam with bias correction and a constant learning rate.

use serde::{Deserialize, Serialize};

use crate::error::{ModelError, Result};
use crate::scalar::Scalar;
use crate::tensor::ParamSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
    pub t: u64,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.tensors.iter().map(|p| vec![T::zero(); p.len()]).collect();
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    /// Applies one update from the parameters' gradient buffers; a missing
    /// buffer counts as a zero gradient. Nothing is modified when any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamSet<T>) -> Result<()> {
        for (name, t) in params.names.iter().zip(&params.tensors) {
            if let Some(g) = &t.grad {
                if g.iter().any(|x| !x.is_finite()) {
                    return Err(ModelError::NonFiniteGradient(name.clone()));
                }
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::from_f64(c.beta1), T::from_f64(c.beta2));
        let (one, eps, lr) = (T::one(), T::from_f64(c.eps), T::from_f64(c.lr));
        let bc1 = T::from_f64(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::from_f64(1.0 - c.beta2.powi(self.t as i32));
        for ((p, m), v) in params.tensors.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            let Some(g) = &p.grad else {
                // Zero gradient: moments decay, parameters still move by
                // whatever momentum remains.
                for ((w, mi), vi) in p.data.iter_mut().zip(m.iter_mut()).zip(v.iter_mut()) {
                    *mi *= b1;
                    *vi *= b2;
                    *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
                }
                continue;
            };
            for (((w, gi), mi), vi) in p.data.iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = b1 * *mi + (one - b1) * *gi;
                *vi = b2 * *vi + (one - b2) * *gi * *gi;
                *w -= lr * (*mi / bc1) / ((*vi / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}
