//! Embedding extraction and the unsupervised analysis stack: max-pooled
//! sequence embeddings, PCA, exact t-SNE, Gaussian mixtures, cluster
//! fingerprints and clustering agreement.

pub mod ari;
pub mod embed;
pub mod error;
pub mod fingerprint;
pub mod gmm;
pub mod pca;
pub mod svg;
pub mod tsne;

pub use ari::adjusted_rand_index;
pub use embed::{embed, EmbeddingMatrix};
pub use error::{AnalysisError, Result};
pub use fingerprint::{fingerprint, ClusterFingerprint, PlayerActivity};
pub use gmm::{Gmm, GmmConfig};
pub use pca::Pca;
pub use tsne::{tsne, TsneConfig, TsneResult};
