//! Post-training low-rank compression of small dense networks.
//!
//! Each layer weight `W` is whitened against its calibration activations,
//! `A = W S` with `S = chol(X Xᵀ + λI)`, and the singular components of `A`
//! are scored by a first-order estimate of the loss change from dropping
//! them. A global selector removes components across all layers while
//! keeping the running sum of those estimates close to zero, until a
//! parameter budget is met. An optional correction loop then pulls each
//! truncated layer back toward its original weight along the loss gradient.
//!
//! The modules, roughly in pipeline order:
//!
//! - [`linalg`]: dense matrices, Jacobi SVD, ridge Cholesky, triangular solves
//! - [`toynet`]: a deterministic MLP with exact gradients and calibration data
//! - [`whiten`]: whitening, sensitivities and factor reconstruction
//! - [`select`]: zero-sum selection, ablation strategies and budget accounting
//! - [`correct`]: the correct / re-truncate loop and effective-rank reports
//! - [`compressed`]: the compressed model and its evaluation
//! - [`store`]: tensor files, quantization and reports
//! - [`pipeline`]: everything above wired together
//! - [`oracle`]: independent brute-force checks
//! - [`cli`]: the command-line front end

pub mod cli;
pub mod compressed;
pub mod correct;
pub mod error;
pub mod linalg;
pub mod oracle;
pub mod pipeline;
pub mod select;
pub mod store;
pub mod toynet;
pub mod whiten;

pub use error::{Error, Result};
pub use linalg::Mat;
