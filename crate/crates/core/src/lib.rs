//! Core numerics for communication-efficient distributed maximum-likelihood
//! estimation in generalized linear models.
//!
//! Everything in this crate is `no_std` (with `alloc`) and free of IO. The
//! companion `glmd` crate carries the socket runtime, file formats and CLI.
//!
//! Module map:
//! - [`glm`]: probit/logistic/Poisson families, log-likelihood, score,
//!   Fisher information and observed Hessian.
//! - [`linalg`]: dense SPD kernel (Cholesky, solve, inverse, extreme eigenvalues).
//! - [`solver`]: Fisher-scoring MLE and the single one-step update.
//! - [`distributed`]: weighted average, AEE, one-step and CSL-style estimators.
//! - [`transport`]: the round-based exchange the distributed estimators drive.
//! - [`datagen`], [`spline`]: synthetic designs, shards, B-spline expansion.
//! - [`metrics`]: RMSE, coverage, relative efficiency, SE, AUC.
//! - [`wire`]: the bit-exact binary message codec.
#![no_std]

extern crate alloc;

#[cfg(test)]
extern crate std;

pub mod datagen;
pub mod distributed;
pub mod error;
pub mod glm;
pub mod linalg;
pub mod metrics;
pub mod rng;
pub mod solver;
pub mod special;
pub mod spline;
mod sum;
pub mod transport;
pub mod wire;

#[cfg(test)]
mod test_oracles;

pub use distributed::{DistributedEstimate, LocalFit, LocalScoreFisher, Method, Shard};
pub use error::{Error, Result};
pub use glm::{Dataset, FamilyFn, FamilyKind, GlmFamily};
pub use linalg::{CholeskyFactor, Matrix, SpdMatrix};
pub use solver::{FitOptions, FitResult};
pub use transport::{CountingTransport, InProcessTransport, Transport};
