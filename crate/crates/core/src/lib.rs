//! Information-aware Dirichlet networks.
//!
//! A classifier whose softplus-plus-one output head emits the concentration
//! parameters of a Dirichlet over class probabilities, trained with a
//! max-norm Bayes-risk bound plus an information regularizer on off-class
//! concentrations. The crate covers the numerical kernels, the losses and
//! their gradients, a dense network with exact backpropagation, training,
//! uncertainty evaluation (in-distribution, out-of-distribution and FGSM),
//! and a certification suite for the loss's monotonicity properties.

pub mod data;
pub mod dirichlet;
pub mod error;
pub mod evaluation;
pub mod linalg;
pub mod losses;
pub mod network;
pub mod rng;
pub mod specfun;
pub mod training;
pub mod verify;

pub use dirichlet::{DirichletParams, ProbVector};
pub use error::{Error, Result};
pub use losses::{LossConfig, LossKind};
