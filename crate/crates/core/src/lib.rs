//! Joint design of sensor schedulers and remote estimators.
//!
//! A set of sensors observes a random vector `X` but only one measurement can
//! cross the shared network per observation. The scheduler picks which one and
//! the remote estimators reconstruct the rest. The mean-squared estimation
//! error is non-convex in the estimator parameters, but it is a difference of
//! two convex functions, which the convex-concave procedure minimizes with
//! closed-form steps:
//!
//! - [`unicast`]: non-scheduled estimators see an erasure and use a constant.
//! - [`broadcast`]: every estimator hears the transmitted value and applies an
//!   affine rule to it.
//! - [`learning`]: the same solvers driven by a dataset, with out-of-sample
//!   validation.

pub mod broadcast;
pub mod ccp;
pub mod cli;
pub mod error;
pub mod learning;
pub mod model;
pub mod reduce;
pub mod sampler;
pub mod unicast;

pub use ccp::{CcpOptions, InitBox, Multistart};
pub use error::{Error, Result};
pub use model::{
    BroadcastPolicy, CcpTrace, GaussianMixtureSpec, MixtureComponent, MomentSet, RiskReport,
    SampleMatrix, UnicastPolicy,
};
pub use sampler::ExpectationBackend;
