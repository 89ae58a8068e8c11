//! Particle approximations of Feynman–Kac flows in which resampling is replaced by
//! MCMC moves, together with exact finite-space analysis of their asymptotic variance.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod analysis;
pub mod engine;
pub mod error;
pub mod experiments;
pub mod fk;
pub mod kernels;
pub mod models;
pub mod rng;

pub use engine::{
    filter_estimate, log_likelihood_estimate, predictor_estimate, run_mcmc_pf, PredictorEstimate, RunConfig,
};
pub use error::{Result, SmcError};
pub use fk::{Cloud, Flow, ParticleRun, PathParticle, StorageMode, TestFunction};
pub use kernels::{AncestorWeighting, InitPolicy, KernelKind, KernelSpec};
pub use rng::SmcRng;
