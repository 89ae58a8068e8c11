//! Exact computations on finite state spaces: enumerated flows, kernel matrices, the
//! Poisson equation and the asymptotic variances of particle estimators.

mod enumerate;
mod kernel;
mod ssm;
mod variance;

pub use enumerate::{enumerate_flow, enumerate_flow_with_cap, FiniteFlow, DEFAULT_PATH_CAP};
pub use kernel::{dobrushin_of, KernelMatrix};
pub use ssm::ExactSsm;
pub use variance::{asymptotic_variance, final_integrand, Estimator, VarianceBreakdown, VarianceTerm};
