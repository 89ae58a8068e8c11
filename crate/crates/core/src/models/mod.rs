//! State-space models, the flows built from them, and the exact oracles used to check
//! particle estimates.

mod finite;
mod flows;
mod linear_gaussian;

pub use finite::{exact_binary_quantities, BinaryQuantities, BinaryToyModel, FiniteHmm};
pub use flows::{build_flow, ApfSpec, FlowKind, SsmFlow, TransitionProposal, TwistedProposal};
pub use linear_gaussian::{
    discretised_linear_gaussian, kalman_log_marginal_likelihood, simulate_linear_gaussian,
    LinearGaussianModel,
};

use std::fmt::Debug;

use crate::fk::SmcRng;

/// A hidden Markov model with fixed observations `y_{1:T}`.
///
/// Observations are baked into `log_observation_density`, which returns
/// `log g_n(x, y_n)`. Densities are with respect to the model's reference measure
/// (counting measure on finite spaces, Lebesgue otherwise).
pub trait StateSpaceModel: Send + Sync {
    type State: Clone + Debug + PartialEq + Send + Sync + 'static;

    /// Number of observations `T`.
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn sample_initial(&self, rng: &mut SmcRng) -> Self::State;
    fn sample_transition(&self, n: usize, prev: &Self::State, rng: &mut SmcRng) -> Self::State;
    fn log_initial_density(&self, x: &Self::State) -> f64;
    fn log_transition_density(&self, n: usize, prev: &Self::State, x: &Self::State) -> f64;
    fn log_observation_density(&self, n: usize, x: &Self::State) -> f64;

    /// Closed-form pieces of the fully adapted flow, when available.
    fn fully_adapted(&self) -> Option<&dyn FullyAdapted<Self::State>> {
        None
    }

    fn finite_states(&self) -> Option<Vec<Self::State>> {
        None
    }

    /// `∫ f(x) L_n(prev, dx)` (or `∫ f dL_1` when `prev` is `None`), when it can be
    /// computed exactly.
    fn integrate_transition(
        &self,
        _n: usize,
        _prev: Option<&Self::State>,
        _f: &dyn Fn(&Self::State) -> f64,
    ) -> Option<f64> {
        None
    }
}

/// The integrals the fully adapted flow needs.
pub trait FullyAdapted<S>: Send + Sync {
    /// `log L_n(g_n)(x_{n-1})`; with `prev = None` this is `log L_1(g_1)`.
    fn log_predictive(&self, n: usize, prev: Option<&S>) -> f64;
    /// Draw from `L_n(x_{n-1}, dx) g_n(x) / L_n(g_n)(x_{n-1})`.
    fn sample_twisted(&self, n: usize, prev: Option<&S>, rng: &mut SmcRng) -> S;
    fn log_twisted_density(&self, n: usize, prev: Option<&S>, x: &S) -> f64;
}
