use std::fmt::Debug;
use std::sync::Arc;

use super::StateSpaceModel;
use crate::error::{Result, SmcError};
use crate::fk::{Flow, SmcRng};
use crate::kernels::Proposal;

/// User ingredients of a general auxiliary flow.
#[derive(Clone)]
pub struct ApfSpec<S> {
    /// `log g̃_n(x_n, y_{n+1})` for `n < T`, an approximation of `log L_{n+1}(g_{n+1})(x_n)`.
    pub twist: Arc<dyn Fn(usize, &S) -> f64 + Send + Sync>,
    /// `M'_n`, an approximation of the fully adapted mutation (`M'_1` approximates `π_1`).
    pub proposal: Arc<dyn Proposal<S>>,
}

#[derive(Clone)]
pub enum FlowKind<S> {
    /// `G_n = g_n`, `M_n = L_n`: `η_n` is the predictor and `Z_{n+1} = 𝓛_n`.
    Bpf,
    /// `G_n = L_{n+1}(g_{n+1})`, `M_n ∝ L_n g_n`: `η_n` is the filter and `Z_n = 𝓛_n` for `n ≥ 2`.
    FaApf,
    Apf(ApfSpec<S>),
}

impl<S> Debug for FlowKind<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            FlowKind::Bpf => "Bpf",
            FlowKind::FaApf => "FaApf",
            FlowKind::Apf(_) => "Apf",
        })
    }
}

/// A Feynman–Kac flow induced by a state-space model.
///
/// The fully adapted flow carries the constant `𝓛_1 = L_1(g_1)` in `G_1`, as the
/// auxiliary construction with `M'_1 = π_1` does, so that `Z_n = 𝓛_n` for `n ≥ 2`. At the final time
/// `T` no look-ahead observation exists: the fully adapted potential is `G_T ≡ 1` and
/// the auxiliary twist `g̃_T ≡ 1`.
pub struct SsmFlow<M: StateSpaceModel> {
    model: Arc<M>,
    kind: FlowKind<M::State>,
}

impl<M: StateSpaceModel> Clone for SsmFlow<M> {
    fn clone(&self) -> Self {
        Self { model: Arc::clone(&self.model), kind: self.kind.clone() }
    }
}

/// Builds the bootstrap, fully adapted or general auxiliary flow of `model`.
pub fn build_flow<M: StateSpaceModel>(model: Arc<M>, kind: FlowKind<M::State>) -> Result<SsmFlow<M>> {
    if matches!(kind, FlowKind::FaApf) && model.fully_adapted().is_none() {
        return Err(SmcError::Config(
            "fully adapted flow needs closed-form predictive likelihoods and twisted kernels".into(),
        ));
    }
    if model.is_empty() {
        return Err(SmcError::Config("model has no observations".into()));
    }
    Ok(SsmFlow { model, kind })
}

impl<M: StateSpaceModel> SsmFlow<M> {
    pub fn model(&self) -> &Arc<M> {
        &self.model
    }

    pub fn kind(&self) -> &FlowKind<M::State> {
        &self.kind
    }

    fn fa(&self) -> &dyn super::FullyAdapted<M::State> {
        self.model.fully_adapted().expect("checked in build_flow")
    }

    fn twist(&self, spec: &ApfSpec<M::State>, n: usize, x: &M::State) -> f64 {
        if n < self.model.len() {
            (spec.twist)(n, x)
        } else {
            0.0
        }
    }

    fn log_fa_potential(&self, n: usize, x: &M::State) -> f64 {
        if n >= self.model.len() {
            return 0.0;
        }
        let head = if n == 1 { self.fa().log_predictive(1, None) } else { 0.0 };
        head + self.fa().log_predictive(n + 1, Some(x))
    }
}

fn last<S>(path: &[S]) -> &S {
    path.last().expect("non-empty path")
}

impl<M: StateSpaceModel> Flow for SsmFlow<M> {
    type State = M::State;

    fn horizon(&self) -> Option<usize> {
        Some(self.model.len())
    }

    fn memory(&self) -> Option<usize> {
        Some(match self.kind {
            FlowKind::Apf(_) => 2,
            _ => 1,
        })
    }

    fn sample_initial(&self, rng: &mut SmcRng) -> Result<M::State> {
        Ok(match &self.kind {
            FlowKind::Bpf => self.model.sample_initial(rng),
            FlowKind::FaApf => self.fa().sample_twisted(1, None, rng),
            FlowKind::Apf(spec) => spec.proposal.sample(1, &[], rng)?,
        })
    }

    fn sample_transition(&self, n: usize, parent: &[M::State], rng: &mut SmcRng) -> Result<M::State> {
        let prev = last(parent);
        Ok(match &self.kind {
            FlowKind::Bpf => self.model.sample_transition(n, prev, rng),
            FlowKind::FaApf => self.fa().sample_twisted(n, Some(prev), rng),
            FlowKind::Apf(spec) => spec.proposal.sample(n, parent, rng)?,
        })
    }

    fn log_potential(&self, n: usize, path: &[M::State]) -> Result<f64> {
        let x = last(path);
        match &self.kind {
            FlowKind::Bpf => Ok(self.model.log_observation_density(n, x)),
            FlowKind::FaApf => Ok(self.log_fa_potential(n, x)),
            FlowKind::Apf(spec) => {
                let obs = self.model.log_observation_density(n, x) + self.twist(spec, n, x);
                if n == 1 {
                    let ratio = importance_ratio(self.model.log_initial_density(x), spec.proposal.log_density(1, &[], x)?)?;
                    return Ok(ratio + obs);
                }
                if path.len() < 2 {
                    return Err(SmcError::Config("auxiliary potential needs the previous coordinate".into()));
                }
                let parent = &path[..path.len() - 1];
                let prev = last(parent);
                let prev_twist = self.twist(spec, n - 1, prev);
                if prev_twist == f64::NEG_INFINITY {
                    // the parent carries zero weight, so this path is never reached
                    return Ok(f64::NEG_INFINITY);
                }
                let ratio = importance_ratio(
                    self.model.log_transition_density(n, prev, x),
                    spec.proposal.log_density(n, parent, x)?,
                )?;
                Ok(ratio + obs - prev_twist)
            }
        }
    }

    fn has_densities(&self) -> bool {
        true
    }

    fn log_initial_density(&self, x: &M::State) -> Result<f64> {
        match &self.kind {
            FlowKind::Bpf => Ok(self.model.log_initial_density(x)),
            FlowKind::FaApf => Ok(self.fa().log_twisted_density(1, None, x)),
            FlowKind::Apf(spec) => spec.proposal.log_density(1, &[], x),
        }
    }

    fn log_transition_density(&self, n: usize, parent: &[M::State], x: &M::State) -> Result<f64> {
        let prev = last(parent);
        match &self.kind {
            FlowKind::Bpf => Ok(self.model.log_transition_density(n, prev, x)),
            FlowKind::FaApf => Ok(self.fa().log_twisted_density(n, Some(prev), x)),
            FlowKind::Apf(spec) => spec.proposal.log_density(n, parent, x),
        }
    }

    fn log_extension_weight(&self, n: usize, parent: &[M::State], x: &M::State) -> Result<f64> {
        match &self.kind {
            // G_{n-1} m_n = L_n(x_{n-1}, x) g_n(x), free of the predictive integral.
            FlowKind::FaApf if n > 1 => {
                let head = if n == 2 { self.fa().log_predictive(1, None) } else { 0.0 };
                Ok(head
                    + self.model.log_transition_density(n, last(parent), x)
                    + self.model.log_observation_density(n, x))
            }
            _ if n == 1 => self.log_initial_density(x),
            _ => Ok(self.log_potential(n - 1, parent)? + self.log_transition_density(n, parent, x)?),
        }
    }

    fn finite_states(&self) -> Option<Vec<M::State>> {
        self.model.finite_states()
    }
}

/// `log(l / q)` where a point outside both supports has ratio zero.
fn importance_ratio(log_l: f64, log_q: f64) -> Result<f64> {
    match (log_l == f64::NEG_INFINITY, log_q == f64::NEG_INFINITY) {
        (true, _) => Ok(f64::NEG_INFINITY),
        (false, true) => Err(SmcError::Model("auxiliary proposal does not cover the model transition".into())),
        _ => Ok(log_l - log_q),
    }
}

/// The model's own transition `L_n` (and `L_1` at `n = 1`) used as a proposal.
pub struct TransitionProposal<M: StateSpaceModel>(pub Arc<M>);

impl<M: StateSpaceModel> Proposal<M::State> for TransitionProposal<M> {
    fn sample(&self, n: usize, parent: &[M::State], rng: &mut SmcRng) -> Result<M::State> {
        Ok(match parent.last() {
            Some(prev) if n > 1 => self.0.sample_transition(n, prev, rng),
            _ => self.0.sample_initial(rng),
        })
    }

    fn log_density(&self, n: usize, parent: &[M::State], x: &M::State) -> Result<f64> {
        Ok(match parent.last() {
            Some(prev) if n > 1 => self.0.log_transition_density(n, prev, x),
            _ => self.0.log_initial_density(x),
        })
    }
}

/// The fully adapted (twisted) kernel used as a proposal.
pub struct TwistedProposal<M: StateSpaceModel>(pub Arc<M>);

impl<M: StateSpaceModel> Proposal<M::State> for TwistedProposal<M> {
    fn sample(&self, n: usize, parent: &[M::State], rng: &mut SmcRng) -> Result<M::State> {
        let fa = self.0.fully_adapted().ok_or_else(|| SmcError::Config("model is not fully adaptable".into()))?;
        Ok(fa.sample_twisted(n, parent.last().filter(|_| n > 1), rng))
    }

    fn log_density(&self, n: usize, parent: &[M::State], x: &M::State) -> Result<f64> {
        let fa = self.0.fully_adapted().ok_or_else(|| SmcError::Config("model is not fully adaptable".into()))?;
        Ok(fa.log_twisted_density(n, parent.last().filter(|_| n > 1), x))
    }
}
