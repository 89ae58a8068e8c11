use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Result, SmcError};
use crate::fk::TestFunction;
use crate::kernels::{AncestorWeighting, GaussianRandomWalk, GridRandomWalk, InitPolicy, KernelKind, KernelSpec, RandomWalk};
use crate::models::{FiniteHmm, FlowKind, LinearGaussianModel, StateSpaceModel, TransitionProposal};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FlowChoice {
    Bpf,
    Faapf,
}

impl FlowChoice {
    pub fn kind<S>(self) -> FlowKind<S> {
        match self {
            Self::Bpf => FlowKind::Bpf,
            Self::Faapf => FlowKind::FaApf,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Self::Bpf => "bpf",
            Self::Faapf => "faapf",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum KernelConfig {
    PerfectMixing,
    Lazy {
        epsilon: f64,
    },
    /// Proposal `R_n = L_n`.
    IndependentMh {
        #[serde(default)]
        weighting: AncestorWeighting,
    },
    /// Random walk on the newest coordinate: nearest-neighbour on finite spaces,
    /// Gaussian with per-coordinate `scale` (default `1/√d`) on `R^d`.
    RandomWalkMh {
        #[serde(default)]
        weighting: AncestorWeighting,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        scale: Option<f64>,
    },
}

impl KernelConfig {
    pub fn label(&self) -> String {
        match self {
            Self::PerfectMixing => "perfect-mixing".into(),
            Self::Lazy { epsilon } => format!("lazy(eps={epsilon:?})"),
            Self::IndependentMh { weighting } => format!("imh({})", weighting_label(*weighting)),
            Self::RandomWalkMh { weighting, .. } => format!("rwmh({})", weighting_label(*weighting)),
        }
    }
}

fn weighting_label(w: AncestorWeighting) -> &'static str {
    match w {
        AncestorWeighting::Potential => "F=G",
        AncestorWeighting::Uniform => "F=1",
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "policy", rename_all = "kebab-case")]
pub enum InitConfig {
    #[default]
    Stationary,
    /// Ancestor drawn from the previous cloud, extended by `L_n`, then `iterations`
    /// kernel steps.
    Burnin { iterations: usize },
}

/// Test functions on finite models, evaluated on the newest state index.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum FiniteTestFunction {
    /// `f(path_n) = x_n`.
    FinalState,
    Indicator { state: usize },
    Constant { value: f64 },
}

impl FiniteTestFunction {
    pub fn build(self) -> TestFunction<usize> {
        match self {
            Self::FinalState => TestFunction::final_coordinate(|x: &usize| *x as f64),
            Self::Indicator { state } => TestFunction::final_coordinate(move |x: &usize| f64::from(u8::from(*x == state))),
            Self::Constant { value } => TestFunction::constant(value),
        }
    }

    pub fn is_constant(self) -> bool {
        matches!(self, Self::Constant { .. })
    }
}

pub(crate) fn build_kernel<M: StateSpaceModel + 'static>(
    model: &Arc<M>,
    kernel: &KernelConfig,
    init: &InitConfig,
    walk: impl FnOnce(Option<f64>) -> Arc<dyn RandomWalk<M::State>>,
) -> Result<KernelSpec<M::State>> {
    let kind = match *kernel {
        KernelConfig::PerfectMixing => KernelKind::PerfectMixing,
        KernelConfig::Lazy { epsilon } => KernelKind::LazyMixture { epsilon },
        KernelConfig::IndependentMh { weighting } => {
            KernelKind::IndependentMh { weighting, proposal: Arc::new(TransitionProposal(Arc::clone(model))) }
        }
        KernelConfig::RandomWalkMh { weighting, scale } => {
            if let Some(s) = scale {
                if !(s > 0.0 && s.is_finite()) {
                    return Err(SmcError::Config(format!("random-walk scale {s} must be positive")));
                }
            }
            KernelKind::RandomWalkMh { weighting, walk: walk(scale) }
        }
    };
    let init = match *init {
        InitConfig::Stationary => InitPolicy::Stationary,
        InitConfig::Burnin { iterations } => {
            InitPolicy::Burnin { proposal: Arc::new(TransitionProposal(Arc::clone(model))), iterations }
        }
    };
    let spec = KernelSpec { kind, init };
    spec.validate()?;
    Ok(spec)
}

pub fn finite_kernel(hmm: &Arc<FiniteHmm>, kernel: &KernelConfig, init: &InitConfig) -> Result<KernelSpec<usize>> {
    let size = hmm.states();
    build_kernel(hmm, kernel, init, |_| Arc::new(GridRandomWalk { size }))
}

pub fn linear_gaussian_kernel(
    model: &Arc<LinearGaussianModel>,
    kernel: &KernelConfig,
    init: &InitConfig,
) -> Result<KernelSpec<Vec<f64>>> {
    let default = model.proposal_scale();
    build_kernel(model, kernel, init, |s| Arc::new(GaussianRandomWalk { scale: s.unwrap_or(default) }))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn serde_shapes() {
        let k: KernelConfig = serde_json::from_str(r#"{"kind":"lazy","epsilon":0.5}"#).unwrap();
        assert_eq!(k, KernelConfig::Lazy { epsilon: 0.5 });
        let k: KernelConfig = serde_json::from_str(r#"{"kind":"random-walk-mh","weighting":"uniform"}"#).unwrap();
        assert_eq!(k, KernelConfig::RandomWalkMh { weighting: AncestorWeighting::Uniform, scale: None });
        let i: InitConfig = serde_json::from_str(r#"{"policy":"burnin","iterations":100}"#).unwrap();
        assert_eq!(i, InitConfig::Burnin { iterations: 100 });
    }

    #[test]
    fn invalid_kernels_are_config_errors() {
        let hmm = Arc::new(crate::models::BinaryToyModel::new(0.5, 0.0).unwrap().hmm());
        assert!(finite_kernel(&hmm, &KernelConfig::Lazy { epsilon: 1.0 }, &InitConfig::Stationary).is_err());
        assert!(finite_kernel(&hmm, &KernelConfig::PerfectMixing, &InitConfig::Burnin { iterations: 0 }).is_err());
    }
}
