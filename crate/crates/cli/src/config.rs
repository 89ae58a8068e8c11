use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use seqmc::analysis::Estimator;
use seqmc::experiments::{
    FilterOutput, FiniteTestFunction, FlowChoice, Figure2Algorithm, InitConfig, KernelConfig,
};
use seqmc::models::{simulate_linear_gaussian, BinaryToyModel, FiniteHmm, LinearGaussianModel};
use seqmc::rng::{aux_rng, derive_seed};
use seqmc::{SmcError, StorageMode};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelConfig {
    Binary {
        alpha: f64,
        /// Lazy-kernel weight used when no kernel block is given.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        epsilon: Option<f64>,
    },
    LinearGaussian {
        d: usize,
        horizon: usize,
        /// `y_{1:T}`; simulated from `observation_seed` when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observations: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observation_seed: Option<u64>,
    },
    CustomFinite {
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        /// `log g_n(x, y_n)` per time and state.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        log_observations: Option<Vec<Vec<f64>>>,
        /// `emission[x][y]` together with observed symbols, as an alternative.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        emission: Option<Vec<Vec<f64>>>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        observations: Option<Vec<usize>>,
    },
}

pub enum BuiltModel {
    Finite(Arc<FiniteHmm>),
    LinearGaussian(Arc<LinearGaussianModel>),
}

impl ModelConfig {
    pub fn build(&self) -> Result<BuiltModel, CliError> {
        Ok(match self {
            Self::Binary { alpha, epsilon } => {
                BuiltModel::Finite(Arc::new(BinaryToyModel::new(*alpha, epsilon.unwrap_or(0.0))?.hmm()))
            }
            Self::LinearGaussian { d, horizon, observations, observation_seed } => {
                let ys = match (observations, observation_seed) {
                    (Some(ys), _) => ys.clone(),
                    (None, Some(seed)) => simulate_linear_gaussian(*d, *horizon, &mut aux_rng(*seed, "observations")).1,
                    (None, None) => return Err(CliError::Config("linear-gaussian model needs observations or a seed".into())),
                };
                if ys.len() != *horizon || ys.iter().any(|y| y.len() != *d) {
                    return Err(CliError::Config(format!("observations must be {horizon} vectors of length {d}")));
                }
                BuiltModel::LinearGaussian(Arc::new(LinearGaussianModel::new(*d, ys)?))
            }
            Self::CustomFinite { initial, transition, log_observations, emission, observations } => {
                let hmm = match (log_observations, emission, observations) {
                    (Some(lo), None, None) => FiniteHmm::new(initial.clone(), transition.clone(), lo.clone())?,
                    (None, Some(e), Some(ys)) => FiniteHmm::from_emission(initial.clone(), transition.clone(), e, ys)?,
                    _ => {
                        return Err(CliError::Config(
                            "custom-finite model needs either log_observations or emission with observations".into(),
                        ))
                    }
                };
                BuiltModel::Finite(Arc::new(hmm))
            }
        })
    }

    fn horizon(&self) -> Option<usize> {
        match self {
            Self::Binary { .. } => Some(BinaryToyModel::OBSERVATIONS.len()),
            Self::LinearGaussian { horizon, .. } => Some(*horizon),
            Self::CustomFinite { log_observations: Some(lo), .. } => Some(lo.len()),
            Self::CustomFinite { observations: Some(ys), .. } => Some(ys.len()),
            Self::CustomFinite { .. } => None,
        }
    }
}

/// Every setting of an experiment. Missing fields take per-command defaults; the
/// resolved document is echoed next to the output.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<ModelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flow: Option<FlowChoice>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<InitConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub particles: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicates: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    /// Number of steps run (`run-filter`) or the time index checked (other commands).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub horizon: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub storage: Option<StorageMode>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub compensate_burnin: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub burnin: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub test_function: Option<FiniteTestFunction>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimator: Option<Estimator>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub estimates: Option<Vec<FilterOutput>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eps_grid: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rate_grid: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithms: Option<Vec<Figure2Algorithm>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn model_horizon(&self) -> Option<usize> {
        self.model.as_ref().and_then(ModelConfig::horizon)
    }

    /// Kernel default for a model block: a binary model's `epsilon` selects the lazy kernel.
    pub fn default_kernel(&self, fallback: KernelConfig) -> KernelConfig {
        match &self.model {
            Some(ModelConfig::Binary { epsilon: Some(e), .. }) => KernelConfig::Lazy { epsilon: *e },
            _ => fallback,
        }
    }

    /// Resolves `observation_seed` for a simulated linear-Gaussian model.
    pub fn pin_observations(&mut self, seed: u64) {
        if let Some(ModelConfig::LinearGaussian { observations: None, observation_seed, .. }) = &mut self.model {
            observation_seed.get_or_insert_with(|| derive_seed(seed, "observations", &[]));
        }
    }

    pub fn require_finite(&self) -> Result<Arc<FiniteHmm>, CliError> {
        match self.model.as_ref().ok_or_else(|| CliError::Config("no model".into()))?.build()? {
            BuiltModel::Finite(h) => Ok(h),
            BuiltModel::LinearGaussian(_) => {
                Err(CliError::Config("this command needs a finite model (binary or custom-finite)".into()))
            }
        }
    }
}

pub fn require<T: Clone>(v: &Option<T>, name: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Config(format!("missing setting '{name}'")))
}

impl From<SmcError> for CliError {
    fn from(e: SmcError) -> Self {
        match e {
            SmcError::Config(m) | SmcError::Input(m) => CliError::Config(m),
            other => CliError::Run(other),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_nested_blocks() {
        let text = r#"{
            "model": {"type": "binary", "alpha": 0.3},
            "flow": "faapf",
            "kernel": {"kind": "independent-mh", "weighting": "uniform"},
            "init": {"policy": "stationary"},
            "particles": 100,
            "estimator": "faapf-filter",
            "storage": "path"
        }"#;
        let cfg: ExperimentConfig = serde_json::from_str(text).unwrap();
        assert_eq!(cfg.flow, Some(FlowChoice::Faapf));
        assert_eq!(cfg.storage, Some(StorageMode::Path));
        assert_eq!(cfg.model_horizon(), Some(2));
        let back: ExperimentConfig = serde_json::from_str(&serde_json::to_string(&cfg).unwrap()).unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(serde_json::from_str::<ExperimentConfig>(r#"{"particle": 3}"#).is_err());
    }

    #[test]
    fn custom_finite_model_builds() {
        let m = ModelConfig::CustomFinite {
            initial: vec![0.5, 0.5],
            transition: vec![vec![0.9, 0.1], vec![0.1, 0.9]],
            log_observations: None,
            emission: Some(vec![vec![0.8, 0.2], vec![0.3, 0.7]]),
            observations: Some(vec![0, 1, 1]),
        };
        assert!(matches!(m.build().unwrap(), BuiltModel::Finite(h) if h.states() == 2));
        assert_eq!(m.horizon(), Some(3));
    }
}
