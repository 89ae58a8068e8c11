use std::path::PathBuf;
use std::str::FromStr;

use clap::{Args, Parser, Subcommand, ValueEnum};
use seqmc::analysis::Estimator;
use seqmc::experiments::{parse_grid, FilterOutput, FiniteTestFunction, FlowChoice, InitConfig, KernelConfig};
use seqmc::kernels::AncestorWeighting;
use seqmc::StorageMode;

use crate::config::{ExperimentConfig, ModelConfig};
use crate::CliError;

#[derive(Parser, Debug)]
#[command(name = "seqmc", version, about = "MCMC particle filters and exact variance analysis")]
pub struct Cli {
    /// Worker threads for replicate-parallel commands (default: available parallelism).
    #[arg(long, env = "SEQMC_THREADS", global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Independent replicates of one particle filter.
    RunFilter(RunFilterArgs),
    /// Exact relative asymptotic variances on the binary model.
    Figure1(Figure1Args),
    /// Relative marginal-likelihood estimates on the linear-Gaussian model.
    Figure2(Figure2Args),
    /// Empirical variance of √N·error against the exact asymptotic variance.
    CltCheck(CheckArgs),
    /// Slope of log RMSE against log N.
    RateCheck(RateArgs),
    /// Replicate mean of Z_n^N against the exact normalising constant.
    Unbiasedness(CheckArgs),
    /// Exact flow quantities and asymptotic variances on a finite model.
    ExactAnalyze(CheckArgs),
}

#[derive(Args, Debug)]
pub struct Common {
    /// JSON experiment config; flags given on the command line take precedence.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output CSV; standard output when absent or "-".
    #[arg(long, short)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Particles per run.
    #[arg(long = "N")]
    pub particles: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    /// Exit with status 3 when the command's contract check fails.
    #[arg(long)]
    pub assert: bool,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum ModelName {
    Binary,
    LinearGaussian,
}

#[derive(Args, Debug)]
pub struct ModelArgs {
    #[arg(long)]
    pub model: Option<ModelName>,
    /// Binary model: probability of keeping the state.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Linear-Gaussian model: state dimension.
    #[arg(long)]
    pub d: Option<usize>,
    /// Linear-Gaussian model: number of observations.
    #[arg(long)]
    pub length: Option<usize>,
}

impl ModelArgs {
    fn patch(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        let model = match (self.model, cfg.model.take()) {
            (Some(ModelName::Binary), Some(m @ ModelConfig::Binary { .. })) | (None, Some(m)) => Some(m),
            (Some(ModelName::LinearGaussian), Some(m @ ModelConfig::LinearGaussian { .. })) => Some(m),
            (Some(ModelName::Binary), _) => Some(ModelConfig::Binary { alpha: 0.5, epsilon: None }),
            (Some(ModelName::LinearGaussian), _) => {
                Some(ModelConfig::LinearGaussian { d: 1, horizon: 10, observations: None, observation_seed: None })
            }
            (None, None) if self.alpha.is_some() => Some(ModelConfig::Binary { alpha: 0.5, epsilon: None }),
            (None, None) if self.d.is_some() || self.length.is_some() => {
                Some(ModelConfig::LinearGaussian { d: 1, horizon: 10, observations: None, observation_seed: None })
            }
            (None, None) => None,
        };
        cfg.model = match model {
            Some(ModelConfig::Binary { alpha, epsilon }) => {
                if self.d.is_some() || self.length.is_some() {
                    return Err(CliError::Config("--d and --length apply to the linear-gaussian model".into()));
                }
                Some(ModelConfig::Binary { alpha: self.alpha.unwrap_or(alpha), epsilon })
            }
            Some(ModelConfig::LinearGaussian { d, horizon, observations, observation_seed }) => {
                if self.alpha.is_some() {
                    return Err(CliError::Config("--alpha applies to the binary model".into()));
                }
                let (d2, h2) = (self.d.unwrap_or(d), self.length.unwrap_or(horizon));
                let observations = observations.filter(|_| d2 == d && h2 == horizon);
                Some(ModelConfig::LinearGaussian { d: d2, horizon: h2, observations, observation_seed })
            }
            Some(other) => {
                if self.alpha.is_some() || self.d.is_some() || self.length.is_some() {
                    return Err(CliError::Config("model flags do not apply to a custom-finite model".into()));
                }
                Some(other)
            }
            None => None,
        };
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum FlowArg {
    Bpf,
    Faapf,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum KernelName {
    PerfectMixing,
    Lazy,
    IndependentMh,
    RandomWalkMh,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum WeightingArg {
    /// Ancestors proposed in proportion to their potentials (F = G).
    Potential,
    /// Ancestors proposed uniformly (F = 1).
    Uniform,
}

#[derive(Args, Debug)]
pub struct KernelArgs {
    #[arg(long)]
    pub flow: Option<FlowArg>,
    #[arg(long)]
    pub kernel: Option<KernelName>,
    /// Lazy-mixture weight; on its own selects the lazy kernel.
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub weighting: Option<WeightingArg>,
    /// Random-walk step scale (Gaussian models).
    #[arg(long)]
    pub scale: Option<f64>,
    /// Burn-in kernel iterations for the first particle of each step.
    #[arg(long)]
    pub burnin: Option<usize>,
}

impl KernelArgs {
    fn patch(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        if let Some(f) = self.flow {
            cfg.flow = Some(match f {
                FlowArg::Bpf => FlowChoice::Bpf,
                FlowArg::Faapf => FlowChoice::Faapf,
            });
        }
        let weighting = self.weighting.map(|w| match w {
            WeightingArg::Potential => AncestorWeighting::Potential,
            WeightingArg::Uniform => AncestorWeighting::Uniform,
        });
        let base = match (self.kernel, self.epsilon) {
            (Some(KernelName::PerfectMixing), _) => Some(KernelConfig::PerfectMixing),
            (Some(KernelName::Lazy), Some(epsilon)) | (None, Some(epsilon)) => Some(KernelConfig::Lazy { epsilon }),
            (Some(KernelName::Lazy), None) => match cfg.kernel {
                Some(k @ KernelConfig::Lazy { .. }) => Some(k),
                _ => return Err(CliError::Config("the lazy kernel needs --epsilon".into())),
            },
            (Some(KernelName::IndependentMh), _) => {
                Some(KernelConfig::IndependentMh { weighting: AncestorWeighting::Potential })
            }
            (Some(KernelName::RandomWalkMh), _) => {
                Some(KernelConfig::RandomWalkMh { weighting: AncestorWeighting::Potential, scale: None })
            }
            (None, None) => cfg.kernel,
        };
        cfg.kernel = match base {
            Some(KernelConfig::IndependentMh { weighting: w }) => {
                if self.scale.is_some() {
                    return Err(CliError::Config("--scale applies to the random-walk kernel".into()));
                }
                Some(KernelConfig::IndependentMh { weighting: weighting.unwrap_or(w) })
            }
            Some(KernelConfig::RandomWalkMh { weighting: w, scale }) => {
                Some(KernelConfig::RandomWalkMh { weighting: weighting.unwrap_or(w), scale: self.scale.or(scale) })
            }
            other => {
                if weighting.is_some() || self.scale.is_some() {
                    return Err(CliError::Config("--weighting and --scale apply to MH kernels".into()));
                }
                other
            }
        };
        if let Some(iterations) = self.burnin {
            cfg.init = Some(InitConfig::Burnin { iterations });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum StorageArg {
    Marginal,
    Path,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EstimatorArg {
    Predictor,
    Unnormalized,
    BpfFilter,
    FaapfFilter,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
pub enum EstimateArg {
    Normconst,
    Likelihood,
    Filter,
    Predictor,
}

/// `final-state`, `indicator:<state>` or `constant:<value>`.
#[derive(Clone, Copy, Debug)]
pub struct TestFunctionArg(pub FiniteTestFunction);

impl FromStr for TestFunctionArg {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let f = match s.split_once(':') {
            None if s == "final-state" => FiniteTestFunction::FinalState,
            Some(("indicator", v)) => {
                FiniteTestFunction::Indicator { state: v.parse().map_err(|_| format!("bad state '{v}'"))? }
            }
            Some(("constant", v)) => {
                FiniteTestFunction::Constant { value: v.parse().map_err(|_| format!("bad value '{v}'"))? }
            }
            _ => return Err(format!("unknown test function '{s}'")),
        };
        Ok(Self(f))
    }
}

#[derive(Args, Debug)]
pub struct RunFilterArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Number of time steps to run.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub storage: Option<StorageArg>,
    /// Quantities reported per replicate.
    #[arg(long, value_delimiter = ',')]
    pub estimates: Option<Vec<EstimateArg>>,
    #[arg(long)]
    pub test_function: Option<TestFunctionArg>,
}

#[derive(Args, Debug)]
pub struct Figure1Args {
    #[command(flatten)]
    pub common: Common,
    /// Binary-model α; chosen by an exact scan when absent.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// `start:stop:step` or a comma-separated list.
    #[arg(long)]
    pub eps_grid: Option<String>,
}

#[derive(Args, Debug)]
pub struct Figure2Args {
    #[command(flatten)]
    pub common: Common,
    #[arg(long)]
    pub d: Option<usize>,
    /// Number of observations per replicate.
    #[arg(long)]
    pub horizon: Option<usize>,
    /// Burn-in iterations for MCMC-FA-APF.
    #[arg(long)]
    pub burnin: Option<usize>,
    /// Give MCMC-FA-APF the full N instead of N minus the burn-in.
    #[arg(long)]
    pub no_compensate: bool,
    /// N = 10000 and 1000 replicates unless set explicitly.
    #[arg(long)]
    pub paper_scale: bool,
}

#[derive(Args, Debug)]
pub struct CheckArgs {
    #[command(flatten)]
    pub common: Common,
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub kernel: KernelArgs,
    /// Time index n.
    #[arg(long)]
    pub horizon: Option<usize>,
    #[arg(long)]
    pub test_function: Option<TestFunctionArg>,
    #[arg(long)]
    pub estimator: Option<EstimatorArg>,
}

#[derive(Args, Debug)]
pub struct RateArgs {
    #[command(flatten)]
    pub check: CheckArgs,
    /// Particle counts, comma-separated.
    #[arg(long, value_delimiter = ',')]
    pub rate_grid: Option<Vec<usize>>,
}

impl CheckArgs {
    fn patch(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        self.model.patch(cfg)?;
        self.kernel.patch(cfg)?;
        if self.horizon.is_some() {
            cfg.horizon = self.horizon;
        }
        if let Some(f) = self.test_function {
            cfg.test_function = Some(f.0);
        }
        if let Some(e) = self.estimator {
            cfg.estimator = Some(match e {
                EstimatorArg::Predictor => Estimator::Predictor,
                EstimatorArg::Unnormalized => Estimator::Unnormalized,
                EstimatorArg::BpfFilter => Estimator::BpfFilter,
                EstimatorArg::FaapfFilter => Estimator::FaApfFilter,
            });
        }
        Ok(())
    }
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Self::RunFilter(_) => "run-filter",
            Self::Figure1(_) => "figure1",
            Self::Figure2(_) => "figure2",
            Self::CltCheck(_) => "clt-check",
            Self::RateCheck(_) => "rate-check",
            Self::Unbiasedness(_) => "unbiasedness",
            Self::ExactAnalyze(_) => "exact-analyze",
        }
    }

    pub fn common(&self) -> &Common {
        match self {
            Self::RunFilter(a) => &a.common,
            Self::Figure1(a) => &a.common,
            Self::Figure2(a) => &a.common,
            Self::CltCheck(a) | Self::Unbiasedness(a) | Self::ExactAnalyze(a) => &a.common,
            Self::RateCheck(a) => &a.check.common,
        }
    }

    pub fn load_config(&self) -> Result<ExperimentConfig, CliError> {
        match &self.common().config {
            Some(p) => ExperimentConfig::load(p),
            None => Ok(ExperimentConfig::default()),
        }
    }

    /// Applies command-line flags on top of the config document.
    pub fn patch(&self, cfg: &mut ExperimentConfig) -> Result<(), CliError> {
        let common = self.common();
        if common.out.is_some() {
            cfg.output = common.out.clone();
        }
        if common.seed.is_some() {
            cfg.seed = common.seed;
        }
        if common.particles.is_some() {
            cfg.particles = common.particles;
        }
        if common.replicates.is_some() {
            cfg.replicates = common.replicates;
        }
        match self {
            Self::RunFilter(a) => {
                a.model.patch(cfg)?;
                a.kernel.patch(cfg)?;
                if a.horizon.is_some() {
                    cfg.horizon = a.horizon;
                }
                if let Some(s) = a.storage {
                    cfg.storage = Some(match s {
                        StorageArg::Marginal => StorageMode::Marginal,
                        StorageArg::Path => StorageMode::Path,
                    });
                }
                if let Some(es) = &a.estimates {
                    cfg.estimates = Some(
                        es.iter()
                            .map(|e| match e {
                                EstimateArg::Normconst => FilterOutput::Normconst,
                                EstimateArg::Likelihood => FilterOutput::Likelihood,
                                EstimateArg::Filter => FilterOutput::Filter,
                                EstimateArg::Predictor => FilterOutput::Predictor,
                            })
                            .collect(),
                    );
                }
                if let Some(f) = a.test_function {
                    cfg.test_function = Some(f.0);
                }
            }
            Self::Figure1(a) => {
                if let Some(alpha) = a.alpha {
                    cfg.model = Some(ModelConfig::Binary { alpha, epsilon: None });
                }
                if let Some(g) = &a.eps_grid {
                    cfg.eps_grid = Some(parse_grid(g)?);
                }
            }
            Self::Figure2(a) => {
                if a.d.is_some() || a.horizon.is_some() {
                    let (d, horizon) = match &cfg.model {
                        Some(ModelConfig::LinearGaussian { d, horizon, .. }) => (*d, *horizon),
                        _ => (1, 10),
                    };
                    cfg.model = Some(ModelConfig::LinearGaussian {
                        d: a.d.unwrap_or(d),
                        horizon: a.horizon.unwrap_or(horizon),
                        observations: None,
                        observation_seed: None,
                    });
                }
                if a.burnin.is_some() {
                    cfg.burnin = a.burnin;
                }
                if a.no_compensate {
                    cfg.compensate_burnin = Some(false);
                }
                if a.paper_scale {
                    cfg.particles = common.particles.or(Some(10_000));
                    cfg.replicates = common.replicates.or(Some(1000));
                }
            }
            Self::CltCheck(a) | Self::Unbiasedness(a) | Self::ExactAnalyze(a) => a.patch(cfg)?,
            Self::RateCheck(a) => {
                a.check.patch(cfg)?;
                if a.rate_grid.is_some() {
                    cfg.rate_grid = a.rate_grid.clone();
                }
            }
        }
        Ok(())
    }
}
