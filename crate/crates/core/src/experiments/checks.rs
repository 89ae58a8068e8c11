use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::analysis::{asymptotic_variance, enumerate_flow, Estimator, FiniteFlow};
use crate::engine::{filter_estimate, log_likelihood_estimate, predictor_estimate, run_mcmc_pf, RunConfig};
use crate::error::{Result, SmcError};
use crate::fk::{empirical_integrate, unnormalized_integrate, StorageMode, TestFunction};
use crate::kernels::{KernelKind, KernelSpec};
use crate::models::{build_flow, BinaryToyModel, FiniteHmm, SsmFlow, StateSpaceModel};
use crate::rng::{aux_rng, derive_seed};

use super::config::{finite_kernel, FiniteTestFunction, FlowChoice, InitConfig, KernelConfig};
use super::table::{sample_stats, ReplicateRow, ReplicateTable};

/// Two-sided tail probability of the chi-square band used by the CLT check.
pub const CLT_BAND_LEVEL: f64 = 0.9999;

/// A finite HMM with a flow, kernel and initialisation choice.
#[derive(Clone)]
pub struct FiniteSetup {
    pub hmm: Arc<FiniteHmm>,
    pub flow: FlowChoice,
    pub kernel: KernelConfig,
    pub init: InitConfig,
    pub storage: StorageMode,
}

impl FiniteSetup {
    pub fn new(hmm: FiniteHmm, flow: FlowChoice, kernel: KernelConfig) -> Self {
        Self { hmm: Arc::new(hmm), flow, kernel, init: InitConfig::Stationary, storage: StorageMode::Marginal }
    }

    pub fn binary(alpha: f64, flow: FlowChoice, kernel: KernelConfig) -> Result<Self> {
        Ok(Self::new(BinaryToyModel::new(alpha, 0.0)?.hmm(), flow, kernel))
    }

    pub fn ssm_flow(&self) -> Result<SsmFlow<FiniteHmm>> {
        build_flow(Arc::clone(&self.hmm), self.flow.kind())
    }

    pub fn kernel_spec(&self) -> Result<KernelSpec<usize>> {
        finite_kernel(&self.hmm, &self.kernel, &self.init)
    }

    fn check_estimator(&self, estimator: Estimator) -> Result<()> {
        match (estimator, self.flow) {
            (Estimator::BpfFilter, FlowChoice::Faapf) | (Estimator::FaApfFilter, FlowChoice::Bpf) => Err(
                SmcError::Config(format!("{} estimator is not defined on the {} flow", estimator.label(), self.flow.label())),
            ),
            _ => Ok(()),
        }
    }

    /// Exact limit of the estimator at time `n`.
    fn exact_value(&self, finite: &FiniteFlow<usize>, n: usize, f: &[f64], estimator: Estimator) -> f64 {
        match estimator {
            Estimator::BpfFilter => {
                let g = finite.potentials(n);
                let gf: Vec<f64> = g.iter().zip(f).map(|(a, b)| a * b).collect();
                finite.integrate(n, &gf) / finite.integrate(n, &g)
            }
            _ => finite.integrate(n, f),
        }
    }

    /// One replicate of the estimator, with the run seeded by `seed`.
    fn estimate(
        &self,
        flow: &SsmFlow<FiniteHmm>,
        finite: &FiniteFlow<usize>,
        kernel: &KernelSpec<usize>,
        n: usize,
        particles: usize,
        f: &TestFunction<usize>,
        estimator: Estimator,
        seed: u64,
    ) -> Result<f64> {
        let cfg = RunConfig { storage: self.storage, ..RunConfig::new(particles, n, kernel.clone(), seed) };
        let run = run_mcmc_pf(flow, &cfg)?;
        match estimator {
            Estimator::Predictor | Estimator::FaApfFilter => empirical_integrate(run.cloud(n)?, f),
            Estimator::BpfFilter => filter_estimate(&run, flow, n, f),
            Estimator::Unnormalized => Ok(unnormalized_integrate(&run, n, f)? / finite.z(n)),
        }
    }

    /// Exact step kernels at `μ = η_{p-1}`, one per step.
    fn exact_kernels(&self, n: usize) -> Result<Vec<KernelKind<usize>>> {
        Ok(vec![self.kernel_spec()?.kind; n])
    }
}

#[derive(Clone)]
pub struct CltConfig {
    pub setup: FiniteSetup,
    pub n: usize,
    pub particles: usize,
    pub replicates: usize,
    pub seed: u64,
    pub test_function: FiniteTestFunction,
    pub estimator: Estimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CltReport {
    /// Sample variance of `√N (estimate − exact)` over replicates.
    pub empirical: f64,
    /// Exact asymptotic variance.
    pub exact: f64,
    pub z: f64,
    pub lower: f64,
    pub upper: f64,
    pub within_band: bool,
    pub exact_value: f64,
}

fn prepare(setup: &FiniteSetup, n: usize, f: FiniteTestFunction, estimator: Estimator) -> Result<(SsmFlow<FiniteHmm>, FiniteFlow<usize>, KernelSpec<usize>, Vec<f64>)> {
    setup.check_estimator(estimator)?;
    let flow = setup.ssm_flow()?;
    let finite = enumerate_flow(&flow, n)?;
    let kernel = setup.kernel_spec()?;
    let values = finite.tabulate(n, &f.build())?;
    Ok((flow, finite, kernel, values))
}

pub fn clt_variance_check(cfg: &CltConfig) -> Result<(CltReport, ReplicateTable)> {
    if cfg.replicates < 2 || cfg.particles == 0 {
        return Err(SmcError::Config("the CLT check needs N ≥ 1 and at least two replicates".into()));
    }
    let setup = &cfg.setup;
    let (flow, finite, kernel, values) = prepare(setup, cfg.n, cfg.test_function, cfg.estimator)?;
    let exact = asymptotic_variance(&flow, &finite, &setup.exact_kernels(cfg.n)?, cfg.n, &values, cfg.estimator)?.total;
    let exact_value = setup.exact_value(&finite, cfg.n, &values, cfg.estimator);
    let f = cfg.test_function.build();
    let label = format!("{}+{}", setup.flow.label(), setup.kernel.label());
    let rows: Vec<ReplicateRow> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, "clt", &[r as u64]);
            let value = setup.estimate(&flow, &finite, &kernel, cfg.n, cfg.particles, &f, cfg.estimator, seed)?;
            Ok(ReplicateRow {
                replicate: r,
                seed,
                algorithm: label.clone(),
                particles: cfg.particles,
                n: cfg.n,
                estimator: cfg.estimator.label().into(),
                value,
                reference: Some(exact_value),
            })
        })
        .collect::<Result<_>>()?;
    let scaled: Vec<f64> = rows.iter().map(|r| (cfg.particles as f64).sqrt() * (r.value - exact_value)).collect();
    let empirical = sample_stats(&scaled).variance;
    let dof = (cfg.replicates - 1) as f64;
    let chi = ChiSquared::new(dof).map_err(|e| SmcError::Numerical(e.to_string()))?;
    let tail = (1.0 - CLT_BAND_LEVEL) / 2.0;
    let (lower, upper) = (exact * chi.inverse_cdf(tail) / dof, exact * chi.inverse_cdf(1.0 - tail) / dof);
    let z = if exact > 0.0 {
        (dof * empirical / exact - dof) / (2.0 * dof).sqrt()
    } else if empirical == 0.0 {
        0.0
    } else {
        f64::INFINITY
    };
    let within_band = if exact > 0.0 { (lower..=upper).contains(&empirical) } else { empirical == 0.0 };
    let report = CltReport { empirical, exact, z, lower, upper, within_band, exact_value };
    let mut table = ReplicateTable { rows, ..Default::default() };
    for (k, v) in [("empirical", empirical), ("exact", exact), ("z", z), ("band_lower", lower), ("band_upper", upper)] {
        table.note("clt", k, v);
    }
    table.note("clt", "within_band", f64::from(u8::from(within_band)));
    Ok((report, table))
}

#[derive(Clone)]
pub struct RateConfig {
    pub setup: FiniteSetup,
    pub n: usize,
    pub grid: Vec<usize>,
    pub replicates: usize,
    pub seed: u64,
    pub test_function: FiniteTestFunction,
    pub estimator: Estimator,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RatePoint {
    pub particles: usize,
    pub rmse: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub points: Vec<RatePoint>,
    /// Least-squares slope of `log RMSE` on `log N`; `None` for a degenerate case.
    pub slope: Option<f64>,
    pub intercept: Option<f64>,
    /// Every error was exactly zero (constant test function).
    pub degenerate: bool,
}

pub fn l2_rate_check(cfg: &RateConfig) -> Result<(RateReport, ReplicateTable)> {
    if cfg.grid.len() < 3 {
        return Err(SmcError::Config("the rate check needs at least three particle counts".into()));
    }
    if cfg.replicates == 0 || cfg.grid.contains(&0) {
        return Err(SmcError::Config("particle counts and replicates must be positive".into()));
    }
    let setup = &cfg.setup;
    let (flow, finite, kernel, values) = prepare(setup, cfg.n, cfg.test_function, cfg.estimator)?;
    let exact_value = setup.exact_value(&finite, cfg.n, &values, cfg.estimator);
    let f = cfg.test_function.build();
    let label = format!("{}+{}", setup.flow.label(), setup.kernel.label());
    let jobs: Vec<(usize, usize)> = cfg.grid.iter().flat_map(|&n| (0..cfg.replicates).map(move |r| (n, r))).collect();
    let rows: Vec<ReplicateRow> = jobs
        .into_par_iter()
        .map(|(particles, r)| {
            let seed = derive_seed(cfg.seed, "rate", &[particles as u64, r as u64]);
            let value = setup.estimate(&flow, &finite, &kernel, cfg.n, particles, &f, cfg.estimator, seed)?;
            Ok(ReplicateRow {
                replicate: r,
                seed,
                algorithm: label.clone(),
                particles,
                n: cfg.n,
                estimator: cfg.estimator.label().into(),
                value,
                reference: Some(exact_value),
            })
        })
        .collect::<Result<_>>()?;
    let points: Vec<RatePoint> = cfg
        .grid
        .iter()
        .map(|&particles| {
            let errs: Vec<f64> = rows
                .iter()
                .filter(|r| r.particles == particles)
                .map(|r| (r.value - exact_value).powi(2))
                .collect();
            RatePoint { particles, rmse: crate::fk::mean(&errs).sqrt() }
        })
        .collect();
    let degenerate = points.iter().all(|p| p.rmse == 0.0);
    let (slope, intercept) = if points.iter().all(|p| p.rmse > 0.0) {
        let xs: Vec<f64> = points.iter().map(|p| (p.particles as f64).ln()).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.rmse.ln()).collect();
        let (s, i) = least_squares(&xs, &ys);
        (Some(s), Some(i))
    } else {
        (None, None)
    };
    let mut table = ReplicateTable { rows, ..Default::default() };
    for p in &points {
        table.note(format!("N={}", p.particles), "rmse", p.rmse);
    }
    table.note("rate", "slope", slope.unwrap_or(f64::NAN));
    table.note("rate", "intercept", intercept.unwrap_or(f64::NAN));
    table.note("rate", "degenerate", f64::from(u8::from(degenerate)));
    Ok((RateReport { points, slope, intercept, degenerate }, table))
}

/// Slope and intercept of the least-squares line through `(x, y)`.
pub fn least_squares(xs: &[f64], ys: &[f64]) -> (f64, f64) {
    let mx = crate::fk::mean(xs);
    let my = crate::fk::mean(ys);
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

#[derive(Clone)]
pub struct UnbiasednessConfig {
    pub setup: FiniteSetup,
    /// Index of the normalising constant `Z_n`, `1 ≤ n ≤ T + 1`.
    pub n: usize,
    pub particles: usize,
    pub replicates: usize,
    pub seed: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UnbiasednessReport {
    pub mean: f64,
    pub stderr: f64,
    pub exact: f64,
    pub z: f64,
}

pub fn unbiasedness_check(cfg: &UnbiasednessConfig) -> Result<(UnbiasednessReport, ReplicateTable)> {
    let setup = &cfg.setup;
    if setup.init != InitConfig::Stationary {
        return Err(SmcError::Config(
            "unbiasedness of Z_n^N holds only for stationary chain initialisation".into(),
        ));
    }
    if cfg.replicates < 2 || cfg.particles == 0 {
        return Err(SmcError::Config("the unbiasedness check needs N ≥ 1 and at least two replicates".into()));
    }
    let flow = setup.ssm_flow()?;
    let t = setup.hmm.len();
    if cfg.n == 0 || cfg.n > t + 1 {
        return Err(SmcError::Config(format!("Z_{} is outside 1..={}", cfg.n, t + 1)));
    }
    let horizon = cfg.n.saturating_sub(1).max(1);
    let exact = enumerate_flow(&flow, horizon)?.z(cfg.n);
    let kernel = setup.kernel_spec()?;
    let label = format!("{}+{}", setup.flow.label(), setup.kernel.label());
    let rows: Vec<ReplicateRow> = (0..cfg.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(cfg.seed, "unbiasedness", &[r as u64]);
            let run_cfg = RunConfig { storage: setup.storage, ..RunConfig::new(cfg.particles, horizon, kernel.clone(), seed) };
            let run = run_mcmc_pf(&flow, &run_cfg)?;
            Ok(ReplicateRow {
                replicate: r,
                seed,
                algorithm: label.clone(),
                particles: cfg.particles,
                n: cfg.n,
                estimator: "normconst".into(),
                value: run.log_normconst_estimate(cfg.n)?.exp(),
                reference: Some(exact),
            })
        })
        .collect::<Result<_>>()?;
    let stats = sample_stats(&rows.iter().map(|r| r.value).collect::<Vec<_>>());
    let diff = stats.mean - exact;
    let z = if stats.stderr > 0.0 { diff / stats.stderr } else if diff.abs() < 1e-12 { 0.0 } else { f64::INFINITY };
    let report = UnbiasednessReport { mean: stats.mean, stderr: stats.stderr, exact, z };
    let mut table = ReplicateTable { rows, ..Default::default() };
    table.note("unbiasedness", "exact", exact);
    table.note("unbiasedness", "z", z);
    Ok((report, table))
}

/// Quantities a plain filter run can report per replicate.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FilterOutput {
    /// `Z_n^N` at the run horizon.
    Normconst,
    /// `𝓛_n^N = Z_{n+1}^N`.
    Likelihood,
    Filter,
    Predictor,
}

impl FilterOutput {
    pub fn label(self) -> &'static str {
        match self {
            Self::Normconst => "normconst",
            Self::Likelihood => "likelihood",
            Self::Filter => "filter",
            Self::Predictor => "predictor",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FilterRunSpec {
    pub particles: usize,
    pub horizon: usize,
    pub replicates: usize,
    pub seed: u64,
    pub storage: StorageMode,
}

/// Independent replicates of one configured filter, with optional exact references per output.
pub fn run_filter_replicates<M: StateSpaceModel>(
    flow: &SsmFlow<M>,
    kernel: &KernelSpec<M::State>,
    spec: &FilterRunSpec,
    algorithm: &str,
    outputs: &[(FilterOutput, Option<f64>)],
    f: &TestFunction<M::State>,
) -> Result<ReplicateTable> {
    if spec.replicates == 0 {
        return Err(SmcError::Config("at least one replicate is required".into()));
    }
    let needs_full = outputs.iter().any(|(o, _)| *o == FilterOutput::Likelihood);
    if needs_full && spec.horizon != flow.model().len() {
        return Err(SmcError::Config("the likelihood output needs the full observation horizon".into()));
    }
    let per: Vec<Vec<ReplicateRow>> = (0..spec.replicates)
        .into_par_iter()
        .map(|r| {
            let seed = derive_seed(spec.seed, &format!("run-filter/{algorithm}"), &[r as u64]);
            let cfg = RunConfig { storage: spec.storage, ..RunConfig::new(spec.particles, spec.horizon, kernel.clone(), seed) };
            let run = run_mcmc_pf(flow, &cfg)?;
            outputs
                .iter()
                .map(|(out, reference)| {
                    let n = spec.horizon;
                    let value = match out {
                        FilterOutput::Normconst => run.log_normconst_estimate(n)?.exp(),
                        FilterOutput::Likelihood => log_likelihood_estimate(&run)?.exp(),
                        FilterOutput::Filter => filter_estimate(&run, flow, n, f)?,
                        FilterOutput::Predictor => predictor_estimate(&run, flow, n, f, &mut aux_rng(seed, "predictor"))?.value,
                    };
                    Ok(ReplicateRow {
                        replicate: r,
                        seed,
                        algorithm: algorithm.into(),
                        particles: spec.particles,
                        n,
                        estimator: out.label().into(),
                        value,
                        reference: *reference,
                    })
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    Ok(ReplicateTable { rows: per.into_iter().flatten().collect(), ..Default::default() })
}
