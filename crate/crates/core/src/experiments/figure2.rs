use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::engine::{log_likelihood_estimate, run_mcmc_pf, RunConfig};
use crate::error::{Result, SmcError};
use crate::fk::StorageMode;
use crate::kernels::AncestorWeighting;
use crate::models::{build_flow, kalman_log_marginal_likelihood, simulate_linear_gaussian, FlowKind, LinearGaussianModel};
use crate::rng::{aux_rng, derive_seed};

use super::config::{linear_gaussian_kernel, InitConfig, KernelConfig};
use super::table::{sample_stats, ReplicateRow, ReplicateTable};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Figure2Algorithm {
    Bpf,
    McmcBpf,
    Faapf,
    McmcFaapf,
}

impl Figure2Algorithm {
    pub const ALL: [Self; 4] = [Self::Bpf, Self::McmcBpf, Self::Faapf, Self::McmcFaapf];

    pub fn label(self) -> &'static str {
        match self {
            Self::Bpf => "BPF",
            Self::McmcBpf => "MCMC-BPF",
            Self::Faapf => "FA-APF",
            Self::McmcFaapf => "MCMC-FA-APF",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure2Config {
    pub dim: usize,
    pub horizon: usize,
    pub particles: usize,
    pub replicates: usize,
    pub seed: u64,
    pub burnin: usize,
    /// Run the burn-in algorithm with `N - burnin` particles.
    pub compensate_burnin: bool,
    pub algorithms: Vec<Figure2Algorithm>,
}

impl Figure2Config {
    pub fn desk_scale(dim: usize, seed: u64) -> Self {
        Self {
            dim,
            horizon: 10,
            particles: 1000,
            replicates: 100,
            seed,
            burnin: 100,
            compensate_burnin: true,
            algorithms: Figure2Algorithm::ALL.to_vec(),
        }
    }

    pub fn paper_scale(dim: usize, seed: u64) -> Self {
        Self { particles: 10_000, replicates: 1000, ..Self::desk_scale(dim, seed) }
    }

    fn validate(&self) -> Result<()> {
        if self.dim == 0 || self.horizon == 0 || self.particles == 0 || self.replicates == 0 {
            return Err(SmcError::Config("dimension, horizon, particles and replicates must be positive".into()));
        }
        if self.algorithms.is_empty() {
            return Err(SmcError::Config("no algorithms selected".into()));
        }
        Ok(())
    }

    /// Particle count for an algorithm; `None` when burn-in compensation leaves none.
    pub fn particles_for(&self, alg: Figure2Algorithm) -> Option<usize> {
        if alg == Figure2Algorithm::McmcFaapf && self.compensate_burnin {
            self.particles.checked_sub(self.burnin).filter(|n| *n > 0)
        } else {
            Some(self.particles)
        }
    }
}

/// One replicate: fresh observations, every algorithm run on them.
fn replicate(cfg: &Figure2Config, r: usize, algorithms: &[(Figure2Algorithm, usize)]) -> Result<Vec<ReplicateRow>> {
    let obs_seed = derive_seed(cfg.seed, "figure2/observations", &[cfg.dim as u64, r as u64]);
    let (_, ys) = simulate_linear_gaussian(cfg.dim, cfg.horizon, &mut aux_rng(obs_seed, "simulate"));
    let log_l = kalman_log_marginal_likelihood(&ys)?;
    let model = Arc::new(LinearGaussianModel::new(cfg.dim, ys)?);
    let rw = KernelConfig::RandomWalkMh { weighting: AncestorWeighting::Potential, scale: None };
    let mut rows = Vec::new();
    for &(alg, particles) in algorithms {
        let (flow_kind, kernel, init) = match alg {
            Figure2Algorithm::Bpf => (FlowKind::Bpf, KernelConfig::PerfectMixing, InitConfig::Stationary),
            Figure2Algorithm::McmcBpf => (FlowKind::Bpf, rw, InitConfig::Stationary),
            Figure2Algorithm::Faapf => (FlowKind::FaApf, KernelConfig::PerfectMixing, InitConfig::Stationary),
            Figure2Algorithm::McmcFaapf => (
                FlowKind::FaApf,
                KernelConfig::RandomWalkMh { weighting: AncestorWeighting::Uniform, scale: None },
                InitConfig::Burnin { iterations: cfg.burnin },
            ),
        };
        let flow = build_flow(Arc::clone(&model), flow_kind)?;
        let kernel = linear_gaussian_kernel(&model, &kernel, &init)?;
        let seed = derive_seed(cfg.seed, &format!("figure2/{}", alg.label()), &[cfg.dim as u64, r as u64]);
        let run_cfg = RunConfig { storage: StorageMode::Marginal, ..RunConfig::new(particles, cfg.horizon, kernel, seed) };
        let estimate = log_likelihood_estimate(&run_mcmc_pf(&flow, &run_cfg)?)?;
        let row = |estimator: &str, value: f64, reference: f64| ReplicateRow {
            replicate: r,
            seed,
            algorithm: alg.label().into(),
            particles,
            n: cfg.horizon,
            estimator: estimator.into(),
            value,
            reference: Some(reference),
        };
        rows.push(row("relative-likelihood", (estimate - log_l).exp(), 1.0));
        rows.push(row("log-likelihood", estimate, log_l));
    }
    Ok(rows)
}

/// Marginal-likelihood estimates relative to the Kalman value, one fresh observation
/// sequence per replicate. Replicates run in parallel and are merged by replicate id.
pub fn figure2_experiment(cfg: &Figure2Config) -> Result<ReplicateTable> {
    cfg.validate()?;
    let mut table = ReplicateTable::default();
    let mut algorithms = Vec::new();
    for &alg in &cfg.algorithms {
        match cfg.particles_for(alg) {
            Some(n) => algorithms.push((alg, n)),
            None => table.skipped.push((
                alg.label().into(),
                format!("N = {} leaves no particles after {} burn-in draws", cfg.particles, cfg.burnin),
            )),
        }
    }
    let per_replicate: Vec<Vec<ReplicateRow>> =
        (0..cfg.replicates).into_par_iter().map(|r| replicate(cfg, r, &algorithms)).collect::<Result<_>>()?;
    table.rows = per_replicate.into_iter().flatten().collect();
    table.note("config", "dim", cfg.dim as f64);
    table.note("config", "burnin", cfg.burnin as f64);
    Ok(table)
}

/// Mean relative likelihood of one algorithm with its standard error.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeLikelihood {
    pub algorithm: String,
    pub mean: f64,
    pub stderr: f64,
    pub variance: f64,
    /// `|mean − 1| ≤ 3 · stderr`.
    pub consistent: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Figure2Assessment {
    pub algorithms: Vec<RelativeLikelihood>,
    /// `var(MCMC-FA-APF) < var(BPF)` when both were run.
    pub mcmc_faapf_beats_bpf: Option<bool>,
}

impl Figure2Assessment {
    pub fn all_consistent(&self) -> bool {
        self.algorithms.iter().all(|a| a.consistent)
    }
}

pub fn assess_figure2(table: &ReplicateTable) -> Figure2Assessment {
    let algorithms: Vec<RelativeLikelihood> = Figure2Algorithm::ALL
        .iter()
        .filter_map(|alg| {
            let values = table.column(alg.label(), "relative-likelihood");
            (!values.is_empty()).then(|| {
                let s = sample_stats(&values);
                RelativeLikelihood {
                    algorithm: alg.label().into(),
                    mean: s.mean,
                    stderr: s.stderr,
                    variance: s.variance,
                    consistent: (s.mean - 1.0).abs() <= 3.0 * s.stderr,
                }
            })
        })
        .collect();
    let variance = |label: &str| algorithms.iter().find(|a| a.algorithm == label).map(|a| a.variance);
    let mcmc_faapf_beats_bpf = match (variance("MCMC-FA-APF"), variance("BPF")) {
        (Some(a), Some(b)) => Some(a < b),
        _ => None,
    };
    Figure2Assessment { algorithms, mcmc_faapf_beats_bpf }
}
