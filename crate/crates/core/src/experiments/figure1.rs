use std::sync::Arc;

use crate::analysis::{asymptotic_variance, enumerate_flow, Estimator, ExactSsm};
use crate::error::{Result, SmcError};
use crate::kernels::KernelKind;
use crate::models::{build_flow, BinaryToyModel, FlowKind};

use super::table::{ReplicateRow, ReplicateTable};

pub const FIGURE1_ALGORITHMS: [&str; 4] = ["BPF", "MCMC-BPF", "FA-APF", "MCMC-FA-APF"];

/// Asymptotic filter variances for `f(path_2) = x_2`, relative to the standard BPF.
#[derive(Clone, Debug, PartialEq)]
pub struct Figure1Row {
    pub epsilon: f64,
    pub mcmc_bpf: f64,
    pub faapf: f64,
    pub mcmc_faapf: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Figure1Curves {
    pub alpha: f64,
    pub sigma2_bpf: f64,
    pub sigma2_faapf: f64,
    pub rows: Vec<Figure1Row>,
    /// The same ratios from the `S_{p,n}` representation, as an independent reference.
    pub reference_faapf: f64,
}

fn lazy_pair(epsilon: f64) -> [KernelKind<usize>; 2] {
    let k = if epsilon == 0.0 { KernelKind::PerfectMixing } else { KernelKind::LazyMixture { epsilon } };
    [k.clone(), k]
}

pub fn figure1_curves(alpha: f64, eps_grid: &[f64]) -> Result<Figure1Curves> {
    if eps_grid.is_empty() {
        return Err(SmcError::Config("empty ε grid".into()));
    }
    if let Some(e) = eps_grid.iter().find(|e| !(0.0..1.0).contains(*e)) {
        return Err(SmcError::Config(format!("ε = {e} outside [0, 1)")));
    }
    let hmm = Arc::new(BinaryToyModel::new(alpha, 0.0)?.hmm());
    let bpf = build_flow(Arc::clone(&hmm), FlowKind::Bpf)?;
    let fa = build_flow(Arc::clone(&hmm), FlowKind::FaApf)?;
    let bpf_exact = enumerate_flow(&bpf, 2)?;
    let fa_exact = enumerate_flow(&fa, 2)?;
    let f: Vec<f64> = (0..4).map(|i| (i % 2) as f64).collect();

    let sigma = |eps: f64| -> Result<(f64, f64)> {
        let k = lazy_pair(eps);
        Ok((
            asymptotic_variance(&bpf, &bpf_exact, &k, 2, &f, Estimator::BpfFilter)?.total,
            asymptotic_variance(&fa, &fa_exact, &k, 2, &f, Estimator::FaApfFilter)?.total,
        ))
    };
    let (sigma2_bpf, sigma2_faapf) = sigma(0.0)?;
    if !(sigma2_bpf > 0.0) {
        return Err(SmcError::Degenerate(format!("BPF asymptotic variance vanishes at α = {alpha}")));
    }
    let rows = eps_grid
        .iter()
        .map(|&epsilon| {
            let (b, a) = sigma(epsilon)?;
            Ok(Figure1Row { epsilon, mcmc_bpf: b / sigma2_bpf, faapf: sigma2_faapf / sigma2_bpf, mcmc_faapf: a / sigma2_bpf })
        })
        .collect::<Result<Vec<_>>>()?;

    let exact = ExactSsm::new(&hmm, 2)?;
    let (bpf_terms, fa_terms) = exact.pf_filter_variance_terms(2, &f);
    let reference_faapf = fa_terms.iter().sum::<f64>() / bpf_terms.iter().sum::<f64>();
    Ok(Figure1Curves { alpha, sigma2_bpf, sigma2_faapf, rows, reference_faapf })
}

impl Figure1Curves {
    pub fn to_table(&self) -> ReplicateTable {
        let mut table = ReplicateTable::default();
        for (i, row) in self.rows.iter().enumerate() {
            let iact = (1.0 + row.epsilon) / (1.0 - row.epsilon);
            let values = [
                (1.0, 1.0),
                (row.mcmc_bpf, iact),
                (row.faapf, self.reference_faapf),
                (row.mcmc_faapf, iact * self.reference_faapf),
            ];
            for (alg, (value, reference)) in FIGURE1_ALGORITHMS.iter().zip(values) {
                table.rows.push(ReplicateRow {
                    replicate: i,
                    seed: 0,
                    algorithm: (*alg).into(),
                    particles: 0,
                    n: 2,
                    estimator: "relative-variance".into(),
                    value,
                    reference: Some(reference),
                });
            }
            table.note("grid", format!("eps[{i}]"), row.epsilon);
        }
        table.note("model", "alpha", self.alpha);
        table.note("exact", "sigma2_bpf", self.sigma2_bpf);
        table.note("exact", "sigma2_faapf", self.sigma2_faapf);
        if let Some(eps) = self.crossing() {
            table.note("exact", "mcmc_faapf_crossing_eps", eps);
        }
        table
    }

    /// `ε*` with `σ²_MCMC-FA-APF(ε*) = σ²_BPF`, when the fully adapted flow is the better one.
    pub fn crossing(&self) -> Option<f64> {
        let r = self.sigma2_faapf / self.sigma2_bpf;
        (r < 1.0).then(|| (1.0 - r) / (1.0 + r))
    }
}

/// α values for the two regimes, chosen by an exact scan over `{0.05, 0.10, …, 0.95}`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Figure1Alphas {
    /// Largest `σ²_FA-APF / σ²_BPF` (> 1) over the scan.
    pub faapf_worse: f64,
    /// Smallest `σ²_FA-APF / σ²_BPF` (< 1) whose MCMC curve crosses 1 inside the ε grid.
    pub faapf_better: f64,
}

pub fn select_figure1_alphas(eps_grid: &[f64]) -> Result<Figure1Alphas> {
    let mut worse: Option<(f64, f64)> = None;
    let mut better: Option<(f64, f64)> = None;
    for i in 1..20 {
        let alpha = i as f64 / 20.0;
        let curves = figure1_curves(alpha, eps_grid)?;
        let r = curves.sigma2_faapf / curves.sigma2_bpf;
        if r > 1.0 && worse.is_none_or(|(_, best)| r > best) {
            worse = Some((alpha, r));
        }
        let crosses = curves.rows.iter().any(|row| row.mcmc_faapf < 1.0) && curves.rows.iter().any(|row| row.mcmc_faapf > 1.0);
        if r < 1.0 && crosses && better.is_none_or(|(_, best)| r < best) {
            better = Some((alpha, r));
        }
    }
    match (worse, better) {
        (Some((w, _)), Some((b, _))) => Ok(Figure1Alphas { faapf_worse: w, faapf_better: b }),
        _ => Err(SmcError::Analysis("the α scan did not find both variance regimes".into())),
    }
}

/// `{start, start + step, …}` up to `stop` inclusive, each value rounded to 12 decimals.
pub fn parse_grid(spec: &str) -> Result<Vec<f64>> {
    let parts: Vec<&str> = spec.split(':').collect();
    let num = |s: &str| s.trim().parse::<f64>().map_err(|_| SmcError::Config(format!("bad grid value '{s}'")));
    match parts.as_slice() {
        [start, stop, step] => {
            let (start, stop, step) = (num(start)?, num(stop)?, num(step)?);
            if !(step > 0.0) || stop < start {
                return Err(SmcError::Config(format!("bad grid '{spec}'")));
            }
            let count = ((stop - start) / step + 1e-9).floor() as usize + 1;
            Ok((0..count).map(|i| ((start + i as f64 * step) * 1e12).round() / 1e12).collect())
        }
        _ => spec.split(',').map(num).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_parsing() {
        let g = parse_grid("0:0.9:0.1").unwrap();
        assert_eq!(g.len(), 10);
        assert_eq!(g[3], 0.3);
        assert_eq!(g[9], 0.9);
        assert_eq!(parse_grid("0.1,0.5").unwrap(), vec![0.1, 0.5]);
        assert!(parse_grid("1:0:0.1").is_err());
    }

    #[test]
    fn mcmc_bpf_column_is_lazy_iact() {
        let grid = parse_grid("0:0.9:0.1").unwrap();
        let c = figure1_curves(0.4, &grid).unwrap();
        for row in &c.rows {
            let r = (1.0 + row.epsilon) / (1.0 - row.epsilon);
            assert!((row.mcmc_bpf - r).abs() < 1e-10);
            assert!((row.mcmc_faapf - r * row.faapf).abs() < 1e-10);
        }
        assert!((c.rows[0].faapf - c.reference_faapf).abs() < 1e-12);
    }
}
