use serde::{Deserialize, Serialize};

use super::enumerate::FiniteFlow;
use super::kernel::KernelMatrix;
use crate::error::{Result, SmcError};
use crate::fk::Flow;
use crate::kernels::KernelKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Estimator {
    /// `η_n^N(f)`.
    Predictor,
    /// `γ_n^N(f) / γ_n(1)`.
    Unnormalized,
    /// `η_n^N(G_n f) / η_n^N(G_n)` on the bootstrap flow.
    BpfFilter,
    /// `η_n^N(f)` on the fully adapted flow.
    #[serde(rename = "faapf-filter")]
    FaApfFilter,
}

impl Estimator {
    pub fn label(self) -> &'static str {
        match self {
            Self::Predictor => "predictor",
            Self::Unnormalized => "unnormalized",
            Self::BpfFilter => "bpf-filter",
            Self::FaApfFilter => "faapf-filter",
        }
    }
}

/// One summand `η_p Γ_p(h_p, h_p)` with `h_p = Q̄_{p,n}(h_n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VarianceTerm {
    pub p: usize,
    pub variance: f64,
    /// `None` when `h_p` is constant under `η_p`.
    pub iact: Option<f64>,
    pub contribution: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct VarianceBreakdown {
    pub total: f64,
    pub terms: Vec<VarianceTerm>,
}

/// The final-time integrand `h_n` whose `Σ_n(h_n)` is the estimator's asymptotic variance.
pub fn final_integrand<S: Clone + 'static>(finite: &FiniteFlow<S>, n: usize, f: &[f64], estimator: Estimator) -> Vec<f64> {
    match estimator {
        Estimator::Unnormalized => f.to_vec(),
        Estimator::Predictor | Estimator::FaApfFilter => {
            let m = finite.integrate(n, f);
            f.iter().map(|v| v - m).collect()
        }
        Estimator::BpfFilter => {
            let g = finite.potentials(n);
            let eta_g = finite.integrate(n, &g);
            let gf: Vec<f64> = g.iter().zip(f).map(|(a, b)| a * b).collect();
            let pi_f = finite.integrate(n, &gf) / eta_g;
            g.iter().zip(f).map(|(gi, fi)| gi * (fi - pi_f) / eta_g).collect()
        }
    }
}

/// `Σ_n(h_n) = Σ_p η_p Γ_p(Q̄_{p,n} h_n, Q̄_{p,n} h_n)` with kernels built at the exact
/// `μ = η_{p-1}`; `kernels[p-1]` is the step-`p` kernel.
pub fn asymptotic_variance<F: Flow>(
    flow: &F,
    finite: &FiniteFlow<F::State>,
    kernels: &[KernelKind<F::State>],
    n: usize,
    f: &[f64],
    estimator: Estimator,
) -> Result<VarianceBreakdown> {
    if kernels.len() != n {
        return Err(SmcError::Config(format!("{} kernels supplied for {n} steps", kernels.len())));
    }
    if n == 0 || n > finite.horizon() {
        return Err(SmcError::Config(format!("time {n} outside the enumerated horizon {}", finite.horizon())));
    }
    if f.len() != finite.path_count(n) {
        return Err(SmcError::Config("test function length does not match the path count".into()));
    }
    let h_n = final_integrand(finite, n, f, estimator);
    let mut terms = Vec::with_capacity(n);
    for (p, kind) in (1..=n).zip(kernels) {
        let h = finite.qbar_apply(p, n, &h_n);
        let k = KernelMatrix::from_kind(flow, finite, p, None, kind)?;
        let variance = k.variance(&h);
        let (iact, contribution) = if variance > 0.0 {
            let contribution = k.mean(&k.covariance_function(&h, &h)?);
            (Some(k.iact(&h)?), contribution)
        } else {
            (None, 0.0)
        };
        terms.push(VarianceTerm { p, variance, iact, contribution });
    }
    Ok(VarianceBreakdown { total: terms.iter().map(|t| t.contribution).sum(), terms })
}
