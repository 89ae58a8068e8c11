use std::sync::OnceLock;

use nalgebra::{DMatrix, DVector, Dyn, LU};

use super::enumerate::{dot, FiniteFlow};
use crate::error::{Result, SmcError};
use crate::fk::Flow;
use crate::kernels::{mh_acceptance, mh_log_weight, AncestorWeighting, KernelKind};

const ROW_TOLERANCE: f64 = 1e-12;
const POISSON_TOLERANCE: f64 = 1e-10;

/// A row-stochastic matrix together with a stationary probability vector.
#[derive(Clone, Debug)]
pub struct KernelMatrix {
    k: DMatrix<f64>,
    eta: DVector<f64>,
    ergodic: OnceLock<bool>,
    poisson: OnceLock<LU<f64, Dyn, Dyn>>,
}

impl KernelMatrix {
    pub fn new(k: DMatrix<f64>, eta: Vec<f64>) -> Result<Self> {
        let m = eta.len();
        if k.nrows() != m || k.ncols() != m {
            return Err(SmcError::Config(format!("{}x{} matrix for {m} states", k.nrows(), k.ncols())));
        }
        if k.iter().any(|v| !(*v >= 0.0)) || eta.iter().any(|v| !(*v >= 0.0)) {
            return Err(SmcError::Analysis("negative or undefined probability".into()));
        }
        for (r, row) in k.row_iter().enumerate() {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > ROW_TOLERANCE {
                return Err(SmcError::Analysis(format!("row {r} sums to {s}")));
            }
        }
        if (eta.iter().sum::<f64>() - 1.0).abs() > ROW_TOLERANCE {
            return Err(SmcError::Analysis("stationary vector does not sum to 1".into()));
        }
        Ok(Self { k, eta: DVector::from_vec(eta), ergodic: OnceLock::new(), poisson: OnceLock::new() })
    }

    /// The matrix of `kind` targeting `Φ_n(μ)` on the enumerated paths of length `n`.
    /// `mu = None` uses the exact `η_{n-1}`.
    pub fn from_kind<F: Flow>(
        flow: &F,
        finite: &FiniteFlow<F::State>,
        n: usize,
        mu: Option<&[f64]>,
        kind: &KernelKind<F::State>,
    ) -> Result<Self> {
        kind.validate()?;
        let eta = finite.step_target(n, mu)?;
        let m = eta.len();
        let k = match kind {
            KernelKind::PerfectMixing => lazy_matrix(&eta, 0.0),
            KernelKind::LazyMixture { epsilon } => lazy_matrix(&eta, *epsilon),
            KernelKind::IndependentMh { weighting, proposal } => {
                let builder = MhBuilder::new(flow, finite, n, mu, *weighting)?;
                let log_r = (0..m)
                    .map(|i| {
                        let path = finite.decode(n, i);
                        proposal.log_density(n, &path[..n - 1], &path[n - 1])
                    })
                    .collect::<Result<Vec<_>>>()?;
                builder.matrix(&log_r, |_, b| builder.ancestor_prob(b) * log_r[b].exp())?
            }
            KernelKind::RandomWalkMh { weighting, walk } => {
                let builder = MhBuilder::new(flow, finite, n, mu, *weighting)?;
                let kx = finite.states().len();
                let mut walk_table = vec![0.0; kx * kx];
                for (a, from) in finite.states().iter().enumerate() {
                    for (b, to) in finite.states().iter().enumerate() {
                        let lp = walk.log_density(from, to).ok_or_else(|| {
                            SmcError::Config("random walk has no transition probabilities".into())
                        })?;
                        walk_table[a * kx + b] = lp.exp();
                    }
                }
                builder.matrix(&vec![0.0; m], |a, b| builder.ancestor_prob(b) * walk_table[(a % kx) * kx + b % kx])?
            }
        };
        Self::new(k, eta)
    }

    pub fn size(&self) -> usize {
        self.eta.len()
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.k
    }

    pub fn stationary(&self) -> &[f64] {
        self.eta.as_slice()
    }

    /// `‖ηK − η‖_TV`.
    pub fn stationarity_residual(&self) -> f64 {
        let moved = self.k.tr_mul(&self.eta);
        0.5 * (moved - &self.eta).abs().sum()
    }

    pub fn dobrushin(&self) -> f64 {
        dobrushin_of(&self.k)
    }

    /// True when some `K^{2^j}`, `2^j ≤ 64`, has Dobrushin coefficient below one.
    pub fn is_ergodic(&self) -> bool {
        *self.ergodic.get_or_init(|| self.contracts())
    }

    fn contracts(&self) -> bool {
        let mut power = self.k.clone();
        for j in 0..=6 {
            if dobrushin_of(&power) < 1.0 - 1e-12 {
                return true;
            }
            if j < 6 {
                power = &power * &power;
            }
        }
        false
    }

    pub fn apply(&self, f: &[f64]) -> Vec<f64> {
        (&self.k * DVector::from_column_slice(f)).as_slice().to_vec()
    }

    pub fn mean(&self, f: &[f64]) -> f64 {
        dot(self.eta.as_slice(), f)
    }

    pub fn variance(&self, f: &[f64]) -> f64 {
        let m = self.mean(f);
        self.eta.iter().zip(f).map(|(e, v)| e * (v - m) * (v - m)).sum()
    }

    /// `T(f) = Σ_j (K^j − η)(f)`, from `(I − K + 1η) h = f − η(f)`.
    pub fn resolvent_apply(&self, f: &[f64]) -> Result<Vec<f64>> {
        self.check_len(f)?;
        if !self.is_ergodic() {
            return Err(SmcError::Analysis("kernel is not ergodic; the resolvent is undefined".into()));
        }
        let m = self.size();
        let lu = self.poisson.get_or_init(|| {
            let ones = DVector::from_element(m, 1.0);
            (DMatrix::identity(m, m) - &self.k + &ones * self.eta.transpose()).lu()
        });
        let mean = self.mean(f);
        let rhs = DVector::from_iterator(m, f.iter().map(|v| v - mean));
        let h = lu
            .solve(&rhs)
            .ok_or_else(|| SmcError::Analysis("Poisson system is singular".into()))?;
        let scale = f.iter().fold(1.0f64, |s, v| s.max(v.abs()));
        let poisson = (&self.k * &h - &h + &rhs).amax();
        let centred = self.eta.dot(&h).abs();
        if poisson > POISSON_TOLERANCE * scale || centred > POISSON_TOLERANCE * scale {
            return Err(SmcError::Analysis(format!(
                "Poisson residuals {poisson:e}, {centred:e} exceed tolerance"
            )));
        }
        Ok(h.as_slice().to_vec())
    }

    /// `Γ(f, g)(x) = Σ_y K(x, y) (Tf(y) − KTf(x)) (Tg(y) − KTg(x))`.
    pub fn covariance_function(&self, f: &[f64], g: &[f64]) -> Result<Vec<f64>> {
        let tf = self.resolvent_apply(f)?;
        let tg = self.resolvent_apply(g)?;
        let ktf = self.apply(&tf);
        let ktg = self.apply(&tg);
        Ok((0..self.size())
            .map(|x| {
                self.k
                    .row(x)
                    .iter()
                    .enumerate()
                    .map(|(y, kxy)| kxy * (tf[y] - ktf[x]) * (tg[y] - ktg[x]))
                    .sum()
            })
            .collect())
    }

    /// `1 + 2 Σ_{j≥1} cov(f, K^j f) / var(f)`, as `(2 η(f̄ Tf) − var f) / var f`.
    pub fn iact(&self, f: &[f64]) -> Result<f64> {
        let var = self.variance(f);
        if !(var > 0.0) {
            return Err(SmcError::Degenerate("IACT of a function that is constant under η".into()));
        }
        let tf = self.resolvent_apply(f)?;
        let mean = self.mean(f);
        let cross: f64 = self.eta.iter().zip(f).zip(&tf).map(|((e, v), t)| e * (v - mean) * t).sum();
        Ok((2.0 * cross - var) / var)
    }

    /// `|η Γ(f, f) − var_η(f) · iact(f)|`.
    pub fn variance_decomposition_check(&self, f: &[f64]) -> Result<f64> {
        let lhs = self.mean(&self.covariance_function(f, f)?);
        Ok((lhs - self.variance(f) * self.iact(f)?).abs())
    }

    fn check_len(&self, f: &[f64]) -> Result<()> {
        if f.len() != self.size() {
            return Err(SmcError::Config(format!("function has {} values, kernel has {} states", f.len(), self.size())));
        }
        Ok(())
    }
}

fn lazy_matrix(eta: &[f64], epsilon: f64) -> DMatrix<f64> {
    let m = eta.len();
    DMatrix::from_fn(m, m, |x, y| (1.0 - epsilon) * eta[y] + if x == y { epsilon } else { 0.0 })
}

/// Largest total-variation distance between two rows.
pub fn dobrushin_of(k: &DMatrix<f64>) -> f64 {
    // columns of the transpose are the rows of `k`, stored contiguously
    let t = k.transpose();
    let m = t.ncols();
    let mut best = 0.0f64;
    for a in 0..m {
        let ra = t.column(a);
        for b in a + 1..m {
            let tv: f64 = 0.5 * ra.as_slice().iter().zip(t.column(b).as_slice()).map(|(x, y)| (x - y).abs()).sum::<f64>();
            best = best.max(tv);
        }
    }
    best
}

/// Shared pieces of an MH matrix on `(ancestor, x)` pairs.
struct MhBuilder {
    k: usize,
    m: usize,
    /// Ancestor proposal probabilities `∝ μ F` over `E_{n-1}` (empty at `n = 1`).
    ancestors: Vec<f64>,
    /// MH log-weight of every path except for the proposal-density term.
    log_w: Vec<f64>,
}

impl MhBuilder {
    fn new<F: Flow>(
        flow: &F,
        finite: &FiniteFlow<F::State>,
        n: usize,
        mu: Option<&[f64]>,
        weighting: AncestorWeighting,
    ) -> Result<Self> {
        let k = finite.states().len();
        let m = finite.path_count(n);
        let mut ancestors = Vec::new();
        if n > 1 {
            let mu = mu.unwrap_or_else(|| finite.eta(n - 1));
            let log_g = finite.log_potentials(n - 1);
            let w: Vec<f64> = match weighting {
                AncestorWeighting::Potential => mu.iter().zip(log_g).map(|(p, lg)| p * lg.exp()).collect(),
                AncestorWeighting::Uniform => mu.to_vec(),
            };
            let total: f64 = w.iter().sum();
            ancestors = w.into_iter().map(|v| v / total).collect();
        }
        let log_w = (0..m)
            .map(|i| {
                let path = finite.decode(n, i);
                let ext = flow.log_extension_weight(n, &path[..n - 1], &path[n - 1])?;
                let (log_g, log_f) = if n == 1 {
                    (None, None)
                } else {
                    let lg = finite.log_potentials(n - 1)[i / k];
                    match weighting {
                        AncestorWeighting::Potential => (Some(lg), None),
                        AncestorWeighting::Uniform => (Some(lg), Some(0.0)),
                    }
                };
                Ok(mh_log_weight(ext, log_g, log_f, None))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { k, m, ancestors, log_w })
    }

    fn ancestor_prob(&self, b: usize) -> f64 {
        if self.ancestors.is_empty() {
            1.0
        } else {
            self.ancestors[b / self.k]
        }
    }

    /// `K(a, b) = q(a, b) α(a, b)` off the diagonal, rejection mass on it.
    fn matrix(&self, log_r: &[f64], q: impl Fn(usize, usize) -> f64) -> Result<DMatrix<f64>> {
        let weight = |i: usize| self.log_w[i] - log_r[i];
        let mut k = DMatrix::zeros(self.m, self.m);
        for a in 0..self.m {
            let wa = weight(a);
            let mut off = 0.0;
            for b in 0..self.m {
                if a == b {
                    continue;
                }
                let qab = q(a, b);
                if qab > 0.0 {
                    let v = qab * mh_acceptance(wa, weight(b));
                    k[(a, b)] = v;
                    off += v;
                }
            }
            if off > 1.0 + ROW_TOLERANCE {
                return Err(SmcError::Analysis(format!("proposal row {a} has mass above one")));
            }
            k[(a, a)] = (1.0 - off).max(0.0);
        }
        Ok(k)
    }
}
