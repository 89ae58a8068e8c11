use crate::error::{Result, SmcError};
use crate::fk::{Flow, TestFunction};

/// Default ceiling on `|E_x|^n` for exhaustive enumeration.
pub const DEFAULT_PATH_CAP: u128 = 1_000_000;

#[derive(Clone, Debug)]
struct Step {
    eta: Vec<f64>,
    log_g: Vec<f64>,
    /// `log m_n(path_{n-1}, x_n)` per path, `log m_1(x_1)` at the first step.
    log_m: Vec<f64>,
}

/// Exact path-space flow on a finite state space.
///
/// Paths of length `n` are indexed in base `k = |E_x|` with `x_1` the most significant
/// digit, so the parent of path `i` is `i / k` and its newest state is `i % k`.
#[derive(Clone, Debug)]
pub struct FiniteFlow<S> {
    states: Vec<S>,
    steps: Vec<Step>,
    /// `log Z_1, …, log Z_{n+1}`.
    log_z: Vec<f64>,
}

pub fn enumerate_flow<F: Flow>(flow: &F, n: usize) -> Result<FiniteFlow<F::State>> {
    enumerate_flow_with_cap(flow, n, DEFAULT_PATH_CAP)
}

pub fn enumerate_flow_with_cap<F: Flow>(flow: &F, n: usize, cap: u128) -> Result<FiniteFlow<F::State>> {
    let states = flow
        .finite_states()
        .ok_or_else(|| SmcError::Analysis("exact enumeration needs a finite state space".into()))?;
    if states.is_empty() || n == 0 {
        return Err(SmcError::Config("enumeration needs states and a horizon of at least 1".into()));
    }
    if let Some(h) = flow.horizon() {
        if n > h {
            return Err(SmcError::Config(format!("horizon {n} exceeds the flow's {h} steps")));
        }
    }
    if !flow.has_densities() {
        return Err(SmcError::Config("exact enumeration needs transition densities".into()));
    }
    let k = states.len();
    let count = (k as u128).checked_pow(n as u32).unwrap_or(u128::MAX);
    if count > cap {
        return Err(SmcError::Size { requested: count, cap });
    }

    let mut out = FiniteFlow { states, steps: Vec::with_capacity(n), log_z: vec![0.0] };
    for p in 1..=n {
        let size = k.pow(p as u32);
        let mut log_m = Vec::with_capacity(size);
        let mut log_g = Vec::with_capacity(size);
        for i in 0..size {
            let path = out.decode(p, i);
            let x = &path[p - 1];
            log_m.push(if p == 1 {
                flow.log_initial_density(x)?
            } else {
                flow.log_transition_density(p, &path[..p - 1], x)?
            });
            log_g.push(flow.log_potential(p, &path)?);
        }
        let weights: Vec<f64> = if p == 1 {
            log_m.iter().map(|v| v.exp()).collect()
        } else {
            let prev = &out.steps[p - 2];
            (0..size).map(|i| prev.eta[i / k] * prev.log_g[i / k].exp() * log_m[i].exp()).collect()
        };
        for (i, lg) in log_g.iter_mut().enumerate() {
            // unreachable paths may carry a zero potential
            let unreachable = weights[i] == 0.0 && *lg == f64::NEG_INFINITY;
            if (!lg.is_finite() && !unreachable) || *lg > 1e-12 {
                return Err(SmcError::Model(format!("log G_{p} = {lg} on path {i}")));
            }
            *lg = lg.min(0.0);
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0 && total.is_finite()) {
            return Err(SmcError::Numerical(format!("step {p} has no mass")));
        }
        let eta: Vec<f64> = weights.iter().map(|w| w / total).collect();
        let mean_g: f64 = eta.iter().zip(&log_g).map(|(e, lg)| e * lg.exp()).sum();
        let last = *out.log_z.last().expect("seeded");
        out.log_z.push(last + mean_g.ln());
        out.steps.push(Step { eta, log_g, log_m });
    }
    Ok(out)
}

impl<S: Clone + 'static> FiniteFlow<S> {
    pub fn horizon(&self) -> usize {
        self.steps.len()
    }

    pub fn states(&self) -> &[S] {
        &self.states
    }

    pub fn path_count(&self, n: usize) -> usize {
        self.states.len().pow(n as u32)
    }

    /// Path `x_{1:n}` with index `i`.
    pub fn decode(&self, n: usize, mut i: usize) -> Vec<S> {
        let k = self.states.len();
        let mut digits = vec![0; n];
        for d in digits.iter_mut().rev() {
            *d = i % k;
            i /= k;
        }
        digits.into_iter().map(|d| self.states[d].clone()).collect()
    }

    fn step(&self, n: usize) -> &Step {
        assert!((1..=self.horizon()).contains(&n), "time {n} outside 1..={}", self.horizon());
        &self.steps[n - 1]
    }

    pub fn eta(&self, n: usize) -> &[f64] {
        &self.step(n).eta
    }

    pub fn log_potentials(&self, n: usize) -> &[f64] {
        &self.step(n).log_g
    }

    pub fn potentials(&self, n: usize) -> Vec<f64> {
        self.step(n).log_g.iter().map(|v| v.exp()).collect()
    }

    pub fn log_mutation(&self, n: usize) -> &[f64] {
        &self.step(n).log_m
    }

    /// `Z_n` for `1 ≤ n ≤ horizon + 1`.
    pub fn z(&self, n: usize) -> f64 {
        self.log_z(n).exp()
    }

    pub fn log_z(&self, n: usize) -> f64 {
        self.log_z[n - 1]
    }

    /// `γ_n = Z_n η_n`.
    pub fn gamma(&self, n: usize) -> Vec<f64> {
        let z = self.z(n);
        self.eta(n).iter().map(|e| z * e).collect()
    }

    pub fn tabulate(&self, n: usize, f: &TestFunction<S>) -> Result<Vec<f64>> {
        (0..self.path_count(n))
            .map(|i| {
                let v = f.eval_full(&self.decode(n, i));
                if v.is_finite() {
                    Ok(v)
                } else {
                    Err(SmcError::Numerical(format!("test function is {v} on path {i}")))
                }
            })
            .collect()
    }

    pub fn integrate(&self, n: usize, values: &[f64]) -> f64 {
        dot(self.eta(n), values)
    }

    /// `Φ_n(μ)` for a probability vector `μ` on `E_{n-1}` (ignored at `n = 1`).
    pub fn step_target(&self, n: usize, mu: Option<&[f64]>) -> Result<Vec<f64>> {
        let step = self.step(n);
        if n == 1 {
            return Ok(step.log_m.iter().map(|v| v.exp()).collect());
        }
        let mu = mu.unwrap_or_else(|| self.eta(n - 1));
        let k = self.states.len();
        if mu.len() != self.path_count(n - 1) {
            return Err(SmcError::Config(format!("μ has {} entries, expected {}", mu.len(), self.path_count(n - 1))));
        }
        let log_g = self.log_potentials(n - 1);
        let w: Vec<f64> = (0..step.log_m.len()).map(|i| mu[i / k] * log_g[i / k].exp() * step.log_m[i].exp()).collect();
        let total: f64 = w.iter().sum();
        if !(total > 0.0) {
            return Err(SmcError::Numerical("μ(G) = 0".into()));
        }
        Ok(w.into_iter().map(|v| v / total).collect())
    }

    /// `Q_{p+1}(h)(path_p) = G_p(path_p) Σ_x m_{p+1}(path_p, x) h(path_p, x)`.
    pub fn q_apply(&self, p: usize, h: &[f64]) -> Vec<f64> {
        let k = self.states.len();
        let log_g = self.log_potentials(p);
        let log_m = self.log_mutation(p + 1);
        (0..self.path_count(p))
            .map(|j| {
                let s: f64 = (0..k).map(|x| log_m[j * k + x].exp() * h[j * k + x]).sum();
                log_g[j].exp() * s
            })
            .collect()
    }

    /// `Q_{p,n}(h) = Q_{p+1} ⋯ Q_n (h)`, the identity when `p = n`.
    pub fn q_semigroup(&self, p: usize, n: usize, h: &[f64]) -> Vec<f64> {
        let mut v = h.to_vec();
        for q in (p..n).rev() {
            v = self.q_apply(q, &v);
        }
        v
    }

    /// `Q̄_{p,n}(h) = Q_{p,n}(h) / η_p(Q_{p,n}(1))`, using `η_p(Q_{p,n}(1)) = Z_n / Z_p`.
    pub fn qbar_apply(&self, p: usize, n: usize, h: &[f64]) -> Vec<f64> {
        let scale = (self.log_z(p) - self.log_z(n)).exp();
        self.q_semigroup(p, n, h).into_iter().map(|v| v * scale).collect()
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
