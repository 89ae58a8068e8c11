use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

use super::{FullyAdapted, StateSpaceModel};
use crate::error::{Result, SmcError};
use crate::fk::SmcRng;

const PROB_TOL: f64 = 1e-12;

/// Finite-state HMM on `{0, …, k-1}` with a time-homogeneous transition matrix and
/// per-time observation likelihood vectors `log g_n(·, y_n)`.
///
/// All integrals of the fully adapted flow are finite sums, so this model supports
/// every flow construction.
#[derive(Clone, Debug)]
pub struct FiniteHmm {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    log_obs: Vec<Vec<f64>>,
    initial_table: WeightedIndex<f64>,
    transition_tables: Vec<WeightedIndex<f64>>,
    /// `twisted[n-1][prev]`, with `prev = k` standing for "no parent" (n = 1).
    twisted: Vec<Vec<Option<WeightedIndex<f64>>>>,
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(SmcError::Config(format!("{what} has negative or non-finite entries")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(SmcError::Config(format!("{what} sums to {s}, not 1")));
    }
    Ok(())
}

fn table(p: &[f64]) -> Option<WeightedIndex<f64>> {
    WeightedIndex::new(p.iter().copied()).ok()
}

impl FiniteHmm {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>, log_obs: Vec<Vec<f64>>) -> Result<Self> {
        let k = initial.len();
        if k == 0 {
            return Err(SmcError::Config("empty state space".into()));
        }
        check_distribution(&initial, "initial law")?;
        if transition.len() != k {
            return Err(SmcError::Config("transition matrix must be k x k".into()));
        }
        for (i, row) in transition.iter().enumerate() {
            if row.len() != k {
                return Err(SmcError::Config("transition matrix must be k x k".into()));
            }
            check_distribution(row, &format!("transition row {i}"))?;
        }
        for (n, row) in log_obs.iter().enumerate() {
            if row.len() != k {
                return Err(SmcError::Config(format!("observation vector {} has wrong length", n + 1)));
            }
            if row.iter().any(|v| !v.is_finite() || *v > 0.0) {
                return Err(SmcError::Config(format!(
                    "observation likelihoods at time {} must lie in (0, 1]",
                    n + 1
                )));
            }
        }
        let initial_table = table(&initial).expect("validated distribution");
        let transition_tables = transition.iter().map(|r| table(r).expect("validated row")).collect();
        let mut model = Self {
            initial,
            transition,
            log_obs,
            initial_table,
            transition_tables,
            twisted: Vec::new(),
        };
        model.twisted = (1..=model.log_obs.len())
            .map(|n| {
                (0..=k)
                    .map(|prev| {
                        let prior = model.prior_row(n, (prev < k).then_some(prev));
                        let w: Vec<f64> = prior
                            .iter()
                            .zip(&model.log_obs[n - 1])
                            .map(|(p, lg)| p * lg.exp())
                            .collect();
                        table(&w)
                    })
                    .collect()
            })
            .collect();
        Ok(model)
    }

    /// Builds `log g_n(x, y_n)` from an emission matrix `emission[x][y]` and observed symbols.
    pub fn from_emission(
        initial: Vec<f64>,
        transition: Vec<Vec<f64>>,
        emission: &[Vec<f64>],
        observations: &[usize],
    ) -> Result<Self> {
        if emission.len() != initial.len() {
            return Err(SmcError::Config("emission matrix needs one row per state".into()));
        }
        let log_obs = observations
            .iter()
            .map(|&y| {
                emission
                    .iter()
                    .map(|row| {
                        row.get(y)
                            .map(|p| p.ln())
                            .ok_or_else(|| SmcError::Config(format!("observation symbol {y} out of range")))
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(initial, transition, log_obs)
    }

    pub fn states(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// `g_n(x, y_n)` for all `x`.
    pub fn likelihood(&self, n: usize) -> Vec<f64> {
        self.log_obs[n - 1].iter().map(|v| v.exp()).collect()
    }

    fn prior_row(&self, n: usize, prev: Option<usize>) -> &[f64] {
        match (n, prev) {
            (1, _) | (_, None) => &self.initial,
            (_, Some(p)) => &self.transition[p],
        }
    }

    fn check_time(&self, n: usize) {
        assert!(n >= 1 && n <= self.log_obs.len(), "time {n} outside 1..={}", self.log_obs.len());
    }
}

impl StateSpaceModel for FiniteHmm {
    type State = usize;

    fn len(&self) -> usize {
        self.log_obs.len()
    }

    fn sample_initial(&self, rng: &mut SmcRng) -> usize {
        self.initial_table.sample(rng)
    }

    fn sample_transition(&self, _n: usize, prev: &usize, rng: &mut SmcRng) -> usize {
        self.transition_tables[*prev].sample(rng)
    }

    fn log_initial_density(&self, x: &usize) -> f64 {
        self.initial[*x].ln()
    }

    fn log_transition_density(&self, _n: usize, prev: &usize, x: &usize) -> f64 {
        self.transition[*prev][*x].ln()
    }

    fn log_observation_density(&self, n: usize, x: &usize) -> f64 {
        self.check_time(n);
        self.log_obs[n - 1][*x]
    }

    fn fully_adapted(&self) -> Option<&dyn FullyAdapted<usize>> {
        Some(self)
    }

    fn finite_states(&self) -> Option<Vec<usize>> {
        Some((0..self.states()).collect())
    }

    fn integrate_transition(&self, n: usize, prev: Option<&usize>, f: &dyn Fn(&usize) -> f64) -> Option<f64> {
        let row = self.prior_row(n, prev.copied());
        Some(row.iter().enumerate().map(|(x, p)| p * f(&x)).sum())
    }
}

impl FullyAdapted<usize> for FiniteHmm {
    fn log_predictive(&self, n: usize, prev: Option<&usize>) -> f64 {
        self.check_time(n);
        let row = self.prior_row(n, prev.copied());
        row.iter()
            .zip(&self.log_obs[n - 1])
            .map(|(p, lg)| p * lg.exp())
            .sum::<f64>()
            .ln()
    }

    fn sample_twisted(&self, n: usize, prev: Option<&usize>, rng: &mut SmcRng) -> usize {
        self.check_time(n);
        let idx = if n == 1 { self.states() } else { prev.copied().unwrap_or(self.states()) };
        match &self.twisted[n - 1][idx] {
            Some(t) => t.sample(rng),
            // Unreachable parent (zero predictive mass); any state will do.
            None => rng.random_range(0..self.states()),
        }
    }

    fn log_twisted_density(&self, n: usize, prev: Option<&usize>, x: &usize) -> f64 {
        let prior = self.prior_row(n, prev.copied());
        prior[*x].ln() + self.log_obs[n - 1][*x] - self.log_predictive(n, prev)
    }
}

/// The two-step binary model: `L_1` uniform, `L_2` keeps the state with probability
/// `α`, `g(x, y) = 0.99` if `x = y` else `0.01`, and `y_1 = y_2 = 0`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BinaryToyModel {
    pub alpha: f64,
    /// Weight of the lazy mixture kernel used with this model.
    pub epsilon: f64,
}

impl BinaryToyModel {
    pub const MATCH: f64 = 0.99;
    pub const MISMATCH: f64 = 0.01;
    pub const OBSERVATIONS: [usize; 2] = [0, 0];

    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(SmcError::Config(format!("alpha = {alpha} outside [0, 1]")));
        }
        if !(0.0..1.0).contains(&epsilon) {
            return Err(SmcError::Config(format!("epsilon = {epsilon} outside [0, 1)")));
        }
        Ok(Self { alpha, epsilon })
    }

    fn emission() -> Vec<Vec<f64>> {
        vec![vec![Self::MATCH, Self::MISMATCH], vec![Self::MISMATCH, Self::MATCH]]
    }

    fn transition(&self) -> Vec<Vec<f64>> {
        vec![vec![self.alpha, 1.0 - self.alpha], vec![1.0 - self.alpha, self.alpha]]
    }

    pub fn hmm(&self) -> FiniteHmm {
        FiniteHmm::from_emission(vec![0.5, 0.5], self.transition(), &Self::emission(), &Self::OBSERVATIONS)
            .expect("binary toy model parameters are valid")
    }

    /// Forward simulation of `(x_{1:n}, y_{1:n})`.
    pub fn simulate(&self, n: usize, rng: &mut SmcRng) -> (Vec<usize>, Vec<usize>) {
        let emission = Self::emission();
        let transition = self.transition();
        let mut xs: Vec<usize> = Vec::with_capacity(n);
        let mut ys = Vec::with_capacity(n);
        for t in 0..n {
            let x = if t == 0 {
                usize::from(rng.random::<f64>() >= 0.5)
            } else {
                usize::from(rng.random::<f64>() >= transition[xs[t - 1]][0])
            };
            let y = usize::from(rng.random::<f64>() >= emission[x][0]);
            xs.push(x);
            ys.push(y);
        }
        (xs, ys)
    }
}

/// Exact filter, predictor and likelihood of the binary model.
#[derive(Clone, Debug, PartialEq)]
pub struct BinaryQuantities {
    /// `π_1` over `x_1`.
    pub filter_1: Vec<f64>,
    /// `π̃_2` over paths `(x_1, x_2)`, indexed `2 x_1 + x_2`.
    pub predictor_2: Vec<f64>,
    /// `π_2` over paths, same indexing.
    pub filter_2: Vec<f64>,
    pub likelihood_1: f64,
    pub likelihood_2: f64,
}

/// Sums over the four paths of the binary model.
pub fn exact_binary_quantities(model: &BinaryToyModel) -> BinaryQuantities {
    let g = |x: usize| if x == 0 { BinaryToyModel::MATCH } else { BinaryToyModel::MISMATCH };
    let l2 = |a: usize, b: usize| if a == b { model.alpha } else { 1.0 - model.alpha };
    let joint1: Vec<f64> = (0..2).map(|x| 0.5 * g(x)).collect();
    let likelihood_1: f64 = joint1.iter().sum();
    let filter_1: Vec<f64> = joint1.iter().map(|v| v / likelihood_1).collect();
    let predictor_2: Vec<f64> = (0..4).map(|i| filter_1[i / 2] * l2(i / 2, i % 2)).collect();
    let joint2: Vec<f64> = (0..4).map(|i| joint1[i / 2] * l2(i / 2, i % 2) * g(i % 2)).collect();
    let likelihood_2: f64 = joint2.iter().sum();
    let filter_2 = joint2.iter().map(|v| v / likelihood_2).collect();
    BinaryQuantities { filter_1, predictor_2, filter_2, likelihood_1, likelihood_2 }
}
