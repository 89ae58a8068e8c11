use rand::Rng;
use rand_distr::StandardNormal;

use super::{FiniteHmm, FullyAdapted, StateSpaceModel};
use crate::error::{Result, SmcError};
use crate::fk::SmcRng;

const LN_2PI: f64 = 1.837_877_066_409_345_3;

fn log_normal(x: f64, mean: f64, var: f64) -> f64 {
    let z = x - mean;
    -0.5 * (LN_2PI + var.ln() + z * z / var)
}

/// `X_1 ~ N(0, I)`, `X_n | x_{n-1} ~ N(x_{n-1}/2, I)`, `Y_n | x_n ~ N(x_n, I)` in
/// dimension `d`. Coordinates are independent and identically specified.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearGaussianModel {
    dim: usize,
    observations: Vec<Vec<f64>>,
}

impl LinearGaussianModel {
    pub const TRANSITION_FACTOR: f64 = 0.5;

    pub fn new(dim: usize, observations: Vec<Vec<f64>>) -> Result<Self> {
        if dim == 0 {
            return Err(SmcError::Config("dimension must be at least 1".into()));
        }
        check_observations(dim, &observations)?;
        Ok(Self { dim, observations })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn observations(&self) -> &[Vec<f64>] {
        &self.observations
    }

    /// Per-coordinate scale `1/√d` of the random-walk proposal.
    pub fn proposal_scale(&self) -> f64 {
        1.0 / (self.dim as f64).sqrt()
    }

    /// Exact `log 𝓛_n` for the first `n` observations (`n = 0` gives 0).
    pub fn log_marginal_likelihood(&self, n: usize) -> Result<f64> {
        if n > self.observations.len() {
            return Err(SmcError::Input(format!("only {} observations available", self.observations.len())));
        }
        kalman_log_marginal_likelihood(&self.observations[..n])
    }

    fn y(&self, n: usize) -> &[f64] {
        &self.observations[n - 1]
    }
}

fn check_observations(dim: usize, observations: &[Vec<f64>]) -> Result<()> {
    for (t, y) in observations.iter().enumerate() {
        if y.len() != dim {
            return Err(SmcError::Input(format!(
                "observation {} has dimension {}, expected {dim}",
                t + 1,
                y.len()
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(SmcError::Input(format!("observation {} is not finite", t + 1)));
        }
    }
    Ok(())
}

/// Exact log marginal likelihood by scalar Kalman recursions, one per coordinate.
pub fn kalman_log_marginal_likelihood(observations: &[Vec<f64>]) -> Result<f64> {
    let Some(first) = observations.first() else {
        return Ok(0.0);
    };
    let dim = first.len();
    check_observations(dim, observations)?;
    let mut total = 0.0;
    for i in 0..dim {
        let (mut mean, mut var) = (0.0, 1.0);
        for (t, y) in observations.iter().enumerate() {
            if t > 0 {
                mean *= LinearGaussianModel::TRANSITION_FACTOR;
                var = var * LinearGaussianModel::TRANSITION_FACTOR.powi(2) + 1.0;
            }
            let s = var + 1.0;
            total += log_normal(y[i], mean, s);
            let gain = var / s;
            mean += gain * (y[i] - mean);
            var *= 1.0 - gain;
        }
    }
    Ok(total)
}

/// Forward simulation of `(x_{1:n}, y_{1:n})`.
pub fn simulate_linear_gaussian(dim: usize, n: usize, rng: &mut SmcRng) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut xs: Vec<Vec<f64>> = Vec::with_capacity(n);
    let mut ys = Vec::with_capacity(n);
    for t in 0..n {
        let x: Vec<f64> = (0..dim)
            .map(|i| {
                let z: f64 = rng.sample(StandardNormal);
                if t == 0 {
                    z
                } else {
                    xs[t - 1][i] * LinearGaussianModel::TRANSITION_FACTOR + z
                }
            })
            .collect();
        let y: Vec<f64> = x
            .iter()
            .map(|xi| {
                let z: f64 = rng.sample(StandardNormal);
                xi + z
            })
            .collect();
        xs.push(x);
        ys.push(y);
    }
    (xs, ys)
}

impl StateSpaceModel for LinearGaussianModel {
    type State = Vec<f64>;

    fn len(&self) -> usize {
        self.observations.len()
    }

    fn sample_initial(&self, rng: &mut SmcRng) -> Vec<f64> {
        (0..self.dim).map(|_| rng.sample(StandardNormal)).collect()
    }

    fn sample_transition(&self, _n: usize, prev: &Vec<f64>, rng: &mut SmcRng) -> Vec<f64> {
        prev.iter()
            .map(|x| {
                let z: f64 = rng.sample(StandardNormal);
                x * Self::TRANSITION_FACTOR + z
            })
            .collect()
    }

    fn log_initial_density(&self, x: &Vec<f64>) -> f64 {
        x.iter().map(|xi| log_normal(*xi, 0.0, 1.0)).sum()
    }

    fn log_transition_density(&self, _n: usize, prev: &Vec<f64>, x: &Vec<f64>) -> f64 {
        prev.iter()
            .zip(x)
            .map(|(p, xi)| log_normal(*xi, p * Self::TRANSITION_FACTOR, 1.0))
            .sum()
    }

    fn log_observation_density(&self, n: usize, x: &Vec<f64>) -> f64 {
        self.y(n).iter().zip(x).map(|(y, xi)| log_normal(*xi, *y, 1.0)).sum()
    }

    fn fully_adapted(&self) -> Option<&dyn FullyAdapted<Vec<f64>>> {
        Some(self)
    }
}

impl LinearGaussianModel {
    /// Prior mean of `x_n` given the parent, per coordinate.
    fn prior_mean(&self, i: usize, prev: Option<&Vec<f64>>) -> f64 {
        prev.map_or(0.0, |p| p[i] * Self::TRANSITION_FACTOR)
    }
}

/// Unit prior variance times unit observation variance: the conjugate update halves
/// the variance and averages prior mean and observation.
impl FullyAdapted<Vec<f64>> for LinearGaussianModel {
    fn log_predictive(&self, n: usize, prev: Option<&Vec<f64>>) -> f64 {
        let prev = if n == 1 { None } else { prev };
        self.y(n)
            .iter()
            .enumerate()
            .map(|(i, y)| log_normal(*y, self.prior_mean(i, prev), 2.0))
            .sum()
    }

    fn sample_twisted(&self, n: usize, prev: Option<&Vec<f64>>, rng: &mut SmcRng) -> Vec<f64> {
        let prev = if n == 1 { None } else { prev };
        let sd = 0.5f64.sqrt();
        self.y(n)
            .iter()
            .enumerate()
            .map(|(i, y)| {
                let z: f64 = rng.sample(StandardNormal);
                0.5 * (self.prior_mean(i, prev) + y) + sd * z
            })
            .collect()
    }

    fn log_twisted_density(&self, n: usize, prev: Option<&Vec<f64>>, x: &Vec<f64>) -> f64 {
        let prev = if n == 1 { None } else { prev };
        self.y(n)
            .iter()
            .enumerate()
            .map(|(i, y)| log_normal(x[i], 0.5 * (self.prior_mean(i, prev) + y), 0.5))
            .sum()
    }
}

/// One-dimensional model restricted to an equispaced grid on `[-half_width, half_width]`,
/// with each transition row and the initial law renormalised over the grid.
pub fn discretised_linear_gaussian(
    observations: &[f64],
    points: usize,
    half_width: f64,
) -> Result<(FiniteHmm, Vec<f64>)> {
    if points < 2 {
        return Err(SmcError::Config("grid needs at least two points".into()));
    }
    let step = 2.0 * half_width / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| -half_width + step * i as f64).collect();
    let normalise = |w: Vec<f64>| {
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let initial = normalise(grid.iter().map(|x| log_normal(*x, 0.0, 1.0).exp()).collect());
    let transition = grid
        .iter()
        .map(|from| {
            normalise(
                grid.iter()
                    .map(|to| log_normal(*to, from * LinearGaussianModel::TRANSITION_FACTOR, 1.0).exp())
                    .collect(),
            )
        })
        .collect();
    let log_obs = observations
        .iter()
        .map(|y| grid.iter().map(|x| log_normal(*x, *y, 1.0)).collect())
        .collect();
    Ok((FiniteHmm::new(initial, transition, log_obs)?, grid))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn kalman_first_observation() {
        let l1 = kalman_log_marginal_likelihood(&[vec![0.0]]).unwrap();
        assert!((l1 - (1.0 / (4.0 * std::f64::consts::PI).sqrt()).ln()).abs() < 1e-14);
        assert!((l1 + 1.26551).abs() < 1e-5);
        let l2 = kalman_log_marginal_likelihood(&[vec![0.0, 0.0]]).unwrap();
        assert_eq!(l2, 2.0 * l1);
    }

    #[test]
    fn kalman_rejects_bad_observations() {
        assert!(matches!(
            kalman_log_marginal_likelihood(&[vec![f64::NAN]]),
            Err(SmcError::Input(_))
        ));
        assert!(kalman_log_marginal_likelihood(&[vec![0.0], vec![0.0, 1.0]]).is_err());
        assert!(LinearGaussianModel::new(2, vec![vec![1.0]]).is_err());
    }

    #[test]
    fn twisted_density_is_normalised_product() {
        // L(x) g(x) / L(g) must equal the twisted density pointwise.
        let m = LinearGaussianModel::new(2, vec![vec![0.3, -1.0], vec![1.2, 0.4]]).unwrap();
        let prev = vec![0.8, -0.2];
        for x in [vec![0.0, 0.0], vec![1.5, -0.7]] {
            let lhs = m.log_twisted_density(2, Some(&prev), &x);
            let rhs = m.log_transition_density(2, &prev, &x) + m.log_observation_density(2, &x)
                - m.log_predictive(2, Some(&prev));
            assert!((lhs - rhs).abs() < 1e-12);
            let lhs1 = m.log_twisted_density(1, None, &x);
            let rhs1 = m.log_initial_density(&x) + m.log_observation_density(1, &x) - m.log_predictive(1, None);
            assert!((lhs1 - rhs1).abs() < 1e-12);
        }
    }

    #[test]
    fn simulation_is_seeded() {
        let a = simulate_linear_gaussian(3, 4, &mut SmcRng::seed_from_u64(2));
        let b = simulate_linear_gaussian(3, 4, &mut SmcRng::seed_from_u64(2));
        assert_eq!(a, b);
        assert_eq!(a.0.len(), 4);
        assert_eq!(a.1[0].len(), 3);
    }

    #[test]
    fn discretised_grid_layout() {
        let (hmm, grid) = discretised_linear_gaussian(&[0.5, -0.2], 41, 5.0).unwrap();
        assert_eq!(grid.len(), 41);
        assert!((grid[20]).abs() < 1e-12);
        assert!((grid[1] - grid[0] - 0.25).abs() < 1e-12);
        assert_eq!(hmm.states(), 41);
    }
}
