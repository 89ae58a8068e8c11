//! Path-space Feynman–Kac flows and the empirical estimators built from particle clouds.
//!
//! A flow is described by an initial law `M_1`, mutation kernels `M_n` that extend a
//! path by one coordinate, and potentials `G_n` taking values in `(0, 1]`. The
//! normalised flow satisfies `η_n ∝ (η_{n-1} G_{n-1}) ⊗ M_n` and the normalising
//! constants are `Z_n = Π_{p<n} η_p(G_p)`.
//!
//! Flow callbacks receive the *stored suffix* of a path: the full path in path mode,
//! only the trailing [`Flow::memory`] coordinates in marginal mode. The last element of
//! the slice is always the most recent coordinate, and the time index is passed
//! explicitly.

use std::fmt::Debug;
use std::sync::Arc;

use crate::error::{Result, SmcError};
pub use crate::rng::SmcRng;

pub trait Flow: Send + Sync {
    type State: Clone + Debug + PartialEq + Send + Sync + 'static;

    /// Largest time index for which `M_n` and `G_n` are defined.
    fn horizon(&self) -> Option<usize> {
        None
    }

    /// Number of trailing coordinates read by `G_n` and `M_{n+1}` (the potential's
    /// support width plus one). `None` means the whole path may be read, which rules
    /// out marginal storage.
    fn memory(&self) -> Option<usize> {
        None
    }

    fn sample_initial(&self, rng: &mut SmcRng) -> Result<Self::State>;

    /// Draws `x_n ~ M_n(path_{n-1}, ·)` for `n > 1`.
    fn sample_transition(
        &self,
        n: usize,
        parent: &[Self::State],
        rng: &mut SmcRng,
    ) -> Result<Self::State>;

    /// `log G_n(path_n)`.
    fn log_potential(&self, n: usize, path: &[Self::State]) -> Result<f64>;

    /// Whether the density accessors below are implemented.
    fn has_densities(&self) -> bool {
        false
    }

    fn log_initial_density(&self, _x: &Self::State) -> Result<f64> {
        Err(missing_density())
    }

    fn log_transition_density(
        &self,
        _n: usize,
        _parent: &[Self::State],
        _x: &Self::State,
    ) -> Result<f64> {
        Err(missing_density())
    }

    /// `log G_{n-1}(path_{n-1}) + log m_n(path_{n-1}, x)`, or `log m_1(x)` at `n = 1`.
    ///
    /// This product is what MH kernels targeting `Φ_n(μ)` need. Flows whose `G` and
    /// `M` both involve an intractable integral can override it with the tractable
    /// product.
    fn log_extension_weight(&self, n: usize, parent: &[Self::State], x: &Self::State) -> Result<f64> {
        if n == 1 {
            self.log_initial_density(x)
        } else {
            Ok(self.log_potential(n - 1, parent)? + self.log_transition_density(n, parent, x)?)
        }
    }

    /// The state space, when finite.
    fn finite_states(&self) -> Option<Vec<Self::State>> {
        None
    }
}

fn missing_density() -> SmcError {
    SmcError::Config("flow does not expose transition densities".into())
}

fn check_time(flow_horizon: Option<usize>, n: usize) -> Result<()> {
    if n == 0 {
        return Err(SmcError::Config("time indices start at 1".into()));
    }
    match flow_horizon {
        Some(h) if n > h => Err(SmcError::Config(format!(
            "time index {n} is beyond the model horizon {h}"
        ))),
        _ => Ok(()),
    }
}

/// Draws from `M_1` when `n = 1`, otherwise from `M_n(parent, ·)`.
pub fn sample_mutation<F: Flow>(
    flow: &F,
    n: usize,
    parent: Option<&PathParticle<F::State>>,
    rng: &mut SmcRng,
) -> Result<F::State> {
    check_time(flow.horizon(), n)?;
    if n == 1 {
        return flow.sample_initial(rng);
    }
    let parent = parent.ok_or_else(|| SmcError::Config(format!("step {n} needs a parent path")))?;
    if parent.len() != n - 1 {
        return Err(SmcError::Config(format!(
            "parent path has length {}, expected {}",
            parent.len(),
            n - 1
        )));
    }
    flow.sample_transition(n, parent.stored(), rng)
}

/// `log G_n(path)`, validated to be finite and non-positive.
pub fn log_potential<F: Flow>(flow: &F, n: usize, path: &PathParticle<F::State>) -> Result<f64> {
    check_time(flow.horizon(), n)?;
    if path.len() < n {
        return Err(SmcError::Config(format!(
            "potential G_{n} evaluated on a path of length {}",
            path.len()
        )));
    }
    checked_log_potential(n, flow.log_potential(n, path.stored())?)
}

pub(crate) fn checked_log_potential(n: usize, value: f64) -> Result<f64> {
    if !value.is_finite() {
        return Err(SmcError::Model(format!(
            "log G_{n} = {value}; potentials must be strictly positive"
        )));
    }
    // Allow round-off from potentials assembled out of several factors.
    if value > 1e-12 {
        return Err(SmcError::Model(format!(
            "G_{n} = {} exceeds 1; potentials must be normalised to (0, 1]",
            value.exp()
        )));
    }
    Ok(value.min(0.0))
}

/// A particle path `x_{1:n}`, possibly truncated to its most recent coordinates.
#[derive(Clone, Debug, PartialEq)]
pub struct PathParticle<S> {
    len: usize,
    states: Vec<S>,
}

impl<S: Clone> PathParticle<S> {
    pub fn initial(x: S) -> Self {
        Self { len: 1, states: vec![x] }
    }

    /// Builds a full (untruncated) path.
    pub fn from_states(states: Vec<S>) -> Self {
        assert!(!states.is_empty(), "paths have at least one coordinate");
        Self { len: states.len(), states }
    }

    /// Appends `x`, keeping at most `window` stored coordinates.
    pub fn extend(&self, x: S, window: Option<usize>) -> Self {
        let keep = match window {
            Some(w) => w.max(1).saturating_sub(1).min(self.states.len()),
            None => self.states.len(),
        };
        let mut states = Vec::with_capacity(keep + 1);
        states.extend_from_slice(&self.states[self.states.len() - keep..]);
        states.push(x);
        Self { len: self.len + 1, states }
    }
}

impl<S> PathParticle<S> {
    /// Time index `n` of the path.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// The stored coordinates, most recent last.
    pub fn stored(&self) -> &[S] {
        &self.states
    }

    pub fn last(&self) -> &S {
        self.states.last().expect("non-empty path")
    }

    pub fn is_complete(&self) -> bool {
        self.states.len() == self.len
    }
}

/// A test function on `E_n`, either reading only the final coordinate or the whole path.
#[derive(Clone)]
pub enum TestFunction<S> {
    Final(Arc<dyn Fn(&S) -> f64 + Send + Sync>),
    Path(Arc<dyn Fn(&[S]) -> f64 + Send + Sync>),
}

impl<S> Debug for TestFunction<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            TestFunction::Final(_) => f.write_str("TestFunction::Final"),
            TestFunction::Path(_) => f.write_str("TestFunction::Path"),
        }
    }
}

impl<S: 'static> TestFunction<S> {
    pub fn final_coordinate(f: impl Fn(&S) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction::Final(Arc::new(f))
    }

    pub fn path(f: impl Fn(&[S]) -> f64 + Send + Sync + 'static) -> Self {
        TestFunction::Path(Arc::new(f))
    }

    pub fn constant(c: f64) -> Self {
        TestFunction::Final(Arc::new(move |_| c))
    }

    pub fn reads_final_only(&self) -> bool {
        matches!(self, TestFunction::Final(_))
    }

    pub fn eval(&self, path: &PathParticle<S>) -> Result<f64> {
        let v = match self {
            TestFunction::Final(f) => f(path.last()),
            TestFunction::Path(f) => {
                if !path.is_complete() {
                    return Err(SmcError::Config(
                        "path test function on a truncated (marginal-mode) path".into(),
                    ));
                }
                f(path.stored())
            }
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(SmcError::Numerical(format!("test function returned {v}")))
        }
    }

    /// Evaluates on a full path given as a slice.
    pub fn eval_full(&self, path: &[S]) -> f64 {
        match self {
            TestFunction::Final(f) => f(path.last().expect("non-empty path")),
            TestFunction::Path(f) => f(path),
        }
    }
}

/// Equally weighted particle cloud at time `n` together with `log G_n` per particle.
#[derive(Clone, Debug)]
pub struct Cloud<S> {
    pub(crate) n: usize,
    pub(crate) particles: Vec<PathParticle<S>>,
    pub(crate) log_potentials: Vec<f64>,
}

impl<S: Clone + 'static> Cloud<S> {
    pub fn new(n: usize, particles: Vec<PathParticle<S>>, log_potentials: Vec<f64>) -> Self {
        debug_assert_eq!(particles.len(), log_potentials.len());
        Self { n, particles, log_potentials }
    }

    pub fn time(&self) -> usize {
        self.n
    }

    pub fn particles(&self) -> &[PathParticle<S>] {
        &self.particles
    }

    pub fn log_potentials(&self) -> &[f64] {
        &self.log_potentials
    }

    pub fn len(&self) -> usize {
        self.particles.len()
    }

    pub fn is_empty(&self) -> bool {
        self.particles.is_empty()
    }

    /// Number of stored states, for memory accounting.
    pub fn stored_states(&self) -> usize {
        self.particles.iter().map(|p| p.stored().len()).sum()
    }

    /// `log η_n^N(G_n)`.
    pub fn log_mean_potential(&self) -> f64 {
        log_mean_exp(&self.log_potentials)
    }
}

/// `η_n^N(f) = (1/N) Σ_i f(path^i)`.
pub fn empirical_integrate<S: Clone + 'static>(
    cloud: &Cloud<S>,
    f: &TestFunction<S>,
) -> Result<f64> {
    if cloud.is_empty() {
        return Err(SmcError::Config("empty particle cloud".into()));
    }
    let values = cloud
        .particles
        .iter()
        .map(|p| f.eval(p))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&values))
}

/// Compensated (Neumaier) mean.
pub fn mean(values: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut c = 0.0;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            c += (sum - t) + v;
        } else {
            c += (v - t) + sum;
        }
        sum = t;
    }
    (sum + c) / values.len() as f64
}

/// `log((1/N) Σ exp(v_i))`.
pub fn log_mean_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    let shifted: Vec<f64> = values.iter().map(|v| (v - max).exp()).collect();
    max + mean(&shifted).ln()
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum StorageMode {
    /// Keep only the trailing [`Flow::memory`] coordinates of each path.
    #[default]
    Marginal,
    /// Keep complete trajectories.
    Path,
}

/// Output of a particle run: retained clouds plus the running normalising-constant estimate.
#[derive(Clone, Debug)]
pub struct ParticleRun<S> {
    pub(crate) mode: StorageMode,
    /// `log Z_n^N` for `n = 1, 2, ...`; entry 0 is `log Z_1^N = 0`.
    pub(crate) log_z: Vec<f64>,
    /// `log g_p^N = log η_p^N(G_p)` for completed steps.
    pub(crate) log_means: Vec<f64>,
    pub(crate) clouds: Vec<Cloud<S>>,
    pub(crate) peak_stored_states: usize,
}

impl<S: Clone + 'static> ParticleRun<S> {
    pub(crate) fn new(mode: StorageMode) -> Self {
        Self {
            mode,
            log_z: vec![0.0],
            log_means: Vec::new(),
            clouds: Vec::new(),
            peak_stored_states: 0,
        }
    }

    pub(crate) fn push_step(&mut self, cloud: Cloud<S>, retain: usize) {
        let log_g = cloud.log_mean_potential();
        let last = *self.log_z.last().expect("log Z_1 present");
        self.log_z.push(last + log_g);
        self.log_means.push(log_g);
        self.clouds.push(cloud);
        if self.clouds.len() > retain {
            let excess = self.clouds.len() - retain;
            self.clouds.drain(..excess);
        }
        let stored: usize = self.clouds.iter().map(Cloud::stored_states).sum();
        self.peak_stored_states = self.peak_stored_states.max(stored);
    }

    pub fn mode(&self) -> StorageMode {
        self.mode
    }

    /// Number of completed time steps.
    pub fn steps(&self) -> usize {
        self.log_means.len()
    }

    /// The retained cloud at time `n`.
    pub fn cloud(&self, n: usize) -> Result<&Cloud<S>> {
        self.clouds.iter().find(|c| c.n == n).ok_or_else(|| {
            SmcError::Config(format!(
                "cloud at time {n} is not retained (completed {} steps)",
                self.steps()
            ))
        })
    }

    /// `g_p^N = η_p^N(G_p)`.
    pub fn mean_potential(&self, p: usize) -> Result<f64> {
        self.log_means
            .get(p.wrapping_sub(1))
            .map(|v| v.exp())
            .ok_or_else(|| SmcError::Config(format!("step {p} has not been run")))
    }

    /// Peak number of path coordinates held by retained clouds.
    pub fn peak_stored_states(&self) -> usize {
        self.peak_stored_states
    }

    pub fn log_normconst_estimate(&self, n: usize) -> Result<f64> {
        if n == 0 {
            return Err(SmcError::Config("time indices start at 1".into()));
        }
        self.log_z.get(n - 1).copied().ok_or_else(|| {
            SmcError::Config(format!(
                "Z_{n} needs potentials of steps 1..{}, only {} completed",
                n - 1,
                self.steps()
            ))
        })
    }
}

/// `Z_n^N = Π_{p<n} η_p^N(G_p)`, accumulated in log space.
pub fn normconst_estimate<S: Clone + 'static>(run: &ParticleRun<S>, n: usize) -> Result<f64> {
    run.log_normconst_estimate(n).map(f64::exp)
}

/// `γ_n^N(f) = η_n^N(f) Z_n^N`.
pub fn unnormalized_integrate<S: Clone + 'static>(
    run: &ParticleRun<S>,
    n: usize,
    f: &TestFunction<S>,
) -> Result<f64> {
    let eta = empirical_integrate(run.cloud(n)?, f)?;
    Ok(eta * normconst_estimate(run, n)?)
}
