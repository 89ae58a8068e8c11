//! MCMC kernels `K_n^μ` leaving the step target `Φ_n(μ)` invariant, and the chain
//! initialisation policies `κ_n^μ`.
//!
//! A draw from `Φ_n(μ)` selects an ancestor `j ∝ G_{n-1}(path^j)` from the previous
//! cloud and extends it with `x_n ~ M_n(path^j, ·)`. Chains therefore move on pairs
//! (ancestor index, new coordinate); the full path is assembled by the engine once the
//! chain for the step is complete.

use std::fmt::Debug;
use std::sync::Arc;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{config, Result, SmcError};
use crate::fk::{Cloud, Flow, SmcRng};

/// Choice of the ancestor proposal weights `F_{n-1}`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AncestorWeighting {
    /// `F = G`: ancestors proposed exactly as under `Φ_n(μ)`.
    #[default]
    Potential,
    /// `F ≡ 1`: ancestors proposed uniformly from the cloud.
    Uniform,
}

/// A proposal kernel `R_n(path_{n-1}, ·)` (or `R_1` when `n = 1`, with an empty parent).
pub trait Proposal<S>: Send + Sync {
    fn sample(&self, n: usize, parent: &[S], rng: &mut SmcRng) -> Result<S>;
    fn log_density(&self, n: usize, parent: &[S], x: &S) -> Result<f64>;
}

/// A random-walk move on the newest coordinate.
pub trait RandomWalk<S>: Send + Sync {
    fn propose(&self, current: &S, rng: &mut SmcRng) -> S;

    /// The MH ratio used by [`ancestor_rw_mh_step`] omits the proposal density, which
    /// is only valid for symmetric walks.
    fn is_symmetric(&self) -> bool;

    /// Transition probability on finite spaces (exact analysis only).
    fn log_density(&self, _from: &S, _to: &S) -> Option<f64> {
        None
    }
}

/// Gaussian random walk with independent `N(0, scale²)` increments per coordinate.
#[derive(Clone, Copy, Debug)]
pub struct GaussianRandomWalk {
    pub scale: f64,
}

impl RandomWalk<Vec<f64>> for GaussianRandomWalk {
    fn propose(&self, current: &Vec<f64>, rng: &mut SmcRng) -> Vec<f64> {
        current
            .iter()
            .map(|x| {
                let z: f64 = rng.sample(StandardNormal);
                x + self.scale * z
            })
            .collect()
    }

    fn is_symmetric(&self) -> bool {
        true
    }
}

/// Nearest-neighbour walk on `{0, …, size-1}`: moves to `i ± 1` with probability 1/2
/// each; a move off the grid leaves the state unchanged.
#[derive(Clone, Copy, Debug)]
pub struct GridRandomWalk {
    pub size: usize,
}

impl RandomWalk<usize> for GridRandomWalk {
    fn propose(&self, current: &usize, rng: &mut SmcRng) -> usize {
        if rng.random::<bool>() {
            if current + 1 < self.size {
                current + 1
            } else {
                *current
            }
        } else {
            current.checked_sub(1).unwrap_or(*current)
        }
    }

    fn is_symmetric(&self) -> bool {
        true
    }

    fn log_density(&self, from: &usize, to: &usize) -> Option<f64> {
        let p = if from == to {
            let edges = usize::from(*from == 0) + usize::from(*from + 1 == self.size);
            0.5 * edges as f64
        } else if from.abs_diff(*to) == 1 {
            0.5
        } else {
            0.0
        };
        Some(p.ln())
    }
}

#[derive(Clone)]
pub enum KernelKind<S> {
    /// `K(x, ·) = Φ_n(μ)`: the standard particle filter.
    PerfectMixing,
    /// `K(x, ·) = ε δ_x + (1-ε) Φ_n(μ)`.
    LazyMixture { epsilon: f64 },
    /// Independent MH with ancestor weights `F` and extension proposal `R_n`.
    IndependentMh {
        weighting: AncestorWeighting,
        proposal: Arc<dyn Proposal<S>>,
    },
    /// MH proposing a fresh ancestor `∝ F` and a random-walk move of the newest coordinate.
    RandomWalkMh {
        weighting: AncestorWeighting,
        walk: Arc<dyn RandomWalk<S>>,
    },
}

impl<S> Debug for KernelKind<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            KernelKind::PerfectMixing => write!(f, "PerfectMixing"),
            KernelKind::LazyMixture { epsilon } => write!(f, "LazyMixture({epsilon})"),
            KernelKind::IndependentMh { weighting, .. } => write!(f, "IndependentMh({weighting:?})"),
            KernelKind::RandomWalkMh { weighting, .. } => write!(f, "RandomWalkMh({weighting:?})"),
        }
    }
}

impl<S> KernelKind<S> {
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelKind::LazyMixture { epsilon } if !(0.0..1.0).contains(epsilon) => {
                config(format!("lazy mixture weight {epsilon} outside [0, 1)"))
            }
            KernelKind::RandomWalkMh { walk, .. } if !walk.is_symmetric() => {
                config("random-walk MH requires a symmetric proposal")
            }
            _ => Ok(()),
        }
    }

    pub fn needs_densities(&self) -> bool {
        matches!(self, KernelKind::IndependentMh { .. } | KernelKind::RandomWalkMh { .. })
    }
}

#[derive(Clone)]
pub enum InitPolicy<S> {
    /// One exact draw from `Φ_n(μ)`.
    Stationary,
    /// Draw an ancestor uniformly from `μ`, extend it with `M'_n`, then apply the
    /// kernel `iterations` times, discarding the intermediate states.
    Burnin {
        proposal: Arc<dyn Proposal<S>>,
        iterations: usize,
    },
}

impl<S> Debug for InitPolicy<S> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            InitPolicy::Stationary => write!(f, "Stationary"),
            InitPolicy::Burnin { iterations, .. } => write!(f, "Burnin({iterations})"),
        }
    }
}

#[derive(Clone, Debug)]
pub struct KernelSpec<S> {
    pub kind: KernelKind<S>,
    pub init: InitPolicy<S>,
}

impl<S> KernelSpec<S> {
    pub fn perfect_mixing() -> Self {
        Self { kind: KernelKind::PerfectMixing, init: InitPolicy::Stationary }
    }

    pub fn lazy(epsilon: f64) -> Self {
        Self { kind: KernelKind::LazyMixture { epsilon }, init: InitPolicy::Stationary }
    }

    pub fn with_init(mut self, init: InitPolicy<S>) -> Self {
        self.init = init;
        self
    }

    pub fn validate(&self) -> Result<()> {
        self.kind.validate()?;
        if let InitPolicy::Burnin { iterations, .. } = &self.init {
            if *iterations < 1 {
                return config("burn-in needs at least one kernel iteration");
            }
        }
        Ok(())
    }

    /// Number of discarded kernel iterations per step.
    pub fn burnin_iterations(&self) -> usize {
        match &self.init {
            InitPolicy::Stationary => 0,
            InitPolicy::Burnin { iterations, .. } => *iterations,
        }
    }
}

/// State of the step-`n` chain: ancestor index into the previous cloud (absent at
/// `n = 1`) and the new coordinate.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainState<S> {
    pub ancestor: Option<usize>,
    pub x: S,
    /// Cached MH log-weight of this state under the kernel that produced it.
    log_weight: Option<f64>,
}

impl<S> ChainState<S> {
    pub fn new(ancestor: Option<usize>, x: S) -> Self {
        Self { ancestor, x, log_weight: None }
    }
}

/// The step target `Φ_n(μ)` for `μ` the (equally weighted) previous cloud.
pub struct StepTarget<'a, F: Flow> {
    flow: &'a F,
    n: usize,
    previous: Option<&'a Cloud<F::State>>,
    selection: Option<WeightedIndex<f64>>,
}

impl<'a, F: Flow> StepTarget<'a, F> {
    pub fn new(flow: &'a F, n: usize, previous: Option<&'a Cloud<F::State>>) -> Result<Self> {
        if n == 0 {
            return config("time indices start at 1");
        }
        let selection = match (n, previous) {
            (1, _) => None,
            (_, None) => return config(format!("step {n} needs the previous cloud")),
            (_, Some(cloud)) => {
                if cloud.is_empty() {
                    return config("previous cloud is empty");
                }
                Some(ancestor_table(cloud.log_potentials())?)
            }
        };
        Ok(Self { flow, n, previous: if n == 1 { None } else { previous }, selection })
    }

    pub fn time(&self) -> usize {
        self.n
    }

    pub fn flow(&self) -> &F {
        self.flow
    }

    pub fn previous(&self) -> Option<&'a Cloud<F::State>> {
        self.previous
    }

    fn parent(&self, ancestor: Option<usize>) -> &[F::State] {
        match (self.previous, ancestor) {
            (Some(cloud), Some(j)) => cloud.particles()[j].stored(),
            _ => &[],
        }
    }

    fn log_g(&self, ancestor: usize) -> f64 {
        self.previous.expect("n > 1").log_potentials()[ancestor]
    }

    /// Draws `(j, x_n)` with `j ∝ G_{n-1}(path^j)` and `x_n ~ M_n(path^j, ·)`.
    pub fn sample(&self, rng: &mut SmcRng) -> Result<ChainState<F::State>> {
        match &self.selection {
            None => Ok(ChainState::new(None, self.flow.sample_initial(rng)?)),
            Some(table) => {
                let j = table.sample(rng);
                let x = self.flow.sample_transition(self.n, self.parent(Some(j)), rng)?;
                Ok(ChainState::new(Some(j), x))
            }
        }
    }
}

/// Inverse-CDF table over `exp(log_w)`; the weights are shifted by their maximum first.
pub fn ancestor_table(log_weights: &[f64]) -> Result<WeightedIndex<f64>> {
    let max = log_weights.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SmcError::Model("all ancestor weights are zero".into()));
    }
    WeightedIndex::new(log_weights.iter().map(|w| (w - max).exp()))
        .map_err(|e| SmcError::Model(format!("invalid ancestor weights: {e}")))
}

/// `Φ_n(μ)` sampler: alias for [`StepTarget::sample`].
pub fn sample_step_target<F: Flow>(
    target: &StepTarget<'_, F>,
    rng: &mut SmcRng,
) -> Result<ChainState<F::State>> {
    target.sample(rng)
}

/// MH acceptance probability from the log-weights of the current and proposed states.
///
/// A current state of weight zero is left with probability one; this only occurs for
/// unreachable states in exact kernel matrices.
pub fn mh_acceptance(log_w_current: f64, log_w_proposed: f64) -> f64 {
    if log_w_current == f64::NEG_INFINITY {
        return 1.0;
    }
    (log_w_proposed - log_w_current).exp().min(1.0)
}

/// Log importance weight `log (G/F)(path_{n-1}) + log (dM_n/dR_n)(x_n)` of a state.
///
/// `log_f` is `None` when `F = G` (the ratio is then exactly one). `log_r` is `None` for
/// symmetric random-walk proposals, whose density cancels from the MH ratio.
pub fn mh_log_weight(
    log_extension: f64,
    log_g_parent: Option<f64>,
    log_f: Option<f64>,
    log_r: Option<f64>,
) -> f64 {
    // log_extension already contains log G_{n-1}; strip it when F = G.
    let ancestor_part = match (log_g_parent, log_f) {
        (Some(log_g), None) => -log_g,
        (_, Some(log_f)) => -log_f,
        (None, None) => 0.0,
    };
    log_extension + ancestor_part - log_r.unwrap_or(0.0)
}

/// A kernel specialised to one step target, with its proposal tables built.
pub struct PreparedKernel<'a, F: Flow> {
    target: StepTarget<'a, F>,
    kind: KernelKind<F::State>,
    /// `F = 1`: ancestors are proposed uniformly rather than from the target table.
    uniform_ancestors: bool,
}

impl<'a, F: Flow> PreparedKernel<'a, F> {
    pub fn new(target: StepTarget<'a, F>, kind: &KernelKind<F::State>) -> Result<Self> {
        kind.validate()?;
        if kind.needs_densities() && !target.flow.has_densities() {
            return config(format!("{kind:?} needs flow densities, which this flow lacks"));
        }
        let uniform_ancestors = matches!(
            kind,
            KernelKind::IndependentMh { weighting: AncestorWeighting::Uniform, .. }
                | KernelKind::RandomWalkMh { weighting: AncestorWeighting::Uniform, .. }
        );
        Ok(Self { target, kind: kind.clone(), uniform_ancestors })
    }

    pub fn target(&self) -> &StepTarget<'a, F> {
        &self.target
    }

    /// One transition of the chain.
    pub fn step(
        &self,
        current: &ChainState<F::State>,
        rng: &mut SmcRng,
    ) -> Result<ChainState<F::State>> {
        match &self.kind {
            KernelKind::PerfectMixing => self.target.sample(rng),
            KernelKind::LazyMixture { epsilon } => lazy_mixture_step(&self.target, *epsilon, current, rng),
            KernelKind::IndependentMh { .. } => independent_mh_step(self, current, rng),
            KernelKind::RandomWalkMh { .. } => ancestor_rw_mh_step(self, current, rng),
        }
    }

    fn propose_ancestor(&self, rng: &mut SmcRng) -> Option<usize> {
        let cloud = self.target.previous?;
        Some(if self.uniform_ancestors {
            rng.random_range(0..cloud.len())
        } else {
            self.target.selection.as_ref().expect("n > 1").sample(rng)
        })
    }

    fn log_f(&self, ancestor: Option<usize>) -> Option<f64> {
        match ancestor {
            Some(_) if self.uniform_ancestors => Some(0.0),
            _ => None,
        }
    }

    /// MH log-weight of `(ancestor, x)` for this kernel.
    fn log_weight(&self, ancestor: Option<usize>, x: &F::State) -> Result<f64> {
        let flow = self.target.flow;
        let n = self.target.n;
        let parent = self.target.parent(ancestor);
        let ext = flow.log_extension_weight(n, parent, x)?;
        let log_r = match &self.kind {
            KernelKind::IndependentMh { proposal, .. } => Some(proposal.log_density(n, parent, x)?),
            _ => None,
        };
        Ok(mh_log_weight(ext, ancestor.map(|j| self.target.log_g(j)), self.log_f(ancestor), log_r))
    }

    fn current_weight(&self, current: &ChainState<F::State>) -> Result<f64> {
        let w = match current.log_weight {
            Some(w) => w,
            None => self.log_weight(current.ancestor, &current.x)?,
        };
        if w == f64::NEG_INFINITY || w.is_nan() {
            return Err(SmcError::Numerical(format!(
                "current chain state has zero or undefined target density ({w})"
            )));
        }
        Ok(w)
    }

    fn accept_or_keep(
        &self,
        current: &ChainState<F::State>,
        w_current: f64,
        ancestor: Option<usize>,
        x: F::State,
        rng: &mut SmcRng,
    ) -> Result<ChainState<F::State>> {
        let w_prop = self.log_weight(ancestor, &x)?;
        let alpha = mh_acceptance(w_current, w_prop);
        let u: f64 = rng.random();
        if u < alpha {
            Ok(ChainState { ancestor, x, log_weight: Some(w_prop) })
        } else {
            Ok(ChainState { log_weight: Some(w_current), ..current.clone() })
        }
    }
}

/// With probability `ε` stay put, otherwise draw afresh from `Φ_n(μ)`.
pub fn lazy_mixture_step<F: Flow>(
    target: &StepTarget<'_, F>,
    epsilon: f64,
    current: &ChainState<F::State>,
    rng: &mut SmcRng,
) -> Result<ChainState<F::State>> {
    let u: f64 = rng.random();
    if u < epsilon {
        Ok(current.clone())
    } else {
        target.sample(rng)
    }
}

/// Independent MH: ancestor `∝ F_{n-1}`, new coordinate `~ R_n`, acceptance
/// `1 ∧ [(G/F)(j̆) (dM/dR)(x̆)] / [(G/F)(j) (dM/dR)(x)]`.
pub fn independent_mh_step<F: Flow>(
    kernel: &PreparedKernel<'_, F>,
    current: &ChainState<F::State>,
    rng: &mut SmcRng,
) -> Result<ChainState<F::State>> {
    let KernelKind::IndependentMh { proposal, .. } = &kernel.kind else {
        return config("independent_mh_step called with a different kernel kind");
    };
    let w_current = kernel.current_weight(current)?;
    let ancestor = kernel.propose_ancestor(rng);
    let n = kernel.target.n;
    let x = proposal.sample(n, kernel.target.parent(ancestor), rng)?;
    kernel.accept_or_keep(current, w_current, ancestor, x, rng)
}

/// MH with ancestor proposal `∝ F_{n-1}` and symmetric random walk on `x_n`; acceptance
/// `1 ∧ [G(j̆) m_n(j̆, x̆) F(j)] / [G(j) m_n(j, x) F(j̆)]`.
pub fn ancestor_rw_mh_step<F: Flow>(
    kernel: &PreparedKernel<'_, F>,
    current: &ChainState<F::State>,
    rng: &mut SmcRng,
) -> Result<ChainState<F::State>> {
    let KernelKind::RandomWalkMh { walk, .. } = &kernel.kind else {
        return config("ancestor_rw_mh_step called with a different kernel kind");
    };
    let w_current = kernel.current_weight(current)?;
    let ancestor = kernel.propose_ancestor(rng);
    let x = walk.propose(&current.x, rng);
    kernel.accept_or_keep(current, w_current, ancestor, x, rng)
}

/// First state of the step-`n` chain.
pub fn init_chain<F: Flow>(
    kernel: &PreparedKernel<'_, F>,
    policy: &InitPolicy<F::State>,
    rng: &mut SmcRng,
) -> Result<ChainState<F::State>> {
    match policy {
        InitPolicy::Stationary => kernel.target.sample(rng),
        InitPolicy::Burnin { proposal, iterations } => {
            if *iterations < 1 {
                return config("burn-in needs at least one kernel iteration");
            }
            let target = &kernel.target;
            let ancestor = target.previous.map(|c| rng.random_range(0..c.len()));
            let x = proposal.sample(target.n, target.parent(ancestor), rng)?;
            let mut state = ChainState::new(ancestor, x);
            for _ in 0..*iterations {
                state = kernel.step(&state, rng)?;
            }
            Ok(state)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;

    #[test]
    fn acceptance_edge_cases() {
        assert_eq!(mh_acceptance(0.0, 0.0), 1.0);
        assert_eq!(mh_acceptance(-1.0, 0.0), 1.0);
        assert!((mh_acceptance(0.0, -1.0) - (-1.0f64).exp()).abs() < 1e-15);
        assert_eq!(mh_acceptance(f64::NEG_INFINITY, f64::NEG_INFINITY), 1.0);
        assert_eq!(mh_acceptance(0.0, f64::NEG_INFINITY), 0.0);
    }

    #[test]
    fn weight_with_f_equal_g_drops_the_potential() {
        // ext = log G + log m; with F = G and R = M the weight is zero.
        let (log_g, log_m) = (-0.3, -1.7);
        assert_eq!(mh_log_weight(log_g + log_m, Some(log_g), None, Some(log_m)), 0.0);
        assert_eq!(mh_log_weight(log_g + log_m, Some(log_g), Some(0.0), None), log_g + log_m);
    }

    #[test]
    fn grid_walk_is_a_symmetric_stochastic_matrix() {
        let walk = GridRandomWalk { size: 5 };
        for i in 0..5 {
            let row: f64 = (0..5).map(|j| walk.log_density(&i, &j).unwrap().exp()).sum();
            assert!((row - 1.0).abs() < 1e-15);
            for j in 0..5 {
                assert_eq!(walk.log_density(&i, &j), walk.log_density(&j, &i));
            }
        }
        let mut rng = SmcRng::seed_from_u64(1);
        for _ in 0..100 {
            let y = walk.propose(&0, &mut rng);
            assert!(y <= 1);
        }
    }

    #[test]
    fn lazy_epsilon_must_be_below_one() {
        assert!(KernelSpec::<usize>::lazy(1.0).validate().is_err());
        assert!(KernelSpec::<usize>::lazy(-0.1).validate().is_err());
        assert!(KernelSpec::<usize>::lazy(0.0).validate().is_ok());
    }

    struct Asymmetric;
    impl RandomWalk<usize> for Asymmetric {
        fn propose(&self, c: &usize, _: &mut SmcRng) -> usize {
            c + 1
        }
        fn is_symmetric(&self) -> bool {
            false
        }
    }

    #[test]
    fn asymmetric_walk_is_rejected() {
        let kind = KernelKind::RandomWalkMh {
            weighting: AncestorWeighting::Potential,
            walk: Arc::new(Asymmetric),
        };
        assert!(matches!(kind.validate(), Err(SmcError::Config(_))));
    }

    #[test]
    fn degenerate_ancestor_weights() {
        assert!(ancestor_table(&[f64::NEG_INFINITY; 3]).is_err());
        let table = ancestor_table(&[0.0, -800.0, -900.0]).unwrap();
        let mut rng = SmcRng::seed_from_u64(9);
        assert!((0..1000).all(|_| table.sample(&mut rng) == 0));
    }
}
