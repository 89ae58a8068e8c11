//! The MCMC particle filter: at each step the first particle comes from the
//! initialisation policy and every further particle is one kernel move away from its
//! predecessor, all targeting `Φ_n(η_{n-1}^N)` with the previous cloud frozen.

use crate::error::{config, Result, SmcError};
use crate::fk::{
    checked_log_potential, empirical_integrate, Cloud, Flow, ParticleRun, PathParticle, SmcRng,
    StorageMode, TestFunction,
};
use crate::kernels::{init_chain, KernelSpec, PreparedKernel, StepTarget};
use crate::models::{FlowKind, SsmFlow, StateSpaceModel};
use crate::rng::step_rng;

#[derive(Clone, Debug)]
pub struct RunConfig<S> {
    /// Number of particles `N` kept per step (burn-in draws excluded).
    pub particles: usize,
    pub horizon: usize,
    pub kernel: KernelSpec<S>,
    pub seed: u64,
    pub storage: StorageMode,
    /// Keep every cloud instead of only the last two.
    pub retain_all: bool,
}

impl<S> RunConfig<S> {
    pub fn new(particles: usize, horizon: usize, kernel: KernelSpec<S>, seed: u64) -> Self {
        Self { particles, horizon, kernel, seed, storage: StorageMode::Marginal, retain_all: false }
    }

    pub fn with_storage(mut self, storage: StorageMode) -> Self {
        self.storage = storage;
        self
    }

    pub fn retaining_all(mut self) -> Self {
        self.retain_all = true;
        self
    }
}

fn validate<F: Flow>(flow: &F, cfg: &RunConfig<F::State>) -> Result<()> {
    if cfg.particles < 1 {
        return config("at least one particle is required");
    }
    if cfg.horizon < 1 {
        return config("horizon must be at least 1");
    }
    if let Some(h) = flow.horizon() {
        if cfg.horizon > h {
            return config(format!("horizon {} exceeds the flow's {h} steps", cfg.horizon));
        }
    }
    cfg.kernel.validate()?;
    if cfg.kernel.kind.needs_densities() && !flow.has_densities() {
        return config(format!("{:?} kernel needs flow densities", cfg.kernel.kind));
    }
    if cfg.storage == StorageMode::Marginal && flow.memory().is_none() {
        return config("marginal storage needs a flow with a declared potential support width");
    }
    Ok(())
}

/// Runs the MCMC particle filter for `cfg.horizon` steps.
pub fn run_mcmc_pf<F: Flow>(flow: &F, cfg: &RunConfig<F::State>) -> Result<ParticleRun<F::State>>
where
    F::State: 'static,
{
    validate(flow, cfg)?;
    let window = match cfg.storage {
        StorageMode::Marginal => flow.memory(),
        StorageMode::Path => None,
    };
    let retain = if cfg.retain_all { usize::MAX } else { 2 };
    let mut run = ParticleRun::new(cfg.storage);
    for n in 1..=cfg.horizon {
        let mut rng = step_rng(cfg.seed, n);
        let cloud = {
            let previous = run.clouds.last();
            let target = StepTarget::new(flow, n, previous)?;
            let kernel = PreparedKernel::new(target, &cfg.kernel.kind)?;
            let mut current = init_chain(&kernel, &cfg.kernel.init, &mut rng)?;
            let mut particles = Vec::with_capacity(cfg.particles);
            let mut log_potentials = Vec::with_capacity(cfg.particles);
            for i in 0..cfg.particles {
                if i > 0 {
                    current = kernel.step(&current, &mut rng)?;
                }
                let path = match (previous, current.ancestor) {
                    (Some(cloud), Some(j)) => cloud.particles()[j].extend(current.x.clone(), window),
                    _ => PathParticle::initial(current.x.clone()),
                };
                let log_g = checked_log_potential(n, flow.log_potential(n, path.stored())?)?;
                particles.push(path);
                log_potentials.push(log_g);
            }
            Cloud::new(n, particles, log_potentials)
        };
        run.push_step(cloud, retain);
    }
    Ok(run)
}

/// Self-normalised filter weights `log w_i` on the cloud at time `n`.
fn log_filter_weights<M: StateSpaceModel>(flow: &SsmFlow<M>, cloud: &Cloud<M::State>) -> Option<Vec<f64>> {
    let n = cloud.time();
    let t = flow.model().len();
    match flow.kind() {
        FlowKind::FaApf => None,
        FlowKind::Bpf => Some(cloud.log_potentials().to_vec()),
        FlowKind::Apf(spec) => Some(
            cloud
                .particles()
                .iter()
                .zip(cloud.log_potentials())
                .map(|(p, lg)| if n < t { lg - (spec.twist)(n, p.last()) } else { *lg })
                .collect(),
        ),
    }
}

fn weighted_mean(log_w: &[f64], values: &[f64]) -> Result<f64> {
    let max = log_w.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Err(SmcError::Numerical("filter weights are all zero".into()));
    }
    let (mut num, mut den) = (0.0, 0.0);
    for (lw, v) in log_w.iter().zip(values) {
        let w = (lw - max).exp();
        num += w * v;
        den += w;
    }
    Ok(num / den)
}

/// Estimate of the filter `π_n(f)`: `η_n^N(G_n f)/η_n^N(G_n)` on the bootstrap flow,
/// `η_n^N(f)` on the fully adapted flow, and weights `G_n/g̃_n` on an auxiliary flow.
pub fn filter_estimate<M: StateSpaceModel>(
    run: &ParticleRun<M::State>,
    flow: &SsmFlow<M>,
    n: usize,
    f: &TestFunction<M::State>,
) -> Result<f64> {
    let cloud = run.cloud(n)?;
    match log_filter_weights(flow, cloud) {
        None => empirical_integrate(cloud, f),
        Some(log_w) => {
            let values = cloud.particles().iter().map(|p| f.eval(p)).collect::<Result<Vec<_>>>()?;
            weighted_mean(&log_w, &values)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorEstimate {
    pub value: f64,
    /// `false` when the transition integral was replaced by one fresh draw per particle.
    pub exact_integration: bool,
}

/// Estimate of the predictor `π̃_n(f)`.
///
/// On the bootstrap flow this is `η_n^N(f)`. Otherwise it is `π_{n-1}^N ⊗ L_n`, with the
/// `L_n` integral computed exactly when the model supports it and by one fresh draw per
/// particle (from `rng`) when it does not.
pub fn predictor_estimate<M: StateSpaceModel>(
    run: &ParticleRun<M::State>,
    flow: &SsmFlow<M>,
    n: usize,
    f: &TestFunction<M::State>,
    rng: &mut SmcRng,
) -> Result<PredictorEstimate> {
    if let FlowKind::Bpf = flow.kind() {
        return Ok(PredictorEstimate { value: empirical_integrate(run.cloud(n)?, f)?, exact_integration: true });
    }
    let model = flow.model();
    if n == 1 {
        let eval = |x: &M::State| f.eval(&PathParticle::initial(x.clone())).unwrap_or(f64::NAN);
        if let Some(v) = model.integrate_transition(1, None, &eval) {
            return finite_predictor(v, true);
        }
        let draws = (0..run.cloud(1)?.len()).map(|_| eval(&model.sample_initial(rng))).collect::<Vec<_>>();
        return finite_predictor(crate::fk::mean(&draws), false);
    }
    let cloud = run.cloud(n - 1)?;
    let log_w = log_filter_weights(flow, cloud).unwrap_or_else(|| vec![0.0; cloud.len()]);
    let mut exact = true;
    let mut values = Vec::with_capacity(cloud.len());
    for p in cloud.particles() {
        let eval = |x: &M::State| f.eval(&p.extend(x.clone(), None)).unwrap_or(f64::NAN);
        let v = match model.integrate_transition(n, Some(p.last()), &eval) {
            Some(v) => v,
            None => {
                exact = false;
                eval(&model.sample_transition(n, p.last(), rng))
            }
        };
        values.push(v);
    }
    finite_predictor(weighted_mean(&log_w, &values)?, exact)
}

fn finite_predictor(value: f64, exact_integration: bool) -> Result<PredictorEstimate> {
    if value.is_finite() {
        Ok(PredictorEstimate { value, exact_integration })
    } else {
        Err(SmcError::Numerical("predictor integrand is not finite (path test function on a truncated path?)".into()))
    }
}

/// `log 𝓛_T^N = log Z_{T+1}^N` after a full-horizon run; for the fully adapted flow this
/// equals `log Z_T^N` because `G_T ≡ 1`.
pub fn log_likelihood_estimate<S: Clone + 'static>(run: &ParticleRun<S>) -> Result<f64> {
    run.log_normconst_estimate(run.steps() + 1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fk::normconst_estimate;
    use crate::kernels::{InitPolicy, KernelKind};
    use crate::models::{build_flow, BinaryToyModel, TransitionProposal};
    use std::sync::Arc;

    fn binary(alpha: f64) -> (Arc<crate::models::FiniteHmm>, SsmFlow<crate::models::FiniteHmm>) {
        let hmm = Arc::new(BinaryToyModel::new(alpha, 0.0).unwrap().hmm());
        let flow = build_flow(Arc::clone(&hmm), FlowKind::Bpf).unwrap();
        (hmm, flow)
    }

    #[test]
    fn single_particle_is_a_single_path() {
        let (_, flow) = binary(0.6);
        let run = run_mcmc_pf(&flow, &RunConfig::new(1, 2, KernelSpec::lazy(0.5), 3).retaining_all()).unwrap();
        let g1 = run.cloud(1).unwrap().log_potentials()[0];
        let g2 = run.cloud(2).unwrap().log_potentials()[0];
        assert_eq!(run.log_normconst_estimate(3).unwrap(), g1 + g2);
        let z2 = normconst_estimate(&run, 2).unwrap();
        assert!(z2 > 0.0 && z2 <= 1.0);
    }

    #[test]
    fn invalid_configs_fail_before_sampling() {
        let (hmm, flow) = binary(0.6);
        assert!(run_mcmc_pf(&flow, &RunConfig::new(0, 2, KernelSpec::lazy(0.1), 1)).is_err());
        assert!(run_mcmc_pf(&flow, &RunConfig::new(5, 3, KernelSpec::lazy(0.1), 1)).is_err());
        assert!(run_mcmc_pf(&flow, &RunConfig::new(5, 0, KernelSpec::lazy(0.1), 1)).is_err());
        let bad_burnin = KernelSpec::lazy(0.1).with_init(InitPolicy::Burnin {
            proposal: Arc::new(TransitionProposal(hmm)),
            iterations: 0,
        });
        assert!(matches!(run_mcmc_pf(&flow, &RunConfig::new(5, 2, bad_burnin, 1)), Err(SmcError::Config(_))));
    }

    #[test]
    fn deterministic_under_seed() {
        let (hmm, flow) = binary(0.3);
        let kernel = KernelSpec {
            kind: KernelKind::IndependentMh {
                weighting: crate::kernels::AncestorWeighting::Uniform,
                proposal: Arc::new(TransitionProposal(hmm)),
            },
            init: InitPolicy::Stationary,
        };
        let cfg = RunConfig::new(50, 2, kernel, 99).with_storage(StorageMode::Path);
        let a = run_mcmc_pf(&flow, &cfg).unwrap();
        let b = run_mcmc_pf(&flow, &cfg).unwrap();
        assert_eq!(a.cloud(2).unwrap().particles(), b.cloud(2).unwrap().particles());
        assert_eq!(log_likelihood_estimate(&a).unwrap().to_bits(), log_likelihood_estimate(&b).unwrap().to_bits());
    }

    #[test]
    fn filter_of_constant_is_one() {
        let (hmm, flow) = binary(0.3);
        let run = run_mcmc_pf(&flow, &RunConfig::new(40, 2, KernelSpec::perfect_mixing(), 5)).unwrap();
        let one = TestFunction::constant(1.0);
        assert!((filter_estimate(&run, &flow, 2, &one).unwrap() - 1.0).abs() < 1e-15);
        let fa = build_flow(hmm, FlowKind::FaApf).unwrap();
        let run_fa = run_mcmc_pf(&fa, &RunConfig::new(40, 2, KernelSpec::perfect_mixing(), 5)).unwrap();
        assert_eq!(filter_estimate(&run_fa, &fa, 2, &one).unwrap(), 1.0);
        let x = TestFunction::final_coordinate(|x: &usize| *x as f64);
        assert_eq!(
            filter_estimate(&run_fa, &fa, 2, &x).unwrap().to_bits(),
            empirical_integrate(run_fa.cloud(2).unwrap(), &x).unwrap().to_bits()
        );
        let mut rng = crate::rng::aux_rng(1, "predictor");
        let p = predictor_estimate(&run_fa, &fa, 2, &one, &mut rng).unwrap();
        assert!((p.value - 1.0).abs() < 1e-15 && p.exact_integration);
    }

    #[test]
    fn exact_predictor_from_exact_filter_cloud() {
        // A cloud whose empirical law is exactly π_1 = (0.99, 0.01).
        let alpha = 0.35;
        let (hmm, _) = binary(alpha);
        let fa = build_flow(hmm, FlowKind::FaApf).unwrap();
        let mut run = ParticleRun::new(StorageMode::Marginal);
        let particles: Vec<_> = (0..100).map(|i| PathParticle::initial(usize::from(i == 99))).collect();
        let logs = particles.iter().map(|p| fa.log_potential(1, p.stored()).unwrap()).collect();
        run.push_step(Cloud::new(1, particles, logs), 2);
        let ind0 = TestFunction::final_coordinate(|x: &usize| f64::from(u8::from(*x == 0)));
        let mut rng = crate::rng::aux_rng(1, "predictor");
        let p = predictor_estimate(&run, &fa, 2, &ind0, &mut rng).unwrap();
        assert!((p.value - (0.99 * alpha + 0.01 * (1.0 - alpha))).abs() < 1e-14);
    }
}
