use std::sync::Arc;

use rand::{Rng, SeedableRng};
use seqmc::analysis::{asymptotic_variance, enumerate_flow, Estimator, ExactSsm, FiniteFlow, KernelMatrix};
use seqmc::kernels::{AncestorWeighting, GridRandomWalk, KernelKind};
use seqmc::models::{
    build_flow, discretised_linear_gaussian, kalman_log_marginal_likelihood, ApfSpec, BinaryToyModel, FiniteHmm,
    FlowKind, SsmFlow, StateSpaceModel, TransitionProposal, TwistedProposal,
};
use seqmc::{run_mcmc_pf, KernelSpec, RunConfig, SmcRng};

fn random_hmm(k: usize, t: usize, seed: u64) -> FiniteHmm {
    let mut rng = SmcRng::seed_from_u64(seed);
    let row = |rng: &mut SmcRng| {
        let w: Vec<f64> = (0..k).map(|_| rng.random_range(0.05..1.0)).collect();
        let s: f64 = w.iter().sum();
        w.into_iter().map(|v| v / s).collect::<Vec<f64>>()
    };
    let initial = row(&mut rng);
    let transition = (0..k).map(|_| row(&mut rng)).collect();
    let log_obs = (0..t).map(|_| (0..k).map(|_| rng.random_range(0.01f64..1.0).ln()).collect()).collect();
    FiniteHmm::new(initial, transition, log_obs).unwrap()
}

fn lg_grid_hmm(points: usize) -> FiniteHmm {
    discretised_linear_gaussian(&[0.3, -0.8, 1.1], points, 4.0).unwrap().0
}

fn models() -> Vec<FiniteHmm> {
    let mut out: Vec<FiniteHmm> =
        [0.0, 0.2, 0.5, 0.9].iter().map(|a| BinaryToyModel::new(*a, 0.0).unwrap().hmm()).collect();
    out.push(random_hmm(3, 3, 5));
    out.push(lg_grid_hmm(9));
    out
}

fn final_state(ff: &FiniteFlow<usize>, n: usize) -> Vec<f64> {
    (0..ff.path_count(n)).map(|i| *ff.decode(n, i).last().unwrap() as f64).collect()
}

fn enumerate(hmm: &Arc<FiniteHmm>, kind: FlowKind<usize>, n: usize) -> (SsmFlow<FiniteHmm>, FiniteFlow<usize>) {
    let flow = build_flow(Arc::clone(hmm), kind).unwrap();
    let ff = enumerate_flow(&flow, n).unwrap();
    (flow, ff)
}

#[test]
fn bpf_filter_matches_fully_adapted_flow() {
    for hmm in models() {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(3);
        let (_, bpf) = enumerate(&hmm, FlowKind::Bpf, t);
        let (_, fa) = enumerate(&hmm, FlowKind::FaApf, t);
        for n in 1..=t {
            let f = final_state(&bpf, n);
            let g = bpf.potentials(n);
            let gf: Vec<f64> = g.iter().zip(&f).map(|(a, b)| a * b).collect();
            let via_bpf = bpf.integrate(n, &gf) / bpf.integrate(n, &g);
            assert!((via_bpf - fa.integrate(n, &f)).abs() < 1e-10, "n = {n}");
        }
    }
}

#[test]
fn normalising_constants_are_likelihoods() {
    for hmm in models() {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(3);
        let (_, bpf) = enumerate(&hmm, FlowKind::Bpf, t);
        let (_, fa) = enumerate(&hmm, FlowKind::FaApf, t);
        let ssm = ExactSsm::new(&hmm, t).unwrap();
        for n in 1..=t {
            let l = ssm.likelihood(n);
            assert!((bpf.z(n + 1) / l - 1.0).abs() < 1e-10);
            if n > 1 {
                assert!((fa.z(n) / l - 1.0).abs() < 1e-10);
            }
        }
        assert!((fa.z(t + 1) / ssm.likelihood(t) - 1.0).abs() < 1e-10);
    }
}

fn uniform_twist_apf(hmm: &Arc<FiniteHmm>) -> FlowKind<usize> {
    FlowKind::Apf(ApfSpec {
        twist: Arc::new(|_: usize, _: &usize| 0.0),
        proposal: Arc::new(TransitionProposal(Arc::clone(hmm))),
    })
}

fn adapted_twist_apf(hmm: &Arc<FiniteHmm>) -> FlowKind<usize> {
    let m = Arc::clone(hmm);
    FlowKind::Apf(ApfSpec {
        twist: Arc::new(move |n: usize, x: &usize| m.fully_adapted().unwrap().log_predictive(n + 1, Some(x))),
        proposal: Arc::new(TwistedProposal(Arc::clone(hmm))),
    })
}

#[test]
fn apf_reduces_to_bpf_and_fully_adapted_flows() {
    for hmm in models() {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(3);
        for (apf_kind, reference) in [(uniform_twist_apf(&hmm), FlowKind::Bpf), (adapted_twist_apf(&hmm), FlowKind::FaApf)] {
            let (_, apf) = enumerate(&hmm, apf_kind, t);
            let (_, exact) = enumerate(&hmm, reference, t);
            for n in 1..=t {
                for (a, b) in apf.eta(n).iter().zip(exact.eta(n)) {
                    assert!((a - b).abs() < 1e-12);
                }
                assert!((apf.log_z(n + 1) - exact.log_z(n + 1)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn apf_reductions_hold_for_particle_runs() {
    let hmm = Arc::new(random_hmm(3, 4, 9));
    let kernel: KernelSpec<usize> = KernelSpec::lazy(0.4);
    for (apf_kind, reference) in [(uniform_twist_apf(&hmm), FlowKind::Bpf), (adapted_twist_apf(&hmm), FlowKind::FaApf)] {
        let apf = build_flow(Arc::clone(&hmm), apf_kind).unwrap();
        let exact = build_flow(Arc::clone(&hmm), reference).unwrap();
        let cfg = RunConfig::new(200, 4, kernel.clone(), 77);
        let a = run_mcmc_pf(&apf, &cfg).unwrap();
        let b = run_mcmc_pf(&exact, &cfg).unwrap();
        for n in 1..=4 {
            let (ca, cb) = (a.cloud(n).ok(), b.cloud(n).ok());
            if let (Some(ca), Some(cb)) = (ca, cb) {
                let xa: Vec<usize> = ca.particles().iter().map(|p| *p.last()).collect();
                let xb: Vec<usize> = cb.particles().iter().map(|p| *p.last()).collect();
                assert_eq!(xa, xb);
            }
        }
        let (za, zb) = (a.log_normconst_estimate(5).unwrap(), b.log_normconst_estimate(5).unwrap());
        assert!((za - zb).abs() < 1e-10, "{za} vs {zb}");
    }
}

/// Forward recursion for the d = 1 model on a uniform grid, trapezoid weights.
fn quadrature_log_likelihood(ys: &[f64], points: usize, half_width: f64) -> f64 {
    let normal = |x: f64, m: f64| (-(x - m) * (x - m) / 2.0).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let h = 2.0 * half_width / (points - 1) as f64;
    let grid: Vec<f64> = (0..points).map(|i| -half_width + h * i as f64).collect();
    let w: Vec<f64> = (0..points).map(|i| if i == 0 || i == points - 1 { h / 2.0 } else { h }).collect();
    let mut density: Vec<f64> = grid.iter().map(|x| normal(*x, 0.0)).collect();
    let mut log_l = 0.0;
    for (n, y) in ys.iter().enumerate() {
        if n > 0 {
            density = grid
                .iter()
                .map(|x| grid.iter().zip(&density).zip(&w).map(|((u, p), wi)| wi * p * normal(*x, 0.5 * u)).sum())
                .collect();
        }
        let joint: Vec<f64> = grid.iter().zip(&density).map(|(x, p)| p * normal(*y, *x)).collect();
        let step: f64 = joint.iter().zip(&w).map(|(j, wi)| j * wi).sum();
        log_l += step.ln();
        density = joint.into_iter().map(|j| j / step).collect();
    }
    log_l
}

#[test]
fn kalman_matches_quadrature() {
    let ys = [0.7, -1.3, 0.2];
    for n in 1..=3 {
        let obs: Vec<Vec<f64>> = ys[..n].iter().map(|y| vec![*y]).collect();
        let kalman = kalman_log_marginal_likelihood(&obs).unwrap();
        let quad = quadrature_log_likelihood(&ys[..n], 200, 10.0);
        assert!((kalman - quad).abs() < 1e-6, "n = {n}: {kalman} vs {quad}");
    }
}

#[test]
fn mh_kernels_are_stationary_on_discretised_model() {
    let hmm = Arc::new(lg_grid_hmm(41));
    let walk = Arc::new(GridRandomWalk { size: 41 });
    for kind in [FlowKind::Bpf, FlowKind::FaApf] {
        let (flow, ff) = enumerate(&hmm, kind, 2);
        for weighting in [AncestorWeighting::Potential, AncestorWeighting::Uniform] {
            let kinds = [
                KernelKind::RandomWalkMh { weighting, walk: walk.clone() },
                KernelKind::IndependentMh { weighting, proposal: Arc::new(TransitionProposal(Arc::clone(&hmm))) },
            ];
            for k in &kinds {
                for n in 1..=2 {
                    let m = KernelMatrix::from_kind(&flow, &ff, n, None, k).unwrap();
                    assert!(m.stationarity_residual() <= 1e-10);
                }
            }
        }
    }
}

#[test]
fn variance_matches_s_operator_route() {
    for hmm in models() {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(3);
        let ssm = ExactSsm::new(&hmm, t).unwrap();
        let (bflow, bpf) = enumerate(&hmm, FlowKind::Bpf, t);
        let (fflow, fa) = enumerate(&hmm, FlowKind::FaApf, t);
        for n in 1..=t {
            let f = final_state(&bpf, n);
            let (bpf_terms, fa_terms) = ssm.pf_filter_variance_terms(n, &f);
            let pm = vec![KernelKind::PerfectMixing; n];
            let b = asymptotic_variance(&bflow, &bpf, &pm, n, &f, Estimator::BpfFilter).unwrap();
            let a = asymptotic_variance(&fflow, &fa, &pm, n, &f, Estimator::FaApfFilter).unwrap();
            for (term, s) in b.terms.iter().zip(&bpf_terms) {
                assert!((term.contribution - s).abs() < 1e-10 * s.max(1.0));
            }
            for (term, s) in a.terms.iter().zip(&fa_terms) {
                assert!((term.contribution - s).abs() < 1e-10 * s.max(1.0));
            }
        }
    }
}

#[test]
fn lazy_kernels_strictly_penalise() {
    for hmm in models() {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(2);
        for (kind, est) in [
            (FlowKind::Bpf, Estimator::Predictor),
            (FlowKind::Bpf, Estimator::BpfFilter),
            (FlowKind::FaApf, Estimator::FaApfFilter),
            (FlowKind::Bpf, Estimator::Unnormalized),
        ] {
            let (flow, ff) = enumerate(&hmm, kind, t);
            let f = final_state(&ff, t);
            let pf = asymptotic_variance(&flow, &ff, &vec![KernelKind::PerfectMixing; t], t, &f, est).unwrap().total;
            if pf == 0.0 {
                continue;
            }
            for eps in [0.25, 0.5, 0.9] {
                let k = vec![KernelKind::LazyMixture { epsilon: eps }; t];
                let mc = asymptotic_variance(&flow, &ff, &k, t, &f, est).unwrap().total;
                assert!(mc > pf);
                assert!((mc / pf - (1.0 + eps) / (1.0 - eps)).abs() < 1e-10);
            }
        }
    }
}

#[test]
fn mismatched_kernel_count_is_config_error() {
    let hmm = Arc::new(BinaryToyModel::new(0.5, 0.0).unwrap().hmm());
    let (flow, ff) = enumerate(&hmm, FlowKind::Bpf, 2);
    let f = final_state(&ff, 2);
    let r = asymptotic_variance(&flow, &ff, &[KernelKind::PerfectMixing], 2, &f, Estimator::Predictor);
    assert!(matches!(r, Err(seqmc::SmcError::Config(_))));
}
