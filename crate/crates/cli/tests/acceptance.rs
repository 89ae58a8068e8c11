//! End-to-end acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero when any criterion fails.

use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use seqmc::analysis::{enumerate_flow, Estimator, ExactSsm, FiniteFlow, KernelMatrix};
use seqmc::experiments::{
    assess_figure2, clt_variance_check, figure1_curves, figure2_experiment, l2_rate_check, parse_grid,
    select_figure1_alphas, unbiasedness_check, CltConfig, FiniteSetup, FiniteTestFunction, Figure2Config, FlowChoice,
    KernelConfig, RateConfig, UnbiasednessConfig,
};
use seqmc::kernels::KernelKind;
use seqmc::models::{
    build_flow, discretised_linear_gaussian, kalman_log_marginal_likelihood, ApfSpec, BinaryToyModel, FiniteHmm,
    FlowKind, StateSpaceModel, TransitionProposal, TwistedProposal,
};
use seqmc::{run_mcmc_pf, KernelSpec, RunConfig};

type Check = Result<String, String>;

const EPS_GRID: [f64; 5] = [0.0, 0.25, 0.5, 0.75, 0.9];

fn ensure(ok: bool, msg: String) -> Check {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn binary_flow(alpha: f64, kind: FlowKind<usize>) -> (seqmc::models::SsmFlow<FiniteHmm>, FiniteFlow<usize>) {
    let hmm = Arc::new(BinaryToyModel::new(alpha, 0.0).unwrap().hmm());
    let flow = build_flow(hmm, kind).unwrap();
    let ff = enumerate_flow(&flow, 2).unwrap();
    (flow, ff)
}

fn lazy(epsilon: f64) -> KernelKind<usize> {
    KernelKind::LazyMixture { epsilon }
}

/// Step-2 lazy kernels on the 4-path space of the binary model.
fn lazy_matrices() -> Vec<(f64, FlowChoice, f64, KernelMatrix)> {
    let mut out = Vec::new();
    for alpha in [0.1, 0.3, 0.7] {
        for flow in [FlowChoice::Bpf, FlowChoice::Faapf] {
            let (f, ff) = binary_flow(alpha, flow.kind());
            for eps in EPS_GRID {
                out.push((alpha, flow, eps, KernelMatrix::from_kind(&f, &ff, 2, None, &lazy(eps)).unwrap()));
            }
        }
    }
    out
}

fn variance_decomposition() -> Check {
    let x2 = [0.0, 1.0, 0.0, 1.0];
    let mut worst = 0.0f64;
    for (_, _, _, k) in lazy_matrices() {
        worst = worst.max(k.variance_decomposition_check(&x2).map_err(|e| e.to_string())?);
    }
    ensure(worst <= 1e-10, format!("max |ηΓ(f,f) − var·iact| = {worst:e}"))
}

fn lazy_iact() -> Check {
    let functions: [[f64; 4]; 4] =
        [[0.0, 1.0, 0.0, 1.0], [1.0, 1.0, 0.0, 0.0], [0.3, -1.2, 2.5, 0.7], [5.0, 0.0, 0.0, 0.0]];
    let mut worst = 0.0f64;
    for (_, _, eps, k) in lazy_matrices() {
        let expected = (1.0 + eps) / (1.0 - eps);
        for f in &functions {
            worst = worst.max((k.iact(f).map_err(|e| e.to_string())? - expected).abs());
        }
    }
    ensure(worst <= 1e-10, format!("max |iact − (1+ε)/(1−ε)| = {worst:e} over 4 test functions"))
}

fn figure1() -> Check {
    let grid = parse_grid("0:0.9:0.1").map_err(|e| e.to_string())?;
    let alphas = select_figure1_alphas(&grid).map_err(|e| e.to_string())?;
    let worse = figure1_curves(alphas.faapf_worse, &grid).map_err(|e| e.to_string())?;
    let better = figure1_curves(alphas.faapf_better, &grid).map_err(|e| e.to_string())?;
    let mut worst = 0.0f64;
    for c in [&worse, &better] {
        for row in &c.rows {
            let r = (1.0 + row.epsilon) / (1.0 - row.epsilon);
            worst = worst.max((row.mcmc_bpf - r).abs()).max((row.mcmc_faapf / row.faapf - r).abs());
        }
        worst = worst.max((c.sigma2_faapf / c.sigma2_bpf - c.reference_faapf).abs());
    }
    let crosses = better.rows.iter().any(|r| r.mcmc_faapf < 1.0) && better.rows.iter().any(|r| r.mcmc_faapf > 1.0);
    let ok = worst <= 1e-10 && worse.sigma2_faapf > worse.sigma2_bpf && better.sigma2_faapf < better.sigma2_bpf && crosses;
    ensure(
        ok,
        format!(
            "ratio error {worst:e}; α = {} gives FA-APF/BPF = {:.4}; α = {} gives {:.4}, crossing at ε = {:.4}",
            alphas.faapf_worse,
            worse.sigma2_faapf / worse.sigma2_bpf,
            alphas.faapf_better,
            better.sigma2_faapf / better.sigma2_bpf,
            better.crossing().unwrap_or(f64::NAN)
        ),
    )
}

fn clt() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for kernel in [KernelConfig::PerfectMixing, KernelConfig::Lazy { epsilon: 0.5 }] {
        for (flow, estimator) in [(FlowChoice::Bpf, Estimator::BpfFilter), (FlowChoice::Faapf, Estimator::FaApfFilter)] {
            let cfg = CltConfig {
                setup: FiniteSetup::binary(0.3, flow, kernel).map_err(|e| e.to_string())?,
                n: 2,
                particles: 1000,
                replicates: 10_000,
                seed: 20,
                test_function: FiniteTestFunction::FinalState,
                estimator,
            };
            let (r, _) = clt_variance_check(&cfg).map_err(|e| e.to_string())?;
            ok &= r.within_band;
            lines.push(format!("{}/{} z={:+.2}", flow.label(), kernel.label(), r.z));
        }
    }
    ensure(ok, lines.join(", "))
}

fn rate() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for kernel in [KernelConfig::PerfectMixing, KernelConfig::Lazy { epsilon: 0.5 }] {
        let cfg = RateConfig {
            setup: FiniteSetup::binary(0.3, FlowChoice::Bpf, kernel).map_err(|e| e.to_string())?,
            n: 2,
            grid: (7..=13).map(|k| 1 << k).collect(),
            replicates: 500,
            seed: 21,
            test_function: FiniteTestFunction::FinalState,
            estimator: Estimator::Predictor,
        };
        let (r, _) = l2_rate_check(&cfg).map_err(|e| e.to_string())?;
        let slope = r.slope.unwrap_or(f64::NAN);
        ok &= (-0.6..=-0.4).contains(&slope);
        lines.push(format!("{} slope {slope:.3}", kernel.label()));
    }
    ensure(ok, lines.join(", "))
}

fn unbiasedness() -> Check {
    let cfg = UnbiasednessConfig {
        setup: FiniteSetup::binary(0.3, FlowChoice::Bpf, KernelConfig::Lazy { epsilon: 0.5 }).map_err(|e| e.to_string())?,
        n: 2,
        particles: 64,
        replicates: 10_000,
        seed: 22,
    };
    let (r, _) = unbiasedness_check(&cfg).map_err(|e| e.to_string())?;
    ensure(r.z.abs() <= 4.0, format!("mean {:.5} vs exact Z_2 = {:.5}, z = {:+.2}", r.mean, r.exact, r.z))
}

fn figure2() -> Check {
    let mut lines = Vec::new();
    let mut ok = true;
    for d in [1, 5] {
        let table = figure2_experiment(&Figure2Config::desk_scale(d, 0)).map_err(|e| e.to_string())?;
        let a = assess_figure2(&table);
        ok &= a.all_consistent();
        if d == 5 {
            ok &= a.mcmc_faapf_beats_bpf == Some(true);
        }
        let var = |l: &str| a.algorithms.iter().find(|x| x.algorithm == l).map_or(f64::NAN, |x| x.variance);
        lines.push(format!(
            "d={d}: consistent={} var BPF {:.4} MCMC-FA-APF {:.4}",
            a.all_consistent(),
            var("BPF"),
            var("MCMC-FA-APF")
        ));
    }
    ensure(ok, lines.join("; "))
}

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

fn apf_pairs(hmm: &Arc<FiniteHmm>) -> [(FlowKind<usize>, FlowKind<usize>); 2] {
    let m = Arc::clone(hmm);
    [
        (
            FlowKind::Apf(ApfSpec {
                twist: Arc::new(|_: usize, _: &usize| 0.0),
                proposal: Arc::new(TransitionProposal(Arc::clone(hmm))),
            }),
            FlowKind::Bpf,
        ),
        (
            FlowKind::Apf(ApfSpec {
                twist: Arc::new(move |n: usize, x: &usize| m.fully_adapted().unwrap().log_predictive(n + 1, Some(x))),
                proposal: Arc::new(TwistedProposal(Arc::clone(hmm))),
            }),
            FlowKind::FaApf,
        ),
    ]
}

fn oracles() -> Check {
    let mut models: Vec<FiniteHmm> =
        [0.0, 0.2, 0.5, 0.9].iter().map(|a| BinaryToyModel::new(*a, 0.0).unwrap().hmm()).collect();
    models.push(discretised_linear_gaussian(&[0.3, -0.8, 1.1], 9, 4.0).map_err(|e| e.to_string())?.0);
    let mut filter_err = 0.0f64;
    let mut apf_exact = 0.0f64;
    let mut apf_runs = true;
    for hmm in models {
        let hmm = Arc::new(hmm);
        let t = hmm.len().min(3);
        let bpf = enumerate_flow(&build_flow(Arc::clone(&hmm), FlowKind::Bpf).unwrap(), t).map_err(|e| e.to_string())?;
        let fa = enumerate_flow(&build_flow(Arc::clone(&hmm), FlowKind::FaApf).unwrap(), t).map_err(|e| e.to_string())?;
        let ssm = ExactSsm::new(&hmm, t).map_err(|e| e.to_string())?;
        for n in 1..=t {
            let f: Vec<f64> = (0..bpf.path_count(n)).map(|i| *bpf.decode(n, i).last().unwrap() as f64).collect();
            let g = bpf.potentials(n);
            let gf: Vec<f64> = g.iter().zip(&f).map(|(a, b)| a * b).collect();
            let via_bpf = bpf.integrate(n, &gf) / bpf.integrate(n, &g);
            let direct: f64 = ssm.filter(n).iter().zip(&f).map(|(a, b)| a * b).sum();
            filter_err = filter_err.max((via_bpf - fa.integrate(n, &f)).abs()).max((via_bpf - direct).abs());
        }
        for (apf_kind, reference) in apf_pairs(&hmm) {
            let apf_flow = build_flow(Arc::clone(&hmm), apf_kind).unwrap();
            let ref_flow = build_flow(Arc::clone(&hmm), reference).unwrap();
            let apf = enumerate_flow(&apf_flow, t).map_err(|e| e.to_string())?;
            let exact = enumerate_flow(&ref_flow, t).map_err(|e| e.to_string())?;
            for n in 1..=t {
                for (a, b) in apf.eta(n).iter().zip(exact.eta(n)) {
                    apf_exact = apf_exact.max((a - b).abs());
                }
            }
            let cfg = RunConfig::new(200, t, KernelSpec::lazy(0.4), 77);
            let (a, b) = (run_mcmc_pf(&apf_flow, &cfg).unwrap(), run_mcmc_pf(&ref_flow, &cfg).unwrap());
            let last = |r: &seqmc::ParticleRun<usize>| -> Vec<usize> {
                r.cloud(t).unwrap().particles().iter().map(|p| *p.last()).collect()
            };
            let (za, zb) = (a.log_normconst_estimate(t + 1).unwrap(), b.log_normconst_estimate(t + 1).unwrap());
            apf_runs &= last(&a) == last(&b) && (za == zb || (za - zb).abs() < 1e-10);
        }
    }
    let ys = [0.7, -1.3, 0.2];
    let mut kalman_err = 0.0f64;
    for n in 1..=3 {
        let obs: Vec<Vec<f64>> = ys[..n].iter().map(|y| vec![*y]).collect();
        let kalman = kalman_log_marginal_likelihood(&obs).map_err(|e| e.to_string())?;
        kalman_err = kalman_err.max((kalman - quadrature_log_likelihood(&ys[..n], 200, 10.0)).abs());
    }
    ensure(
        filter_err <= 1e-10 && kalman_err <= 1e-6 && apf_exact <= 1e-10 && apf_runs,
        format!(
            "filters {filter_err:e}, Kalman vs quadrature {kalman_err:e}, APF exact {apf_exact:e}, APF runs identical: {apf_runs}"
        ),
    )
}

fn run_cli(dir: &Path, args: &[&str], threads: &str) -> Result<Vec<u8>, String> {
    let out = dir.join("out.csv");
    let status = Command::new(env!("CARGO_BIN_EXE_seqmc"))
        .args(args)
        .arg("--out")
        .arg(&out)
        .env("SEQMC_THREADS", threads)
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("seqmc {args:?} failed: {}", String::from_utf8_lossy(&status.stderr)));
    }
    std::fs::read(&out).map_err(|e| e.to_string())
}

fn determinism() -> Check {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let runs: [&[&str]; 4] = [
        &["figure2", "--d", "2", "--N", "200", "--replicates", "8", "--seed", "5"],
        &["run-filter", "--kernel", "random-walk-mh", "--N", "300", "--replicates", "5", "--estimates", "normconst,filter,predictor"],
        &["clt-check", "--N", "100", "--replicates", "50", "--seed", "3"],
        &["run-filter", "--model", "linear-gaussian", "--d", "2", "--length", "4", "--kernel", "random-walk-mh", "--burnin", "5", "--flow", "faapf", "--N", "100", "--replicates", "3"],
    ];
    let mut bytes = 0;
    for args in runs {
        let a = run_cli(dir.path(), args, "1")?;
        let b = run_cli(dir.path(), args, "1")?;
        let c = run_cli(dir.path(), args, "3")?;
        if a != b || a != c {
            return Err(format!("seqmc {args:?} differs between reruns"));
        }
        bytes += a.len();
    }
    // the sidecar of the last run records every resolved setting, so it replays that run
    let sidecar = dir.path().join("out.config.json");
    let replay = Command::new(env!("CARGO_BIN_EXE_seqmc"))
        .args(["run-filter", "--config"])
        .arg(&sidecar)
        .arg("--out")
        .arg(dir.path().join("replay.csv"))
        .output()
        .map_err(|e| e.to_string())?;
    let original = run_cli(dir.path(), runs[3], "1")?;
    let replayed = std::fs::read(dir.path().join("replay.csv")).map_err(|e| e.to_string())?;
    ensure(
        replay.status.success() && original == replayed,
        format!("4 commands byte-identical across reruns and thread counts ({bytes} bytes); config replay identical"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Check); 9] = [
        ("variance decomposition", variance_decomposition),
        ("lazy-kernel IACT", lazy_iact),
        ("Figure 1 reproduction", figure1),
        ("CLT variance band", clt),
        ("L2 rate", rate),
        ("unbiasedness of Z_n^N", unbiasedness),
        ("Figure 2 desk scale", figure2),
        ("oracle equivalences", oracles),
        ("CLI determinism", determinism),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let elapsed: Duration = start.elapsed();
        match result {
            Ok(detail) => println!("criterion {}: PASS  {name} [{:.1}s] {detail}", i + 1, elapsed.as_secs_f64()),
            Err(detail) => {
                failed += 1;
                println!("criterion {}: FAIL  {name} [{:.1}s] {detail}", i + 1, elapsed.as_secs_f64());
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
