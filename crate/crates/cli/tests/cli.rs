use std::path::Path;
use std::process::{Command, Output};

fn seqmc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_seqmc")).args(args).env("SEQMC_THREADS", "1").output().unwrap()
}

fn csv_rows(bytes: &[u8]) -> Vec<Vec<String>> {
    String::from_utf8(bytes.to_vec())
        .unwrap()
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn figure1_has_ten_rows_per_algorithm() {
    let out = seqmc(&["figure1", "--assert"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let rows = csv_rows(&out.stdout);
    for alg in ["BPF", "MCMC-BPF", "FA-APF", "MCMC-FA-APF"] {
        let col: Vec<&Vec<String>> = rows.iter().filter(|r| r[2] == alg).collect();
        assert_eq!(col.len(), 10, "{alg}");
        if alg == "BPF" {
            assert!(col.iter().all(|r| r[6] == "1.0"));
        }
    }
}

#[test]
fn single_particle_run_reports_one_normalising_constant() {
    let out = seqmc(&["run-filter", "--N", "1", "--seed", "4"]);
    assert!(out.status.success());
    let rows = csv_rows(&out.stdout);
    assert_eq!(rows.len(), 1);
    let z: f64 = rows[0][6].parse().unwrap();
    assert!(z > 0.0 && z <= 1.0);
}

#[test]
fn sidecars_are_written_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run.csv");
    let o = out.to_str().unwrap();
    assert!(seqmc(&["unbiasedness", "--N", "8", "--replicates", "100", "-o", o]).status.success());
    let summary = std::fs::read_to_string(dir.path().join("run.summary.csv")).unwrap();
    assert!(summary.starts_with("scope,statistic,value\n"));
    let config = dir.path().join("run.config.json");
    let first = std::fs::read(&out).unwrap();
    let replay = dir.path().join("replay.csv");
    let status = seqmc(&["unbiasedness", "--config", config.to_str().unwrap(), "-o", replay.to_str().unwrap()]);
    assert!(status.status.success());
    assert_eq!(first, std::fs::read(&replay).unwrap());
}

#[test]
fn config_for_another_command_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.json");
    std::fs::write(&cfg, r#"{"command": "figure2"}"#).unwrap();
    assert_eq!(seqmc(&["clt-check", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
    std::fs::write(&cfg, r#"{"particls": 3}"#).unwrap();
    assert_eq!(seqmc(&["clt-check", "--config", cfg.to_str().unwrap()]).status.code(), Some(2));
}

#[test]
fn unwritable_output_exits_2() {
    let out = seqmc(&["figure1", "-o", "/nonexistent-dir/x.csv"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!Path::new("/nonexistent-dir").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(seqmc(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(seqmc(&["run-filter", "--N", "many"]).status.code(), Some(2));
    assert_eq!(seqmc(&["exact-analyze", "--epsilon", "1.5"]).status.code(), Some(2));
    assert_eq!(seqmc(&["--help"]).status.code(), Some(0));
}

#[test]
fn contract_violation_exits_3_only_under_assert() {
    // a constant test function has zero error, so no rate can be fitted
    let args = ["rate-check", "--test-function", "constant:1", "--replicates", "5", "--rate-grid", "8,16,32"];
    assert_eq!(seqmc(&args).status.code(), Some(0));
    let mut strict = args.to_vec();
    strict.push("--assert");
    assert_eq!(seqmc(&strict).status.code(), Some(3));
}

#[test]
fn exact_analyze_passes_its_contract_on_every_kernel() {
    for kernel in [["--kernel", "perfect-mixing"], ["--kernel", "independent-mh"], ["--kernel", "random-walk-mh"]] {
        for flow in ["bpf", "faapf"] {
            let out = seqmc(&["exact-analyze", kernel[0], kernel[1], "--flow", flow, "--assert"]);
            assert!(out.status.success(), "{kernel:?} {flow}: {}", String::from_utf8_lossy(&out.stderr));
        }
    }
}
