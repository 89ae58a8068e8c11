//! Command-line driver: reads an experiment config, runs the named experiment and
//! writes the replicate CSV, its summary and the resolved config.

mod commands;
mod config;
mod flags;

use std::ffi::OsString;
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::Parser;
use seqmc::experiments::ReplicateTable;
use seqmc::SmcError;

pub use config::{BuiltModel, ExperimentConfig, ModelConfig};
use flags::Cli;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_CONTRACT: i32 = 3;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("cannot write output: {0}")]
    Output(String),
    #[error(transparent)]
    Run(SmcError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Usage(_) | Self::Config(_) | Self::Output(_) => EXIT_CONFIG,
            Self::Run(_) => EXIT_FAILURE,
        }
    }
}

/// What a command produced.
pub struct Outcome {
    pub table: ReplicateTable,
    /// Human-readable lines for standard error.
    pub report: Vec<String>,
    /// Contract verdict, enforced under `--assert`.
    pub contract: Option<(bool, String)>,
}

/// Parses `argv` (including the program name), runs the command and returns the exit status.
pub fn dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("seqmc: {e}");
            e.exit_code()
        }
    }
}

fn run(cli: Cli) -> Result<i32, CliError> {
    let threads = cli.threads.unwrap_or(0);
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    let assert = cli.command.common().assert;
    let mut cfg = cli.command.load_config()?;
    let name = cli.command.name();
    if let Some(c) = &cfg.command {
        if c != name {
            return Err(CliError::Config(format!("config was written for '{c}', not '{name}'")));
        }
    }
    cli.command.patch(&mut cfg)?;
    let cfg = commands::resolve(name, cfg)?;
    let out = cfg.output.clone().filter(|p| p.as_os_str() != "-");
    if let Some(path) = &out {
        // fail before any sampling when the destination cannot be written
        File::create(path).map_err(|e| CliError::Output(format!("{}: {e}", path.display())))?;
    }
    let outcome = pool.install(|| commands::execute(name, &cfg))?;
    write_outputs(&outcome.table, &cfg, out.as_deref())?;
    for line in &outcome.report {
        eprintln!("{line}");
    }
    match outcome.contract {
        Some((false, why)) if assert => {
            eprintln!("seqmc: contract violated: {why}");
            Ok(EXIT_CONTRACT)
        }
        _ => Ok(EXIT_OK),
    }
}

/// `<stem>.summary.csv` and `<stem>.config.json` next to `<stem>.csv`.
pub fn sidecar_paths(out: &Path) -> (PathBuf, PathBuf) {
    let stem = match out.extension() {
        Some(ext) if ext == "csv" => out.with_extension(""),
        _ => out.to_path_buf(),
    };
    let with = |suffix: &str| {
        let mut s = stem.clone().into_os_string();
        s.push(suffix);
        PathBuf::from(s)
    };
    (with(".summary.csv"), with(".config.json"))
}

fn write_outputs(table: &ReplicateTable, cfg: &ExperimentConfig, out: Option<&Path>) -> Result<(), CliError> {
    let mut csv = Vec::new();
    table.write_csv(&mut csv)?;
    let Some(path) = out else {
        return std::io::stdout().write_all(&csv).map_err(|e| CliError::Output(e.to_string()));
    };
    let (summary_path, config_path) = sidecar_paths(path);
    let mut summary = Vec::new();
    table.write_summary_csv(&mut summary)?;
    let mut sidecar = serde_json::to_string_pretty(cfg).map_err(|e| CliError::Output(e.to_string()))?;
    sidecar.push('\n');
    for (p, bytes) in [(path, csv.as_slice()), (summary_path.as_path(), summary.as_slice()), (config_path.as_path(), sidecar.as_bytes())] {
        std::fs::write(p, bytes).map_err(|e| CliError::Output(format!("{}: {e}", p.display())))?;
    }
    Ok(())
}
