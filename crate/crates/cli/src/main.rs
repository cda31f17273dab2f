//! `kpztorus <experiment> --config <file> [--set key=value ...]`
//!
//! Exit status: 0 all acceptance checks passed, 1 some check failed,
//! 2 usage or configuration error, 3 runtime error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use kpztorus::harness::{run, Experiment, ExperimentConfig, RunManifest};
use kpztorus::Error;

const WORKERS_ENV: &str = "KPZTORUS_WORKERS";

#[derive(Debug, Parser)]
#[command(name = "kpztorus", version, about = "Run a periodic KPZ experiment and write CSV plus a JSON manifest")]
struct Cli {
    /// constants, brunet, simulate, mixing, reversal, jointlaw or clt
    experiment: Experiment,

    /// key=value configuration file
    #[arg(long)]
    config: PathBuf,

    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,

    #[arg(long)]
    seed: Option<u64>,

    /// Worker threads; defaults to $KPZTORUS_WORKERS, then the core count
    #[arg(long)]
    workers: Option<usize>,

    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. } => Failure::Usage(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, Failure> {
    let mut c = ExperimentConfig::default();
    if let Ok(v) = std::env::var(WORKERS_ENV) {
        c.set("workers", &v, 0)
            .map_err(|e| Failure::Usage(format!("{WORKERS_ENV}: {e}")))?;
    }
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Failure::Usage(format!("{}: {e}", cli.config.display())))?;
    c.apply_text(&text)?;
    for kv in &cli.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| Failure::Usage(format!("--set `{kv}`: expected KEY=VALUE")))?;
        c.set(k.trim(), v, 0)?;
    }
    c.experiment = Some(cli.experiment);
    if let Some(s) = cli.seed {
        c.seed = s;
    }
    if let Some(w) = cli.workers {
        c.workers = w;
    }
    if let Some(o) = &cli.out {
        c.output_dir = o.clone();
    }
    c.validate()?;
    Ok(c)
}

fn report(m: &RunManifest) {
    for (name, ok) in &m.acceptance {
        println!("{} {name}", if *ok { "PASS" } else { "FAIL" });
    }
    for (name, verdict) in &m.verdicts {
        println!("{verdict} {name}");
    }
    for f in &m.files {
        println!("wrote {}", m.config.output_dir.join(f).display());
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = build_config(&cli).and_then(|c| run(&c).map_err(Failure::from));
    match result {
        Ok(m) => {
            report(&m);
            ExitCode::from(if m.passed { 0 } else { 1 })
        }
        Err(Failure::Usage(msg)) => {
            eprintln!("kpztorus: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("kpztorus: {msg}");
            ExitCode::from(3)
        }
    }
}
