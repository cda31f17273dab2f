//! Experiment runner: configuration, dispatch on a sized worker pool, and
//! CSV plus JSON manifest output.

mod config;
mod experiments;
mod output;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::estimate::Estimate;

pub use config::{available_workers, parse_config, DiagSection, Experiment, ExperimentConfig, LatticeSection, McSection, Precision, KEYS};
pub use experiments::{diag_seeds, real, salt_table, Outcome, StreamRecord, Table, SERIES_BETA_MAX};
pub use output::OutputSet;

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: String,
    pub experiment: Experiment,
    pub config: ExperimentConfig,
    /// The configuration as `key = value` text.
    pub config_text: String,
    pub started: String,
    pub finished: String,
    pub seeds: Vec<u64>,
    pub salts: BTreeMap<String, u64>,
    pub streams: Vec<StreamRecord>,
    pub estimates: Vec<Estimate>,
    pub acceptance: BTreeMap<String, bool>,
    pub verdicts: BTreeMap<String, String>,
    pub files: Vec<String>,
    pub passed: bool,
}

/// Validates `config` and runs its experiment on a pool of
/// `config.workers` threads. Results do not depend on the worker count.
pub fn compute(config: &ExperimentConfig) -> Result<Outcome> {
    config.validate()?;
    let e = config.experiment()?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.workers)
        .build()
        .map_err(|err| Error::param("workers", err.to_string()))?;
    pool.install(|| match config.precision {
        Precision::F64 => experiments::dispatch::<f64>(e, config),
        Precision::F32 => experiments::dispatch::<f32>(e, config),
    })
}

/// [`compute`], then writes every table and the manifest into
/// `config.output_dir`.
pub fn run(config: &ExperimentConfig) -> Result<RunManifest> {
    let started = chrono::Local::now().to_rfc3339();
    let outcome = compute(config)?;
    let e = config.experiment()?;
    let seeds = match e {
        Experiment::Reversal | Experiment::JointLaw | Experiment::Clt => diag_seeds(config),
        _ => vec![config.seed],
    };
    let mut out = OutputSet::create(&config.output_dir)?;
    let r = (|| {
        let mut files = Vec::new();
        for t in &outcome.tables {
            out.table(t)?;
            files.push(format!("{}.csv", t.name));
        }
        files.push(MANIFEST_FILE.to_string());
        let manifest = RunManifest {
            version: env!("CARGO_PKG_VERSION").to_string(),
            experiment: e,
            config: config.clone(),
            config_text: config.to_text(),
            started,
            finished: chrono::Local::now().to_rfc3339(),
            seeds,
            salts: salt_table(),
            passed: outcome.passed(),
            streams: outcome.streams.clone(),
            estimates: outcome.estimates.clone(),
            acceptance: outcome.acceptance.clone(),
            verdicts: outcome.verdicts.clone(),
            files,
        };
        out.bytes(MANIFEST_FILE, serde_json::to_string_pretty(&manifest)?.as_bytes())?;
        Ok(manifest)
    })();
    if r.is_err() {
        out.discard();
    }
    r
}

pub fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    let text = std::fs::read_to_string(&path).map_err(|source| Error::Io { path, source })?;
    Ok(serde_json::from_str(&text)?)
}

#[cfg(test)]
mod tests;
