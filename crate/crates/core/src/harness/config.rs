//! Line-oriented `key=value` configuration with dotted section keys.
//!
//! ```text
//! # comment
//! beta = 0.5, 1
//! mc.n_outer = 1e6
//! lattice.n_sites = 64
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::constants::McConfig;
use crate::error::{Error, Result};
use crate::lattice::LatticeConfig;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Experiment {
    Constants,
    Brunet,
    Simulate,
    Mixing,
    Reversal,
    JointLaw,
    Clt,
}

impl Experiment {
    pub const ALL: [Experiment; 7] = [
        Experiment::Constants,
        Experiment::Brunet,
        Experiment::Simulate,
        Experiment::Mixing,
        Experiment::Reversal,
        Experiment::JointLaw,
        Experiment::Clt,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::Constants => "constants",
            Experiment::Brunet => "brunet",
            Experiment::Simulate => "simulate",
            Experiment::Mixing => "mixing",
            Experiment::Reversal => "reversal",
            Experiment::JointLaw => "jointlaw",
            Experiment::Clt => "clt",
        }
    }

    /// Simulated time when `lattice.t_steps` is not set.
    fn default_time(self) -> f64 {
        match self {
            Experiment::Reversal | Experiment::JointLaw => 1.0,
            Experiment::Mixing => 4.0,
            _ => 32.0,
        }
    }

    /// Time step as a fraction of `dx` when `lattice.dt` is not set. The
    /// height-increment tests need the finer step: with `dt = dx` the heat
    /// step damps the lowest Fourier modes noticeably within one step and
    /// the stationary increments come out about half as large as a bridge.
    fn default_dt_fraction(self) -> f64 {
        match self {
            Experiment::Reversal | Experiment::JointLaw => 1.0 / 16.0,
            _ => 1.0,
        }
    }

    fn default_n_disorder(self) -> u64 {
        match self {
            Experiment::Mixing => 16,
            Experiment::Reversal | Experiment::JointLaw => 400,
            Experiment::Clt => 500,
            _ => 200,
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Experiment::ALL.iter().map(|e| e.name()).collect();
                format!("unknown experiment `{s}`; expected one of {}", names.join(", "))
            })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    F64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSection {
    pub n_sites: usize,
    /// `None` picks the experiment default.
    pub dt: Option<f64>,
    pub t_steps: Option<usize>,
    pub n_disorder: Option<u64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McSection {
    pub n_outer: u64,
    pub n_grid: usize,
    pub antithetic_gamma: bool,
    pub antithetic_sigma2: bool,
    pub control_variates: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagSection {
    pub n_permutations: usize,
    pub probes: Vec<f64>,
    pub n_seeds: u64,
    /// Reversal split time; `None` means a quarter of the run.
    pub s_step: Option<usize>,
    pub t_max: f64,
    /// Length of the flat-start joint-law control.
    pub control_steps: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: Option<Experiment>,
    pub beta: Vec<f64>,
    pub lattice: LatticeSection,
    pub mc: McSection,
    pub brunet_h: f64,
    pub diag: DiagSection,
    pub seed: u64,
    pub workers: usize,
    pub output_dir: PathBuf,
    pub precision: Precision,
    /// Line each key was last set on; 0 for the command line.
    #[serde(skip)]
    lines: BTreeMap<String, usize>,
}

pub fn available_workers() -> usize {
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mc = McConfig::default();
        Self {
            experiment: None,
            beta: vec![1.0],
            lattice: LatticeSection {
                n_sites: 64,
                dt: None,
                t_steps: None,
                n_disorder: None,
            },
            mc: McSection {
                n_outer: mc.n_outer,
                n_grid: mc.n_grid,
                antithetic_gamma: mc.antithetic_gamma,
                antithetic_sigma2: mc.antithetic_sigma2,
                control_variates: mc.control_variates,
            },
            brunet_h: 0.05,
            diag: DiagSection {
                n_permutations: crate::diagnostics::N_PERMUTATIONS,
                probes: vec![0.25, 0.5, 0.75],
                n_seeds: 3,
                s_step: None,
                t_max: 4.0,
                control_steps: 16,
            },
            seed: 0,
            workers: available_workers(),
            output_dir: PathBuf::from("out"),
            precision: Precision::F64,
            lines: BTreeMap::new(),
        }
    }
}

pub const KEYS: [&str; 22] = [
    "experiment",
    "beta",
    "seed",
    "workers",
    "output_dir",
    "precision",
    "lattice.n_sites",
    "lattice.dt",
    "lattice.t_steps",
    "lattice.n_disorder",
    "mc.n_outer",
    "mc.n_grid",
    "mc.antithetic_gamma",
    "mc.antithetic_sigma2",
    "mc.control_variates",
    "brunet.h",
    "diag.n_permutations",
    "diag.probes",
    "diag.n_seeds",
    "diag.s_step",
    "diag.t_max",
    "diag.control_steps",
];

fn config_err(line: usize, key: &str, reason: impl Into<String>) -> Error {
    Error::Config {
        line,
        key: key.to_string(),
        reason: reason.into(),
    }
}

/// Nonnegative integer; also accepts exact float spellings such as `1e6`.
fn parse_count(v: &str) -> std::result::Result<u64, String> {
    if let Ok(n) = v.parse::<u64>() {
        return Ok(n);
    }
    match v.parse::<f64>() {
        Ok(x) if x >= 0.0 && x.fract() == 0.0 && x < 9.007_199_254_740_992e15 => Ok(x as u64),
        Ok(_) => Err(format!("`{v}` is not a nonnegative integer")),
        Err(_) => Err(format!("`{v}` is not a number")),
    }
}

fn parse_real(v: &str) -> std::result::Result<f64, String> {
    match v.parse::<f64>() {
        Ok(x) if x.is_finite() => Ok(x),
        _ => Err(format!("`{v}` is not a finite number")),
    }
}

fn parse_bool(v: &str) -> std::result::Result<bool, String> {
    match v {
        "true" | "1" | "yes" | "on" => Ok(true),
        "false" | "0" | "no" | "off" => Ok(false),
        _ => Err(format!("`{v}` is not a boolean")),
    }
}

fn parse_list(v: &str) -> std::result::Result<Vec<f64>, String> {
    v.split(',').map(|p| parse_real(p.trim())).collect()
}

fn parse_auto<T>(v: &str, f: impl Fn(&str) -> std::result::Result<T, String>) -> std::result::Result<Option<T>, String> {
    if v == "auto" {
        Ok(None)
    } else {
        f(v).map(Some)
    }
}

impl ExperimentConfig {
    /// Sets one key. `line` is reported in errors (0 = command line).
    pub fn set(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        let v = value.trim();
        let r: std::result::Result<(), String> = (|| {
            match key {
                "experiment" => self.experiment = Some(v.parse()?),
                "beta" => self.beta = parse_list(v)?,
                "seed" => self.seed = parse_count(v)?,
                "workers" => self.workers = parse_count(v)? as usize,
                "output_dir" => {
                    if v.is_empty() {
                        return Err("empty path".into());
                    }
                    self.output_dir = PathBuf::from(v)
                }
                "precision" => {
                    self.precision = match v {
                        "f64" => Precision::F64,
                        "f32" => Precision::F32,
                        _ => return Err(format!("`{v}` is not f32 or f64")),
                    }
                }
                "lattice.n_sites" => self.lattice.n_sites = parse_count(v)? as usize,
                "lattice.dt" => self.lattice.dt = parse_auto(v, parse_real)?,
                "lattice.t_steps" => self.lattice.t_steps = parse_auto(v, |s| parse_count(s).map(|n| n as usize))?,
                "lattice.n_disorder" => self.lattice.n_disorder = parse_auto(v, parse_count)?,
                "mc.n_outer" => self.mc.n_outer = parse_count(v)?,
                "mc.n_grid" => self.mc.n_grid = parse_count(v)? as usize,
                "mc.antithetic_gamma" => self.mc.antithetic_gamma = parse_bool(v)?,
                "mc.antithetic_sigma2" => self.mc.antithetic_sigma2 = parse_bool(v)?,
                "mc.control_variates" => self.mc.control_variates = parse_bool(v)?,
                "brunet.h" => self.brunet_h = parse_real(v)?,
                "diag.n_permutations" => self.diag.n_permutations = parse_count(v)? as usize,
                "diag.probes" => self.diag.probes = parse_list(v)?,
                "diag.n_seeds" => self.diag.n_seeds = parse_count(v)?,
                "diag.s_step" => self.diag.s_step = parse_auto(v, |s| parse_count(s).map(|n| n as usize))?,
                "diag.t_max" => self.diag.t_max = parse_real(v)?,
                "diag.control_steps" => self.diag.control_steps = parse_count(v)? as usize,
                _ => return Err("unknown key".into()),
            }
            Ok(())
        })();
        r.map_err(|reason| config_err(line, key, reason))?;
        self.lines.insert(key.to_string(), line);
        Ok(())
    }

    /// Applies every `key=value` line of `text` on top of the current values.
    pub fn apply_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| config_err(i + 1, line, "expected `key = value`"))?;
            self.set(key.trim(), value, i + 1)?;
        }
        Ok(())
    }

    fn line_of(&self, key: &str) -> usize {
        self.lines.get(key).copied().unwrap_or(0)
    }

    fn check(&self, ok: bool, key: &str, reason: impl Into<String>) -> Result<()> {
        if ok {
            Ok(())
        } else {
            Err(config_err(self.line_of(key), key, reason))
        }
    }

    /// Range checks across all fields; run before any computation.
    pub fn validate(&self) -> Result<()> {
        self.check(!self.beta.is_empty(), "beta", "need at least one value")?;
        self.check(self.beta.iter().all(|&b| b >= 0.0), "beta", "values must be nonnegative")?;
        self.check(self.workers >= 1, "workers", "must be at least 1")?;
        let n = self.lattice.n_sites;
        self.check(
            n >= 4 && n.is_power_of_two(),
            "lattice.n_sites",
            format!("{n} is not a power of two >= 4"),
        )?;
        if let Some(dt) = self.lattice.dt {
            self.check(dt > 0.0, "lattice.dt", "must be positive")?;
        }
        if let Some(t) = self.lattice.t_steps {
            self.check(t >= 1, "lattice.t_steps", "must be at least 1")?;
        }
        if let Some(d) = self.lattice.n_disorder {
            self.check(d >= 2, "lattice.n_disorder", "need at least 2 realizations")?;
        }
        self.check(self.mc.n_outer >= 2, "mc.n_outer", "need at least 2 samples")?;
        self.check(
            self.mc.n_grid >= 4 && self.mc.n_grid.is_power_of_two(),
            "mc.n_grid",
            format!("{} is not a power of two >= 4", self.mc.n_grid),
        )?;
        let h = self.brunet_h;
        let b_min = self.beta.iter().copied().fold(f64::INFINITY, f64::min);
        if self.experiment == Some(Experiment::Brunet) {
            self.check(b_min > 0.0, "beta", "the Brunet relation needs beta > 0")?;
            self.check(h > 0.0 && h < b_min / 2.0, "brunet.h", format!("{h} is not in (0, beta/2)"))?;
        } else {
            self.check(h > 0.0, "brunet.h", "must be positive")?;
        }
        self.check(self.diag.n_permutations >= 19, "diag.n_permutations", "need at least 19")?;
        self.check(!self.diag.probes.is_empty(), "diag.probes", "need at least one probe")?;
        for &y in &self.diag.probes {
            let s = y * n as f64;
            self.check(
                y > 0.0 && y < 1.0 && s.fract() == 0.0,
                "diag.probes",
                format!("{y} is not an interior site of a ring of {n}"),
            )?;
        }
        self.check(self.diag.n_seeds >= 1, "diag.n_seeds", "must be at least 1")?;
        self.check(self.diag.t_max >= 4.0, "diag.t_max", "must be at least 4")?;
        self.check(self.diag.control_steps >= 1, "diag.control_steps", "must be at least 1")?;
        if let (Some(s), Some(t)) = (self.diag.s_step, self.lattice.t_steps) {
            self.check(s <= t, "diag.s_step", format!("{s} exceeds lattice.t_steps = {t}"))?;
        }
        Ok(())
    }

    pub fn experiment(&self) -> Result<Experiment> {
        self.experiment
            .ok_or_else(|| config_err(self.line_of("experiment"), "experiment", "no experiment selected"))
    }

    pub fn dt(&self, e: Experiment) -> f64 {
        self.lattice
            .dt
            .unwrap_or(e.default_dt_fraction() / self.lattice.n_sites as f64)
    }

    pub fn t_steps(&self, e: Experiment) -> usize {
        self.lattice
            .t_steps
            .unwrap_or_else(|| (e.default_time() / self.dt(e)).round().max(1.0) as usize)
    }

    pub fn n_disorder(&self, e: Experiment) -> u64 {
        self.lattice.n_disorder.unwrap_or(e.default_n_disorder())
    }

    pub fn lattice_config(&self, e: Experiment, seed: u64) -> LatticeConfig {
        LatticeConfig {
            n_sites: self.lattice.n_sites,
            dt: self.dt(e),
            seed,
        }
    }

    pub fn mc_config(&self) -> McConfig {
        McConfig {
            n_outer: self.mc.n_outer,
            n_grid: self.mc.n_grid,
            seed: self.seed,
            antithetic_gamma: self.mc.antithetic_gamma,
            antithetic_sigma2: self.mc.antithetic_sigma2,
            control_variates: self.mc.control_variates,
        }
    }

    /// The configuration as text that [`parse_config`] reads back to an
    /// equal value.
    pub fn to_text(&self) -> String {
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let auto = |v: Option<String>| v.unwrap_or_else(|| "auto".into());
        let mut out = String::new();
        let mut put = |k: &str, v: String| out.push_str(&format!("{k} = {v}\n"));
        if let Some(e) = self.experiment {
            put("experiment", e.name().into());
        }
        put("beta", list(&self.beta));
        put("seed", self.seed.to_string());
        put("workers", self.workers.to_string());
        put("output_dir", self.output_dir.display().to_string());
        put(
            "precision",
            match self.precision {
                Precision::F32 => "f32".into(),
                Precision::F64 => "f64".into(),
            },
        );
        put("lattice.n_sites", self.lattice.n_sites.to_string());
        put("lattice.dt", auto(self.lattice.dt.map(|x| format!("{x:?}"))));
        put("lattice.t_steps", auto(self.lattice.t_steps.map(|x| x.to_string())));
        put("lattice.n_disorder", auto(self.lattice.n_disorder.map(|x| x.to_string())));
        put("mc.n_outer", self.mc.n_outer.to_string());
        put("mc.n_grid", self.mc.n_grid.to_string());
        put("mc.antithetic_gamma", self.mc.antithetic_gamma.to_string());
        put("mc.antithetic_sigma2", self.mc.antithetic_sigma2.to_string());
        put("mc.control_variates", self.mc.control_variates.to_string());
        put("brunet.h", format!("{:?}", self.brunet_h));
        put("diag.n_permutations", self.diag.n_permutations.to_string());
        put("diag.probes", list(&self.diag.probes));
        put("diag.n_seeds", self.diag.n_seeds.to_string());
        put("diag.s_step", auto(self.diag.s_step.map(|x| x.to_string())));
        put("diag.t_max", format!("{:?}", self.diag.t_max));
        put("diag.control_steps", self.diag.control_steps.to_string());
        out
    }
}

/// Defaults, then `text`, then validation.
pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut c = ExperimentConfig::default();
    c.apply_text(text)?;
    c.validate()?;
    Ok(c)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_gives_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.beta, vec![1.0]);
        assert_eq!(c.lattice.n_sites, 64);
        assert_eq!(c.mc.n_outer, 100_000);
        assert_eq!(c.seed, 0);
        assert_eq!(c.workers, available_workers());
        assert!(c.experiment.is_none());
    }

    #[test]
    fn overrides_apply() {
        let c = parse_config("beta=0.5\nmc.n_outer=1000000").unwrap();
        assert_eq!(c.beta, vec![0.5]);
        assert_eq!(c.mc.n_outer, 1_000_000);
        let c = parse_config("  # header\nbeta = 0.25, 0.5 # two values\nmc.n_outer = 1e6\n\nexperiment=clt").unwrap();
        assert_eq!(c.beta, vec![0.25, 0.5]);
        assert_eq!(c.mc.n_outer, 1_000_000);
        assert_eq!(c.experiment, Some(Experiment::Clt));
    }

    #[test]
    fn errors_name_key_and_line() {
        let e = parse_config("beta=1\nlattice.n_sites=-3").unwrap_err();
        match e {
            Error::Config { line, key, .. } => {
                assert_eq!(line, 2);
                assert_eq!(key, "lattice.n_sites");
            }
            other => panic!("{other}"),
        }
        assert!(e_key(parse_config("mc.n_outr=5")) == "mc.n_outr");
        assert!(e_key(parse_config("beta=abc")) == "beta");
        assert!(e_key(parse_config("lattice.n_sites=48")) == "lattice.n_sites");
        assert!(e_key(parse_config("diag.probes=0.3")) == "diag.probes");
        assert!(e_key(parse_config("mc.antithetic_gamma=maybe")) == "mc.antithetic_gamma");
        assert!(e_key(parse_config("experiment=brunet\nbeta=1\nbrunet.h=0.6")) == "brunet.h");
        assert!(e_key(parse_config("just words")) == "just words");
    }

    fn e_key(r: Result<ExperimentConfig>) -> String {
        match r {
            Err(Error::Config { key, .. }) => key,
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn validation_reports_the_setting_line() {
        match parse_config("seed=1\nworkers=0\n") {
            Err(Error::Config { line, key, .. }) => assert_eq!((line, key.as_str()), (2, "workers")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn text_round_trip() {
        let c = parse_config("experiment=jointlaw\nbeta=0.5,1\nlattice.dt=0.0009765625\ndiag.s_step=12\nlattice.t_steps=64")
            .unwrap();
        let back = parse_config(&c.to_text()).unwrap();
        assert_eq!(back.to_text(), c.to_text());
        assert_eq!(back.beta, c.beta);
        assert_eq!(back.lattice, c.lattice);
        assert_eq!(back.diag, c.diag);
    }

    #[test]
    fn experiment_defaults() {
        let c = parse_config("").unwrap();
        assert_eq!(c.dt(Experiment::Simulate), 1.0 / 64.0);
        assert_eq!(c.t_steps(Experiment::Simulate), 2048);
        assert_eq!(c.dt(Experiment::JointLaw), 1.0 / 1024.0);
        assert_eq!(c.t_steps(Experiment::Reversal), 1024);
        assert_eq!(c.n_disorder(Experiment::Clt), 500);
        assert!("nope".parse::<Experiment>().is_err());
        for e in Experiment::ALL {
            assert_eq!(e.name().parse::<Experiment>().unwrap(), e);
        }
    }
}
