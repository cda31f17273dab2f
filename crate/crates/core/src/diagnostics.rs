//! Statistical checks on the lattice: how fast endpoint laws forget their
//! start, time-reversal anti-symmetry of the height increments, the joint
//! law of height and corrector increments, and Gaussianity of the rescaled
//! endpoint.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bridge::{sample_bridge_with, BridgePath};
use crate::cylinder::{evolve_moments, mean_quenched_variance, tilde_g, tilde_phi, MomentField};
use crate::error::{Error, Result};
use crate::estimate::{Accumulator, Estimate};
use crate::lattice::{evolve, Density, Field, HeightField, LatticeConfig, LatticeDisorder};
use crate::mc;
use crate::rng::{salt, RngStream};
use crate::Real;

/// Default number of permutations for the energy-distance test.
pub const N_PERMUTATIONS: usize = 999;

/// Significance level every test is judged at.
pub const ALPHA: f64 = 0.01;

/// Permutation statistics within this of the observed one count as ties,
/// so samples that differ only by rounding are not told apart.
pub const TIE_TOLERANCE: f64 = 1e-10;

/// Averaged sup-norm differences below this are rounding noise.
pub const MIXING_FLOOR: f64 = 1e-13;

/// Mean squared winding differences below this are rounding noise.
pub const DECAY_FLOOR: f64 = 1e-24;

/// Log-linear fit `log v ≈ intercept − rate · s`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub rate: f64,
    pub intercept: f64,
    pub r_squared: f64,
    pub s_range: (f64, f64),
    pub n_points: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TwoSampleReport {
    pub statistic: f64,
    pub p_value: f64,
    pub n1: usize,
    pub n2: usize,
}

impl TwoSampleReport {
    /// No evidence against the null at [`ALPHA`].
    pub fn passes(&self) -> bool {
        self.p_value > ALPHA
    }
}

/// At least two of three (more generally, a strict majority).
pub fn majority(flags: &[bool]) -> bool {
    2 * flags.iter().filter(|&&f| f).count() > flags.len()
}

pub fn normal_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / std::f64::consts::SQRT_2)
}

/// Two-sided p-value of a standard normal statistic.
pub fn z_p_value(z: f64) -> f64 {
    erfc(z.abs() / std::f64::consts::SQRT_2)
}

/// `Q(λ) = 2 Σ (−1)^{k−1} exp(−2k²λ²)`, the Kolmogorov tail.
fn kolmogorov_tail(lambda: f64) -> f64 {
    if lambda < 0.2 {
        return 1.0;
    }
    let mut s = 0.0;
    for k in 1..=100 {
        let kf = k as f64;
        let term = (-2.0 * kf * kf * lambda * lambda).exp();
        s += if k % 2 == 1 { term } else { -term };
        if term < 1e-17 {
            break;
        }
    }
    (2.0 * s).clamp(0.0, 1.0)
}

/// One-sample Kolmogorov–Smirnov test against the standard normal, with
/// Stephens' small-sample correction of the statistic.
pub fn ks_normal(samples: &[f64]) -> TwoSampleReport {
    let mut x: Vec<f64> = samples.to_vec();
    x.sort_by(f64::total_cmp);
    let n = x.len() as f64;
    let mut d: f64 = 0.0;
    for (i, &v) in x.iter().enumerate() {
        let f = normal_cdf(v);
        d = d.max((i as f64 + 1.0) / n - f).max(f - i as f64 / n);
    }
    let rn = n.sqrt();
    TwoSampleReport {
        statistic: d,
        p_value: kolmogorov_tail((rn + 0.12 + 0.11 / rn) * d),
        n1: x.len(),
        n2: 0,
    }
}

/// KS test of `samples / √(t σ²_ref)` against `N(0, 1)`.
pub fn gaussian_test(samples: &[f64], t: f64, sigma2_ref: f64) -> Result<TwoSampleReport> {
    if samples.len() < 200 {
        return Err(Error::param("samples", format!("need at least 200, got {}", samples.len())));
    }
    if !(t > 0.0 && sigma2_ref > 0.0) {
        return Err(Error::param("t", "time and reference variance must be positive"));
    }
    let s = (t * sigma2_ref).sqrt();
    let z: Vec<f64> = samples.iter().map(|v| v / s).collect();
    Ok(ks_normal(&z))
}

fn euclid(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Energy statistic `n₁n₂/(n₁+n₂) · (2E|X−Y| − E|X−X'| − E|Y−Y'|)` for the
/// split `labels` (true = first sample) of a pooled distance matrix.
fn energy_from_labels(dist: &[f64], n: usize, first: &[usize], second: &[usize]) -> f64 {
    let sum_within = |idx: &[usize]| -> f64 {
        let mut s = 0.0;
        for (a, &i) in idx.iter().enumerate() {
            for &j in &idx[a + 1..] {
                s += dist[i * n + j];
            }
        }
        2.0 * s
    };
    let total: f64 = dist.iter().sum();
    let aa = sum_within(first);
    let bb = sum_within(second);
    let ab = 0.5 * (total - aa - bb);
    let (n1, n2) = (first.len() as f64, second.len() as f64);
    let e = 2.0 * ab / (n1 * n2) - aa / (n1 * n1) - bb / (n2 * n2);
    n1 * n2 / (n1 + n2) * e
}

/// Two-sample energy-distance test calibrated by `n_perm` random relabelings
/// drawn from the permutation salt. `p = (1 + #{T_b ≥ T}) / (n_perm + 1)`.
pub fn energy_test(a: &[Vec<f64>], b: &[Vec<f64>], n_perm: usize, seed: u64) -> Result<TwoSampleReport> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::param("samples", "each sample needs at least 2 points"));
    }
    let dim = a[0].len();
    if a.iter().chain(b).any(|v| v.len() != dim) {
        return Err(Error::param("samples", "all points must have the same dimension"));
    }
    let pooled: Vec<&[f64]> = a.iter().chain(b).map(|v| v.as_slice()).collect();
    let n = pooled.len();
    let mut dist = vec![0.0; n * n];
    dist.par_chunks_mut(n).enumerate().for_each(|(i, row)| {
        for (j, d) in row.iter_mut().enumerate() {
            *d = euclid(pooled[i], pooled[j]);
        }
    });
    let first: Vec<usize> = (0..a.len()).collect();
    let second: Vec<usize> = (a.len()..n).collect();
    let observed = energy_from_labels(&dist, n, &first, &second);
    let exceed: usize = (0..n_perm as u64)
        .into_par_iter()
        .map(|b| {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut RngStream::for_sample(seed, salt::PERMUTATION, b).rng());
            let stat = energy_from_labels(&dist, n, &idx[..a.len()], &idx[a.len()..]);
            usize::from(stat >= observed - TIE_TOLERANCE)
        })
        .sum();
    Ok(TwoSampleReport {
        statistic: observed,
        p_value: (1 + exceed) as f64 / (n_perm + 1) as f64,
        n1: a.len(),
        n2: b.len(),
    })
}

/// Ordinary least squares of `log v` on `s`.
pub fn fit_decay(s: &[f64], v: &[f64]) -> Result<DecayFit> {
    if s.len() != v.len() {
        return Err(Error::param("values", "times and values differ in length"));
    }
    if s.len() < 3 {
        return Err(Error::DegenerateFit(format!("{} usable points, need 3", s.len())));
    }
    if v.iter().any(|&x| !(x > 0.0) || !x.is_finite()) {
        return Err(Error::DegenerateFit("non-positive value in a log fit".into()));
    }
    let n = s.len() as f64;
    let ly: Vec<f64> = v.iter().map(|x| x.ln()).collect();
    let sm = s.iter().sum::<f64>() / n;
    let lm = ly.iter().sum::<f64>() / n;
    let sxx: f64 = s.iter().map(|x| (x - sm) * (x - sm)).sum();
    let sxy: f64 = s.iter().zip(&ly).map(|(x, y)| (x - sm) * (y - lm)).sum();
    let syy: f64 = ly.iter().map(|y| (y - lm) * (y - lm)).sum();
    if sxx == 0.0 {
        return Err(Error::DegenerateFit("all times equal".into()));
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 { 1.0 } else { (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0) };
    Ok(DecayFit {
        rate: -slope,
        intercept: lm - slope * sm,
        r_squared,
        s_range: (s[0], s[s.len() - 1]),
        n_points: s.len(),
    })
}

/// Keeps the points with `s ≥ s_min` up to the first one at or below
/// `floor`, then fits.
fn fit_until_floor(s: &[f64], v: &[f64], s_min: f64, floor: f64) -> Result<DecayFit> {
    let mut ts = Vec::new();
    let mut vs = Vec::new();
    for (&t, &x) in s.iter().zip(v) {
        if x <= floor {
            break;
        }
        if t >= s_min {
            ts.push(t);
            vs.push(x);
        }
    }
    fit_decay(&ts, &vs)
}

/// Disorder-averaged sup-norm distance between the endpoint densities of two
/// starts evolved under the same disorder, recorded every `n_sites/8` steps,
/// with the exponential decay rate fitted from `t = 1/4` until the averaged
/// distance reaches [`MIXING_FLOOR`].
pub fn mixing_rate<T: Real>(
    beta: f64,
    nu1: &Density<T>,
    nu2: &Density<T>,
    t_max: f64,
    n_disorder: u64,
    cfg: &LatticeConfig,
) -> Result<DecayFit> {
    if !(t_max >= 4.0) {
        return Err(Error::param("t_max", format!("{t_max} is below 4 time units")));
    }
    if n_disorder == 0 {
        return Err(Error::param("n_disorder", "need at least one realization"));
    }
    let n = cfg.n_sites;
    if nu1.n() != n || nu2.n() != n {
        return Err(Error::GridMismatch { left: nu1.n().max(nu2.n()), right: n });
    }
    let kernel = cfg.kernel::<T>()?;
    let stride = (n / 8).max(1);
    let n_steps = cfg.steps(t_max);
    let marks: Vec<usize> = (1..=n_steps / stride).map(|m| m * stride).collect();
    let seed = cfg.seed;
    let runs: Vec<Vec<f64>> = mc::collect(seed, salt::DISORDER, n_disorder, |i, rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, n_steps, seed, salt::DISORDER ^ i, rng);
        let mut a = Field::from_density(nu1);
        let mut b = Field::from_density(nu2);
        let mut prev = 0;
        marks
            .iter()
            .map(|&m| {
                a = evolve(&a, &d, prev, m).expect("range checked");
                b = evolve(&b, &d, prev, m).expect("range checked");
                prev = m;
                match (Density::from_field(&a), Density::from_field(&b)) {
                    (Ok(x), Ok(y)) => x.max_abs_diff(&y),
                    _ => f64::NAN,
                }
            })
            .collect()
    });
    let mean: Vec<f64> = (0..marks.len())
        .map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len() as f64)
        .collect();
    let times: Vec<f64> = marks.iter().map(|&m| m as f64 * cfg.dt).collect();
    fit_until_floor(&times, &mean, 0.25, MIXING_FLOOR)
}

/// `E|[ψ(s,y′)−ψ(s,y)] − [φ(s,y′)−φ(s,y)]|²` over disorder and bridges on
/// the grid `s_steps`, fitted for exponential decay until it reaches
/// [`DECAY_FLOOR`].
pub fn winding_decay<T: Real>(
    beta: f64,
    s_steps: &[usize],
    y: usize,
    y_prime: usize,
    n_disorder: u64,
    cfg: &LatticeConfig,
) -> Result<(Vec<f64>, DecayFit)> {
    let n = cfg.n_sites;
    if y >= n || y_prime >= n {
        return Err(Error::param("y", "probe sites must lie on the ring"));
    }
    if s_steps.is_empty() || s_steps.windows(2).any(|p| p[0] >= p[1]) || s_steps[0] == 0 {
        return Err(Error::param("s_steps", "need a strictly increasing grid of positive steps"));
    }
    let kernel = cfg.kernel::<T>()?;
    let last = *s_steps.last().expect("nonempty");
    let seed = cfg.seed;
    let runs: Vec<Vec<f64>> = mc::collect(seed, salt::DISORDER, n_disorder, |i, rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, last, seed, salt::DISORDER ^ i, rng);
        let w: BridgePath<T> = sample_bridge_with(n, &mut RngStream::for_sample(seed, salt::BRIDGE_INIT, i).rng())
            .expect("ring size is a power of two");
        let mut psi = MomentField::from_field(&Field::delta(n, 0));
        let mut phi = MomentField::from_field(&Field::exp_bridge(&w, T::lit(beta)));
        let mut prev = 0;
        s_steps
            .iter()
            .map(|&s| {
                psi = evolve_moments(&psi, &d, prev, s).expect("range checked");
                phi = evolve_moments(&phi, &d, prev, s).expect("range checked");
                prev = s;
                let p = psi.winding_profile();
                let f = phi.winding_profile();
                let diff = (p[y_prime] - p[y]) - (f[y_prime] - f[y]);
                diff * diff
            })
            .collect()
    });
    let mean: Vec<f64> = (0..s_steps.len())
        .map(|k| runs.iter().map(|r| r[k]).sum::<f64>() / runs.len() as f64)
        .collect();
    let times: Vec<f64> = s_steps.iter().map(|&s| s as f64 * cfg.dt).collect();
    let fit = fit_until_floor(&times, &mean, 0.0, DECAY_FLOOR)?;
    Ok((mean, fit))
}

/// Converts probe positions in `(0, 1)` to ring sites; each must fall on a
/// site exactly.
pub fn probe_sites(probes: &[f64], n_sites: usize) -> Result<Vec<usize>> {
    probes
        .iter()
        .map(|&y| {
            let s = y * n_sites as f64;
            if !(y > 0.0 && y < 1.0) || s.fract() != 0.0 {
                return Err(Error::param("probes", format!("{y} is not an interior site of a ring of {n_sites}")));
            }
            Ok(s as usize)
        })
        .collect()
}

/// Initial height for the reversal test.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Start {
    /// `h(0) = βW` for a fresh bridge `W`.
    Stationary,
    /// `h(0) = 0`.
    Flat,
}

fn start_field<T: Real>(start: Start, beta: f64, n: usize, seed: u64, bridge_salt: u64, i: u64) -> Field<T> {
    match start {
        Start::Flat => Field::constant(n, T::one()),
        Start::Stationary => {
            let w: BridgePath<T> = sample_bridge_with(n, &mut RngStream::for_sample(seed, bridge_salt, i).rng())
                .expect("ring size is a power of two");
            Field::exp_bridge(&w, T::lit(beta))
        }
    }
}

fn increments_at<T: Real>(f: &Field<T>, sites: &[usize]) -> Vec<f64> {
    let h = HeightField::from_field(f);
    sites.iter().map(|&s| h.increments[s].to_f64_lossy()).collect()
}

/// Height increments at `s` and `t − s` from one realization.
fn two_time_increments<T: Real>(
    d: &LatticeDisorder<T>,
    start: Field<T>,
    s_step: usize,
    t_step: usize,
    sites: &[usize],
) -> (Vec<f64>, Vec<f64>) {
    let (early, late) = (s_step.min(t_step - s_step), s_step.max(t_step - s_step));
    let a = evolve(&start, d, 0, early).expect("range checked");
    let b = evolve(&a, d, early, late).expect("range checked");
    let (ea, eb) = (increments_at(&a, sites), increments_at(&b, sites));
    if early == s_step {
        (ea, eb)
    } else {
        (eb, ea)
    }
}

/// Energy-distance test of `(Δh(s), Δh(t−s))` against `(−Δh(t−s), −Δh(s))`
/// at the probe sites, the two samples taken from disjoint realizations.
#[allow(clippy::too_many_arguments)]
pub fn reversal_statistic<T: Real>(
    beta: f64,
    t_steps: usize,
    s_step: usize,
    n_disorder: u64,
    probes: &[f64],
    start: Start,
    n_perm: usize,
    cfg: &LatticeConfig,
) -> Result<TwoSampleReport> {
    if s_step > t_steps || t_steps == 0 {
        return Err(Error::param("s_step", format!("{s_step} is not within 0..={t_steps}")));
    }
    let n = cfg.n_sites;
    let sites = probe_sites(probes, n)?;
    let kernel = cfg.kernel::<T>()?;
    let seed = cfg.seed;
    let sample = |dis_salt: u64, bridge_salt: u64| -> Vec<(Vec<f64>, Vec<f64>)> {
        mc::collect(seed, dis_salt, n_disorder, |i, rng| {
            let d = LatticeDisorder::generate_with(kernel.clone(), beta, t_steps, seed, dis_salt ^ i, rng);
            let f0 = start_field::<T>(start, beta, n, seed, bridge_salt, i);
            two_time_increments(&d, f0, s_step, t_steps, &sites)
        })
    };
    let a: Vec<Vec<f64>> = sample(salt::DISORDER, salt::BRIDGE_INIT)
        .into_iter()
        .map(|(s, r)| [s, r].concat())
        .collect();
    let b: Vec<Vec<f64>> = sample(salt::DISORDER_ALT, salt::BRIDGE_ALT)
        .into_iter()
        .map(|(s, r)| r.iter().chain(&s).map(|v| -v).collect())
        .collect();
    energy_test(&a, &b, n_perm, seed)
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SecondMoment {
    pub y: f64,
    pub mean: f64,
    pub std_error: f64,
    pub target: f64,
}

impl SecondMoment {
    pub fn within(&self, k: f64) -> bool {
        (self.mean - self.target).abs() <= k * self.std_error
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct JointLawReport {
    pub energy: TwoSampleReport,
    /// Two-sample z statistics of the coordinate means, heights first.
    pub mean_z: Vec<f64>,
    /// Two-sample z statistics of the coordinate second moments.
    pub second_moment_z: Vec<f64>,
    /// `E[Δh(y)²]` of the forward sample against `β² y(1 − y)`.
    pub height_second_moments: Vec<SecondMoment>,
}

fn moment_z(a: &[Vec<f64>], b: &[Vec<f64>], f: impl Fn(f64) -> f64) -> Vec<f64> {
    let dim = a[0].len();
    (0..dim)
        .map(|k| {
            let x: Accumulator = a.iter().map(|v| f(v[k])).collect();
            let y: Accumulator = b.iter().map(|v| f(v[k])).collect();
            let se = (x.std_error().powi(2) + y.std_error().powi(2)).sqrt();
            if se == 0.0 {
                0.0
            } else {
                (x.mean() - y.mean()) / se
            }
        })
        .collect()
}

/// Compares `(h(t,·)−h(t,0), φ(t,·)−φ(t,0))` from a forward run with
/// `(−βW', φ̃(t,·))` built from an independent bridge and disorder, at the
/// probe sites. The forward run starts at `e^{βW}` ([`Start::Stationary`])
/// or at a constant ([`Start::Flat`]), the latter being a start the identity
/// does not cover.
#[allow(clippy::too_many_arguments)]
pub fn joint_law_check<T: Real>(
    beta: f64,
    t_steps: usize,
    n_disorder: u64,
    probes: &[f64],
    start: Start,
    n_perm: usize,
    cfg: &LatticeConfig,
) -> Result<JointLawReport> {
    if t_steps == 0 {
        return Err(Error::param("t_steps", "must be at least 1"));
    }
    let n = cfg.n_sites;
    let sites = probe_sites(probes, n)?;
    let kernel = cfg.kernel::<T>()?;
    let seed = cfg.seed;
    let bridge = |bridge_salt: u64, i: u64| -> BridgePath<T> {
        sample_bridge_with(n, &mut RngStream::for_sample(seed, bridge_salt, i).rng())
            .expect("ring size is a power of two")
    };
    let a: Vec<Vec<f64>> = mc::collect(seed, salt::DISORDER, n_disorder, |i, rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, t_steps, seed, salt::DISORDER ^ i, rng);
        let f0 = start_field::<T>(start, beta, n, seed, salt::BRIDGE_INIT, i);
        let f = evolve_moments(&MomentField::from_field(&f0), &d, 0, t_steps)
            .expect("shapes agree by construction");
        let h = f.log_partition();
        let phi = f.winding_profile();
        let dh = sites.iter().map(|&s| h[s] - h[0]);
        let dphi = sites.iter().map(|&s| phi[s] - phi[0]);
        dh.chain(dphi).collect()
    });
    let b: Vec<Vec<f64>> = mc::collect(seed, salt::DISORDER_ALT, n_disorder, |i, rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, t_steps, seed, salt::DISORDER_ALT ^ i, rng);
        let w = bridge(salt::BRIDGE_ALT, i);
        let g = tilde_g(&d, &w, t_steps).expect("shapes agree by construction");
        let tp = tilde_phi(&g);
        let hw = sites.iter().map(|&s| -beta * w.values()[s].to_f64_lossy());
        let p = sites.iter().map(|&s| tp[s].to_f64_lossy());
        hw.chain(p).collect()
    });
    let energy = energy_test(&a, &b, n_perm, seed)?;
    let height_second_moments = sites
        .iter()
        .enumerate()
        .map(|(k, &s)| {
            let y = s as f64 / n as f64;
            let acc: Accumulator = a.iter().map(|v| v[k] * v[k]).collect();
            SecondMoment {
                y,
                mean: acc.mean(),
                std_error: acc.std_error(),
                target: beta * beta * y * (1.0 - y),
            }
        })
        .collect();
    Ok(JointLawReport {
        energy,
        mean_z: moment_z(&a, &b, |x| x),
        second_moment_z: moment_z(&a, &b, |x| x * x),
        height_second_moments,
    })
}

/// Disorder mean of the quenched variance at `t_steps`, for comparison with
/// the elapsed time.
pub fn quenched_variance_identity<T: Real>(
    beta: f64,
    t_steps: usize,
    n_disorder: u64,
    cfg: &LatticeConfig,
) -> Result<Estimate> {
    mean_quenched_variance::<T>(beta, t_steps, n_disorder, cfg)
}

/// `|E𝒱_t − t| / t`.
pub fn relative_deviation(estimate: &Estimate, t: f64) -> f64 {
    (estimate.value - t).abs() / t
}

#[cfg(test)]
mod tests;
