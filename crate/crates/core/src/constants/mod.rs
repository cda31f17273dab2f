//! Nested Monte Carlo estimators for `γ(β)`, `Σ²(β)` and `σ²(β)` on the unit
//! torus, written as expectations over independent Brownian bridges:
//!
//! ```text
//! γ(β)  = β²/2 · E[(∫ e^{βW₁})⁻²]                      = β²/2 + β⁴/24
//! Σ²(β) = β² · E_{W₁}[(E_{W₂} 1/∫ e^{β(W₁+W₂)})²]
//! σ²(β) = 1 + β² · E_{W₁,W₃}[A(β,W₁,W₃)²]
//! A     = ∫∫ Ξ(β,y,W₁) (ρ₁₃(z) − 1) 1{z ≤ y} dz dy
//! Ξ     = E_{W₂}[e^{β(W₂−W₁)(y)} / (∫ e^{β(W₂−W₁)})²]
//! ```
//!
//! Squared inner expectations are never formed by averaging then squaring:
//! each outer draw uses two independent inner bridges and multiplies the two
//! integrands, which is unbiased for the square.

mod brunet;
mod controls;
mod rescale;

pub use brunet::{brunet_operator, brunet_rhs, BrunetReport, BrunetVerdict};
pub use rescale::{rescale, Rescaling};

use serde::{Deserialize, Serialize};

use crate::bridge::{fill_bridge, log_exp_integral, BridgePath};
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::mc;
use crate::rng::salt;
use crate::Real;

pub const LABEL_GAMMA: &str = "gamma";
pub const LABEL_BIG_SIGMA2: &str = "Sigma2";
pub const LABEL_SIGMA2: &str = "sigma2";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McConfig {
    pub n_outer: u64,
    /// Bridge grid resolution (power of two).
    pub n_grid: usize,
    pub seed: u64,
    /// Pair every `γ` draw with its mirror image `−W`.
    pub antithetic_gamma: bool,
    /// Pair every `σ²` draw with the mirrored triple (off by default).
    pub antithetic_sigma2: bool,
    /// Subtract pilot-fitted control variates from the `γ` integrand.
    pub control_variates: bool,
}

impl Default for McConfig {
    fn default() -> Self {
        Self {
            n_outer: 100_000,
            n_grid: 1024,
            seed: 0,
            antithetic_gamma: true,
            antithetic_sigma2: false,
            control_variates: true,
        }
    }
}

impl McConfig {
    pub fn new(n_outer: u64, n_grid: usize, seed: u64) -> Self {
        Self {
            n_outer,
            n_grid,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n_outer == 0 {
            return Err(Error::param("n_outer", "must be at least 1"));
        }
        if self.n_grid < 2 || !self.n_grid.is_power_of_two() {
            return Err(Error::param("n_grid", format!("{} is not a power of two >= 2", self.n_grid)));
        }
        Ok(())
    }
}

/// `β²/2 + β⁴/24`.
pub fn gamma_exact(beta: f64) -> f64 {
    let b2 = beta * beta;
    b2 / 2.0 + b2 * b2 / 24.0
}

/// Small-`β` expansions `(σ², Σ²) = (1 + β⁴/360, β² + β⁴/12 − β⁶/360)`.
pub fn series_reference(beta: f64) -> (f64, f64) {
    let b2 = beta * beta;
    let b4 = b2 * b2;
    (1.0 + b4 / 360.0, b2 + b4 / 12.0 - b4 * b2 / 360.0)
}

/// `γ` integrand for one bridge, `β²/2 · (∫e^{βW})⁻²`, optionally averaged
/// with the mirrored bridge.
pub fn gamma_integrand<T: Real>(w: &BridgePath<T>, beta: T, antithetic: bool) -> T {
    let two = T::lit(2.0);
    let pref = beta * beta / two;
    let plus = (-two * log_exp_integral(w.values(), beta)).exp();
    if antithetic {
        let minus = (-two * log_exp_integral(w.values(), -beta)).exp();
        pref * (plus + minus) / two
    } else {
        pref * plus
    }
}

/// `β² F(W₁,W₂) F(W₁,W₂')` with `F = 1/∫e^{β(W₁+W₂)}`.
pub fn big_sigma2_integrand<T: Real>(
    w1: &BridgePath<T>,
    w2: &BridgePath<T>,
    w2b: &BridgePath<T>,
    beta: T,
) -> Result<T> {
    w1.check_same_grid(w2)?;
    w1.check_same_grid(w2b)?;
    let mut buf = vec![T::zero(); w1.n() + 1];
    Ok(big_sigma2_sample(w1.values(), w2.values(), w2b.values(), beta, &mut buf))
}

fn big_sigma2_sample<T: Real>(w1: &[T], w2: &[T], w2b: &[T], beta: T, buf: &mut [T]) -> T {
    sum_into(buf, w1, w2);
    let la = log_exp_integral(buf, beta);
    sum_into(buf, w1, w2b);
    let lb = log_exp_integral(buf, beta);
    beta * beta * (-(la + lb)).exp()
}

#[inline]
fn sum_into<T: Real>(out: &mut [T], a: &[T], b: &[T]) {
    for ((o, &x), &y) in out.iter_mut().zip(a).zip(b) {
        *o = x + y;
    }
}

/// Single-`W₂` integrand of `Ξ(β, ·, W₁)` on the bridge grid.
#[derive(Clone, Debug, PartialEq)]
pub struct XiProfile<T> {
    pub values: Vec<T>,
}

/// `e^{β(W₂−W₁)(y)} / (∫ e^{β(W₂−W₁)})²` at every grid point.
pub fn xi_profile<T: Real>(beta: T, w1: &BridgePath<T>, w2: &BridgePath<T>) -> Result<XiProfile<T>> {
    w1.check_same_grid(w2)?;
    let mut diff = vec![T::zero(); w1.n() + 1];
    let mut values = vec![T::zero(); w1.n() + 1];
    xi_into(&mut values, &mut diff, beta, w1.values(), w2.values());
    Ok(XiProfile { values })
}

fn xi_into<T: Real>(out: &mut [T], diff: &mut [T], beta: T, w1: &[T], w2: &[T]) {
    for ((d, &a), &b) in diff.iter_mut().zip(w1).zip(w2) {
        *d = b - a;
    }
    let two_log_z = T::lit(2.0) * log_exp_integral(diff, beta);
    for (o, &d) in out.iter_mut().zip(diff.iter()) {
        *o = (beta * d - two_log_z).exp();
    }
}

/// `F₁₃(y) − y` on the grid, where `F₁₃` is the cumulative trapezoid integral
/// of the normalized density `ρ₁₃ ∝ e^{β(W₁+W₃)}`. This is the inner integral
/// `∫₀ʸ (ρ₁₃(z) − 1) dz`.
pub fn amplitude_weights<T: Real>(beta: T, w1: &BridgePath<T>, w3: &BridgePath<T>) -> Result<Vec<T>> {
    w1.check_same_grid(w3)?;
    let mut out = vec![T::zero(); w1.n() + 1];
    let mut buf = vec![T::zero(); w1.n() + 1];
    amplitude_weights_into(&mut out, &mut buf, beta, w1.values(), w3.values());
    Ok(out)
}

fn amplitude_weights_into<T: Real>(out: &mut [T], buf: &mut [T], beta: T, w1: &[T], w3: &[T]) {
    let n = out.len() - 1;
    sum_into(buf, w1, w3);
    let log_z = log_exp_integral(buf, beta);
    for (o, &s) in out.iter_mut().zip(buf.iter()) {
        *o = (beta * s - log_z).exp();
    }
    // out holds ρ₁₃; turn it into the running integral minus y.
    let h = T::lit(1.0 / n as f64);
    let half = T::lit(0.5);
    let mut prev = out[0];
    let mut cum = T::zero();
    out[0] = T::zero();
    for j in 1..=n {
        let cur = out[j];
        cum += (prev + cur) * half * h;
        prev = cur;
        out[j] = cum - T::lit(j as f64) * h;
    }
}

/// Single-`W₂` winding amplitude `∫₀¹ Ξ_sample(y) (F₁₃(y) − y) dy`.
pub fn winding_amplitude_sample<T: Real>(
    beta: T,
    w1: &BridgePath<T>,
    w2: &BridgePath<T>,
    w3: &BridgePath<T>,
) -> Result<T> {
    w1.check_same_grid(w2)?;
    let weights = amplitude_weights(beta, w1, w3)?;
    let xi = xi_profile(beta, w1, w2)?;
    Ok(amplitude_from(&weights, &xi.values))
}

#[inline]
fn amplitude_from<T: Real>(weights: &[T], xi: &[T]) -> T {
    let n = weights.len() - 1;
    let half = T::lit(0.5);
    let mut s = (weights[0] * xi[0] + weights[n] * xi[n]) * half;
    for j in 1..n {
        s += weights[j] * xi[j];
    }
    s / T::lit(n as f64)
}

/// `β² A(W₂) A(W₂')` for one outer pair `(W₁, W₃)`.
pub fn sigma2_integrand<T: Real>(
    w1: &BridgePath<T>,
    w2: &BridgePath<T>,
    w2b: &BridgePath<T>,
    w3: &BridgePath<T>,
    beta: T,
) -> Result<T> {
    for w in [w2, w2b, w3] {
        w1.check_same_grid(w)?;
    }
    let mut s = Sigma2Scratch::new(w1.n());
    Ok(s.sample(beta, w1.values(), w2.values(), w2b.values(), w3.values()))
}

struct Sigma2Scratch<T> {
    weights: Vec<T>,
    buf: Vec<T>,
    xi: Vec<T>,
}

impl<T: Real> Sigma2Scratch<T> {
    fn new(n: usize) -> Self {
        Self {
            weights: vec![T::zero(); n + 1],
            buf: vec![T::zero(); n + 1],
            xi: vec![T::zero(); n + 1],
        }
    }

    fn sample(&mut self, beta: T, w1: &[T], w2: &[T], w2b: &[T], w3: &[T]) -> T {
        amplitude_weights_into(&mut self.weights, &mut self.buf, beta, w1, w3);
        xi_into(&mut self.xi, &mut self.buf, beta, w1, w2);
        let a = amplitude_from(&self.weights, &self.xi);
        xi_into(&mut self.xi, &mut self.buf, beta, w1, w2b);
        let b = amplitude_from(&self.weights, &self.xi);
        beta * beta * a * b
    }
}

/// `γ(β)` by Monte Carlo with antithetic pairing and, when enabled, control
/// variates whose expectations are known exactly on the grid.
pub fn estimate_gamma<T: Real>(beta: f64, cfg: &McConfig) -> Result<Estimate> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let b = T::lit(beta);
    let anti = cfg.antithetic_gamma;
    let use_cv = cfg.control_variates && beta != 0.0;
    let cv = if use_cv {
        Some(controls::fit_gamma_controls::<T>(beta, cfg)?)
    } else {
        None
    };
    let [acc] = mc::accumulate::<1, _>(cfg.seed, salt::GAMMA, cfg.n_outer, |rng| {
        let mut w = BridgePath::<T>::zero(n);
        fill_bridge(w.values_mut(), rng);
        let f = gamma_integrand(&w, b, anti).to_f64_lossy();
        match &cv {
            Some(cv) => [f - cv.correction(beta, w.values())],
            None => [f],
        }
    });
    Ok(Estimate::from_accumulator(LABEL_GAMMA, beta, cfg.seed, 0.0, salt::GAMMA, acc))
}

/// `Σ²(β)` by nested Monte Carlo with two independent inner bridges per
/// outer draw.
pub fn estimate_big_sigma2<T: Real>(beta: f64, cfg: &McConfig) -> Result<Estimate> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let b = T::lit(beta);
    let [acc] = mc::accumulate::<1, _>(cfg.seed, salt::BIG_SIGMA2, cfg.n_outer, |rng| {
        let mut w1 = vec![T::zero(); n + 1];
        let mut w2 = vec![T::zero(); n + 1];
        let mut w2b = vec![T::zero(); n + 1];
        let mut buf = vec![T::zero(); n + 1];
        fill_bridge(&mut w1, rng);
        fill_bridge(&mut w2, rng);
        fill_bridge(&mut w2b, rng);
        [big_sigma2_sample(&w1, &w2, &w2b, b, &mut buf).to_f64_lossy()]
    });
    Ok(Estimate::from_accumulator(LABEL_BIG_SIGMA2, beta, cfg.seed, 0.0, salt::BIG_SIGMA2, acc))
}

/// `σ²(β) = 1 + β² E[A²]`, with `A²` replaced by the product of two
/// amplitudes built from independent inner bridges.
pub fn estimate_sigma2<T: Real>(beta: f64, cfg: &McConfig) -> Result<Estimate> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let b = T::lit(beta);
    let anti = cfg.antithetic_sigma2;
    let [acc] = mc::accumulate::<1, _>(cfg.seed, salt::SIGMA2, cfg.n_outer, |rng| {
        let mut paths = [(); 4].map(|_| vec![T::zero(); n + 1]);
        for p in paths.iter_mut() {
            fill_bridge(p, rng);
        }
        let [w1, w3, w2, w2b] = &paths;
        let mut scratch = Sigma2Scratch::new(n);
        let mut v = scratch.sample(b, w1, w2, w2b, w3);
        if anti {
            let neg = paths.clone().map(|p| p.into_iter().map(|x| -x).collect::<Vec<T>>());
            let [m1, m3, m2, m2b] = &neg;
            v = (v + scratch.sample(b, m1, m2, m2b, m3)) / T::lit(2.0);
        }
        [v.to_f64_lossy()]
    });
    Ok(Estimate::from_accumulator(LABEL_SIGMA2, beta, cfg.seed, 1.0, salt::SIGMA2, acc))
}

/// `γ̂` on the grid `n` and on `2n` from the same Brownian drivers.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct RefinementReport {
    pub coarse: Estimate,
    pub fine: Estimate,
    /// Paired difference `coarse − fine`.
    pub difference: Estimate,
}

impl RefinementReport {
    /// `|γ̂_n − γ̂_2n| ≤ k · sqrt(SE_n² + SE_2n²)`.
    pub fn consistent(&self, k: f64) -> bool {
        let se = self.coarse.std_error.hypot(self.fine.std_error);
        (self.coarse.value - self.fine.value).abs() <= k * se
    }
}

pub fn gamma_refinement<T: Real>(beta: f64, cfg: &McConfig) -> Result<RefinementReport> {
    cfg.validate()?;
    let n = cfg.n_grid;
    let b = T::lit(beta);
    let anti = cfg.antithetic_gamma;
    let [coarse, fine, diff] = mc::accumulate::<3, _>(cfg.seed, salt::GAMMA, cfg.n_outer, |rng| {
        let mut w = BridgePath::<T>::zero(2 * n);
        fill_bridge(w.values_mut(), rng);
        let f2 = gamma_integrand(&w, b, anti).to_f64_lossy();
        let c = w.coarsen().expect("grid of at least 4 intervals");
        let f1 = gamma_integrand(&c, b, anti).to_f64_lossy();
        [f1, f2, f1 - f2]
    });
    let mk = |label: &str, acc| Estimate::from_accumulator(label, beta, cfg.seed, 0.0, salt::GAMMA, acc);
    Ok(RefinementReport {
        coarse: mk("gamma_coarse", coarse),
        fine: mk("gamma_fine", fine),
        difference: mk("gamma_coarse_minus_fine", diff),
    })
}

#[cfg(test)]
mod tests;
