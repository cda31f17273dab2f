//! Cross-check of `σ²` against the replica prediction
//! `σ² = −(β³/2) · d/dβ (Σ²/β⁴)`.
//!
//! The derivative is a central difference of the per-sample quantity
//! `S(b) = F_b F'_b / b²` (so `E S(b) = Σ²(b)/b⁴`), with the same three bridges
//! used at every `b`. Steps `h` and `h/2` are evaluated together; their gap
//! gives a Richardson estimate of the `O(h²)` truncation term.

use serde::{Deserialize, Serialize};

use crate::bridge::{fill_bridge, log_exp_integral};
use crate::error::{Error, Result};
use crate::estimate::Estimate;
use crate::mc;
use crate::rng::salt;
use crate::Real;

use super::{sum_into, McConfig};

pub const LABEL_BRUNET: &str = "sigma2_brunet";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum BrunetVerdict {
    Supports,
    Contradicts,
}

impl std::fmt::Display for BrunetVerdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Supports => "SUPPORTS",
            Self::Contradicts => "CONTRADICTS",
        })
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BrunetReport {
    pub beta: f64,
    pub h: f64,
    /// Central difference with step `h`.
    pub rhs: Estimate,
    /// Same drivers, step `h/2`.
    pub rhs_half: Estimate,
    /// `(4/3)(rhs_h − rhs_{h/2})`: estimated truncation error of `rhs`.
    pub truncation: f64,
}

impl BrunetReport {
    pub fn combined_se(&self, direct: &Estimate) -> f64 {
        direct.std_error.hypot(self.rhs.std_error)
    }

    /// `|σ̂² − rhs| ≤ 3·combined SE + |O(h²) term|`.
    pub fn consistent(&self, direct: &Estimate) -> bool {
        (direct.value - self.rhs.value).abs() <= 3.0 * self.combined_se(direct) + self.truncation.abs()
    }

    pub fn verdict(&self, direct: &Estimate) -> BrunetVerdict {
        if self.consistent(direct) {
            BrunetVerdict::Supports
        } else {
            BrunetVerdict::Contradicts
        }
    }
}

fn check(beta: f64, h: f64) -> Result<()> {
    if !(beta > 0.0) {
        return Err(Error::Domain(format!("the relation is stated for beta > 0, got {beta}")));
    }
    if !(h > 0.0 && h < beta / 2.0) {
        return Err(Error::param("h", format!("{h} is outside (0, beta/2)")));
    }
    Ok(())
}

/// `−(β³/2) · d/dβ (f(β)/β⁴)` by a central difference of step `h`.
pub fn brunet_operator(f: impl Fn(f64) -> f64, beta: f64, h: f64) -> Result<f64> {
    check(beta, h)?;
    let g = |b: f64| f(b) / b.powi(4);
    Ok(-0.5 * beta.powi(3) * (g(beta + h) - g(beta - h)) / (2.0 * h))
}

pub fn brunet_rhs<T: Real>(beta: f64, h: f64, cfg: &McConfig) -> Result<BrunetReport> {
    check(beta, h)?;
    cfg.validate()?;
    let n = cfg.n_grid;
    let betas = [beta + h, beta - h, beta + h / 2.0, beta - h / 2.0];
    let pref = -0.5 * beta.powi(3);
    let [full, half] = mc::accumulate::<2, _>(cfg.seed, salt::BRUNET, cfg.n_outer, |rng| {
        let mut w1 = vec![T::zero(); n + 1];
        let mut w2 = vec![T::zero(); n + 1];
        let mut w2b = vec![T::zero(); n + 1];
        let mut s1 = vec![T::zero(); n + 1];
        let mut s2 = vec![T::zero(); n + 1];
        fill_bridge(&mut w1, rng);
        fill_bridge(&mut w2, rng);
        fill_bridge(&mut w2b, rng);
        sum_into(&mut s1, &w1, &w2);
        sum_into(&mut s2, &w1, &w2b);
        let s = betas.map(|b| {
            let bt = T::lit(b);
            let l = log_exp_integral(&s1, bt) + log_exp_integral(&s2, bt);
            (-l).exp().to_f64_lossy() / (b * b)
        });
        [
            pref * (s[0] - s[1]) / (2.0 * h),
            pref * (s[2] - s[3]) / h,
        ]
    });
    let rhs = Estimate::from_accumulator(LABEL_BRUNET, beta, cfg.seed, 0.0, salt::BRUNET, full);
    let rhs_half = Estimate::from_accumulator(LABEL_BRUNET, beta, cfg.seed, 0.0, salt::BRUNET, half);
    let truncation = 4.0 / 3.0 * (rhs.value - rhs_half.value);
    Ok(BrunetReport {
        beta,
        h,
        rhs,
        rhs_half,
        truncation,
    })
}
