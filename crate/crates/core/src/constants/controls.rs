//! Control variates for the `γ` integrand.
//!
//! With `m = ∫W` and `q = ∫W²` (trapezoid on the bridge grid) the controls
//! are `cosh(2βm)`, `m²` and `q`. `m` is a centred Gaussian whose variance on
//! the grid is computed exactly below, so all three means are known without
//! quadrature error. The coefficients come from a least-squares fit on a
//! pilot run drawn from its own salt; the main run then averages
//! `f − c·(x − E x)`, which stays unbiased.

use crate::bridge::{fill_bridge, trapezoid};
use crate::error::Result;
use crate::mc;
use crate::rng::salt;
use crate::Real;

use super::{gamma_integrand, BridgePath, McConfig};

const PILOT_SAMPLES: u64 = 8192;

pub(super) struct GammaControls {
    coef: [f64; 3],
    means: [f64; 3],
}

impl GammaControls {
    pub(super) fn correction<T: Real>(&self, beta: f64, w: &[T]) -> f64 {
        let x = features(beta, w);
        (0..3).map(|k| self.coef[k] * (x[k] - self.means[k])).sum()
    }
}

fn features<T: Real>(beta: f64, w: &[T]) -> [f64; 3] {
    let m = trapezoid(w).to_f64_lossy();
    let mut q = T::zero();
    let n = w.len() - 1;
    let half = T::lit(0.5);
    q += (w[0] * w[0] + w[n] * w[n]) * half;
    for &v in &w[1..n] {
        q += v * v;
    }
    let q = q.to_f64_lossy() / n as f64;
    [(2.0 * beta * m).cosh(), m * m, q]
}

/// Variance of the trapezoid mean `Σ wⱼ W(yⱼ)` of a grid bridge.
///
/// Writing `W(yⱼ) = Bⱼ − yⱼ Bₙ` with `Bⱼ` a sum of independent increments of
/// variance `1/n`, the mean is `Σₖ aₖ ξₖ` where `aₖ = Σ_{j≥k} wⱼ − Σⱼ wⱼ yⱼ`.
pub(crate) fn grid_mean_variance(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    let weight = |j: usize| if j == 0 || j == n { 0.5 * h } else { h };
    let first_moment: f64 = (0..=n).map(|j| weight(j) * j as f64 * h).sum();
    let mut tail = 0.0;
    let mut var = 0.0;
    for k in (1..=n).rev() {
        tail += weight(k);
        let a = tail - first_moment;
        var += a * a * h;
    }
    var
}

/// `E ∫W²` on the grid: `Σ wⱼ yⱼ (1 − yⱼ)`.
pub(crate) fn grid_square_mean(n: usize) -> f64 {
    let h = 1.0 / n as f64;
    (0..=n)
        .map(|j| {
            let y = j as f64 * h;
            let w = if j == 0 || j == n { 0.5 * h } else { h };
            w * y * (1.0 - y)
        })
        .sum()
}

pub(super) fn fit_gamma_controls<T: Real>(beta: f64, cfg: &McConfig) -> Result<GammaControls> {
    let n = cfg.n_grid;
    let v = grid_mean_variance(n);
    let means = [(2.0 * beta * beta * v).exp(), v, grid_square_mean(n)];
    let b = T::lit(beta);
    let anti = cfg.antithetic_gamma;
    let pilot: Vec<(f64, [f64; 3])> = mc::collect(cfg.seed, salt::GAMMA_PILOT, PILOT_SAMPLES, |_, rng| {
        let mut w = BridgePath::<T>::zero(n);
        fill_bridge(w.values_mut(), rng);
        (gamma_integrand(&w, b, anti).to_f64_lossy(), features(beta, w.values()))
    });
    Ok(GammaControls {
        coef: least_squares(&pilot),
        means,
    })
}

/// Regression coefficients of `f` on the three centred features.
fn least_squares(samples: &[(f64, [f64; 3])]) -> [f64; 3] {
    let n = samples.len() as f64;
    let mut fbar = 0.0;
    let mut xbar = [0.0; 3];
    for (f, x) in samples {
        fbar += f / n;
        for k in 0..3 {
            xbar[k] += x[k] / n;
        }
    }
    let mut a = [[0.0; 4]; 3];
    for (f, x) in samples {
        let dx = [x[0] - xbar[0], x[1] - xbar[1], x[2] - xbar[2]];
        for i in 0..3 {
            for j in 0..3 {
                a[i][j] += dx[i] * dx[j];
            }
            a[i][3] += dx[i] * (f - fbar);
        }
    }
    solve3(a).unwrap_or([0.0; 3])
}

/// Gaussian elimination with partial pivoting on an augmented 3×4 system.
fn solve3(mut a: [[f64; 4]; 3]) -> Option<[f64; 3]> {
    let scale = (0..3).map(|i| a[i][i].abs()).fold(0.0, f64::max);
    if scale == 0.0 || !scale.is_finite() {
        return None;
    }
    for col in 0..3 {
        let pivot = (col..3).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() <= 1e-13 * scale {
            return None;
        }
        a.swap(col, pivot);
        for row in col + 1..3 {
            let f = a[row][col] / a[col][col];
            for k in col..4 {
                a[row][k] -= f * a[col][k];
            }
        }
    }
    let mut x = [0.0; 3];
    for row in (0..3).rev() {
        let mut s = a[row][3];
        for k in row + 1..3 {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bridge::sample_bridge;
    use crate::estimate::Accumulator;
    use crate::rng::RngStream;

    #[test]
    fn grid_mean_variance_brute_force() {
        // Σᵢⱼ wᵢ wⱼ (min(yᵢ,yⱼ) − yᵢ yⱼ) by direct double sum.
        for n in [2usize, 8, 64] {
            let h = 1.0 / n as f64;
            let w = |j: usize| if j == 0 || j == n { 0.5 * h } else { h };
            let mut brute = 0.0;
            for i in 0..=n {
                for j in 0..=n {
                    let (yi, yj) = (i as f64 * h, j as f64 * h);
                    brute += w(i) * w(j) * (yi.min(yj) - yi * yj);
                }
            }
            assert!((grid_mean_variance(n) - brute).abs() < 1e-15, "n={n}");
        }
        assert!((grid_mean_variance(1 << 14) - 1.0 / 12.0).abs() < 1e-8);
    }

    #[test]
    fn control_means_match_sampling() {
        let n = 64;
        let beta = 1.5;
        let v = grid_mean_variance(n);
        let exact = [(2.0 * beta * beta * v).exp(), v, grid_square_mean(n)];
        let mut acc = [Accumulator::new(); 3];
        for i in 0..100_000 {
            let w: BridgePath<f64> = sample_bridge(n, &RngStream::new(5, i)).unwrap();
            let x = features(beta, w.values());
            for k in 0..3 {
                acc[k].push(x[k]);
            }
        }
        for k in 0..3 {
            assert!(
                (acc[k].mean() - exact[k]).abs() < 4.0 * acc[k].std_error(),
                "control {k}: {} vs {}",
                acc[k].mean(),
                exact[k]
            );
        }
    }

    #[test]
    fn solve3_recovers_coefficients() {
        let a = [[4.0, 1.0, 0.5, 4.0 + 2.0 + 1.5], [1.0, 3.0, 0.2, 1.0 + 6.0 + 0.6], [0.5, 0.2, 2.0, 0.5 + 0.4 + 6.0]];
        let x = solve3(a).unwrap();
        for (got, want) in x.iter().zip([1.0, 2.0, 3.0]) {
            assert!((got - want).abs() < 1e-12);
        }
        assert!(solve3([[0.0; 4]; 3]).is_none());
    }
}
