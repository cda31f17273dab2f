//! Brownian bridges on `[0, 1]` sampled on a uniform dyadic grid, and the
//! exponential functionals built from them.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::{normal, RngStream};
use crate::Real;

/// Grid values of a Brownian bridge pinned to zero at `y = 0` and `y = 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct BridgePath<T> {
    values: Vec<T>,
}

impl<T: Real> BridgePath<T> {
    pub fn zero(n: usize) -> Self {
        Self {
            values: vec![T::zero(); n + 1],
        }
    }

    /// Wraps grid values `W(j/n)`, `j = 0..=n`. Both ends must be exactly zero.
    pub fn from_values(values: Vec<T>) -> Result<Self> {
        if values.len() < 3 {
            return Err(Error::param("values", "a bridge needs at least 2 intervals"));
        }
        if values[0] != T::zero() || values[values.len() - 1] != T::zero() {
            return Err(Error::param("values", "bridge endpoints must be exactly 0"));
        }
        Ok(Self { values })
    }

    /// Number of grid intervals.
    pub fn n(&self) -> usize {
        self.values.len() - 1
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn y(&self, j: usize) -> T {
        T::lit(j as f64 / self.n() as f64)
    }

    /// Every other grid point: an exact bridge sample on the grid of size `n/2`
    /// driven by the same Brownian path.
    pub fn coarsen(&self) -> Result<Self> {
        let n = self.n();
        if n % 2 != 0 || n < 4 {
            return Err(Error::param("n", format!("cannot halve a grid of {n} intervals")));
        }
        Ok(Self {
            values: self.values.iter().step_by(2).copied().collect(),
        })
    }

    pub fn check_same_grid(&self, other: &Self) -> Result<()> {
        if self.n() != other.n() {
            return Err(Error::GridMismatch {
                left: self.n(),
                right: other.n(),
            });
        }
        Ok(())
    }
}

fn check_resolution(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::param("n", format!("{n} is not a power of two >= 2")));
    }
    Ok(())
}

/// Draws one bridge from `stream`.
pub fn sample_bridge<T: Real>(n: usize, stream: &RngStream) -> Result<BridgePath<T>> {
    sample_bridge_with(n, &mut stream.rng())
}

/// Draws one bridge from an already positioned generator: Brownian increments
/// of variance `1/n`, then `W(y) = B(y) - y B(1)`.
pub fn sample_bridge_with<T: Real, R: Rng + ?Sized>(n: usize, rng: &mut R) -> Result<BridgePath<T>> {
    check_resolution(n)?;
    let mut path = BridgePath::zero(n);
    fill_bridge(&mut path.values, rng);
    Ok(path)
}

/// Refills `values` (length `n + 1`) in place with a fresh bridge.
pub(crate) fn fill_bridge<T: Real, R: Rng + ?Sized>(values: &mut [T], rng: &mut R) {
    let n = values.len() - 1;
    let sd = T::lit((1.0 / n as f64).sqrt());
    let mut b = T::zero();
    values[0] = T::zero();
    for v in values[1..].iter_mut() {
        b += sd * normal::<T, _>(rng);
        *v = b;
    }
    let end = values[n];
    let inv_n = T::lit(1.0 / n as f64);
    for (j, v) in values.iter_mut().enumerate().skip(1) {
        *v -= T::lit(j as f64) * inv_n * end;
    }
    values[n] = T::zero();
}

pub fn negate<T: Real>(path: &BridgePath<T>) -> BridgePath<T> {
    BridgePath {
        values: path.values.iter().map(|&v| -v).collect(),
    }
}

/// Trapezoid rule on `[0, 1]` for grid values `f(j/n)`.
#[inline]
pub fn trapezoid<T: Real>(f: &[T]) -> T {
    let n = f.len() - 1;
    let half = T::lit(0.5);
    let mut s = (f[0] + f[n]) * half;
    for &v in &f[1..n] {
        s += v;
    }
    s / T::lit(n as f64)
}

/// `log ∫₀¹ exp(β W(y)) dy`, evaluated with the largest exponent factored out.
pub fn log_partition_functional<T: Real>(path: &BridgePath<T>, beta: T) -> T {
    log_exp_integral(&path.values, beta)
}

/// `log ∫₀¹ exp(β f(y)) dy` on the trapezoid grid.
#[inline]
pub(crate) fn log_exp_integral<T: Real>(f: &[T], beta: T) -> T {
    let n = f.len() - 1;
    let mut shift = T::neg_infinity();
    for &v in f {
        shift = shift.max(beta * v);
    }
    let half = T::lit(0.5);
    let mut s = ((beta * f[0] - shift).exp() + (beta * f[n] - shift).exp()) * half;
    for &v in &f[1..n] {
        s += (beta * v - shift).exp();
    }
    shift + (s / T::lit(n as f64)).ln()
}

/// Trapezoid value of `∫₀¹ exp(β W(y)) dy`. Always finite and positive for
/// finite inputs; exactly 1 when `β = 0` or the path is identically zero.
pub fn partition_functional<T: Real>(path: &BridgePath<T>, beta: T) -> T {
    let f = &path.values;
    let n = f.len() - 1;
    let mut shift = T::neg_infinity();
    for &v in f {
        shift = shift.max(beta * v);
    }
    let half = T::lit(0.5);
    let mut s = ((beta * f[0] - shift).exp() + (beta * f[n] - shift).exp()) * half;
    for &v in &f[1..n] {
        s += (beta * v - shift).exp();
    }
    shift.exp() * (s / T::lit(n as f64))
}
