//! Periodic stochastic heat equation on a ring of `n_sites` cells.
//!
//! One time step is `Z ← K · (Z ⊙ w)`: multiply by independent log-normal
//! weights `w = exp(β g √(dt/dx) − β² dt/(2dx))` (mean exactly one), then
//! diffuse with the periodized Gaussian kernel `K` of variance `dt`. The
//! unwrapped kernel taps are kept as well so the cylinder code can track
//! integer displacements.
//!
//! Long evolutions are stored as `values · exp(log_scale)`, renormalized by
//! the running maximum after every step.

use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bridge::BridgePath;
use crate::error::{Error, Result};
use crate::rng::{normal, RngStream};
use crate::Real;

/// Unwrapped Gaussian mass beyond the kernel reach.
pub const TRUNCATION_MASS: f64 = 1e-14;

/// Number of standard deviations whose two-sided tail mass is below
/// [`TRUNCATION_MASS`].
pub(crate) fn tail_sigmas() -> f64 {
    let mut z = 5.0;
    while erfc(z / std::f64::consts::SQRT_2) >= TRUNCATION_MASS {
        z += 0.01;
    }
    z
}

/// Heat step of duration `dt` on `n_sites` cells of width `dx = 1/n_sites`.
#[derive(Clone, Debug)]
pub struct StepKernel<T> {
    n_sites: usize,
    dt: f64,
    reach: usize,
    /// `u(d)` for `d = −reach..=reach`, summing to one.
    taps: Vec<T>,
    /// Folded moments `Σ_{d ≡ m} (d dx)^p u(d)` for `p = 0, 1, 2`.
    folded: [Vec<T>; 3],
    /// Dense circulants `F_p[i][j] = folded_p[(i − j) mod n]`.
    dense: [Vec<T>; 3],
    /// `F_0` transposed.
    dense_t: Vec<T>,
}

pub fn step_kernel<T: Real>(dt: f64, n_sites: usize) -> Result<StepKernel<T>> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::param("dt", format!("{dt} is not a positive time step")));
    }
    if n_sites < 2 {
        return Err(Error::param("n_sites", format!("need at least 2 sites, got {n_sites}")));
    }
    let n = n_sites;
    let dx = 1.0 / n as f64;
    let reach = (tail_sigmas() * dt.sqrt() / dx).ceil() as usize;
    let raw: Vec<f64> = (-(reach as i64)..=reach as i64)
        .map(|d| {
            let x = d as f64 * dx;
            (-x * x / (2.0 * dt)).exp()
        })
        .collect();
    let total: f64 = raw.iter().sum();
    let taps_f: Vec<f64> = raw.iter().map(|u| u / total).collect();
    let mut folded = [vec![0.0f64; n], vec![0.0f64; n], vec![0.0f64; n]];
    for (k, &u) in taps_f.iter().enumerate() {
        let d = k as i64 - reach as i64;
        let m = d.rem_euclid(n as i64) as usize;
        let x = d as f64 * dx;
        folded[0][m] += u;
        folded[1][m] += x * u;
        folded[2][m] += x * x * u;
    }
    // Folding sums many taps per residue; restore an exact unit row sum.
    let row_sum: f64 = folded[0].iter().sum();
    for f in folded.iter_mut() {
        for v in f.iter_mut() {
            *v /= row_sum;
        }
    }
    let dense_of = |f: &[f64]| -> Vec<T> {
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(T::lit(f[(i + n - j) % n]));
            }
        }
        out
    };
    let dense = [dense_of(&folded[0]), dense_of(&folded[1]), dense_of(&folded[2])];
    let mut dense_t = vec![T::zero(); n * n];
    for i in 0..n {
        for j in 0..n {
            dense_t[j * n + i] = dense[0][i * n + j];
        }
    }
    let conv = |v: &[f64]| v.iter().map(|&x| T::lit(x)).collect::<Vec<T>>();
    Ok(StepKernel {
        n_sites,
        dt,
        reach,
        taps: conv(&taps_f),
        folded: [conv(&folded[0]), conv(&folded[1]), conv(&folded[2])],
        dense,
        dense_t,
    })
}

impl<T: Real> StepKernel<T> {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn dx(&self) -> f64 {
        1.0 / self.n_sites as f64
    }

    /// Largest site displacement kept in one step.
    pub fn reach(&self) -> usize {
        self.reach
    }

    /// Unwrapped taps `u(d)`, index `d + reach`.
    pub fn taps(&self) -> &[T] {
        &self.taps
    }

    /// Periodic transition probabilities `K(m)`, `m = 0..n_sites`.
    pub fn row(&self) -> &[T] {
        &self.folded[0]
    }

    /// `Σ_{d ≡ m} (d dx)^p u(d)` for `p` in `0..3`.
    pub fn folded_moment(&self, p: usize) -> &[T] {
        &self.folded[p]
    }

    /// The step as a density propagator `K(x − y)/dx`.
    pub fn matrix(&self) -> PropagatorMatrix<T> {
        let inv_dx = T::lit(self.n_sites as f64);
        PropagatorMatrix {
            n: self.n_sites,
            entries: self.dense[0].iter().map(|&v| v * inv_dx).collect(),
            log_scale: 0.0,
            t_from: 0,
            t_to: 1,
        }
    }

    /// `out = F_p · v`.
    #[inline]
    pub(crate) fn apply(&self, p: usize, v: &[T], out: &mut [T]) {
        matvec(&self.dense[p], v, out);
    }

    /// `out += c · F_p · v`.
    #[inline]
    pub(crate) fn apply_add(&self, p: usize, c: T, v: &[T], out: &mut [T]) {
        let n = self.n_sites;
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.dense[p][i * n..(i + 1) * n];
            *o += c * dot(row, v);
        }
    }

    /// `out = F_0ᵀ · v`.
    #[inline]
    pub(crate) fn apply_transpose(&self, v: &[T], out: &mut [T]) {
        matvec(&self.dense_t, v, out);
    }
}

#[inline]
fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    // Four partial sums let the compiler keep several lanes busy.
    let mut acc = [T::zero(); 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        for l in 0..4 {
            acc[l] += a[4 * c + l] * b[4 * c + l];
        }
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for k in 4 * chunks..a.len() {
        s += a[k] * b[k];
    }
    s
}

#[inline]
fn matvec<T: Real>(m: &[T], v: &[T], out: &mut [T]) {
    let n = v.len();
    for (i, o) in out.iter_mut().enumerate() {
        *o = dot(&m[i * n..(i + 1) * n], v);
    }
}

/// Grid and seed shared by every lattice experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub n_sites: usize,
    pub dt: f64,
    pub seed: u64,
}

impl Default for LatticeConfig {
    fn default() -> Self {
        Self {
            n_sites: 64,
            dt: 1.0 / 64.0,
            seed: 0,
        }
    }
}

impl LatticeConfig {
    pub fn new(n_sites: usize, seed: u64) -> Self {
        Self {
            n_sites,
            dt: 1.0 / n_sites as f64,
            seed,
        }
    }

    /// Number of steps covering time `t`, rounded to the nearest step.
    pub fn steps(&self, t: f64) -> usize {
        (t / self.dt).round() as usize
    }

    pub fn kernel<T: Real>(&self) -> Result<Arc<StepKernel<T>>> {
        Ok(Arc::new(step_kernel(self.dt, self.n_sites)?))
    }
}

/// Cell-averaged space-time white noise for `n_steps` steps.
#[derive(Clone, Debug)]
pub struct LatticeDisorder<T> {
    gaussians: Vec<T>,
    n_steps: usize,
    beta: f64,
    seed: u64,
    stream_id: u64,
    kernel: Arc<StepKernel<T>>,
}

impl<T: Real> LatticeDisorder<T> {
    /// Standard normals drawn row by row from `(seed, stream_id)`.
    pub fn generate(kernel: Arc<StepKernel<T>>, beta: f64, n_steps: usize, seed: u64, stream_id: u64) -> Self {
        let mut rng = RngStream::new(seed, stream_id).rng();
        Self::generate_with(kernel, beta, n_steps, seed, stream_id, &mut rng)
    }

    pub(crate) fn generate_with<R: Rng + ?Sized>(
        kernel: Arc<StepKernel<T>>,
        beta: f64,
        n_steps: usize,
        seed: u64,
        stream_id: u64,
        rng: &mut R,
    ) -> Self {
        let len = n_steps * kernel.n_sites();
        let gaussians = (0..len).map(|_| normal::<T, _>(rng)).collect();
        Self {
            gaussians,
            n_steps,
            beta,
            seed,
            stream_id,
            kernel,
        }
    }

    /// Wraps given Gaussians, laid out step by step.
    pub fn from_gaussians(kernel: Arc<StepKernel<T>>, beta: f64, gaussians: Vec<T>) -> Result<Self> {
        let n = kernel.n_sites();
        if gaussians.len() % n != 0 {
            return Err(Error::param("gaussians", format!("length {} is not a multiple of {n}", gaussians.len())));
        }
        Ok(Self {
            n_steps: gaussians.len() / n,
            gaussians,
            beta,
            seed: 0,
            stream_id: 0,
            kernel,
        })
    }

    /// Disorder with every Gaussian set to zero: the weights are the constant
    /// `exp(−β² dt/(2dx))`, which at `β = 0` is the pure heat flow.
    pub fn zeros(kernel: Arc<StepKernel<T>>, beta: f64, n_steps: usize) -> Self {
        Self {
            gaussians: vec![T::zero(); n_steps * kernel.n_sites()],
            n_steps,
            beta,
            seed: 0,
            stream_id: 0,
            kernel,
        }
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn n_sites(&self) -> usize {
        self.kernel.n_sites()
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn stream_id(&self) -> u64 {
        self.stream_id
    }

    pub fn dt(&self) -> f64 {
        self.kernel.dt()
    }

    pub fn dx(&self) -> f64 {
        self.kernel.dx()
    }

    pub fn kernel(&self) -> &StepKernel<T> {
        &self.kernel
    }

    pub fn kernel_arc(&self) -> &Arc<StepKernel<T>> {
        &self.kernel
    }

    /// The Gaussians of one step.
    pub fn gaussians(&self, step: usize) -> &[T] {
        let n = self.n_sites();
        &self.gaussians[step * n..(step + 1) * n]
    }

    /// Site weights of `step`.
    pub fn weights_into(&self, step: usize, out: &mut [T]) {
        let c = (self.dt() / self.dx()).sqrt();
        let a = T::lit(self.beta * c);
        let comp = T::lit(0.5 * self.beta * self.beta * c * c);
        for (o, &g) in out.iter_mut().zip(self.gaussians(step)) {
            *o = (a * g - comp).exp();
        }
    }

    pub(crate) fn check_range(&self, from: usize, to: usize) -> Result<()> {
        if from > to || to > self.n_steps {
            return Err(Error::StepRange {
                from,
                to,
                n_steps: self.n_steps,
            });
        }
        Ok(())
    }
}

/// A positive field `values · exp(log_scale)` on the ring.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Field<T> {
    pub values: Vec<T>,
    pub log_scale: f64,
}

impl<T: Real> Field<T> {
    pub fn new(values: Vec<T>) -> Self {
        Self { values, log_scale: 0.0 }
    }

    pub fn constant(n: usize, c: T) -> Self {
        Self::new(vec![c; n])
    }

    /// Discrete delta `1/dx` at `site`.
    pub fn delta(n: usize, site: usize) -> Self {
        let mut values = vec![T::zero(); n];
        values[site] = T::lit(n as f64);
        Self::new(values)
    }

    /// `exp(β W(x))` at the ring sites `x = j/n`, `j < n`.
    pub fn exp_bridge(w: &BridgePath<T>, beta: T) -> Self {
        let n = w.n();
        Self::new(w.values()[..n].iter().map(|&v| (beta * v).exp()).collect())
    }

    pub fn from_density(d: &Density<T>) -> Self {
        Self::new(d.weights.clone())
    }

    /// `log Z` at every site.
    pub fn log_values(&self) -> Vec<f64> {
        self.values.iter().map(|v| v.to_f64_lossy().ln() + self.log_scale).collect()
    }

    pub(crate) fn renormalize(&mut self) {
        renormalize(&mut self.values, &mut self.log_scale);
    }
}

#[inline]
pub(crate) fn renormalize<T: Real>(values: &mut [T], log_scale: &mut f64) {
    let m = values.iter().fold(T::zero(), |a, &b| a.max(b));
    if m > T::zero() && m.is_finite() {
        let inv = T::one() / m;
        for v in values.iter_mut() {
            *v *= inv;
        }
        *log_scale += m.to_f64_lossy().ln();
    }
}

/// Forward evolution `Z ← K (Z ⊙ w)` over steps `from..to`.
pub fn evolve<T: Real>(state: &Field<T>, disorder: &LatticeDisorder<T>, from: usize, to: usize) -> Result<Field<T>> {
    disorder.check_range(from, to)?;
    check_len(state.values.len(), disorder.n_sites())?;
    let n = disorder.n_sites();
    let mut out = state.clone();
    let mut w = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    for step in from..to {
        disorder.weights_into(step, &mut w);
        for ((t, &z), &wi) in tmp.iter_mut().zip(&out.values).zip(&w) {
            *t = z * wi;
        }
        disorder.kernel().apply(0, &tmp, &mut out.values);
        out.renormalize();
    }
    Ok(out)
}

/// Adjoint evolution `b ← w ⊙ (Kᵀ b)` over steps `to−1` down to `from`.
pub fn evolve_backward<T: Real>(
    terminal: &Field<T>,
    disorder: &LatticeDisorder<T>,
    from: usize,
    to: usize,
) -> Result<Field<T>> {
    disorder.check_range(from, to)?;
    check_len(terminal.values.len(), disorder.n_sites())?;
    let n = disorder.n_sites();
    let mut out = terminal.clone();
    let mut w = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); n];
    for step in (from..to).rev() {
        disorder.weights_into(step, &mut w);
        disorder.kernel().apply_transpose(&out.values, &mut tmp);
        for ((o, &t), &wi) in out.values.iter_mut().zip(&tmp).zip(&w) {
            *o = t * wi;
        }
        out.renormalize();
    }
    Ok(out)
}

fn check_len(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::GridMismatch { left: got, right: want });
    }
    Ok(())
}

/// Discrete propagator `G_{t,s}(x, y) = exp(log_scale) · entries[x][y]`,
/// mass moving from `y` at step `s` to `x` at step `t`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PropagatorMatrix<T> {
    n: usize,
    entries: Vec<T>,
    pub log_scale: f64,
    pub t_from: usize,
    pub t_to: usize,
}

impl<T: Real> PropagatorMatrix<T> {
    pub fn n(&self) -> usize {
        self.n
    }

    /// Scaled entry; multiply by `exp(log_scale)` for the true value.
    pub fn get(&self, x: usize, y: usize) -> T {
        self.entries[x * self.n + y]
    }

    pub fn entries(&self) -> &[T] {
        &self.entries
    }

    /// True value of an entry as `f64`.
    pub fn value(&self, x: usize, y: usize) -> f64 {
        self.get(x, y).to_f64_lossy() * self.log_scale.exp()
    }

    /// `G_{t,s} · G_{s,r} · dx`.
    pub fn compose(&self, earlier: &Self) -> Result<Self> {
        if self.n != earlier.n {
            return Err(Error::GridMismatch {
                left: self.n,
                right: earlier.n,
            });
        }
        if earlier.t_to != self.t_from {
            return Err(Error::param(
                "earlier",
                format!("ends at step {} but the later factor starts at {}", earlier.t_to, self.t_from),
            ));
        }
        let n = self.n;
        let dx = T::lit(1.0 / n as f64);
        let mut entries = vec![T::zero(); n * n];
        for x in 0..n {
            for k in 0..n {
                let a = self.entries[x * n + k] * dx;
                for y in 0..n {
                    entries[x * n + y] += a * earlier.entries[k * n + y];
                }
            }
        }
        let mut log_scale = self.log_scale + earlier.log_scale;
        renormalize(&mut entries, &mut log_scale);
        Ok(Self {
            n,
            entries,
            log_scale,
            t_from: earlier.t_from,
            t_to: self.t_to,
        })
    }
}

/// Product of the one-step transfer matrices `K · diag(w)` over `s..t`,
/// divided by `dx`. At `s = t` this is the discrete delta `I/dx`.
pub fn propagator<T: Real>(disorder: &LatticeDisorder<T>, s_step: usize, t_step: usize) -> Result<PropagatorMatrix<T>> {
    if s_step > t_step {
        return Err(Error::param("s_step", format!("{s_step} is after t_step {t_step}")));
    }
    disorder.check_range(s_step, t_step)?;
    let n = disorder.n_sites();
    let mut entries = vec![T::zero(); n * n];
    for i in 0..n {
        entries[i * n + i] = T::lit(n as f64);
    }
    let mut log_scale = 0.0;
    let mut w = vec![T::zero(); n];
    let mut col = vec![T::zero(); n];
    let mut out = vec![T::zero(); n];
    for step in s_step..t_step {
        disorder.weights_into(step, &mut w);
        for y in 0..n {
            for x in 0..n {
                col[x] = entries[x * n + y] * w[x];
            }
            disorder.kernel().apply(0, &col, &mut out);
            for x in 0..n {
                entries[x * n + y] = out[x];
            }
        }
        renormalize(&mut entries, &mut log_scale);
    }
    Ok(PropagatorMatrix {
        n,
        entries,
        log_scale,
        t_from: s_step,
        t_to: t_step,
    })
}

/// Probability density on the ring: `Σ weights · dx = 1`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Density<T> {
    pub weights: Vec<T>,
}

impl<T: Real> Density<T> {
    pub fn uniform(n: usize) -> Self {
        Self {
            weights: vec![T::one(); n],
        }
    }

    pub fn delta(n: usize, site: usize) -> Self {
        Self {
            weights: Field::<T>::delta(n, site).values,
        }
    }

    /// Normalizes any nonnegative vector with positive total.
    pub fn from_unnormalized(values: Vec<T>) -> Result<Self> {
        let n = values.len();
        let total: T = values.iter().copied().sum::<T>() / T::lit(n as f64);
        if !(total > T::zero()) || !total.is_finite() || values.iter().any(|&v| v < T::zero()) {
            return Err(Error::DegeneratePropagator(total.to_f64_lossy()));
        }
        let inv = T::one() / total;
        Ok(Self {
            weights: values.into_iter().map(|v| v * inv).collect(),
        })
    }

    pub fn from_field(f: &Field<T>) -> Result<Self> {
        Self::from_unnormalized(f.values.clone())
    }

    /// `exp(βW)` normalized.
    pub fn exp_bridge(w: &BridgePath<T>, beta: T) -> Result<Self> {
        Self::from_field(&Field::exp_bridge(w, beta))
    }

    pub fn n(&self) -> usize {
        self.weights.len()
    }

    /// `Σ weights · dx`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / self.n() as f64
    }

    pub fn max_abs_diff(&self, other: &Self) -> f64 {
        self.weights
            .iter()
            .zip(&other.weights)
            .map(|(a, b)| (a.to_f64_lossy() - b.to_f64_lossy()).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    Forward,
    Backward,
}

/// Normalized image of `init` under `prop` (forward) or its transpose.
pub fn endpoint_density<T: Real>(
    prop: &PropagatorMatrix<T>,
    init: &Density<T>,
    direction: Direction,
) -> Result<Density<T>> {
    let n = prop.n();
    check_len(init.n(), n)?;
    let mut out = vec![T::zero(); n];
    for x in 0..n {
        for y in 0..n {
            match direction {
                Direction::Forward => out[x] += prop.get(x, y) * init.weights[y],
                Direction::Backward => out[x] += prop.get(y, x) * init.weights[y],
            }
        }
    }
    Density::from_unnormalized(out)
}

/// `ρ_b(t, terminal; s, ·) ⊙ ρ_f(s, ·; 0, initial)`, normalized.
pub fn midpoint_density<T: Real>(
    disorder: &LatticeDisorder<T>,
    t_step: usize,
    s_step: usize,
    terminal: &Density<T>,
    initial: &Density<T>,
) -> Result<Density<T>> {
    if s_step > t_step {
        return Err(Error::param("s_step", format!("{s_step} is after t_step {t_step}")));
    }
    let f = evolve(&Field::from_density(initial), disorder, 0, s_step)?;
    let b = evolve_backward(&Field::from_density(terminal), disorder, s_step, t_step)?;
    let prod = f.values.iter().zip(&b.values).map(|(&x, &y)| x * y).collect();
    Density::from_unnormalized(prod)
}

/// Height `h = log Z` and its increments `h(·) − h(0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeightField<T> {
    pub h: Vec<T>,
    pub increments: Vec<T>,
}

impl<T: Real> HeightField<T> {
    pub fn from_field(f: &Field<T>) -> Self {
        let h: Vec<T> = f.log_values().into_iter().map(T::lit).collect();
        let h0 = h[0];
        let mut increments: Vec<T> = h.iter().map(|&v| v - h0).collect();
        increments[0] = T::zero();
        Self { h, increments }
    }
}

/// `log` of the evolution of `exp(β W₁)` to `t_step`.
pub fn stationary_height<T: Real>(
    w1: &BridgePath<T>,
    disorder: &LatticeDisorder<T>,
    t_step: usize,
) -> Result<HeightField<T>> {
    check_len(w1.n(), disorder.n_sites())?;
    let beta = T::lit(disorder.beta());
    if t_step == 0 {
        // Exact initial condition, without the exp/log round trip.
        let h: Vec<T> = w1.values()[..w1.n()].iter().map(|&v| beta * v).collect();
        let increments = h.clone();
        return Ok(HeightField { h, increments });
    }
    let f = evolve(&Field::exp_bridge(w1, beta), disorder, 0, t_step)?;
    Ok(HeightField::from_field(&f))
}
