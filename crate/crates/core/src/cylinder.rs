//! The polymer lifted from the ring to the cylinder `ℝ ⊃ ℤ + ring`, so that
//! the number of times a path wraps around is kept.
//!
//! Two bookkeeping schemes are provided:
//!
//! * [`WindingDensity`] stores the quenched law over `(winding k, site)` for
//!   `|k| ≤ K` and evolves it with the unwrapped kernel taps. Mass pushed past
//!   `±K` is dropped and reported as `leak`.
//! * [`MomentField`] stores, per ring site, the partition function `G` and
//!   the first two displacement moments `M1`, `M2` summed over all windings.
//!   One step uses the folded kernel moments
//!   `G' = K₀(wG)`, `M1' = K₀(wM1) + K₁(wG)`, `M2' = K₀(wM2) + 2K₁(wM1) + K₂(wG)`,
//!   which is exact with no winding cutoff.
//!
//! Orientation: displacements are `end − start` internally. The winding
//! functionals `ψ`, `φ` and `𝒲` report `ORIENTATION · E[end − start]`, i.e.
//! the mean of `start − end`, where "end" is the late time `s` and "start" is
//! time 0.

use rand::Rng;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::bridge::BridgePath;
use crate::error::{Error, Result};
use crate::estimate::{Accumulator, Estimate};
use crate::lattice::{
    evolve, evolve_backward, Density, Field, LatticeConfig, LatticeDisorder, StepKernel,
};
use crate::mc;
use crate::rng::{salt, RngStream};
use crate::Real;

/// Largest tolerated fraction of mass lost past the winding cutoff.
pub const LEAK_BUDGET: f64 = 1e-8;

/// Relative conditioning mass below which `ψ` is undefined.
pub const CONDITIONING_FLOOR: f64 = 1e-14;

/// Sign applied to `E[end − start]` by every winding functional.
pub const ORIENTATION: f64 = -1.0;

pub const LABEL_V_OVER_T: &str = "V_over_t";
pub const LABEL_EX2_OVER_T: &str = "EX2_over_t";
pub const LABEL_EV_OVER_T: &str = "EV_over_t";

/// Winding cutoff for a run of total time `t`: the two-sided `N(0, t)` tail
/// beyond `K` is below [`LEAK_BUDGET`] with a factor two of headroom for the
/// heavier tails the disorder produces.
pub fn winding_radius(t: f64) -> usize {
    let mut z = 3.0;
    while erfc(z / std::f64::consts::SQRT_2) >= LEAK_BUDGET {
        z += 0.01;
    }
    (2.0 * z * t.max(0.0).sqrt()).ceil() as usize + 1
}

/// Quenched law over `(winding, site)`. Index `(k + K)·n + site` is the
/// real-line cell `k + site·dx`; weights are densities per cell width.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WindingDensity<T> {
    n_sites: usize,
    k_max: usize,
    weights: Vec<T>,
    /// True partition function is `exp(log_scale) · weights`.
    pub log_scale: f64,
    /// Fraction of mass lost past `±K` so far.
    pub leak: f64,
    /// Real-line position displacements are measured from.
    origin: f64,
}

impl<T: Real> WindingDensity<T> {
    /// Unit mass at `site` in winding layer 0.
    pub fn delta(n_sites: usize, k_max: usize, site: usize) -> Self {
        let mut weights = vec![T::zero(); (2 * k_max + 1) * n_sites];
        weights[k_max * n_sites + site] = T::lit(n_sites as f64);
        Self {
            n_sites,
            k_max,
            weights,
            log_scale: 0.0,
            leak: 0.0,
            origin: site as f64 / n_sites as f64,
        }
    }

    /// A ring density placed in winding layer 0.
    pub fn from_density(d: &Density<T>, k_max: usize) -> Self {
        let n = d.n();
        let mut weights = vec![T::zero(); (2 * k_max + 1) * n];
        weights[k_max * n..(k_max + 1) * n].copy_from_slice(&d.weights);
        Self {
            n_sites: n,
            k_max,
            weights,
            log_scale: 0.0,
            leak: 0.0,
            origin: 0.0,
        }
    }

    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn k_max(&self) -> usize {
        self.k_max
    }

    pub fn weights(&self) -> &[T] {
        &self.weights
    }

    pub fn weight(&self, k: i64, site: usize) -> T {
        let idx = (k + self.k_max as i64) as usize * self.n_sites + site;
        self.weights[idx]
    }

    /// Real-line position of cell `i`.
    fn position(&self, i: usize) -> f64 {
        let n = self.n_sites;
        (i / n) as f64 - self.k_max as f64 + (i % n) as f64 / n as f64
    }

    /// `Σ weights · dx`.
    pub fn mass(&self) -> f64 {
        self.weights.iter().map(|v| v.to_f64_lossy()).sum::<f64>() / self.n_sites as f64
    }

    /// Ring density obtained by summing over windings.
    pub fn marginal(&self) -> Result<Density<T>> {
        let n = self.n_sites;
        let mut out = vec![T::zero(); n];
        for layer in self.weights.chunks(n) {
            for (o, &v) in out.iter_mut().zip(layer) {
                *o += v;
            }
        }
        Density::from_unnormalized(out)
    }

    /// `P[k = j]` for `j = −K..=K`, index `j + K`.
    pub fn winding_marginal(&self) -> Vec<f64> {
        let layers: Vec<f64> = self
            .weights
            .chunks(self.n_sites)
            .map(|l| l.iter().map(|v| v.to_f64_lossy()).sum())
            .collect();
        let total: f64 = layers.iter().sum();
        layers.into_iter().map(|v| v / total).collect()
    }
}

/// Quenched endpoint mean and variance of the real-line displacement.
pub fn quenched_moments<T: Real>(state: &WindingDensity<T>) -> (f64, f64) {
    let mut s0 = 0.0;
    let mut s1 = 0.0;
    let mut s2 = 0.0;
    for (i, v) in state.weights.iter().enumerate() {
        let v = v.to_f64_lossy();
        if v == 0.0 {
            continue;
        }
        let x = state.position(i) - state.origin;
        s0 += v;
        s1 += v * x;
        s2 += v * x * x;
    }
    let mean = s1 / s0;
    (mean, (s2 / s0 - mean * mean).max(0.0))
}

/// `dst[i] = Σ_d u(d) src[i − d]`, dropping anything that leaves the line.
fn convolve_line<T: Real>(kernel: &StepKernel<T>, src: &[T], dst: &mut [T]) {
    let taps = kernel.taps();
    let r = kernel.reach();
    let len = src.len();
    for (i, o) in dst.iter_mut().enumerate() {
        let lo = i.saturating_sub(r);
        let hi = (i + r).min(len - 1);
        let mut s = T::zero();
        // taps index of d = i − j is i − j + r.
        for j in lo..=hi {
            s += taps[i + r - j] * src[j];
        }
        *o = s;
    }
}

fn check_sites(got: usize, want: usize) -> Result<()> {
    if got != want {
        return Err(Error::GridMismatch { left: got, right: want });
    }
    Ok(())
}

/// Records the fraction `kept` of mass that survived the cutoff in one step
/// and renormalizes to `1 − leak`.
fn account<T: Real>(state: &mut WindingDensity<T>, kept: f64, budget: f64) -> Result<()> {
    let total: f64 = state.weights.iter().map(|v| v.to_f64_lossy()).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(Error::DegeneratePropagator(total));
    }
    state.leak = (1.0 - (1.0 - state.leak) * kept.min(1.0)).max(0.0);
    let dx = 1.0 / state.n_sites as f64;
    let c = (1.0 - state.leak) / (total * dx);
    let ct = T::lit(c);
    for v in state.weights.iter_mut() {
        *v *= ct;
    }
    state.log_scale -= c.ln();
    if state.leak > budget {
        return Err(Error::Truncation {
            leak: state.leak,
            budget,
        });
    }
    Ok(())
}

fn total<T: Real>(v: &[T]) -> f64 {
    v.iter().map(|x| x.to_f64_lossy()).sum()
}

/// [`evolve_winding_with_budget`] with the default [`LEAK_BUDGET`].
pub fn evolve_winding<T: Real>(
    state: &WindingDensity<T>,
    disorder: &LatticeDisorder<T>,
    from: usize,
    to: usize,
) -> Result<WindingDensity<T>> {
    evolve_winding_with_budget(state, disorder, from, to, LEAK_BUDGET)
}

/// Forward evolution with the unwrapped kernel. Fails with a truncation
/// error as soon as the accumulated leak exceeds `budget`.
pub fn evolve_winding_with_budget<T: Real>(
    state: &WindingDensity<T>,
    disorder: &LatticeDisorder<T>,
    from: usize,
    to: usize,
    budget: f64,
) -> Result<WindingDensity<T>> {
    disorder.check_range(from, to)?;
    check_sites(state.n_sites, disorder.n_sites())?;
    let n = state.n_sites;
    let mut st = state.clone();
    let mut w = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); st.weights.len()];
    for step in from..to {
        disorder.weights_into(step, &mut w);
        let mut full = 0.0;
        for (i, (t, &z)) in tmp.iter_mut().zip(&st.weights).enumerate() {
            *t = z * w[i % n];
            full += t.to_f64_lossy();
        }
        convolve_line(disorder.kernel(), &tmp, &mut st.weights);
        let kept = total(&st.weights) / full;
        account(&mut st, kept, budget)?;
    }
    Ok(st)
}

/// Adjoint evolution `b ← w ⊙ (Uᵀ b)` on the line over steps `to−1` down to
/// `from`. The result at cell `x'` is the partition function from `x'` at
/// step `from` to the terminal weights at step `to`.
pub fn evolve_winding_backward<T: Real>(
    terminal: &WindingDensity<T>,
    disorder: &LatticeDisorder<T>,
    from: usize,
    to: usize,
    budget: f64,
) -> Result<WindingDensity<T>> {
    disorder.check_range(from, to)?;
    check_sites(terminal.n_sites, disorder.n_sites())?;
    let n = terminal.n_sites;
    let mut st = terminal.clone();
    let mut w = vec![T::zero(); n];
    let mut tmp = vec![T::zero(); st.weights.len()];
    for step in (from..to).rev() {
        disorder.weights_into(step, &mut w);
        let full = total(&st.weights);
        // Taps are symmetric, so the transpose convolution is the same sum.
        convolve_line(disorder.kernel(), &st.weights, &mut tmp);
        let kept = total(&tmp) / full;
        for (i, (o, &t)) in st.weights.iter_mut().zip(&tmp).enumerate() {
            *o = t * w[i % n];
        }
        account(&mut st, kept, budget)?;
    }
    Ok(st)
}

fn backward_from_site<T: Real>(disorder: &LatticeDisorder<T>, s_step: usize, y_site: usize) -> Result<WindingDensity<T>> {
    let n = disorder.n_sites();
    if y_site >= n {
        return Err(Error::param("y_site", format!("{y_site} is not a site of a ring of {n}")));
    }
    let k = winding_radius(s_step as f64 * disorder.dt());
    evolve_winding_backward(&WindingDensity::delta(n, k, y_site), disorder, 0, s_step, LEAK_BUDGET)
}

/// `ψ(s, y)`: mean of `start − y` over polymers from `y` at step `s` back
/// to a start on the integers (ring site 0) at step 0.
pub fn psi<T: Real>(disorder: &LatticeDisorder<T>, s_step: usize, y_site: usize) -> Result<f64> {
    if s_step == 0 {
        return Err(Error::param("s_step", "must be at least 1"));
    }
    let b = backward_from_site(disorder, s_step, y_site)?;
    let n = b.n_sites;
    let y = y_site as f64 / n as f64;
    let total: f64 = b.weights.iter().map(|v| v.to_f64_lossy()).sum();
    let mut mass = 0.0;
    let mut first = 0.0;
    for layer in 0..=2 * b.k_max {
        let v = b.weights[layer * n].to_f64_lossy();
        let k = layer as f64 - b.k_max as f64;
        mass += v;
        first += v * (k - y);
    }
    if mass < CONDITIONING_FLOOR * total {
        return Err(Error::DegenerateConditioning(mass / total));
    }
    Ok(first / mass)
}

/// `φ(s, y)`: as [`psi`] but with the start weighted by `exp(β W)` at every
/// site instead of conditioned on ring site 0.
pub fn phi<T: Real>(disorder: &LatticeDisorder<T>, w: &BridgePath<T>, s_step: usize, y_site: usize) -> Result<f64> {
    check_sites(w.n(), disorder.n_sites())?;
    let b = backward_from_site(disorder, s_step, y_site)?;
    let n = b.n_sites;
    let y = y_site as f64 / n as f64;
    let beta = T::lit(disorder.beta());
    let start: Vec<f64> = w.values()[..n].iter().map(|&v| (beta * v).exp().to_f64_lossy()).collect();
    let mut mass = 0.0;
    let mut first = 0.0;
    for (i, v) in b.weights.iter().enumerate() {
        let v = v.to_f64_lossy() * start[i % n];
        mass += v;
        first += v * (b.position(i) - y);
    }
    Ok(first / mass)
}

/// Partition function and displacement moments per ring site, summed over
/// windings. True values are `exp(log_scale)` times the stored ones.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentField<T> {
    pub g: Vec<T>,
    pub m1: Vec<T>,
    pub m2: Vec<T>,
    pub log_scale: f64,
}

impl<T: Real> MomentField<T> {
    /// Start weights with zero displacement.
    pub fn from_field(f: &Field<T>) -> Self {
        let n = f.values.len();
        Self {
            g: f.values.clone(),
            m1: vec![T::zero(); n],
            m2: vec![T::zero(); n],
            log_scale: f.log_scale,
        }
    }

    pub fn from_density(d: &Density<T>) -> Self {
        Self::from_field(&Field::from_density(d))
    }

    /// Quenched mean and variance of `end − start` over all end sites.
    pub fn quenched_moments(&self) -> (f64, f64) {
        let s0: f64 = self.g.iter().map(|v| v.to_f64_lossy()).sum();
        let s1: f64 = self.m1.iter().map(|v| v.to_f64_lossy()).sum();
        let s2: f64 = self.m2.iter().map(|v| v.to_f64_lossy()).sum();
        let mean = s1 / s0;
        (mean, (s2 / s0 - mean * mean).max(0.0))
    }

    /// `ORIENTATION · Σ μ M1 / Σ μ G`.
    pub fn winding(&self, mu: &Density<T>) -> f64 {
        let mut num = 0.0;
        let mut den = 0.0;
        for ((&m, &g), &u) in self.m1.iter().zip(&self.g).zip(&mu.weights) {
            let u = u.to_f64_lossy();
            num += u * m.to_f64_lossy();
            den += u * g.to_f64_lossy();
        }
        ORIENTATION * num / den
    }

    /// `ORIENTATION · M1/G` at every site.
    pub fn winding_profile(&self) -> Vec<f64> {
        self.m1
            .iter()
            .zip(&self.g)
            .map(|(&m, &g)| ORIENTATION * m.to_f64_lossy() / g.to_f64_lossy())
            .collect()
    }

    /// `log G` at every site.
    pub fn log_partition(&self) -> Vec<f64> {
        self.g.iter().map(|v| v.to_f64_lossy().ln() + self.log_scale).collect()
    }
}

struct MomentScratch<T> {
    w: Vec<T>,
    a: Vec<T>,
    b: Vec<T>,
    c: Vec<T>,
}

impl<T: Real> MomentScratch<T> {
    fn new(n: usize) -> Self {
        Self {
            w: vec![T::zero(); n],
            a: vec![T::zero(); n],
            b: vec![T::zero(); n],
            c: vec![T::zero(); n],
        }
    }

    /// One step; leaves `w ⊙ G` (before the step) in `self.a`.
    fn step(&mut self, st: &mut MomentField<T>, disorder: &LatticeDisorder<T>, step: usize) {
        let k = disorder.kernel();
        disorder.weights_into(step, &mut self.w);
        for i in 0..self.w.len() {
            self.a[i] = self.w[i] * st.g[i];
            self.b[i] = self.w[i] * st.m1[i];
            self.c[i] = self.w[i] * st.m2[i];
        }
        k.apply(0, &self.a, &mut st.g);
        k.apply(0, &self.b, &mut st.m1);
        k.apply_add(1, T::one(), &self.a, &mut st.m1);
        k.apply(0, &self.c, &mut st.m2);
        k.apply_add(1, T::lit(2.0), &self.b, &mut st.m2);
        k.apply_add(2, T::one(), &self.a, &mut st.m2);
        let m = st.g.iter().fold(T::zero(), |acc, &v| acc.max(v));
        if m > T::zero() && m.is_finite() {
            let inv = T::one() / m;
            for v in st.g.iter_mut().chain(st.m1.iter_mut()).chain(st.m2.iter_mut()) {
                *v *= inv;
            }
            st.log_scale += m.to_f64_lossy().ln();
        }
    }
}

pub fn evolve_moments<T: Real>(
    state: &MomentField<T>,
    disorder: &LatticeDisorder<T>,
    from: usize,
    to: usize,
) -> Result<MomentField<T>> {
    disorder.check_range(from, to)?;
    check_sites(state.g.len(), disorder.n_sites())?;
    let mut st = state.clone();
    let mut scratch = MomentScratch::new(st.g.len());
    for step in from..to {
        scratch.step(&mut st, disorder, step);
    }
    Ok(st)
}

/// `𝒲(s; μ, ν)`: winding of polymers from `μ` at step `s` to `ν` at step 0.
pub fn winding_number<T: Real>(
    disorder: &LatticeDisorder<T>,
    s_step: usize,
    mu: &Density<T>,
    nu: &Density<T>,
) -> Result<f64> {
    if s_step == 0 {
        return Err(Error::param("s_step", "must be at least 1"));
    }
    check_sites(mu.n(), disorder.n_sites())?;
    let f = evolve_moments(&MomentField::from_density(nu), disorder, 0, s_step)?;
    Ok(f.winding(mu))
}

/// `ψ(s, ·)` at every site from one forward run started at ring site 0.
pub fn psi_profile<T: Real>(disorder: &LatticeDisorder<T>, s_step: usize) -> Result<Vec<f64>> {
    let n = disorder.n_sites();
    let f = evolve_moments(&MomentField::from_field(&Field::delta(n, 0)), disorder, 0, s_step)?;
    Ok(f.winding_profile())
}

/// `φ(s, ·)` at every site from one forward run started at `exp(βW)`.
pub fn phi_profile<T: Real>(disorder: &LatticeDisorder<T>, w: &BridgePath<T>, s_step: usize) -> Result<Vec<f64>> {
    check_sites(w.n(), disorder.n_sites())?;
    let start = Field::exp_bridge(w, T::lit(disorder.beta()));
    let f = evolve_moments(&MomentField::from_field(&start), disorder, 0, s_step)?;
    Ok(f.winding_profile())
}

/// Raw winding-resolved partition functions over one window, one explicit
/// run per start site.
#[derive(Clone, Debug)]
pub struct WindingKernel<T> {
    n_sites: usize,
    j_max: usize,
    pub from_step: usize,
    pub to_step: usize,
    log_scales: Vec<f64>,
    /// Index `(x_prev · n + x) · (2J + 1) + (j + J)`.
    z: Vec<T>,
}

impl<T: Real> WindingKernel<T> {
    pub fn n_sites(&self) -> usize {
        self.n_sites
    }

    pub fn j_max(&self) -> usize {
        self.j_max
    }

    /// `Z(x + j ← x_prev)` over the window, as `f64`.
    pub fn value(&self, x_prev: usize, x: usize, j: i64) -> f64 {
        if j.unsigned_abs() as usize > self.j_max {
            return 0.0;
        }
        let width = 2 * self.j_max + 1;
        let idx = (x_prev * self.n_sites + x) * width + (j + self.j_max as i64) as usize;
        self.z[idx].to_f64_lossy() * self.log_scales[x_prev].exp()
    }
}

pub fn winding_kernel<T: Real>(disorder: &LatticeDisorder<T>, from: usize, to: usize) -> Result<WindingKernel<T>> {
    disorder.check_range(from, to)?;
    let n = disorder.n_sites();
    let j_max = winding_radius((to - from) as f64 * disorder.dt());
    let width = 2 * j_max + 1;
    let mut z = vec![T::zero(); n * n * width];
    let mut log_scales = vec![0.0; n];
    for x_prev in 0..n {
        let st = evolve_winding(&WindingDensity::delta(n, j_max, x_prev), disorder, from, to)?;
        log_scales[x_prev] = st.log_scale;
        for layer in 0..width {
            for x in 0..n {
                z[(x_prev * n + x) * width + layer] = st.weights[layer * n + x];
            }
        }
    }
    Ok(WindingKernel {
        n_sites: n,
        j_max,
        from_step: from,
        to_step: to,
        log_scales,
        z,
    })
}

/// Law of an integer random variable, `probs[i] = P[X = min + i]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntegerLaw {
    pub min: i64,
    pub probs: Vec<f64>,
}

impl IntegerLaw {
    pub fn prob(&self, j: i64) -> f64 {
        let i = j - self.min;
        if i < 0 || i as usize >= self.probs.len() {
            0.0
        } else {
            self.probs[i as usize]
        }
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// `E|X|^p`.
    pub fn abs_moment(&self, p: f64) -> f64 {
        self.probs
            .iter()
            .enumerate()
            .map(|(i, q)| q * ((self.min + i as i64) as f64).abs().powf(p))
            .sum()
    }
}

/// Law of the winding increment `η` of one window given the ring sites at
/// its two ends.
pub fn eta_law<T: Real>(kernel: &WindingKernel<T>, x_prev: usize, x: usize) -> IntegerLaw {
    let j = kernel.j_max as i64;
    let raw: Vec<f64> = (-j..=j).map(|k| kernel.value(x_prev, x, k)).collect();
    let total: f64 = raw.iter().sum();
    IntegerLaw {
        min: -j,
        probs: raw.into_iter().map(|v| v / total).collect(),
    }
}

/// Law of `Y = Σ η` along consecutive windows started at `x0`, summed over
/// the final site.
pub fn chain_winding_law<T: Real>(kernels: &[WindingKernel<T>], x0: usize) -> Result<IntegerLaw> {
    let first = kernels.first().ok_or_else(|| Error::param("kernels", "need at least one window"))?;
    let n = first.n_sites;
    for pair in kernels.windows(2) {
        if pair[0].to_step != pair[1].from_step || pair[1].n_sites != n {
            return Err(Error::param("kernels", "windows must be contiguous on one ring"));
        }
    }
    let span: usize = kernels.iter().map(|k| k.j_max).sum();
    let width = 2 * span + 1;
    // state[x · width + (Y + span)]
    let mut state = vec![0.0f64; n * width];
    state[x0 * width + span] = 1.0;
    let dx = 1.0 / n as f64;
    for k in kernels {
        let jm = k.j_max as i64;
        let mut next = vec![0.0f64; n * width];
        for x in 0..n {
            for yi in 0..width {
                let p = state[x * width + yi];
                if p == 0.0 {
                    continue;
                }
                for x2 in 0..n {
                    for j in -jm..=jm {
                        let v = k.value(x, x2, j);
                        if v != 0.0 {
                            let target = (yi as i64 + j) as usize;
                            next[x2 * width + target] += p * v * dx;
                        }
                    }
                }
            }
        }
        let total: f64 = next.iter().sum();
        state = next.into_iter().map(|v| v / total).collect();
    }
    let mut probs = vec![0.0; width];
    for x in 0..n {
        for yi in 0..width {
            probs[yi] += state[x * width + yi];
        }
    }
    Ok(IntegerLaw {
        min: -(span as i64),
        probs,
    })
}

/// `g̃(t, y) = ∫ dx G_{t,0}(x, y) e^{βW(y)} / ∫ G_{t,0}(x, y') e^{βW(y')} dy'`.
///
/// Evaluated as `e^{βW} ⊙ Gᵀ(1/Z_W)` with `Z_W` the forward evolution of
/// `e^{βW}`. The result is not renormalized, so its unit mass is a check.
pub fn tilde_g<T: Real>(disorder: &LatticeDisorder<T>, w1: &BridgePath<T>, t_step: usize) -> Result<Density<T>> {
    check_sites(w1.n(), disorder.n_sites())?;
    let start = Field::exp_bridge(w1, T::lit(disorder.beta()));
    let zw = evolve(&start, disorder, 0, t_step)?;
    let inv = Field {
        values: zw.values.iter().map(|&v| T::one() / v).collect(),
        log_scale: -zw.log_scale,
    };
    let back = evolve_backward(&inv, disorder, 0, t_step)?;
    let scale = back.log_scale.exp();
    let weights = start
        .values
        .iter()
        .zip(&back.values)
        .map(|(&e, &b)| T::lit(e.to_f64_lossy() * b.to_f64_lossy() * scale))
        .collect();
    Ok(Density { weights })
}

/// `φ̃(y_j) = ∫₀^{y_j} (g̃ − 1)` by the trapezoid rule on the periodic grid,
/// `j = 0..=n`; the last entry closes the loop and is zero up to rounding.
pub fn tilde_phi<T: Real>(g: &Density<T>) -> Vec<T> {
    let n = g.n();
    let h = T::lit(1.0 / n as f64);
    let half = T::lit(0.5);
    let mut out = Vec::with_capacity(n + 1);
    let mut acc = T::zero();
    out.push(acc);
    for j in 0..n {
        let a = g.weights[j] - T::one();
        let b = g.weights[(j + 1) % n] - T::one();
        acc += (a + b) * half * h;
        out.push(acc);
    }
    out
}

/// Per-realization quantities of [`annealed_stats`].
#[derive(Clone, Copy, Debug)]
struct PolymerDraw {
    x: f64,
    v: f64,
    endpoint: f64,
}

/// Forward moment run from a delta at site 0 plus one exact endpoint sample
/// of the quenched polymer, drawn backwards through the stored `w ⊙ G`.
fn polymer_draw<T: Real, R: Rng + ?Sized>(disorder: &LatticeDisorder<T>, t_steps: usize, rng: &mut R) -> PolymerDraw {
    let n = disorder.n_sites();
    let mut st = MomentField::from_field(&Field::<T>::delta(n, 0));
    let mut scratch = MomentScratch::new(n);
    let mut stored = vec![T::zero(); t_steps * n];
    for step in 0..t_steps {
        scratch.step(&mut st, disorder, step);
        stored[step * n..(step + 1) * n].copy_from_slice(&scratch.a);
    }
    let (x, v) = st.quenched_moments();

    let kernel = disorder.kernel();
    let row = kernel.row();
    let taps = kernel.taps();
    let reach = kernel.reach() as i64;
    let mut probs = vec![0.0f64; n];
    let pick = |probs: &[f64], rng: &mut R| -> usize {
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        for (i, &p) in probs.iter().enumerate() {
            if u < p {
                return i;
            }
            u -= p;
        }
        probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
    };
    for (p, g) in probs.iter_mut().zip(&st.g) {
        *p = g.to_f64_lossy();
    }
    let mut site = pick(&probs, rng);
    let mut displacement: i64 = 0;
    let mut class = Vec::with_capacity(8);
    for step in (0..t_steps).rev() {
        let a = &stored[step * n..(step + 1) * n];
        for (prev, p) in probs.iter_mut().enumerate() {
            *p = (row[(site + n - prev) % n] * a[prev]).to_f64_lossy();
        }
        let prev = pick(&probs, rng);
        // Unwrapped jump d ≡ site − prev (mod n), weighted by its tap.
        let m = ((site + n - prev) % n) as i64;
        class.clear();
        let mut d = m - ((m + reach) / n as i64) * n as i64;
        while d <= reach {
            if d >= -reach {
                class.push((d, taps[(d + reach) as usize].to_f64_lossy()));
            }
            d += n as i64;
        }
        let weights: Vec<f64> = class.iter().map(|c| c.1).collect();
        displacement += class[pick(&weights, rng)].0;
        site = prev;
    }
    PolymerDraw {
        x,
        v,
        endpoint: displacement as f64 / n as f64,
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AnnealedStats {
    pub t: f64,
    /// `V_t / t` with `V_t = E X_t² + E 𝒱_t`.
    pub v_over_t: Estimate,
    pub ex2_over_t: Estimate,
    pub ev_over_t: Estimate,
    /// Quenched means `X_t`, one per realization.
    pub x_samples: Vec<f64>,
    /// One polymer endpoint displacement per realization.
    pub endpoint_samples: Vec<f64>,
    /// Realization index of each kept sample (its streams are `salt ^ index`).
    pub sample_ids: Vec<u64>,
    /// Realizations dropped for non-finite output.
    pub n_excluded: u64,
}

/// Annealed endpoint statistics of the point-to-line polymer started at
/// site 0, over `n_disorder` independent realizations.
pub fn annealed_stats<T: Real>(
    beta: f64,
    t_steps: usize,
    n_disorder: u64,
    cfg: &LatticeConfig,
) -> Result<AnnealedStats> {
    if n_disorder < 2 {
        return Err(Error::param("n_disorder", "need at least 2 realizations"));
    }
    if t_steps == 0 {
        return Err(Error::param("t_steps", "must be at least 1"));
    }
    let kernel = cfg.kernel::<T>()?;
    let seed = cfg.seed;
    let draws: Vec<PolymerDraw> = mc::collect(seed, salt::DISORDER, n_disorder, |i, rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, t_steps, seed, salt::DISORDER ^ i, rng);
        let mut thermal = RngStream::for_sample(seed, salt::THERMAL, i).rng();
        polymer_draw(&d, t_steps, &mut thermal)
    });
    let t = t_steps as f64 * cfg.dt;
    let mut v = Accumulator::new();
    let mut ex2 = Accumulator::new();
    let mut ev = Accumulator::new();
    let mut x_samples = Vec::with_capacity(draws.len());
    let mut endpoint_samples = Vec::with_capacity(draws.len());
    let mut sample_ids = Vec::with_capacity(draws.len());
    let mut n_excluded = 0;
    for (i, d) in draws.into_iter().enumerate() {
        if !(d.x.is_finite() && d.v.is_finite() && d.endpoint.is_finite()) {
            n_excluded += 1;
            continue;
        }
        v.push((d.x * d.x + d.v) / t);
        ex2.push(d.x * d.x / t);
        ev.push(d.v / t);
        x_samples.push(d.x);
        endpoint_samples.push(d.endpoint);
        sample_ids.push(i as u64);
    }
    let mk = |label, acc| Estimate::from_accumulator(label, beta, seed, 0.0, salt::DISORDER, acc);
    Ok(AnnealedStats {
        t,
        v_over_t: mk(LABEL_V_OVER_T, v),
        ex2_over_t: mk(LABEL_EX2_OVER_T, ex2),
        ev_over_t: mk(LABEL_EV_OVER_T, ev),
        x_samples,
        endpoint_samples,
        sample_ids,
        n_excluded,
    })
}

/// Disorder mean of the quenched variance `𝒱_t` (not divided by `t`).
pub fn mean_quenched_variance<T: Real>(
    beta: f64,
    t_steps: usize,
    n_disorder: u64,
    cfg: &LatticeConfig,
) -> Result<Estimate> {
    if n_disorder < 2 {
        return Err(Error::param("n_disorder", "need at least 2 realizations"));
    }
    let kernel = cfg.kernel::<T>()?;
    let n = cfg.n_sites;
    let seed = cfg.seed;
    let [acc] = mc::accumulate::<1, _>(seed, salt::DISORDER, n_disorder, |rng| {
        let d = LatticeDisorder::generate_with(kernel.clone(), beta, t_steps, seed, 0, rng);
        let f = evolve_moments(&MomentField::from_field(&Field::<T>::delta(n, 0)), &d, 0, t_steps)
            .expect("shapes agree by construction");
        [f.quenched_moments().1]
    });
    Ok(Estimate::from_accumulator("EV_t", beta, seed, 0.0, salt::DISORDER, acc))
}
