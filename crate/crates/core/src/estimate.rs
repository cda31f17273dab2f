//! Monte Carlo result records and their mergeable accumulators.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Single-pass mean/variance accumulator (Welford, merged with Chan's rule).
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Accumulator {
    n: u64,
    mean: f64,
    m2: f64,
}

impl Accumulator {
    pub fn new() -> Self {
        Self::default()
    }

    #[inline]
    pub fn push(&mut self, x: f64) {
        self.n += 1;
        let delta = x - self.mean;
        self.mean += delta / self.n as f64;
        self.m2 += delta * (x - self.mean);
    }

    pub fn merge(&self, other: &Accumulator) -> Accumulator {
        if self.n == 0 {
            return *other;
        }
        if other.n == 0 {
            return *self;
        }
        let n = self.n + other.n;
        let (na, nb) = (self.n as f64, other.n as f64);
        let delta = other.mean - self.mean;
        let mean = self.mean + delta * nb / n as f64;
        let m2 = self.m2 + other.m2 + delta * delta * na * nb / n as f64;
        Accumulator { n, mean, m2 }
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.mean
    }

    /// Unbiased sample variance; zero for fewer than two samples.
    pub fn variance(&self) -> f64 {
        if self.n < 2 {
            0.0
        } else {
            (self.m2 / (self.n - 1) as f64).max(0.0)
        }
    }

    pub fn std_error(&self) -> f64 {
        if self.n == 0 {
            0.0
        } else {
            (self.variance() / self.n as f64).sqrt()
        }
    }
}

impl FromIterator<f64> for Accumulator {
    fn from_iter<I: IntoIterator<Item = f64>>(iter: I) -> Self {
        let mut acc = Accumulator::new();
        for x in iter {
            acc.push(x);
        }
        acc
    }
}

/// A Monte Carlo estimate: `value = offset + mean(samples)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub std_error: f64,
    pub n_samples: u64,
    pub seed: u64,
    pub beta: f64,
    pub label: String,
    /// Deterministic part added to the sample mean (e.g. the `1 +` in σ²).
    pub offset: f64,
    /// Lowest stream id that fed this estimate; fixes the merge order.
    pub first_stream: u64,
    pub acc: Accumulator,
}

impl Estimate {
    pub fn from_accumulator(
        label: impl Into<String>,
        beta: f64,
        seed: u64,
        offset: f64,
        first_stream: u64,
        acc: Accumulator,
    ) -> Self {
        Self {
            value: offset + acc.mean(),
            std_error: acc.std_error(),
            n_samples: acc.count(),
            seed,
            beta,
            label: label.into(),
            offset,
            first_stream,
            acc,
        }
    }

    /// An exactly known value with no sampling error.
    pub fn exact(label: impl Into<String>, beta: f64, seed: u64, value: f64, n: u64) -> Self {
        let acc = Accumulator {
            n,
            mean: 0.0,
            m2: 0.0,
        };
        Self::from_accumulator(label, beta, seed, value, 0, acc)
    }

    /// `|value - target| <= k * std_error`
    pub fn within(&self, target: f64, k: f64) -> bool {
        (self.value - target).abs() <= k * self.std_error
    }
}

/// Combines partial estimates of the same quantity. Partials are folded in
/// ascending `first_stream` order, so the result does not depend on the
/// order they are passed in.
pub fn merge(partials: &[Estimate]) -> Result<Estimate> {
    let first = partials
        .first()
        .ok_or_else(|| Error::MergeMismatch("no partial estimates".into()))?;
    for p in partials {
        if p.label != first.label {
            return Err(Error::MergeMismatch(format!(
                "label `{}` vs `{}`",
                p.label, first.label
            )));
        }
        if p.beta.to_bits() != first.beta.to_bits() {
            return Err(Error::MergeMismatch(format!("beta {} vs {}", p.beta, first.beta)));
        }
        if p.offset.to_bits() != first.offset.to_bits() || p.seed != first.seed {
            return Err(Error::MergeMismatch("offset or seed differ".into()));
        }
    }
    let mut ordered: Vec<&Estimate> = partials.iter().collect();
    ordered.sort_by_key(|p| p.first_stream);
    let acc = ordered
        .iter()
        .fold(Accumulator::new(), |acc, p| acc.merge(&p.acc));
    Ok(Estimate::from_accumulator(
        first.label.clone(),
        first.beta,
        first.seed,
        first.offset,
        ordered[0].first_stream,
        acc,
    ))
}
