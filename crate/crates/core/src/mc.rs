//! Deterministic block-parallel Monte Carlo driver.
//!
//! Samples are grouped into fixed blocks of [`BLOCK`] consecutive indices.
//! Each block is reduced sequentially and the block accumulators are merged in
//! index order, so the result is bit-identical for any thread count.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::estimate::Accumulator;
use crate::rng::RngStream;

pub const BLOCK: u64 = 2048;

/// Runs `n_samples` draws of `sample`, each seeded from stream `salt ^ i`,
/// and accumulates the `K` components it returns.
pub fn accumulate<const K: usize, F>(seed: u64, salt: u64, n_samples: u64, sample: F) -> [Accumulator; K]
where
    F: Fn(&mut ChaCha8Rng) -> [f64; K] + Sync,
{
    let n_blocks = n_samples.div_ceil(BLOCK);
    let blocks: Vec<[Accumulator; K]> = (0..n_blocks)
        .into_par_iter()
        .map(|b| {
            let mut acc = [Accumulator::new(); K];
            let end = ((b + 1) * BLOCK).min(n_samples);
            for i in b * BLOCK..end {
                let mut rng = RngStream::for_sample(seed, salt, i).rng();
                let values = sample(&mut rng);
                for (a, v) in acc.iter_mut().zip(values) {
                    a.push(v);
                }
            }
            acc
        })
        .collect();
    blocks.iter().fold([Accumulator::new(); K], |mut total, block| {
        for (t, b) in total.iter_mut().zip(block) {
            *t = t.merge(b);
        }
        total
    })
}

/// Maps every sample index to an output, in index order.
pub fn collect<T, F>(seed: u64, salt: u64, n_samples: u64, sample: F) -> Vec<T>
where
    T: Send,
    F: Fn(u64, &mut ChaCha8Rng) -> T + Sync,
{
    (0..n_samples)
        .into_par_iter()
        .map(|i| {
            let mut rng = RngStream::for_sample(seed, salt, i).rng();
            sample(i, &mut rng)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::normal;

    #[test]
    fn thread_count_does_not_change_bits() {
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
            pool.install(|| {
                accumulate::<1, _>(11, 0x77 << 48, 10_000, |rng| [normal::<f64, _>(rng).exp()])
            })
        };
        let a = run(1);
        let b = run(4);
        assert_eq!(a[0].mean().to_bits(), b[0].mean().to_bits());
        assert_eq!(a[0].variance().to_bits(), b[0].variance().to_bits());
    }
}
