//! Deterministic randomness.
//!
//! Every random draw in a run comes from a stream derived from
//! `(seed, iteration, purpose, index)`. Streams are independent of how many
//! function evaluations happen between draws, so a run is reproducible and
//! estimator variants that skip evaluations stay aligned with their
//! full-evaluation counterparts.

use rand::distributions::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{CcoError, Result};
use crate::scalar::Scalar;

/// What a derived stream is used for; part of the stream key.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum StreamKind {
    /// Estimator initialization draws at iteration 0.
    Init,
    /// Outer block batch (the per-iteration subset of S or S1 / positives).
    OuterBlocks,
    /// Middle block batch (S2 / negatives).
    MiddleBlocks,
    /// Per-block inner sample batch (data subsampling).
    InnerSamples,
    /// Per-example instance sub-batch in multi-instance pooling.
    InstanceBatch,
    /// Diagnostics probes.
    Probe,
}

impl StreamKind {
    fn tag(self) -> u64 {
        match self {
            StreamKind::Init => 0x01,
            StreamKind::OuterBlocks => 0x02,
            StreamKind::MiddleBlocks => 0x03,
            StreamKind::InnerSamples => 0x04,
            StreamKind::InstanceBatch => 0x05,
            StreamKind::Probe => 0x06,
        }
    }
}

/// SplitMix64 finalizer; decorrelates nearby keys.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn derive(seed: u64, parts: &[u64]) -> u64 {
    let mut h = mix(seed);
    for p in parts {
        h = mix(h ^ *p);
    }
    h
}

/// Stateless factory of per-(iteration, purpose, index) RNG streams.
#[derive(Clone, Copy, Debug)]
pub struct RngFactory {
    seed: u64,
}

impl RngFactory {
    pub fn new(seed: u64) -> Self {
        RngFactory { seed }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Fresh stream for one purpose at one iteration. `index` distinguishes
    /// per-block (or per-pair) streams within the same purpose.
    pub fn stream(&self, iteration: u64, kind: StreamKind, index: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(derive(self.seed, &[iteration, kind.tag(), index]))
    }
}

/// Draws `batch_size` distinct ids uniformly without replacement from
/// `0..population_size`, advancing `rng` deterministically.
pub fn sample_blocks<R: Rng>(
    rng: &mut R,
    population_size: usize,
    batch_size: usize,
) -> Result<Vec<usize>> {
    if batch_size == 0 || batch_size > population_size {
        return Err(CcoError::invalid_config(format!(
            "batch size {batch_size} out of range for population {population_size}"
        )));
    }
    Ok(rand::seq::index::sample(rng, population_size, batch_size).into_vec())
}

/// Draws `count` sample ids without replacement from a (possibly very large)
/// sample space, as `u64` ids.
pub fn sample_ids<R: Rng>(rng: &mut R, space: u64, count: usize) -> Result<Vec<u64>> {
    if space <= usize::MAX as u64 {
        Ok(sample_blocks(rng, space as usize, count)?
            .into_iter()
            .map(|i| i as u64)
            .collect())
    } else {
        // astronomically unlikely to collide; draw independently
        Ok((0..count).map(|_| rng.gen::<u64>() % space).collect())
    }
}

/// Standard normal draw converted into the scalar type. Sampling happens in
/// f64 so that f32 and f64 runs consume identical randomness.
pub fn standard_normal<T: Scalar, R: Rng>(rng: &mut R) -> T {
    let x: f64 = StandardNormal.sample(rng);
    T::of(x)
}
