//! z-basis measurement statistics of singlet pairs.
//!
//! All parties measure in the same fixed basis, so a singlet behaves exactly
//! like a pair of perfectly anti-correlated fair coins. Outcomes are sampled
//! when Alice prepares a block and are carried along as predetermined results.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

/// Random stream used throughout the simulator.
pub type SimRng = ChaCha20Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EprError {
    #[error("flip probability {0} outside [0, 0.5]")]
    InvalidFlipProbability(f64),
    #[error("block must contain at least one pair")]
    EmptyBlock,
}

/// A spin component along z.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum SpinOutcome {
    #[serde(rename = "+")]
    Plus,
    #[serde(rename = "-")]
    Minus,
}

impl std::ops::Neg for SpinOutcome {
    type Output = SpinOutcome;

    fn neg(self) -> Self {
        match self {
            SpinOutcome::Plus => SpinOutcome::Minus,
            SpinOutcome::Minus => SpinOutcome::Plus,
        }
    }
}

impl SpinOutcome {
    /// +1 for `Plus`, -1 for `Minus`.
    pub fn sign(self) -> i8 {
        match self {
            SpinOutcome::Plus => 1,
            SpinOutcome::Minus => -1,
        }
    }

    pub fn is_opposite(self, other: SpinOutcome) -> bool {
        self != other
    }
}

impl fmt::Display for SpinOutcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SpinOutcome::Plus => "+",
            SpinOutcome::Minus => "-",
        })
    }
}

/// Outcomes of one singlet measured on both sides.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct PairOutcomes {
    pub i_side: SpinOutcome,
    pub j_side: SpinOutcome,
}

impl PairOutcomes {
    pub fn new(i_side: SpinOutcome, j_side: SpinOutcome) -> Self {
        PairOutcomes { i_side, j_side }
    }

    pub fn is_anti_correlated(&self) -> bool {
        self.i_side.is_opposite(self.j_side)
    }
}

/// Independent per-side outcome flips (binary symmetric channel).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    flip_probability: f64,
}

impl NoiseModel {
    pub const NOISELESS: NoiseModel = NoiseModel {
        flip_probability: 0.0,
    };

    pub fn new(flip_probability: f64) -> Result<Self, EprError> {
        if !(0.0..=0.5).contains(&flip_probability) {
            return Err(EprError::InvalidFlipProbability(flip_probability));
        }
        Ok(NoiseModel { flip_probability })
    }

    pub fn flip_probability(&self) -> f64 {
        self.flip_probability
    }

    pub fn is_noiseless(&self) -> bool {
        self.flip_probability == 0.0
    }

    /// Probability that a genuine pair still reads as anti-correlated.
    pub fn anti_correlation_rate(&self) -> f64 {
        let e = self.flip_probability;
        1.0 - 2.0 * e * (1.0 - e)
    }

    /// Probability that a check against the true pairing fails.
    pub fn honest_violation_rate(&self) -> f64 {
        1.0 - self.anti_correlation_rate()
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel::NOISELESS
    }
}

pub fn sample_singlet<R: Rng + ?Sized>(rng: &mut R) -> PairOutcomes {
    if rng.gen::<bool>() {
        PairOutcomes::new(SpinOutcome::Plus, SpinOutcome::Minus)
    } else {
        PairOutcomes::new(SpinOutcome::Minus, SpinOutcome::Plus)
    }
}

pub fn apply_noise<R: Rng + ?Sized>(
    pair: PairOutcomes,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<PairOutcomes, EprError> {
    // Re-check: the field is private but a deserialized model bypasses `new`.
    let noise = NoiseModel::new(noise.flip_probability)?;
    if noise.is_noiseless() {
        return Ok(pair);
    }
    let p = noise.flip_probability;
    let mut out = pair;
    if rng.gen_bool(p) {
        out.i_side = -out.i_side;
    }
    if rng.gen_bool(p) {
        out.j_side = -out.j_side;
    }
    Ok(out)
}

/// Samples `n` independent (noisy) pairs. Index `l` holds the pair with label `l + 1`.
pub fn sample_block<R: Rng + ?Sized>(
    n: usize,
    noise: NoiseModel,
    rng: &mut R,
) -> Result<Vec<PairOutcomes>, EprError> {
    if n == 0 {
        return Err(EprError::EmptyBlock);
    }
    (0..n)
        .map(|_| {
            let pair = sample_singlet(rng);
            apply_noise(pair, noise, rng)
        })
        .collect()
}

/// Named substreams carved out of a session seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Codebook,
    Preparation,
    BobStrategy,
    SonaiStrategy,
    Bits,
}

impl Stream {
    fn id(self) -> u64 {
        match self {
            Stream::Codebook => 1,
            Stream::Preparation => 2,
            Stream::BobStrategy => 3,
            Stream::SonaiStrategy => 4,
            Stream::Bits => 5,
        }
    }
}

/// Independent, reproducible random stream for one purpose within a session.
pub fn substream(seed: u64, stream: Stream) -> SimRng {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    rng.set_stream(stream.id());
    rng
}

/// Seed of the `index`-th child of `master` (e.g. one Monte Carlo trial).
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha20Rng::seed_from_u64(master);
    // Stream ids below 2^32 are taken by `Stream`.
    rng.set_stream((1u64 << 32) | index);
    rng.next_u64()
}
