//! Value types for samples and the deterministic randomness protocol.
//!
//! Every repeat of an experiment owns a [`Stream`] derived from a
//! [`SeedSpec`]. Derivation: the 64-bit key is
//! `splitmix64(splitmix64(base_seed) ^ repeat_index)`, which seeds a
//! ChaCha8 generator (`rand_chacha::ChaCha8Rng::seed_from_u64`). Independent
//! sub-streams of the same repeat use ChaCha's stream counter, so drawing
//! more from one never perturbs another.

use alloc::vec::Vec;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::{Error, Result};

/// One covariate-response pair.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledSample {
    pub x: Vec<f64>,
    pub y: f64,
}

impl LabeledSample {
    pub fn new(x: Vec<f64>, y: f64) -> Result<Self> {
        if !y.is_finite() || x.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput("labeled sample"));
        }
        Ok(LabeledSample { x, y })
    }
}

/// The four-way split used by one calibration problem, plus optional extra
/// labeled target samples for the oracle benchmark.
#[derive(Debug, Clone, PartialEq)]
pub struct DataBundle {
    target_labeled: Vec<LabeledSample>,
    target_unlabeled: Vec<Vec<f64>>,
    source_labeled: Vec<LabeledSample>,
    test: Vec<LabeledSample>,
    oracle_extra: Vec<LabeledSample>,
    dim: usize,
}

impl DataBundle {
    pub fn new(
        dim: usize,
        target_labeled: Vec<LabeledSample>,
        target_unlabeled: Vec<Vec<f64>>,
        source_labeled: Vec<LabeledSample>,
        test: Vec<LabeledSample>,
        oracle_extra: Vec<LabeledSample>,
    ) -> Result<Self> {
        if target_labeled.is_empty() {
            return Err(Error::EmptyInput("target labeled sample"));
        }
        if target_unlabeled.is_empty() {
            return Err(Error::EmptyInput("target unlabeled sample"));
        }
        if source_labeled.is_empty() {
            return Err(Error::EmptyInput("source labeled sample"));
        }
        let check = |x: &[f64]| {
            if x.len() == dim {
                Ok(())
            } else {
                Err(Error::DimensionMismatch {
                    expected: dim,
                    got: x.len(),
                })
            }
        };
        for s in target_labeled
            .iter()
            .chain(&source_labeled)
            .chain(&test)
            .chain(&oracle_extra)
        {
            check(&s.x)?;
        }
        for x in &target_unlabeled {
            check(x)?;
        }
        Ok(DataBundle {
            target_labeled,
            target_unlabeled,
            source_labeled,
            test,
            oracle_extra,
            dim,
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }
    pub fn target_labeled(&self) -> &[LabeledSample] {
        &self.target_labeled
    }
    pub fn target_unlabeled(&self) -> &[Vec<f64>] {
        &self.target_unlabeled
    }
    pub fn source_labeled(&self) -> &[LabeledSample] {
        &self.source_labeled
    }
    pub fn test(&self) -> &[LabeledSample] {
        &self.test
    }
    pub fn oracle_extra(&self) -> &[LabeledSample] {
        &self.oracle_extra
    }
}

/// Identifies the random stream of one repeat.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct SeedSpec {
    pub base_seed: u64,
    pub repeat_index: u64,
}

impl SeedSpec {
    pub fn new(base_seed: u64, repeat_index: u64) -> Self {
        SeedSpec {
            base_seed,
            repeat_index,
        }
    }

    /// The integer key fed to the generator.
    pub fn key(&self) -> u64 {
        splitmix64(splitmix64(self.base_seed) ^ self.repeat_index)
    }
}

/// SplitMix64 finalizer (Steele, Lea & Flood 2014).
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A deterministic pseudo-random stream.
#[derive(Debug, Clone)]
pub struct Stream {
    rng: ChaCha8Rng,
}

impl Stream {
    /// Independent stream number `id` sharing this stream's key.
    pub fn substream(&self, id: u64) -> Stream {
        let mut rng = ChaCha8Rng::from_seed(self.rng.get_seed());
        rng.set_stream(id);
        Stream { rng }
    }

    /// Uniform draw in [0, 1).
    pub fn uniform(&mut self) -> f64 {
        self.rng.random::<f64>()
    }

    /// Uniform index in `0..n`.
    pub fn index(&mut self, n: usize) -> usize {
        self.rng.random_range(0..n)
    }

    pub fn next_u64(&mut self) -> u64 {
        self.rng.next_u64()
    }
}

/// Stream for a repeat; see the module docs for the derivation.
pub fn derive_stream(seed: SeedSpec) -> Stream {
    Stream {
        rng: ChaCha8Rng::seed_from_u64(seed.key()),
    }
}

/// One N(0, 1) draw (ziggurat method from `rand_distr`).
pub fn standard_normal(stream: &mut Stream) -> f64 {
    stream.rng.sample(StandardNormal)
}
