//! Token sequences, masking patterns, tokenization paths and their I/O.
//!
//! Indices are 0-based throughout.

mod corpus;
mod markov;
mod volume;

pub use corpus::{load_corpus, write_corpus, CorpusRecord};
pub use markov::MarkovChain;
pub use volume::{tokenize_volume, Volume};
pub(crate) use volume::read_header;

use rand::seq::{index, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A non-empty sequence of token ids drawn from a vocabulary of size `vocab_size`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSequence {
    tokens: Vec<u32>,
    vocab_size: u32,
}

impl TokenSequence {
    pub fn new(tokens: Vec<u32>, vocab_size: u32) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::EmptySequence);
        }
        if vocab_size == 0 {
            return Err(Error::Config("vocabulary size must be positive".into()));
        }
        if let Some((index, &token)) = tokens.iter().enumerate().find(|(_, &t)| t >= vocab_size) {
            return Err(Error::VocabViolation {
                index,
                token,
                vocab_size,
            });
        }
        Ok(Self { tokens, vocab_size })
    }

    pub fn tokens(&self) -> &[u32] {
        &self.tokens
    }

    pub fn vocab_size(&self) -> u32 {
        self.vocab_size
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, position: usize) -> u32 {
        self.tokens[position]
    }
}

/// Number of masked tokens for ratio `ratio` over `len` tokens (round half up).
pub fn mask_count(len: usize, ratio: f64) -> usize {
    (ratio * len as f64 + 0.5).floor() as usize
}

/// A set of masked positions together with the ratio it was drawn at.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskPattern {
    /// Sorted masked positions.
    masked: Vec<usize>,
    is_masked: Vec<bool>,
    ratio: f64,
}

impl MaskPattern {
    /// Builds a mask from explicit positions over a sequence of length `len`.
    pub fn from_positions(len: usize, positions: &[usize]) -> Result<Self> {
        let mut is_masked = vec![false; len];
        for &p in positions {
            if p >= len {
                return Err(Error::DimensionMismatch(format!(
                    "mask position {p} outside length {len}"
                )));
            }
            is_masked[p] = true;
        }
        let masked: Vec<usize> = (0..len).filter(|&i| is_masked[i]).collect();
        if masked.is_empty() || masked.len() == len {
            return Err(Error::InvalidRatio {
                ratio: masked.len() as f64 / len.max(1) as f64,
                len,
                count: masked.len(),
            });
        }
        let ratio = masked.len() as f64 / len as f64;
        Ok(Self {
            masked,
            is_masked,
            ratio,
        })
    }

    pub fn masked(&self) -> &[usize] {
        &self.masked
    }

    /// Unmasked positions in increasing order.
    pub fn visible(&self) -> Vec<usize> {
        (0..self.is_masked.len())
            .filter(|&i| !self.is_masked[i])
            .collect()
    }

    pub fn is_masked(&self, position: usize) -> bool {
        self.is_masked[position]
    }

    pub fn len(&self) -> usize {
        self.is_masked.len()
    }

    pub fn is_empty(&self) -> bool {
        self.is_masked.is_empty()
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }
}

/// Draws `round(ratio * len)` positions uniformly without replacement.
pub fn sample_mask<R: Rng + ?Sized>(len: usize, ratio: f64, rng: &mut R) -> Result<MaskPattern> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidRatio {
            ratio,
            len,
            count: 0,
        });
    }
    let count = mask_count(len, ratio);
    if len < 2 || count == 0 || count >= len {
        return Err(Error::InvalidRatio { ratio, len, count });
    }
    let positions = index::sample(rng, len, count).into_vec();
    let mut mask = MaskPattern::from_positions(len, &positions)?;
    mask.ratio = ratio;
    Ok(mask)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    Raster,
    SeededPermutation,
}

/// Autoregressive visiting order over token positions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Path {
    order: Vec<usize>,
}

impl Path {
    pub fn from_order(order: Vec<usize>) -> Result<Self> {
        let mut seen = vec![false; order.len()];
        for &p in &order {
            if p >= order.len() || std::mem::replace(&mut seen[p], true) {
                return Err(Error::Config(format!("path {order:?} is not a permutation")));
            }
        }
        if order.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self { order })
    }

    pub fn raster(len: usize) -> Result<Self> {
        Self::from_order((0..len).collect())
    }

    pub fn order(&self) -> &[usize] {
        &self.order
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// `inverse()[p]` is the step at which position `p` is visited.
    pub fn inverse(&self) -> Vec<usize> {
        let mut inv = vec![0; self.order.len()];
        for (step, &p) in self.order.iter().enumerate() {
            inv[p] = step;
        }
        inv
    }
}

pub fn make_path<R: Rng + ?Sized>(len: usize, kind: PathKind, rng: &mut R) -> Result<Path> {
    if len == 0 {
        return Err(Error::EmptySequence);
    }
    let mut order: Vec<usize> = (0..len).collect();
    if kind == PathKind::SeededPermutation {
        order.shuffle(rng);
    }
    Path::from_order(order)
}
