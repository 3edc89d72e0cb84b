use rand::Rng;

use super::TokenSequence;
use crate::{Error, Result};

/// First-order Markov token generator with a known entropy rate.
#[derive(Clone, Debug, PartialEq)]
pub struct MarkovChain {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
}

impl MarkovChain {
    pub fn new(initial: Vec<f64>, transition: Vec<Vec<f64>>) -> Result<Self> {
        let v = initial.len();
        if v == 0 || transition.len() != v || transition.iter().any(|r| r.len() != v) {
            return Err(Error::DimensionMismatch("transition must be V x V".into()));
        }
        for row in std::iter::once(&initial).chain(&transition) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::NotNormalized(s));
            }
        }
        Ok(Self {
            initial,
            transition,
        })
    }

    /// Chain started from its stationary distribution.
    pub fn stationary_start(transition: Vec<Vec<f64>>) -> Result<Self> {
        let v = transition.len();
        let chain = Self::new(vec![1.0 / v as f64; v], transition)?;
        let pi = chain.stationary();
        Self::new(pi, chain.transition)
    }

    pub fn vocab_size(&self) -> usize {
        self.initial.len()
    }

    pub fn initial(&self) -> &[f64] {
        &self.initial
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    /// Stationary distribution by power iteration.
    pub fn stationary(&self) -> Vec<f64> {
        let v = self.vocab_size();
        let mut pi = vec![1.0 / v as f64; v];
        for _ in 0..100_000 {
            let mut next = vec![0.0; v];
            for (i, &p) in pi.iter().enumerate() {
                for (j, &t) in self.transition[i].iter().enumerate() {
                    next[j] += p * t;
                }
            }
            let delta: f64 = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).sum();
            pi = next;
            if delta < 1e-15 {
                break;
            }
        }
        pi
    }

    /// Entropy rate in nats: `-sum_i pi_i sum_j T_ij ln T_ij`.
    pub fn entropy_rate(&self) -> f64 {
        let pi = self.stationary();
        pi.iter()
            .zip(&self.transition)
            .map(|(&p, row)| {
                -p * row
                    .iter()
                    .filter(|&&t| t > 0.0)
                    .map(|&t| t * t.ln())
                    .sum::<f64>()
            })
            .sum()
    }

    pub fn sample<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> TokenSequence {
        let mut tokens = Vec::with_capacity(len);
        let mut current = draw(&self.initial, rng);
        tokens.push(current as u32);
        for _ in 1..len {
            current = draw(&self.transition[current], rng);
            tokens.push(current as u32);
        }
        TokenSequence::new(tokens, self.vocab_size() as u32).expect("sampled ids are in range")
    }
}

fn draw<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}
