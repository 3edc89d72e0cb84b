use std::collections::HashMap;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::report::ExperimentReport;
use crate::token_core::{mask_count, MarkovChain};
use crate::{Error, Result};

const MAX_LEN: usize = 8;
const MAX_VOCAB: usize = 4;

/// Fully enumerated distribution over token tuples of length `len`.
/// `probs[code]` where position `k` contributes digit `x_k · V^k`.
#[derive(Clone, Debug, PartialEq)]
pub struct JointDistribution {
    len: usize,
    vocab: usize,
    probs: Vec<f64>,
    /// Entropy of every position subset, indexed by bitmask.
    entropies: Vec<f64>,
}

fn check_normalized(probs: &[f64]) -> Result<()> {
    let s: f64 = probs.iter().sum();
    if (s - 1.0).abs() > 1e-9 || probs.iter().any(|&p| !(p >= 0.0)) {
        return Err(Error::NotNormalized(s));
    }
    Ok(())
}

fn plogp_sum<'a>(probs: impl IntoIterator<Item = &'a f64>) -> f64 {
    -probs.into_iter().filter(|&&p| p > 0.0).map(|&p| p * p.ln()).sum::<f64>()
}

impl JointDistribution {
    pub fn new(len: usize, vocab: usize, probs: Vec<f64>) -> Result<Self> {
        if len == 0 || len > MAX_LEN || vocab == 0 || vocab > MAX_VOCAB {
            return Err(Error::EnumerationTooLarge(format!(
                "length {len} over {vocab} tokens (limits {MAX_LEN} and {MAX_VOCAB})"
            )));
        }
        if probs.len() != vocab.pow(len as u32) {
            return Err(Error::DimensionMismatch(format!(
                "{} probabilities for {vocab}^{len} tuples",
                probs.len()
            )));
        }
        check_normalized(&probs)?;
        let mut joint = Self {
            len,
            vocab,
            probs,
            entropies: Vec::new(),
        };
        joint.entropies = (0..1usize << len).map(|mask| plogp_sum(&joint.marginal(mask))).collect();
        Ok(joint)
    }

    /// Sequences of length `len` from a Markov chain.
    pub fn from_markov(chain: &MarkovChain, len: usize) -> Result<Self> {
        let v = chain.vocab_size();
        if len == 0 || len > MAX_LEN || v > MAX_VOCAB {
            return Err(Error::EnumerationTooLarge(format!("length {len} over {v} tokens")));
        }
        let probs = (0..v.pow(len as u32))
            .map(|code| {
                let x = decode(code, v, len);
                let mut p = chain.initial()[x[0]];
                for w in x.windows(2) {
                    p *= chain.transition()[w[0]][w[1]];
                }
                p
            })
            .collect();
        Self::new(len, v, probs)
    }

    /// Random dense joint with log-normal weights.
    pub fn random<R: Rng + ?Sized>(len: usize, vocab: usize, spread: f64, rng: &mut R) -> Result<Self> {
        let n = vocab.checked_pow(len as u32).unwrap_or(usize::MAX);
        if len > MAX_LEN || vocab > MAX_VOCAB {
            return Err(Error::EnumerationTooLarge(format!("length {len} over {vocab} tokens")));
        }
        let w: Vec<f64> = (0..n)
            .map(|_| { let z: f64 = StandardNormal.sample(rng); (spread * z).exp() })
            .collect();
        let z: f64 = w.iter().sum();
        Self::new(len, vocab, w.into_iter().map(|x| x / z).collect())
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn vocab(&self) -> usize {
        self.vocab
    }

    /// Marginal over the positions in `mask`, indexed by the sub-tuple code
    /// (positions in increasing order, first position least significant).
    fn marginal(&self, mask: usize) -> Vec<f64> {
        let positions: Vec<usize> = (0..self.len).filter(|k| mask >> k & 1 == 1).collect();
        let mut out = vec![0.0; self.vocab.pow(positions.len() as u32)];
        for (code, &p) in self.probs.iter().enumerate() {
            let x = decode(code, self.vocab, self.len);
            let mut sub = 0;
            for &k in positions.iter().rev() {
                sub = sub * self.vocab + x[k];
            }
            out[sub] += p;
        }
        out
    }

    /// Joint entropy (nats) of the positions in `mask`.
    pub fn entropy(&self, mask: usize) -> f64 {
        self.entropies[mask]
    }

    /// `I(A; B)` for disjoint position sets, from entropies, clamped at 0.
    pub fn mutual_info(&self, a: usize, b: usize) -> f64 {
        (self.entropy(a) + self.entropy(b) - self.entropy(a | b)).max(0.0)
    }
}

fn decode(mut code: usize, vocab: usize, len: usize) -> Vec<usize> {
    let mut x = vec![0; len];
    for v in x.iter_mut() {
        *v = code % vocab;
        code /= vocab;
    }
    x
}

fn bits(positions: impl IntoIterator<Item = usize>) -> usize {
    positions.into_iter().fold(0, |m, k| m | 1 << k)
}

/// `I(X; Y)` in nats for a 2-D joint table `joint[x][y]`, clamped at 0.
pub fn mutual_information(joint: &[Vec<f64>]) -> Result<f64> {
    let flat: Vec<f64> = joint.iter().flatten().copied().collect();
    check_normalized(&flat)?;
    let cols = joint.first().map_or(0, Vec::len);
    if joint.iter().any(|r| r.len() != cols) {
        return Err(Error::DimensionMismatch("ragged joint table".into()));
    }
    let px: Vec<f64> = joint.iter().map(|r| r.iter().sum()).collect();
    let py: Vec<f64> = (0..cols).map(|j| joint.iter().map(|r| r[j]).sum()).collect();
    let mut mi = 0.0;
    for (i, row) in joint.iter().enumerate() {
        for (j, &p) in row.iter().enumerate() {
            if p > 0.0 {
                mi += p * (p / (px[i] * py[j])).ln();
            }
        }
    }
    Ok(mi.max(0.0))
}

/// `I(A; B | C)` by direct summation of `p(abc) ln[p(abc) p(c) / (p(ac) p(bc))]`
/// over the joint, for pairwise disjoint position masks.
pub fn conditional_mutual_information(joint: &JointDistribution, a: usize, b: usize, c: usize) -> f64 {
    let key = |x: &[usize], mask: usize| -> u64 {
        (0..joint.len)
            .filter(|k| mask >> k & 1 == 1)
            .fold(0u64, |acc, k| acc * joint.vocab as u64 + x[k] as u64)
    };
    let mut p_abc: HashMap<(u64, u64, u64), f64> = HashMap::new();
    let mut p_ac: HashMap<(u64, u64), f64> = HashMap::new();
    let mut p_bc: HashMap<(u64, u64), f64> = HashMap::new();
    let mut p_c: HashMap<u64, f64> = HashMap::new();
    for (code, &p) in joint.probs.iter().enumerate() {
        if p == 0.0 {
            continue;
        }
        let x = decode(code, joint.vocab, joint.len);
        let (ka, kb, kc) = (key(&x, a), key(&x, b), key(&x, c));
        *p_abc.entry((ka, kb, kc)).or_default() += p;
        *p_ac.entry((ka, kc)).or_default() += p;
        *p_bc.entry((kb, kc)).or_default() += p;
        *p_c.entry(kc).or_default() += p;
    }
    let mut terms: Vec<((u64, u64, u64), f64)> = p_abc.into_iter().collect();
    terms.sort_by_key(|t| t.0);
    terms
        .into_iter()
        .map(|((ka, kb, kc), p)| p * (p * p_c[&kc] / (p_ac[&(ka, kc)] * p_bc[&(kb, kc)])).ln())
        .sum()
}

/// The three information terms of the combined objective for one generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComplementarityTerms {
    /// `E_{M, i∈M} I(x_i; x_{M^c})` over all masks of size `round(ρK)`.
    pub random: f64,
    /// `Σ_{i=2..K} I(x_i; x_{<i})`.
    pub next: f64,
    /// `Σ_{i=2..K} I(x_{≥i}; x_{<i})` (1-based; every non-empty proper prefix).
    pub next_all: f64,
    pub weights: [f64; 3],
    pub total: f64,
    /// Largest `|I(x_{≥i}; x_{<i}) - Σ_{j≥i} I(x_j; x_{<i} | x_i..x_{j-1})|`.
    pub chain_rule_error: f64,
}

pub fn complementarity_terms(joint: &JointDistribution, rho: f64, weights: [f64; 3]) -> Result<ComplementarityTerms> {
    let k = joint.len();
    let m = mask_count(k, rho);
    if k < 2 || m == 0 || m >= k {
        return Err(Error::InvalidRatio { ratio: rho, len: k, count: m });
    }
    if weights.iter().any(|&w| !(w > 0.0)) {
        return Err(Error::Config(format!("weights must be positive, got {weights:?}")));
    }
    let full = (1usize << k) - 1;
    let (mut sum, mut count) = (0.0, 0usize);
    for mask in (0..=full).filter(|s| s.count_ones() as usize == m) {
        for i in (0..k).filter(|i| mask >> i & 1 == 1) {
            sum += joint.mutual_info(1 << i, full & !mask);
            count += 1;
        }
    }
    let random = sum / count as f64;
    let next: f64 = (1..k).map(|i| joint.mutual_info(1 << i, bits(0..i))).sum();
    let mut next_all = 0.0;
    let mut chain_rule_error: f64 = 0.0;
    for i in 1..k {
        let past = bits(0..i);
        let future = bits(i..k);
        let lhs = joint.mutual_info(future, past);
        let rhs: f64 = (i..k)
            .map(|j| conditional_mutual_information(joint, 1 << j, past, bits(i..j)))
            .sum();
        chain_rule_error = chain_rule_error.max((lhs - rhs).abs());
        next_all += lhs;
    }
    let [a, b, g] = weights;
    Ok(ComplementarityTerms {
        random,
        next,
        next_all,
        weights,
        total: a * random + b * next + g * next_all,
        chain_rule_error,
    })
}

/// Evaluates the information terms on every generator and checks that the
/// weighted total dominates each unit-weight term and that the chain rule
/// holds to `1e-10`.
pub fn complementarity_check(joints: &[JointDistribution], rho: f64, weights: [f64; 3]) -> Result<ExperimentReport> {
    #[derive(Serialize)]
    struct Config {
        generators: usize,
        rho: f64,
        weights: [f64; 3],
    }
    let mut report = ExperimentReport::new(
        "information_complementarity",
        &Config {
            generators: joints.len(),
            rho,
            weights,
        },
    );
    report.raw = crate::report::RawTable::new(&[
        "generator", "len", "vocab", "i_random", "i_next", "i_next_all", "total", "chain_rule_error",
    ]);
    let mut dominates = true;
    let mut chain_ok = true;
    let mut columns: [Vec<f64>; 5] = Default::default();
    for (g, joint) in joints.iter().enumerate() {
        let t = complementarity_terms(joint, rho, weights)?;
        let unit = t.random + t.next + t.next_all;
        dominates &= unit >= t.random.max(t.next).max(t.next_all);
        if weights.iter().all(|&w| w >= 1.0) {
            dominates &= t.total >= t.random.max(t.next).max(t.next_all);
        }
        chain_ok &= t.chain_rule_error < 1e-10;
        for (c, v) in columns.iter_mut().zip([t.random, t.next, t.next_all, t.total, t.chain_rule_error]) {
            c.push(v);
        }
        report.raw.push(vec![
            g as f64,
            joint.len() as f64,
            joint.vocab() as f64,
            t.random,
            t.next,
            t.next_all,
            t.total,
            t.chain_rule_error,
        ]);
    }
    report.grid = (0..joints.len()).map(|g| g as f64).collect();
    for (name, c) in ["i_random", "i_next", "i_next_all", "total", "chain_rule_error"].iter().zip(columns) {
        report.measured.insert(name.to_string(), c);
    }
    report.pass.insert("total_dominates_each_term".into(), dominates);
    report.pass.insert("chain_rule_within_1e-10".into(), chain_ok);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn binary_entropy(p: f64) -> f64 {
        -p * p.ln() - (1.0 - p) * (1.0 - p).ln()
    }

    #[test]
    fn two_variable_cases() {
        assert_eq!(mutual_information(&[vec![0.25, 0.25], vec![0.25, 0.25]]).unwrap(), 0.0);
        let copy = mutual_information(&[vec![0.5, 0.0], vec![0.0, 0.5]]).unwrap();
        assert!((copy - LN2).abs() < 1e-15);
        let bsc = mutual_information(&[vec![0.45, 0.05], vec![0.05, 0.45]]).unwrap();
        assert!((bsc - (LN2 - binary_entropy(0.1))).abs() < 1e-15);
        assert!((bsc - 0.368064).abs() < 1e-6);
        assert!(matches!(mutual_information(&[vec![0.5, 0.4]]), Err(Error::NotNormalized(_))));
    }

    #[test]
    fn iid_uniform_has_no_information() {
        let joint = JointDistribution::new(4, 3, vec![1.0 / 81.0; 81]).unwrap();
        let t = complementarity_terms(&joint, 0.5, [1.0; 3]).unwrap();
        assert!(t.random.abs() < 1e-12 && t.next.abs() < 1e-12 && t.next_all.abs() < 1e-12);
        assert!(t.total.abs() < 1e-12);
    }

    #[test]
    fn copy_chain_values() {
        let chain = MarkovChain::new(vec![0.5, 0.5], vec![vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let joint = JointDistribution::from_markov(&chain, 3).unwrap();
        let t = complementarity_terms(&joint, 0.34, [1.0; 3]).unwrap();
        assert!((t.next - 2.0 * LN2).abs() < 1e-12);
        assert!((joint.mutual_info(0b110, 0b001) - LN2).abs() < 1e-12);
        assert!(t.chain_rule_error < 1e-12);
    }

    #[test]
    fn enumeration_caps() {
        assert!(matches!(
            JointDistribution::new(9, 2, vec![1.0 / 512.0; 512]),
            Err(Error::EnumerationTooLarge(_))
        ));
        assert!(JointDistribution::random(3, 5, 1.0, &mut seeded(0)).is_err());
    }

    #[test]
    fn marginal_entropy_of_independent_positions_adds() {
        let chain = MarkovChain::new(vec![0.2, 0.8], vec![vec![0.2, 0.8], vec![0.2, 0.8]]).unwrap();
        let joint = JointDistribution::from_markov(&chain, 3).unwrap();
        let h = binary_entropy(0.2);
        assert!((joint.entropy(0b111) - 3.0 * h).abs() < 1e-12);
        assert!((joint.entropy(0b101) - 2.0 * h).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn mutual_information_is_symmetric_and_non_negative(
            w in proptest::collection::vec(0.0f64..1.0, 12),
        ) {
            let z: f64 = w.iter().sum::<f64>() + 1e-3;
            let table: Vec<Vec<f64>> = w.chunks(4).map(|r| r.iter().map(|x| (x + 1e-3 / 12.0) / z).collect()).collect();
            let transposed: Vec<Vec<f64>> = (0..4).map(|j| table.iter().map(|r| r[j]).collect()).collect();
            let a = mutual_information(&table).unwrap();
            let b = mutual_information(&transposed).unwrap();
            prop_assert!(a >= 0.0);
            prop_assert!((a - b).abs() < 1e-12);
        }

        #[test]
        fn random_generators_pass_the_check(seed in any::<u64>(), k in 2usize..6, v in 2usize..4) {
            let joint = JointDistribution::random(k, v, 1.5, &mut seeded(seed)).unwrap();
            let r = complementarity_check(&[joint], 0.5, [1.0; 3]).unwrap();
            prop_assert!(r.passed());
        }
    }
}
