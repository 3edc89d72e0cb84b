//! Prediction losses, loss-weight schedules and the pretraining loop.
//!
//! All losses are negative log-likelihoods in nats:
//!
//! * random: `-Σ_{i∈M} log p(x_i | x_{M^c})`
//! * next: `-Σ_i log p(x_{π(i)} | x_{π(<i)})`, the first term using the empty context
//! * next-all: `-Σ_i Σ_{j≥i} log p(x_{π(j)} | x_{π(<i)})`, `K(K+1)/2` terms

mod pretrain;
mod schedule;

pub use pretrain::{
    mean_loss_next_per_token, pretrain, NextAllAggregation, PretrainConfig, Schedule, StepSize, TrainLog,
    TrainMode, TrainRecord,
};
pub use schedule::{
    alternating_distribution, schedule_weights, AlternatingConfig, CurriculumConfig, ModulationState, Temperature,
};

use serde::{Deserialize, Serialize};

use crate::predictors::{PredictorModel, Query, QueryKind};
use crate::token_core::{MaskPattern, Path, TokenSequence};
use crate::{Error, Result};

/// Which loss to evaluate, with the mask or path it needs.
#[derive(Clone, Copy, Debug)]
pub enum LossSpec<'a> {
    Random(&'a MaskPattern),
    Next(&'a Path),
    NextAll(&'a Path),
    /// Next-all restricted to the listed prefix lengths, each term scaled by
    /// `weight`. With `weight = K / prefixes.len()` this is an unbiased
    /// estimate of the full loss.
    NextAllSubset {
        path: &'a Path,
        prefixes: &'a [usize],
        weight: f64,
    },
}

impl LossSpec<'_> {
    /// Number of conditional terms the loss sums over.
    pub fn term_count(&self, len: usize) -> usize {
        match self {
            LossSpec::Random(mask) => mask.masked().len(),
            LossSpec::Next(_) => len,
            LossSpec::NextAll(_) => len * (len + 1) / 2,
            LossSpec::NextAllSubset { prefixes, .. } => prefixes.iter().map(|&i| len - i).sum(),
        }
    }

    fn check(&self, seq: &TokenSequence) -> Result<()> {
        let len = match self {
            LossSpec::Random(mask) => mask.len(),
            LossSpec::Next(path) | LossSpec::NextAll(path) | LossSpec::NextAllSubset { path, .. } => path.len(),
        };
        if len != seq.len() {
            return Err(Error::DimensionMismatch(format!(
                "loss set up for length {len}, sequence has length {}",
                seq.len()
            )));
        }
        if let LossSpec::NextAllSubset { prefixes, .. } = self {
            if let Some(&bad) = prefixes.iter().find(|&&i| i >= len) {
                return Err(Error::DimensionMismatch(format!("prefix length {bad} >= {len}")));
            }
        }
        Ok(())
    }
}

/// Calls `visit(query, truth, weight)` for every conditional term of the loss.
fn for_each_term(
    spec: &LossSpec,
    seq: &TokenSequence,
    mut visit: impl FnMut(&Query, u32, f64) -> Result<()>,
) -> Result<()> {
    spec.check(seq)?;
    let toks = seq.tokens();
    match *spec {
        LossSpec::Random(mask) => {
            let context: Vec<(usize, u32)> = mask.visible().into_iter().map(|p| (p, toks[p])).collect();
            for &target in mask.masked() {
                let q = Query {
                    context: &context,
                    target,
                    kind: QueryKind::Masked,
                };
                visit(&q, toks[target], 1.0)?;
            }
        }
        LossSpec::Next(path) => {
            let context = ordered_context(path, toks);
            for (i, &target) in path.order().iter().enumerate() {
                let q = Query {
                    context: &context[..i],
                    target,
                    kind: QueryKind::Ahead(1),
                };
                visit(&q, toks[target], 1.0)?;
            }
        }
        LossSpec::NextAll(path) => {
            let context = ordered_context(path, toks);
            for i in 0..path.len() {
                next_all_prefix(path, toks, &context, i, 1.0, &mut visit)?;
            }
        }
        LossSpec::NextAllSubset { path, prefixes, weight } => {
            let context = ordered_context(path, toks);
            for &i in prefixes {
                next_all_prefix(path, toks, &context, i, weight, &mut visit)?;
            }
        }
    }
    Ok(())
}

fn ordered_context(path: &Path, toks: &[u32]) -> Vec<(usize, u32)> {
    path.order().iter().map(|&p| (p, toks[p])).collect()
}

fn next_all_prefix(
    path: &Path,
    toks: &[u32],
    context: &[(usize, u32)],
    prefix: usize,
    weight: f64,
    visit: &mut impl FnMut(&Query, u32, f64) -> Result<()>,
) -> Result<()> {
    for (j, &target) in path.order().iter().enumerate().skip(prefix) {
        let q = Query {
            context: &context[..prefix],
            target,
            kind: QueryKind::Ahead(j - prefix + 1),
        };
        visit(&q, toks[target], weight)?;
    }
    Ok(())
}

/// Evaluates a loss without gradients.
pub fn loss<M: PredictorModel + ?Sized>(model: &M, spec: LossSpec, seq: &TokenSequence) -> Result<f64> {
    let mut total = 0.0;
    for_each_term(&spec, seq, |q, truth, w| {
        let p = model.predict(q)?[truth as usize];
        if !(p > 0.0) {
            return Err(Error::ZeroProbability { position: q.target });
        }
        total -= w * p.ln();
        Ok(())
    })?;
    Ok(total)
}

/// Evaluates a loss and adds `scale * d loss / d params` into `grad`.
pub fn loss_and_grad<M: PredictorModel + ?Sized>(
    model: &M,
    spec: LossSpec,
    seq: &TokenSequence,
    scale: f64,
    grad: &mut [f64],
) -> Result<f64> {
    if grad.len() != model.params().len() {
        return Err(Error::DimensionMismatch(format!(
            "gradient buffer has {} entries, model has {} parameters",
            grad.len(),
            model.params().len()
        )));
    }
    let mut total = 0.0;
    for_each_term(&spec, seq, |q, truth, w| {
        total -= w * model.accumulate_grad_log_prob(q, truth, -scale * w, grad)?;
        Ok(())
    })?;
    Ok(total)
}

pub fn loss_random<M: PredictorModel + ?Sized>(model: &M, seq: &TokenSequence, mask: &MaskPattern) -> Result<f64> {
    loss(model, LossSpec::Random(mask), seq)
}

pub fn loss_next<M: PredictorModel + ?Sized>(model: &M, seq: &TokenSequence, path: &Path) -> Result<f64> {
    loss(model, LossSpec::Next(path), seq)
}

pub fn loss_next_all<M: PredictorModel + ?Sized>(model: &M, seq: &TokenSequence, path: &Path) -> Result<f64> {
    loss(model, LossSpec::NextAll(path), seq)
}

/// The three losses and their weighted sum.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub random: f64,
    pub next: f64,
    pub next_all: f64,
    pub combined: f64,
    pub weights: [f64; 3],
}

impl LossBreakdown {
    pub fn new(random: f64, next: f64, next_all: f64, weights: [f64; 3]) -> Self {
        let [a, b, g] = weights;
        Self {
            random,
            next,
            next_all,
            combined: a * random + b * next + g * next_all,
            weights,
        }
    }
}

pub fn combined_loss<M: PredictorModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    mask: &MaskPattern,
    path: &Path,
    state: &ModulationState,
) -> Result<LossBreakdown> {
    Ok(LossBreakdown::new(
        loss_random(model, seq, mask)?,
        loss_next(model, seq, path)?,
        loss_next_all(model, seq, path)?,
        state.weights,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{FnPredictor, TabularPredictor, UniformPredictor};
    use crate::rng::seeded;
    use crate::token_core::{make_path, sample_mask, PathKind};
    use proptest::prelude::*;

    const LN2: f64 = std::f64::consts::LN_2;

    fn seq(tokens: &[u32], v: u32) -> TokenSequence {
        TokenSequence::new(tokens.to_vec(), v).unwrap()
    }

    fn oracle(s: &TokenSequence) -> FnPredictor {
        let toks = s.tokens().to_vec();
        let v = s.vocab_size() as usize;
        FnPredictor::new(v, move |q| {
            let mut p = vec![0.0; v];
            p[toks[q.target] as usize] = 1.0;
            p
        })
    }

    #[test]
    fn uniform_closed_forms() {
        let s = seq(&[0, 1, 2, 3, 0, 1, 2], 4);
        let m = UniformPredictor::new(4);
        let mask = MaskPattern::from_positions(7, &[1, 3, 5]).unwrap();
        assert!((loss_random(&m, &s, &mask).unwrap() - 3.0 * 4f64.ln()).abs() < 1e-12);
        let s = seq(&[0, 1, 1, 0, 1], 2);
        let m = UniformPredictor::new(2);
        let path = Path::raster(5).unwrap();
        assert!((loss_next(&m, &s, &path).unwrap() - 3.465736).abs() < 1e-6);
        let s = seq(&[0, 1, 1], 2);
        let path = Path::raster(3).unwrap();
        assert!((loss_next_all(&m, &s, &path).unwrap() - 4.158883).abs() < 1e-6);
    }

    #[test]
    fn oracle_losses_vanish() {
        let s = seq(&[2, 0, 1, 1], 3);
        let m = oracle(&s);
        let mask = MaskPattern::from_positions(4, &[0, 2]).unwrap();
        let path = make_path(4, PathKind::SeededPermutation, &mut seeded(3)).unwrap();
        let state = ModulationState { t: 0, weights: [0.2, 0.3, 0.5] };
        let b = combined_loss(&m, &s, &mask, &path, &state).unwrap();
        assert_eq!((b.random, b.next, b.next_all, b.combined), (0.0, 0.0, 0.0, 0.0));
    }

    #[test]
    fn half_probability_terms() {
        let s = seq(&[0, 1, 0, 1], 2);
        let m = FnPredictor::new(2, |_| vec![0.5, 0.5]);
        let mask = MaskPattern::from_positions(4, &[0, 1, 3]).unwrap();
        assert!((loss_random(&m, &s, &mask).unwrap() - 2.079442).abs() < 1e-6);
        let s = seq(&[0, 1], 2);
        let path = Path::raster(2).unwrap();
        assert!((loss_next_all(&m, &s, &path).unwrap() - 3.0 * LN2).abs() < 1e-12);
    }

    #[test]
    fn copy_chain_next_loss_is_first_term_only() {
        let m = TabularPredictor::from_probabilities(&[0.5, 0.5], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let s = seq(&[1, 1, 1], 2);
        let l = loss_next(&m, &s, &Path::raster(3).unwrap()).unwrap();
        assert!((l - LN2).abs() < 1e-12);
        let err = loss_next(&m, &seq(&[1, 0, 1], 2), &Path::raster(3).unwrap()).unwrap_err();
        assert!(matches!(err, Error::ZeroProbability { position: 1 }));
    }

    #[test]
    fn combined_uniform_example() {
        let s = seq(&[0, 1, 1], 2);
        let m = UniformPredictor::new(2);
        let mask = MaskPattern::from_positions(3, &[2]).unwrap();
        let w = 1.0 / 3.0;
        let state = ModulationState { t: 0, weights: [w, w, w] };
        let b = combined_loss(&m, &s, &mask, &Path::raster(3).unwrap(), &state).unwrap();
        assert!((b.combined - 2.310491).abs() < 1e-6);
        let state = ModulationState { t: 0, weights: [1.0, 0.0, 0.0] };
        let b = combined_loss(&m, &s, &mask, &Path::raster(3).unwrap(), &state).unwrap();
        assert_eq!(b.combined, b.random);
    }

    #[test]
    fn subset_with_all_prefixes_matches_full() {
        let mut rng = seeded(8);
        let m = TabularPredictor::random(3, 1.0, &mut rng);
        let s = seq(&[0, 2, 1, 1, 0], 3);
        let path = make_path(5, PathKind::SeededPermutation, &mut rng).unwrap();
        let full = loss_next_all(&m, &s, &path).unwrap();
        let sub = loss(
            &m,
            LossSpec::NextAllSubset { path: &path, prefixes: &[0, 1, 2, 3, 4], weight: 1.0 },
            &s,
        )
        .unwrap();
        assert!((full - sub).abs() < 1e-12);
    }

    #[test]
    fn length_mismatch_is_rejected() {
        let s = seq(&[0, 1, 1], 2);
        let m = UniformPredictor::new(2);
        assert!(loss_next(&m, &s, &Path::raster(4).unwrap()).is_err());
    }

    proptest! {
        #[test]
        fn context_free_next_all_weights_each_token_by_prefix_count(
            tokens in proptest::collection::vec(0u32..3, 1..12),
            seed in any::<u64>(),
        ) {
            let probs = [0.2, 0.3, 0.5];
            let m = FnPredictor::new(3, move |_| probs.to_vec());
            let s = seq(&tokens, 3);
            let path = make_path(s.len(), PathKind::SeededPermutation, &mut seeded(seed)).unwrap();
            let got = loss_next_all(&m, &s, &path).unwrap();
            let mut want = 0.0;
            for i in 0..s.len() {
                for j in i..s.len() {
                    want -= probs[s.get(path.order()[j]) as usize].ln();
                }
            }
            prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0));
            let count = LossSpec::NextAll(&path).term_count(s.len());
            prop_assert_eq!(count, s.len() * (s.len() + 1) / 2);
        }

        #[test]
        fn losses_are_non_negative(seed in any::<u64>(), k in 2usize..10) {
            let mut rng = seeded(seed);
            let m = TabularPredictor::random(3, 2.0, &mut rng);
            let tokens: Vec<u32> = (0..k).map(|i| ((seed >> i) % 3) as u32).collect();
            let s = seq(&tokens, 3);
            let mask = sample_mask(k, 0.5, &mut rng).unwrap();
            let path = make_path(k, PathKind::SeededPermutation, &mut rng).unwrap();
            prop_assert!(loss_random(&m, &s, &mask).unwrap() >= 0.0);
            prop_assert!(loss_next(&m, &s, &path).unwrap() >= 0.0);
            prop_assert!(loss_next_all(&m, &s, &path).unwrap() >= 0.0);
        }
    }
}
