use std::fmt::Write as _;
use std::io::Write;

use rand::seq::index;
use rand::{Rng as _, RngCore};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::schedule::{alternating_distribution, schedule_weights, AlternatingConfig, CurriculumConfig};
use super::{loss, loss_and_grad, LossSpec};
use crate::predictors::PredictorModel;
use crate::rng::seeded;
use crate::token_core::{make_path, sample_mask, Path, PathKind, TokenSequence};
use crate::{Error, Result};

/// How the loss weights are chosen at each step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum Schedule {
    /// Every step minimises the weighted sum of all three losses.
    Curriculum(CurriculumConfig),
    /// `warmup_iters` steps of the random-mask loss, then one sampled mode per step.
    Alternating {
        config: AlternatingConfig,
        warmup_iters: usize,
    },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum StepSize {
    Constant(f64),
    /// `lr / sqrt(t + 1)`.
    InvSqrt(f64),
}

impl StepSize {
    pub fn at(&self, t: usize) -> f64 {
        match *self {
            StepSize::Constant(lr) => lr,
            StepSize::InvSqrt(lr) => lr / ((t + 1) as f64).sqrt(),
        }
    }
}

/// Evaluation strategy for the next-all loss during training.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum NextAllAggregation {
    Exact,
    /// Uniformly subsample `round(fraction * K)` prefixes (at least one) and
    /// reweight by `K / sampled`. The logged next-all loss is then an estimate.
    Subsample { fraction: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PretrainConfig {
    pub iterations: usize,
    pub schedule: Schedule,
    pub step_size: StepSize,
    pub mask_ratio: f64,
    pub path_kind: PathKind,
    pub batch_size: usize,
    pub next_all: NextAllAggregation,
    pub seed: u64,
}

impl PretrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        if !(self.mask_ratio > 0.0 && self.mask_ratio < 1.0) {
            return Err(Error::Config(format!("mask ratio must lie in (0, 1), got {}", self.mask_ratio)));
        }
        let lr = match self.step_size {
            StepSize::Constant(lr) | StepSize::InvSqrt(lr) => lr,
        };
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(Error::Config(format!("step size must be positive, got {lr}")));
        }
        if let NextAllAggregation::Subsample { fraction } = self.next_all {
            if !(fraction > 0.0 && fraction <= 1.0) {
                return Err(Error::Config(format!("subsample fraction must lie in (0, 1], got {fraction}")));
            }
        }
        match &self.schedule {
            Schedule::Curriculum(c) => c.validate(),
            Schedule::Alternating { config, .. } => config.validate(),
        }
    }
}

/// Which objective a training step optimised.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TrainMode {
    Curriculum,
    Random,
    Ar,
    NextAll,
}

impl TrainMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            TrainMode::Curriculum => "curriculum",
            TrainMode::Random => "random",
            TrainMode::Ar => "ar",
            TrainMode::NextAll => "next_all",
        }
    }
}

/// Batch-mean losses of one step. Losses that were not evaluated are `None`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub iter: usize,
    pub weights: [f64; 3],
    pub loss_random: Option<f64>,
    pub loss_next: Option<f64>,
    pub loss_next_all: Option<f64>,
    pub loss_combined: f64,
    pub mode: TrainMode,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
    /// Set when next-all losses were estimated from a prefix subsample.
    pub approximate_next_all: bool,
}

impl TrainLog {
    pub const HEADER: &'static str =
        "iter,alpha,beta,gamma,loss_random,loss_next,loss_next_all,loss_combined,mode";

    /// CSV rendering. Values use Rust's shortest round-trip float formatting,
    /// so equal logs render to identical bytes.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        if self.approximate_next_all {
            out.push_str("# loss_next_all estimated from subsampled prefixes\n");
        }
        out.push_str(Self::HEADER);
        out.push('\n');
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for r in &self.records {
            let [a, b, g] = r.weights;
            writeln!(
                out,
                "{},{a},{b},{g},{},{},{},{},{}",
                r.iter,
                opt(r.loss_random),
                opt(r.loss_next),
                opt(r.loss_next_all),
                r.loss_combined,
                r.mode.as_str()
            )
            .expect("writing to a String");
        }
        out
    }

    pub fn write_csv<W: Write>(&self, mut writer: W) -> Result<()> {
        writer.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }
}

struct ItemResult {
    losses: [f64; 3],
    grad: Vec<f64>,
}

/// Trains `model` in place by plain SGD.
///
/// Each step draws `batch_size` sequences uniformly with replacement, a fresh
/// mask and path per sequence, and descends the batch mean of the selected
/// objective. Each loss enters the objective divided by its number of
/// conditional terms, so the three losses contribute on a per-token scale.
/// The logged losses are batch means of the raw (unnormalised) values.
///
/// Per-sequence work runs on the rayon pool and is reduced in batch order,
/// so the result does not depend on the number of threads.
pub fn pretrain<M: PredictorModel + ?Sized>(
    corpus: &[TokenSequence],
    model: &mut M,
    cfg: &PretrainConfig,
) -> Result<TrainLog> {
    cfg.validate()?;
    let mut log = TrainLog {
        records: Vec::with_capacity(cfg.iterations),
        approximate_next_all: matches!(cfg.next_all, NextAllAggregation::Subsample { .. }),
    };
    if cfg.iterations == 0 {
        return Ok(log);
    }
    if corpus.is_empty() {
        return Err(Error::Empty("training corpus"));
    }
    if let Some(s) = corpus.iter().find(|s| s.vocab_size() as usize != model.vocab_size()) {
        return Err(Error::DimensionMismatch(format!(
            "corpus vocabulary {} does not match model vocabulary {}",
            s.vocab_size(),
            model.vocab_size()
        )));
    }
    let mut rng = seeded(cfg.seed);
    let n_params = model.params().len();
    for t in 0..cfg.iterations {
        let (weights, mode) = match &cfg.schedule {
            Schedule::Curriculum(c) => (schedule_weights(t, c)?.weights, TrainMode::Curriculum),
            Schedule::Alternating { config, warmup_iters } => {
                if t < *warmup_iters {
                    ([1.0, 0.0, 0.0], TrainMode::Random)
                } else {
                    let p = alternating_distribution(t - warmup_iters, config)?;
                    let u: f64 = rng.random();
                    if u < p[0] {
                        ([1.0, 0.0, 0.0], TrainMode::Random)
                    } else if u < p[0] + p[1] {
                        ([0.0, 1.0, 0.0], TrainMode::Ar)
                    } else {
                        ([0.0, 0.0, 1.0], TrainMode::NextAll)
                    }
                }
            }
        };
        let items: Vec<(usize, u64)> = (0..cfg.batch_size)
            .map(|_| (rng.random_range(0..corpus.len()), rng.next_u64()))
            .collect();
        let model_ref: &M = model;
        let results: Vec<Result<ItemResult>> = items
            .par_iter()
            .map(|&(idx, item_seed)| step_item(model_ref, &corpus[idx], cfg, weights, n_params, item_seed))
            .collect();

        let mut grad = vec![0.0; n_params];
        let mut sums = [0.0; 3];
        for r in results {
            let r = r.map_err(|e| match e {
                Error::ZeroProbability { .. } => Error::NonFiniteLoss { iter: t },
                other => other,
            })?;
            for (s, l) in sums.iter_mut().zip(r.losses) {
                *s += l;
            }
            for (g, x) in grad.iter_mut().zip(&r.grad) {
                *g += x;
            }
        }
        let inv_b = 1.0 / cfg.batch_size as f64;
        let means = sums.map(|s| s * inv_b);
        let combined: f64 = weights.iter().zip(means).map(|(w, l)| w * l).sum();
        if !combined.is_finite() || means.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFiniteLoss { iter: t });
        }
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteLoss { iter: t });
        }
        let lr = cfg.step_size.at(t) * inv_b;
        for (p, g) in model.params_mut().iter_mut().zip(&grad) {
            *p -= lr * g;
        }
        let active = |k: usize| (mode == TrainMode::Curriculum || weights[k] > 0.0).then_some(means[k]);
        log.records.push(TrainRecord {
            iter: t,
            weights,
            loss_random: active(0),
            loss_next: active(1),
            loss_next_all: active(2),
            loss_combined: combined,
            mode,
        });
    }
    Ok(log)
}

fn step_item<M: PredictorModel + ?Sized>(
    model: &M,
    seq: &TokenSequence,
    cfg: &PretrainConfig,
    weights: [f64; 3],
    n_params: usize,
    seed: u64,
) -> Result<ItemResult> {
    let mut rng = seeded(seed);
    let k = seq.len();
    let mut grad = vec![0.0; n_params];
    let mut losses = [0.0; 3];
    if weights[0] > 0.0 {
        let mask = sample_mask(k, cfg.mask_ratio, &mut rng)?;
        let spec = LossSpec::Random(&mask);
        let scale = weights[0] / spec.term_count(k) as f64;
        losses[0] = loss_and_grad(model, spec, seq, scale, &mut grad)?;
    }
    let path: Option<Path> = if weights[1] > 0.0 || weights[2] > 0.0 {
        Some(make_path(k, cfg.path_kind, &mut rng)?)
    } else {
        None
    };
    if weights[1] > 0.0 {
        let path = path.as_ref().expect("path drawn above");
        let spec = LossSpec::Next(path);
        losses[1] = loss_and_grad(model, spec, seq, weights[1] / k as f64, &mut grad)?;
    }
    if weights[2] > 0.0 {
        let path = path.as_ref().expect("path drawn above");
        let full = (k * (k + 1) / 2) as f64;
        losses[2] = match cfg.next_all {
            NextAllAggregation::Exact => {
                loss_and_grad(model, LossSpec::NextAll(path), seq, weights[2] / full, &mut grad)?
            }
            NextAllAggregation::Subsample { fraction } => {
                let m = ((fraction * k as f64).round() as usize).clamp(1, k);
                let mut prefixes = index::sample(&mut rng, k, m).into_vec();
                prefixes.sort_unstable();
                let spec = LossSpec::NextAllSubset {
                    path,
                    prefixes: &prefixes,
                    weight: k as f64 / m as f64,
                };
                loss_and_grad(model, spec, seq, weights[2] / full, &mut grad)?
            }
        };
    }
    Ok(ItemResult { losses, grad })
}

/// Mean next-token loss per token over `corpus` (nats per token).
pub fn mean_loss_next_per_token<M: PredictorModel + ?Sized>(
    model: &M,
    corpus: &[TokenSequence],
    path_kind: PathKind,
    seed: u64,
) -> Result<f64> {
    if corpus.is_empty() {
        return Err(Error::Empty("evaluation corpus"));
    }
    let totals: Vec<Result<(f64, usize)>> = corpus
        .par_iter()
        .enumerate()
        .map(|(i, s)| {
            let path = make_path(s.len(), path_kind, &mut crate::rng::stream(seed, i as u64))?;
            Ok((loss(model, LossSpec::Next(&path), s)?, s.len()))
        })
        .collect();
    let (mut sum, mut count) = (0.0, 0usize);
    for r in totals {
        let (l, n) = r?;
        sum += l;
        count += n;
    }
    Ok(sum / count as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::predictors::{LinearSoftmaxConfig, LinearSoftmaxPredictor, TabularPredictor};
    use crate::token_core::MarkovChain;

    fn corpus(n: usize, k: usize, seed: u64) -> Vec<TokenSequence> {
        let chain = MarkovChain::stationary_start(vec![
            vec![0.8, 0.15, 0.05],
            vec![0.1, 0.7, 0.2],
            vec![0.3, 0.3, 0.4],
        ])
        .unwrap();
        let mut rng = seeded(seed);
        (0..n).map(|_| chain.sample(k, &mut rng)).collect()
    }

    fn cfg(iterations: usize, schedule: Schedule) -> PretrainConfig {
        PretrainConfig {
            iterations,
            schedule,
            step_size: StepSize::Constant(0.5),
            mask_ratio: 0.5,
            path_kind: PathKind::Raster,
            batch_size: 4,
            next_all: NextAllAggregation::Exact,
            seed: 3,
        }
    }

    #[test]
    fn zero_iterations_leave_parameters_alone() {
        let mut m = TabularPredictor::random(3, 1.0, &mut seeded(1));
        let before = m.params().to_vec();
        let log = pretrain(&corpus(4, 8, 0), &mut m, &cfg(0, Schedule::Curriculum(CurriculumConfig::new(10)))).unwrap();
        assert!(log.records.is_empty());
        assert_eq!(m.params(), &before[..]);
    }

    #[test]
    fn curriculum_training_is_deterministic_and_improves() {
        let data = corpus(32, 12, 0);
        let c = cfg(60, Schedule::Curriculum(CurriculumConfig::new(60)));
        let run = || {
            let mut m = TabularPredictor::random(3, 0.1, &mut seeded(1));
            let log = pretrain(&data, &mut m, &c).unwrap();
            (log, m)
        };
        let (a, ma) = run();
        let (b, mb) = run();
        assert_eq!(a.to_csv(), b.to_csv());
        assert_eq!(ma.params(), mb.params());
        let first = a.records[0].loss_next.unwrap();
        let last = a.records.last().unwrap().loss_next.unwrap();
        assert!(last < first, "{first} -> {last}");
        let csv = a.to_csv();
        assert!(csv.starts_with(TrainLog::HEADER));
        assert_eq!(csv.lines().count(), 61);
    }

    #[test]
    fn alternating_logs_only_the_chosen_loss() {
        let data = corpus(8, 6, 1);
        let mut m = LinearSoftmaxPredictor::new(LinearSoftmaxConfig { vocab_size: 3, dim: 2 }, &mut seeded(0));
        let c = cfg(
            50,
            Schedule::Alternating {
                config: AlternatingConfig { transition_period: 20.0, p_next_all: 0.2 },
                warmup_iters: 5,
            },
        );
        let log = pretrain(&data, &mut m, &c).unwrap();
        assert!(log.records[..5].iter().all(|r| r.mode == TrainMode::Random));
        for r in &log.records {
            let present = [r.loss_random, r.loss_next, r.loss_next_all].iter().filter(|x| x.is_some()).count();
            assert_eq!(present, 1);
        }
        let modes: std::collections::HashSet<_> = log.records.iter().map(|r| r.mode).collect();
        assert!(modes.contains(&TrainMode::Ar) && modes.contains(&TrainMode::NextAll));
    }

    #[test]
    fn subsampled_next_all_is_flagged() {
        let data = corpus(4, 10, 2);
        let mut m = TabularPredictor::random(3, 0.1, &mut seeded(1));
        let mut c = cfg(3, Schedule::Curriculum(CurriculumConfig::new(3)));
        c.next_all = NextAllAggregation::Subsample { fraction: 0.3 };
        let log = pretrain(&data, &mut m, &c).unwrap();
        assert!(log.approximate_next_all);
        assert!(log.to_csv().starts_with('#'));
    }

    #[test]
    fn zero_probability_aborts_with_iteration() {
        let data = vec![TokenSequence::new(vec![0, 1], 2).unwrap()];
        let mut m = TabularPredictor::from_probabilities(&[1.0, 0.0], &[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let err = pretrain(&data, &mut m, &cfg(2, Schedule::Curriculum(CurriculumConfig::new(2)))).unwrap_err();
        assert!(matches!(err, Error::NonFiniteLoss { iter: 0 }));
    }
}
