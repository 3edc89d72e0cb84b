use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::{log_log_slope, ExperimentReport, RawTable};
use crate::rng::stream;
use crate::{Error, Result};

/// Arithmetic mean of the prefix-conditioned estimates of one token.
pub fn next_all_ensemble(predictions: &[f64]) -> Result<f64> {
    if predictions.is_empty() {
        return Err(Error::Empty("ensemble predictions"));
    }
    Ok(predictions.iter().sum::<f64>() / predictions.len() as f64)
}

/// `H_k = Σ_{j=1..k} 1/j`, with compensated (Neumaier) summation.
pub fn harmonic(k: usize) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for j in 1..=k {
        let x = 1.0 / j as f64;
        let t = sum + x;
        comp += if sum.abs() >= x.abs() { (sum - t) + x } else { (x - t) + sum };
        sum = t;
    }
    sum + comp
}

/// Variance profile of the `i`-th prefix estimate of a token.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum VarianceMode {
    /// `E[ε²] = σ²` for every prefix.
    Constant,
    /// `E[ε²] = σ² / √i` for the estimate from the `i`-th prefix.
    Decaying,
    /// Simulate both profiles on shared draws.
    Both,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorAccumConfig {
    pub k_grid: Vec<usize>,
    pub sigma2: f64,
    pub variance_mode: VarianceMode,
    pub trials: usize,
    pub seed: u64,
}

impl Default for ErrorAccumConfig {
    fn default() -> Self {
        Self {
            k_grid: vec![4, 16, 64, 256, 1024],
            sigma2: 1.0,
            variance_mode: VarianceMode::Both,
            trials: 10_000,
            seed: 0,
        }
    }
}

impl ErrorAccumConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k_grid.is_empty() || self.k_grid.iter().any(|&k| k < 2) {
            return Err(Error::Config("every K in the grid must be at least 2".into()));
        }
        if !(self.sigma2 > 0.0 && self.sigma2.is_finite()) {
            return Err(Error::Config(format!("sigma2 must be positive, got {}", self.sigma2)));
        }
        if self.trials < 100 {
            return Err(Error::Config(format!("need at least 100 trials, got {}", self.trials)));
        }
        Ok(())
    }
}

/// Expected cumulative ensemble error under decaying variance,
/// `σ² Σ_j j^{-2} Σ_{i≤j} i^{-1/2}`.
fn decaying_expectation(k: usize, sigma2: f64) -> f64 {
    let mut inner = 0.0;
    let mut total = 0.0;
    for j in 1..=k {
        inner += (j as f64).powf(-0.5);
        total += inner / (j * j) as f64;
    }
    sigma2 * total
}

/// Simulates cumulative squared prediction error over sequences of length K.
///
/// Per trial and token `j`, the naive autoregressive predictor makes one
/// error `N(0, σ²)`; the next-all ensemble averages `j` independent errors,
/// one per prefix, drawn with the configured variance profile. The constant
/// and decaying profiles reuse the same standard normals. Each trial is
/// simulated once up to the largest K and read off at every grid point.
pub fn error_accumulation_experiment(cfg: &ErrorAccumConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut grid = cfg.k_grid.clone();
    grid.sort_unstable();
    grid.dedup();
    let k_max = *grid.last().expect("validated non-empty");
    let sigma = cfg.sigma2.sqrt();
    let decay_scale: Vec<f64> = (1..=k_max).map(|i| (i as f64).powf(-0.25)).collect();
    let want_const = cfg.variance_mode != VarianceMode::Decaying;
    let want_decay = cfg.variance_mode != VarianceMode::Constant;

    // Per trial: [naive, ensemble_const, ensemble_decay] at each grid point.
    let per_trial: Vec<Vec<[f64; 3]>> = (0..cfg.trials)
        .into_par_iter()
        .map(|trial| {
            let mut rng = stream(cfg.seed, trial as u64);
            let mut acc = [0.0; 3];
            let mut out = Vec::with_capacity(grid.len());
            let mut next = 0;
            for j in 1..=k_max {
                let e: f64 = StandardNormal.sample(&mut rng);
                acc[0] += cfg.sigma2 * e * e;
                let (mut s_const, mut s_decay) = (0.0, 0.0);
                for &w in &decay_scale[..j] {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    s_const += z;
                    s_decay += w * z;
                }
                let inv_j = sigma / j as f64;
                if want_const {
                    acc[1] += (s_const * inv_j).powi(2);
                }
                if want_decay {
                    acc[2] += (s_decay * inv_j).powi(2);
                }
                if j == grid[next] {
                    out.push(acc);
                    next += 1;
                }
            }
            out
        })
        .collect();

    let n = cfg.trials as f64;
    let mut means = vec![[0.0; 3]; grid.len()];
    for trial in &per_trial {
        for (m, v) in means.iter_mut().zip(trial) {
            for c in 0..3 {
                m[c] += v[c];
            }
        }
    }
    for m in &mut means {
        for c in m.iter_mut() {
            *c /= n;
        }
    }

    let mut report = ExperimentReport::new("error_accumulation", cfg);
    let ks: Vec<f64> = grid.iter().map(|&k| k as f64).collect();
    report.grid = ks.clone();
    let col = |c: usize| means.iter().map(|m| m[c]).collect::<Vec<f64>>();
    let naive = col(0);
    let naive_bound: Vec<f64> = ks.iter().map(|k| k * cfg.sigma2).collect();
    report
        .measured
        .insert("naive_ratio_to_bound".into(), naive.iter().zip(&naive_bound).map(|(m, b)| m / b).collect());
    report.slopes.insert("naive".into(), log_log_slope(&ks, &naive));
    let naive_within = naive.iter().zip(&naive_bound).all(|(m, b)| (m / b - 1.0).abs() <= 0.05);
    report.pass.insert("naive_within_5pct_of_k_sigma2".into(), naive_within);
    let slope = report.slopes["naive"];
    report.pass.insert("naive_slope_in_0.9_1.1".into(), (0.9..=1.1).contains(&slope));
    report.measured.insert("naive".into(), naive);
    report.bounds.insert("naive".into(), naive_bound);

    if want_const {
        let ens = col(1);
        let bound: Vec<f64> = grid.iter().map(|&k| cfg.sigma2 * harmonic(k)).collect();
        report.pass.insert(
            "ensemble_constant_below_1.05_sigma2_hk".into(),
            ens.iter().zip(&bound).all(|(m, b)| *m <= 1.05 * b),
        );
        report.slopes.insert("ensemble_constant".into(), log_log_slope(&ks, &ens));
        report.measured.insert("ensemble_constant".into(), ens);
        report.bounds.insert("ensemble_constant".into(), bound);
    }
    if want_decay {
        let ens = col(2);
        let four = 4.0 * cfg.sigma2;
        report.pass.insert("ensemble_decaying_below_4_sigma2".into(), ens.iter().all(|&m| m <= four));
        report.slopes.insert("ensemble_decaying".into(), log_log_slope(&ks, &ens));
        report.bounds.insert(
            "ensemble_decaying_refined".into(),
            ks.iter().map(|k| four * (1.0 - k.powf(-0.5))).collect(),
        );
        report.bounds.insert("ensemble_decaying".into(), vec![four; grid.len()]);
        report.bounds.insert(
            "ensemble_decaying_expectation".into(),
            grid.iter().map(|&k| decaying_expectation(k, cfg.sigma2)).collect(),
        );
        report.measured.insert("ensemble_decaying".into(), ens);
    }

    report.raw = RawTable::new(&["trial", "k", "naive", "ensemble_constant", "ensemble_decaying"]);
    for (t, trial) in per_trial.iter().enumerate() {
        for (k, v) in grid.iter().zip(trial) {
            let opt = |on: bool, x: f64| if on { x } else { f64::NAN };
            report
                .raw
                .push(vec![t as f64, *k as f64, v[0], opt(want_const, v[1]), opt(want_decay, v[2])]);
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::Normal;

    #[test]
    fn ensemble_mean() {
        assert_eq!(next_all_ensemble(&[3.0]).unwrap(), 3.0);
        assert_eq!(next_all_ensemble(&[1.0, 2.0, 3.0]).unwrap(), 2.0);
        assert!(next_all_ensemble(&[]).is_err());
    }

    #[test]
    fn harmonic_four() {
        assert_eq!(harmonic(4), 25.0 / 12.0);
        assert_eq!(harmonic(1), 1.0);
        assert!((harmonic(1024) - (1024f64.ln() + 0.5772156649015329 + 1.0 / 2048.0)).abs() < 1e-7);
    }

    #[test]
    fn ensemble_variance_shrinks_as_one_over_j() {
        let normal = Normal::new(0.0, 2.0).unwrap();
        let mut rng = crate::rng::seeded(11);
        for j in [1usize, 4, 9] {
            let trials = 100_000;
            let mut sq = 0.0;
            for _ in 0..trials {
                let preds: Vec<f64> = (0..j).map(|_| normal.sample(&mut rng)).collect();
                sq += next_all_ensemble(&preds).unwrap().powi(2);
            }
            let var = sq / trials as f64;
            assert!((var / (4.0 / j as f64) - 1.0).abs() < 0.05, "j={j} var={var}");
        }
    }

    #[test]
    fn decaying_expectation_matches_closed_form_at_two() {
        assert!((decaying_expectation(2, 1.0) - (1.0 + (1.0 + 0.5f64.sqrt()) / 4.0)).abs() < 1e-15);
    }

    #[test]
    fn small_experiment_passes_and_is_reproducible() {
        let cfg = ErrorAccumConfig {
            k_grid: vec![4, 16, 32],
            trials: 2000,
            seed: 5,
            ..Default::default()
        };
        let a = error_accumulation_experiment(&cfg).unwrap();
        let b = error_accumulation_experiment(&cfg).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        assert!(a.passed(), "{:?}", a.failures());
        let decay = &a.measured["ensemble_decaying"];
        let expect = &a.bounds["ensemble_decaying_expectation"];
        for (m, e) in decay.iter().zip(expect) {
            assert!((m / e - 1.0).abs() < 0.05);
        }
    }

    #[test]
    fn rejects_short_sequences_and_few_trials() {
        let mut cfg = ErrorAccumConfig { k_grid: vec![1], ..Default::default() };
        assert!(error_accumulation_experiment(&cfg).is_err());
        cfg.k_grid = vec![4];
        cfg.trials = 10;
        assert!(error_accumulation_experiment(&cfg).is_err());
    }
}
