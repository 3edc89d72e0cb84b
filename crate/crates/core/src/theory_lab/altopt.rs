use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::objectives::{alternating_distribution, AlternatingConfig};
use crate::report::{ExperimentReport, RawTable};
use crate::rng::stream;
use crate::{Error, Result};

/// Separable objective `Σ_k (λ_k θ_k² / 2 + a sin(ω θ_k))`.
///
/// Its Hessian is diagonal with entries `λ_k - a ω² sin(ω θ_k)`, so it is
/// L-smooth with `L = max λ_k + a ω²`; it is non-convex when `a ω² > min λ_k`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TestObjective {
    pub curvatures: Vec<f64>,
    pub amplitude: f64,
    pub frequency: f64,
}

impl TestObjective {
    pub fn quadratic(curvatures: Vec<f64>) -> Self {
        Self {
            curvatures,
            amplitude: 0.0,
            frequency: 0.0,
        }
    }

    pub fn dim(&self) -> usize {
        self.curvatures.len()
    }

    pub fn value(&self, theta: &[f64]) -> f64 {
        let (a, w) = (self.amplitude, self.frequency);
        self.curvatures.iter().zip(theta).map(|(l, t)| 0.5 * l * t * t + a * (w * t).sin()).sum()
    }

    pub fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        let (a, w) = (self.amplitude, self.frequency);
        for ((o, l), t) in out.iter_mut().zip(&self.curvatures).zip(theta) {
            *o = l * t + a * w * (w * t).cos();
        }
    }

    pub fn smoothness(&self) -> f64 {
        let max = self.curvatures.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        max + self.amplitude.abs() * self.frequency * self.frequency
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AltOptConfig {
    pub t_grid: Vec<usize>,
    pub eta0: f64,
    pub objective: TestObjective,
    /// Variance of the mode-switching gradient noise.
    pub sigma_mode2: f64,
    pub modes: AlternatingConfig,
    /// Standard deviation of the Gaussian initial point.
    pub init_scale: f64,
    pub trials: usize,
    pub seed: u64,
}

impl Default for AltOptConfig {
    fn default() -> Self {
        let objective = TestObjective {
            curvatures: (0..10).map(|k| 0.5 + 1.5 * k as f64 / 9.0).collect(),
            amplitude: 0.3,
            frequency: 2.0,
        };
        Self {
            t_grid: vec![100, 1000, 10_000],
            eta0: 1.0 / objective.smoothness(),
            objective,
            sigma_mode2: 1.0,
            modes: AlternatingConfig {
                transition_period: 1000.0,
                p_next_all: 0.1,
            },
            init_scale: 3.0,
            trials: 50,
            seed: 0,
        }
    }
}

impl AltOptConfig {
    pub fn validate(&self) -> Result<()> {
        let l = self.objective.smoothness();
        if !(self.eta0 > 0.0 && self.eta0 <= l.recip() * (1.0 + 1e-12)) {
            return Err(Error::Config(format!("need 0 < eta0 <= 1/L = {}, got {}", 1.0 / l, self.eta0)));
        }
        if self.t_grid.is_empty() || self.trials == 0 || self.objective.dim() == 0 {
            return Err(Error::Config("need a non-empty T grid, trials > 0 and dimension > 0".into()));
        }
        if !(self.sigma_mode2 >= 0.0) {
            return Err(Error::Config(format!("mode-noise variance must be non-negative, got {}", self.sigma_mode2)));
        }
        self.modes.validate()
    }

    /// `η_t = η0 (1 + η0² L² t)^{-1/2}`.
    pub fn step_size(&self, t: usize) -> f64 {
        let l = self.objective.smoothness();
        self.eta0 / (1.0 + self.eta0 * self.eta0 * l * l * t as f64).sqrt()
    }
}

/// `‖∇L(θ_t)‖²` for `t = 0..=t_max` along one alternating-SGD run.
fn run_trial(cfg: &AltOptConfig, t_max: usize, trial: usize) -> Result<Vec<f64>> {
    let d = cfg.objective.dim();
    let mut rng = stream(cfg.seed, trial as u64);
    let init = Normal::new(0.0, cfg.init_scale).map_err(|e| Error::Config(e.to_string()))?;
    let mut theta: Vec<f64> = (0..d).map(|_| init.sample(&mut rng)).collect();
    // One fixed direction per mode; the noise is the chosen mode's deviation
    // from the probability-weighted mean direction.
    let dirs: Vec<Vec<f64>> = (0..3)
        .map(|_| {
            let v: Vec<f64> = (0..d).map(|_| StandardNormal.sample(&mut rng)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.into_iter().map(|x| x / norm).collect()
        })
        .collect();
    let mut grad = vec![0.0; d];
    let mut out = Vec::with_capacity(t_max + 1);
    for t in 0..=t_max {
        cfg.objective.gradient(&theta, &mut grad);
        out.push(grad.iter().map(|g| g * g).sum());
        if t == t_max {
            break;
        }
        let probs = alternating_distribution(t, &cfg.modes)?;
        let u: f64 = rng.random();
        let m = if u < probs[0] {
            0
        } else if u < probs[0] + probs[1] {
            1
        } else {
            2
        };
        let mean: Vec<f64> = (0..d).map(|k| (0..3).map(|j| probs[j] * dirs[j][k]).sum()).collect();
        let spread: f64 = (0..3)
            .map(|j| probs[j] * dirs[j].iter().zip(&mean).map(|(a, b)| (a - b).powi(2)).sum::<f64>())
            .sum();
        let scale = if spread > 0.0 { (cfg.sigma_mode2 / spread).sqrt() } else { 0.0 };
        let eta = cfg.step_size(t);
        for k in 0..d {
            theta[k] -= eta * (grad[k] + scale * (dirs[m][k] - mean[k]));
        }
        if theta.iter().any(|x| !(x.abs() <= 1e6)) {
            return Err(Error::Divergence { step: t + 1 });
        }
    }
    Ok(out)
}

/// Runs alternating SGD with annealed mode noise and reports, per horizon T,
/// `min_{t≤T}` of the trial-averaged squared gradient norm and the rate
/// ratio `min · √T / (1 + ln T)`.
pub fn altopt_convergence_experiment(cfg: &AltOptConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let mut grid = cfg.t_grid.clone();
    grid.sort_unstable();
    let t_max = *grid.last().expect("validated");
    let runs: Vec<Result<Vec<f64>>> = (0..cfg.trials).into_par_iter().map(|i| run_trial(cfg, t_max, i)).collect();
    let mut mean = vec![0.0; t_max + 1];
    for r in runs {
        for (m, g) in mean.iter_mut().zip(r?) {
            *m += g;
        }
    }
    for m in &mut mean {
        *m /= cfg.trials as f64;
    }
    let mut running = Vec::with_capacity(mean.len());
    let mut best = f64::INFINITY;
    for &m in &mean {
        best = best.min(m);
        running.push(best);
    }
    let mins: Vec<f64> = grid.iter().map(|&t| running[t]).collect();
    let ratios: Vec<f64> = grid
        .iter()
        .zip(&mins)
        .map(|(&t, m)| m * (t as f64).sqrt() / (1.0 + (t as f64).ln()))
        .collect();

    let mut report = ExperimentReport::new("altopt_convergence", cfg);
    report.grid = grid.iter().map(|&t| t as f64).collect();
    let monotone = ratios.windows(2).all(|w| w[1] <= 1.2 * w[0]);
    report.pass.insert("rate_ratio_non_increasing_within_20pct".into(), monotone);
    report.measured.insert("min_grad_norm2".into(), mins);
    report.measured.insert("rate_ratio".into(), ratios);
    report.bounds.insert("smoothness".into(), vec![cfg.objective.smoothness()]);
    report.raw = RawTable::new(&["t", "mean_grad_norm2", "running_min"]);
    for (t, (m, r)) in mean.iter().zip(&running).enumerate() {
        report.raw.push(vec![t as f64, *m, *r]);
    }
    Ok(report)
}
