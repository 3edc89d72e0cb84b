use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::report::{ExperimentReport, RawTable};
use crate::rng::seeded;
use crate::{Error, Result};

/// Zero-mean autoregressive process `y_t = Σ β_i y_{t-i} + ε_t`, `ε_t ~ N(0, σ²)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArProcess {
    pub coefficients: Vec<f64>,
    pub noise_var: f64,
}

impl ArProcess {
    pub fn new(coefficients: Vec<f64>, noise_var: f64) -> Result<Self> {
        let p = Self {
            coefficients,
            noise_var,
        };
        p.validate()?;
        Ok(p)
    }

    /// `β_i = c r^i`, truncated once `|c r^i| < 1e-14`.
    pub fn geometric(c: f64, r: f64, noise_var: f64) -> Result<Self> {
        if !(r.abs() < 1.0) {
            return Err(Error::Config(format!("decay ratio must satisfy |r| < 1, got {r}")));
        }
        let mut coefficients = Vec::new();
        let mut b = c * r;
        while b.abs() >= 1e-14 {
            coefficients.push(b);
            b *= r;
        }
        Self::new(coefficients, noise_var)
    }

    pub fn validate(&self) -> Result<()> {
        let l1: f64 = self.coefficients.iter().map(|b| b.abs()).sum();
        if !(l1 < 1.0) {
            return Err(Error::Config(format!("Σ|β_i| must be below 1 for stationarity, got {l1}")));
        }
        if !(self.noise_var > 0.0 && self.noise_var.is_finite()) {
            return Err(Error::Config(format!("noise variance must be positive, got {}", self.noise_var)));
        }
        Ok(())
    }

    pub fn order(&self) -> usize {
        self.coefficients.len()
    }

    /// Draws `len` consecutive values after a burn-in from zero initial state.
    pub fn simulate<R: Rng + ?Sized>(&self, len: usize, rng: &mut R) -> Vec<f64> {
        let burn_in = 1000 + 10 * self.order();
        let noise = Normal::new(0.0, self.noise_var.sqrt()).expect("validated variance");
        let mut y = Vec::with_capacity(burn_in + len);
        for t in 0..burn_in + len {
            let ar: f64 = self
                .coefficients
                .iter()
                .zip(y[..t].iter().rev())
                .map(|(b, v)| b * v)
                .sum();
            y.push(ar + noise.sample(rng));
        }
        y.split_off(burn_in)
    }

    /// Stationary variance `γ_0` from the Yule–Walker equations
    /// `γ_k - Σ_i β_i γ_{|k-i|} = σ² δ_{k0}`, `k = 0..=p`.
    pub fn variance(&self) -> Result<f64> {
        let p = self.order();
        let mut a = DMatrix::<f64>::identity(p + 1, p + 1);
        for k in 0..=p {
            for (i, &b) in self.coefficients.iter().enumerate() {
                a[(k, k.abs_diff(i + 1))] -= b;
            }
        }
        let mut rhs = DVector::zeros(p + 1);
        rhs[0] = self.noise_var;
        let gamma = a.lu().solve(&rhs).ok_or(Error::Singular)?;
        Ok(gamma[0])
    }
}

/// Least-squares AR(p) fit without intercept, via the normal equations with a
/// `1e-10` ridge. `p = 0` returns an empty coefficient vector.
pub fn fit_ar_ls(series: &[f64], p: usize) -> Result<Vec<f64>> {
    if series.len() <= 10 * p {
        return Err(Error::Config(format!(
            "series of length {} is too short for order {p}",
            series.len()
        )));
    }
    if p == 0 {
        return Ok(Vec::new());
    }
    let mut gram = DMatrix::<f64>::zeros(p, p);
    let mut rhs = DVector::<f64>::zeros(p);
    for t in p..series.len() {
        let lags = &series[t - p..t];
        for i in 0..p {
            let xi = lags[p - 1 - i];
            rhs[i] += xi * series[t];
            for j in 0..=i {
                gram[(i, j)] += xi * lags[p - 1 - j];
            }
        }
    }
    for i in 0..p {
        for j in 0..i {
            gram[(j, i)] = gram[(i, j)];
        }
        gram[(i, i)] += 1e-10;
    }
    let chol = gram.cholesky().ok_or(Error::Singular)?;
    let beta = chol.solve(&rhs);
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Singular);
    }
    Ok(beta.iter().copied().collect())
}

/// Mean squared one-step prediction error of `coefficients` on `series`,
/// scored from index `start` (which must be at least the order). An empty
/// coefficient vector predicts the constant `mean`.
pub fn one_step_mse(series: &[f64], coefficients: &[f64], start: usize, mean: f64) -> f64 {
    let p = coefficients.len();
    assert!(start >= p && start < series.len());
    let mut sse = 0.0;
    for t in start..series.len() {
        let pred = if p == 0 {
            mean
        } else {
            coefficients.iter().zip(series[t - p..t].iter().rev()).map(|(b, v)| b * v).sum()
        };
        sse += (series[t] - pred).powi(2);
    }
    sse / (series.len() - start) as f64
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArConfig {
    pub process: ArProcess,
    pub p_grid: Vec<usize>,
    /// Length of the training series; an equally long continuation is held out.
    pub series_len: usize,
    pub seed: u64,
}

impl Default for ArConfig {
    fn default() -> Self {
        Self {
            process: ArProcess::geometric(0.5, 0.5, 1.0).expect("valid default process"),
            p_grid: vec![1, 2, 4, 8, 16],
            series_len: 100_000,
            seed: 0,
        }
    }
}

/// Fits AR(p) for each `p` on a simulated series and scores one-step
/// prediction on a held-out continuation.
pub fn ar_convergence_experiment(cfg: &ArConfig) -> Result<ExperimentReport> {
    cfg.process.validate()?;
    if cfg.p_grid.is_empty() {
        return Err(Error::Config("empty order grid".into()));
    }
    let p_max = *cfg.p_grid.iter().max().expect("non-empty");
    let mut rng = seeded(cfg.seed);
    let series = cfg.process.simulate(2 * cfg.series_len, &mut rng);
    let (train, _) = series.split_at(cfg.series_len);
    let train_mean = train.iter().sum::<f64>() / train.len() as f64;
    let start = cfg.series_len.max(p_max);

    let mut report = ExperimentReport::new("ar_convergence", cfg);
    report.raw = RawTable::new(&["p", "mse", "coefficient_index", "coefficient"]);
    let mut mse = Vec::new();
    for &p in &cfg.p_grid {
        let beta = fit_ar_ls(train, p)?;
        let m = one_step_mse(&series, &beta, start, train_mean);
        for (i, b) in beta.iter().enumerate() {
            report.raw.push(vec![p as f64, m, (i + 1) as f64, *b]);
        }
        if beta.is_empty() {
            report.raw.push(vec![0.0, m, 0.0, f64::NAN]);
        }
        mse.push(m);
    }
    let s2 = cfg.process.noise_var;
    report.grid = cfg.p_grid.iter().map(|&p| p as f64).collect();
    let at_max = mse[cfg.p_grid.iter().position(|&p| p == p_max).expect("max in grid")];
    let gap = (at_max - s2).abs() / s2;
    report.measured.insert("mse".into(), mse.clone());
    report.measured.insert("relative_gap_at_max_order".into(), vec![gap]);
    report.bounds.insert("noise_var".into(), vec![s2; mse.len()]);
    report.bounds.insert("process_variance".into(), vec![cfg.process.variance()?]);
    report.pass.insert("mse_at_max_order_within_5pct_of_noise".into(), gap < 0.05);

    let mut order: Vec<usize> = (0..cfg.p_grid.len()).collect();
    order.sort_by_key(|&i| cfg.p_grid[i]);
    let monotone = order.windows(2).all(|w| mse[w[1]] <= mse[w[0]] * 1.01);
    report.pass.insert("mse_non_increasing_within_1pct".into(), monotone);
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `γ_0 = σ² Σ ψ_k²` from the MA(∞) weights `ψ_k = Σ_i β_i ψ_{k-i}`.
    fn psi_variance(p: &ArProcess) -> f64 {
        let mut psi = vec![1.0];
        for k in 1..5000 {
            let v: f64 = p.coefficients.iter().enumerate().take(k).map(|(i, b)| b * psi[k - 1 - i]).sum();
            psi.push(v);
        }
        p.noise_var * psi.iter().map(|x| x * x).sum::<f64>()
    }

    #[test]
    fn geometric_truncation() {
        let p = ArProcess::geometric(0.5, 0.5, 1.0).unwrap();
        assert!((p.coefficients[0] - 0.25).abs() < 1e-15);
        assert!(p.coefficients.last().unwrap().abs() >= 1e-14);
        assert!(p.coefficients.last().unwrap().abs() * 0.5 < 1e-14);
        assert!(ArProcess::new(vec![0.6, 0.5], 1.0).is_err());
    }

    #[test]
    fn yule_walker_variance() {
        let ar1 = ArProcess::new(vec![0.5], 2.0).unwrap();
        assert!((ar1.variance().unwrap() - 2.0 / 0.75).abs() < 1e-12);
        for p in [ArProcess::geometric(0.5, 0.5, 1.0).unwrap(), ArProcess::new(vec![0.3, -0.2, 0.1], 1.5).unwrap()] {
            assert!((p.variance().unwrap() - psi_variance(&p)).abs() < 1e-10);
        }
    }

    #[test]
    fn noiseless_ar1_is_recovered() {
        let mut y = vec![1.0];
        for _ in 0..200 {
            y.push(0.5 * y.last().unwrap());
        }
        let b = fit_ar_ls(&y, 1).unwrap();
        assert!((b[0] - 0.5).abs() < 1e-6, "{b:?}");
    }

    #[test]
    fn white_noise_fits_near_zero() {
        let mut rng = seeded(4);
        let n = 20_000;
        let y = ArProcess::new(vec![], 1.0).unwrap().simulate(n, &mut rng);
        let b = fit_ar_ls(&y, 3).unwrap();
        assert!(b.iter().all(|x| x.abs() < 3.0 / (n as f64).sqrt()), "{b:?}");
    }

    #[test]
    fn zero_series_is_handled_by_jitter() {
        let b = fit_ar_ls(&vec![0.0; 100], 2).unwrap();
        assert!(b.iter().all(|x| x.abs() < 1e-12));
        assert!(fit_ar_ls(&[1.0; 20], 2).is_err());
    }

    #[test]
    fn ar1_reaches_noise_floor_and_mean_predictor_reaches_variance() {
        let process = ArProcess::new(vec![0.6], 1.0).unwrap();
        let cfg = ArConfig { process: process.clone(), p_grid: vec![0, 1, 3], series_len: 50_000, seed: 2 };
        let r = ar_convergence_experiment(&cfg).unwrap();
        let mse = &r.measured["mse"];
        assert!((mse[1] - 1.0).abs() < 0.05);
        assert!((mse[2] - 1.0).abs() < 0.05);
        let g0 = process.variance().unwrap();
        assert!((mse[0] / g0 - 1.0).abs() < 0.05, "{} vs {g0}", mse[0]);
        assert!(r.passed());
    }

    #[test]
    fn geometric_process_mse_is_non_increasing() {
        let cfg = ArConfig { series_len: 20_000, seed: 9, ..Default::default() };
        let r = ar_convergence_experiment(&cfg).unwrap();
        assert!(r.pass["mse_non_increasing_within_1pct"], "{:?}", r.measured["mse"]);
    }
}
