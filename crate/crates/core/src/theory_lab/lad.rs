use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::report::{log_log_slope, ExperimentReport, RawTable};
use crate::rng::stream;
use crate::{Error, Result};

/// `(1/n) Σ √(r_i² + ε²) + λ ‖β‖₁` with `r = y - Xβ`. `ε = 0` gives the exact
/// LAD-Lasso objective.
pub fn lad_objective(x: &DMatrix<f64>, y: &DVector<f64>, beta: &[f64], lambda: f64, eps: f64) -> f64 {
    let r = y - x * DVector::from_column_slice(beta);
    smooth_abs_mean(&r, eps) + lambda * beta.iter().map(|b| b.abs()).sum::<f64>()
}

fn smooth_abs_mean(r: &DVector<f64>, eps: f64) -> f64 {
    let e2 = eps * eps;
    r.iter().map(|v| (v * v + e2).sqrt()).sum::<f64>() / r.len() as f64
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadOptions {
    /// Final smoothing width of `|u| ≈ √(u² + ε²)`.
    pub epsilon: f64,
    /// First smoothing width; each stage divides it by ten down to `epsilon`.
    pub epsilon_start: f64,
    /// A stage ends once the objective drops by less than `tol · (1 + |F|)`
    /// over `window` iterations.
    pub tol: f64,
    pub window: usize,
    /// Iteration budget across all stages.
    pub max_iter: usize,
}

impl Default for LadOptions {
    fn default() -> Self {
        Self {
            epsilon: 1e-6,
            epsilon_start: 1.0,
            tol: 1e-9,
            window: 20,
            max_iter: 20_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct LadFit {
    pub beta: Vec<f64>,
    /// Smoothed objective at the final `ε`.
    pub objective: f64,
    pub iterations: usize,
    /// Smoothed objective of the accepted iterate after every iteration,
    /// each at the `ε` of its stage.
    pub trace: Vec<f64>,
}

fn soft_threshold(v: f64, t: f64) -> f64 {
    if v > t {
        v - t
    } else if v < -t {
        v + t
    } else {
        0.0
    }
}

/// LAD-Lasso fit started from zero. See [`lad_lasso_fit_from`].
pub fn lad_lasso_fit(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64, opts: &LadOptions) -> Result<LadFit> {
    lad_lasso_fit_from(x, y, lambda, opts, &vec![0.0; x.ncols()])
}

/// Minimises the smoothed LAD-Lasso objective by monotone accelerated
/// proximal gradient (soft-thresholding prox, backtracking step size,
/// momentum reset whenever a step would increase the objective), with the
/// smoothing width decreased geometrically between stages.
///
/// Lowering `ε` can only lower the smoothed objective at a fixed point, so
/// the recorded trace is non-increasing across stages as well as within them.
pub fn lad_lasso_fit_from(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    opts: &LadOptions,
    init: &[f64],
) -> Result<LadFit> {
    let (n, p) = x.shape();
    if y.len() != n || init.len() != p || n == 0 {
        return Err(Error::DimensionMismatch(format!(
            "X is {n}x{p}, y has {} entries, start has {}",
            y.len(),
            init.len()
        )));
    }
    if !(lambda >= 0.0) || !(opts.epsilon > 0.0) || opts.epsilon_start < opts.epsilon {
        return Err(Error::Config(format!(
            "need λ >= 0 and 0 < epsilon <= epsilon_start, got λ={lambda}, {opts:?}"
        )));
    }
    let inv_n = 1.0 / n as f64;
    let l1 = |b: &DVector<f64>| b.iter().map(|v| v.abs()).sum::<f64>();

    let mut xk = DVector::from_column_slice(init);
    let mut xk_fit = x * &xk;
    let mut eps = opts.epsilon_start;
    let mut lip = 1.0;
    let mut trace = Vec::new();
    let mut iterations = 0;
    loop {
        let e2 = eps * eps;
        let smooth = |fit: &DVector<f64>| -> f64 {
            y.iter().zip(fit.iter()).map(|(a, b)| ((a - b).powi(2) + e2).sqrt()).sum::<f64>() * inv_n
        };
        let mut f_x = smooth(&xk_fit) + lambda * l1(&xk);
        trace.push(f_x);
        let mut yk = xk.clone();
        let mut yk_fit = xk_fit.clone();
        let mut prev = xk.clone();
        let mut prev_fit = xk_fit.clone();
        let mut t = 1.0f64;
        let stage_start = trace.len() - 1;
        let converged = loop {
            if iterations >= opts.max_iter {
                break false;
            }
            iterations += 1;
            // gradient of the smooth part at y_k
            let w = DVector::from_iterator(
                n,
                y.iter().zip(yk_fit.iter()).map(|(a, b)| {
                    let r = a - b;
                    -r / (r * r + e2).sqrt() * inv_n
                }),
            );
            let grad = x.tr_mul(&w);
            let f_y = smooth(&yk_fit);
            lip *= 0.9;
            let (z, z_fit, f_z_smooth) = loop {
                let z = DVector::from_iterator(
                    p,
                    yk.iter().zip(grad.iter()).map(|(v, g)| soft_threshold(v - g / lip, lambda / lip)),
                );
                let z_fit = x * &z;
                let fz = smooth(&z_fit);
                let d = &z - &yk;
                let model = f_y + grad.dot(&d) + 0.5 * lip * d.norm_squared();
                if fz <= model + 1e-15 * (1.0 + f_y.abs()) || !lip.is_finite() {
                    break (z, z_fit, fz);
                }
                lip *= 2.0;
            };
            let f_z = f_z_smooth + lambda * l1(&z);
            let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t * t).sqrt());
            if f_z <= f_x {
                // accept z and extrapolate
                let beta = (t - 1.0) / t_next;
                yk = &z + (&z - &prev) * beta;
                yk_fit = &z_fit + (&z_fit - &prev_fit) * beta;
                prev = z.clone();
                prev_fit = z_fit.clone();
                xk = z;
                xk_fit = z_fit;
                f_x = f_z;
                t = t_next;
            } else {
                // reject and restart momentum from the current iterate
                yk = xk.clone();
                yk_fit = xk_fit.clone();
                prev = xk.clone();
                prev_fit = xk_fit.clone();
                t = 1.0;
            }
            trace.push(f_x);
            let k = trace.len() - 1;
            if k - stage_start >= opts.window {
                let drop = trace[k - opts.window] - f_x;
                if drop <= opts.tol * (1.0 + f_x.abs()) {
                    break true;
                }
            }
        };
        if !converged {
            let beta: Vec<f64> = xk.iter().copied().collect();
            return Err(Error::NonConvergence {
                iters: iterations,
                best_objective: f_x,
                best: beta,
            });
        }
        if eps <= opts.epsilon {
            return Ok(LadFit {
                beta: xk.iter().copied().collect(),
                objective: f_x,
                iterations,
                trace,
            });
        }
        eps = (eps * 0.1).max(opts.epsilon);
    }
}

/// Brute-force reference minimiser: exhaustive search over a
/// `points^p` lattice centred on `center`, re-centred on the best point and
/// shrunk by half `refinements` times. Returns the best point and its
/// objective. Exponential in `p`; for small reference instances only.
pub fn lattice_search(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    lambda: f64,
    eps: f64,
    center: &[f64],
    radius: f64,
    points: usize,
    refinements: usize,
) -> Result<(Vec<f64>, f64)> {
    let p = center.len();
    let total = (points as f64).powi(p as i32);
    if points < 2 || total > 1e7 {
        return Err(Error::EnumerationTooLarge(format!("{points}^{p} lattice points")));
    }
    let total = total as usize;
    let mut best = center.to_vec();
    let mut best_obj = lad_objective(x, y, &best, lambda, eps);
    let mut step = 2.0 * radius / (points - 1) as f64;
    let half = (points - 1) as f64 / 2.0;
    for _ in 0..=refinements {
        let c = best.clone();
        let (idx, obj) = (0..total)
            .into_par_iter()
            .map(|code| {
                let mut b = vec![0.0; p];
                let mut rest = code;
                for v in b.iter_mut().zip(&c) {
                    *v.0 = v.1 + ((rest % points) as f64 - half) * step;
                    rest /= points;
                }
                (code, lad_objective(x, y, &b, lambda, eps))
            })
            .reduce(|| (usize::MAX, f64::INFINITY), |a, b| if b.1 < a.1 || (b.1 == a.1 && b.0 < a.0) { b } else { a });
        if obj < best_obj {
            best_obj = obj;
            let mut rest = idx;
            for (v, cv) in best.iter_mut().zip(&c) {
                *v = cv + ((rest % points) as f64 - half) * step;
                rest /= points;
            }
        }
        step *= 0.5;
    }
    Ok((best, best_obj))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LadLassoConfig {
    pub n_grid: Vec<usize>,
    pub p: usize,
    pub s: usize,
    pub sigma: f64,
    pub c0: f64,
    /// Magnitude of the non-zero coefficients (random signs).
    pub signal: f64,
    pub trials: usize,
    pub seed: u64,
    pub options: LadOptions,
}

impl Default for LadLassoConfig {
    fn default() -> Self {
        Self {
            n_grid: vec![200, 400, 800, 1600, 3200],
            p: 256,
            s: 4,
            sigma: 1.0,
            c0: 1.5,
            signal: 5.0,
            trials: 20,
            seed: 0,
            options: LadOptions::default(),
        }
    }
}

impl LadLassoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.s >= self.p {
            return Err(Error::Config(format!("sparsity {} must be below dimension {}", self.s, self.p)));
        }
        let floor = self.s as f64 * (self.p as f64).ln();
        if let Some(&n) = self.n_grid.iter().find(|&&n| n as f64 <= floor) {
            return Err(Error::Config(format!("n = {n} must exceed s log p = {floor:.1}")));
        }
        if self.n_grid.is_empty() || self.trials == 0 || !(self.sigma > 0.0) || !(self.c0 > 0.0) {
            return Err(Error::Config("need a non-empty n grid, trials > 0, sigma > 0 and c0 > 0".into()));
        }
        Ok(())
    }

    pub fn lambda(&self, n: usize) -> f64 {
        self.c0 * self.sigma * ((self.p as f64).ln() / n as f64).sqrt()
    }
}

/// A sparse regression instance with a standard Gaussian design and
/// Gaussian noise.
pub(crate) fn draw_instance<R: Rng + ?Sized>(
    n: usize,
    p: usize,
    s: usize,
    signal: f64,
    sigma: f64,
    rng: &mut R,
) -> (DMatrix<f64>, DVector<f64>, Vec<f64>) {
    let x = DMatrix::from_fn(n, p, |_, _| StandardNormal.sample(rng));
    let mut beta = vec![0.0; p];
    for i in index::sample(rng, p, s) {
        beta[i] = if rng.random::<bool>() { signal } else { -signal };
    }
    let noise = Normal::new(0.0, sigma).expect("positive sigma");
    let y = &x * DVector::from_column_slice(&beta) + DVector::from_fn(n, |_, _| noise.sample(rng));
    (x, y, beta)
}

/// Mean estimation error `‖β̂ - β*‖₂` against sample size with
/// `λ = C0 σ √(log p / n)`, and its log–log slope.
pub fn lad_scaling_experiment(cfg: &LadLassoConfig) -> Result<ExperimentReport> {
    cfg.validate()?;
    let jobs: Vec<(usize, usize)> = (0..cfg.n_grid.len())
        .flat_map(|i| (0..cfg.trials).map(move |t| (i, t)))
        .collect();
    let results: Vec<Result<(f64, usize)>> = jobs
        .par_iter()
        .map(|&(i, t)| {
            let n = cfg.n_grid[i];
            let mut rng = stream(cfg.seed, (i * cfg.trials + t) as u64);
            let (x, y, truth) = draw_instance(n, cfg.p, cfg.s, cfg.signal, cfg.sigma, &mut rng);
            let fit = lad_lasso_fit(&x, &y, cfg.lambda(n), &cfg.options)?;
            let err = fit.beta.iter().zip(&truth).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            Ok((err, fit.iterations))
        })
        .collect();

    let mut report = ExperimentReport::new("lad_scaling", cfg);
    report.raw = RawTable::new(&["n", "trial", "error", "iterations"]);
    let mut sums = vec![0.0; cfg.n_grid.len()];
    for (&(i, t), r) in jobs.iter().zip(results) {
        let (err, iters) = r?;
        sums[i] += err;
        report.raw.push(vec![cfg.n_grid[i] as f64, t as f64, err, iters as f64]);
    }
    let ns: Vec<f64> = cfg.n_grid.iter().map(|&n| n as f64).collect();
    let mean: Vec<f64> = sums.iter().map(|s| s / cfg.trials as f64).collect();
    let slope = log_log_slope(&ns, &mean);
    report.grid = ns.clone();
    report.bounds.insert(
        "sigma_sqrt_s_log_p_over_n".into(),
        ns.iter().map(|n| cfg.sigma * (cfg.s as f64 * (cfg.p as f64).ln() / n).sqrt()).collect(),
    );
    report.measured.insert("mean_error".into(), mean);
    report.slopes.insert("error_vs_n".into(), slope);
    report.pass.insert("slope_in_-0.65_-0.35".into(), (-0.65..=-0.35).contains(&slope));
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn soft_threshold_cases() {
        assert_eq!(soft_threshold(3.0, 1.0), 2.0);
        assert_eq!(soft_threshold(-3.0, 1.0), -2.0);
        assert_eq!(soft_threshold(0.5, 1.0), 0.0);
    }

    #[test]
    fn interpolates_square_noiseless_system() {
        let mut rng = seeded(1);
        let x = DMatrix::from_fn(5, 5, |_, _| StandardNormal.sample(&mut rng));
        let truth = [1.0, -2.0, 0.5, 0.0, 3.0];
        let y = &x * DVector::from_column_slice(&truth);
        let fit = lad_lasso_fit(&x, &y, 0.0, &LadOptions::default()).unwrap();
        for (a, b) in fit.beta.iter().zip(truth) {
            assert!((a - b).abs() < 1e-4, "{:?}", fit.beta);
        }
    }

    #[test]
    fn large_penalty_shrinks_to_zero() {
        let mut rng = seeded(2);
        let (x, y, _) = draw_instance(50, 10, 2, 3.0, 1.0, &mut rng);
        // the subgradient of the loss at zero is bounded by max_j (1/n) Σ|x_ij|
        let lambda = (0..10).map(|j| x.column(j).abs().sum() / 50.0).fold(0.0, f64::max);
        let fit = lad_lasso_fit(&x, &y, lambda, &LadOptions::default()).unwrap();
        assert!(fit.beta.iter().all(|&b| b == 0.0), "{:?}", fit.beta);
    }

    #[test]
    fn objective_never_increases() {
        let mut rng = seeded(3);
        let (x, y, _) = draw_instance(60, 12, 3, 2.0, 1.0, &mut rng);
        let fit = lad_lasso_fit(&x, &y, 0.1, &LadOptions::default()).unwrap();
        assert!(fit.trace.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn random_restarts_agree() {
        let mut rng = seeded(4);
        let (x, y, _) = draw_instance(80, 16, 3, 2.0, 1.0, &mut rng);
        let lambda = 0.15;
        let opts = LadOptions::default();
        let base = lad_lasso_fit(&x, &y, lambda, &opts).unwrap().objective;
        let mut best = base;
        for _ in 0..10 {
            let init: Vec<f64> = (0..16)
                .map(|_| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    3.0 * z
                })
                .collect();
            best = best.min(lad_lasso_fit_from(&x, &y, lambda, &opts, &init).unwrap().objective);
        }
        assert!(base - best < 1e-4, "{base} vs {best}");
    }

    #[test]
    fn matches_lattice_oracle_on_tiny_instance() {
        let mut rng = seeded(5);
        let (x, y, truth) = draw_instance(40, 8, 2, 2.0, 1.0, &mut rng);
        let lambda = 1.5 * (8f64.ln() / 40.0).sqrt();
        let opts = LadOptions::default();
        let fit = lad_lasso_fit(&x, &y, lambda, &opts).unwrap();
        let (_, grid) = lattice_search(&x, &y, lambda, opts.epsilon, &truth, 1.0, 3, 24).unwrap();
        assert!(fit.objective <= grid + 1e-4, "solver {} grid {grid}", fit.objective);
    }

    #[test]
    fn non_convergence_reports_best_iterate() {
        let mut rng = seeded(6);
        let (x, y, _) = draw_instance(30, 5, 1, 2.0, 1.0, &mut rng);
        let opts = LadOptions { max_iter: 3, ..Default::default() };
        match lad_lasso_fit(&x, &y, 0.1, &opts) {
            Err(Error::NonConvergence { iters, best, .. }) => {
                assert_eq!(iters, 3);
                assert_eq!(best.len(), 5);
            }
            other => panic!("{other:?}"),
        }
    }
}
