use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Softmax temperature as a function of the iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Temperature {
    Constant(f64),
    /// Linear interpolation from `start` at `t = 0` to `end` at the last iteration.
    Linear { start: f64, end: f64 },
}

impl Temperature {
    pub fn at(&self, t: usize, total_iters: usize) -> f64 {
        match *self {
            Temperature::Constant(tau) => tau,
            Temperature::Linear { start, end } => {
                let frac = if total_iters > 1 {
                    t as f64 / (total_iters - 1) as f64
                } else {
                    0.0
                };
                start + (end - start) * frac
            }
        }
    }
}

/// Three-phase loss-weight curriculum: phase logits are switched at
/// `floor(t1_frac * total_iters)` and `floor(t2_frac * total_iters)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurriculumConfig {
    pub total_iters: usize,
    pub t1_frac: f64,
    pub t2_frac: f64,
    pub logits: [[f64; 3]; 3],
    pub temperature: Temperature,
}

impl CurriculumConfig {
    pub fn new(total_iters: usize) -> Self {
        Self {
            total_iters,
            t1_frac: 0.3,
            t2_frac: 0.7,
            logits: [[2.0, -1.0, -2.0], [-1.0, 2.0, -1.0], [-2.0, -1.0, 2.0]],
            temperature: Temperature::Constant(1.0),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.t1_frac && self.t1_frac < self.t2_frac && self.t2_frac < 1.0) {
            return Err(Error::Config(format!(
                "need 0 < t1_frac < t2_frac < 1, got {} and {}",
                self.t1_frac, self.t2_frac
            )));
        }
        if self.logits.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Config("curriculum logits must be finite".into()));
        }
        let positive = |tau: f64| tau > 0.0;
        let ok = match self.temperature {
            Temperature::Constant(tau) => positive(tau),
            Temperature::Linear { start, end } => positive(start) && positive(end) && start.is_finite() && end.is_finite(),
        };
        if !ok {
            return Err(Error::Config(format!("temperature must stay positive: {:?}", self.temperature)));
        }
        Ok(())
    }

    /// Phase boundaries `(T1, T2)`.
    pub fn thresholds(&self) -> (usize, usize) {
        let t = self.total_iters as f64;
        ((self.t1_frac * t).floor() as usize, (self.t2_frac * t).floor() as usize)
    }
}

/// Loss weights `(α, β, γ)` in effect at iteration `t`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModulationState {
    pub t: usize,
    pub weights: [f64; 3],
}

impl ModulationState {
    pub fn alpha(&self) -> f64 {
        self.weights[0]
    }

    pub fn beta(&self) -> f64 {
        self.weights[1]
    }

    pub fn gamma(&self) -> f64 {
        self.weights[2]
    }
}

pub fn schedule_weights(t: usize, cfg: &CurriculumConfig) -> Result<ModulationState> {
    cfg.validate()?;
    if t >= cfg.total_iters {
        return Err(Error::IterationOutOfRange(t));
    }
    let (t1, t2) = cfg.thresholds();
    let phase = if t < t1 {
        0
    } else if t < t2 {
        1
    } else {
        2
    };
    let tau = cfg.temperature.at(t, cfg.total_iters);
    let mut weights = cfg.logits[phase].map(|v| v / tau);
    crate::predictors::softmax_in_place(&mut weights);
    Ok(ModulationState { t, weights })
}

/// Annealed training-mode distribution for alternating optimisation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AlternatingConfig {
    pub transition_period: f64,
    pub p_next_all: f64,
}

impl AlternatingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.transition_period > 0.0) {
            return Err(Error::Config(format!(
                "transition period must be positive, got {}",
                self.transition_period
            )));
        }
        if !(0.0..=0.3).contains(&self.p_next_all) {
            return Err(Error::Config(format!(
                "p_next_all must lie in [0, 0.3], got {}",
                self.p_next_all
            )));
        }
        Ok(())
    }
}

/// `(p_mask, p_ar, p_next_all)` at iteration `t`, with
/// `p_mask = max(0.7 - t / period, 0.3)`.
pub fn alternating_distribution(t: usize, cfg: &AlternatingConfig) -> Result<[f64; 3]> {
    cfg.validate()?;
    let p_mask = (0.7 - t as f64 / cfg.transition_period).max(0.3);
    Ok([p_mask, 1.0 - p_mask - cfg.p_next_all, cfg.p_next_all])
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_phase_softmax() {
        let s = schedule_weights(0, &CurriculumConfig::new(100)).unwrap();
        let e = [2f64.exp(), (-1f64).exp(), (-2f64).exp()];
        let z: f64 = e.iter().sum();
        for (w, x) in s.weights.iter().zip(e) {
            assert!((w - x / z).abs() < 1e-15);
        }
        assert!((s.alpha() - 0.936240).abs() < 1e-6);
        assert!((s.beta() - 0.046613).abs() < 1e-6);
        assert!((s.gamma() - 0.017148).abs() < 1e-6);
    }

    #[test]
    fn infinite_temperature_is_uniform() {
        let mut cfg = CurriculumConfig::new(10);
        cfg.temperature = Temperature::Constant(f64::INFINITY);
        for t in 0..10 {
            let s = schedule_weights(t, &cfg).unwrap();
            assert!(s.weights.iter().all(|&w| (w - 1.0 / 3.0).abs() < 1e-15));
        }
    }

    #[test]
    fn exactly_two_discontinuities() {
        let cfg = CurriculumConfig::new(1000);
        let ws: Vec<_> = (0..1000).map(|t| schedule_weights(t, &cfg).unwrap().weights).collect();
        let jumps: Vec<usize> = (1..1000).filter(|&t| ws[t] != ws[t - 1]).collect();
        assert_eq!(jumps, vec![300, 700]);
    }

    #[test]
    fn thresholds_floor() {
        assert_eq!(CurriculumConfig::new(7).thresholds(), (2, 4));
    }

    #[test]
    fn schedule_errors() {
        assert!(matches!(
            schedule_weights(10, &CurriculumConfig::new(10)),
            Err(Error::IterationOutOfRange(10))
        ));
        let mut cfg = CurriculumConfig::new(10);
        cfg.t1_frac = 0.8;
        assert!(schedule_weights(0, &cfg).is_err());
        cfg = CurriculumConfig::new(10);
        cfg.temperature = Temperature::Linear { start: 1.0, end: 0.0 };
        assert!(schedule_weights(0, &cfg).is_err());
    }

    #[test]
    fn alternating_endpoints() {
        let cfg = AlternatingConfig { transition_period: 1000.0, p_next_all: 0.1 };
        let p = alternating_distribution(0, &cfg).unwrap();
        assert_eq!(p[0], 0.7);
        assert!((p[1] - 0.2).abs() < 1e-15);
        assert_eq!(p[2], 0.1);
        for t in [400, 401, 5000] {
            let p = alternating_distribution(t, &cfg).unwrap();
            assert_eq!(p[0], 0.3);
            assert!((p[1] - 0.6).abs() < 1e-15);
        }
        let bad = AlternatingConfig { transition_period: 10.0, p_next_all: 0.31 };
        assert!(matches!(alternating_distribution(0, &bad), Err(Error::Config(_))));
    }

    proptest! {
        #[test]
        fn weights_sum_to_one(t in 0usize..500, tau in 0.01f64..100.0, lin in any::<bool>()) {
            let mut cfg = CurriculumConfig::new(500);
            cfg.temperature = if lin { Temperature::Linear { start: tau, end: 1.0 } } else { Temperature::Constant(tau) };
            let s = schedule_weights(t, &cfg).unwrap();
            prop_assert!((s.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(s.weights.iter().all(|&w| w > 0.0 && w <= 1.0));
        }

        #[test]
        fn alternating_is_monotone_and_normalised(t in 0usize..10_000, period in 1.0f64..5000.0, pna in 0.0f64..0.3) {
            let cfg = AlternatingConfig { transition_period: period, p_next_all: pna };
            let a = alternating_distribution(t, &cfg).unwrap();
            let b = alternating_distribution(t + 1, &cfg).unwrap();
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(a.iter().all(|&p| p >= 0.0));
            prop_assert!(b[0] <= a[0] && b[1] >= a[1]);
        }
    }
}
