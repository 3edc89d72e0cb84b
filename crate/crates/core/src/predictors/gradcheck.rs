use serde::Serialize;

use super::PredictorModel;
use crate::objectives::{loss, loss_and_grad, LossSpec};
use crate::token_core::TokenSequence;
use crate::{Error, Result};

/// Outcome of comparing analytic and central-difference gradients.
#[derive(Clone, Debug, Serialize)]
pub struct GradCheckReport {
    /// Largest `|a - f| / max(1e-8, |a| + |f|)` over all parameters.
    pub max_rel_error: f64,
    pub worst_index: usize,
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn analytic_norm(&self) -> f64 {
        self.analytic.iter().map(|g| g * g).sum::<f64>().sqrt()
    }
}

/// Checks the analytic gradient of `spec` against central finite differences
/// with step `h`. Parameters are perturbed in place and restored bit-exactly.
pub fn grad_check<M: PredictorModel + ?Sized>(
    model: &mut M,
    spec: LossSpec,
    seq: &TokenSequence,
    h: f64,
) -> Result<GradCheckReport> {
    if !(h > 0.0) {
        return Err(Error::Config(format!("finite-difference step must be positive, got {h}")));
    }
    let mut analytic = vec![0.0; model.params().len()];
    loss_and_grad(&*model, spec, seq, 1.0, &mut analytic)?;
    if let Some(index) = analytic.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFiniteGradient { index });
    }
    let mut numeric = Vec::with_capacity(analytic.len());
    for i in 0..analytic.len() {
        let original = model.params()[i];
        model.params_mut()[i] = original + h;
        let up = loss(&*model, spec, seq);
        model.params_mut()[i] = original - h;
        let down = loss(&*model, spec, seq);
        model.params_mut()[i] = original;
        let f = (up? - down?) / (2.0 * h);
        if !f.is_finite() {
            return Err(Error::NonFiniteGradient { index: i });
        }
        numeric.push(f);
    }
    let (worst_index, max_rel_error) = analytic
        .iter()
        .zip(&numeric)
        .map(|(a, f)| (a - f).abs() / (a.abs() + f.abs()).max(1e-8))
        .enumerate()
        .fold((0, 0.0), |best, (i, e)| if e > best.1 { (i, e) } else { best });
    Ok(GradCheckReport {
        max_rel_error,
        worst_index,
        analytic,
        numeric,
    })
}
