use nalgebra::DMatrix;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResamplerConfig {
    pub num_latents: usize,
    pub dim: usize,
    pub num_layers: usize,
    pub ffw_hidden: usize,
    pub seed: u64,
}

impl ResamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.num_latents == 0 || self.dim == 0 || self.ffw_hidden == 0 {
            return Err(Error::Config(
                "resampler needs num_latents, dim and ffw_hidden >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// One cross-attention + feed-forward block. Matrices act on row vectors.
#[derive(Clone, Debug)]
pub struct ResamplerLayer {
    pub wq: DMatrix<f64>,
    pub wk: DMatrix<f64>,
    pub wv: DMatrix<f64>,
    pub wo: DMatrix<f64>,
    pub w1: DMatrix<f64>,
    pub b1: DMatrix<f64>,
    pub w2: DMatrix<f64>,
    pub b2: DMatrix<f64>,
}

/// Latent-query resampler: a fixed number of latents repeatedly attend to
/// the flattened time-embedded features and to themselves.
#[derive(Clone, Debug)]
pub struct Resampler {
    config: ResamplerConfig,
    pub layers: Vec<ResamplerLayer>,
}

impl Resampler {
    /// Seeded Gaussian weights (std 0.02) and zero biases.
    pub fn new(config: ResamplerConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::seeded(config.seed);
        let normal = Normal::new(0.0, 0.02).expect("valid std");
        let (d, h) = (config.dim, config.ffw_hidden);
        let mut gauss = |r: usize, c: usize| DMatrix::from_fn(r, c, |_, _| normal.sample(&mut rng));
        let layers = (0..config.num_layers)
            .map(|_| ResamplerLayer {
                wq: gauss(d, d),
                wk: gauss(d, d),
                wv: gauss(d, d),
                wo: gauss(d, d),
                w1: gauss(d, h),
                b1: DMatrix::zeros(1, h),
                w2: gauss(h, d),
                b2: DMatrix::zeros(1, d),
            })
            .collect();
        Ok(Self { config, layers })
    }

    pub fn config(&self) -> &ResamplerConfig {
        &self.config
    }

    /// Zeroes every residual branch output so each layer is the identity.
    pub fn zero_residual_branches(&mut self) {
        for layer in &mut self.layers {
            layer.wo.fill(0.0);
            layer.w1.fill(0.0);
            layer.w2.fill(0.0);
            layer.b2.fill(0.0);
        }
    }

    /// `features`: `T` matrices of shape `S x d`; `time_emb`: `T x d`;
    /// `latents`: `R x d`. Returns the updated `R x d` latents.
    pub fn forward(
        &self,
        features: &[DMatrix<f64>],
        time_emb: &DMatrix<f64>,
        latents: &DMatrix<f64>,
    ) -> Result<DMatrix<f64>> {
        let d = self.config.dim;
        let flat = flatten_with_time(features, time_emb, d)?;
        if latents.shape() != (self.config.num_latents, d) {
            return Err(Error::DimensionMismatch(format!(
                "latents are {:?}, expected ({}, {d})",
                latents.shape(),
                self.config.num_latents
            )));
        }
        let scale = 1.0 / (d as f64).sqrt();
        let mut x = latents.clone();
        for layer in &self.layers {
            let kv = stack_rows(&flat, &x);
            let q = &x * &layer.wq;
            let k = &kv * &layer.wk;
            let v = &kv * &layer.wv;
            let mut scores = (&q * k.transpose()) * scale;
            for mut row in scores.row_iter_mut() {
                let max = row.max();
                row.apply(|s| *s = (*s - max).exp());
                let sum = row.sum();
                row /= sum;
            }
            x += (scores * v) * &layer.wo;
            let mut hidden = &x * &layer.w1;
            for mut row in hidden.row_iter_mut() {
                row += &layer.b1;
                row.apply(|h| *h = h.max(0.0));
            }
            let mut out = hidden * &layer.w2;
            for mut row in out.row_iter_mut() {
                row += &layer.b2;
            }
            x += out;
        }
        Ok(x)
    }
}

/// Adds the per-frame time embedding and flattens `[T, S, d]` to `[T*S, d]`.
pub fn flatten_with_time(
    features: &[DMatrix<f64>],
    time_emb: &DMatrix<f64>,
    d: usize,
) -> Result<DMatrix<f64>> {
    if features.is_empty() {
        return Err(Error::DimensionMismatch("no feature frames".into()));
    }
    let s = features[0].nrows();
    if s == 0 || features.iter().any(|f| f.shape() != (s, d)) {
        return Err(Error::DimensionMismatch(format!(
            "every feature frame must be ({s}, {d}) with s >= 1"
        )));
    }
    if time_emb.shape() != (features.len(), d) {
        return Err(Error::DimensionMismatch(format!(
            "time embedding is {:?}, expected ({}, {d})",
            time_emb.shape(),
            features.len()
        )));
    }
    Ok(DMatrix::from_fn(features.len() * s, d, |r, c| {
        features[r / s][(r % s, c)] + time_emb[(r / s, c)]
    }))
}

fn stack_rows(top: &DMatrix<f64>, bottom: &DMatrix<f64>) -> DMatrix<f64> {
    let n = top.nrows();
    DMatrix::from_fn(n + bottom.nrows(), top.ncols(), |r, c| {
        if r < n {
            top[(r, c)]
        } else {
            bottom[(r - n, c)]
        }
    })
}

/// Softmax of `scale * <query, key>` over the keys.
pub fn attention_weights<'a>(
    query: &[f64],
    keys: impl IntoIterator<Item = &'a [f64]>,
    scale: f64,
) -> Vec<f64> {
    let mut w: Vec<f64> = keys
        .into_iter()
        .map(|k| scale * k.iter().zip(query).map(|(a, b)| a * b).sum::<f64>())
        .collect();
    if !w.is_empty() {
        super::softmax_in_place(&mut w);
    }
    w
}
