use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{attention_weights, parse_kind, softmax_in_place, Checkpoint, PredictorModel, Query, QueryKind};
use crate::{Error, Result};

/// Signed relative-position buckets: offsets -1, -2..-3, -4..-7, <=-8, then
/// the same magnitudes for positive offsets.
const REL_BUCKETS: usize = 8;
/// Output heads: masked, then horizons 1, 2-3, 4-7, 8+.
const HEADS: usize = 5;

fn magnitude_bucket(m: usize) -> usize {
    match m {
        0 | 1 => 0,
        2..=3 => 1,
        4..=7 => 2,
        _ => 3,
    }
}

fn rel_bucket(position: usize, target: usize) -> usize {
    if position < target {
        magnitude_bucket(target - position)
    } else {
        4 + magnitude_bucket(position - target)
    }
}

fn head(kind: QueryKind) -> usize {
    match kind {
        QueryKind::Masked => 0,
        QueryKind::Ahead(h) => 1 + magnitude_bucket(h),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LinearSoftmaxConfig {
    pub vocab_size: usize,
    pub dim: usize,
}

impl LinearSoftmaxConfig {
    pub fn param_count(&self) -> usize {
        let (v, d) = (self.vocab_size, self.dim);
        v * d + REL_BUCKETS * d + d * v + v + HEADS * v + d
    }
}

/// Smallest trainable context model with closed-form gradients.
///
/// Each visible token contributes `embedding[token] + rel_pos[bucket]`.
/// Masked and next-token queries pool the contributions by their mean;
/// multi-step queries (horizon >= 2) pool them with a learned latent query
/// by scaled dot-product attention. Logits are `pooled · W + b + head_bias`,
/// with a separate head bias per query bucket.
///
/// Parameter order: token embeddings `V x d`, relative-position embeddings
/// `8 x d`, output projection `d x V`, output bias `V`, head biases `5 x V`,
/// latent query `d`. All matrices are row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearSoftmaxPredictor {
    config: LinearSoftmaxConfig,
    params: Vec<f64>,
}

struct Offsets {
    pos: usize,
    out_w: usize,
    out_b: usize,
    head_b: usize,
    query: usize,
}

struct Pooled {
    /// Per-context contribution vectors.
    contributions: Vec<Vec<f64>>,
    /// Attention weights when attention pooling is used, else mean weights.
    weights: Vec<f64>,
    attention: bool,
    pooled: Vec<f64>,
}

impl LinearSoftmaxPredictor {
    /// Gaussian (std 0.02) weights and zero biases.
    pub fn new<R: Rng + ?Sized>(config: LinearSoftmaxConfig, rng: &mut R) -> Self {
        let mut model = Self::random(config, 0.02, rng);
        let o = model.offsets();
        let (v, d) = (config.vocab_size, config.dim);
        model.params[o.out_b..o.out_b + v + HEADS * v].fill(0.0);
        debug_assert_eq!(o.query + d, model.params.len());
        model
    }

    /// Every parameter drawn from `N(0, scale^2)`.
    pub fn random<R: Rng + ?Sized>(config: LinearSoftmaxConfig, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let params = (0..config.param_count()).map(|_| normal.sample(rng)).collect();
        Self { config, params }
    }

    pub fn from_params(config: LinearSoftmaxConfig, params: Vec<f64>) -> Result<Self> {
        if config.vocab_size == 0 || config.dim == 0 || params.len() != config.param_count() {
            return Err(Error::DimensionMismatch(format!(
                "linear softmax {config:?} needs {} parameters, got {}",
                config.param_count(),
                params.len()
            )));
        }
        Ok(Self { config, params })
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let fields = parse_kind(&ckpt.kind, "linear_softmax")?;
        match fields[..] {
            [("v", vocab_size), ("d", dim)] => {
                Self::from_params(LinearSoftmaxConfig { vocab_size, dim }, ckpt.params.clone())
            }
            _ => Err(Error::Format(format!("bad linear_softmax descriptor `{}`", ckpt.kind))),
        }
    }

    pub fn config(&self) -> LinearSoftmaxConfig {
        self.config
    }

    fn offsets(&self) -> Offsets {
        let (v, d) = (self.config.vocab_size, self.config.dim);
        let pos = v * d;
        let out_w = pos + REL_BUCKETS * d;
        let out_b = out_w + d * v;
        let head_b = out_b + v;
        let query = head_b + HEADS * v;
        Offsets {
            pos,
            out_w,
            out_b,
            head_b,
            query,
        }
    }

    fn pool(&self, query: &Query) -> Pooled {
        let d = self.config.dim;
        let o = self.offsets();
        let contributions: Vec<Vec<f64>> = query
            .context
            .iter()
            .map(|&(pos, tok)| {
                let e = &self.params[tok as usize * d..(tok as usize + 1) * d];
                let b = rel_bucket(pos, query.target);
                let p = &self.params[o.pos + b * d..o.pos + (b + 1) * d];
                e.iter().zip(p).map(|(a, b)| a + b).collect()
            })
            .collect();
        let attention = matches!(query.kind, QueryKind::Ahead(h) if h >= 2);
        let weights = if contributions.is_empty() {
            Vec::new()
        } else if attention {
            let q = &self.params[o.query..o.query + d];
            attention_weights(q, contributions.iter().map(Vec::as_slice), 1.0 / (d as f64).sqrt())
        } else {
            vec![1.0 / contributions.len() as f64; contributions.len()]
        };
        let mut pooled = vec![0.0; d];
        for (c, w) in contributions.iter().zip(&weights) {
            for (p, x) in pooled.iter_mut().zip(c) {
                *p += w * x;
            }
        }
        Pooled {
            contributions,
            weights,
            attention,
            pooled,
        }
    }

    fn distribution(&self, query: &Query, pooled: &[f64]) -> Vec<f64> {
        let v = self.config.vocab_size;
        let o = self.offsets();
        let hb = o.head_b + head(query.kind) * v;
        let mut logits: Vec<f64> = (0..v)
            .map(|y| self.params[o.out_b + y] + self.params[hb + y])
            .collect();
        for (i, &h) in pooled.iter().enumerate() {
            let row = &self.params[o.out_w + i * v..o.out_w + (i + 1) * v];
            for (l, w) in logits.iter_mut().zip(row) {
                *l += h * w;
            }
        }
        softmax_in_place(&mut logits);
        logits
    }
}

impl PredictorModel for LinearSoftmaxPredictor {
    fn vocab_size(&self) -> usize {
        self.config.vocab_size
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict(&self, query: &Query) -> Result<Vec<f64>> {
        query.validate()?;
        let pooled = self.pool(query);
        Ok(self.distribution(query, &pooled.pooled))
    }

    fn accumulate_grad_log_prob(
        &self,
        query: &Query,
        truth: u32,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        query.validate()?;
        let (v, d) = (self.config.vocab_size, self.config.dim);
        let o = self.offsets();
        let pooled = self.pool(query);
        let p = self.distribution(query, &pooled.pooled);
        let y = truth as usize;
        if !(p[y] > 0.0) {
            return Err(Error::ZeroProbability {
                position: query.target,
            });
        }
        // d log p_y / d logits = e_y - p
        let g_logits: Vec<f64> = (0..v).map(|w| (w == y) as u8 as f64 - p[w]).collect();
        let hb = o.head_b + head(query.kind) * v;
        for w in 0..v {
            grad[o.out_b + w] += scale * g_logits[w];
            grad[hb + w] += scale * g_logits[w];
        }
        let mut g_pooled = vec![0.0; d];
        for i in 0..d {
            let row = o.out_w + i * v;
            for w in 0..v {
                grad[row + w] += scale * pooled.pooled[i] * g_logits[w];
                g_pooled[i] += self.params[row + w] * g_logits[w];
            }
        }
        let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
        let inv_sqrt_d = 1.0 / (d as f64).sqrt();
        let g_dot_pooled = dot(&g_pooled, &pooled.pooled);
        let q_off = o.query;
        for (k, &(pos, tok)) in query.context.iter().enumerate() {
            let z = &pooled.contributions[k];
            let a = pooled.weights[k];
            let mut g_z: Vec<f64> = g_pooled.iter().map(|g| a * g).collect();
            if pooled.attention {
                // softmax-score path: d s_k / d z_k = q / sqrt(d), d s_k / d q = z_k / sqrt(d)
                let coeff = a * (dot(&g_pooled, z) - g_dot_pooled) * inv_sqrt_d;
                for i in 0..d {
                    g_z[i] += coeff * self.params[q_off + i];
                    grad[q_off + i] += scale * coeff * z[i];
                }
            }
            let e = tok as usize * d;
            let b = o.pos + rel_bucket(pos, query.target) * d;
            for i in 0..d {
                grad[e + i] += scale * g_z[i];
                grad[b + i] += scale * g_z[i];
            }
        }
        Ok(p[y].ln())
    }

    fn checkpoint_kind(&self) -> String {
        format!("linear_softmax:v={}:d={}", self.config.vocab_size, self.config.dim)
    }
}
