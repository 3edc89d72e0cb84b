use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{parse_kind, softmax_in_place, Checkpoint, PredictorModel, Query};
use crate::{Error, Result};

/// Exactly enumerable first-order Markov model.
///
/// Parameters are softmax logits: a marginal over `V` tokens followed by a
/// row-major `V x V` transition matrix. The conditional of a target is a
/// renormalized product of two experts built from the nearest visible
/// neighbours:
///
/// * left: row `c` of `T^h` for the nearest visible token `c` at distance
///   `h` before the target, or the marginal if nothing precedes it;
/// * right: column `c` of `T^h` for the nearest visible token after it, or
///   a constant if nothing follows.
///
/// With an immediate predecessor visible and nothing to the right this is
/// the transition row of the predecessor; with an empty context it is the
/// marginal. For a chain started at its stationary distribution it is the
/// exact posterior of the target given any visible set.
#[derive(Clone, Debug, PartialEq)]
pub struct TabularPredictor {
    vocab_size: usize,
    params: Vec<f64>,
}

impl TabularPredictor {
    pub fn from_logits(vocab_size: usize, params: Vec<f64>) -> Result<Self> {
        if vocab_size == 0 || params.len() != vocab_size + vocab_size * vocab_size {
            return Err(Error::DimensionMismatch(format!(
                "tabular model over {vocab_size} tokens needs {} parameters, got {}",
                vocab_size + vocab_size * vocab_size,
                params.len()
            )));
        }
        Ok(Self { vocab_size, params })
    }

    /// Builds a fixed model from probabilities. Zero entries become `-inf`
    /// logits, so such a model can be evaluated but not trained.
    pub fn from_probabilities(marginal: &[f64], transition: &[Vec<f64>]) -> Result<Self> {
        let v = marginal.len();
        if transition.len() != v || transition.iter().any(|r| r.len() != v) {
            return Err(Error::DimensionMismatch("transition must be V x V".into()));
        }
        for row in std::iter::once(marginal).chain(transition.iter().map(Vec::as_slice)) {
            let s: f64 = row.iter().sum();
            if (s - 1.0).abs() > 1e-9 || row.iter().any(|&p| p < 0.0) {
                return Err(Error::NotNormalized(s));
            }
        }
        let params = marginal
            .iter()
            .chain(transition.iter().flatten())
            .map(|&p| p.ln())
            .collect();
        Self::from_logits(v, params)
    }

    /// Random logits drawn from `N(0, scale^2)`.
    pub fn random<R: Rng + ?Sized>(vocab_size: usize, scale: f64, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, scale).expect("positive scale");
        let params = (0..vocab_size + vocab_size * vocab_size)
            .map(|_| normal.sample(rng))
            .collect();
        Self { vocab_size, params }
    }

    pub fn from_checkpoint(ckpt: &Checkpoint) -> Result<Self> {
        let fields = parse_kind(&ckpt.kind, "tabular")?;
        let v = match fields[..] {
            [("v", v)] => v,
            _ => return Err(Error::Format(format!("bad tabular descriptor `{}`", ckpt.kind))),
        };
        Self::from_logits(v, ckpt.params.clone())
    }

    pub fn marginal(&self) -> Vec<f64> {
        let mut m = self.params[..self.vocab_size].to_vec();
        softmax_in_place(&mut m);
        m
    }

    /// Row-stochastic transition matrix, row-major.
    pub fn transition(&self) -> Vec<f64> {
        let v = self.vocab_size;
        let mut t = self.params[v..].to_vec();
        for row in t.chunks_mut(v) {
            softmax_in_place(row);
        }
        t
    }

    fn experts(&self, query: &Query) -> Experts {
        let v = self.vocab_size;
        let transition = self.transition();
        let mut left: Option<(usize, u32)> = None;
        let mut right: Option<(usize, u32)> = None;
        for &(pos, tok) in query.context {
            if pos < query.target {
                if left.is_none_or(|(p, _)| pos > p) {
                    left = Some((pos, tok));
                }
            } else if right.is_none_or(|(p, _)| pos < p) {
                right = Some((pos, tok));
            }
        }
        let left = match left {
            Some((pos, tok)) => Side::Propagated {
                powers: row_powers(&transition, v, unit(v, tok as usize), query.target - pos),
            },
            None => Side::Marginal(self.marginal()),
        };
        let right = right.map(|(pos, tok)| col_powers(&transition, v, unit(v, tok as usize), pos - query.target));
        Experts {
            transition,
            left,
            right,
        }
    }
}

enum Side {
    Marginal(Vec<f64>),
    /// `powers[k] = e_c^T T^k`, `k = 0..=h`.
    Propagated { powers: Vec<Vec<f64>> },
}

struct Experts {
    transition: Vec<f64>,
    left: Side,
    /// `powers[k] = T^k e_c`, `k = 0..=h`.
    right: Option<Vec<Vec<f64>>>,
}

impl Experts {
    fn left_values(&self) -> &[f64] {
        match &self.left {
            Side::Marginal(m) => m,
            Side::Propagated { powers } => powers.last().expect("h >= 1"),
        }
    }

    fn unnormalized(&self) -> Vec<f64> {
        let left = self.left_values();
        match &self.right {
            Some(powers) => {
                let r = powers.last().expect("h >= 1");
                left.iter().zip(r).map(|(a, b)| a * b).collect()
            }
            None => left.to_vec(),
        }
    }
}

fn unit(v: usize, i: usize) -> Vec<f64> {
    let mut e = vec![0.0; v];
    e[i] = 1.0;
    e
}

/// `start^T T^k` for `k = 0..=h`.
fn row_powers(t: &[f64], v: usize, start: Vec<f64>, h: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(h + 1);
    out.push(start);
    for k in 0..h {
        let prev = &out[k];
        let mut next = vec![0.0; v];
        for (u, &pu) in prev.iter().enumerate() {
            if pu != 0.0 {
                for (n, &tuv) in next.iter_mut().zip(&t[u * v..(u + 1) * v]) {
                    *n += pu * tuv;
                }
            }
        }
        out.push(next);
    }
    out
}

/// `T^k start` for `k = 0..=h`.
fn col_powers(t: &[f64], v: usize, start: Vec<f64>, h: usize) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(h + 1);
    out.push(start);
    for k in 0..h {
        let prev = &out[k];
        let next = (0..v)
            .map(|u| t[u * v..(u + 1) * v].iter().zip(prev).map(|(a, b)| a * b).sum())
            .collect();
        out.push(next);
    }
    out
}

impl PredictorModel for TabularPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &self.params
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn predict(&self, query: &Query) -> Result<Vec<f64>> {
        query.validate()?;
        let mut p = self.experts(query).unnormalized();
        let z: f64 = p.iter().sum();
        if !(z > 0.0) {
            return Err(Error::ZeroProbability {
                position: query.target,
            });
        }
        p.iter_mut().for_each(|x| *x /= z);
        Ok(p)
    }

    fn accumulate_grad_log_prob(
        &self,
        query: &Query,
        truth: u32,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64> {
        query.validate()?;
        let v = self.vocab_size;
        let y = truth as usize;
        let experts = self.experts(query);
        let joint = experts.unnormalized();
        let z: f64 = joint.iter().sum();
        if !(joint[y] > 0.0) {
            return Err(Error::ZeroProbability {
                position: query.target,
            });
        }
        let left = experts.left_values();
        let ones;
        let right: &[f64] = match &experts.right {
            Some(p) => p.last().expect("h >= 1"),
            None => {
                ones = vec![1.0; v];
                &ones
            }
        };
        // d log p(y) = sum_w c(w) d(L(w) R(w)),  c = e_y / (L R)(y) - 1 / Z
        let c: Vec<f64> = (0..v)
            .map(|w| if w == y { 1.0 / joint[y] } else { 0.0 } - 1.0 / z)
            .collect();
        let t = &experts.transition;
        let mut g_t = vec![0.0; v * v];

        match &experts.left {
            Side::Marginal(m) => {
                let a: Vec<f64> = (0..v).map(|w| c[w] * right[w]).collect();
                let mean: f64 = a.iter().zip(m).map(|(x, p)| x * p).sum();
                for w in 0..v {
                    grad[w] += scale * m[w] * (a[w] - mean);
                }
            }
            Side::Propagated { powers } => {
                let h = powers.len() - 1;
                let a: Vec<f64> = (0..v).map(|w| c[w] * right[w]).collect();
                let a_pows = col_powers(t, v, a, h - 1);
                for k in 0..h {
                    outer_add(&mut g_t, v, &powers[k], &a_pows[h - 1 - k]);
                }
            }
        }
        if let Some(r_pows) = &experts.right {
            let h = r_pows.len() - 1;
            let b: Vec<f64> = (0..v).map(|w| c[w] * left[w]).collect();
            let b_pows = row_powers(t, v, b, h - 1);
            for k in 0..h {
                outer_add(&mut g_t, v, &b_pows[k], &r_pows[h - 1 - k]);
            }
        }
        // chain rule through the row softmax
        for u in 0..v {
            let row_t = &t[u * v..(u + 1) * v];
            let row_g = &g_t[u * v..(u + 1) * v];
            let mean: f64 = row_t.iter().zip(row_g).map(|(a, b)| a * b).sum();
            for w in 0..v {
                grad[v + u * v + w] += scale * row_t[w] * (row_g[w] - mean);
            }
        }
        Ok((joint[y] / z).ln())
    }

    fn checkpoint_kind(&self) -> String {
        format!("tabular:v={}", self.vocab_size)
    }
}

fn outer_add(g: &mut [f64], v: usize, left: &[f64], right: &[f64]) {
    for (u, &l) in left.iter().enumerate() {
        if l != 0.0 {
            for (gv, &r) in g[u * v..(u + 1) * v].iter_mut().zip(right) {
                *gv += l * r;
            }
        }
    }
}
