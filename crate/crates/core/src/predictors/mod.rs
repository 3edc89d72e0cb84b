//! Conditional-distribution models over a finite vocabulary.
//!
//! A model answers [`Query`]s: "given these visible `(position, token)`
//! pairs, what is the distribution of the token at `target`?". Trainable
//! models expose a flat parameter vector and the gradient of
//! `log p(truth | query)` with respect to it.

mod gradcheck;
mod linear;
mod resampler;
mod tabular;

pub use gradcheck::{grad_check, GradCheckReport};
pub use linear::{LinearSoftmaxConfig, LinearSoftmaxPredictor};
pub use resampler::{attention_weights, Resampler, ResamplerConfig};
pub use tabular::TabularPredictor;

use std::io::{BufRead, BufReader, Read, Write};
use std::sync::Arc;

use crate::{Error, Result};

/// What kind of conditional is being asked for.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum QueryKind {
    /// Masked-token reconstruction from an arbitrary visible set.
    Masked,
    /// Prediction `horizon` steps past the end of an autoregressive prefix
    /// (`1` is the next token).
    Ahead(usize),
}

#[derive(Clone, Copy, Debug)]
pub struct Query<'a> {
    /// Visible `(position, token)` pairs, in no particular order.
    pub context: &'a [(usize, u32)],
    pub target: usize,
    pub kind: QueryKind,
}

impl Query<'_> {
    pub fn validate(&self) -> Result<()> {
        if self.context.iter().any(|&(p, _)| p == self.target) {
            return Err(Error::InvalidContext {
                target: self.target,
            });
        }
        Ok(())
    }
}

pub trait PredictorModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    fn params(&self) -> &[f64];

    fn params_mut(&mut self) -> &mut [f64];

    /// Categorical distribution of the target token.
    fn predict(&self, query: &Query) -> Result<Vec<f64>>;

    /// Adds `scale * d log p(truth | query) / d params` into `grad` and
    /// returns `log p(truth | query)`.
    fn accumulate_grad_log_prob(
        &self,
        query: &Query,
        truth: u32,
        scale: f64,
        grad: &mut [f64],
    ) -> Result<f64>;

    /// Whitespace-free descriptor stored in checkpoints.
    fn checkpoint_kind(&self) -> String;
}

/// Uniform distribution regardless of context. Has no parameters.
#[derive(Clone, Debug)]
pub struct UniformPredictor {
    vocab_size: usize,
}

impl UniformPredictor {
    pub fn new(vocab_size: usize) -> Self {
        Self { vocab_size }
    }
}

impl PredictorModel for UniformPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn predict(&self, query: &Query) -> Result<Vec<f64>> {
        query.validate()?;
        Ok(vec![1.0 / self.vocab_size as f64; self.vocab_size])
    }

    fn accumulate_grad_log_prob(&self, query: &Query, truth: u32, _: f64, _: &mut [f64]) -> Result<f64> {
        Ok(self.predict(query)?[truth as usize].ln())
    }

    fn checkpoint_kind(&self) -> String {
        format!("uniform:v={}", self.vocab_size)
    }
}

type DistFn = dyn Fn(&Query) -> Vec<f64> + Send + Sync;

/// Parameter-free model backed by a closure. Useful for oracle predictors.
#[derive(Clone)]
pub struct FnPredictor {
    vocab_size: usize,
    f: Arc<DistFn>,
}

impl FnPredictor {
    pub fn new(vocab_size: usize, f: impl Fn(&Query) -> Vec<f64> + Send + Sync + 'static) -> Self {
        Self {
            vocab_size,
            f: Arc::new(f),
        }
    }
}

impl PredictorModel for FnPredictor {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn params(&self) -> &[f64] {
        &[]
    }

    fn params_mut(&mut self) -> &mut [f64] {
        &mut []
    }

    fn predict(&self, query: &Query) -> Result<Vec<f64>> {
        query.validate()?;
        Ok((self.f)(query))
    }

    fn accumulate_grad_log_prob(&self, query: &Query, truth: u32, _: f64, _: &mut [f64]) -> Result<f64> {
        Ok(self.predict(query)?[truth as usize].ln())
    }

    fn checkpoint_kind(&self) -> String {
        "closure".into()
    }
}

/// Numerically stable in-place softmax.
pub(crate) fn softmax_in_place(logits: &mut [f64]) {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in logits.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in logits.iter_mut() {
        *v /= sum;
    }
}

const CHECKPOINT_MAGIC: &str = "TUCKPT1";

/// Writes `TUCKPT1 <kind> <count>\n` followed by little-endian f64 parameters.
pub fn write_checkpoint<W: Write>(model: &dyn PredictorModel, mut writer: W) -> Result<()> {
    let params = model.params();
    write!(
        writer,
        "{CHECKPOINT_MAGIC} {} {}\n",
        model.checkpoint_kind(),
        params.len()
    )?;
    for p in params {
        writer.write_all(&p.to_le_bytes())?;
    }
    Ok(())
}

/// Raw checkpoint contents.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub params: Vec<f64>,
}

pub fn read_checkpoint<R: Read>(reader: R) -> Result<Checkpoint> {
    let mut reader = BufReader::new(reader);
    let mut header = Vec::new();
    reader.read_until(b'\n', &mut header)?;
    let header = String::from_utf8(header).map_err(|_| Error::Format("checkpoint header".into()))?;
    let fields: Vec<&str> = header.split_ascii_whitespace().collect();
    let [magic, kind, count] = fields[..] else {
        return Err(Error::Format(format!("malformed checkpoint header `{}`", header.trim_end())));
    };
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("expected {CHECKPOINT_MAGIC}, got {magic}")));
    }
    let count: usize = count
        .parse()
        .map_err(|_| Error::Format(format!("bad parameter count `{count}`")))?;
    let mut bytes = vec![0u8; count * 8];
    reader
        .read_exact(&mut bytes)
        .map_err(|e| Error::Format(format!("truncated checkpoint: {e}")))?;
    if reader.read(&mut [0u8; 1])? != 0 {
        return Err(Error::Format("trailing bytes after checkpoint".into()));
    }
    let params = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    Ok(Checkpoint {
        kind: kind.to_string(),
        params,
    })
}

/// Parses `name:key=value:key=value` checkpoint descriptors.
pub(crate) fn parse_kind<'a>(kind: &'a str, name: &str) -> Result<Vec<(&'a str, usize)>> {
    let mut parts = kind.split(':');
    if parts.next() != Some(name) {
        return Err(Error::Format(format!("checkpoint kind `{kind}` is not `{name}`")));
    }
    parts
        .map(|p| {
            let (k, v) = p
                .split_once('=')
                .ok_or_else(|| Error::Format(format!("bad descriptor field `{p}`")))?;
            let v = v
                .parse()
                .map_err(|_| Error::Format(format!("bad descriptor value `{p}`")))?;
            Ok((k, v))
        })
        .collect()
}

/// Loads any trainable model from a checkpoint.
pub fn load_model<R: Read>(reader: R) -> Result<Box<dyn PredictorModel>> {
    let ckpt = read_checkpoint(reader)?;
    if ckpt.kind.starts_with("tabular") {
        Ok(Box::new(TabularPredictor::from_checkpoint(&ckpt)?))
    } else if ckpt.kind.starts_with("linear_softmax") {
        Ok(Box::new(LinearSoftmaxPredictor::from_checkpoint(&ckpt)?))
    } else {
        Err(Error::Format(format!("unknown model kind `{}`", ckpt.kind)))
    }
}
