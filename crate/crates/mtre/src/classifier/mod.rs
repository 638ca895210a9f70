//! Token-level reliability heads: a linear probe and an attention-based
//! head, both trained with a regularized binary cross-entropy objective.

mod attention;
mod probe;

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use attention::{AttentionConfig, AttentionHead};
pub use probe::Probe;

use crate::dataset::TokenExample;
use crate::error::{Error, Result};
use crate::seeding;

/// Predictions are clamped to [PCLAMP, 1 - PCLAMP] so per-token
/// log-likelihood ratios stay bounded (|llr| <= ~13.8).
pub const PCLAMP: f64 = 1e-6;

const HEAD_MAGIC: &[u8; 8] = b"MTREHEAD";
const HEAD_FORMAT_VERSION: u32 = 1;

/// Which head architecture to train.
#[derive(Debug, Clone, PartialEq)]
pub enum HeadKind {
    Probe,
    Attention(AttentionConfig),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Optimizer {
    Sgd,
    AdaptiveMoment,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub optimizer: Optimizer,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-5,
            epochs: 200,
            batch_size: 32,
            weight_decay: 1e-4,
            dropout_rate: 0.1,
            seed: 0,
            optimizer: Optimizer::AdaptiveMoment,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidParam("batch_size must be at least 1".into()));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "weight_decay must be non-negative, got {}",
                self.weight_decay
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::InvalidParam(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }
}

/// A trained reliability head.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Probe(Probe),
    Attention(AttentionHead),
}

impl Head {
    pub fn init(input_dim: usize, kind: &HeadKind, dropout_rate: f64, seed: u64) -> Result<Head> {
        match kind {
            HeadKind::Probe => Ok(Head::Probe(Probe::init(input_dim, seed))),
            HeadKind::Attention(cfg) => Ok(Head::Attention(AttentionHead::init(
                input_dim,
                cfg,
                dropout_rate,
                seed,
            )?)),
        }
    }

    pub fn kind_tag(&self) -> &'static str {
        match self {
            Head::Probe(_) => "probe",
            Head::Attention(_) => "attention",
        }
    }

    pub fn input_dim(&self) -> usize {
        match self {
            Head::Probe(p) => p.input_dim(),
            Head::Attention(a) => a.input_dim(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            Head::Probe(p) => p.params(),
            Head::Attention(a) => a.params(),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            Head::Probe(p) => p.params_mut(),
            Head::Attention(a) => a.params_mut(),
        }
    }

    /// Pre-sigmoid score for one feature vector; inference applies no
    /// dropout.
    pub fn raw_score(&self, features: &[f32]) -> Result<f64> {
        if features.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                got: features.len(),
            });
        }
        Ok(match self {
            Head::Probe(p) => p.raw_score(features),
            Head::Attention(a) => a.raw_score(features),
        })
    }

    /// Reliability probability in the open interval (PCLAMP, 1 - PCLAMP).
    pub fn predict(&self, features: &[f32]) -> Result<f64> {
        Ok(clamp_probability(sigmoid(self.raw_score(features)?)))
    }

    /// Mean clamped BCE plus `lambda` times the squared L2 norm of all
    /// trainable parameters, evaluated without dropout.
    pub fn loss(&self, batch: &[TokenExample], lambda: f64) -> f64 {
        assert!(!batch.is_empty(), "loss of an empty batch");
        let mut total = 0.0;
        for ex in batch {
            let p = clamp_probability(sigmoid(
                self.raw_score(&ex.features).expect("dimension checked by caller"),
            ));
            total += bce(p, ex.label);
        }
        total / batch.len() as f64 + lambda * l2_norm_sq(self.params())
    }

    /// Loss and analytic parameter gradient (no dropout), aligned with
    /// `params()`.
    pub fn loss_and_grad(&self, batch: &[TokenExample], lambda: f64) -> (f64, Vec<f64>) {
        let refs: Vec<&TokenExample> = batch.iter().collect();
        self.batch_loss_grad(&refs, lambda, None)
    }

    fn batch_loss_grad(
        &self,
        batch: &[&TokenExample],
        lambda: f64,
        dropout: Option<(&mut rand_chacha::ChaCha12Rng, f64)>,
    ) -> (f64, Vec<f64>) {
        assert!(!batch.is_empty(), "gradient of an empty batch");
        let (mean_bce, mut grad) = match self {
            Head::Probe(p) => p.batch_loss_grad(batch),
            Head::Attention(a) => a.batch_loss_grad(batch, dropout),
        };
        let params = self.params();
        for (g, w) in grad.iter_mut().zip(params) {
            *g += 2.0 * lambda * w;
        }
        (mean_bce + lambda * l2_norm_sq(params), grad)
    }
}

/// A trained head together with its per-epoch loss history.
#[derive(Debug, Clone)]
pub struct TrainedHead {
    pub head: Head,
    pub loss_history: Vec<f64>,
}

/// Train a reliability head for exactly `config.epochs` passes in a
/// seed-deterministic batch order.
pub fn train_reliability_head(
    examples: &[TokenExample],
    config: &TrainConfig,
    kind: &HeadKind,
) -> Result<TrainedHead> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::Degenerate("cannot train on an empty example sequence".into()));
    }
    let input_dim = examples[0].features.len();
    if let Some(bad) = examples.iter().find(|e| e.features.len() != input_dim) {
        return Err(Error::DimensionMismatch {
            expected: input_dim,
            got: bad.features.len(),
        });
    }

    let mut head = Head::init(
        input_dim,
        kind,
        config.dropout_rate,
        seeding::derive(config.seed, "init"),
    )?;
    let mut order_rng = seeding::rng_from(seeding::derive(config.seed, "batch-order"));
    let mut dropout_rng = seeding::rng_from(seeding::derive(config.seed, "dropout"));
    let mut optimizer = OptimizerState::new(config, head.params().len());

    let use_dropout =
        config.dropout_rate > 0.0 && matches!(head, Head::Attention(_));
    let mut indices: Vec<usize> = (0..examples.len()).collect();
    let mut loss_history = Vec::with_capacity(config.epochs);

    for epoch in 0..config.epochs {
        indices.shuffle(&mut order_rng);
        let mut epoch_loss = 0.0;
        let mut batches = 0usize;
        for (batch_idx, chunk) in indices.chunks(config.batch_size).enumerate() {
            let batch: Vec<&TokenExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let dropout = use_dropout.then_some((&mut dropout_rng, config.dropout_rate));
            let (loss, grad) = head.batch_loss_grad(&batch, config.weight_decay, dropout);
            if !loss.is_finite() {
                return Err(Error::NonFiniteLoss {
                    epoch,
                    batch: batch_idx,
                });
            }
            optimizer.step(head.params_mut(), &grad, config.learning_rate);
            epoch_loss += loss;
            batches += 1;
        }
        loss_history.push(epoch_loss / batches as f64);
    }

    Ok(TrainedHead { head, loss_history })
}

/// Spec-surface alias for `Head::predict`.
pub fn predict_token(head: &Head, features: &[f32]) -> Result<f64> {
    head.predict(features)
}

/// Spec-surface alias for `Head::loss`.
pub fn loss(head: &Head, batch: &[TokenExample], lambda: f64) -> f64 {
    head.loss(batch, lambda)
}

enum OptimizerState {
    Sgd,
    Adam { m: Vec<f64>, v: Vec<f64>, t: u64 },
}

impl OptimizerState {
    fn new(config: &TrainConfig, dim: usize) -> Self {
        match config.optimizer {
            Optimizer::Sgd => OptimizerState::Sgd,
            Optimizer::AdaptiveMoment => OptimizerState::Adam {
                m: vec![0.0; dim],
                v: vec![0.0; dim],
                t: 0,
            },
        }
    }

    fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        match self {
            OptimizerState::Sgd => {
                for (w, g) in params.iter_mut().zip(grad) {
                    *w -= lr * g;
                }
            }
            OptimizerState::Adam { m, v, t } => {
                const B1: f64 = 0.9;
                const B2: f64 = 0.999;
                const EPS: f64 = 1e-8;
                *t += 1;
                let t = *t as i32;
                for i in 0..params.len() {
                    m[i] = B1 * m[i] + (1.0 - B1) * grad[i];
                    v[i] = B2 * v[i] + (1.0 - B2) * grad[i] * grad[i];
                    let m_hat = m[i] / (1.0 - B1.powi(t));
                    let v_hat = v[i] / (1.0 - B2.powi(t));
                    params[i] -= lr * m_hat / (v_hat.sqrt() + EPS);
                }
            }
        }
    }
}

pub(crate) fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn clamp_probability(p: f64) -> f64 {
    p.clamp(PCLAMP, 1.0 - PCLAMP)
}

fn bce(p: f64, label: u8) -> f64 {
    if label == 1 {
        -p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn l2_norm_sq(params: &[f64]) -> f64 {
    params.iter().map(|w| w * w).sum()
}

#[derive(Serialize, Deserialize)]
struct HeadHeader {
    format_version: u32,
    kind: String,
    input_dim: usize,
    param_count: usize,
    seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    embed_dim: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_heads: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    num_layers: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    seq_chunks: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    dropout_rate: Option<f64>,
}

/// Serialize a head: magic, little-endian JSON header length, JSON header,
/// then float32 little-endian parameter block.
pub fn save_head(head: &Head, path: &Path) -> Result<()> {
    let header = match head {
        Head::Probe(p) => HeadHeader {
            format_version: HEAD_FORMAT_VERSION,
            kind: "probe".into(),
            input_dim: p.input_dim(),
            param_count: p.params().len(),
            seed: p.seed(),
            embed_dim: None,
            num_heads: None,
            num_layers: None,
            seq_chunks: None,
            dropout_rate: None,
        },
        Head::Attention(a) => {
            let cfg = a.config();
            HeadHeader {
                format_version: HEAD_FORMAT_VERSION,
                kind: "attention".into(),
                input_dim: a.input_dim(),
                param_count: a.params().len(),
                seed: a.seed(),
                embed_dim: Some(cfg.embed_dim),
                num_heads: Some(cfg.num_heads),
                num_layers: Some(cfg.num_layers),
                seq_chunks: Some(cfg.seq_chunks),
                dropout_rate: Some(a.dropout_rate()),
            }
        }
    };
    let header_json = serde_json::to_vec(&header).expect("header serializes");
    let mut out = Vec::with_capacity(16 + header_json.len() + head.params().len() * 4);
    out.extend_from_slice(HEAD_MAGIC);
    out.extend_from_slice(&(header_json.len() as u32).to_le_bytes());
    out.extend_from_slice(&header_json);
    for w in head.params() {
        out.extend_from_slice(&(*w as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&out).map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Load a head, optionally validating its input dimension against a
/// dataset vocabulary size.
pub fn load_head(path: &Path, expected_input_dim: Option<usize>) -> Result<Head> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let fmt_err = |reason: &str| Error::HeadFormat {
        path: path.to_path_buf(),
        reason: reason.to_string(),
    };
    if bytes.len() < 12 || &bytes[..8] != HEAD_MAGIC {
        return Err(fmt_err("missing magic bytes"));
    }
    let header_len = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() < 12 + header_len {
        return Err(fmt_err("truncated header"));
    }
    let header: HeadHeader = serde_json::from_slice(&bytes[12..12 + header_len])
        .map_err(|e| fmt_err(&format!("bad header: {e}")))?;
    if header.format_version != HEAD_FORMAT_VERSION {
        return Err(fmt_err(&format!(
            "unsupported format_version {}",
            header.format_version
        )));
    }
    if let Some(expected) = expected_input_dim {
        if header.input_dim != expected {
            return Err(fmt_err(&format!(
                "head input_dim {} does not match dataset vocab_size {expected}",
                header.input_dim
            )));
        }
    }
    let payload = &bytes[12 + header_len..];
    if payload.len() != header.param_count * 4 {
        return Err(fmt_err(&format!(
            "parameter block holds {} bytes, expected {}",
            payload.len(),
            header.param_count * 4
        )));
    }
    let params: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f64::from(f32::from_le_bytes(c.try_into().unwrap())))
        .collect();
    match header.kind.as_str() {
        "probe" => Ok(Head::Probe(Probe::from_params(
            header.input_dim,
            header.seed,
            params,
        )?)),
        "attention" => {
            let cfg = AttentionConfig {
                embed_dim: header.embed_dim.ok_or_else(|| fmt_err("missing embed_dim"))?,
                num_heads: header.num_heads.ok_or_else(|| fmt_err("missing num_heads"))?,
                num_layers: header.num_layers.ok_or_else(|| fmt_err("missing num_layers"))?,
                seq_chunks: header.seq_chunks.ok_or_else(|| fmt_err("missing seq_chunks"))?,
            };
            Ok(Head::Attention(AttentionHead::from_params(
                header.input_dim,
                &cfg,
                header.dropout_rate.unwrap_or(0.0),
                header.seed,
                params,
            )?))
        }
        other => Err(fmt_err(&format!("unknown head kind {other:?}"))),
    }
}
