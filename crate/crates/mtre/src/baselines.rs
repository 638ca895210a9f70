//! Score baselines computed from the same logit container: sequence
//! log-probability, first-token linear probing, verdict-token probability
//! extraction, and relevance-weighted token uncertainty.

use serde::{Deserialize, Serialize};

use crate::aggregation::DetectionResult;
use crate::classifier::{train_reliability_head, HeadKind, TrainConfig};
use crate::dataset::{SentenceRecord, TokenExample};
use crate::error::{Error, Result};
use crate::metrics::{youden_cutoff, ScoredSet};

pub const METHOD_SEQ_LOGPROB: &str = "seq_logprob";
pub const METHOD_FIRST_TOKEN_PROBE: &str = "lp_first_token";
pub const METHOD_P_TRUE: &str = "p_true";
pub const METHOD_TOKEN_SAR: &str = "token_sar";

/// Which generated token carries the true/false verdict and which two
/// vocabulary entries encode it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PTrueConfig {
    pub true_token_id: u32,
    pub false_token_id: u32,
    /// 1-based token position of the verdict, default 1.
    pub answer_position: usize,
}

impl Default for PTrueConfig {
    fn default() -> Self {
        PTrueConfig {
            true_token_id: 0,
            false_token_id: 1,
            answer_position: 1,
        }
    }
}

impl PTrueConfig {
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        if self.true_token_id == self.false_token_id {
            return Err(Error::InvalidParam(
                "true_token_id and false_token_id must differ".into(),
            ));
        }
        if self.answer_position == 0 {
            return Err(Error::InvalidParam("answer_position must be at least 1".into()));
        }
        for id in [self.true_token_id, self.false_token_id] {
            if id as usize >= vocab_size {
                return Err(Error::InvalidParam(format!(
                    "verdict token id {id} outside vocabulary of size {vocab_size}"
                )));
            }
        }
        Ok(())
    }
}

/// Whether larger raw scores of a method mean "more reliable". Token-SAR is
/// an uncertainty, so it orients the other way.
pub fn higher_score_means_reliable(method: &str) -> bool {
    method != METHOD_TOKEN_SAR
}

fn log_softmax_at(row: &[f32], index: usize) -> f64 {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let max = f64::from(max);
    let lse: f64 = row
        .iter()
        .map(|v| (f64::from(*v) - max).exp())
        .sum::<f64>()
        .ln();
    f64::from(row[index]) - max - lse
}

/// Length-normalized log-probability of the chosen tokens over the first
/// `min(T_i, t_cap)` positions. Higher means more confident.
pub fn seq_logprob(record: &SentenceRecord, t_cap: usize) -> f64 {
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let len = record.num_tokens().min(t_cap);
    let total: f64 = (0..len)
        .map(|t| log_softmax_at(record.logit_row(t), record.token_ids[t] as usize))
        .sum();
    total / len as f64
}

/// Probability mass on the true-verdict token relative to the false-verdict
/// token at the answer position. Strictly inside (0, 1); swapping the two
/// ids maps p to exactly 1 - p.
pub fn p_true_score(record: &SentenceRecord, config: &PTrueConfig) -> Result<f64> {
    config.validate(record.vocab_size())?;
    if config.answer_position > record.num_tokens() {
        return Err(Error::record(
            &record.id,
            format!(
                "answer_position {} exceeds sentence length {}",
                config.answer_position,
                record.num_tokens()
            ),
        ));
    }
    let row = record.logit_row(config.answer_position - 1);
    let a = f64::from(row[config.true_token_id as usize]);
    let b = f64::from(row[config.false_token_id as usize]);
    // Two-way softmax, arranged so the swapped call computes 1 - p from the
    // same intermediate and the identity holds exactly.
    let p = if a >= b {
        1.0 / (1.0 + (b - a).exp())
    } else {
        1.0 - 1.0 / (1.0 + (a - b).exp())
    };
    let floor = f64::EPSILON / 2.0;
    Ok(p.clamp(floor, 1.0 - floor))
}

/// Relevance-weighted mean negative log-likelihood over the first
/// `min(T_i, t_cap)` tokens. Higher means less reliable. Records without
/// relevance weights fall back to uniform weighting.
pub fn token_sar(record: &SentenceRecord, t_cap: usize) -> Result<f64> {
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let len = record.num_tokens().min(t_cap);
    let uniform = vec![1.0; len];
    let weights: &[f64] = match &record.relevance {
        Some(r) => &r[..len],
        None => {
            log::warn!(
                "sentence {}: no relevance weights, token_sar falls back to uniform",
                record.id
            );
            &uniform
        }
    };
    let weight_sum: f64 = weights.iter().sum();
    if weight_sum <= 0.0 {
        return Err(Error::record(
            &record.id,
            format!("relevance weights over the first {len} tokens sum to zero"),
        ));
    }
    let weighted: f64 = (0..len)
        .map(|t| {
            let nll = -log_softmax_at(record.logit_row(t), record.token_ids[t] as usize);
            weights[t] * nll
        })
        .sum();
    Ok(weighted / weight_sum)
}

/// Train a linear probe on the first-token logits of the training records
/// and score the evaluation records by their first-token probability.
/// Decisions use the Youden cutoff derived from the training scores, which
/// is returned alongside the results.
pub fn first_token_probe(
    train_records: &[SentenceRecord],
    eval_records: &[SentenceRecord],
    config: &TrainConfig,
) -> Result<(Vec<DetectionResult>, f64)> {
    let examples: Vec<TokenExample> = train_records
        .iter()
        .map(|r| TokenExample {
            features: r.logit_row(0).to_vec(),
            label: r.label,
            sentence_id: r.id.clone(),
            position: 1,
        })
        .collect();
    let trained = train_reliability_head(&examples, config, &HeadKind::Probe)?;
    let head = &trained.head;

    let score = |r: &SentenceRecord| head.predict(r.logit_row(0));
    let train_scores: Vec<f64> = train_records.iter().map(&score).collect::<Result<_>>()?;
    let train_labels: Vec<u8> = train_records.iter().map(|r| r.label).collect();
    let threshold = youden_cutoff(&ScoredSet::new(train_scores, train_labels)?)?;

    let results = eval_records
        .iter()
        .map(|r| {
            let p = score(r)?;
            Ok(DetectionResult {
                sentence_id: r.id.clone(),
                method: METHOD_FIRST_TOKEN_PROBE.into(),
                score: p,
                decision: Some(u8::from(p >= threshold)),
                tau: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((results, threshold))
}
