//! Sentence-level evidence aggregation: per-token log-likelihood ratios,
//! masked cumulative sums, and the threshold decision rule.

use serde::{Deserialize, Serialize};

use crate::classifier::{Head, PCLAMP};
use crate::dataset::{pad_mask, SentenceRecord, DEFAULT_EPSILON};
use crate::error::{Error, Result};

/// Per-token LLRs, masked running sums, and the resulting decision for one
/// sentence.
#[derive(Debug, Clone, PartialEq)]
pub struct EvidenceTrace {
    pub llrs: Vec<f64>,
    pub cumulative: Vec<f64>,
    pub mask: Vec<bool>,
    pub tau: usize,
    pub decision: u8,
}

/// Uniform result record across MTRE and the baselines. Serializes to the
/// results JSONL schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DetectionResult {
    #[serde(rename = "id")]
    pub sentence_id: String,
    pub method: String,
    pub score: f64,
    pub decision: Option<u8>,
    pub tau: Option<usize>,
}

/// Log-likelihood ratio of a reliability probability: ln(p / (1 - p)).
pub fn token_llr(p: f64) -> Result<f64> {
    if !(PCLAMP..=1.0 - PCLAMP).contains(&p) {
        return Err(Error::InvalidParam(format!(
            "probability {p} outside the clamped range [{PCLAMP}, {}]",
            1.0 - PCLAMP
        )));
    }
    Ok((p / (1.0 - p)).ln())
}

/// Masked prefix sum of LLRs up to and including position `tau` (1-based).
pub fn aggregate_evidence(llrs: &[f64], mask: &[bool], tau: usize) -> Result<f64> {
    if llrs.len() != mask.len() {
        return Err(Error::DimensionMismatch {
            expected: llrs.len(),
            got: mask.len(),
        });
    }
    if tau == 0 || tau > llrs.len() {
        return Err(Error::InvalidParam(format!(
            "tau must be in [1, {}], got {tau}",
            llrs.len()
        )));
    }
    let mut total = 0.0;
    for (z, m) in llrs[..tau].iter().zip(mask) {
        if *m {
            total += z;
        }
    }
    Ok(total)
}

/// Threshold decision: 1 (truthful) iff evidence >= delta; ties decide
/// truthful.
pub fn decide(evidence: f64, delta: f64) -> u8 {
    u8::from(evidence >= delta)
}

/// Score one sentence with a trained head: per-token probabilities on the
/// first `min(T_i, t_cap)` tokens, temperature-scaled LLRs, padding mask,
/// masked evidence, and the delta decision.
///
/// The reported `tau` is the last unmasked position within the cap, so
/// trailing zero-padding rows never count as consumed evidence.
pub fn classify_sentence(
    head: &Head,
    record: &SentenceRecord,
    t_cap: usize,
    temperature: f64,
    delta: f64,
) -> Result<(DetectionResult, EvidenceTrace)> {
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParam(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let cap = record.num_tokens().min(t_cap);
    let full_mask = pad_mask(record, DEFAULT_EPSILON);

    let mut llrs = Vec::with_capacity(cap);
    let mut cumulative = Vec::with_capacity(cap);
    let mut mask = Vec::with_capacity(cap);
    let mut running = 0.0;
    let mut tau = 1;
    for t in 0..cap {
        let p = head.predict(record.logit_row(t))?;
        let z = token_llr(p)? / temperature;
        if full_mask[t] {
            running += z;
            tau = t + 1;
        }
        llrs.push(z);
        mask.push(full_mask[t]);
        cumulative.push(running);
    }

    let evidence = cumulative.last().copied().unwrap_or(0.0);
    let decision = decide(evidence, delta);
    Ok((
        DetectionResult {
            sentence_id: record.id.clone(),
            method: "mtre".into(),
            score: evidence,
            decision: Some(decision),
            tau: Some(tau),
        },
        EvidenceTrace {
            llrs,
            cumulative,
            mask,
            tau,
            decision,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::classifier::{sigmoid, Probe};
    use approx::assert_relative_eq;

    fn record_with_rows(id: &str, rows: &[Vec<f32>]) -> SentenceRecord {
        let vocab = rows[0].len();
        let logits: Vec<f32> = rows.iter().flatten().copied().collect();
        SentenceRecord::new(id, 1, None, vec![0; rows.len()], None, logits, vocab).unwrap()
    }

    #[test]
    fn llr_of_half_is_zero() {
        assert_eq!(token_llr(0.5).unwrap(), 0.0);
    }

    #[test]
    fn llr_inverts_sigmoid() {
        assert_relative_eq!(token_llr(sigmoid(2.0)).unwrap(), 2.0, epsilon = 1e-12);
    }

    #[test]
    fn llr_worked_value() {
        assert_relative_eq!(token_llr(0.9).unwrap(), 9.0f64.ln(), epsilon = 1e-12);
    }

    #[test]
    fn llr_odd_symmetry() {
        for p in [0.1, 0.25, 0.4, 0.7, 0.99] {
            assert_relative_eq!(
                token_llr(1.0 - p).unwrap(),
                -token_llr(p).unwrap(),
                epsilon = 1e-9
            );
        }
    }

    #[test]
    fn llr_rejects_unclamped_input() {
        assert!(token_llr(0.0).is_err());
        assert!(token_llr(1.0).is_err());
        assert!(token_llr(1e-9).is_err());
    }

    #[test]
    fn evidence_examples() {
        assert_eq!(
            aggregate_evidence(&[0.0, 0.0, 0.0], &[true, true, true], 3).unwrap(),
            0.0
        );
        assert_eq!(
            aggregate_evidence(&[1.0, -0.5, 2.0], &[true, true, false], 3).unwrap(),
            0.5
        );
        assert_eq!(
            aggregate_evidence(&[3.0, -1.0], &[false, false], 2).unwrap(),
            0.0
        );
    }

    #[test]
    fn evidence_rejects_bad_shapes() {
        assert!(aggregate_evidence(&[1.0], &[true, false], 1).is_err());
        assert!(aggregate_evidence(&[1.0, 2.0], &[true, true], 3).is_err());
        assert!(aggregate_evidence(&[1.0], &[true], 0).is_err());
    }

    #[test]
    fn evidence_prefix_consistency() {
        let llrs = [0.5, -1.0, 2.0, 0.25];
        let mask = [true, false, true, true];
        for t in 2..=llrs.len() {
            let step = aggregate_evidence(&llrs, &mask, t).unwrap()
                - aggregate_evidence(&llrs, &mask, t - 1).unwrap();
            let expected = if mask[t - 1] { llrs[t - 1] } else { 0.0 };
            assert_relative_eq!(step, expected, epsilon = 1e-15);
        }
    }

    #[test]
    fn decide_tie_is_truthful() {
        assert_eq!(decide(0.0, 0.0), 1);
        assert_eq!(decide(-0.0001, 0.0), 0);
        assert_eq!(decide(5.0, 10.0), 0);
    }

    #[test]
    fn scale_invariance_of_decision() {
        for evidence in [-3.0, -0.2, 0.0, 0.4, 7.0] {
            for c in [0.1, 1.0, 42.0] {
                assert_eq!(decide(c * evidence, 0.0), decide(evidence, 0.0));
            }
        }
    }

    #[test]
    fn neutral_head_gives_zero_evidence_and_truthful() {
        let head = Head::Probe(Probe::init(2, 0));
        let record = record_with_rows("s", &[vec![1.0, 2.0], vec![-1.0, 0.5]]);
        let (result, trace) = classify_sentence(&head, &record, 10, 1.0, 0.0).unwrap();
        assert_eq!(result.score, 0.0);
        assert_eq!(result.decision, Some(1));
        assert!(trace.llrs.iter().all(|z| *z == 0.0));
    }

    #[test]
    fn temperature_halves_evidence_exactly() {
        let mut probe = Probe::init(2, 0);
        probe.params_mut().copy_from_slice(&[0.8, -0.3, 0.1]);
        let head = Head::Probe(probe);
        let record = record_with_rows("s", &[vec![1.0, 2.0], vec![-0.5, 1.5], vec![2.0, 0.25]]);
        let (r1, t1) = classify_sentence(&head, &record, 10, 1.0, 0.0).unwrap();
        let (r2, t2) = classify_sentence(&head, &record, 10, 2.0, 0.0).unwrap();
        assert_eq!(r2.score, r1.score / 2.0);
        for (a, b) in t1.llrs.iter().zip(&t2.llrs) {
            assert_eq!(*b, a / 2.0);
        }
        assert_eq!(r1.decision, r2.decision);
    }

    #[test]
    fn cap_limits_trace_length() {
        let rows: Vec<Vec<f32>> = (0..12).map(|i| vec![i as f32 + 1.0, 1.0]).collect();
        let record = record_with_rows("s", &rows);
        let mut probe = Probe::init(2, 0);
        probe.params_mut().copy_from_slice(&[0.1, 0.0, 0.0]);
        let head = Head::Probe(probe);
        let (result, trace) = classify_sentence(&head, &record, 10, 1.0, 0.0).unwrap();
        assert_eq!(trace.llrs.len(), 10);
        assert_eq!(result.tau, Some(10));
    }

    #[test]
    fn padding_rows_change_nothing() {
        let mut probe = Probe::init(2, 0);
        probe.params_mut().copy_from_slice(&[0.7, -0.2, 0.05]);
        let head = Head::Probe(probe);
        let rows = vec![vec![1.0f32, 2.0], vec![-0.5, 1.5]];
        let mut padded = rows.clone();
        padded.push(vec![0.0, 0.0]);
        padded.push(vec![0.0, 0.0]);
        let plain = record_with_rows("s", &rows);
        let with_pad = record_with_rows("s", &padded);
        let (r1, t1) = classify_sentence(&head, &plain, 10, 1.0, 0.0).unwrap();
        let (r2, t2) = classify_sentence(&head, &with_pad, 10, 1.0, 0.0).unwrap();
        assert_eq!(r1.score, r2.score);
        assert_eq!(r1.decision, r2.decision);
        assert_eq!(r1.tau, r2.tau);
        assert_eq!(t1.cumulative.last(), t2.cumulative.last());
    }

    #[test]
    fn odd_symmetry_of_evidence() {
        let mut probe = Probe::init(2, 0);
        probe.params_mut().copy_from_slice(&[0.6, -0.4, 0.2]);
        let head = Head::Probe(probe);
        let mut flipped = Probe::init(2, 0);
        flipped.params_mut().copy_from_slice(&[-0.6, 0.4, -0.2]);
        let flipped = Head::Probe(flipped);
        let record = record_with_rows("s", &[vec![1.0, 2.0], vec![-0.5, 1.5]]);
        let (r1, _) = classify_sentence(&head, &record, 10, 1.0, 0.0).unwrap();
        let (r2, _) = classify_sentence(&flipped, &record, 10, 1.0, 0.0).unwrap();
        assert_relative_eq!(r2.score, -r1.score, epsilon = 1e-9);
    }

    #[test]
    fn cumulative_is_masked_prefix_sum() {
        let mut probe = Probe::init(2, 0);
        probe.params_mut().copy_from_slice(&[0.5, 0.5, -0.1]);
        let head = Head::Probe(probe);
        let record = record_with_rows(
            "s",
            &[vec![1.0, 2.0], vec![0.0, 0.0], vec![2.0, -1.0]],
        );
        let (_, trace) = classify_sentence(&head, &record, 10, 1.0, 0.0).unwrap();
        let mut running = 0.0;
        for t in 0..trace.llrs.len() {
            if trace.mask[t] {
                running += trace.llrs[t];
            }
            assert_eq!(trace.cumulative[t], running);
        }
        assert!(!trace.mask[1], "zero row must be masked");
    }
}
