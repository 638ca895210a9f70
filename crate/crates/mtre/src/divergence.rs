//! Positionwise KL-divergence diagnostics between the next-token
//! distributions of hallucinated and non-hallucinated responses.

use std::collections::BTreeMap;

use rayon::prelude::*;

use crate::dataset::SentenceRecord;
use crate::error::{Error, Result};

/// Group tag assigned to the cross-group average curve.
pub const AVERAGE_GROUP: &str = "average";
/// Group tag used for records that carry no group of their own.
pub const UNGROUPED: &str = "ungrouped";

/// Direction of the divergence between the two label classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KlDirection {
    /// KL(label-0 distribution || label-1 distribution): hallucinated
    /// responses as the first argument.
    ZeroToOne,
    /// KL(label-1 || label-0).
    OneToZero,
}

impl Default for KlDirection {
    fn default() -> Self {
        KlDirection::ZeroToOne
    }
}

/// Averaged positionwise KL values for one group. Positions where one label
/// class has no surviving responses carry no value and a pair count of 0.
#[derive(Debug, Clone)]
pub struct KLCurve {
    pub group_tag: String,
    pub values: Vec<Option<f64>>,
    pub pair_counts: Vec<u64>,
}

/// Numerically safe softmax (max subtraction). Entries are strictly
/// positive and sum to one.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// KL divergence sum p ln(p/q) with 0 ln 0 = 0. `q` entries must be
/// strictly positive (softmax outputs are).
pub fn kl(p: &[f64], q: &[f64]) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::DimensionMismatch {
            expected: p.len(),
            got: q.len(),
        });
    }
    let mut total = 0.0;
    for (pv, qv) in p.iter().zip(q) {
        if *pv > 0.0 {
            total += pv * (pv / qv).ln();
        }
    }
    Ok(total.max(0.0))
}

fn softmax_row(record: &SentenceRecord, t: usize) -> Vec<f64> {
    let row: Vec<f64> = record.logit_row(t).iter().map(|v| f64::from(*v)).collect();
    softmax(&row)
}

/// Positionwise KL curve per group, followed by the cross-group average.
///
/// Within each group, records are partitioned by label; at every position
/// `t <= t_cap` all (label-0, label-1) pairs with at least `t` tokens are
/// compared and averaged. Groups lacking one label entirely are skipped
/// with a warning.
pub fn positionwise_kl_curve(
    records: &[SentenceRecord],
    t_cap: usize,
    direction: KlDirection,
) -> Result<Vec<KLCurve>> {
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let mut groups: BTreeMap<String, Vec<&SentenceRecord>> = BTreeMap::new();
    for record in records {
        let tag = record.group.clone().unwrap_or_else(|| UNGROUPED.to_string());
        groups.entry(tag).or_default().push(record);
    }

    let mut curves = Vec::new();
    for (tag, members) in &groups {
        let zeros: Vec<&SentenceRecord> = members.iter().filter(|r| r.label == 0).copied().collect();
        let ones: Vec<&SentenceRecord> = members.iter().filter(|r| r.label == 1).copied().collect();
        if zeros.is_empty() || ones.is_empty() {
            log::warn!(
                "group {tag:?} has labels (0: {}, 1: {}); skipping it in the KL analysis",
                zeros.len(),
                ones.len()
            );
            continue;
        }
        curves.push(group_curve(tag, &zeros, &ones, t_cap, direction));
    }

    if curves.is_empty() {
        return Err(Error::Degenerate(
            "no group contains both label classes".into(),
        ));
    }

    let mut avg_values = Vec::with_capacity(t_cap);
    let mut avg_counts = Vec::with_capacity(t_cap);
    for t in 0..t_cap {
        let present: Vec<f64> = curves.iter().filter_map(|c| c.values[t]).collect();
        avg_values.push(if present.is_empty() {
            None
        } else {
            Some(present.iter().sum::<f64>() / present.len() as f64)
        });
        avg_counts.push(curves.iter().map(|c| c.pair_counts[t]).sum());
    }
    curves.push(KLCurve {
        group_tag: AVERAGE_GROUP.to_string(),
        values: avg_values,
        pair_counts: avg_counts,
    });
    Ok(curves)
}

fn group_curve(
    tag: &str,
    zeros: &[&SentenceRecord],
    ones: &[&SentenceRecord],
    t_cap: usize,
    direction: KlDirection,
) -> KLCurve {
    let mut values = Vec::with_capacity(t_cap);
    let mut pair_counts = Vec::with_capacity(t_cap);
    for t in 0..t_cap {
        let p0: Vec<Vec<f64>> = zeros
            .iter()
            .filter(|r| r.num_tokens() > t)
            .map(|r| softmax_row(r, t))
            .collect();
        let p1: Vec<Vec<f64>> = ones
            .iter()
            .filter(|r| r.num_tokens() > t)
            .map(|r| softmax_row(r, t))
            .collect();
        let pairs = (p0.len() * p1.len()) as u64;
        pair_counts.push(pairs);
        if pairs == 0 {
            values.push(None);
            continue;
        }
        // Parallel over the first index, fixed-order reduction.
        let partials: Vec<f64> = p0
            .par_iter()
            .map(|a| {
                p1.iter()
                    .map(|b| match direction {
                        KlDirection::ZeroToOne => kl(a, b).expect("equal lengths"),
                        KlDirection::OneToZero => kl(b, a).expect("equal lengths"),
                    })
                    .sum()
            })
            .collect();
        values.push(Some(partials.iter().sum::<f64>() / pairs as f64));
    }
    KLCurve {
        group_tag: tag.to_string(),
        values,
        pair_counts,
    }
}
