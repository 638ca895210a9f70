//! Binary-classification metrics: accuracy, F1, AUROC with midrank tie
//! handling, average precision, and the Youden-index cutoff used to turn
//! baseline scores into decisions.

use crate::error::{Error, Result};

/// A scored evaluation set: one real score and one binary label per item.
#[derive(Debug, Clone)]
pub struct ScoredSet {
    scores: Vec<f64>,
    labels: Vec<u8>,
}

impl ScoredSet {
    pub fn new(scores: Vec<f64>, labels: Vec<u8>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: scores.len(),
            });
        }
        if let Some(s) = scores.iter().find(|s| !s.is_finite()) {
            return Err(Error::InvalidParam(format!("non-finite score {s}")));
        }
        if let Some(l) = labels.iter().find(|l| **l > 1) {
            return Err(Error::InvalidParam(format!("label must be 0 or 1, got {l}")));
        }
        Ok(ScoredSet { scores, labels })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    fn class_counts(&self) -> (usize, usize) {
        let pos = self.labels.iter().filter(|l| **l == 1).count();
        (pos, self.labels.len() - pos)
    }
}

/// Area under the ROC curve via the rank statistic: the fraction of
/// (positive, negative) pairs where the positive outscores the negative,
/// ties counted one half.
pub fn auroc(set: &ScoredSet) -> Result<f64> {
    let (pos, neg) = set.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "auroc requires both labels to be present".into(),
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[a].total_cmp(&set.scores[b]));

    // Midranks over tied score groups.
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        // Ranks are 1-based; the tied block [i, j) shares the mean rank.
        let midrank = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            if set.labels[idx] == 1 {
                rank_sum_pos += midrank;
            }
        }
        i = j;
    }
    let pos_f = pos as f64;
    let u = rank_sum_pos - pos_f * (pos_f + 1.0) / 2.0;
    Ok(u / (pos_f * neg as f64))
}

/// F1 score of binary predictions; 0 when there are no true or predicted
/// positives.
pub fn f1(predictions: &[u8], labels: &[u8]) -> f64 {
    assert_eq!(predictions.len(), labels.len(), "length mismatch");
    let (mut tp, mut fp, mut fneg) = (0u64, 0u64, 0u64);
    for (p, y) in predictions.iter().zip(labels) {
        match (p, y) {
            (1, 1) => tp += 1,
            (1, 0) => fp += 1,
            (0, 1) => fneg += 1,
            _ => {}
        }
    }
    let denom = 2 * tp + fp + fneg;
    if denom == 0 {
        0.0
    } else {
        2.0 * tp as f64 / denom as f64
    }
}

/// Mean agreement between predictions and labels.
pub fn accuracy(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    assert_eq!(predictions.len(), labels.len(), "length mismatch");
    if predictions.is_empty() {
        return Err(Error::Degenerate("accuracy of an empty set".into()));
    }
    let agree = predictions.iter().zip(labels).filter(|(p, y)| p == y).count();
    Ok(agree as f64 / predictions.len() as f64)
}

/// Threshold maximizing Youden's J = TPR - FPR under the decision rule
/// `score >= threshold`. Candidates are the distinct observed scores plus
/// +inf (predict-all-negative); ties go to the smallest threshold.
pub fn youden_cutoff(train: &ScoredSet) -> Result<f64> {
    let (pos, neg) = train.class_counts();
    if pos == 0 || neg == 0 {
        return Err(Error::Degenerate(
            "youden cutoff requires both labels to be present".into(),
        ));
    }
    let mut candidates: Vec<f64> = train.scores.to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);

    let mut best = (f64::NEG_INFINITY, f64::INFINITY);
    for &thr in &candidates {
        let (mut tp, mut fp) = (0usize, 0usize);
        for (s, y) in train.scores.iter().zip(&train.labels) {
            if *s >= thr {
                if *y == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
            }
        }
        let j = tp as f64 / pos as f64 - fp as f64 / neg as f64;
        if j > best.0 {
            best = (j, thr);
        }
    }
    Ok(best.1)
}

/// Area under the precision-recall curve (average precision, step
/// integration over descending score thresholds).
pub fn average_precision(set: &ScoredSet) -> Result<f64> {
    let (pos, _neg) = set.class_counts();
    if pos == 0 {
        return Err(Error::Degenerate(
            "average precision requires at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..set.len()).collect();
    order.sort_by(|&a, &b| set.scores[b].total_cmp(&set.scores[a]));

    let mut ap = 0.0;
    let mut tp = 0usize;
    let mut seen = 0usize;
    let mut prev_recall = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        // Tied scores enter the positive set together.
        while j < order.len() && set.scores[order[j]] == set.scores[order[i]] {
            j += 1;
        }
        for &idx in &order[i..j] {
            seen += 1;
            tp += usize::from(set.labels[idx] == 1);
        }
        let recall = tp as f64 / pos as f64;
        let precision = tp as f64 / seen as f64;
        ap += (recall - prev_recall) * precision;
        prev_recall = recall;
        i = j;
    }
    Ok(ap)
}

#[cfg(test)]
pub(crate) fn auroc_bruteforce(set: &ScoredSet) -> f64 {
    let mut total = 0.0;
    let mut pairs = 0u64;
    for (sp, yp) in set.scores().iter().zip(set.labels()) {
        if *yp != 1 {
            continue;
        }
        for (sn, yn) in set.scores().iter().zip(set.labels()) {
            if *yn != 0 {
                continue;
            }
            pairs += 1;
            if sp > sn {
                total += 1.0;
            } else if sp == sn {
                total += 0.5;
            }
        }
    }
    total / pairs as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn set(scores: &[f64], labels: &[u8]) -> ScoredSet {
        ScoredSet::new(scores.to_vec(), labels.to_vec()).unwrap()
    }

    #[test]
    fn auroc_worked_example() {
        let s = set(&[0.1, 0.4, 0.35, 0.8], &[0, 0, 1, 1]);
        assert_eq!(auroc(&s).unwrap(), 0.75);
    }

    #[test]
    fn auroc_all_ties_is_half() {
        let s = set(&[0.3, 0.3, 0.3, 0.3], &[0, 1, 0, 1]);
        assert_eq!(auroc(&s).unwrap(), 0.5);
    }

    #[test]
    fn auroc_perfect_separation() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!(auroc(&s).unwrap(), 1.0);
    }

    #[test]
    fn auroc_single_label_errors() {
        let s = set(&[0.1, 0.2], &[1, 1]);
        assert!(auroc(&s).is_err());
    }

    #[test]
    fn f1_cases() {
        assert_eq!(f1(&[1, 0, 1], &[1, 0, 1]), 1.0);
        assert_eq!(f1(&[0, 0], &[0, 0]), 0.0);
        assert_eq!(f1(&[1, 1, 0], &[1, 0, 1]), 0.5);
    }

    #[test]
    fn accuracy_cases() {
        assert_eq!(accuracy(&[1, 0], &[1, 0]).unwrap(), 1.0);
        assert_eq!(accuracy(&[1, 0], &[0, 1]).unwrap(), 0.0);
        assert_eq!(accuracy(&[1, 0], &[1, 1]).unwrap(), 0.5);
        assert!(accuracy(&[], &[]).is_err());
    }

    #[test]
    fn youden_separable() {
        let s = set(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]);
        assert_eq!(youden_cutoff(&s).unwrap(), 0.8);
    }

    #[test]
    fn youden_anticorrelated_is_optimal() {
        // Scores rank against the labels; no >= rule beats J = 0 and the
        // returned cutoff must achieve it.
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]);
        let thr = youden_cutoff(&s).unwrap();
        let j = youden_j(&s, thr);
        assert_eq!(j, 0.0);
        for cand in [0.1, 0.2, 0.8, 0.9, f64::INFINITY] {
            assert!(youden_j(&s, cand) <= j);
        }
    }

    #[test]
    fn youden_degenerate_ties_return_smallest() {
        let s = set(&[0.4, 0.4, 0.4, 0.4], &[0, 1, 0, 1]);
        assert_eq!(youden_cutoff(&s).unwrap(), 0.4);
    }

    fn youden_j(s: &ScoredSet, thr: f64) -> f64 {
        let (pos, neg) = (
            s.labels().iter().filter(|l| **l == 1).count() as f64,
            s.labels().iter().filter(|l| **l == 0).count() as f64,
        );
        let (mut tp, mut fp) = (0.0, 0.0);
        for (sc, y) in s.scores().iter().zip(s.labels()) {
            if *sc >= thr {
                if *y == 1 {
                    tp += 1.0;
                } else {
                    fp += 1.0;
                }
            }
        }
        tp / pos - fp / neg
    }

    #[test]
    fn youden_beats_every_candidate_on_random_sets() {
        let mut rng = crate::seeding::rng_from(41);
        for _ in 0..100 {
            let n = rng.random_range(2..20);
            let scores: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let Ok(s) = ScoredSet::new(scores.clone(), labels) else {
                continue;
            };
            let Ok(thr) = youden_cutoff(&s) else { continue };
            let j = youden_j(&s, thr);
            for cand in scores.iter().copied().chain([f64::INFINITY]) {
                assert!(youden_j(&s, cand) <= j + 1e-15);
            }
        }
    }

    #[test]
    fn average_precision_basics() {
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[1, 1, 0, 0]);
        assert_eq!(average_precision(&s).unwrap(), 1.0);
        let s = set(&[0.9, 0.8, 0.2, 0.1], &[0, 0, 1, 1]);
        // Positives ranked last: precision 1/3 at recall 1/2, 2/4 at recall 1.
        let expected = 0.5 * (1.0 / 3.0) + 0.5 * 0.5;
        assert!((average_precision(&s).unwrap() - expected).abs() < 1e-12);
    }

    proptest! {
        #[test]
        fn auroc_matches_bruteforce(
            raw in proptest::collection::vec((0u8..=1, -5.0f64..5.0), 2..20)
        ) {
            let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
            // Quantize scores so ties actually occur.
            let scores: Vec<f64> = raw.iter().map(|(_, s)| (s * 4.0).round() / 4.0).collect();
            let s = ScoredSet::new(scores, labels).unwrap();
            prop_assume!(s.labels().iter().any(|l| *l == 1));
            prop_assume!(s.labels().iter().any(|l| *l == 0));
            let fast = auroc(&s).unwrap();
            let slow = auroc_bruteforce(&s);
            prop_assert!((fast - slow).abs() < 1e-12);
        }

        #[test]
        fn auroc_invariant_under_increasing_transform(
            raw in proptest::collection::vec((0u8..=1, -3.0f64..3.0), 2..16)
        ) {
            let labels: Vec<u8> = raw.iter().map(|(l, _)| *l).collect();
            let scores: Vec<f64> = raw.iter().map(|(_, s)| *s).collect();
            let mapped: Vec<f64> = scores.iter().map(|s| (s * 0.7).exp() + 2.0 * s).collect();
            let a = ScoredSet::new(scores, labels.clone()).unwrap();
            let b = ScoredSet::new(mapped, labels).unwrap();
            prop_assume!(a.labels().iter().any(|l| *l == 1));
            prop_assume!(a.labels().iter().any(|l| *l == 0));
            prop_assert!((auroc(&a).unwrap() - auroc(&b).unwrap()).abs() < 1e-12);
        }
    }

    #[test]
    fn auroc_complement_identity_without_ties() {
        let mut rng = crate::seeding::rng_from(5);
        for _ in 0..50 {
            let n = rng.random_range(2..20);
            let scores: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
            let labels: Vec<u8> = (0..n).map(|_| u8::from(rng.random_bool(0.5))).collect();
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let a = ScoredSet::new(scores, labels.clone()).unwrap();
            let b = ScoredSet::new(neg, labels).unwrap();
            let (Ok(x), Ok(y)) = (auroc(&a), auroc(&b)) else {
                continue;
            };
            assert!((x + y - 1.0).abs() < 1e-12);
        }
    }
}
