//! Cross-fit calibration: out-of-fold LLR collection, temperature fitting,
//! stopping-threshold search, and early-stopped sentence scoring.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{decide, token_llr, DetectionResult, EvidenceTrace};
use crate::classifier::{train_reliability_head, Head, HeadKind, TrainConfig, TrainedHead};
use crate::dataset::{
    build_token_dataset, build_token_dataset_from_refs, pad_mask, FoldAssignment, SentenceRecord,
    DEFAULT_EPSILON,
};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auroc, average_precision, f1, ScoredSet};
use crate::seeding;

const CALIBRATION_FORMAT_VERSION: u32 = 1;

/// One out-of-fold LLR observation. Masked (padding) positions carry z = 0
/// so evidence sums match inference exactly while row counts stay
/// per-sentence complete.
#[derive(Debug, Clone, PartialEq)]
pub struct OofRow {
    pub sentence_id: String,
    /// 1-based token position.
    pub position: usize,
    pub z: f64,
    pub label: u8,
    pub fold: usize,
}

/// Out-of-fold LLR observations grouped by sentence.
#[derive(Debug, Clone, Default)]
pub struct OofLlrTable {
    rows: Vec<OofRow>,
}

/// Per-sentence LLR sequence extracted from an [`OofLlrTable`].
#[derive(Debug, Clone)]
pub struct SentenceLlrs {
    pub sentence_id: String,
    pub label: u8,
    pub fold: usize,
    pub llrs: Vec<f64>,
}

impl OofLlrTable {
    pub fn new(rows: Vec<OofRow>) -> Result<OofLlrTable> {
        let mut seen = HashSet::new();
        for row in &rows {
            if !seen.insert((row.sentence_id.clone(), row.position)) {
                return Err(Error::InvalidParam(format!(
                    "duplicate (sentence {}, position {}) in LLR table",
                    row.sentence_id, row.position
                )));
            }
        }
        Ok(OofLlrTable { rows })
    }

    pub fn rows(&self) -> &[OofRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Concatenate with previously collected observations.
    pub fn concat(self, other: OofLlrTable) -> Result<OofLlrTable> {
        let mut rows = self.rows;
        rows.extend(other.rows);
        OofLlrTable::new(rows)
    }

    /// Group rows by sentence in first-appearance order; LLRs sorted by
    /// position.
    pub fn by_sentence(&self) -> Vec<SentenceLlrs> {
        let mut order: Vec<String> = Vec::new();
        let mut index: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
        let mut grouped: Vec<Vec<(usize, f64)>> = Vec::new();
        let mut labels: Vec<(u8, usize)> = Vec::new();
        for row in &self.rows {
            let i = *index.entry(row.sentence_id.clone()).or_insert_with(|| {
                order.push(row.sentence_id.clone());
                grouped.push(Vec::new());
                labels.push((row.label, row.fold));
                grouped.len() - 1
            });
            grouped[i].push((row.position, row.z));
        }
        order
            .into_iter()
            .zip(grouped)
            .zip(labels)
            .map(|((sentence_id, mut entries), (label, fold))| {
                entries.sort_by_key(|(pos, _)| *pos);
                SentenceLlrs {
                    sentence_id,
                    label,
                    fold,
                    llrs: entries.into_iter().map(|(_, z)| z).collect(),
                }
            })
            .collect()
    }

    fn labels_present(&self) -> (bool, bool) {
        (
            self.rows.iter().any(|r| r.label == 0),
            self.rows.iter().any(|r| r.label == 1),
        )
    }
}

/// Train one head per fold on the complement and score only that fold's
/// sentences, producing raw (uncalibrated) LLR rows.
pub fn collect_oof_llrs(
    records: &[SentenceRecord],
    folds: &FoldAssignment,
    train_config: &TrainConfig,
    kind: &HeadKind,
    t_cap: usize,
) -> Result<OofLlrTable> {
    for record in records {
        if folds.fold_of(&record.id).is_none() {
            return Err(Error::InvalidParam(format!(
                "sentence {} has no fold assignment",
                record.id
            )));
        }
    }

    let per_fold: Vec<Result<Vec<OofRow>>> = (0..folds.k_cv)
        .into_par_iter()
        .map(|fold| {
            let complement: Vec<&SentenceRecord> = records
                .iter()
                .filter(|r| folds.fold_of(&r.id) != Some(fold))
                .collect();
            let has_zero = complement.iter().any(|r| r.label == 0);
            let has_one = complement.iter().any(|r| r.label == 1);
            if !(has_zero && has_one) {
                return Err(Error::ComplementSingleLabel { fold });
            }
            let examples = build_token_dataset_from_refs(
                complement.into_iter(),
                t_cap,
                seeding::derive_indexed(train_config.seed, "fold-data", fold as u64),
            );
            let mut fold_config = train_config.clone();
            fold_config.seed = seeding::derive_indexed(train_config.seed, "fold-train", fold as u64);
            let trained = train_reliability_head(&examples, &fold_config, kind)?;

            let mut rows = Vec::new();
            for record in records.iter().filter(|r| folds.fold_of(&r.id) == Some(fold)) {
                let mask = pad_mask(record, DEFAULT_EPSILON);
                for t in 0..record.num_tokens().min(t_cap) {
                    let z = if mask[t] {
                        token_llr(trained.head.predict(record.logit_row(t))?)?
                    } else {
                        0.0
                    };
                    rows.push(OofRow {
                        sentence_id: record.id.clone(),
                        position: t + 1,
                        z,
                        label: record.label,
                        fold,
                    });
                }
            }
            Ok(rows)
        })
        .collect();

    let mut rows = Vec::new();
    for fold_rows in per_fold {
        rows.extend(fold_rows?);
    }
    OofLlrTable::new(rows)
}

/// Result of the temperature fit. `at_bracket_edge` flags degenerate tables
/// whose objective is minimized at a search-bracket endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TemperatureFit {
    pub c_star: f64,
    pub at_bracket_edge: bool,
}

const TEMP_LO: f64 = 1e-3;
const TEMP_HI: f64 = 1e3;

fn softplus(u: f64) -> f64 {
    u.max(0.0) + (-u.abs()).exp().ln_1p()
}

/// Mean token-broadcast BCE of sigmoid(z / c) against the labels.
fn temperature_objective(rows: &[OofRow], c: f64) -> f64 {
    let total: f64 = rows
        .iter()
        .map(|row| {
            let u = row.z / c;
            softplus(u) - f64::from(row.label) * u
        })
        .sum();
    total / rows.len() as f64
}

/// Fit the LLR temperature by golden-section search over log C on
/// [ln 1e-3, ln 1e3] to absolute tolerance 1e-6 in log space. If a bracket
/// endpoint beats the interior optimum, the endpoint is returned and
/// flagged.
pub fn fit_temperature(table: &OofLlrTable) -> Result<TemperatureFit> {
    if table.is_empty() {
        return Err(Error::Degenerate("temperature fit on an empty LLR table".into()));
    }
    let rows = table.rows();
    let (has_zero, has_one) = table.labels_present();
    if !(has_zero && has_one) {
        log::warn!("temperature fit on a single-label table; objective is degenerate");
    }

    let g = |x: f64| temperature_objective(rows, x.exp());
    let (mut a, mut b) = (TEMP_LO.ln(), TEMP_HI.ln());
    let phi = (5.0_f64.sqrt() - 1.0) / 2.0;
    let mut c = b - phi * (b - a);
    let mut d = a + phi * (b - a);
    let (mut fc, mut fd) = (g(c), g(d));
    while b - a > 1e-6 {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - phi * (b - a);
            fc = g(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + phi * (b - a);
            fd = g(d);
        }
    }
    let interior = ((a + b) / 2.0).exp();

    let candidates = [(interior, false), (TEMP_LO, true), (TEMP_HI, true)];
    let mut best = candidates[0];
    let mut best_obj = temperature_objective(rows, best.0);
    for (cand, edge) in &candidates[1..] {
        let obj = temperature_objective(rows, *cand);
        if obj < best_obj {
            best = (*cand, *edge);
            best_obj = obj;
        }
    }
    if best.1 {
        log::warn!(
            "temperature objective minimized at bracket edge C = {}; returning the edge value",
            best.0
        );
    }
    Ok(TemperatureFit {
        c_star: best.0,
        at_bracket_edge: best.1,
    })
}

/// Accumulate LLRs until the running sum crosses either threshold or
/// `token_cap` tokens are consumed. Returns the final sum and the 1-based
/// stopping index (0 for an empty sequence).
pub fn early_stop_trace(
    llrs: &[f64],
    upper_threshold: f64,
    lower_threshold: f64,
    token_cap: usize,
) -> (f64, usize) {
    debug_assert!(lower_threshold < 0.0 && upper_threshold > 0.0);
    debug_assert!(token_cap >= 1);
    let cap = token_cap.min(llrs.len());
    let mut evidence = 0.0;
    for (i, z) in llrs[..cap].iter().enumerate() {
        evidence += z;
        if evidence >= upper_threshold || evidence <= lower_threshold {
            return (evidence, i + 1);
        }
    }
    (evidence, cap)
}

/// Deployment metric maximized by the threshold grid search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Objective {
    Auroc,
    PrAuc,
    F1AtFpr { target_fpr: f64 },
}

impl Default for Objective {
    fn default() -> Self {
        Objective::Auroc
    }
}

impl Objective {
    fn evaluate(&self, scores: Vec<f64>, labels: Vec<u8>) -> Result<f64> {
        let set = ScoredSet::new(scores, labels)?;
        match self {
            Objective::Auroc => auroc(&set),
            Objective::PrAuc => average_precision(&set),
            Objective::F1AtFpr { target_fpr } => f1_at_target_fpr(&set, *target_fpr),
        }
    }
}

/// F1 at the most permissive threshold whose training FPR does not exceed
/// the target.
fn f1_at_target_fpr(set: &ScoredSet, target_fpr: f64) -> Result<f64> {
    let neg = set.labels().iter().filter(|l| **l == 0).count();
    if neg == 0 || set.labels().iter().all(|l| *l == 0) {
        return Err(Error::Degenerate(
            "f1-at-fpr requires both labels to be present".into(),
        ));
    }
    let mut candidates: Vec<f64> = set.scores().to_vec();
    candidates.sort_by(f64::total_cmp);
    candidates.dedup();
    candidates.push(f64::INFINITY);
    // The smallest threshold meeting the FPR budget admits the most
    // positives and therefore the highest TPR.
    let mut chosen = f64::INFINITY;
    for &thr in &candidates {
        let fp = set
            .scores()
            .iter()
            .zip(set.labels())
            .filter(|(s, y)| **s >= thr && **y == 0)
            .count();
        if fp as f64 / neg as f64 <= target_fpr {
            chosen = thr;
            break;
        }
    }
    let predictions: Vec<u8> = set.scores().iter().map(|s| u8::from(*s >= chosen)).collect();
    Ok(f1(&predictions, set.labels()))
}

/// Candidate lists for the stopping-threshold grid search. Missing lists
/// fall back to data-driven defaults: positive deciles of the |final
/// evidence| distribution (plus infinity) for the thresholds and 1..=t_cap
/// for the token cap.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GridSpec {
    pub upper: Option<Vec<f64>>,
    pub lower: Option<Vec<f64>>,
    pub token_caps: Option<Vec<usize>>,
}

fn decile_magnitudes(final_evidence: &[f64]) -> Vec<f64> {
    let mut abs: Vec<f64> = final_evidence.iter().map(|l| l.abs()).collect();
    abs.sort_by(f64::total_cmp);
    let n = abs.len();
    let mut out = Vec::new();
    for k in 1..=9 {
        let q = k as f64 / 10.0;
        let idx = ((q * (n - 1) as f64).round() as usize).min(n - 1);
        out.push(abs[idx]);
    }
    out.dedup();
    out.retain(|v| *v > 0.0);
    out
}

/// Grid-search the stopping thresholds on calibrated OOF LLR sequences.
/// Ties are broken toward smaller mean stopping index, then smaller upper
/// threshold, then larger lower threshold.
pub fn fit_stopping_thresholds(
    table: &OofLlrTable,
    c_star: f64,
    objective: Objective,
    grid: &GridSpec,
) -> Result<(f64, f64, usize)> {
    if table.is_empty() {
        return Err(Error::Degenerate("threshold fit on an empty LLR table".into()));
    }
    if !(c_star > 0.0 && c_star.is_finite()) {
        return Err(Error::InvalidParam(format!("c_star must be positive, got {c_star}")));
    }
    let sentences: Vec<SentenceLlrs> = table
        .by_sentence()
        .into_iter()
        .map(|mut s| {
            for z in &mut s.llrs {
                *z /= c_star;
            }
            s
        })
        .collect();
    let labels: Vec<u8> = sentences.iter().map(|s| s.label).collect();
    let max_len = sentences.iter().map(|s| s.llrs.len()).max().unwrap_or(0);

    let final_evidence: Vec<f64> = sentences.iter().map(|s| s.llrs.iter().sum()).collect();
    let upper: Vec<f64> = match &grid.upper {
        Some(list) => {
            if list.iter().any(|v| !(*v > 0.0)) {
                return Err(Error::InvalidParam(
                    "upper-threshold candidates must be positive".into(),
                ));
            }
            list.clone()
        }
        None => {
            let mut ds = decile_magnitudes(&final_evidence);
            ds.push(f64::INFINITY);
            ds
        }
    };
    let lower: Vec<f64> = match &grid.lower {
        Some(list) => {
            if list.iter().any(|v| !(*v < 0.0)) {
                return Err(Error::InvalidParam(
                    "lower-threshold candidates must be negative".into(),
                ));
            }
            list.clone()
        }
        None => {
            let mut ds: Vec<f64> = decile_magnitudes(&final_evidence)
                .into_iter()
                .map(|v| -v)
                .collect();
            ds.push(f64::NEG_INFINITY);
            ds
        }
    };
    let token_caps: Vec<usize> = match &grid.token_caps {
        Some(list) => {
            if list.iter().any(|t| *t == 0) {
                return Err(Error::InvalidParam("token-cap candidates must be at least 1".into()));
            }
            list.clone()
        }
        None => (1..=max_len.max(1)).collect(),
    };
    if upper.is_empty() || lower.is_empty() || token_caps.is_empty() {
        return Err(Error::InvalidParam("empty threshold grid".into()));
    }

    let mut triples = Vec::new();
    for &cu in &upper {
        for &cb in &lower {
            for &tm in &token_caps {
                triples.push((cu, cb, tm));
            }
        }
    }

    let evaluated: Vec<Result<(f64, f64)>> = triples
        .par_iter()
        .map(|&(cu, cb, tm)| {
            let mut scores = Vec::with_capacity(sentences.len());
            let mut tau_sum = 0usize;
            for s in &sentences {
                let (evidence, tau) = early_stop_trace(&s.llrs, cu, cb, tm);
                scores.push(evidence);
                tau_sum += tau;
            }
            let obj = objective.evaluate(scores, labels.clone())?;
            Ok((obj, tau_sum as f64 / sentences.len() as f64))
        })
        .collect();

    let mut best: Option<((f64, f64, usize), (f64, f64))> = None;
    for (&(cu, cb, tm), eval) in triples.iter().zip(evaluated) {
        let (obj, mean_tau) = eval?;
        let better = match &best {
            None => true,
            Some((b_triple, (b_obj, b_tau))) => {
                if obj != *b_obj {
                    obj > *b_obj
                } else if mean_tau != *b_tau {
                    mean_tau < *b_tau
                } else if cu != b_triple.0 {
                    cu < b_triple.0
                } else {
                    cb > b_triple.1
                }
            }
        };
        if better {
            best = Some(((cu, cb, tm), (obj, mean_tau)));
        }
    }
    Ok(best.expect("grid is non-empty").0)
}

/// Calibrated temperature, stopping thresholds, and provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationParams {
    #[serde(rename = "c_star")]
    pub temperature: f64,
    #[serde(rename = "c_u", with = "extended_f64")]
    pub upper_threshold: f64,
    #[serde(rename = "c_b", with = "extended_f64")]
    pub lower_threshold: f64,
    #[serde(rename = "t_max")]
    pub token_cap: usize,
    pub objective: Objective,
    pub k_cv: usize,
    pub seed: u64,
}

impl CalibrationParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::InvalidParam(format!(
                "temperature must be positive and finite, got {}",
                self.temperature
            )));
        }
        if !(self.lower_threshold < 0.0 && self.upper_threshold > 0.0) {
            return Err(Error::InvalidParam(format!(
                "thresholds must satisfy lower < 0 < upper, got ({}, {})",
                self.lower_threshold, self.upper_threshold
            )));
        }
        if self.token_cap == 0 {
            return Err(Error::InvalidParam("token cap must be at least 1".into()));
        }
        Ok(())
    }
}

mod extended_f64 {
    use serde::de::{self, Visitor};
    use serde::{Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else if *v > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    struct ExtendedVisitor;

    impl Visitor<'_> for ExtendedVisitor {
        type Value = f64;

        fn expecting(&self, f: &mut std::fmt::Formatter) -> std::fmt::Result {
            f.write_str("a number or \"inf\"/\"-inf\"")
        }

        fn visit_f64<E: de::Error>(self, v: f64) -> Result<f64, E> {
            Ok(v)
        }

        fn visit_i64<E: de::Error>(self, v: i64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_u64<E: de::Error>(self, v: u64) -> Result<f64, E> {
            Ok(v as f64)
        }

        fn visit_str<E: de::Error>(self, v: &str) -> Result<f64, E> {
            match v {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(E::custom(format!("unrecognized extended float {other:?}"))),
            }
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        d.deserialize_any(ExtendedVisitor)
    }
}

#[derive(Serialize, Deserialize)]
struct CalibrationFile {
    #[serde(flatten)]
    params: CalibrationParams,
    format_version: u32,
}

pub fn save_calibration(params: &CalibrationParams, path: &Path) -> Result<()> {
    let file = CalibrationFile {
        params: params.clone(),
        format_version: CALIBRATION_FORMAT_VERSION,
    };
    let mut json = serde_json::to_string_pretty(&file).expect("params serialize");
    json.push('\n');
    fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_calibration(path: &Path) -> Result<CalibrationParams> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let file: CalibrationFile = serde_json::from_slice(&bytes)
        .map_err(|e| Error::InvalidParam(format!("{}: {e}", path.display())))?;
    if file.format_version != CALIBRATION_FORMAT_VERSION {
        return Err(Error::InvalidParam(format!(
            "unsupported calibration format_version {}",
            file.format_version
        )));
    }
    file.params.validate()?;
    Ok(file.params)
}

/// End-to-end calibration: stratified split, per-fold OOF collection,
/// temperature fit, threshold grid search, and a final retrain on all
/// records. Fully deterministic under `train_config.seed`.
pub fn calibrate(
    records: &[SentenceRecord],
    k_cv: usize,
    train_config: &TrainConfig,
    kind: &HeadKind,
    t_cap: usize,
    objective: Objective,
    grid: Option<&GridSpec>,
) -> Result<(TrainedHead, CalibrationParams, OofLlrTable)> {
    let folds = crate::dataset::split_stratified(
        records,
        k_cv,
        seeding::derive(train_config.seed, "split"),
    )?;
    let table = collect_oof_llrs(records, &folds, train_config, kind, t_cap)?;
    let fit = fit_temperature(&table)?;
    let default_grid = GridSpec::default();
    let (upper, lower, token_cap) = fit_stopping_thresholds(
        &table,
        fit.c_star,
        objective,
        grid.unwrap_or(&default_grid),
    )?;

    let examples = build_token_dataset(
        records,
        t_cap,
        seeding::derive(train_config.seed, "final-data"),
    );
    let trained = train_reliability_head(&examples, train_config, kind)?;

    let params = CalibrationParams {
        temperature: fit.c_star,
        upper_threshold: upper,
        lower_threshold: lower,
        token_cap,
        objective,
        k_cv,
        seed: train_config.seed,
    };
    params.validate()?;
    Ok((trained, params, table))
}

/// Score one sentence with calibrated early stopping: temperature-scaled
/// LLRs of the unmasked tokens are accumulated until a threshold crossing
/// or the calibrated token cap.
pub fn classify_sentence_stopped(
    head: &Head,
    record: &SentenceRecord,
    t_cap: usize,
    params: &CalibrationParams,
) -> Result<(DetectionResult, EvidenceTrace)> {
    params.validate()?;
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let cap = record.num_tokens().min(t_cap);
    let mask = pad_mask(record, DEFAULT_EPSILON);
    let mut llrs = Vec::with_capacity(cap);
    for t in 0..cap {
        if mask[t] {
            let p = head.predict(record.logit_row(t))?;
            llrs.push(token_llr(p)? / params.temperature);
        }
    }
    let (evidence, tau) = early_stop_trace(
        &llrs,
        params.upper_threshold,
        params.lower_threshold,
        params.token_cap,
    );
    let decision = decide(evidence, 0.0);
    let mut cumulative = Vec::with_capacity(llrs.len());
    let mut running = 0.0;
    for z in &llrs {
        running += z;
        cumulative.push(running);
    }
    let trace_mask = vec![true; llrs.len()];
    Ok((
        DetectionResult {
            sentence_id: record.id.clone(),
            method: "mtre_tau".into(),
            score: evidence,
            decision: Some(decision),
            tau: Some(tau),
        },
        EvidenceTrace {
            llrs,
            cumulative,
            mask: trace_mask,
            tau,
            decision,
        },
    ))
}

/// Convenience used by the CLI: per-fold evidence AUROC/accuracy summary of
/// an OOF table.
pub fn fold_summaries(table: &OofLlrTable) -> Vec<(usize, usize, Option<f64>, Option<f64>)> {
    let sentences = table.by_sentence();
    let max_fold = sentences.iter().map(|s| s.fold).max().unwrap_or(0);
    (0..=max_fold)
        .map(|fold| {
            let members: Vec<&SentenceLlrs> =
                sentences.iter().filter(|s| s.fold == fold).collect();
            let scores: Vec<f64> = members.iter().map(|s| s.llrs.iter().sum()).collect();
            let labels: Vec<u8> = members.iter().map(|s| s.label).collect();
            let auc = ScoredSet::new(scores.clone(), labels.clone())
                .ok()
                .and_then(|s| auroc(&s).ok());
            let predictions: Vec<u8> = scores.iter().map(|l| decide(*l, 0.0)).collect();
            let acc = accuracy(&predictions, &labels).ok();
            (fold, members.len(), auc, acc)
        })
        .collect()
}
