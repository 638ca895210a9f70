//! Command implementations behind the `mtre` binary: dataset synthesis,
//! training, calibration, evaluation, and KL analysis, driven by one JSON
//! config document plus a few common flags.

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{classify_sentence, DetectionResult};
use crate::baselines::{
    self, first_token_probe, p_true_score, seq_logprob, token_sar, PTrueConfig,
};
use crate::calibration::{
    calibrate, classify_sentence_stopped, fold_summaries, load_calibration, save_calibration,
    GridSpec, Objective,
};
use crate::classifier::{
    load_head, save_head, train_reliability_head, AttentionConfig, HeadKind, Optimizer,
    TrainConfig,
};
use crate::dataset::{build_token_dataset, load_dataset, save_dataset, SentenceRecord};
use crate::divergence::{positionwise_kl_curve, KlDirection};
use crate::error::{Error, Result};
use crate::metrics::{accuracy, auroc, f1, youden_cutoff, ScoredSet};
use crate::seeding;
use crate::synthgen::{self, SynthConfig, TokensPerSentence};

pub const METHOD_MTRE: &str = "mtre";
pub const METHOD_MTRE_TAU: &str = "mtre_tau";

const ALL_METHODS: [&str; 6] = [
    METHOD_MTRE,
    METHOD_MTRE_TAU,
    baselines::METHOD_SEQ_LOGPROB,
    baselines::METHOD_FIRST_TOKEN_PROBE,
    baselines::METHOD_P_TRUE,
    baselines::METHOD_TOKEN_SAR,
];

/// Top-level config document; flags override the common fields.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub threads: Option<usize>,
    pub synth: Option<SynthSection>,
    pub train: Option<TrainSection>,
    pub calibrate: Option<CalibrateSection>,
    pub eval: Option<EvalSection>,
    pub kl: Option<KlSection>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSection {
    pub vocab_size: usize,
    pub num_sentences: usize,
    pub tokens_per_sentence: TokensPerSentence,
    pub onset: usize,
    pub signal_strength: f64,
    pub noise_scale: f64,
    pub positive_fraction: f64,
}

impl Default for SynthSection {
    fn default() -> Self {
        SynthSection {
            vocab_size: 64,
            num_sentences: 200,
            tokens_per_sentence: TokensPerSentence::Fixed(10),
            onset: 1,
            signal_strength: 1.0,
            noise_scale: 0.5,
            positive_fraction: 0.5,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainSettings {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub dropout_rate: f64,
    pub optimizer: Optimizer,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let d = TrainConfig::default();
        TrainSettings {
            learning_rate: d.learning_rate,
            epochs: d.epochs,
            batch_size: d.batch_size,
            weight_decay: d.weight_decay,
            dropout_rate: d.dropout_rate,
            optimizer: d.optimizer,
        }
    }
}

impl TrainSettings {
    fn into_config(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            epochs: self.epochs,
            batch_size: self.batch_size,
            weight_decay: self.weight_decay,
            dropout_rate: self.dropout_rate,
            seed,
            optimizer: self.optimizer,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KindTag {
    Probe,
    Attention,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttentionSettings {
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_layers: usize,
    pub seq_chunks: usize,
}

impl Default for AttentionSettings {
    fn default() -> Self {
        let d = AttentionConfig::default();
        AttentionSettings {
            embed_dim: d.embed_dim,
            num_heads: d.num_heads,
            num_layers: d.num_layers,
            seq_chunks: d.seq_chunks,
        }
    }
}

fn head_kind(kind: KindTag, attention: &AttentionSettings) -> HeadKind {
    match kind {
        KindTag::Probe => HeadKind::Probe,
        KindTag::Attention => HeadKind::Attention(AttentionConfig {
            embed_dim: attention.embed_dim,
            num_heads: attention.num_heads,
            num_layers: attention.num_layers,
            seq_chunks: attention.seq_chunks,
        }),
    }
}

fn default_t_cap() -> usize {
    crate::dataset::DEFAULT_T_CAP
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    pub dataset: PathBuf,
    #[serde(default = "default_kind")]
    pub kind: KindTag,
    #[serde(default)]
    pub attention: AttentionSettings,
    #[serde(default = "default_t_cap")]
    pub t_cap: usize,
    #[serde(default)]
    pub config: TrainSettings,
}

fn default_kind() -> KindTag {
    KindTag::Probe
}

fn default_k_cv() -> usize {
    5
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrateSection {
    pub dataset: PathBuf,
    #[serde(default = "default_kind")]
    pub kind: KindTag,
    #[serde(default)]
    pub attention: AttentionSettings,
    #[serde(default = "default_t_cap")]
    pub t_cap: usize,
    #[serde(default = "default_k_cv")]
    pub k_cv: usize,
    #[serde(default)]
    pub objective: Objective,
    #[serde(default)]
    pub config: TrainSettings,
    #[serde(default)]
    pub grid: Option<GridSection>,
}

/// Grid candidates; "inf" / "-inf" strings denote unbounded thresholds.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    #[serde(default)]
    pub c_u: Option<Vec<NumOrInf>>,
    #[serde(default)]
    pub c_b: Option<Vec<NumOrInf>>,
    #[serde(default)]
    pub t_max: Option<Vec<usize>>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(untagged)]
pub enum NumOrInf {
    Num(f64),
    Tag(String),
}

impl NumOrInf {
    fn value(&self) -> Result<f64> {
        match self {
            NumOrInf::Num(v) => Ok(*v),
            NumOrInf::Tag(s) => match s.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                other => Err(Error::Config(format!(
                    "grid value {other:?} is neither a number nor \"inf\"/\"-inf\""
                ))),
            },
        }
    }
}

impl GridSection {
    fn to_spec(&self) -> Result<GridSpec> {
        let convert = |list: &Option<Vec<NumOrInf>>| -> Result<Option<Vec<f64>>> {
            list.as_ref()
                .map(|xs| xs.iter().map(NumOrInf::value).collect())
                .transpose()
        };
        Ok(GridSpec {
            upper: convert(&self.c_u)?,
            lower: convert(&self.c_b)?,
            token_caps: self.t_max.clone(),
        })
    }
}

fn default_delta() -> f64 {
    0.0
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    pub train_dataset: PathBuf,
    pub test_dataset: PathBuf,
    #[serde(default = "default_methods")]
    pub methods: Vec<String>,
    #[serde(default)]
    pub head: Option<PathBuf>,
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default = "default_t_cap")]
    pub t_cap: usize,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default)]
    pub p_true: PTrueConfig,
    #[serde(default)]
    pub config: TrainSettings,
}

fn default_methods() -> Vec<String> {
    ALL_METHODS.iter().map(|m| m.to_string()).collect()
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KlSection {
    pub dataset: PathBuf,
    #[serde(default = "default_t_cap")]
    pub t_cap: usize,
    #[serde(default)]
    pub by_group: bool,
    #[serde(default)]
    pub direction: KlDirection,
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Generate a synthetic dataset directory plus its ground truth.
pub fn cmd_synth(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let section = config.synth.clone().unwrap_or_default();
    let synth_config = SynthConfig {
        vocab_size: section.vocab_size,
        num_sentences: section.num_sentences,
        tokens_per_sentence: section.tokens_per_sentence,
        onset: section.onset,
        signal_strength: section.signal_strength,
        noise_scale: section.noise_scale,
        positive_fraction: section.positive_fraction,
        seed: seeding::derive(seed, "synth"),
    };
    let (meta, records) = synthgen::generate(&synth_config)?;
    save_dataset(&meta, &records, out)?;
    let truth = synthgen::describe(&synth_config);
    let mut json = serde_json::to_string_pretty(&truth).expect("ground truth serializes");
    json.push('\n');
    write_text(&out.join("ground_truth.json"), &json)?;
    log::info!(
        "wrote {} sentences (vocab {}) to {}",
        records.len(),
        meta.vocab_size,
        out.display()
    );
    Ok(())
}

/// Train a reliability head and write `head.bin` plus the loss history.
pub fn cmd_train(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let section = config
        .train
        .as_ref()
        .ok_or_else(|| Error::Config("config has no \"train\" section".into()))?;
    let (_meta, records) = load_dataset(&section.dataset)?;
    let examples = build_token_dataset(&records, section.t_cap, seeding::derive(seed, "train-data"));
    let train_config = section.config.into_config(seeding::derive(seed, "train"));
    let kind = head_kind(section.kind, &section.attention);
    let trained = train_reliability_head(&examples, &train_config, &kind)?;

    save_head(&trained.head, &out.join("head.bin"))?;
    let mut csv = String::from("epoch,loss\n");
    for (epoch, loss) in trained.loss_history.iter().enumerate() {
        csv.push_str(&format!("{epoch},{loss}\n"));
    }
    write_text(&out.join("train_loss.csv"), &csv)?;
    log::info!(
        "trained {} head on {} examples for {} epochs",
        trained.head.kind_tag(),
        examples.len(),
        train_config.epochs
    );
    Ok(())
}

/// Run cross-fit calibration and write `calibration.json` plus the final
/// retrained `head.bin`.
pub fn cmd_calibrate(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let section = config
        .calibrate
        .as_ref()
        .ok_or_else(|| Error::Config("config has no \"calibrate\" section".into()))?;
    let (_meta, records) = load_dataset(&section.dataset)?;
    let train_config = section.config.into_config(seeding::derive(seed, "train"));
    let kind = head_kind(section.kind, &section.attention);
    let grid = section.grid.as_ref().map(GridSection::to_spec).transpose()?;
    let (trained, params, table) = calibrate(
        &records,
        section.k_cv,
        &train_config,
        &kind,
        section.t_cap,
        section.objective,
        grid.as_ref(),
    )?;
    for (fold, n, auc, acc) in fold_summaries(&table) {
        log::info!(
            "oof fold {fold}: {n} sentences, auroc {}, accuracy {}",
            auc.map_or("n/a".into(), |v| format!("{v:.4}")),
            acc.map_or("n/a".into(), |v| format!("{v:.4}")),
        );
    }
    save_head(&trained.head, &out.join("head.bin"))?;
    save_calibration(&params, &out.join("calibration.json"))?;
    log::info!(
        "calibration: c_star {:.6}, thresholds ({}, {}), t_max {}",
        params.temperature,
        params.lower_threshold,
        params.upper_threshold,
        params.token_cap
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct MetricsRow {
    method: String,
    split: String,
    accuracy: f64,
    f1: f64,
    auroc: f64,
    threshold: f64,
}

fn metrics_from_decisions(
    method: &str,
    labels: &[u8],
    decisions: &[u8],
    oriented_scores: Vec<f64>,
    threshold: f64,
) -> Result<MetricsRow> {
    let auc = auroc(&ScoredSet::new(oriented_scores, labels.to_vec())?)?;
    Ok(MetricsRow {
        method: method.into(),
        split: "test".into(),
        accuracy: accuracy(decisions, labels)?,
        f1: f1(decisions, labels),
        auroc: auc,
        threshold,
    })
}

/// Score a per-record baseline on train/test, derive the Youden cutoff from
/// the training scores, and decide on the oriented test scores.
fn run_score_baseline(
    method: &str,
    train: &[SentenceRecord],
    test: &[SentenceRecord],
    score: impl Fn(&SentenceRecord) -> Result<f64> + Sync,
) -> Result<(Vec<DetectionResult>, MetricsRow)> {
    let orient: f64 = if baselines::higher_score_means_reliable(method) {
        1.0
    } else {
        -1.0
    };
    let train_scores: Vec<f64> = train
        .par_iter()
        .map(|r| score(r).map(|s| s * orient))
        .collect::<Result<_>>()?;
    let train_labels: Vec<u8> = train.iter().map(|r| r.label).collect();
    let threshold = youden_cutoff(&ScoredSet::new(train_scores, train_labels)?)?;

    let raw_scores: Vec<f64> = test.par_iter().map(&score).collect::<Result<_>>()?;
    let oriented: Vec<f64> = raw_scores.iter().map(|s| s * orient).collect();
    let decisions: Vec<u8> = oriented.iter().map(|s| u8::from(*s >= threshold)).collect();
    let results: Vec<DetectionResult> = test
        .iter()
        .zip(raw_scores.iter().zip(&decisions))
        .map(|(r, (score, decision))| DetectionResult {
            sentence_id: r.id.clone(),
            method: method.into(),
            score: *score,
            decision: Some(*decision),
            tau: None,
        })
        .collect();
    let labels: Vec<u8> = test.iter().map(|r| r.label).collect();
    let row = metrics_from_decisions(method, &labels, &decisions, oriented, threshold)?;
    Ok((results, row))
}

/// Evaluate the selected methods on the test split and write
/// `results.jsonl` plus `metrics.json`.
pub fn cmd_eval(config: &RunConfig, seed: u64, out: &Path) -> Result<()> {
    let section = config
        .eval
        .as_ref()
        .ok_or_else(|| Error::Config("config has no \"eval\" section".into()))?;
    for method in &section.methods {
        if !ALL_METHODS.contains(&method.as_str()) {
            return Err(Error::Config(format!(
                "unknown method {method:?}; expected one of {ALL_METHODS:?}"
            )));
        }
    }
    let (train_meta, train_records) = load_dataset(&section.train_dataset)?;
    let (test_meta, test_records) = load_dataset(&section.test_dataset)?;
    if train_meta.vocab_size != test_meta.vocab_size {
        return Err(Error::InvalidMeta(format!(
            "train vocab_size {} does not match test vocab_size {}",
            train_meta.vocab_size, test_meta.vocab_size
        )));
    }
    let test_labels: Vec<u8> = test_records.iter().map(|r| r.label).collect();

    let head_path = section.head.clone().unwrap_or_else(|| out.join("head.bin"));
    let calibration_path = section
        .calibration
        .clone()
        .unwrap_or_else(|| out.join("calibration.json"));
    let needs_head = section
        .methods
        .iter()
        .any(|m| m == METHOD_MTRE || m == METHOD_MTRE_TAU);
    let head = if needs_head {
        if !head_path.exists() {
            return Err(Error::Config(format!(
                "methods mtre/mtre_tau require a head file; {} does not exist (run `mtre train` or `mtre calibrate` first)",
                head_path.display()
            )));
        }
        Some(load_head(&head_path, Some(test_meta.vocab_size))?)
    } else {
        None
    };
    let calibration = if calibration_path.exists() {
        Some(load_calibration(&calibration_path)?)
    } else {
        None
    };
    if section.methods.iter().any(|m| m == METHOD_MTRE_TAU) && calibration.is_none() {
        return Err(Error::Config(format!(
            "method mtre_tau requires a calibration file; {} does not exist (run `mtre calibrate` first)",
            calibration_path.display()
        )));
    }

    let mut all_results: Vec<DetectionResult> = Vec::new();
    let mut rows: Vec<MetricsRow> = Vec::new();
    for method in &section.methods {
        let (results, row) = match method.as_str() {
            METHOD_MTRE => {
                let head = head.as_ref().expect("checked above");
                let temperature = calibration.as_ref().map_or(1.0, |p| p.temperature);
                let outcome: Vec<(DetectionResult, _)> = test_records
                    .par_iter()
                    .map(|r| classify_sentence(head, r, section.t_cap, temperature, section.delta))
                    .collect::<Result<_>>()?;
                let results: Vec<DetectionResult> =
                    outcome.into_iter().map(|(res, _)| res).collect();
                let decisions: Vec<u8> = results.iter().map(|r| r.decision.unwrap()).collect();
                let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
                let row = metrics_from_decisions(
                    method,
                    &test_labels,
                    &decisions,
                    scores,
                    section.delta,
                )?;
                (results, row)
            }
            METHOD_MTRE_TAU => {
                let head = head.as_ref().expect("checked above");
                let params = calibration.as_ref().expect("checked above");
                let outcome: Vec<(DetectionResult, _)> = test_records
                    .par_iter()
                    .map(|r| classify_sentence_stopped(head, r, section.t_cap, params))
                    .collect::<Result<_>>()?;
                let results: Vec<DetectionResult> =
                    outcome.into_iter().map(|(res, _)| res).collect();
                let decisions: Vec<u8> = results.iter().map(|r| r.decision.unwrap()).collect();
                let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
                let row =
                    metrics_from_decisions(method, &test_labels, &decisions, scores, 0.0)?;
                (results, row)
            }
            baselines::METHOD_SEQ_LOGPROB => run_score_baseline(
                method,
                &train_records,
                &test_records,
                |r| Ok(seq_logprob(r, section.t_cap)),
            )?,
            baselines::METHOD_TOKEN_SAR => run_score_baseline(
                method,
                &train_records,
                &test_records,
                |r| token_sar(r, section.t_cap),
            )?,
            baselines::METHOD_P_TRUE => {
                let p_true = section.p_true.clone();
                p_true.validate(test_meta.vocab_size)?;
                run_score_baseline(method, &train_records, &test_records, |r| {
                    p_true_score(r, &p_true)
                })?
            }
            baselines::METHOD_FIRST_TOKEN_PROBE => {
                let probe_config = section.config.into_config(seeding::derive(seed, "probe"));
                let (results, threshold) =
                    first_token_probe(&train_records, &test_records, &probe_config)?;
                let decisions: Vec<u8> = results.iter().map(|r| r.decision.unwrap()).collect();
                let scores: Vec<f64> = results.iter().map(|r| r.score).collect();
                let row = metrics_from_decisions(
                    method,
                    &test_labels,
                    &decisions,
                    scores,
                    threshold,
                )?;
                (results, row)
            }
            _ => unreachable!("method names validated above"),
        };
        all_results.extend(results);
        rows.push(row);
    }

    let mut jsonl = String::new();
    for result in &all_results {
        jsonl.push_str(&serde_json::to_string(result).expect("result serializes"));
        jsonl.push('\n');
    }
    write_text(&out.join("results.jsonl"), &jsonl)?;
    let mut metrics_json = serde_json::to_string_pretty(&rows).expect("rows serialize");
    metrics_json.push('\n');
    write_text(&out.join("metrics.json"), &metrics_json)?;

    println!(
        "{:<16} {:>9} {:>9} {:>9} {:>12}",
        "method", "accuracy", "f1", "auroc", "threshold"
    );
    for row in &rows {
        println!(
            "{:<16} {:>9.4} {:>9.4} {:>9.4} {:>12.6}",
            row.method, row.accuracy, row.f1, row.auroc, row.threshold
        );
    }
    Ok(())
}

/// Compute positionwise KL curves and write `kl_curve.csv`.
pub fn cmd_kl(config: &RunConfig, _seed: u64, out: &Path) -> Result<()> {
    let section = config
        .kl
        .as_ref()
        .ok_or_else(|| Error::Config("config has no \"kl\" section".into()))?;
    let (_meta, mut records) = load_dataset(&section.dataset)?;
    if section.by_group {
        if records.iter().all(|r| r.group.is_none()) {
            return Err(Error::Degenerate(
                "group split requested but no record carries a group tag".into(),
            ));
        }
    } else {
        // Pool everything into the implicit group.
        for r in &mut records {
            r.group = None;
        }
    }
    let curves = positionwise_kl_curve(&records, section.t_cap, section.direction)?;
    let mut csv = String::from("group,t,kl_mean,pair_count\n");
    for curve in &curves {
        for t in 0..section.t_cap {
            let value = curve.values[t].map_or(String::new(), |v| v.to_string());
            csv.push_str(&format!(
                "{},{},{},{}\n",
                curve.group_tag,
                t + 1,
                value,
                curve.pair_counts[t]
            ));
        }
    }
    write_text(&out.join("kl_curve.csv"), &csv)?;
    log::info!("wrote {} curves to {}", curves.len(), out.join("kl_curve.csv").display());
    Ok(())
}
