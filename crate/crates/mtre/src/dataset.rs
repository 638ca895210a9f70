//! On-disk logit-sequence container and training-set preparation.
//!
//! A dataset directory holds three files:
//! - `meta.json` — vocabulary size, token cap, value encoding.
//! - `manifest.jsonl` — one sentence record per line with its byte region.
//! - `logits.bin` — concatenated float32 little-endian rows, token-major.

use std::collections::{HashMap, HashSet};
use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seeding;

/// Mask threshold: a logit row is padding when its L2 norm is at most this.
pub const DEFAULT_EPSILON: f64 = 1e-8;
/// Default cap on the number of leading tokens consumed per sentence.
pub const DEFAULT_T_CAP: usize = 10;

const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ValueEncoding {
    F32le,
}

/// Container-level metadata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetMeta {
    pub vocab_size: usize,
    pub max_tokens: usize,
    pub value_encoding: ValueEncoding,
}

impl DatasetMeta {
    pub fn new(vocab_size: usize, max_tokens: usize) -> Result<Self> {
        if vocab_size < 2 {
            return Err(Error::InvalidMeta(format!(
                "vocab_size must be at least 2, got {vocab_size}"
            )));
        }
        if max_tokens == 0 {
            return Err(Error::InvalidMeta("max_tokens must be at least 1".into()));
        }
        Ok(DatasetMeta {
            vocab_size,
            max_tokens,
            value_encoding: ValueEncoding::F32le,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct MetaFile {
    vocab_size: usize,
    max_tokens: usize,
    value_encoding: ValueEncoding,
    format_version: u32,
}

/// One model response: per-token logit rows, chosen token ids, a binary
/// reliability label (1 = truthful, 0 = hallucinated), and grouping tags.
#[derive(Debug, Clone, PartialEq)]
pub struct SentenceRecord {
    pub id: String,
    pub label: u8,
    pub group: Option<String>,
    pub token_ids: Vec<u32>,
    pub relevance: Option<Vec<f64>>,
    logits: Vec<f32>,
    vocab_size: usize,
}

impl SentenceRecord {
    /// Build a record, validating every per-record invariant. `logits` is
    /// row-major, `num_tokens x vocab_size`.
    pub fn new(
        id: impl Into<String>,
        label: u8,
        group: Option<String>,
        token_ids: Vec<u32>,
        relevance: Option<Vec<f64>>,
        logits: Vec<f32>,
        vocab_size: usize,
    ) -> Result<Self> {
        let id = id.into();
        if label > 1 {
            return Err(Error::record(&id, format!("label must be 0 or 1, got {label}")));
        }
        if vocab_size < 2 {
            return Err(Error::record(&id, "vocab_size must be at least 2"));
        }
        if logits.len() % vocab_size != 0 {
            return Err(Error::record(
                &id,
                format!(
                    "logit payload of {} values is not a multiple of vocab_size {vocab_size}",
                    logits.len()
                ),
            ));
        }
        let num_tokens = logits.len() / vocab_size;
        if num_tokens == 0 {
            return Err(Error::record(&id, "sentence must contain at least one token"));
        }
        if token_ids.len() != num_tokens {
            return Err(Error::record(
                &id,
                format!(
                    "token_ids length {} does not match {num_tokens} logit rows",
                    token_ids.len()
                ),
            ));
        }
        if let Some(bad) = token_ids.iter().find(|&&t| t as usize >= vocab_size) {
            return Err(Error::record(
                &id,
                format!("token id {bad} outside vocabulary of size {vocab_size}"),
            ));
        }
        if let Some(rel) = &relevance {
            if rel.len() != num_tokens {
                return Err(Error::record(
                    &id,
                    format!("relevance length {} does not match {num_tokens} tokens", rel.len()),
                ));
            }
            if rel.iter().any(|r| !r.is_finite() || *r < 0.0) {
                return Err(Error::record(&id, "relevance entries must be finite and non-negative"));
            }
            if !rel.iter().any(|r| *r > 0.0) {
                return Err(Error::record(&id, "relevance must have at least one positive entry"));
            }
        }
        if let Some(pos) = logits.iter().position(|v| !v.is_finite()) {
            return Err(Error::record(
                &id,
                format!("non-finite logit at token {}", pos / vocab_size + 1),
            ));
        }
        Ok(SentenceRecord {
            id,
            label,
            group,
            token_ids,
            relevance,
            logits,
            vocab_size,
        })
    }

    pub fn num_tokens(&self) -> usize {
        self.logits.len() / self.vocab_size
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    /// Logit row for 0-based token index `t`.
    pub fn logit_row(&self, t: usize) -> &[f32] {
        &self.logits[t * self.vocab_size..(t + 1) * self.vocab_size]
    }

    pub fn logit_payload(&self) -> &[f32] {
        &self.logits
    }

    fn validate_against(&self, meta: &DatasetMeta) -> Result<()> {
        if self.vocab_size != meta.vocab_size {
            return Err(Error::record(
                &self.id,
                format!(
                    "vocab_size {} does not match dataset vocab_size {}",
                    self.vocab_size, meta.vocab_size
                ),
            ));
        }
        if self.num_tokens() > meta.max_tokens {
            return Err(Error::record(
                &self.id,
                format!(
                    "{} tokens exceeds dataset max_tokens {}",
                    self.num_tokens(),
                    meta.max_tokens
                ),
            ));
        }
        Ok(())
    }
}

/// One (logit-vector, sentence-label) training pair.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenExample {
    pub features: Vec<f32>,
    pub label: u8,
    pub sentence_id: String,
    /// 1-based token position within the originating sentence.
    pub position: usize,
}

/// Assignment of every sentence to one of `k_cv` stratified folds.
#[derive(Debug, Clone)]
pub struct FoldAssignment {
    fold_of: HashMap<String, usize>,
    pub k_cv: usize,
    pub seed: u64,
}

impl FoldAssignment {
    /// Build directly from an explicit mapping. Used by tests to force
    /// degenerate assignments the stratified splitter would never produce.
    pub fn from_map(fold_of: HashMap<String, usize>, k_cv: usize, seed: u64) -> Result<Self> {
        if k_cv < 2 {
            return Err(Error::InvalidParam(format!("k_cv must be at least 2, got {k_cv}")));
        }
        if let Some((id, f)) = fold_of.iter().find(|(_, f)| **f >= k_cv) {
            return Err(Error::InvalidParam(format!(
                "sentence {id} assigned to fold {f}, but k_cv is {k_cv}"
            )));
        }
        Ok(FoldAssignment { fold_of, k_cv, seed })
    }

    pub fn fold_of(&self, sentence_id: &str) -> Option<usize> {
        self.fold_of.get(sentence_id).copied()
    }

    pub fn len(&self) -> usize {
        self.fold_of.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fold_of.is_empty()
    }
}

#[derive(Serialize, Deserialize)]
struct ManifestRow {
    id: String,
    label: u8,
    group: Option<String>,
    num_tokens: usize,
    byte_offset: u64,
    token_ids: Vec<u32>,
    relevance: Option<Vec<f64>>,
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

/// Load a dataset directory, validating every record invariant. Iteration
/// order equals manifest order.
pub fn load_dataset(root: &Path) -> Result<(DatasetMeta, Vec<SentenceRecord>)> {
    let meta_bytes = read_file(&root.join("meta.json"))?;
    let meta_file: MetaFile = serde_json::from_slice(&meta_bytes)
        .map_err(|e| Error::InvalidMeta(format!("{}: {e}", root.join("meta.json").display())))?;
    if meta_file.format_version != FORMAT_VERSION {
        return Err(Error::InvalidMeta(format!(
            "unsupported format_version {}",
            meta_file.format_version
        )));
    }
    let meta = DatasetMeta::new(meta_file.vocab_size, meta_file.max_tokens)?;

    let payload = read_file(&root.join("logits.bin"))?;
    let manifest_bytes = read_file(&root.join("manifest.jsonl"))?;
    let manifest_text = String::from_utf8(manifest_bytes)
        .map_err(|_| Error::InvalidMeta("manifest.jsonl is not valid UTF-8".into()))?;

    let mut records = Vec::new();
    let mut regions: Vec<(u64, u64, String)> = Vec::new();
    let mut seen_ids = HashSet::new();
    for (lineno, line) in manifest_text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let row: ManifestRow = serde_json::from_str(line).map_err(|e| Error::Manifest {
            line: lineno + 1,
            reason: e.to_string(),
        })?;
        if !seen_ids.insert(row.id.clone()) {
            return Err(Error::record(&row.id, "duplicate sentence id"));
        }
        let region_len = (row.num_tokens as u64) * (meta.vocab_size as u64) * 4;
        let end = row.byte_offset.checked_add(region_len).ok_or_else(|| {
            Error::record(&row.id, format!("byte region overflows at offset {}", row.byte_offset))
        })?;
        if end > payload.len() as u64 {
            return Err(Error::record(
                &row.id,
                format!(
                    "byte region [{}, {end}) exceeds logits.bin length {} \
                     (declared num_tokens={} x vocab_size={})",
                    row.byte_offset,
                    payload.len(),
                    row.num_tokens,
                    meta.vocab_size
                ),
            ));
        }
        regions.push((row.byte_offset, end, row.id.clone()));

        let raw = &payload[row.byte_offset as usize..end as usize];
        let mut logits = Vec::with_capacity(raw.len() / 4);
        for chunk in raw.chunks_exact(4) {
            logits.push(f32::from_le_bytes(chunk.try_into().unwrap()));
        }
        let record = SentenceRecord::new(
            row.id,
            row.label,
            row.group,
            row.token_ids,
            row.relevance,
            logits,
            meta.vocab_size,
        )?;
        record.validate_against(&meta)?;
        records.push(record);
    }

    regions.sort_by_key(|r| r.0);
    for pair in regions.windows(2) {
        if pair[1].0 < pair[0].1 {
            return Err(Error::record(
                &pair[1].2,
                format!(
                    "byte region starting at {} overlaps the region ending at {}",
                    pair[1].0, pair[0].1
                ),
            ));
        }
    }

    Ok((meta, records))
}

/// Write a dataset directory such that `load_dataset` is an exact inverse.
/// All invariants are checked before any file is written.
pub fn save_dataset(meta: &DatasetMeta, records: &[SentenceRecord], root: &Path) -> Result<()> {
    let mut seen_ids = HashSet::new();
    for record in records {
        record.validate_against(meta)?;
        if !seen_ids.insert(record.id.as_str()) {
            return Err(Error::record(&record.id, "duplicate sentence id"));
        }
    }

    fs::create_dir_all(root).map_err(|e| Error::io(root, e))?;

    let meta_file = MetaFile {
        vocab_size: meta.vocab_size,
        max_tokens: meta.max_tokens,
        value_encoding: meta.value_encoding,
        format_version: FORMAT_VERSION,
    };
    let meta_path = root.join("meta.json");
    let mut meta_json = serde_json::to_string_pretty(&meta_file).expect("meta serializes");
    meta_json.push('\n');
    fs::write(&meta_path, meta_json).map_err(|e| Error::io(&meta_path, e))?;

    let mut payload: Vec<u8> = Vec::new();
    let mut manifest = String::new();
    for record in records {
        let byte_offset = payload.len() as u64;
        for v in record.logit_payload() {
            payload.extend_from_slice(&v.to_le_bytes());
        }
        let row = ManifestRow {
            id: record.id.clone(),
            label: record.label,
            group: record.group.clone(),
            num_tokens: record.num_tokens(),
            byte_offset,
            token_ids: record.token_ids.clone(),
            relevance: record.relevance.clone(),
        };
        manifest.push_str(&serde_json::to_string(&row).expect("manifest row serializes"));
        manifest.push('\n');
    }

    let bin_path = root.join("logits.bin");
    let mut f = fs::File::create(&bin_path).map_err(|e| Error::io(&bin_path, e))?;
    f.write_all(&payload).map_err(|e| Error::io(&bin_path, e))?;
    let manifest_path = root.join("manifest.jsonl");
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

/// Flatten sentences into token-level training examples: each of the first
/// `min(T_i, t_cap)` tokens inherits its sentence label. The output order is
/// a seed-deterministic shuffle.
pub fn build_token_dataset(
    records: &[SentenceRecord],
    t_cap: usize,
    seed: u64,
) -> Vec<TokenExample> {
    build_token_dataset_from_refs(records.iter(), t_cap, seed)
}

pub(crate) fn build_token_dataset_from_refs<'a>(
    records: impl Iterator<Item = &'a SentenceRecord>,
    t_cap: usize,
    seed: u64,
) -> Vec<TokenExample> {
    assert!(t_cap >= 1, "t_cap must be at least 1");
    let mut examples = Vec::new();
    for record in records {
        for t in 0..record.num_tokens().min(t_cap) {
            examples.push(TokenExample {
                features: record.logit_row(t).to_vec(),
                label: record.label,
                sentence_id: record.id.clone(),
                position: t + 1,
            });
        }
    }
    let mut rng = seeding::rng_from(seed);
    examples.shuffle(&mut rng);
    examples
}

/// Padding mask: 1 where the logit row's L2 norm strictly exceeds `epsilon`.
pub fn pad_mask(record: &SentenceRecord, epsilon: f64) -> Vec<bool> {
    assert!(epsilon > 0.0, "epsilon must be positive");
    (0..record.num_tokens())
        .map(|t| {
            let norm2: f64 = record
                .logit_row(t)
                .iter()
                .map(|v| {
                    let v = f64::from(*v);
                    v * v
                })
                .sum();
            norm2.sqrt() > epsilon
        })
        .collect()
}

/// Stratified fold split: per-fold class counts differ from exact
/// proportionality by at most one.
pub fn split_stratified(
    records: &[SentenceRecord],
    k_cv: usize,
    seed: u64,
) -> Result<FoldAssignment> {
    if k_cv < 2 {
        return Err(Error::InvalidParam(format!("k_cv must be at least 2, got {k_cv}")));
    }
    let mut fold_of = HashMap::new();
    for label in [0u8, 1u8] {
        let mut members: Vec<&SentenceRecord> =
            records.iter().filter(|r| r.label == label).collect();
        if members.len() < k_cv {
            return Err(Error::Degenerate(format!(
                "label {label} has {} sentences, need at least {k_cv} to populate every fold",
                members.len()
            )));
        }
        let mut rng = seeding::rng_from(seeding::derive_indexed(seed, "stratify", u64::from(label)));
        members.shuffle(&mut rng);
        for (i, record) in members.iter().enumerate() {
            fold_of.insert(record.id.clone(), i % k_cv);
        }
    }
    Ok(FoldAssignment { fold_of, k_cv, seed })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::TempDir;

    fn record(id: &str, label: u8, rows: &[&[f32]], vocab: usize) -> SentenceRecord {
        let logits: Vec<f32> = rows.iter().flat_map(|r| r.iter().copied()).collect();
        let token_ids = vec![0u32; rows.len()];
        SentenceRecord::new(id, label, None, token_ids, None, logits, vocab).unwrap()
    }

    fn sample_records(vocab: usize) -> (DatasetMeta, Vec<SentenceRecord>) {
        let meta = DatasetMeta::new(vocab, 8).unwrap();
        let r1 = SentenceRecord::new(
            "a",
            1,
            Some("pos".into()),
            vec![0, 1],
            Some(vec![0.5, 1.5]),
            vec![0.25, -1.0, 3.5, 0.125, 2.0, -0.5],
            vocab,
        )
        .unwrap();
        let r2 = SentenceRecord::new(
            "b",
            0,
            None,
            vec![2],
            None,
            vec![1.0, 2.0, -3.0],
            vocab,
        )
        .unwrap();
        let r3 = SentenceRecord::new(
            "c",
            1,
            Some("neg".into()),
            vec![1, 1, 0],
            None,
            vec![0.0; 9],
            vocab,
        )
        .unwrap();
        (meta, vec![r1, r2, r3])
    }

    #[test]
    fn round_trip_preserves_records() {
        let (meta, records) = sample_records(3);
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir.path()).unwrap();
        let (meta2, loaded) = load_dataset(dir.path()).unwrap();
        assert_eq!(meta, meta2);
        assert_eq!(records, loaded);
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let (meta, records) = sample_records(3);
        let dir1 = TempDir::new().unwrap();
        let dir2 = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir1.path()).unwrap();
        let (meta2, loaded) = load_dataset(dir1.path()).unwrap();
        save_dataset(&meta2, &loaded, dir2.path()).unwrap();
        let b1 = fs::read(dir1.path().join("logits.bin")).unwrap();
        let b2 = fs::read(dir2.path().join("logits.bin")).unwrap();
        assert_eq!(b1, b2);
    }

    #[test]
    fn empty_dataset_round_trips() {
        let meta = DatasetMeta::new(4, 2).unwrap();
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &[], dir.path()).unwrap();
        let (_, loaded) = load_dataset(dir.path()).unwrap();
        assert!(loaded.is_empty());
    }

    #[test]
    fn oversized_record_rejected_before_write() {
        let meta = DatasetMeta::new(2, 1).unwrap();
        let r = record("long", 1, &[&[1.0, 0.0], &[0.0, 1.0]], 2);
        let dir = TempDir::new().unwrap();
        let root = dir.path().join("ds");
        let err = save_dataset(&meta, &[r], &root).unwrap_err();
        assert!(err.to_string().contains("long"));
        assert!(!root.exists(), "no files may be written on validation failure");
    }

    #[test]
    fn truncated_region_names_sentence() {
        let (meta, records) = sample_records(3);
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir.path()).unwrap();
        // Claim an extra token for the last sentence; its region now runs
        // past the end of logits.bin.
        let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        let patched = manifest.replace(
            r#""id":"c","label":1,"group":"neg","num_tokens":3"#,
            r#""id":"c","label":1,"group":"neg","num_tokens":4"#,
        );
        assert_ne!(manifest, patched);
        // Keep token_ids consistent with the declared length.
        let patched = patched.replace(r#""token_ids":[1,1,0]"#, r#""token_ids":[1,1,0,0]"#);
        fs::write(dir.path().join("manifest.jsonl"), patched).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('c') && msg.contains("exceeds"), "unexpected error: {msg}");
    }

    #[test]
    fn nan_in_payload_names_sentence_and_token() {
        let (meta, records) = sample_records(3);
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir.path()).unwrap();
        // Sentence "c" starts at byte 9*4 (after 6 + 3 floats); poison its
        // second token's first value.
        let mut payload = fs::read(dir.path().join("logits.bin")).unwrap();
        let idx = (9 + 3) * 4;
        payload[idx..idx + 4].copy_from_slice(&f32::NAN.to_le_bytes());
        fs::write(dir.path().join("logits.bin"), payload).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('c') && msg.contains("token 2"), "unexpected error: {msg}");
    }

    #[test]
    fn overlapping_regions_rejected() {
        let (meta, records) = sample_records(3);
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir.path()).unwrap();
        let manifest = fs::read_to_string(dir.path().join("manifest.jsonl")).unwrap();
        let patched = manifest.replace(r#""byte_offset":24"#, r#""byte_offset":20"#);
        assert_ne!(manifest, patched);
        fs::write(dir.path().join("manifest.jsonl"), patched).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("overlaps"));
    }

    #[test]
    fn missing_file_is_an_error() {
        let dir = TempDir::new().unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn unknown_encoding_rejected() {
        let (meta, records) = sample_records(3);
        let dir = TempDir::new().unwrap();
        save_dataset(&meta, &records, dir.path()).unwrap();
        let meta_text = fs::read_to_string(dir.path().join("meta.json")).unwrap();
        fs::write(dir.path().join("meta.json"), meta_text.replace("f32le", "f64be")).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(matches!(err, Error::InvalidMeta(_)));
    }

    #[test]
    fn out_of_range_token_id_rejected() {
        let err = SentenceRecord::new("x", 1, None, vec![5], None, vec![0.0, 0.0], 2).unwrap_err();
        assert!(err.to_string().contains("token id 5"));
    }

    #[test]
    fn token_dataset_flattens_with_label_inheritance() {
        let r = record("s", 1, &[&[1.0, 0.0], &[0.0, 1.0], &[0.5, 0.5]], 2);
        let examples = build_token_dataset(&[r], 10, 7);
        assert_eq!(examples.len(), 3);
        assert!(examples.iter().all(|e| e.label == 1));
        let mut positions: Vec<usize> = examples.iter().map(|e| e.position).collect();
        positions.sort_unstable();
        assert_eq!(positions, vec![1, 2, 3]);
    }

    #[test]
    fn token_dataset_respects_cap() {
        let long = record("l", 1, &vec![[0.5f32, 0.5].as_slice(); 12], 2);
        let short = record("s", 0, &vec![[0.5f32, 0.5].as_slice(); 4], 2);
        let examples = build_token_dataset(&[long, short], 10, 7);
        assert_eq!(examples.len(), 14);
    }

    #[test]
    fn token_dataset_shuffle_is_seeded() {
        let (_, records) = sample_records(3);
        let a = build_token_dataset(&records, 10, 1);
        let b = build_token_dataset(&records, 10, 1);
        let c = build_token_dataset(&records, 10, 2);
        assert_eq!(a, b);
        let key = |e: &TokenExample| (e.sentence_id.clone(), e.position);
        let mut ka: Vec<_> = a.iter().map(key).collect();
        let mut kc: Vec<_> = c.iter().map(key).collect();
        assert_ne!(ka, kc, "different seeds should permute the output");
        ka.sort();
        kc.sort();
        assert_eq!(ka, kc, "same multiset under any seed");
    }

    #[test]
    fn pad_mask_matches_definition() {
        let r = record("m", 0, &[&[0.0, 0.0], &[1.0, 0.0], &[3.0, 4.0]], 2);
        let mask = pad_mask(&r, 1e-8);
        assert_eq!(mask, vec![false, true, true]);
        // Norm exactly epsilon stays masked (strict inequality).
        let exact = pad_mask(&r, 5.0);
        assert_eq!(exact, vec![false, false, false]);
    }

    #[test]
    fn pad_mask_monotone_in_epsilon() {
        let r = record("m", 0, &[&[0.3, -0.1], &[2.0, 1.0], &[0.0, 0.0]], 2);
        let eps = [1e-9, 1e-3, 0.5, 1.0, 5.0];
        for w in eps.windows(2) {
            let loose = pad_mask(&r, w[0]);
            let tight = pad_mask(&r, w[1]);
            for (a, b) in loose.iter().zip(&tight) {
                assert!(*a || !*b, "mask must only turn off as epsilon grows");
            }
        }
    }

    fn labelled_records(n_pos: usize, n_neg: usize) -> Vec<SentenceRecord> {
        (0..n_pos + n_neg)
            .map(|i| {
                record(
                    &format!("r{i}"),
                    u8::from(i < n_pos),
                    &[&[1.0, 2.0]],
                    2,
                )
            })
            .collect()
    }

    #[test]
    fn stratified_split_balances_classes() {
        let records = labelled_records(4, 4);
        let folds = split_stratified(&records, 4, 3).unwrap();
        for fold in 0..4 {
            let (mut pos, mut neg) = (0, 0);
            for r in &records {
                if folds.fold_of(&r.id) == Some(fold) {
                    if r.label == 1 {
                        pos += 1;
                    } else {
                        neg += 1;
                    }
                }
            }
            assert_eq!((pos, neg), (1, 1));
        }
    }

    #[test]
    fn stratified_split_counts_within_one() {
        let records = labelled_records(3, 7);
        let folds = split_stratified(&records, 3, 9).unwrap();
        let mut pos_counts = vec![0usize; 3];
        for r in &records {
            if r.label == 1 {
                pos_counts[folds.fold_of(&r.id).unwrap()] += 1;
            }
        }
        pos_counts.sort_unstable();
        assert_eq!(pos_counts, vec![1, 1, 1]);
    }

    #[test]
    fn stratified_split_is_deterministic() {
        let records = labelled_records(5, 5);
        let a = split_stratified(&records, 2, 11).unwrap();
        let b = split_stratified(&records, 2, 11).unwrap();
        for r in &records {
            assert_eq!(a.fold_of(&r.id), b.fold_of(&r.id));
        }
    }

    #[test]
    fn stratified_split_rejects_sparse_label() {
        let records = labelled_records(1, 5);
        let err = split_stratified(&records, 2, 0).unwrap_err();
        assert!(err.to_string().contains("label 1"));
    }
}
