//! Importers that turn raw clip listings into probe label files.
//!
//! A raw manifest is JSON with a `clips` array and an optional official
//! `split`. TIMIT-style corpora give each clip an audio array, a phoneme
//! sequence and (optionally) its sentence type; command corpora give each
//! clip a word. Outputs are [`LabelsFile`]s whose row order is the order
//! of `clips`, so layer features must be extracted in that same order.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::acoustic::{clip_mean_mfcc, MfccConfig};
use crate::error::{Error, Result};
use crate::model::read_json;
use crate::npy;
use crate::probing::{LabelsFile, ProbeTask, SENTENCE_TYPES};
use crate::seed::indexed_rng;

/// The 39 folded phone classes.
pub const PHONES_39: [&str; 39] = [
    "aa", "ae", "ah", "aw", "ay", "b", "ch", "d", "dh", "dx", "eh", "er", "ey", "f", "g", "hh", "ih", "iy", "jh", "k",
    "l", "m", "n", "ng", "ow", "oy", "p", "r", "s", "sh", "sil", "t", "th", "uh", "uw", "v", "w", "y", "z",
];

/// The 35 keyword classes.
pub const COMMANDS_35: [&str; 35] = [
    "backward", "bed", "bird", "cat", "dog", "down", "eight", "five", "follow", "forward", "four", "go", "happy",
    "house", "learn", "left", "marvin", "nine", "no", "off", "on", "one", "right", "seven", "sheila", "six", "stop",
    "three", "tree", "two", "up", "visual", "wow", "yes", "zero",
];

/// Maps a 61-symbol transcription label to its folded class; `Ok(None)`
/// for the glottal stop, which is dropped.
pub fn fold_phone(label: &str) -> Result<Option<usize>> {
    let lower = label.to_ascii_lowercase();
    let folded = match lower.as_str() {
        "q" => return Ok(None),
        "ao" => "aa",
        "ax" | "ax-h" => "ah",
        "axr" => "er",
        "hv" => "hh",
        "ix" => "ih",
        "el" => "l",
        "em" => "m",
        "en" | "nx" => "n",
        "eng" => "ng",
        "zh" => "sh",
        "ux" => "uw",
        "pcl" | "tcl" | "kcl" | "bcl" | "dcl" | "gcl" | "h#" | "pau" | "epi" => "sil",
        other => other,
    };
    PHONES_39
        .iter()
        .position(|&p| p == folded)
        .map(Some)
        .ok_or_else(|| Error::UnknownLabel {
            label: label.to_string(),
            vocabulary: "the 39-phone set".into(),
        })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorpusKind {
    TimitLike,
    CommandsLike,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawClip {
    pub id: String,
    #[serde(default)]
    pub audio: Option<PathBuf>,
    #[serde(default)]
    pub phonemes: Option<Vec<String>>,
    #[serde(default)]
    pub sentence_type: Option<String>,
    #[serde(default)]
    pub label: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawSplit {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RawManifest {
    #[serde(default)]
    pub sample_rate: Option<f64>,
    pub clips: Vec<RawClip>,
    #[serde(default)]
    pub split: Option<RawSplit>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImportConfig {
    pub test_fraction: f64,
    pub seed: u64,
    pub mfcc: MfccConfig,
}

impl Default for ImportConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            seed: 0,
            mfcc: MfccConfig::default(),
        }
    }
}

/// Sentence type from an explicit field or, failing that, from the
/// utterance name (`sa1`, `sx123`, `si456`).
fn sentence_type(clip: &RawClip) -> Result<usize> {
    let raw = match &clip.sentence_type {
        Some(t) => t.to_ascii_uppercase(),
        None => {
            let name = clip.id.rsplit(['/', '_', '-']).next().unwrap_or(&clip.id);
            name.get(..2).unwrap_or("").to_ascii_uppercase()
        }
    };
    SENTENCE_TYPES
        .iter()
        .position(|&t| t == raw)
        .ok_or_else(|| Error::UnknownLabel {
            label: clip.sentence_type.clone().unwrap_or_else(|| clip.id.clone()),
            vocabulary: "sentence types SA/SX/SI".into(),
        })
}

/// Stratified split: within each stratum, a seeded shuffle sends
/// `round(n · test_fraction)` clips to test.
pub fn stratified_split(strata: &[usize], test_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config("test_fraction must lie in (0, 1)".into()));
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, &s) in strata.iter().enumerate() {
        groups.entry(s).or_default().push(i);
    }
    let (mut train, mut test) = (Vec::new(), Vec::new());
    for (stratum, mut members) in groups {
        members.shuffle(&mut indexed_rng(seed, "corpus/stratified-split", stratum as u64));
        let n = members.len();
        let mut n_test = (n as f64 * test_fraction).round() as usize;
        if n_test == n {
            n_test = n - 1;
        }
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    if train.is_empty() || test.is_empty() {
        return Err(Error::InsufficientData("too few clips for a train/test split".into()));
    }
    Ok((train, test))
}

fn official_split(split: &RawSplit, ids: &[String]) -> Result<(Vec<usize>, Vec<usize>)> {
    let index: BTreeMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (id.as_str(), i)).collect();
    let lookup = |list: &[String]| -> Result<Vec<usize>> {
        let mut out = list
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::schema("split", format!("unknown clip `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        out.sort_unstable();
        Ok(out)
    };
    Ok((lookup(&split.train)?, lookup(&split.test)?))
}

fn check_ids(clips: &[RawClip]) -> Result<Vec<String>> {
    if clips.is_empty() {
        return Err(Error::schema("clips", "must be non-empty"));
    }
    let mut seen = std::collections::BTreeSet::new();
    for c in clips {
        if !seen.insert(c.id.as_str()) {
            return Err(Error::schema("clips", format!("duplicate clip id `{}`", c.id)));
        }
    }
    Ok(clips.iter().map(|c| c.id.clone()).collect())
}

fn write_labels(out: &Path, name: &str, file: &LabelsFile) -> Result<PathBuf> {
    let path = out.join(format!("{name}.json"));
    let mut text = serde_json::to_string_pretty(file).expect("labels serialize");
    text.push('\n');
    npy::write_atomic(&path, text.as_bytes())?;
    Ok(path)
}

/// Reads a raw manifest and writes one label file per probe task into
/// `out`. Returns the written paths.
pub fn import_probe_corpus(kind: CorpusKind, raw: &Path, out: &Path, cfg: &ImportConfig) -> Result<Vec<PathBuf>> {
    let manifest: RawManifest = read_json(raw)?;
    let base = raw.parent().unwrap_or(Path::new("."));
    let ids = check_ids(&manifest.clips)?;
    let mut written = Vec::new();
    match kind {
        CorpusKind::CommandsLike => {
            let labels = manifest
                .clips
                .iter()
                .map(|c| {
                    let word = c.label.as_deref().ok_or_else(|| Error::schema("label", format!("clip `{}` has no label", c.id)))?;
                    COMMANDS_35
                        .iter()
                        .position(|&w| w.eq_ignore_ascii_case(word))
                        .ok_or_else(|| Error::UnknownLabel {
                            label: word.to_string(),
                            vocabulary: "the 35 command words".into(),
                        })
                })
                .collect::<Result<Vec<usize>>>()?;
            let (train, test) = match &manifest.split {
                Some(s) => official_split(s, &ids)?,
                None => stratified_split(&labels, cfg.test_fraction, cfg.seed)?,
            };
            let file = LabelsFile {
                task: ProbeTask::WordIdentity,
                classes: COMMANDS_35.iter().map(|s| s.to_string()).collect(),
                clips: ids,
                labels: Some(labels),
                label_sets: None,
                targets: None,
                train,
                test,
            };
            written.push(write_labels(out, "word_identity", &file)?);
        }
        CorpusKind::TimitLike => {
            let sample_rate = manifest
                .sample_rate
                .ok_or_else(|| Error::schema("sample_rate", "required for timit_like corpora"))?;
            let types = manifest.clips.iter().map(sentence_type).collect::<Result<Vec<usize>>>()?;
            let mut sets = Vec::with_capacity(ids.len());
            for c in &manifest.clips {
                let mut set = Vec::new();
                for p in c.phonemes.iter().flatten() {
                    if let Some(j) = fold_phone(p)? {
                        set.push(j);
                    }
                }
                set.sort_unstable();
                set.dedup();
                sets.push(set);
            }
            let mut targets = DMatrix::zeros(ids.len(), cfg.mfcc.n_mfcc);
            for (r, c) in manifest.clips.iter().enumerate() {
                let audio = c
                    .audio
                    .as_ref()
                    .ok_or_else(|| Error::schema("audio", format!("clip `{}` has no audio", c.id)))?;
                let samples = npy::read_vector(&base.join(audio))?;
                let mean = clip_mean_mfcc(&samples, &cfg.mfcc, sample_rate)?;
                targets.row_mut(r).copy_from_slice(&mean);
            }
            let (train, test) = match &manifest.split {
                Some(s) => official_split(s, &ids)?,
                None => stratified_split(&types, cfg.test_fraction, cfg.seed)?,
            };
            npy::write_matrix(&out.join("mfcc_targets.npy"), &targets)?;
            let common = LabelsFile {
                task: ProbeTask::Mfcc,
                classes: Vec::new(),
                clips: ids,
                labels: None,
                label_sets: None,
                targets: Some("mfcc_targets.npy".into()),
                train,
                test,
            };
            written.push(write_labels(out, "mfcc", &common)?);
            let phon = LabelsFile {
                task: ProbeTask::Phonemes,
                classes: PHONES_39.iter().map(|s| s.to_string()).collect(),
                targets: None,
                label_sets: Some(sets),
                ..common.clone()
            };
            written.push(write_labels(out, "phonemes", &phon)?);
            let st = LabelsFile {
                task: ProbeTask::SentenceType,
                classes: SENTENCE_TYPES.iter().map(|s| s.to_string()).collect(),
                targets: None,
                labels: Some(types),
                ..common
            };
            written.push(write_labels(out, "sentence_type", &st)?);
        }
    }
    Ok(written)
}
