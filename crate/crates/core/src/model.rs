//! Domain types shared by every stage, plus the dataset manifest.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::npy;
use crate::scalar::Real;

/// One stimulus recording: mono samples plus the number of fMRI frames
/// acquired while it played.
#[derive(Debug, Clone, PartialEq)]
pub struct StimulusStory {
    pub id: String,
    pub audio: Vec<f64>,
    pub sample_rate: f64,
    pub tr_count: usize,
}

impl StimulusStory {
    pub fn new(id: impl Into<String>, audio: Vec<f64>, sample_rate: f64, tr_count: usize) -> Result<Self> {
        let id = id.into();
        if !(sample_rate > 0.0) {
            return Err(Error::schema("sample_rate", format!("must be > 0 for story {id}")));
        }
        if tr_count < 1 {
            return Err(Error::schema("tr_count", format!("must be >= 1 for story {id}")));
        }
        npy::check_finite(&audio, 1, &format!("audio of story {id}"))?;
        Ok(Self {
            id,
            audio,
            sample_rate,
            tr_count,
        })
    }

    pub fn duration(&self) -> f64 {
        self.audio.len() as f64 / self.sample_rate
    }
}

/// Sliding-window snippets over one story.
#[derive(Debug, Clone, PartialEq)]
pub struct SnippetTable {
    pub story_id: String,
    pub window_length: f64,
    pub stride: f64,
    /// `(start, end)` in seconds.
    pub entries: Vec<(f64, f64)>,
}

impl SnippetTable {
    /// Snippet timestamps (window end times).
    pub fn timestamps(&self) -> Vec<f64> {
        self.entries.iter().map(|&(_, end)| end).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// CSV export with header `story_id,start,end`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("story_id,start,end\n");
        for (s, e) in &self.entries {
            out.push_str(&format!("{},{},{}\n", self.story_id, s, e));
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RowAxis {
    Snippet,
    Tr,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Source {
    pub model: String,
    pub layer: usize,
}

/// Layer representations: rows are time points, columns feature dims.
#[derive(Debug, Clone, PartialEq)]
pub struct Features<T: Real> {
    pub source: Source,
    pub row_axis: RowAxis,
    pub values: DMatrix<T>,
}

impl<T: Real> Features<T> {
    pub fn new(source: Source, row_axis: RowAxis, values: DMatrix<T>) -> Result<Self> {
        if values.nrows() == 0 || values.ncols() == 0 {
            return Err(Error::Shape(format!(
                "feature matrix must be non-empty, got {}x{}",
                values.nrows(),
                values.ncols()
            )));
        }
        check_matrix_finite(&values, &format!("features {}/{}", source.model, source.layer))?;
        Ok(Self {
            source,
            row_axis,
            values,
        })
    }

    pub fn load(path: &Path, source: Source, row_axis: RowAxis) -> Result<Self> {
        let m = npy::read_matrix(path)?;
        Self::new(source, row_axis, m.map(T::of))
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dims(&self) -> usize {
        self.values.ncols()
    }
}

/// fMRI responses for one participant and story: TRs × voxels.
#[derive(Debug, Clone, PartialEq)]
pub struct Responses<T: Real> {
    pub participant: String,
    pub story_id: String,
    pub tr_seconds: f64,
    pub values: DMatrix<T>,
}

impl<T: Real> Responses<T> {
    pub fn new(
        participant: impl Into<String>,
        story_id: impl Into<String>,
        tr_seconds: f64,
        values: DMatrix<T>,
    ) -> Result<Self> {
        let participant = participant.into();
        let story_id = story_id.into();
        if values.ncols() == 0 {
            return Err(Error::Shape(format!("responses for {participant}/{story_id} have no voxels")));
        }
        check_matrix_finite(&values, &format!("responses {participant}/{story_id}"))?;
        Ok(Self {
            participant,
            story_id,
            tr_seconds,
            values,
        })
    }

    pub fn load(path: &Path, participant: &str, story_id: &str, tr_seconds: f64) -> Result<Self> {
        let m = npy::read_matrix(path)?;
        Self::new(participant, story_id, tr_seconds, m.map(T::of))
    }

    pub fn trs(&self) -> usize {
        self.values.nrows()
    }

    pub fn voxels(&self) -> usize {
        self.values.ncols()
    }
}

fn check_matrix_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    for r in 0..m.nrows() {
        for c in 0..m.ncols() {
            if !num_traits::Float::is_finite(m[(r, c)]) {
                return Err(Error::NonFinite {
                    what: what.to_string(),
                    row: r,
                    col: c,
                });
            }
        }
    }
    Ok(())
}

pub const PRIMARY_AUDITORY: &str = "primary_auditory";
pub const LATE_LANGUAGE: &str = "late_language";
/// Sub-regions whose union forms the late language region when the atlas
/// does not list it directly.
pub const LATE_LANGUAGE_PARTS: [&str; 4] = [
    "angular_gyrus",
    "anterior_temporal_lobe",
    "posterior_temporal_lobe",
    "middle_frontal_gyrus",
];

/// Named voxel sets for one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoiAtlas {
    pub participant: String,
    pub regions: BTreeMap<String, Vec<usize>>,
}

impl RoiAtlas {
    /// Sorts and deduplicates every region, derives `late_language` from
    /// its sub-regions when absent, and checks the required names.
    pub fn normalized(mut self) -> Result<Self> {
        for idx in self.regions.values_mut() {
            idx.sort_unstable();
            idx.dedup();
        }
        if !self.regions.contains_key(LATE_LANGUAGE)
            && LATE_LANGUAGE_PARTS.iter().all(|p| self.regions.contains_key(*p))
        {
            let union = self.union(&LATE_LANGUAGE_PARTS)?;
            self.regions.insert(LATE_LANGUAGE.to_string(), union);
        }
        for required in [PRIMARY_AUDITORY, LATE_LANGUAGE] {
            if !self.regions.contains_key(required) {
                return Err(Error::schema("regions", format!("atlas must define `{required}`")));
            }
        }
        Ok(self)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let atlas: RoiAtlas = read_json(path)?;
        atlas.normalized()
    }

    /// Rejects any index that is not a voxel column.
    pub fn validate(&self, voxels: usize) -> Result<()> {
        for (name, idx) in &self.regions {
            if let Some(&bad) = idx.iter().find(|&&i| i >= voxels) {
                return Err(Error::schema(
                    format!("regions.{name}"),
                    format!("voxel index {bad} out of range for {voxels} voxels"),
                ));
            }
        }
        Ok(())
    }

    pub fn region(&self, name: &str) -> Result<&[usize]> {
        self.regions
            .get(name)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::UnknownRegion(name.to_string()))
    }

    /// Sorted, deduplicated union of several regions.
    pub fn union(&self, names: &[&str]) -> Result<Vec<usize>> {
        let mut set = BTreeSet::new();
        for n in names {
            set.extend(self.region(n)?.iter().copied());
        }
        Ok(set.into_iter().collect())
    }
}

fn default_tr_seconds() -> f64 {
    2.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StoryEntry {
    pub id: String,
    /// 1-D NPY array of mono samples.
    pub audio_path: PathBuf,
    pub sample_rate: f64,
    pub tr_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParticipantEntry {
    pub id: String,
    #[serde(default = "default_tr_seconds")]
    pub tr_seconds: f64,
    pub atlas_path: PathBuf,
    /// story id → TR × voxel NPY matrix.
    pub responses: BTreeMap<String, PathBuf>,
    /// story id → repeated recordings of that story, used for the noise
    /// ceiling.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub repeats: BTreeMap<String, Vec<PathBuf>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub stories: Vec<StoryEntry>,
    pub participants: Vec<ParticipantEntry>,
    pub split: Split,
}

pub(crate) fn read_json<D: serde::de::DeserializeOwned>(path: &Path) -> Result<D> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        base.join(p)
    }
}

impl DatasetManifest {
    /// Parses a manifest from JSON text, resolving relative paths against
    /// `base`, and checks its internal consistency (not file existence).
    pub fn from_json_str(text: &str, base: &Path) -> Result<Self> {
        let mut m: DatasetManifest =
            serde_json::from_str(text).map_err(|e| Error::schema("manifest", e.to_string()))?;
        for s in &mut m.stories {
            s.audio_path = resolve(base, &s.audio_path);
        }
        for p in &mut m.participants {
            p.atlas_path = resolve(base, &p.atlas_path);
            for path in p.responses.values_mut() {
                *path = resolve(base, path);
            }
            for reps in p.repeats.values_mut() {
                for path in reps.iter_mut() {
                    *path = resolve(base, path);
                }
            }
        }
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stories.is_empty() {
            return Err(Error::schema("stories", "stories must be non-empty"));
        }
        let mut ids = BTreeSet::new();
        for s in &self.stories {
            if !ids.insert(s.id.as_str()) {
                return Err(Error::schema("stories", format!("duplicate story id `{}`", s.id)));
            }
            if !(s.sample_rate > 0.0) {
                return Err(Error::schema("stories.sample_rate", format!("must be > 0 for `{}`", s.id)));
            }
            if s.tr_count < 1 {
                return Err(Error::schema("stories.tr_count", format!("must be >= 1 for `{}`", s.id)));
            }
        }
        let train: BTreeSet<&str> = self.split.train.iter().map(String::as_str).collect();
        let test: BTreeSet<&str> = self.split.test.iter().map(String::as_str).collect();
        if let Some(dup) = train.intersection(&test).next() {
            return Err(Error::schema("split", format!("split overlap: `{dup}` is in train and test")));
        }
        for id in train.iter().chain(test.iter()) {
            if !ids.contains(id) {
                return Err(Error::schema("split", format!("unknown story id `{id}`")));
            }
        }
        let covered: BTreeSet<&str> = train.union(&test).copied().collect();
        if covered != ids {
            let missing: Vec<_> = ids.difference(&covered).collect();
            return Err(Error::schema("split", format!("stories not assigned to train or test: {missing:?}")));
        }
        if self.split.train.is_empty() || self.split.test.is_empty() {
            return Err(Error::schema("split", "train and test must both be non-empty"));
        }
        if self.participants.is_empty() {
            return Err(Error::schema("participants", "participants must be non-empty"));
        }
        let mut pids = BTreeSet::new();
        for p in &self.participants {
            if !pids.insert(p.id.as_str()) {
                return Err(Error::schema("participants", format!("duplicate participant `{}`", p.id)));
            }
            if !(p.tr_seconds > 0.0) {
                return Err(Error::schema("participants.tr_seconds", format!("must be > 0 for `{}`", p.id)));
            }
            for id in &ids {
                if !p.responses.contains_key(*id) {
                    return Err(Error::schema(
                        "participants.responses",
                        format!("participant `{}` has no responses for story `{id}`", p.id),
                    ));
                }
            }
            for id in p.responses.keys().chain(p.repeats.keys()) {
                if !ids.contains(id.as_str()) {
                    return Err(Error::schema(
                        "participants.responses",
                        format!("participant `{}` references unknown story `{id}`", p.id),
                    ));
                }
            }
        }
        Ok(())
    }

    /// Every file the manifest points at.
    pub fn referenced_files(&self) -> Vec<&Path> {
        let mut out: Vec<&Path> = self.stories.iter().map(|s| s.audio_path.as_path()).collect();
        for p in &self.participants {
            out.push(&p.atlas_path);
            out.extend(p.responses.values().map(PathBuf::as_path));
            out.extend(p.repeats.values().flatten().map(PathBuf::as_path));
        }
        out
    }

    pub fn story(&self, id: &str) -> Option<&StoryEntry> {
        self.stories.iter().find(|s| s.id == id)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }
}

/// Loads and validates a manifest; every referenced file must exist.
pub fn load_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let m = DatasetManifest::from_json_str(&text, base)?;
    for f in m.referenced_files() {
        if !f.exists() {
            return Err(Error::MissingFile { path: f.to_path_buf() });
        }
    }
    Ok(m)
}

/// Succeeds iff the features are TR-aligned and have one row per TR.
pub fn validate_pairing<T: Real>(features: &Features<T>, responses: &Responses<T>) -> Result<()> {
    if features.row_axis != RowAxis::Tr {
        return Err(Error::NotDownsampled);
    }
    if features.rows() != responses.trs() {
        return Err(Error::RowMismatch {
            features: features.rows(),
            responses: responses.trs(),
        });
    }
    Ok(())
}

/// Alignment of one (model, layer, participant).
#[derive(Debug, Clone, PartialEq)]
pub struct Encoding<T: Real> {
    pub model: String,
    pub layer: usize,
    pub participant: String,
    /// Held-out Pearson r per voxel.
    pub raw_r: Vec<T>,
    /// Voxels whose prediction or truth had zero variance (r set to 0).
    pub zero_variance: Vec<bool>,
    /// Regularization chosen per voxel.
    pub lambdas: Vec<T>,
    pub ceiling: Option<Vec<T>>,
    /// `raw_r / ceiling`, present only where `voxel_mask` is set.
    pub normalized: Vec<Option<T>>,
    pub voxel_mask: Vec<bool>,
}

impl<T: Real> Encoding<T> {
    pub fn voxels(&self) -> usize {
        self.raw_r.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub mean: f64,
    pub stderr: f64,
    pub n: usize,
}

/// A metric across layers, summarized over participants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerCurve {
    pub metric: String,
    pub model: String,
    pub variant: String,
    pub points: BTreeMap<usize, CurvePoint>,
}

impl LayerCurve {
    pub fn layers(&self) -> Vec<usize> {
        self.points.keys().copied().collect()
    }

    pub fn means(&self) -> Vec<f64> {
        self.points.values().map(|p| p.mean).collect()
    }
}
