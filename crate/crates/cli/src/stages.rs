//! The six subcommands.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use brainalign::ceiling::{aggregate_roi, attach_ceiling, estimate_noise_ceiling, CeilingMethod};
use brainalign::corpus::{import_probe_corpus, ImportConfig};
use brainalign::encoding::encode_layer;
use brainalign::model::{
    load_manifest, DatasetManifest, Encoding, Features, ParticipantEntry, Responses, RoiAtlas, RowAxis, SnippetTable,
    Source, StimulusStory,
};
use brainalign::npy;
use brainalign::pairing::{pair_story, slice_windows};
use brainalign::probing::{load_labels, probe_layer, ProbeLabels, ProbeRecord, ProbeTask};
use brainalign::report::{build_layer_curve, classify_trend, render_report};
use brainalign::seed::config_hash;
use brainalign::Error;
use nalgebra::DMatrix;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::config::{check_component, FeatureSet, RunConfig};
use crate::{run_jobs, CliResult, Context, Failure, Layout};

fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<(), Error> {
    let mut text = serde_json::to_string_pretty(value).expect("records serialize");
    text.push('\n');
    npy::write_atomic(path, text.as_bytes())
}

fn read_json<D: DeserializeOwned>(path: &Path) -> Result<D, Error> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.to_path_buf(),
        source,
    })
}

fn manifest(cfg: &RunConfig) -> CliResult<DatasetManifest> {
    let path = cfg.dataset_path().context(|| "config".into())?;
    let m = load_manifest(path).context(|| format!("manifest {}", path.display()))?;
    for s in &m.stories {
        check_component("stories.id", &s.id)?;
    }
    for p in &m.participants {
        check_component("participants.id", &p.id)?;
        if p.tr_seconds != cfg.pairing.tr_seconds {
            return Err(Error::Config(format!(
                "participant `{}` has tr_seconds {} but pairing uses {}",
                p.id, p.tr_seconds, cfg.pairing.tr_seconds
            ))
            .into());
        }
    }
    Ok(m)
}

/// Participants a feature set is encoded against.
fn participants_for<'a>(set: &FeatureSet, m: &'a DatasetManifest) -> CliResult<Vec<&'a ParticipantEntry>> {
    match &set.participant {
        None => Ok(m.participants.iter().collect()),
        Some(id) => m
            .participants
            .iter()
            .find(|p| &p.id == id)
            .map(|p| vec![p])
            .ok_or_else(|| {
                Error::schema("feature_sets.participant", format!("`{}` names unknown participant `{id}`", set.id)).into()
            }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedSidecar {
    pub feature_set: String,
    pub model: String,
    pub variant: String,
    pub story: String,
    pub layer: usize,
    /// First fMRI frame the rows correspond to.
    pub first_tr: usize,
    pub rows: usize,
    pub dims: usize,
    pub config_hash: String,
}

pub fn pair(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let m = manifest(cfg)?;
    let tables: Vec<SnippetTable> = run_jobs(cfg.workers, &m.stories, |s| {
        let audio = npy::read_vector(&s.audio_path).context(|| format!("story `{}` audio", s.id))?;
        let story = StimulusStory::new(&s.id, audio, s.sample_rate, s.tr_count).context(|| format!("story `{}`", s.id))?;
        let table = slice_windows(&story, &cfg.pairing).context(|| format!("story `{}`", s.id))?;
        npy::write_atomic(&layout.snippets(&s.id), table.to_csv().as_bytes())?;
        Ok(table)
    })?;
    let mut written: Vec<PathBuf> = m.stories.iter().map(|s| layout.snippets(&s.id)).collect();

    let hash = config_hash(&cfg.pairing);
    let jobs: Vec<(&FeatureSet, usize, usize)> = cfg
        .feature_sets
        .iter()
        .flat_map(|f| (0..m.stories.len()).flat_map(move |s| f.layers.iter().map(move |&l| (f, s, l))))
        .collect();
    let paired = run_jobs(cfg.workers, &jobs, |&(set, s, layer)| {
        let story = &m.stories[s];
        let what = || format!("pair {}/{}/layer {layer}", set.id, story.id);
        let path = set.root.join(&story.id).join(format!("layer_{layer}.npy"));
        let source = Source {
            model: set.model.clone(),
            layer,
        };
        let snippet = Features::<f64>::load(&path, source, RowAxis::Snippet).context(what)?;
        let out = pair_story(&snippet, &tables[s], story.tr_count, &cfg.pairing).context(what)?;
        let target = layout.paired(&set.id, &story.id, layer);
        npy::write_matrix(&target, &out.features.values)?;
        let sidecar = PairedSidecar {
            feature_set: set.id.clone(),
            model: set.model.clone(),
            variant: set.variant.clone(),
            story: story.id.clone(),
            layer,
            first_tr: out.first_tr,
            rows: out.features.rows(),
            dims: out.features.dims(),
            config_hash: hash.clone(),
        };
        let side = target.with_extension("json");
        write_json(&side, &sidecar)?;
        Ok([target, side])
    })?;
    written.extend(paired.into_iter().flatten());
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodingSidecar {
    pub feature_set: String,
    pub model: String,
    pub variant: String,
    pub participant: String,
    pub layer: usize,
    pub voxels: usize,
    pub mean_r: f64,
    pub zero_variance: usize,
    /// Chosen penalty → voxel count.
    pub lambda_histogram: BTreeMap<String, usize>,
    pub config_hash: String,
}

fn load_responses(p: &ParticipantEntry, m: &DatasetManifest) -> CliResult<BTreeMap<String, DMatrix<f64>>> {
    m.stories
        .iter()
        .map(|s| {
            let path = &p.responses[&s.id];
            let r = Responses::<f64>::load(path, &p.id, &s.id, p.tr_seconds)
                .context(|| format!("responses {}/{}", p.id, s.id))?;
            Ok((s.id.clone(), r.values))
        })
        .collect()
}

pub fn encode(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let m = manifest(cfg)?;
    let mut needed = BTreeSet::new();
    for set in &cfg.feature_sets {
        for p in participants_for(set, &m)? {
            needed.insert(p.id.clone());
        }
    }
    let participants: Vec<&ParticipantEntry> = m.participants.iter().filter(|p| needed.contains(&p.id)).collect();
    let loaded = run_jobs(cfg.workers, &participants, |p| load_responses(p, &m))?;
    let responses: BTreeMap<&str, BTreeMap<String, DMatrix<f64>>> =
        participants.iter().map(|p| p.id.as_str()).zip(loaded).collect();

    let mut jobs: Vec<(&FeatureSet, &ParticipantEntry, usize)> = Vec::new();
    for set in &cfg.feature_sets {
        for p in participants_for(set, &m)? {
            jobs.extend(set.layers.iter().map(|&l| (set, p, l)));
        }
    }
    let hash = config_hash(&(&cfg.pairing, &cfg.ridge));
    let written = run_jobs(cfg.workers, &jobs, |&(set, p, layer)| {
        let what = || format!("encode {}/{}/layer {layer}", set.id, p.id);
        let mut features = BTreeMap::new();
        let mut trimmed = BTreeMap::new();
        for story in &m.stories {
            let path = layout.paired(&set.id, &story.id, layer);
            let side: PairedSidecar = read_json(&path.with_extension("json")).context(what)?;
            let source = Source {
                model: set.model.clone(),
                layer,
            };
            let f = Features::<f64>::load(&path, source, RowAxis::Tr).context(what)?;
            let full = &responses[p.id.as_str()][&story.id];
            let end = side.first_tr + f.rows();
            if full.nrows() < end {
                return Err(Error::RowMismatch {
                    features: end,
                    responses: full.nrows(),
                })
                .context(|| format!("{}: story `{}`", what(), story.id));
            }
            let rows = full.rows(side.first_tr, f.rows()).into_owned();
            trimmed.insert(story.id.clone(), Responses::new(&p.id, &story.id, p.tr_seconds, rows).context(what)?);
            features.insert(story.id.clone(), f);
        }
        let result = encode_layer(&features, &trimmed, &m.split, &cfg.ridge).context(what)?;
        let dir = layout.encoding_dir(&set.id, &p.id, layer);
        npy::write_vector(&dir.join("raw_r.npy"), &result.raw_r)?;
        npy::write_vector(&dir.join("lambdas.npy"), &result.lambdas)?;
        npy::write_bool(&dir.join("zero_variance.npy"), &result.zero_variance)?;
        let mut lambda_histogram = BTreeMap::new();
        for l in &result.lambdas {
            *lambda_histogram.entry(format!("{l:e}")).or_insert(0) += 1;
        }
        let sidecar = EncodingSidecar {
            feature_set: set.id.clone(),
            model: set.model.clone(),
            variant: set.variant.clone(),
            participant: p.id.clone(),
            layer,
            voxels: result.voxels(),
            mean_r: result.raw_r.iter().sum::<f64>() / result.voxels() as f64,
            zero_variance: result.zero_variance.iter().filter(|&&z| z).count(),
            lambda_histogram,
            config_hash: hash.clone(),
        };
        write_json(&dir.join("result.json"), &sidecar)?;
        Ok(dir)
    })?;
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CeilingSidecar {
    pub participant: String,
    pub method: CeilingMethod,
    /// `repeats` or `odd_even` (a single recording split by frame parity).
    pub source: String,
    pub n_splits: usize,
    pub splits_used: usize,
    pub seed: u64,
    pub clamped: usize,
    pub voxels: usize,
    pub kept: usize,
    pub config_hash: String,
}

fn stack(parts: &[DMatrix<f64>]) -> Result<DMatrix<f64>, Error> {
    let cols = parts[0].ncols();
    if parts.iter().any(|p| p.ncols() != cols) {
        return Err(Error::Shape("recordings disagree on voxel count".into()));
    }
    let rows = parts.iter().map(|p| p.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for p in parts {
        out.rows_mut(at, p.nrows()).copy_from(p);
        at += p.nrows();
    }
    Ok(out)
}

/// Repeated recordings of the test stories, concatenated per repeat; with
/// no complete repeat set, the single test recording.
fn ceiling_recordings(p: &ParticipantEntry, m: &DatasetManifest) -> CliResult<(Vec<DMatrix<f64>>, &'static str)> {
    let test = &m.split.test;
    let counts: Vec<usize> = test.iter().map(|s| p.repeats.get(s).map_or(0, Vec::len)).collect();
    let read = |path: &Path| npy::read_matrix(path).context(|| format!("participant `{}`", p.id));
    if counts.iter().all(|&c| c >= 2) {
        let n = counts[0];
        if counts.iter().any(|&c| c != n) {
            return Err(Error::schema(
                "repeats",
                format!("participant `{}` has unequal repeat counts across test stories", p.id),
            )
            .into());
        }
        let mut recordings = Vec::with_capacity(n);
        for r in 0..n {
            let parts = test.iter().map(|s| read(&p.repeats[s][r])).collect::<CliResult<Vec<_>>>()?;
            recordings.push(stack(&parts)?);
        }
        return Ok((recordings, "repeats"));
    }
    if counts.iter().any(|&c| c > 0) {
        log::warn!("participant `{}`: repeats incomplete for the test stories; using odd/even frames", p.id);
    }
    let parts = test.iter().map(|s| read(&p.responses[s])).collect::<CliResult<Vec<_>>>()?;
    Ok((vec![stack(&parts)?], "odd_even"))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionScore {
    pub mean: f64,
    pub voxels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentRecord {
    pub feature_set: String,
    pub model: String,
    pub variant: String,
    pub participant: String,
    pub layer: usize,
    pub kept_voxels: usize,
    pub floored_voxels: usize,
    /// Mean ceiling-normalized alignment; `None` when no voxel survives.
    pub regions: BTreeMap<String, Option<RegionScore>>,
    pub config_hash: String,
}

pub fn ceiling(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let m = manifest(cfg)?;
    let hash = config_hash(&cfg.ceiling);
    let participants: Vec<&ParticipantEntry> = m.participants.iter().collect();
    let estimates = run_jobs(cfg.workers, &participants, |p| {
        let what = || format!("ceiling {}", p.id);
        let atlas = RoiAtlas::load(&p.atlas_path).context(|| format!("atlas {}", p.atlas_path.display()))?;
        let (recordings, source) = ceiling_recordings(p, &m)?;
        atlas.validate(recordings[0].ncols()).context(|| format!("atlas {}", p.atlas_path.display()))?;
        let est = estimate_noise_ceiling(&recordings, &cfg.ceiling).context(what)?;
        let dir = layout.ceiling_dir(&p.id);
        npy::write_vector(&dir.join("ceiling.npy"), &est.values)?;
        let kept = brainalign::ceiling::filter_voxels(&est.values, &cfg.ceiling).iter().filter(|&&k| k).count();
        let sidecar = CeilingSidecar {
            participant: p.id.clone(),
            method: est.method,
            source: source.to_string(),
            n_splits: cfg.ceiling.n_splits,
            splits_used: est.splits_used,
            seed: cfg.ceiling.seed,
            clamped: est.clamped,
            voxels: est.values.len(),
            kept,
            config_hash: hash.clone(),
        };
        write_json(&dir.join("ceiling.json"), &sidecar)?;
        Ok((atlas, est.values))
    })?;
    let by_participant: BTreeMap<&str, &(RoiAtlas, Vec<f64>)> =
        participants.iter().map(|p| p.id.as_str()).zip(estimates.iter()).collect();
    let mut written: Vec<PathBuf> = participants.iter().map(|p| layout.ceiling_dir(&p.id)).collect();

    let mut jobs: Vec<(&FeatureSet, &ParticipantEntry, usize)> = Vec::new();
    for set in &cfg.feature_sets {
        for p in participants_for(set, &m)? {
            jobs.extend(set.layers.iter().map(|&l| (set, p, l)));
        }
    }
    let aligned = run_jobs(cfg.workers, &jobs, |&(set, p, layer)| {
        let what = || format!("alignment {}/{}/layer {layer}", set.id, p.id);
        let dir = layout.encoding_dir(&set.id, &p.id, layer);
        let side: EncodingSidecar = read_json(&dir.join("result.json")).context(what)?;
        let raw_r = npy::read_vector(&dir.join("raw_r.npy")).context(what)?;
        let voxels = raw_r.len();
        let mut result = Encoding {
            model: side.model.clone(),
            layer,
            participant: p.id.clone(),
            raw_r,
            zero_variance: npy::read_bool(&dir.join("zero_variance.npy")).context(what)?,
            lambdas: npy::read_vector(&dir.join("lambdas.npy")).context(what)?,
            ceiling: None,
            normalized: vec![None; voxels],
            voxel_mask: vec![false; voxels],
        };
        let (atlas, ceiling) = by_participant[p.id.as_str()];
        let norm = attach_ceiling(&mut result, ceiling, &cfg.ceiling).context(what)?;
        let mut regions = BTreeMap::new();
        for name in atlas.regions.keys() {
            let score = match aggregate_roi(&result.normalized, atlas, name, &result.voxel_mask) {
                Ok((mean, voxels)) => Some(RegionScore { mean, voxels }),
                Err(Error::EmptyRoi(_)) => {
                    log::warn!("{}: region `{name}` has no voxels above the ceiling threshold", what());
                    None
                }
                Err(e) => return Err(e).context(what),
            };
            regions.insert(name.clone(), score);
        }
        let normalized: Vec<f64> = result.normalized.iter().map(|v| v.unwrap_or(0.0)).collect();
        npy::write_vector(&dir.join("normalized.npy"), &normalized)?;
        npy::write_bool(&dir.join("mask.npy"), &result.voxel_mask)?;
        let record = AlignmentRecord {
            feature_set: set.id.clone(),
            model: set.model.clone(),
            variant: set.variant.clone(),
            participant: p.id.clone(),
            layer,
            kept_voxels: result.voxel_mask.iter().filter(|&&k| k).count(),
            floored_voxels: norm.floored_count(),
            regions,
            config_hash: hash.clone(),
        };
        let path = dir.join("alignment.json");
        write_json(&path, &record)?;
        Ok(path)
    })?;
    written.extend(aligned);
    Ok(written)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeResult {
    pub feature_set: String,
    pub variant: String,
    #[serde(flatten)]
    pub record: ProbeRecord,
}

pub fn probe(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let mut labels: Vec<(usize, ProbeLabels<f64>)> = Vec::new();
    for (i, set) in cfg.probe_sets.iter().enumerate() {
        let mut tasks = BTreeSet::new();
        for path in &set.labels {
            let l = load_labels(path).context(|| format!("labels {}", path.display()))?;
            if !tasks.insert(l.task) {
                return Err(Error::schema(
                    "probe_sets.labels",
                    format!("`{}` lists task `{}` twice", set.id, l.task.name()),
                )
                .into());
            }
            labels.push((i, l));
        }
    }
    let jobs: Vec<(usize, usize)> = labels
        .iter()
        .enumerate()
        .flat_map(|(li, (si, _))| cfg.probe_sets[*si].layers.iter().map(move |&l| (li, l)))
        .collect();
    run_jobs(cfg.workers, &jobs, |&(li, layer)| {
        let (si, l) = &labels[li];
        let set = &cfg.probe_sets[*si];
        let what = || format!("probe {}/{}/layer {layer}", set.id, l.task.name());
        let x = npy::read_matrix(&set.root.join(format!("layer_{layer}.npy"))).context(what)?;
        let record = probe_layer(&set.model, layer, &x, l, &cfg.probe).context(what)?;
        let path = layout.probe(&set.id, l.task, layer);
        write_json(
            &path,
            &ProbeResult {
                feature_set: set.id.clone(),
                variant: set.variant.clone(),
                record,
            },
        )?;
        Ok(path)
    })
}

pub fn import_corpus(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let source = cfg
        .corpus
        .as_ref()
        .ok_or_else(|| Failure::from(Error::schema("corpus", "import-corpus needs a corpus kind and raw manifest")))?;
    let icfg = ImportConfig {
        test_fraction: source.test_fraction,
        seed: cfg.seed,
        mfcc: cfg.mfcc.clone(),
    };
    import_probe_corpus(source.kind, &source.raw, &layout.corpus(), &icfg)
        .context(|| format!("import {}", source.raw.display()))
}

type CurveKey = (String, String, String);

#[derive(Deserialize)]
struct TaskOnly {
    task: ProbeTask,
}

pub fn report(cfg: &RunConfig, layout: &Layout) -> CliResult<Vec<PathBuf>> {
    let mut values: BTreeMap<CurveKey, BTreeMap<String, BTreeMap<usize, f64>>> = BTreeMap::new();
    let mut dropped: BTreeSet<(CurveKey, String)> = BTreeSet::new();
    if !cfg.feature_sets.is_empty() {
        let m = manifest(cfg)?;
        for set in &cfg.feature_sets {
            for p in participants_for(set, &m)? {
                for &layer in &set.layers {
                    let path = layout.encoding_dir(&set.id, &p.id, layer).join("alignment.json");
                    let rec: AlignmentRecord = read_json(&path).context(|| "report".into())?;
                    for (region, score) in rec.regions {
                        let key = (format!("alignment:{region}"), set.model.clone(), set.variant.clone());
                        match score {
                            Some(s) => {
                                values.entry(key).or_default().entry(p.id.clone()).or_default().insert(layer, s.mean);
                            }
                            None => {
                                dropped.insert((key, p.id.clone()));
                            }
                        }
                    }
                }
            }
        }
    }
    for (key, participant) in &dropped {
        log::warn!("{}/{}/{}: participant `{participant}` left out (empty region at some layer)", key.0, key.1, key.2);
        if let Some(per) = values.get_mut(key) {
            per.remove(participant);
        }
    }
    values.retain(|_, per| !per.is_empty());
    for set in &cfg.probe_sets {
        for labels in &set.labels {
            let TaskOnly { task } = read_json(labels).context(|| format!("labels {}", labels.display()))?;
            for &layer in &set.layers {
                let rec: ProbeResult = read_json(&layout.probe(&set.id, task, layer)).context(|| "report".into())?;
                let key = (format!("probe:{}", task.name()), set.model.clone(), set.variant.clone());
                values
                    .entry(key)
                    .or_default()
                    .entry(set.id.clone())
                    .or_default()
                    .insert(layer, rec.record.metric);
            }
        }
    }
    if values.is_empty() {
        return Err(Error::NothingToReport.into());
    }
    let mut curves = Vec::with_capacity(values.len());
    let mut trends = Vec::with_capacity(values.len());
    for ((metric, model, variant), per) in &values {
        let curve = build_layer_curve(metric, model, variant, per).context(|| format!("curve {metric}/{model}/{variant}"))?;
        let trend = if curve.points.len() >= cfg.trend.min_layers {
            Some(classify_trend(&curve, &cfg.trend).context(|| format!("trend {metric}/{model}/{variant}"))?)
        } else {
            log::warn!("{metric}/{model}/{variant}: too few layers for a trend label");
            None
        };
        curves.push(curve);
        trends.push(trend);
    }
    let files = render_report(&curves, &trends, &layout.report()).context(|| "report".into())?;
    let mut written = vec![files.csv, files.json];
    written.extend(files.svgs);
    Ok(written)
}
