//! Synthetic datasets with planted layer structure.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use brainalign::model::{Features, RowAxis, Source, StimulusStory};
use brainalign::npy;
use brainalign::pairing::{pair_story, slice_windows, PairingConfig};
use brainalign_cli::{run, Command, RunConfig};
use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde_json::json;

pub const LAYERS: usize = 12;
pub const LAYER_A: usize = 2;
pub const LAYER_B: usize = 10;
pub const DIMS: usize = 6;
pub const TRS: usize = 120;
pub const SAMPLE_RATE: f64 = 100.0;
pub const SNR: f64 = 5.0;
const VOXELS_A: usize = 15;
const VOXELS_B: usize = 15;
const VOXELS_NOISE: usize = 10;
const STORIES: [&str; 4] = ["story_a", "story_b", "story_c", "story_test"];

#[derive(Debug, Clone)]
pub struct Options {
    pub participants: usize,
    pub probes: bool,
}

impl Default for Options {
    fn default() -> Self {
        Self { participants: 3, probes: false }
    }
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn smooth(rows: usize, cols: usize, phi: f64, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let mut m = randn(rows, cols, rng);
    let gain = (1.0 - phi * phi).sqrt();
    for r in 1..rows {
        for c in 0..cols {
            m[(r, c)] = phi * m[(r - 1, c)] + gain * m[(r, c)];
        }
    }
    m
}

fn sd(col: &[f64]) -> f64 {
    let n = col.len() as f64;
    let m = col.iter().sum::<f64>() / n;
    (col.iter().map(|v| (v - m).powi(2)).sum::<f64>() / n).sqrt()
}

/// Writes a dataset under `dir` and returns the path of its run config.
/// Probe label files, when requested, are expected under `out/corpus`.
pub fn generate(dir: &Path, out: &Path, seed: u64, opts: &Options) -> PathBuf {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairing = PairingConfig::default();
    let samples = (TRS as f64 * pairing.tr_seconds * SAMPLE_RATE) as usize;
    std::fs::create_dir_all(dir.join("audio")).unwrap();

    // layer L mixes latent sources L, L+1 and L+2 so neighbours overlap
    let mut planted: BTreeMap<&str, (usize, DMatrix<f64>, DMatrix<f64>)> = BTreeMap::new();
    for story in STORIES {
        let audio: Vec<f64> = (0..samples).map(|_| StandardNormal.sample(&mut rng)).collect();
        npy::write_vector(&dir.join("audio").join(format!("{story}.npy")), &audio).unwrap();
        let stim = StimulusStory::new(story, audio, SAMPLE_RATE, TRS).unwrap();
        let table = slice_windows(&stim, &pairing).unwrap();
        let latent: Vec<DMatrix<f64>> = (0..LAYERS + 2).map(|_| smooth(table.len(), DIMS, 0.95, &mut rng)).collect();
        let feat_dir = dir.join("features").join(story);
        std::fs::create_dir_all(&feat_dir).unwrap();
        let mut paired = Vec::new();
        for layer in 0..LAYERS {
            let values = &latent[layer + 1] + (&latent[layer] + &latent[layer + 2]) * 0.5;
            npy::write_matrix(&feat_dir.join(format!("layer_{layer}.npy")), &values).unwrap();
            if layer == LAYER_A || layer == LAYER_B {
                let f = Features::new(Source { model: "synthetic".into(), layer }, RowAxis::Snippet, values).unwrap();
                paired.push(pair_story(&f, &table, TRS, &pairing).unwrap());
            }
        }
        let b = paired.pop().unwrap();
        let a = paired.pop().unwrap();
        assert_eq!(a.first_tr, b.first_tr);
        planted.insert(story, (a.first_tr, a.features.values, b.features.values));
    }

    let voxels = VOXELS_A + VOXELS_B + VOXELS_NOISE;
    let mut participants = Vec::new();
    for p in 0..opts.participants {
        let id = format!("sub{:02}", p + 1);
        let pdir = dir.join(&id);
        std::fs::create_dir_all(&pdir).unwrap();
        let (_, xa, _) = &planted[STORIES[0]];
        let wa = randn(xa.ncols(), VOXELS_A, &mut rng);
        let wb = randn(xa.ncols(), VOXELS_B, &mut rng);
        let signal = |story: &str| -> DMatrix<f64> {
            let (first, xa, xb) = &planted[story];
            let mut s = DMatrix::zeros(TRS, voxels);
            let sa = xa * &wa;
            let sb = xb * &wb;
            for r in 0..xa.nrows() {
                for v in 0..VOXELS_A {
                    s[(first + r, v)] = sa[(r, v)];
                }
                for v in 0..VOXELS_B {
                    s[(first + r, VOXELS_A + v)] = sb[(r, v)];
                }
            }
            s
        };
        let reference = signal(STORIES[0]);
        let noise_sd: Vec<f64> = (0..voxels)
            .map(|v| {
                if v < VOXELS_A + VOXELS_B {
                    sd(reference.column(v).as_slice()) / SNR.sqrt()
                } else {
                    1.0
                }
            })
            .collect();
        let noisy = |s: &DMatrix<f64>, rng: &mut ChaCha8Rng| -> DMatrix<f64> {
            DMatrix::from_fn(TRS, voxels, |r, v| {
                let e: f64 = StandardNormal.sample(rng);
                s[(r, v)] + noise_sd[v] * e
            })
        };
        let mut responses = serde_json::Map::new();
        let mut repeats = serde_json::Map::new();
        for story in STORIES {
            let s = signal(story);
            if story == "story_test" {
                let mut paths = Vec::new();
                for k in 0..2 {
                    let name = format!("{id}/{story}_rep{k}.npy");
                    npy::write_matrix(&dir.join(&name), &noisy(&s, &mut rng)).unwrap();
                    paths.push(json!(name));
                }
                responses.insert(story.into(), paths[0].clone());
                repeats.insert(story.into(), json!(paths));
            } else {
                let name = format!("{id}/{story}.npy");
                npy::write_matrix(&dir.join(&name), &noisy(&s, &mut rng)).unwrap();
                responses.insert(story.into(), json!(name));
            }
        }
        let b0 = VOXELS_A;
        let atlas = json!({
            "participant": id,
            "regions": {
                "primary_auditory": (0..VOXELS_A).collect::<Vec<_>>(),
                "angular_gyrus": (b0..b0 + 6).collect::<Vec<_>>(),
                "anterior_temporal_lobe": (b0 + 6..b0 + 11).collect::<Vec<_>>(),
                "posterior_temporal_lobe": (b0 + 9..b0 + VOXELS_B).rev().collect::<Vec<_>>(),
                "middle_frontal_gyrus": [b0 + VOXELS_B - 1],
            }
        });
        std::fs::write(pdir.join("atlas.json"), serde_json::to_string_pretty(&atlas).unwrap()).unwrap();
        participants.push(json!({
            "id": id,
            "tr_seconds": pairing.tr_seconds,
            "atlas_path": format!("{id}/atlas.json"),
            "responses": responses,
            "repeats": repeats,
        }));
    }
    let manifest = json!({
        "stories": STORIES.iter().map(|s| json!({
            "id": s,
            "audio_path": format!("audio/{s}.npy"),
            "sample_rate": SAMPLE_RATE,
            "tr_count": TRS,
        })).collect::<Vec<_>>(),
        "participants": participants,
        "split": {"train": &STORIES[..3], "test": &STORIES[3..]},
    });
    std::fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest).unwrap()).unwrap();

    let mut config = json!({
        "dataset": "manifest.json",
        "feature_sets": [{
            "id": "base",
            "model": "synthetic",
            "variant": "pretrained",
            "root": "features",
            "layers": (0..LAYERS).collect::<Vec<_>>(),
        }],
        "seed": seed,
    });
    if opts.probes {
        write_commands_corpus(dir, &mut rng);
        config["corpus"] = json!({"kind": "commands_like", "raw": "commands/raw.json"});
        config["probe_sets"] = json!([{
            "id": "commands",
            "model": "synthetic",
            "variant": "pretrained",
            "root": "commands/features",
            "layers": (0..4).collect::<Vec<_>>(),
            "labels": [out.join("corpus").join("word_identity.json")],
        }]);
    }
    let path = dir.join("run.json");
    std::fs::write(&path, serde_json::to_string_pretty(&config).unwrap()).unwrap();
    path
}

const CLIPS_PER_WORD: usize = 5;

/// 35 words × 5 clips; class information grows with layer depth.
fn write_commands_corpus(dir: &Path, rng: &mut ChaCha8Rng) {
    let words = brainalign::corpus::COMMANDS_35;
    let root = dir.join("commands");
    std::fs::create_dir_all(root.join("features")).unwrap();
    let mut clips = Vec::new();
    let mut labels = Vec::new();
    for (w, word) in words.iter().enumerate() {
        for k in 0..CLIPS_PER_WORD {
            clips.push(json!({"id": format!("{word}_{k}"), "label": word}));
            labels.push(w);
        }
    }
    std::fs::write(root.join("raw.json"), serde_json::to_string_pretty(&json!({"clips": clips})).unwrap()).unwrap();
    let centers = randn(words.len(), 8, rng);
    for layer in 0..4 {
        let strength = layer as f64;
        let x = DMatrix::from_fn(labels.len(), 8, |r, c| {
            let e: f64 = StandardNormal.sample(rng);
            strength * centers[(labels[r], c)] + e
        });
        npy::write_matrix(&root.join("features").join(format!("layer_{layer}.npy")), &x).unwrap();
    }
}

/// Loads the config written by [`generate`] with the given worker count.
pub fn load_config(path: &Path, workers: usize) -> RunConfig {
    RunConfig::load(path, None).unwrap().with_overrides(None, Some(workers))
}

/// Runs every stage in order.
pub fn run_all(cfg: &RunConfig, out: &Path) {
    let mut stages = vec![Command::Pair, Command::Encode, Command::Ceiling];
    if cfg.corpus.is_some() {
        stages.insert(0, Command::ImportCorpus);
        stages.push(Command::Probe);
    }
    stages.push(Command::Report);
    for s in stages {
        if let Err(e) = run(s, cfg, out) {
            panic!("{s:?} failed: {e}");
        }
    }
}

/// Every regular file under `root`, relative path → contents.
pub fn snapshot(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, acc: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, acc);
            } else {
                acc.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut acc = BTreeMap::new();
    walk(root, root, &mut acc);
    acc
}

/// `(metric, model, variant)` → trend label and peak layer, from `trends.json`.
pub fn trends(out: &Path) -> BTreeMap<String, (Option<String>, Option<usize>)> {
    let text = std::fs::read_to_string(out.join("report").join("trends.json")).unwrap();
    let records: Vec<serde_json::Value> = serde_json::from_str(&text).unwrap();
    records
        .into_iter()
        .map(|r| {
            let t = &r["trend"];
            (
                r["metric"].as_str().unwrap().to_string(),
                (t["label"].as_str().map(String::from), t["peak_layer"].as_u64().map(|l| l as usize)),
            )
        })
        .collect()
}
