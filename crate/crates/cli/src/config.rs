//! The JSON run configuration shared by every subcommand.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use brainalign::acoustic::MfccConfig;
use brainalign::ceiling::CeilingConfig;
use brainalign::corpus::CorpusKind;
use brainalign::encoding::RidgeConfig;
use brainalign::pairing::PairingConfig;
use brainalign::probing::ProbeConfig;
use brainalign::report::TrendConfig;
use brainalign::Error;
use serde::{Deserialize, Serialize};

/// Environment variable naming the directory that relative input paths
/// resolve against. Without it they resolve against the config file.
pub const DATA_ROOT_VAR: &str = "BRAINALIGN_DATA_ROOT";

/// Snippet-rate features from one model variant, stored as
/// `{root}/{story}/layer_{L}.npy`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureSet {
    pub id: String,
    pub model: String,
    pub variant: String,
    pub root: PathBuf,
    pub layers: Vec<usize>,
    /// Restricts the set to one participant (e.g. a model tuned on that
    /// participant's data).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub participant: Option<String>,
}

/// Clip-level features stored as `{root}/layer_{L}.npy`, probed against
/// each listed label file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeSet {
    pub id: String,
    pub model: String,
    pub variant: String,
    pub root: PathBuf,
    pub layers: Vec<usize>,
    pub labels: Vec<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusSource {
    pub kind: CorpusKind,
    pub raw: PathBuf,
    #[serde(default = "default_test_fraction")]
    pub test_fraction: f64,
}

fn default_test_fraction() -> f64 {
    0.2
}

fn default_workers() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dataset: Option<PathBuf>,
    #[serde(default)]
    pub feature_sets: Vec<FeatureSet>,
    #[serde(default)]
    pub probe_sets: Vec<ProbeSet>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub corpus: Option<CorpusSource>,
    #[serde(default)]
    pub pairing: PairingConfig,
    #[serde(default)]
    pub ridge: RidgeConfig,
    #[serde(default)]
    pub ceiling: CeilingConfig,
    #[serde(default)]
    pub probe: ProbeConfig,
    #[serde(default)]
    pub mfcc: MfccConfig,
    #[serde(default)]
    pub trend: TrendConfig,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Root seed; every stage seed is derived from it.
    #[serde(default)]
    pub seed: u64,
}

impl Default for RunConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("empty config parses")
    }
}

fn resolve(base: &Path, p: &mut PathBuf) {
    if p.is_relative() {
        *p = base.join(&*p);
    }
}

/// Rejects ids that cannot be used as a single path component.
pub fn check_component(kind: &str, id: &str) -> Result<(), Error> {
    let ok = !id.is_empty()
        && id != "."
        && id != ".."
        && id.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'));
    if ok {
        Ok(())
    } else {
        Err(Error::schema(kind, format!("`{id}` must be non-empty and use only [A-Za-z0-9._-]")))
    }
}

impl RunConfig {
    /// Reads a config file, resolving relative input paths against
    /// `data_root` (or the file's directory).
    pub fn load(path: &Path, data_root: Option<&Path>) -> Result<Self, Error> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = match data_root {
            Some(r) => r.to_path_buf(),
            None => path.parent().unwrap_or(Path::new(".")).to_path_buf(),
        };
        cfg.resolve_paths(&base);
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        if let Some(d) = self.dataset.as_mut() {
            resolve(base, d);
        }
        for f in &mut self.feature_sets {
            resolve(base, &mut f.root);
        }
        for p in &mut self.probe_sets {
            resolve(base, &mut p.root);
            for l in &mut p.labels {
                resolve(base, l);
            }
        }
        if let Some(c) = self.corpus.as_mut() {
            resolve(base, &mut c.raw);
        }
    }

    /// Applies command-line overrides and propagates the root seed.
    pub fn with_overrides(mut self, seed: Option<u64>, workers: Option<usize>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(w) = workers {
            self.workers = w;
        }
        self.ridge.seed = self.seed;
        self.ceiling.seed = self.seed;
        self.probe.seed = self.seed;
        self
    }

    pub fn validate(&self) -> Result<(), Error> {
        if self.workers == 0 {
            return Err(Error::Config("workers must be >= 1".into()));
        }
        self.pairing.validate()?;
        self.ridge.validate()?;
        self.ceiling.validate()?;
        self.probe.validate()?;
        let mut ids = BTreeSet::new();
        for f in &self.feature_sets {
            check_component("feature_sets.id", &f.id)?;
            if !ids.insert(f.id.as_str()) {
                return Err(Error::schema("feature_sets.id", format!("duplicate id `{}`", f.id)));
            }
            if f.layers.is_empty() {
                return Err(Error::schema("feature_sets.layers", format!("`{}` lists no layers", f.id)));
            }
        }
        let mut ids = BTreeSet::new();
        for p in &self.probe_sets {
            check_component("probe_sets.id", &p.id)?;
            if !ids.insert(p.id.as_str()) {
                return Err(Error::schema("probe_sets.id", format!("duplicate id `{}`", p.id)));
            }
            if p.layers.is_empty() || p.labels.is_empty() {
                return Err(Error::schema("probe_sets", format!("`{}` needs layers and labels", p.id)));
            }
        }
        Ok(())
    }

    pub fn dataset_path(&self) -> Result<&Path, Error> {
        self.dataset
            .as_deref()
            .ok_or_else(|| Error::schema("dataset", "this command needs a dataset manifest"))
    }
}
