//! Where each stage keeps its files under the output directory.

use std::path::{Path, PathBuf};

use brainalign::probing::ProbeTask;

#[derive(Debug, Clone)]
pub struct Layout {
    root: PathBuf,
}

fn layer_dir(l: usize) -> String {
    format!("layer_{l}")
}

impl Layout {
    pub fn new(root: &Path) -> Self {
        Self { root: root.to_path_buf() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn snippets(&self, story: &str) -> PathBuf {
        self.root.join("snippets").join(format!("{story}.csv"))
    }

    /// Paired TR-rate features; a `.json` sidecar sits next to the `.npy`.
    pub fn paired(&self, set: &str, story: &str, layer: usize) -> PathBuf {
        self.root.join("paired").join(set).join(story).join(format!("{}.npy", layer_dir(layer)))
    }

    pub fn encoding_dir(&self, set: &str, participant: &str, layer: usize) -> PathBuf {
        self.root.join("encoding").join(set).join(participant).join(layer_dir(layer))
    }

    pub fn ceiling_dir(&self, participant: &str) -> PathBuf {
        self.root.join("ceiling").join(participant)
    }

    pub fn probe(&self, set: &str, task: ProbeTask, layer: usize) -> PathBuf {
        self.root.join("probes").join(set).join(task.name()).join(format!("{}.json", layer_dir(layer)))
    }

    pub fn corpus(&self) -> PathBuf {
        self.root.join("corpus")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }
}
