//! Linear probes on clip-level layer representations: ridge regression
//! for MFCC targets, multinomial logistic regression for word identity and
//! sentence type, and independent binary logistic regressions for phoneme
//! occurrence.

pub mod logistic;
pub mod metrics;

use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::encoding::ridge::{fit_ridge, Standardizer};
use crate::error::{Error, Result};
use crate::model::read_json;
use crate::npy;
use crate::scalar::Real;
use crate::seed::config_hash;

pub use logistic::{minimize, numerical_gradient, Binary, Multinomial, Objective};
pub use metrics::{multiclass_f1, multilabel_f1, r_squared, Counts, F1Average, F1Scores, RSquared};

pub const COMMAND_COUNT: usize = 35;
pub const PHONEME_COUNT: usize = 39;
pub const SENTENCE_TYPES: [&str; 3] = ["SA", "SX", "SI"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProbeTask {
    Mfcc,
    WordIdentity,
    Phonemes,
    SentenceType,
}

impl ProbeTask {
    pub const ALL: [ProbeTask; 4] = [
        ProbeTask::Mfcc,
        ProbeTask::WordIdentity,
        ProbeTask::Phonemes,
        ProbeTask::SentenceType,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProbeTask::Mfcc => "mfcc",
            ProbeTask::WordIdentity => "word_identity",
            ProbeTask::Phonemes => "phonemes",
            ProbeTask::SentenceType => "sentence_type",
        }
    }

    /// Size of the label vocabulary; `None` for regression.
    pub fn label_count(self) -> Option<usize> {
        match self {
            ProbeTask::Mfcc => None,
            ProbeTask::WordIdentity => Some(COMMAND_COUNT),
            ProbeTask::Phonemes => Some(PHONEME_COUNT),
            ProbeTask::SentenceType => Some(SENTENCE_TYPES.len()),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Targets<T: Real> {
    /// Clips × target dimensions.
    Regression(DMatrix<T>),
    /// One class index per clip.
    Classes(Vec<usize>),
    /// Clips × labels occurrence matrix.
    Labels(DMatrix<bool>),
}

impl<T: Real> Targets<T> {
    pub fn rows(&self) -> usize {
        match self {
            Targets::Regression(m) => m.nrows(),
            Targets::Classes(v) => v.len(),
            Targets::Labels(m) => m.nrows(),
        }
    }
}

/// Everything about a probe dataset except the layer features.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeLabels<T: Real> {
    pub task: ProbeTask,
    /// Label names, indexed like the targets; empty for regression.
    pub classes: Vec<String>,
    pub targets: Targets<T>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

impl<T: Real> ProbeLabels<T> {
    pub fn validate(&self) -> Result<()> {
        let n = self.targets.rows();
        let task = self.task.name();
        match (&self.targets, self.task.label_count()) {
            (Targets::Regression(_), None) => {}
            (Targets::Classes(v), Some(k)) if self.task != ProbeTask::Phonemes => {
                if let Some(bad) = v.iter().find(|&&c| c >= k) {
                    return Err(Error::schema("labels", format!("{task}: class {bad} outside [0, {k})")));
                }
            }
            (Targets::Labels(m), Some(k)) if self.task == ProbeTask::Phonemes => {
                if m.ncols() != k {
                    return Err(Error::schema("label_sets", format!("{task} needs {k} label columns, got {}", m.ncols())));
                }
            }
            _ => return Err(Error::schema("task", format!("targets do not match task `{task}`"))),
        }
        if let Some(k) = self.task.label_count() {
            if !self.classes.is_empty() && self.classes.len() != k {
                return Err(Error::schema("classes", format!("{task} needs {k} class names, got {}", self.classes.len())));
            }
        }
        if self.train.is_empty() || self.test.is_empty() {
            return Err(Error::schema("split", "train and test must both be non-empty"));
        }
        let mut seen = vec![false; n];
        for &i in self.train.iter().chain(&self.test) {
            if i >= n {
                return Err(Error::schema("split", format!("clip index {i} out of range for {n} clips")));
            }
            if seen[i] {
                return Err(Error::schema("split", format!("clip {i} listed twice")));
            }
            seen[i] = true;
        }
        Ok(())
    }
}

/// Clip features for one layer together with the task labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Real> {
    pub x: DMatrix<T>,
    pub labels: ProbeLabels<T>,
}

impl<T: Real> Dataset<T> {
    pub fn new(x: DMatrix<T>, labels: ProbeLabels<T>) -> Result<Self> {
        labels.validate()?;
        if x.nrows() != labels.targets.rows() {
            return Err(Error::Shape(format!(
                "{} feature rows vs {} labelled clips",
                x.nrows(),
                labels.targets.rows()
            )));
        }
        crate::encoding::ridge::ensure_finite(&x, "probe features")?;
        Ok(Self { x, labels })
    }

    pub fn task(&self) -> ProbeTask {
        self.labels.task
    }

    fn split_x(&self) -> (DMatrix<T>, DMatrix<T>) {
        (self.x.select_rows(&self.labels.train), self.x.select_rows(&self.labels.test))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeConfig {
    pub l2_penalty: f64,
    pub max_iters: usize,
    pub tolerance: f64,
    pub multilabel_threshold: f64,
    pub f1_average: F1Average,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            l2_penalty: 1e-3,
            max_iters: 500,
            tolerance: 1e-6,
            multilabel_threshold: 0.5,
            f1_average: F1Average::Macro,
            seed: 0,
        }
    }
}

impl ProbeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.l2_penalty >= 0.0) || !self.l2_penalty.is_finite() {
            return Err(Error::Config("l2_penalty must be finite and >= 0".into()));
        }
        if !(self.multilabel_threshold > 0.0 && self.multilabel_threshold < 1.0) {
            return Err(Error::Config("multilabel_threshold must lie in (0, 1)".into()));
        }
        if !(self.tolerance >= 0.0) {
            return Err(Error::Config("tolerance must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassifierOutcome {
    pub scores: F1Scores,
    /// Labels with no positive training example (multi-label) or classes
    /// absent from training (single-label).
    pub unseen_in_train: Vec<usize>,
    pub converged: bool,
}

fn standardized_split<T: Real>(data: &Dataset<T>) -> (DMatrix<T>, DMatrix<T>) {
    let (train, test) = data.split_x();
    let s = Standardizer::fit(&train, true);
    (
        logistic::with_bias(&s.transform(&train)),
        logistic::with_bias(&s.transform(&test)),
    )
}

/// Ridge regression with `λ = l2_penalty`; mean test R² over target
/// dimensions.
pub fn fit_regression_probe<T: Real>(data: &Dataset<T>, cfg: &ProbeConfig) -> Result<RSquared<T>> {
    cfg.validate()?;
    let Targets::Regression(y) = &data.labels.targets else {
        return Err(Error::schema("task", "regression probe needs continuous targets"));
    };
    let (x_train, x_test) = data.split_x();
    let y_train = y.select_rows(&data.labels.train);
    let y_test = y.select_rows(&data.labels.test);
    let model = fit_ridge(&x_train, &y_train, &vec![T::of(cfg.l2_penalty); y.ncols()], true)?;
    let r2 = r_squared(&model.predict(&x_test)?, &y_test)?;
    if r2.excluded() > 0 {
        log::warn!("{} constant target dimension(s) excluded from R²", r2.excluded());
    }
    Ok(r2)
}

/// Multinomial logistic probe scored by F1 on the test clips.
pub fn fit_multiclass_probe<T: Real>(data: &Dataset<T>, cfg: &ProbeConfig) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    let Targets::Classes(labels) = &data.labels.targets else {
        return Err(Error::schema("task", "multiclass probe needs class labels"));
    };
    let k = data.task().label_count().expect("classification task");
    let train_labels: Vec<usize> = data.labels.train.iter().map(|&i| labels[i]).collect();
    let test_labels: Vec<usize> = data.labels.test.iter().map(|&i| labels[i]).collect();
    let mut present = vec![false; k];
    for &c in &train_labels {
        present[c] = true;
    }
    if present.iter().filter(|&&p| p).count() < 2 {
        return Err(Error::InsufficientData("multiclass probe needs >= 2 classes in train".into()));
    }
    let unseen: Vec<usize> = {
        let mut u: Vec<usize> = test_labels.iter().copied().filter(|&c| !present[c]).collect();
        u.sort_unstable();
        u.dedup();
        u
    };
    if !unseen.is_empty() {
        log::warn!("classes {unseen:?} appear in test but not in train; they score 0");
    }
    let (x_train, x_test) = standardized_split(data);
    let obj = Multinomial::new(x_train, train_labels, k, T::of(cfg.l2_penalty))?;
    let fit = minimize(&obj, DVector::zeros(obj.dim()), cfg.max_iters, T::of(cfg.tolerance));
    let pred = logistic::predict_classes(&x_test, &fit.params, k);
    Ok(ClassifierOutcome {
        scores: multiclass_f1(&test_labels, &pred, k)?,
        unseen_in_train: unseen,
        converged: fit.converged,
    })
}

/// One binary logistic probe per label; labels never positive in train
/// are skipped and left out of both F1 averages.
pub fn fit_multilabel_probe<T: Real>(data: &Dataset<T>, cfg: &ProbeConfig) -> Result<ClassifierOutcome> {
    cfg.validate()?;
    fit_multilabel_with_threshold(data, cfg, T::of(cfg.multilabel_threshold))
}

/// [`fit_multilabel_probe`] with an explicit decision threshold, which may
/// sit at the limits 0 or 1.
pub fn fit_multilabel_with_threshold<T: Real>(data: &Dataset<T>, cfg: &ProbeConfig, threshold: T) -> Result<ClassifierOutcome> {
    let Targets::Labels(y) = &data.labels.targets else {
        return Err(Error::schema("task", "multi-label probe needs a label matrix"));
    };
    let y_train = y.select_rows(&data.labels.train);
    let y_test = y.select_rows(&data.labels.test);
    let (x_train, x_test) = standardized_split(data);
    let mut include = vec![true; y.ncols()];
    let mut pred = DMatrix::from_element(y_test.nrows(), y.ncols(), false);
    let mut converged = true;
    for j in 0..y.ncols() {
        let labels: Vec<bool> = y_train.column(j).iter().copied().collect();
        if !labels.iter().any(|&l| l) {
            include[j] = false;
            continue;
        }
        let obj = Binary {
            x: x_train.clone(),
            labels,
            l2: T::of(cfg.l2_penalty),
        };
        let fit = minimize(&obj, DVector::zeros(obj.dim()), cfg.max_iters, T::of(cfg.tolerance));
        converged &= fit.converged;
        for (r, p) in logistic::predict_binary(&x_test, &fit.params, threshold).into_iter().enumerate() {
            pred[(r, j)] = p;
        }
    }
    let skipped: Vec<usize> = (0..include.len()).filter(|&j| !include[j]).collect();
    if !skipped.is_empty() {
        log::warn!("labels {skipped:?} never positive in train; skipped");
    }
    Ok(ClassifierOutcome {
        scores: multilabel_f1(&y_test, &pred, &include)?,
        unseen_in_train: skipped,
        converged,
    })
}

/// One probe result as persisted by the command-line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeRecord {
    pub task: ProbeTask,
    pub model: String,
    pub layer: usize,
    /// R² for regression, otherwise F1 under the configured average.
    pub metric: f64,
    pub macro_f1: Option<f64>,
    pub micro_f1: Option<f64>,
    pub config_hash: String,
    /// Excluded target dimensions or labels/classes unseen in training.
    pub flagged: Vec<usize>,
    pub converged: bool,
}

/// Dispatches to the probe for `labels.task` on one layer's features.
pub fn probe_layer<T: Real>(model: &str, layer: usize, features: &DMatrix<T>, labels: &ProbeLabels<T>, cfg: &ProbeConfig) -> Result<ProbeRecord> {
    let data = Dataset::new(features.clone(), labels.clone())?;
    let hash = config_hash(cfg);
    let base = ProbeRecord {
        task: labels.task,
        model: model.to_string(),
        layer,
        metric: 0.0,
        macro_f1: None,
        micro_f1: None,
        config_hash: hash,
        flagged: Vec::new(),
        converged: true,
    };
    Ok(match labels.task {
        ProbeTask::Mfcc => {
            let r2 = fit_regression_probe(&data, cfg)?;
            ProbeRecord {
                metric: r2.mean.to_f64_lossy(),
                flagged: (0..r2.per_dim.len()).filter(|&d| r2.per_dim[d].is_none()).collect(),
                ..base
            }
        }
        ProbeTask::WordIdentity | ProbeTask::SentenceType | ProbeTask::Phonemes => {
            let out = if labels.task == ProbeTask::Phonemes {
                fit_multilabel_probe(&data, cfg)?
            } else {
                fit_multiclass_probe(&data, cfg)?
            };
            ProbeRecord {
                metric: out.scores.get(cfg.f1_average),
                macro_f1: Some(out.scores.macro_f1),
                micro_f1: Some(out.scores.micro_f1),
                flagged: out.unseen_in_train,
                converged: out.converged,
                ..base
            }
        }
    })
}

/// On-disk form of [`ProbeLabels`]: a JSON file with an optional NPY
/// sidecar for regression targets.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabelsFile {
    pub task: ProbeTask,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub classes: Vec<String>,
    /// Clip ids, in row order.
    pub clips: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub labels: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_sets: Option<Vec<Vec<usize>>>,
    /// Regression targets, relative to the JSON file.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub targets: Option<PathBuf>,
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

pub fn load_labels(path: &Path) -> Result<ProbeLabels<f64>> {
    let file: LabelsFile = read_json(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let rows = file.clips.len();
    let targets = match (file.task, &file.labels, &file.label_sets, &file.targets) {
        (ProbeTask::Mfcc, None, None, Some(t)) => {
            let m = npy::read_matrix(&base.join(t))?;
            if m.nrows() != rows {
                return Err(Error::Shape(format!("{} target rows vs {rows} clips", m.nrows())));
            }
            Targets::Regression(m)
        }
        (ProbeTask::Phonemes, None, Some(sets), None) => {
            if sets.len() != rows {
                return Err(Error::Shape(format!("{} label sets vs {rows} clips", sets.len())));
            }
            let mut m = DMatrix::from_element(rows, PHONEME_COUNT, false);
            for (r, set) in sets.iter().enumerate() {
                for &j in set {
                    if j >= PHONEME_COUNT {
                        return Err(Error::schema("label_sets", format!("label {j} outside [0, {PHONEME_COUNT})")));
                    }
                    m[(r, j)] = true;
                }
            }
            Targets::Labels(m)
        }
        (ProbeTask::WordIdentity | ProbeTask::SentenceType, Some(l), None, None) => {
            if l.len() != rows {
                return Err(Error::Shape(format!("{} labels vs {rows} clips", l.len())));
            }
            Targets::Classes(l.clone())
        }
        (task, ..) => {
            return Err(Error::schema(
                "task",
                format!("`{}` needs exactly one of labels, label_sets or targets matching the task", task.name()),
            ))
        }
    };
    let labels = ProbeLabels {
        task: file.task,
        classes: file.classes,
        targets,
        train: file.train,
        test: file.test,
    };
    labels.validate()?;
    Ok(labels)
}
