//! Voxelwise encoding models: cross-validated ridge, Pearson scoring and
//! the per-layer driver that ties them to the train/test story split.

pub mod cv;
pub mod ridge;

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{validate_pairing, Encoding, Features, Responses, Split};
use crate::scalar::Real;

pub use cv::{cross_validate_lambda, cross_validation_scores, fold_bounds};
pub use ridge::{fit_ridge, Ridge, SvdRidge};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FoldScheme {
    /// Contiguous blocks of TRs, so folds respect temporal autocorrelation.
    ContiguousChunks,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RidgeConfig {
    pub lambda_grid: Vec<f64>,
    pub n_folds: usize,
    pub fold_scheme: FoldScheme,
    pub standardize: bool,
    pub seed: u64,
}

/// `count` values log-spaced over `[10^lo, 10^hi]`.
pub fn log_grid(lo: f64, hi: f64, count: usize) -> Vec<f64> {
    if count == 1 {
        return vec![10f64.powf(lo)];
    }
    (0..count)
        .map(|i| 10f64.powf(lo + (hi - lo) * i as f64 / (count - 1) as f64))
        .collect()
}

impl Default for RidgeConfig {
    fn default() -> Self {
        Self {
            lambda_grid: log_grid(0.0, 8.0, 10),
            n_folds: 5,
            fold_scheme: FoldScheme::ContiguousChunks,
            standardize: true,
            seed: 0,
        }
    }
}

impl RidgeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda_grid.is_empty() {
            return Err(Error::Config("lambda_grid must be non-empty".into()));
        }
        if self.lambda_grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
            return Err(Error::Config("lambda_grid values must be finite and >= 0".into()));
        }
        if self.lambda_grid.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::Config("lambda_grid must be sorted ascending without repeats".into()));
        }
        if self.n_folds < 2 {
            return Err(Error::Config("n_folds must be >= 2".into()));
        }
        Ok(())
    }
}

/// Per-voxel correlations plus the voxels where one side was constant.
#[derive(Debug, Clone, PartialEq)]
pub struct PearsonScores<T: Real> {
    pub r: Vec<T>,
    pub zero_variance: Vec<bool>,
}

/// Column-wise Pearson correlation. A column with zero variance on either
/// side scores 0 and is flagged.
pub fn pearson_scores<T: Real>(pred: &DMatrix<T>, truth: &DMatrix<T>) -> Result<PearsonScores<T>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!(
            "prediction {:?} vs truth {:?}",
            pred.shape(),
            truth.shape()
        )));
    }
    if pred.nrows() < 2 {
        return Err(Error::InsufficientData("Pearson r needs >= 2 rows".into()));
    }
    let n = T::of_usize(pred.nrows());
    let mut r = Vec::with_capacity(pred.ncols());
    let mut zero_variance = Vec::with_capacity(pred.ncols());
    for c in 0..pred.ncols() {
        let (a, b) = (pred.column(c), truth.column(c));
        let (ma, mb) = (a.sum() / n, b.sum() / n);
        let (mut sab, mut saa, mut sbb) = (T::zero(), T::zero(), T::zero());
        for (&x, &y) in a.iter().zip(b.iter()) {
            let (dx, dy) = (x - ma, y - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        if saa == T::zero() || sbb == T::zero() {
            r.push(T::zero());
            zero_variance.push(true);
        } else {
            let v = sab / Float::sqrt(saa * sbb);
            r.push(Float::max(-T::one(), Float::min(T::one(), v)));
            zero_variance.push(false);
        }
    }
    Ok(PearsonScores { r, zero_variance })
}

fn stack<'a, T: Real>(parts: impl Iterator<Item = &'a DMatrix<T>>) -> Result<DMatrix<T>> {
    let parts: Vec<&DMatrix<T>> = parts.collect();
    let cols = parts.first().map(|m| m.ncols()).unwrap_or(0);
    if parts.iter().any(|m| m.ncols() != cols) {
        return Err(Error::Shape("stories disagree on column count".into()));
    }
    let rows = parts.iter().map(|m| m.nrows()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let mut at = 0;
    for m in parts {
        out.rows_mut(at, m.nrows()).copy_from(m);
        at += m.nrows();
    }
    Ok(out)
}

fn gather<'a, T: Real>(
    ids: &[String],
    features: &'a BTreeMap<String, Features<T>>,
    responses: &'a BTreeMap<String, Responses<T>>,
) -> Result<(DMatrix<T>, DMatrix<T>)> {
    let mut xs = Vec::with_capacity(ids.len());
    let mut ys = Vec::with_capacity(ids.len());
    for id in ids {
        let f = features
            .get(id)
            .ok_or_else(|| Error::schema("features", format!("no features for story `{id}`")))?;
        let r = responses
            .get(id)
            .ok_or_else(|| Error::schema("responses", format!("no responses for story `{id}`")))?;
        validate_pairing(f, r)?;
        xs.push(&f.values);
        ys.push(&r.values);
    }
    Ok((stack(xs.into_iter())?, stack(ys.into_iter())?))
}

/// Fits one layer's encoding model on the training stories and scores it
/// on the concatenated test stories. Ceiling, normalization and mask are
/// left for the ceiling stage.
pub fn encode_layer<T: Real>(
    features_by_story: &BTreeMap<String, Features<T>>,
    responses_by_story: &BTreeMap<String, Responses<T>>,
    split: &Split,
    cfg: &RidgeConfig,
) -> Result<Encoding<T>> {
    cfg.validate()?;
    let source = features_by_story
        .values()
        .next()
        .ok_or_else(|| Error::schema("features", "no stories supplied"))?
        .source
        .clone();
    let participant = responses_by_story
        .values()
        .next()
        .ok_or_else(|| Error::schema("responses", "no stories supplied"))?
        .participant
        .clone();
    let (x_train, y_train) = gather(&split.train, features_by_story, responses_by_story)?;
    let (x_test, y_test) = gather(&split.test, features_by_story, responses_by_story)?;

    let lambdas = cross_validate_lambda(&x_train, &y_train, cfg)?;
    let model = fit_ridge(&x_train, &y_train, &lambdas, cfg.standardize)?;
    let pred = model.predict(&x_test)?;
    let scores = pearson_scores(&pred, &y_test)?;
    let voxels = scores.r.len();
    Ok(Encoding {
        model: source.model,
        layer: source.layer,
        participant,
        raw_r: scores.r,
        zero_variance: scores.zero_variance,
        lambdas,
        ceiling: None,
        normalized: vec![None; voxels],
        voxel_mask: vec![false; voxels],
    })
}
