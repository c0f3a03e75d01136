//! Noise ceilings, voxel filtering, ceiling-normalized alignment and ROI
//! aggregation.

use nalgebra::DMatrix;
use num_traits::Float;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::encoding::pearson_scores;
use crate::error::{Error, Result};
use crate::model::{Encoding, RoiAtlas};
use crate::scalar::Real;
use crate::seed::indexed_rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CeilingMethod {
    /// Spearman-Brown corrected correlation between two halves of the
    /// repeats (or odd/even frames of a single recording); correlation
    /// units.
    SplitHalf,
    /// Fraction of variance explained by the across-repeat mean; variance
    /// units.
    RepeatExplainableVariance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CeilingConfig {
    pub method: CeilingMethod,
    pub n_splits: usize,
    pub seed: u64,
    pub ceiling_floor: f64,
    pub voxel_keep_threshold: f64,
}

impl Default for CeilingConfig {
    fn default() -> Self {
        Self {
            method: CeilingMethod::SplitHalf,
            n_splits: 50,
            seed: 0,
            ceiling_floor: 0.05,
            voxel_keep_threshold: 0.2,
        }
    }
}

impl CeilingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.ceiling_floor > 0.0 && self.ceiling_floor < 1.0) {
            return Err(Error::Config("ceiling_floor must lie in (0, 1)".into()));
        }
        if !(self.voxel_keep_threshold >= 0.0 && self.voxel_keep_threshold < 1.0) {
            return Err(Error::Config("voxel_keep_threshold must lie in [0, 1)".into()));
        }
        if self.n_splits == 0 {
            return Err(Error::Config("n_splits must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CeilingEstimate<T: Real> {
    /// Per-voxel ceiling in `[0, 1]`.
    pub values: Vec<T>,
    /// Voxels whose raw estimate fell outside `[0, 1]`.
    pub clamped: usize,
    pub method: CeilingMethod,
    /// Random splits actually averaged (1 when the split is unique).
    pub splits_used: usize,
}

fn spearman_brown<T: Real>(r: T) -> T {
    let one = T::one();
    if r <= -one + T::epsilon() {
        return -one;
    }
    let c = (r + r) / (one + r);
    Float::max(-one, Float::min(one, c))
}

fn mean_of<T: Real>(mats: &[&DMatrix<T>]) -> DMatrix<T> {
    let mut acc = mats[0].clone();
    for m in &mats[1..] {
        acc += *m;
    }
    acc / T::of_usize(mats.len())
}

fn clamp_unit<T: Real>(raw: Vec<T>) -> (Vec<T>, usize) {
    let mut clamped = 0;
    let values = raw
        .into_iter()
        .map(|v| {
            if v < T::zero() || v > T::one() {
                clamped += 1;
            }
            Float::max(T::zero(), Float::min(T::one(), v))
        })
        .collect();
    (values, clamped)
}

/// Estimates a per-voxel noise ceiling from `recordings` of the same
/// stimulus (each TRs × voxels). With the split-half method a single
/// recording is split into its even and odd frames.
pub fn estimate_noise_ceiling<T: Real>(recordings: &[DMatrix<T>], cfg: &CeilingConfig) -> Result<CeilingEstimate<T>> {
    cfg.validate()?;
    let first = recordings
        .first()
        .ok_or_else(|| Error::InsufficientData("no recordings for the noise ceiling".into()))?;
    if recordings.iter().any(|m| m.shape() != first.shape()) {
        return Err(Error::Shape("repeats must share one TRs × voxels shape".into()));
    }
    match cfg.method {
        CeilingMethod::SplitHalf => split_half(recordings, cfg),
        CeilingMethod::RepeatExplainableVariance => explainable_variance(recordings),
    }
}

fn split_half<T: Real>(recordings: &[DMatrix<T>], cfg: &CeilingConfig) -> Result<CeilingEstimate<T>> {
    let voxels = recordings[0].ncols();
    let (sum, splits) = if recordings.len() == 1 {
        let m = &recordings[0];
        let pairs = m.nrows() / 2;
        if pairs < 2 {
            return Err(Error::InsufficientData(format!(
                "odd/even split needs >= 4 frames, got {}",
                m.nrows()
            )));
        }
        let even: Vec<usize> = (0..pairs).map(|i| 2 * i).collect();
        let odd: Vec<usize> = (0..pairs).map(|i| 2 * i + 1).collect();
        let r = pearson_scores(&m.select_rows(&even), &m.select_rows(&odd))?;
        (r.r.into_iter().map(spearman_brown).collect::<Vec<T>>(), 1)
    } else {
        let reps = recordings.len();
        let splits = if reps == 2 { 1 } else { cfg.n_splits };
        let mut sum = vec![T::zero(); voxels];
        let mut order: Vec<usize> = (0..reps).collect();
        for s in 0..splits {
            order.sort_unstable();
            order.shuffle(&mut indexed_rng(cfg.seed, "noise-ceiling/split-half", s as u64));
            let (a, b) = order.split_at(reps / 2);
            let half_a: Vec<&DMatrix<T>> = a.iter().map(|&i| &recordings[i]).collect();
            let half_b: Vec<&DMatrix<T>> = b.iter().map(|&i| &recordings[i]).collect();
            let r = pearson_scores(&mean_of(&half_a), &mean_of(&half_b))?;
            for (acc, rv) in sum.iter_mut().zip(r.r) {
                *acc += spearman_brown(rv);
            }
        }
        let n = T::of_usize(splits);
        (sum.into_iter().map(|v| v / n).collect(), splits)
    };
    let (values, clamped) = clamp_unit(sum);
    Ok(CeilingEstimate {
        values,
        clamped,
        method: CeilingMethod::SplitHalf,
        splits_used: splits,
    })
}

fn explainable_variance<T: Real>(recordings: &[DMatrix<T>]) -> Result<CeilingEstimate<T>> {
    let reps = recordings.len();
    if reps < 2 {
        return Err(Error::InsufficientData(
            "explainable variance needs >= 2 stimulus repeats".into(),
        ));
    }
    let (trs, voxels) = recordings[0].shape();
    if trs < 2 {
        return Err(Error::InsufficientData("explainable variance needs >= 2 frames".into()));
    }
    let refs: Vec<&DMatrix<T>> = recordings.iter().collect();
    let mean = mean_of(&refs);
    let total_n = T::of_usize(trs * reps);
    let mut raw = Vec::with_capacity(voxels);
    for v in 0..voxels {
        let grand = mean.column(v).sum() / T::of_usize(trs);
        let (mut resid, mut total) = (T::zero(), T::zero());
        for rec in recordings {
            for t in 0..trs {
                let x = rec[(t, v)];
                resid += (x - mean[(t, v)]) * (x - mean[(t, v)]);
                total += (x - grand) * (x - grand);
            }
        }
        // unbiased: residual has trs·(reps − 1) degrees of freedom
        let resid_var = resid / T::of_usize(trs * (reps - 1));
        let total_var = total / (total_n - T::one());
        raw.push(if total_var == T::zero() {
            T::zero()
        } else {
            T::one() - resid_var / total_var
        });
    }
    let (values, clamped) = clamp_unit(raw);
    Ok(CeilingEstimate {
        values,
        clamped,
        method: CeilingMethod::RepeatExplainableVariance,
        splits_used: 1,
    })
}

/// Voxels whose ceiling reaches the keep threshold.
pub fn filter_voxels<T: Real>(ceiling: &[T], cfg: &CeilingConfig) -> Vec<bool> {
    let threshold = T::of(cfg.voxel_keep_threshold);
    ceiling.iter().map(|&c| c >= threshold).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Normalized<T: Real> {
    /// `raw / max(ceiling, floor)` for kept voxels, `None` elsewhere.
    pub values: Vec<Option<T>>,
    /// Kept voxels whose ceiling was raised to the floor.
    pub floored: Vec<bool>,
}

impl<T: Real> Normalized<T> {
    pub fn floored_count(&self) -> usize {
        self.floored.iter().filter(|&&f| f).count()
    }
}

pub fn normalize_alignment<T: Real>(raw_r: &[T], ceiling: &[T], mask: &[bool], cfg: &CeilingConfig) -> Result<Normalized<T>> {
    if raw_r.len() != ceiling.len() || raw_r.len() != mask.len() {
        return Err(Error::Shape(format!(
            "raw {} / ceiling {} / mask {} lengths differ",
            raw_r.len(),
            ceiling.len(),
            mask.len()
        )));
    }
    let floor = T::of(cfg.ceiling_floor);
    let mut values = Vec::with_capacity(raw_r.len());
    let mut floored = Vec::with_capacity(raw_r.len());
    for ((&r, &c), &keep) in raw_r.iter().zip(ceiling).zip(mask) {
        if keep {
            values.push(Some(r / Float::max(c, floor)));
            floored.push(c < floor);
        } else {
            values.push(None);
            floored.push(false);
        }
    }
    let out = Normalized { values, floored };
    if out.floored_count() > 0 {
        log::warn!("{} voxel ceiling(s) raised to the floor {}", out.floored_count(), cfg.ceiling_floor);
    }
    Ok(out)
}

/// Mean normalized alignment over the kept voxels of a region, with the
/// number of voxels averaged.
pub fn aggregate_roi<T: Real>(normalized: &[Option<T>], atlas: &RoiAtlas, region: &str, mask: &[bool]) -> Result<(T, usize)> {
    let indices = atlas.region(region)?;
    aggregate_indices(normalized, indices, mask, region)
}

pub fn aggregate_indices<T: Real>(normalized: &[Option<T>], indices: &[usize], mask: &[bool], region: &str) -> Result<(T, usize)> {
    let mut sum = T::zero();
    let mut count = 0usize;
    for &i in indices {
        if i >= normalized.len() || i >= mask.len() {
            return Err(Error::schema(
                format!("regions.{region}"),
                format!("voxel index {i} out of range for {} voxels", normalized.len()),
            ));
        }
        if let (true, Some(v)) = (mask[i], normalized[i]) {
            sum += v;
            count += 1;
        }
    }
    if count == 0 {
        return Err(Error::EmptyRoi(region.to_string()));
    }
    Ok((sum / T::of_usize(count), count))
}

/// Fills the ceiling, mask and normalized fields of an encoding result.
pub fn attach_ceiling<T: Real>(result: &mut Encoding<T>, ceiling: &[T], cfg: &CeilingConfig) -> Result<Normalized<T>> {
    if ceiling.len() != result.voxels() {
        return Err(Error::Shape(format!(
            "ceiling has {} voxels, encoding has {}",
            ceiling.len(),
            result.voxels()
        )));
    }
    let mask = filter_voxels(ceiling, cfg);
    let norm = normalize_alignment(&result.raw_r, ceiling, &mask, cfg)?;
    result.ceiling = Some(ceiling.to_vec());
    result.voxel_mask = mask;
    result.normalized = norm.values.clone();
    Ok(norm)
}
