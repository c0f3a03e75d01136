//! Snippet extraction, Lanczos resampling onto the fMRI grid and FIR
//! delay embedding.

use nalgebra::DMatrix;
use num_traits::Float;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DatasetManifest, Features, RowAxis, SnippetTable, StimulusStory};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PairingConfig {
    /// Snippet length in seconds.
    pub window_length: f64,
    /// Snippet hop in seconds.
    pub stride: f64,
    pub lanczos_lobes: usize,
    /// Span of the hemodynamic FIR filter in seconds.
    pub hrf_span: f64,
    pub tr_seconds: f64,
}

impl Default for PairingConfig {
    fn default() -> Self {
        Self {
            window_length: 16.0,
            stride: 0.1,
            lanczos_lobes: 3,
            hrf_span: 10.0,
            tr_seconds: 2.0,
        }
    }
}

impl PairingConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.window_length > 0.0) {
            return Err(Error::Config("window_length must be > 0".into()));
        }
        if !(self.stride > 0.0) {
            return Err(Error::Config("stride must be > 0".into()));
        }
        if self.lanczos_lobes < 1 {
            return Err(Error::Config("lanczos_lobes must be >= 1".into()));
        }
        if !(self.tr_seconds > 0.0) {
            return Err(Error::Config("tr_seconds must be > 0".into()));
        }
        if !(self.hrf_span >= self.tr_seconds) {
            return Err(Error::Config(format!(
                "hrf_span ({}) must be >= tr_seconds ({})",
                self.hrf_span, self.tr_seconds
            )));
        }
        Ok(())
    }

    /// Number of lagged copies in the FIR embedding.
    pub fn delay_count(&self) -> Result<usize> {
        let d = (self.hrf_span / self.tr_seconds).round();
        if !(d >= 1.0) {
            return Err(Error::Config(format!(
                "hrf_span {} / tr {} yields no delays",
                self.hrf_span, self.tr_seconds
            )));
        }
        Ok(d as usize)
    }
}

/// Cuts a story into overlapping windows. Window and stride are rounded
/// to whole samples so positions never drift.
pub fn slice_windows(story: &StimulusStory, cfg: &PairingConfig) -> Result<SnippetTable> {
    cfg.validate()?;
    let sr = story.sample_rate;
    let window = (cfg.window_length * sr).round() as usize;
    let stride = ((cfg.stride * sr).round() as usize).max(1);
    let n = story.audio.len();
    if n < window || window == 0 {
        return Err(Error::StoryTooShort {
            duration: story.duration(),
            window: cfg.window_length,
        });
    }
    let count = (n - window) / stride + 1;
    let entries = (0..count)
        .map(|k| {
            let start = k * stride;
            (start as f64 / sr, (start + window) as f64 / sr)
        })
        .collect();
    Ok(SnippetTable {
        story_id: story.id.clone(),
        window_length: cfg.window_length,
        stride: cfg.stride,
        entries,
    })
}

fn sinc<T: Real>(x: T) -> T {
    if x == T::zero() {
        return T::one();
    }
    let px = <T as nalgebra::RealField>::pi() * x;
    Float::sin(px) / px
}

/// Lanczos window `sinc(t)·sinc(t/lobes)` on `|t| < lobes`.
pub fn lanczos_kernel<T: Real>(t: T, lobes: usize) -> T {
    let a = Float::abs(t);
    let n = T::of_usize(lobes);
    if a == T::zero() {
        T::one()
    } else if a >= n || Float::fract(a) == T::zero() {
        T::zero()
    } else {
        sinc(a) * sinc(a / n)
    }
}

/// Interpolates `values` (rows at `source_times`) at `target_times`.
///
/// Offsets are measured in source sampling periods, and each output row's
/// weights are normalized to sum to one.
pub fn lanczos_resample_matrix<T: Real>(
    values: &DMatrix<T>,
    source_times: &[T],
    target_times: &[T],
    lobes: usize,
) -> Result<DMatrix<T>> {
    let n = source_times.len();
    if n == 0 || n != values.nrows() {
        return Err(Error::Shape(format!(
            "{} timestamps for {} rows",
            n,
            values.nrows()
        )));
    }
    if lobes < 1 {
        return Err(Error::Config("lanczos_lobes must be >= 1".into()));
    }
    if source_times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::schema("source_times", "timestamps must be strictly increasing"));
    }
    let first = source_times[0];
    let last = source_times[n - 1];
    let period = if n > 1 {
        (last - first) / T::of_usize(n - 1)
    } else {
        T::one()
    };
    let reach = period * T::of_usize(lobes);

    let mut out = DMatrix::zeros(target_times.len(), values.ncols());
    for (j, &target) in target_times.iter().enumerate() {
        if !(target >= first && target <= last) {
            return Err(Error::Extrapolation {
                target: target.to_f64_lossy(),
                first: first.to_f64_lossy(),
                last: last.to_f64_lossy(),
            });
        }
        let lo = source_times.partition_point(|&t| t <= target - reach);
        let hi = source_times.partition_point(|&t| t < target + reach);
        let weights: Vec<(usize, T)> = (lo..hi)
            .map(|i| (i, lanczos_kernel((target - source_times[i]) / period, lobes)))
            .filter(|&(_, w)| w != T::zero())
            .collect();
        let total = weights.iter().fold(T::zero(), |acc, &(_, w)| acc + w);
        if Float::abs(total) <= T::epsilon() {
            return Err(Error::Numerical(format!(
                "Lanczos weights vanish at target {}",
                target.to_f64_lossy()
            )));
        }
        for (i, w) in weights {
            let w = w / total;
            for c in 0..values.ncols() {
                out[(j, c)] += w * values[(i, c)];
            }
        }
    }
    Ok(out)
}

/// Resamples snippet-rate features onto TR timestamps.
pub fn lanczos_resample<T: Real>(
    series: &Features<T>,
    source_times: &[T],
    target_times: &[T],
    cfg: &PairingConfig,
) -> Result<Features<T>> {
    let values = lanczos_resample_matrix(&series.values, source_times, target_times, cfg.lanczos_lobes)?;
    Features::new(series.source.clone(), RowAxis::Tr, values)
}

/// Stacks strictly lagged copies of TR-rate features: block `d` (1-based)
/// holds row `t − d`, zero-filled before the series starts.
pub fn fir_delay_embed<T: Real>(features: &Features<T>, cfg: &PairingConfig) -> Result<Features<T>> {
    if features.row_axis != RowAxis::Tr {
        return Err(Error::NotDownsampled);
    }
    let delays = cfg.delay_count()?;
    Ok(Features {
        source: features.source.clone(),
        row_axis: RowAxis::Tr,
        values: delay_matrix(&features.values, delays),
    })
}

pub fn delay_matrix<T: Real>(values: &DMatrix<T>, delays: usize) -> DMatrix<T> {
    let (rows, dims) = values.shape();
    let mut out = DMatrix::zeros(rows, dims * delays);
    for d in 1..=delays {
        if d >= rows {
            continue;
        }
        out.view_mut((d, (d - 1) * dims), (rows - d, dims))
            .copy_from(&values.view((0, 0), (rows - d, dims)));
    }
    out
}

/// Acquisition timestamp of every frame: frame `k` ends at `(k + 1)·tr`.
pub fn tr_times(tr_count: usize, tr_seconds: f64) -> Vec<f64> {
    (0..tr_count).map(|k| (k + 1) as f64 * tr_seconds).collect()
}

/// Features for one story on the fMRI grid, restricted to the frames the
/// snippet timeline covers.
#[derive(Debug, Clone)]
pub struct PairedStory<T: Real> {
    /// Index of the first retained frame.
    pub first_tr: usize,
    /// Delay-embedded, TR-aligned features; one row per retained frame.
    pub features: Features<T>,
}

/// Resamples snippet-rate features to the frames of a `tr_count`-frame
/// recording and delay-embeds them. Frames outside the snippet timeline
/// are dropped; callers trim responses by `first_tr` and the row count.
pub fn pair_story<T: Real>(
    snippet_features: &Features<T>,
    snippets: &SnippetTable,
    tr_count: usize,
    cfg: &PairingConfig,
) -> Result<PairedStory<T>> {
    cfg.validate()?;
    if snippet_features.rows() != snippets.len() {
        return Err(Error::RowMismatch {
            features: snippet_features.rows(),
            responses: snippets.len(),
        });
    }
    let times = snippets.timestamps();
    let (first, last) = (times[0], times[times.len() - 1]);
    let slack = 1e-9 * cfg.tr_seconds;
    let frames: Vec<(usize, f64)> = tr_times(tr_count, cfg.tr_seconds)
        .into_iter()
        .enumerate()
        .filter(|&(_, t)| t >= first - slack && t <= last + slack)
        .map(|(k, t)| (k, t.clamp(first, last)))
        .collect();
    if frames.is_empty() {
        return Err(Error::InsufficientData(format!(
            "story `{}`: no fMRI frame falls inside the snippet timeline [{first}, {last}] s",
            snippets.story_id
        )));
    }
    let source: Vec<T> = times.iter().map(|&t| T::of(t)).collect();
    let target: Vec<T> = frames.iter().map(|&(_, t)| T::of(t)).collect();
    let resampled = lanczos_resample(snippet_features, &source, &target, cfg)?;
    Ok(PairedStory {
        first_tr: frames[0].0,
        features: fir_delay_embed(&resampled, cfg)?,
    })
}

/// The manifest's train/test story ids, verbatim.
pub fn split_stories(manifest: &DatasetManifest) -> (Vec<String>, Vec<String>) {
    (manifest.split.train.clone(), manifest.split.test.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::Source;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn story(duration: f64, sr: f64) -> StimulusStory {
        StimulusStory::new("s", vec![0.0; (duration * sr).round() as usize], sr, 1).unwrap()
    }

    fn cfg(window: f64, stride: f64) -> PairingConfig {
        PairingConfig {
            window_length: window,
            stride,
            ..Default::default()
        }
    }

    #[test]
    fn window_equal_to_story_gives_one_snippet() {
        let t = slice_windows(&story(16.0, 100.0), &cfg(16.0, 0.1)).unwrap();
        assert_eq!(t.entries, vec![(0.0, 16.0)]);
    }

    #[test]
    fn eighteen_second_story() {
        let t = slice_windows(&story(18.0, 16000.0), &cfg(16.0, 0.1)).unwrap();
        assert_eq!(t.len(), 21);
        let (s, e) = t.entries[20];
        assert_relative_eq!(s, 2.0, epsilon = 1e-12);
        assert_relative_eq!(e, 18.0, epsilon = 1e-12);
    }

    #[test]
    fn coarse_stride() {
        let t = slice_windows(&story(20.0, 100.0), &cfg(16.0, 2.0)).unwrap();
        assert_eq!(t.entries, vec![(0.0, 16.0), (2.0, 18.0), (4.0, 20.0)]);
        assert_eq!(t.timestamps(), vec![16.0, 18.0, 20.0]);
        assert!(t.to_csv().starts_with("story_id,start,end\ns,0,16\n"));
    }

    #[test]
    fn short_story_rejected() {
        let err = slice_windows(&story(15.0, 100.0), &cfg(16.0, 0.1)).unwrap_err();
        assert!(err.to_string().contains("story shorter than window"));
    }

    #[test]
    fn kernel_values() {
        assert_eq!(lanczos_kernel(0.0f64, 3), 1.0);
        assert_eq!(lanczos_kernel(1.0f64, 3), 0.0);
        assert_eq!(lanczos_kernel(3.5f64, 3), 0.0);
        let expected = (PI / 2.0).sin() / (PI / 2.0) * (PI / 6.0).sin() / (PI / 6.0);
        assert_relative_eq!(expected, 0.60793, epsilon = 1e-5);
        assert_relative_eq!(lanczos_kernel(0.5f64, 3), expected, epsilon = 1e-15);
        assert_relative_eq!(lanczos_kernel(0.5f32, 3), expected as f32, epsilon = 1e-6);
    }

    fn lanczos_closed_form(t: f64, a: f64) -> f64 {
        if t == 0.0 {
            return 1.0;
        }
        if t.abs() >= a {
            return 0.0;
        }
        a * (PI * t).sin() * (PI * t / a).sin() / (PI * PI * t * t)
    }

    #[test]
    fn impulse_half_sample() {
        // unit impulse at t = 0 on a 1 Hz grid spanning [-5, 5]
        let times: Vec<f64> = (-5..=5).map(|k| k as f64).collect();
        let values = DMatrix::from_fn(11, 1, |r, _| if r == 5 { 1.0 } else { 0.0 });
        let out = lanczos_resample_matrix(&values, &times, &[0.5], 3).unwrap();
        let denom: f64 = (-2..=3).map(|k| lanczos_closed_form(0.5 - k as f64, 3.0)).sum();
        let expected = lanczos_closed_form(0.5, 3.0) / denom;
        assert_relative_eq!(out[(0, 0)], expected, max_relative = 1e-12);
    }

    #[test]
    fn resample_identity_and_dc() {
        let times: Vec<f64> = (0..20).map(|k| 16.0 + 0.1 * k as f64).collect();
        let values = DMatrix::from_fn(20, 3, |r, c| ((r * 3 + c) as f64).sin());
        let picks = [0usize, 7, 19];
        let targets: Vec<f64> = picks.iter().map(|&i| times[i]).collect();
        let out = lanczos_resample_matrix(&values, &times, &targets, 3).unwrap();
        for (j, &i) in picks.iter().enumerate() {
            for c in 0..3 {
                assert_relative_eq!(out[(j, c)], values[(i, c)], max_relative = 1e-12, epsilon = 1e-14);
            }
        }
        let constant = DMatrix::from_element(20, 2, 4.25);
        let out = lanczos_resample_matrix(&constant, &times, &[16.03, 17.0, 17.77], 3).unwrap();
        assert!(out.iter().all(|&v| (v - 4.25).abs() <= 4.25 * 1e-12));
    }

    #[test]
    fn extrapolation_rejected() {
        let times = [0.0, 1.0, 2.0];
        let values = DMatrix::zeros(3, 1);
        let err = lanczos_resample_matrix(&values, &times, &[2.5], 3).unwrap_err();
        assert!(err.to_string().contains("extrapolation requested"));
    }

    fn tr_features(col: &[f64]) -> Features<f64> {
        Features::new(
            Source { model: "m".into(), layer: 0 },
            RowAxis::Tr,
            DMatrix::from_column_slice(col.len(), 1, col),
        )
        .unwrap()
    }

    #[test]
    fn fir_shift_semantics() {
        let c = PairingConfig {
            hrf_span: 4.0,
            tr_seconds: 2.0,
            ..Default::default()
        };
        let out = fir_delay_embed(&tr_features(&[1.0, 2.0, 3.0, 4.0, 5.0]), &c).unwrap();
        assert_eq!(out.values.column(0).as_slice(), &[0.0, 1.0, 2.0, 3.0, 4.0]);
        assert_eq!(out.values.column(1).as_slice(), &[0.0, 0.0, 1.0, 2.0, 3.0]);
    }

    #[test]
    fn fir_default_has_five_delays() {
        let c = PairingConfig::default();
        assert_eq!(c.delay_count().unwrap(), 5);
        let f = Features::new(Source { model: "m".into(), layer: 0 }, RowAxis::Tr, DMatrix::from_element(7, 3, 1.0)).unwrap();
        assert_eq!(fir_delay_embed(&f, &c).unwrap().dims(), 15);
    }

    #[test]
    fn fir_rejects_snippet_axis() {
        let f = Features::new(Source { model: "m".into(), layer: 0 }, RowAxis::Snippet, DMatrix::from_element(7, 3, 1.0)).unwrap();
        assert!(matches!(fir_delay_embed(&f, &PairingConfig::default()), Err(Error::NotDownsampled)));
        let bad = PairingConfig { hrf_span: 0.5, tr_seconds: 2.0, ..Default::default() };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn pair_story_trims_uncovered_frames() {
        let st = story(30.0, 100.0);
        let table = slice_windows(&st, &cfg(16.0, 1.0)).unwrap();
        assert_eq!(table.len(), 15);
        let snip = Features::new(
            Source { model: "m".into(), layer: 0 },
            RowAxis::Snippet,
            DMatrix::from_fn(15, 2, |r, c| (r + c) as f64),
        )
        .unwrap();
        let c = PairingConfig { window_length: 16.0, stride: 1.0, ..Default::default() };
        let paired = pair_story(&snip, &table, 15, &c).unwrap();
        // frames end at 2, 4, ..., 30; the timeline covers [16, 30]
        assert_eq!(paired.first_tr, 7);
        assert_eq!(paired.features.rows(), 8);
        assert_eq!(paired.features.dims(), 10);
        // linear ramp survives interpolation in the first lag block at row 1
        assert_relative_eq!(paired.features.values[(1, 0)], 0.0, epsilon = 1e-12);
        assert_relative_eq!(paired.features.values[(2, 0)], 2.0, epsilon = 1e-12);
    }

    proptest! {
        #[test]
        fn kernel_is_even(t in -4.0f64..4.0, lobes in 1usize..5) {
            prop_assert!((lanczos_kernel(t, lobes) - lanczos_kernel(-t, lobes)).abs() <= 1e-15);
        }

        #[test]
        fn window_count(sr in 10u32..200, win in 1u32..2000, extra in 0u32..5000, hop in 1u32..500) {
            let sr = sr as f64;
            let n = (win + extra) as usize;
            let st = StimulusStory::new("s", vec![0.0; n], sr, 1).unwrap();
            let c = cfg(win as f64 / sr, hop as f64 / sr);
            let t = slice_windows(&st, &c).unwrap();
            let expected = ((st.duration() - c.window_length) / c.stride + 1e-9).floor() as usize + 1;
            prop_assert_eq!(t.len(), expected);
            for w in t.entries.windows(2) {
                prop_assert!((w[1].0 - w[0].0 - c.stride).abs() < 1e-9);
            }
            for (s, e) in &t.entries {
                prop_assert!((e - s - c.window_length).abs() < 1e-9);
            }
        }

        #[test]
        fn delay_block_is_shifted_source(rows in 2usize..30, dims in 1usize..4, delays in 1usize..6, seed in any::<u32>()) {
            let values = DMatrix::from_fn(rows, dims, |r, c| ((seed as usize + r * 13 + c * 7) % 17) as f64);
            let out = delay_matrix(&values, delays);
            for d in 1..=delays.min(rows - 1) {
                let block = out.view((d, (d - 1) * dims), (rows - d, dims));
                prop_assert_eq!(block.clone_owned(), values.rows(0, rows - d).clone_owned());
            }
        }
    }
}
