//! MFCC targets for the low-level probing task: Hann-windowed power
//! spectrum, triangular mel filterbank, log compression and an orthonormal
//! DCT-II.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MfccConfig {
    /// Samples per analysis frame (25 ms at 16 kHz).
    pub frame_length: usize,
    /// Samples between frame starts (10 ms at 16 kHz).
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub fmin: f64,
    /// Upper filterbank edge; `None` means Nyquist.
    pub fmax: Option<f64>,
    pub log_floor: f64,
}

impl Default for MfccConfig {
    fn default() -> Self {
        Self {
            frame_length: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 40,
            n_mfcc: 13,
            fmin: 0.0,
            fmax: None,
            log_floor: 1e-10,
        }
    }
}

impl MfccConfig {
    pub fn fmax_for(&self, sample_rate: f64) -> f64 {
        self.fmax.unwrap_or(sample_rate / 2.0)
    }

    pub fn validate(&self, sample_rate: f64) -> Result<()> {
        let fmax = self.fmax_for(sample_rate);
        if self.frame_length == 0 || self.hop == 0 || self.n_mels == 0 || self.n_mfcc == 0 {
            return Err(Error::Config("MFCC sizes must be positive".into()));
        }
        if self.n_mfcc > self.n_mels {
            return Err(Error::Config(format!("n_mfcc {} > n_mels {}", self.n_mfcc, self.n_mels)));
        }
        if self.frame_length > self.fft_size {
            return Err(Error::Config(format!(
                "frame_length {} > fft_size {}",
                self.frame_length, self.fft_size
            )));
        }
        if !(sample_rate > 0.0 && self.fmin >= 0.0 && self.fmin < fmax && fmax <= sample_rate / 2.0) {
            return Err(Error::Config(format!(
                "need 0 <= fmin ({}) < fmax ({fmax}) <= Nyquist ({})",
                self.fmin,
                sample_rate / 2.0
            )));
        }
        if !(self.log_floor > 0.0) {
            return Err(Error::Config("log_floor must be > 0".into()));
        }
        Ok(())
    }
}

pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Periodic Hann window.
pub fn hann<T: Real>(len: usize) -> Vec<T> {
    let two_pi = T::of(2.0 * std::f64::consts::PI);
    let n = T::of_usize(len);
    (0..len)
        .map(|i| T::of(0.5) - T::of(0.5) * Float::cos(two_pi * T::of_usize(i) / n))
        .collect()
}

pub fn frame_count(samples: usize, cfg: &MfccConfig) -> usize {
    if samples < cfg.frame_length {
        0
    } else {
        (samples - cfg.frame_length) / cfg.hop + 1
    }
}

/// Power spectrum `|X_k|²` of every Hann-windowed, zero-padded frame:
/// frames × (fft_size/2 + 1).
pub fn stft_power<T: Real>(audio: &[T], cfg: &MfccConfig) -> Result<DMatrix<T>> {
    if cfg.frame_length == 0 || cfg.hop == 0 || cfg.frame_length > cfg.fft_size {
        return Err(Error::Config("invalid frame/fft sizes".into()));
    }
    let frames = frame_count(audio.len(), cfg);
    if frames == 0 {
        return Err(Error::InsufficientData(format!(
            "audio has {} samples, one frame needs {}",
            audio.len(),
            cfg.frame_length
        )));
    }
    let bins = cfg.fft_size / 2 + 1;
    let window = hann::<T>(cfg.frame_length);
    let fft = FftPlanner::<T>::new().plan_fft_forward(cfg.fft_size);
    let mut buf = vec![Complex::new(T::zero(), T::zero()); cfg.fft_size];
    let mut out = DMatrix::zeros(frames, bins);
    for f in 0..frames {
        let start = f * cfg.hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(T::zero(), T::zero()));
        for (i, (&s, &w)) in audio[start..start + cfg.frame_length].iter().zip(&window).enumerate() {
            buf[i].re = s * w;
        }
        fft.process(&mut buf);
        for k in 0..bins {
            out[(f, k)] = buf[k].norm_sqr();
        }
    }
    Ok(out)
}

/// The `n_mels + 2` filter edge frequencies, equally spaced in mel.
pub fn mel_points_hz(cfg: &MfccConfig, sample_rate: f64) -> Vec<f64> {
    let lo = hz_to_mel(cfg.fmin);
    let hi = hz_to_mel(cfg.fmax_for(sample_rate));
    let steps = (cfg.n_mels + 1) as f64;
    (0..cfg.n_mels + 2)
        .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / steps))
        .collect()
}

/// FFT bin of each mel edge frequency.
pub fn mel_bins(cfg: &MfccConfig, sample_rate: f64) -> Vec<usize> {
    let max_bin = cfg.fft_size / 2;
    mel_points_hz(cfg, sample_rate)
        .into_iter()
        .map(|f| (((cfg.fft_size + 1) as f64 * f / sample_rate).floor() as usize).min(max_bin))
        .collect()
}

/// Triangular filters on the FFT bin grid, `n_mels × (fft_size/2 + 1)`.
/// Filter `m` rises from edge `m` to a peak of 1 at edge `m + 1` and falls
/// to zero at edge `m + 2`.
pub fn mel_filterbank<T: Real>(cfg: &MfccConfig, sample_rate: f64) -> Result<DMatrix<T>> {
    cfg.validate(sample_rate)?;
    let bins = mel_bins(cfg, sample_rate);
    let mut fb = DMatrix::zeros(cfg.n_mels, cfg.fft_size / 2 + 1);
    for m in 0..cfg.n_mels {
        let (lo, mid, hi) = (bins[m], bins[m + 1], bins[m + 2]);
        if lo >= mid || mid >= hi {
            return Err(Error::Config(format!(
                "mel filter {m} has zero support (bins {lo}, {mid}, {hi}); \
                 reduce n_mels or increase fft_size"
            )));
        }
        for k in lo..=mid {
            fb[(m, k)] = T::of_usize(k - lo) / T::of_usize(mid - lo);
        }
        for k in mid..=hi {
            fb[(m, k)] = T::of_usize(hi - k) / T::of_usize(hi - mid);
        }
    }
    Ok(fb)
}

/// Orthonormal DCT-II matrix; row `k` is the `k`-th basis vector.
pub fn dct_matrix<T: Real>(n: usize) -> DMatrix<T> {
    let pi = std::f64::consts::PI;
    DMatrix::from_fn(n, n, |k, i| {
        let scale = if k == 0 { (1.0 / n as f64).sqrt() } else { (2.0 / n as f64).sqrt() };
        T::of(scale * (pi * k as f64 * (2 * i + 1) as f64 / (2 * n) as f64).cos())
    })
}

/// Frames × `n_mfcc` cepstral coefficients.
pub fn mfcc<T: Real>(audio: &[T], cfg: &MfccConfig, sample_rate: f64) -> Result<DMatrix<T>> {
    cfg.validate(sample_rate)?;
    let power = stft_power(audio, cfg)?;
    let fb = mel_filterbank::<T>(cfg, sample_rate)?;
    let dct = dct_matrix::<T>(cfg.n_mels);
    let floor = T::of(cfg.log_floor);
    let energies = &power * fb.transpose();
    let mut out = DMatrix::zeros(power.nrows(), cfg.n_mfcc);
    let mut log_mel = DVector::zeros(cfg.n_mels);
    for f in 0..energies.nrows() {
        for m in 0..cfg.n_mels {
            log_mel[m] = Float::ln(Float::max(energies[(f, m)], floor));
        }
        out[(f, 0)] = dct.row(0).dot(&log_mel.transpose());
        // rows k >= 1 sum to zero, so removing a constant offset leaves them
        // unchanged and makes a flat log-mel vector project to exact zeros
        let offset = log_mel[0];
        let centered = log_mel.map(|v| v - offset);
        for k in 1..cfg.n_mfcc {
            out[(f, k)] = dct.row(k).dot(&centered.transpose());
        }
    }
    Ok(out)
}

/// Clip-level probe target: the MFCC vector averaged over frames.
pub fn clip_mean_mfcc<T: Real>(audio: &[T], cfg: &MfccConfig, sample_rate: f64) -> Result<Vec<T>> {
    let m = mfcc(audio, cfg, sample_rate)?;
    let n = T::of_usize(m.nrows());
    Ok((0..m.ncols()).map(|c| m.column(c).sum() / n).collect())
}
