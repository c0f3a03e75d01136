//! Slow, direct reference implementations used to check the library.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use std::f64::consts::PI;

/// Ridge weights from the normal equations `(XᵀX + λI) w = Xᵀy`.
pub fn ridge_normal_equations(x: &DMatrix<f64>, y: &DVector<f64>, lambda: f64) -> DVector<f64> {
    let f = x.ncols();
    let gram = x.transpose() * x + DMatrix::<f64>::identity(f, f) * lambda;
    gram.cholesky()
        .expect("regularized Gram matrix is positive definite")
        .solve(&(x.transpose() * y))
}

/// Pearson r from its definition, two passes.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}

pub struct MfccRecipe {
    pub sample_rate: f64,
    pub frame_length: usize,
    pub hop: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub n_mfcc: usize,
    pub log_floor: f64,
}

impl Default for MfccRecipe {
    fn default() -> Self {
        Self {
            sample_rate: 16_000.0,
            frame_length: 400,
            hop: 160,
            fft_size: 512,
            n_mels: 40,
            n_mfcc: 13,
            log_floor: 1e-10,
        }
    }
}

/// MFCCs by direct summation: periodic Hann window, O(N²) DFT, HTK mel
/// triangles snapped to FFT bins (peak 1), natural log with a floor, and
/// an orthonormal DCT-II. Frames × coefficients.
pub fn naive_mfcc(audio: &[f64], r: &MfccRecipe) -> DMatrix<f64> {
    let frames = (audio.len() - r.frame_length) / r.hop + 1;
    let bins = r.fft_size / 2 + 1;
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let inv = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(r.sample_rate / 2.0);
    let edges: Vec<usize> = (0..r.n_mels + 2)
        .map(|i| {
            let hz = inv(top * i as f64 / (r.n_mels + 1) as f64);
            (((r.fft_size + 1) as f64 * hz / r.sample_rate).floor() as usize).min(r.fft_size / 2)
        })
        .collect();
    let tri = |m: usize, k: usize| -> f64 {
        let (lo, mid, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        if k >= lo && k <= mid {
            (k - lo) as f64 / (mid - lo) as f64
        } else if k > mid && k <= hi {
            (hi - k) as f64 / (hi - mid) as f64
        } else {
            0.0
        }
    };
    let mut out = DMatrix::zeros(frames, r.n_mfcc);
    for f in 0..frames {
        let frame: Vec<f64> = (0..r.frame_length)
            .map(|i| {
                let w = 0.5 - 0.5 * (2.0 * PI * i as f64 / r.frame_length as f64).cos();
                audio[f * r.hop + i] * w
            })
            .collect();
        let power: Vec<f64> = (0..bins)
            .map(|k| {
                let (mut re, mut im) = (0.0, 0.0);
                for (n, &v) in frame.iter().enumerate() {
                    let ang = -2.0 * PI * (k * n) as f64 / r.fft_size as f64;
                    re += v * ang.cos();
                    im += v * ang.sin();
                }
                re * re + im * im
            })
            .collect();
        let log_mel: Vec<f64> = (0..r.n_mels)
            .map(|m| {
                let e: f64 = (0..bins).map(|k| tri(m, k) * power[k]).sum();
                e.max(r.log_floor).ln()
            })
            .collect();
        for k in 0..r.n_mfcc {
            let scale = if k == 0 { (1.0 / r.n_mels as f64).sqrt() } else { (2.0 / r.n_mels as f64).sqrt() };
            out[(f, k)] = scale
                * log_mel
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| v * (PI * k as f64 * (2 * i + 1) as f64 / (2 * r.n_mels) as f64).cos())
                    .sum::<f64>();
        }
    }
    out
}

/// Lanczos interpolation by direct summation over every source sample,
/// with the kernel written out from `sinc(t)·sinc(t/a)`.
pub fn lanczos_direct(values: &[f64], source: &[f64], target: f64, lobes: usize) -> f64 {
    let period = (source[source.len() - 1] - source[0]) / (source.len() - 1) as f64;
    let a = lobes as f64;
    let sinc = |x: f64| if x == 0.0 { 1.0 } else { (PI * x).sin() / (PI * x) };
    let (mut num, mut den) = (0.0, 0.0);
    for (v, s) in values.iter().zip(source) {
        let t = (target - s) / period;
        let w = if t.abs() < a { sinc(t) * sinc(t / a) } else { 0.0 };
        num += w * v;
        den += w;
    }
    num / den
}

/// Largest absolute difference relative to the largest reference value.
pub fn max_rel(got: &DMatrix<f64>, want: &DMatrix<f64>) -> f64 {
    let scale = want.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    got.iter().zip(want.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / scale
}
