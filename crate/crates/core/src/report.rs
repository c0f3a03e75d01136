//! Layer curves across participants, trend labels and the CSV/JSON/SVG
//! report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{CurvePoint, LayerCurve};
use crate::npy::write_atomic;

/// Summarizes `participant → layer → value` into a mean ± stderr curve.
/// Every participant must report the same layers.
pub fn build_layer_curve(
    metric: &str,
    model: &str,
    variant: &str,
    values: &BTreeMap<String, BTreeMap<usize, f64>>,
) -> Result<LayerCurve> {
    let mut participants = values.iter();
    let (first_id, first) = participants
        .next()
        .ok_or_else(|| Error::InsufficientData(format!("no participants for {metric}/{model}/{variant}")))?;
    if first.is_empty() {
        return Err(Error::InsufficientData(format!("participant `{first_id}` has no layers")));
    }
    for (id, layers) in participants {
        if !layers.keys().eq(first.keys()) {
            return Err(Error::Shape(format!(
                "participant `{id}` reports layers {:?}, `{first_id}` reports {:?}",
                layers.keys().collect::<Vec<_>>(),
                first.keys().collect::<Vec<_>>()
            )));
        }
    }
    let n = values.len();
    if n == 1 {
        log::warn!("{metric}/{model}/{variant}: single participant, stderr set to 0");
    }
    let points = first
        .keys()
        .map(|&layer| {
            let xs: Vec<f64> = values.values().map(|m| m[&layer]).collect();
            let mean = xs.iter().sum::<f64>() / n as f64;
            let stderr = if n < 2 {
                0.0
            } else {
                let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
                var.sqrt() / (n as f64).sqrt()
            };
            (layer, CurvePoint { mean, stderr, n })
        })
        .collect();
    Ok(LayerCurve {
        metric: metric.to_string(),
        model: model.to_string(),
        variant: variant.to_string(),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Rising,
    Bell,
    Flat,
    Falling,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendConfig {
    /// Required gap between bin means, in pooled standard errors.
    pub separation: f64,
    pub min_layers: usize,
}

impl Default for TrendConfig {
    fn default() -> Self {
        Self {
            separation: 1.0,
            min_layers: 6,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub layers: usize,
    pub mean: f64,
    pub stderr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trend {
    pub label: TrendLabel,
    pub early: Bin,
    pub middle: Bin,
    pub late: Bin,
    pub peak_layer: usize,
    pub peak_value: f64,
    pub separation: f64,
}

/// Early/middle/late bin sizes; a remainder of one goes to the middle and
/// a remainder of two to the ends, so reversing the layers swaps the end
/// bins exactly.
pub fn thirds(n: usize) -> [usize; 3] {
    let b = n / 3;
    match n % 3 {
        0 => [b, b, b],
        1 => [b, b + 1, b],
        _ => [b + 1, b, b + 1],
    }
}

fn bin(points: &[&CurvePoint]) -> Bin {
    let k = points.len() as f64;
    Bin {
        layers: points.len(),
        mean: points.iter().map(|p| p.mean).sum::<f64>() / k,
        stderr: points.iter().map(|p| p.stderr * p.stderr).sum::<f64>().sqrt() / k,
    }
}

pub fn classify_trend(curve: &LayerCurve, cfg: &TrendConfig) -> Result<Trend> {
    let n = curve.points.len();
    if n < cfg.min_layers.max(3) {
        return Err(Error::InsufficientData(format!(
            "trend needs >= {} layers, curve has {n}",
            cfg.min_layers.max(3)
        )));
    }
    let pts: Vec<&CurvePoint> = curve.points.values().collect();
    let [a, b, _] = thirds(n);
    let (early, middle, late) = (bin(&pts[..a]), bin(&pts[a..a + b]), bin(&pts[a + b..]));
    let above = |x: &Bin, y: &Bin| x.mean - y.mean > cfg.separation * (x.stderr * x.stderr + y.stderr * y.stderr).sqrt();
    let label = if above(&late, &middle) && above(&late, &early) {
        TrendLabel::Rising
    } else if above(&early, &middle) && above(&early, &late) {
        TrendLabel::Falling
    } else if above(&middle, &early) && above(&middle, &late) {
        TrendLabel::Bell
    } else {
        TrendLabel::Flat
    };
    let (peak_layer, peak) = curve
        .points
        .iter()
        .fold(None::<(usize, &CurvePoint)>, |best, (&l, p)| match best {
            Some((_, b)) if b.mean >= p.mean => best,
            _ => Some((l, p)),
        })
        .expect("non-empty curve");
    Ok(Trend {
        label,
        early,
        middle,
        late,
        peak_layer,
        peak_value: peak.mean,
        separation: cfg.separation,
    })
}

/// The curve with its layer order reversed (layer `l` becomes
/// `first + last − l`).
pub fn reversed(curve: &LayerCurve) -> LayerCurve {
    let first = curve.points.keys().next().copied().unwrap_or(0);
    let last = curve.points.keys().next_back().copied().unwrap_or(0);
    LayerCurve {
        points: curve.points.iter().map(|(&l, p)| (first + last - l, p.clone())).collect(),
        ..curve.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendRecord {
    pub metric: String,
    pub model: String,
    pub variant: String,
    /// `None` when the curve is too short to classify.
    pub trend: Option<Trend>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportFiles {
    pub csv: PathBuf,
    pub json: PathBuf,
    pub svgs: Vec<PathBuf>,
}

pub const CSV_HEADER: &str = "metric,model,variant,layer,mean,stderr,n";

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn curves_csv(curves: &[LayerCurve]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for c in curves {
        for (layer, p) in &c.points {
            let _ = writeln!(
                out,
                "{},{},{},{layer},{},{},{}",
                csv_field(&c.metric),
                csv_field(&c.model),
                csv_field(&c.variant),
                p.mean,
                p.stderr,
                p.n
            );
        }
    }
    out
}

fn file_stem(metric: &str) -> String {
    metric
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
        .collect()
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// One figure: x = layer, y = metric, one banded series per curve.
pub fn render_svg(metric: &str, curves: &[&LayerCurve]) -> String {
    let (w, h, m) = (640.0, 400.0, 56.0);
    let layers: Vec<usize> = curves.iter().flat_map(|c| c.points.keys().copied()).collect();
    let lo_l = layers.iter().copied().min().unwrap_or(0) as f64;
    let hi_l = layers.iter().copied().max().unwrap_or(1) as f64;
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in curves.iter().flat_map(|c| c.points.values()) {
        lo = lo.min(p.mean - p.stderr);
        hi = hi.max(p.mean + p.stderr);
    }
    if !(hi > lo) {
        lo -= 0.5;
        hi += 0.5;
    }
    let x = |l: f64| m + (w - 2.0 * m) * if hi_l > lo_l { (l - lo_l) / (hi_l - lo_l) } else { 0.5 };
    let y = |v: f64| h - m - (h - 2.0 * m) * (v - lo) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" data-metric="{}">"#,
        escape(metric)
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="16">{}</text>"#, w / 2.0, escape(metric));
    let _ = writeln!(
        s,
        r#"<path d="M{m:.2},{:.2} L{m:.2},{:.2} L{:.2},{:.2}" stroke="black" fill="none"/>"#,
        m,
        h - m,
        w - m,
        h - m
    );
    let mut ticks: Vec<usize> = layers.clone();
    ticks.sort_unstable();
    ticks.dedup();
    for l in &ticks {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="11">{l}</text>"#,
            x(*l as f64),
            h - m + 16.0
        );
    }
    let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-size="12">layer</text>"#, w / 2.0, h - 12.0);
    for v in [lo, (lo + hi) / 2.0, hi] {
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="end" font-size="11">{v:.3}</text>"#, m - 6.0, y(v) + 4.0);
    }
    for (i, c) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let series = format!("{}/{}", c.model, c.variant);
        let _ = writeln!(
            s,
            r#"<g class="series" data-model="{}" data-variant="{}">"#,
            escape(&c.model),
            escape(&c.variant)
        );
        let upper: Vec<String> = c.points.iter().map(|(&l, p)| format!("{:.2},{:.2}", x(l as f64), y(p.mean + p.stderr))).collect();
        let lower: Vec<String> = c.points.iter().rev().map(|(&l, p)| format!("{:.2},{:.2}", x(l as f64), y(p.mean - p.stderr))).collect();
        let _ = writeln!(
            s,
            r#"<polygon class="band" points="{} {}" fill="{color}" fill-opacity="0.2" stroke="none"/>"#,
            upper.join(" "),
            lower.join(" ")
        );
        let line: Vec<String> = c.points.iter().map(|(&l, p)| format!("{:.2},{:.2}", x(l as f64), y(p.mean))).collect();
        let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#, line.join(" "));
        for (&l, p) in &c.points {
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}" data-layer="{l}" data-mean="{}" data-stderr="{}" data-n="{}"/>"#,
                x(l as f64),
                y(p.mean),
                p.mean,
                p.stderr,
                p.n
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" font-size="12" fill="{color}">{}</text>"#,
            w - m - 120.0,
            m + 16.0 * i as f64,
            escape(&series)
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}

/// Writes `curves.csv`, `trends.json` and one SVG per metric into `out`.
pub fn render_report(curves: &[LayerCurve], trends: &[Option<Trend>], out: &Path) -> Result<ReportFiles> {
    if curves.is_empty() {
        return Err(Error::NothingToReport);
    }
    if trends.len() != curves.len() {
        return Err(Error::Shape(format!("{} trends for {} curves", trends.len(), curves.len())));
    }
    let mut order: Vec<usize> = (0..curves.len()).collect();
    order.sort_by(|&a, &b| {
        let (x, y) = (&curves[a], &curves[b]);
        (&x.metric, &x.model, &x.variant).cmp(&(&y.metric, &y.model, &y.variant))
    });
    let sorted: Vec<LayerCurve> = order.iter().map(|&i| curves[i].clone()).collect();

    let csv = out.join("curves.csv");
    write_atomic(&csv, curves_csv(&sorted).as_bytes())?;

    let records: Vec<TrendRecord> = order
        .iter()
        .map(|&i| TrendRecord {
            metric: curves[i].metric.clone(),
            model: curves[i].model.clone(),
            variant: curves[i].variant.clone(),
            trend: trends[i].clone(),
        })
        .collect();
    let json = out.join("trends.json");
    let mut text = serde_json::to_string_pretty(&records).expect("trend records serialize");
    text.push('\n');
    write_atomic(&json, text.as_bytes())?;

    let mut families: BTreeMap<&str, Vec<&LayerCurve>> = BTreeMap::new();
    for c in &sorted {
        families.entry(c.metric.as_str()).or_default().push(c);
    }
    let mut svgs = Vec::new();
    for (metric, group) in families {
        let path = out.join(format!("{}.svg", file_stem(metric)));
        write_atomic(&path, render_svg(metric, &group).as_bytes())?;
        svgs.push(path);
    }
    Ok(ReportFiles { csv, json, svgs })
}
