//! One PASS/FAIL line per acceptance criterion. Exits non-zero on any FAIL.

mod common;
#[path = "../../core/tests/support/oracles.rs"]
mod oracles;

use std::path::Path;
use std::time::{Duration, Instant};

use brainalign::acoustic::{mfcc, MfccConfig};
use brainalign::ceiling::{estimate_noise_ceiling, CeilingConfig};
use brainalign::encoding::{log_grid, pearson_scores, SvdRidge};
use brainalign::pairing::{lanczos_kernel, lanczos_resample_matrix};
use brainalign::probing::logistic::with_bias;
use brainalign::probing::{multiclass_f1, multilabel_f1, numerical_gradient, r_squared, Binary, Multinomial, Objective};
use common::{generate, load_config, run_all, snapshot, trends, Options, LAYER_A, LAYER_B};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome { pass, detail: detail.into() }
}

fn randn(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
}

fn ridge_oracle() -> Outcome {
    let start = Instant::now();
    let grid = log_grid(0.0, 8.0, 10);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for i in 0..20 {
        let (n, f) = if i == 0 { (200, 100) } else { (rng.random_range(20..=200), rng.random_range(2..=100)) };
        let x = randn(n, f, &mut rng);
        let y = randn(n, 50, &mut rng);
        let solver = SvdRidge::new(&x).unwrap();
        let projected = solver.project(&y);
        for &lambda in &grid {
            let w = solver.weights_from_projection(&projected, &vec![lambda; 50]).unwrap();
            for v in 0..50 {
                let want = oracles::ridge_normal_equations(&x, &y.column(v).into_owned(), lambda);
                let rel = (w.column(v) - &want).norm() / want.norm();
                worst = worst.max(rel);
            }
        }
    }
    let elapsed = start.elapsed();
    outcome(
        worst <= 1e-8 && elapsed < Duration::from_secs(10),
        format!("max relative error {worst:.2e}, {:.2} s", elapsed.as_secs_f64()),
    )
}

fn lanczos_identities() -> Outcome {
    let src: Vec<f64> = (0..500).map(|i| 16.0 + 0.1 * i as f64).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let values = randn(500, 4, &mut rng);
    let same = lanczos_resample_matrix(&values, &src, &src, 3).unwrap();
    let reproduce = (same - &values).abs().max();
    let targets: Vec<f64> = (0..30).map(|k| 16.0 + 1.63 * k as f64).collect();
    let constant = lanczos_resample_matrix(&DMatrix::from_element(500, 2, -3.5), &src, &targets, 3).unwrap();
    let keep = constant.iter().fold(0.0f64, |m, v| m.max((v + 3.5).abs()));
    let even = (0..4000)
        .map(|i| -4.0 + 8.0 * i as f64 / 3999.0)
        .fold(0.0f64, |m, t| m.max((lanczos_kernel(t, 3) - lanczos_kernel(-t, 3)).abs()));
    outcome(
        reproduce <= 1e-12 && keep <= 1e-12 && even <= 1e-15,
        format!("at-source {reproduce:.1e}, constant {keep:.1e}, evenness {even:.1e}"),
    )
}

fn mfcc_checks() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let audio: Vec<f64> = (0..16_000).map(|_| StandardNormal.sample(&mut rng)).collect();
    let loud: Vec<f64> = audio.iter().map(|v| 10.0 * v).collect();
    let cfg = MfccConfig::default();
    let a = mfcc(&audio, &cfg, 16_000.0).unwrap();
    let b = mfcc(&loud, &cfg, 16_000.0).unwrap();
    let mut others = 0.0f64;
    let mut c0 = f64::INFINITY;
    for f in 0..a.nrows() {
        c0 = c0.min((b[(f, 0)] - a[(f, 0)]).abs());
        for k in 1..a.ncols() {
            others = others.max((b[(f, k)] - a[(f, k)]).abs());
        }
    }
    let reference = oracles::max_rel(&a, &oracles::naive_mfcc(&audio, &oracles::MfccRecipe::default()));
    outcome(
        others <= 1e-9 && c0 > 1.0 && reference <= 1e-6,
        format!("non-c0 change {others:.1e}, min c0 change {c0:.2}, reference error {reference:.1e}"),
    )
}

fn metric_cases() -> Outcome {
    let col = |v: &[f64]| DMatrix::from_column_slice(v.len(), 1, v);
    let r = pearson_scores(&col(&[1.0, 2.0, 3.0, 4.0]), &col(&[1.0, 3.0, 2.0, 4.0])).unwrap().r[0];
    let truth = DMatrix::from_row_slice(4, 2, &[true, true, true, false, true, false, true, false]);
    let pred = DMatrix::from_row_slice(4, 2, &[true, true, true, true, false, false, false, false]);
    let ml = multilabel_f1(&truth, &pred, &[true, true]).unwrap();
    let classes = [0usize, 2, 1, 1, 0, 2];
    let perfect_mc = multiclass_f1(&classes, &classes, 3).unwrap();
    let perfect_ml = multilabel_f1(&truth, &truth, &[true, true]).unwrap();
    let y: DMatrix<f64> = DMatrix::from_row_slice(3, 2, &[1.0, -2.0, 0.5, 4.0, 3.0, 1.0]);
    let r2 = r_squared(&y, &y).unwrap().mean;
    let errs = [
        (r - 0.8).abs(),
        (ml.macro_f1 - 2.0 / 3.0).abs(),
        (ml.micro_f1 - 2.0 / 3.0).abs(),
        (perfect_mc.macro_f1 - 1.0).abs(),
        (perfect_mc.micro_f1 - 1.0).abs(),
        (perfect_ml.macro_f1 - 1.0).abs(),
        (r2 - 1.0).abs(),
    ];
    let worst = errs.iter().cloned().fold(0.0, f64::max);
    outcome(
        worst <= 1e-12,
        format!("r {r}, multilabel macro {} micro {}, R² {r2}", ml.macro_f1, ml.micro_f1),
    )
}

fn hierarchy_recovery() -> Outcome {
    let start = Instant::now();
    let mut good = 0;
    let mut misses = Vec::new();
    for seed in 0..20u64 {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let path = generate(data.path(), out.path(), 100 + seed, &Options::default());
        run_all(&load_config(&path, 1), out.path());
        let t = trends(out.path());
        let (la, pa) = &t["alignment:primary_auditory"];
        let (lb, pb) = &t["alignment:late_language"];
        let ok = *pa == Some(LAYER_A)
            && *pb == Some(LAYER_B)
            && matches!(la.as_deref(), Some("falling" | "bell"))
            && lb.as_deref() == Some("rising");
        if ok {
            good += 1;
        } else {
            misses.push(format!("seed {seed}: A {la:?}@{pa:?}, B {lb:?}@{pb:?}"));
        }
    }
    let elapsed = start.elapsed();
    let mut detail = format!("{good}/20 seeds recovered, {:.1} s single-threaded", elapsed.as_secs_f64());
    if !misses.is_empty() {
        detail.push_str(&format!(" [{}]", misses.join("; ")));
    }
    outcome(good >= 19 && elapsed < Duration::from_secs(120), detail)
}

fn noise_ceiling() -> Outcome {
    let cfg = CeilingConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let base = randn(300, 8, &mut rng);
    let identical = estimate_noise_ceiling(&[base.clone(), base.clone(), base], &cfg).unwrap();
    let exact = identical.values.iter().all(|&c| c == 1.0);

    let noise: Vec<DMatrix<f64>> = (0..2).map(|_| randn(10_000, 20, &mut rng)).collect();
    let independent = estimate_noise_ceiling(&noise, &cfg).unwrap();
    let worst = independent.values.iter().fold(0.0f64, |m, c| m.max(c.abs()));

    let signal = randn(2_000, 50, &mut rng);
    let reps: Vec<DMatrix<f64>> = (0..2).map(|_| &signal + randn(2_000, 50, &mut rng)).collect();
    let half = estimate_noise_ceiling(&reps, &cfg).unwrap();
    let mean = half.values.iter().sum::<f64>() / half.values.len() as f64;
    outcome(
        exact && worst <= 0.05 && (mean - 2.0 / 3.0).abs() <= 0.03,
        format!("identical exact: {exact}, independent max {worst:.3}, equal signal/noise {mean:.3}"),
    )
}

fn gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let rel = |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm() / a.norm().max(b.norm());
    let mut worst = [0.0f64; 3];
    for (slot, classes) in [(0, 35usize), (1, 3)] {
        let x = with_bias(&randn(100, 6, &mut rng));
        let labels: Vec<usize> = (0..100).map(|_| rng.random_range(0..classes)).collect();
        let obj = Multinomial::new(x, labels, classes, 1e-3).unwrap();
        for _ in 0..10 {
            let p = DVector::from_fn(obj.dim(), |_, _| StandardNormal.sample(&mut rng));
            worst[slot] = worst[slot].max(rel(&obj.loss_grad(&p).1, &numerical_gradient(&obj, &p, 1e-5)));
        }
    }
    let x = with_bias(&randn(100, 6, &mut rng));
    let labels: Vec<bool> = (0..100).map(|_| rng.random_bool(0.4)).collect();
    let obj = Binary { x, labels, l2: 1e-3 };
    for _ in 0..10 {
        let p = DVector::from_fn(obj.dim(), |_, _| StandardNormal.sample(&mut rng));
        worst[2] = worst[2].max(rel(&obj.loss_grad(&p).1, &numerical_gradient(&obj, &p, 1e-5)));
    }
    outcome(
        worst.iter().all(|&w| w <= 1e-5),
        format!("35-way {:.1e}, 3-way {:.1e}, binary {:.1e}", worst[0], worst[1], worst[2]),
    )
}

fn report_files(out: &Path) -> std::collections::BTreeMap<std::path::PathBuf, Vec<u8>> {
    snapshot(out)
        .into_iter()
        .filter(|(p, _)| matches!(p.extension().and_then(|e| e.to_str()), Some("csv" | "json")))
        .collect()
}

fn determinism() -> Outcome {
    let mut runs = Vec::new();
    for workers in [1, 4] {
        let data = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let path = generate(data.path(), out.path(), 42, &Options { participants: 2, probes: true });
        run_all(&load_config(&path, workers), out.path());
        runs.push(report_files(out.path()));
    }
    let differing: Vec<String> = runs[0]
        .iter()
        .filter(|(p, bytes)| runs[1].get(*p) != Some(bytes))
        .map(|(p, _)| p.display().to_string())
        .collect();
    let same_set = runs[0].len() == runs[1].len();
    outcome(
        differing.is_empty() && same_set,
        format!("{} CSV/JSON files compared, {} differ", runs[0].len(), differing.len()),
    )
}

fn main() {
    let checks: [(&str, fn() -> Outcome); 8] = [
        ("ridge oracle equivalence", ridge_oracle),
        ("lanczos identities", lanczos_identities),
        ("mfcc gain invariance and reference", mfcc_checks),
        ("metric hand cases", metric_cases),
        ("synthetic hierarchy recovery", hierarchy_recovery),
        ("noise ceiling", noise_ceiling),
        ("probe gradient check", gradient_check),
        ("determinism across worker counts", determinism),
    ];
    let mut failed = 0;
    for (name, check) in checks {
        let o = check();
        if !o.pass {
            failed += 1;
        }
        println!("{} {name}: {}", if o.pass { "PASS" } else { "FAIL" }, o.detail);
    }
    if failed > 0 {
        println!("{failed} acceptance check(s) failed");
        std::process::exit(1);
    }
}
