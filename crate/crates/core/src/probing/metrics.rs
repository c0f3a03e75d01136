//! F1 and R² scoring for probes.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub fn_: usize,
}

impl Counts {
    /// `2TP / (2TP + FP + FN)`; `None` when the label never occurs in
    /// truth or predictions.
    pub fn f1(&self) -> Option<f64> {
        let denom = 2 * self.tp + self.fp + self.fn_;
        (denom > 0).then(|| (2 * self.tp) as f64 / denom as f64)
    }

    fn add(&mut self, other: Counts) {
        self.tp += other.tp;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum F1Average {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Scores {
    pub macro_f1: f64,
    pub micro_f1: f64,
    /// Labels that entered the macro average.
    pub labels: usize,
}

impl F1Scores {
    pub fn get(&self, average: F1Average) -> f64 {
        match average {
            F1Average::Macro => self.macro_f1,
            F1Average::Micro => self.micro_f1,
        }
    }
}

fn summarize(per_label: &[Counts]) -> Result<F1Scores> {
    let mut pooled = Counts::default();
    let mut sum = 0.0;
    let mut labels = 0;
    for c in per_label {
        pooled.add(*c);
        if let Some(f) = c.f1() {
            sum += f;
            labels += 1;
        }
    }
    if labels == 0 {
        return Err(Error::InsufficientData("no label occurs in truth or predictions".into()));
    }
    Ok(F1Scores {
        macro_f1: sum / labels as f64,
        micro_f1: pooled.f1().unwrap_or(0.0),
        labels,
    })
}

/// Single-label F1. Macro averages over every class seen in either the
/// truth or the predictions.
pub fn multiclass_f1(truth: &[usize], pred: &[usize], n_classes: usize) -> Result<F1Scores> {
    if truth.len() != pred.len() {
        return Err(Error::Shape(format!("{} labels vs {} predictions", truth.len(), pred.len())));
    }
    let mut counts = vec![Counts::default(); n_classes];
    for (&t, &p) in truth.iter().zip(pred) {
        if t >= n_classes || p >= n_classes {
            return Err(Error::Shape(format!("class index out of range for {n_classes} classes")));
        }
        if t == p {
            counts[t].tp += 1;
        } else {
            counts[p].fp += 1;
            counts[t].fn_ += 1;
        }
    }
    summarize(&counts)
}

/// Multi-label F1 over the columns with `include[j]`. Macro skips labels
/// that never occur in truth or predictions.
pub fn multilabel_f1(truth: &DMatrix<bool>, pred: &DMatrix<bool>, include: &[bool]) -> Result<F1Scores> {
    if truth.shape() != pred.shape() || include.len() != truth.ncols() {
        return Err(Error::Shape(format!(
            "truth {:?}, predictions {:?}, {} label flags",
            truth.shape(),
            pred.shape(),
            include.len()
        )));
    }
    let counts: Vec<Counts> = (0..truth.ncols())
        .filter(|&j| include[j])
        .map(|j| {
            let mut c = Counts::default();
            for (&t, &p) in truth.column(j).iter().zip(pred.column(j).iter()) {
                match (t, p) {
                    (true, true) => c.tp += 1,
                    (false, true) => c.fp += 1,
                    (true, false) => c.fn_ += 1,
                    (false, false) => {}
                }
            }
            c
        })
        .collect();
    summarize(&counts)
}

#[derive(Debug, Clone, PartialEq)]
pub struct RSquared<T: Real> {
    /// Mean over the scored dimensions.
    pub mean: T,
    /// `None` for dimensions constant on the test split.
    pub per_dim: Vec<Option<T>>,
}

impl<T: Real> RSquared<T> {
    pub fn excluded(&self) -> usize {
        self.per_dim.iter().filter(|d| d.is_none()).count()
    }
}

/// `1 − SS_res / SS_tot` per column, with `SS_tot` about the mean of
/// `truth`.
pub fn r_squared<T: Real>(pred: &DMatrix<T>, truth: &DMatrix<T>) -> Result<RSquared<T>> {
    if pred.shape() != truth.shape() {
        return Err(Error::Shape(format!("prediction {:?} vs truth {:?}", pred.shape(), truth.shape())));
    }
    let n = T::of_usize(truth.nrows());
    let mut per_dim = Vec::with_capacity(truth.ncols());
    let (mut sum, mut scored) = (T::zero(), 0usize);
    for c in 0..truth.ncols() {
        let t = truth.column(c);
        let mean = t.sum() / n;
        let (mut ss_res, mut ss_tot) = (T::zero(), T::zero());
        for (&y, &p) in t.iter().zip(pred.column(c).iter()) {
            ss_res += (y - p) * (y - p);
            ss_tot += (y - mean) * (y - mean);
        }
        if ss_tot == T::zero() {
            per_dim.push(None);
        } else {
            let r2 = T::one() - ss_res / ss_tot;
            sum += r2;
            scored += 1;
            per_dim.push(Some(r2));
        }
    }
    if scored == 0 {
        return Err(Error::InsufficientData("every target dimension is constant on test".into()));
    }
    Ok(RSquared {
        mean: sum / T::of_usize(scored),
        per_dim,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn per_class_hand_formula() {
        let c = Counts { tp: 1, fp: 1, fn_: 1 };
        assert_eq!(c.f1(), Some(0.5));
        assert_eq!(Counts::default().f1(), None);
    }

    #[test]
    fn multilabel_hand_case() {
        // label 0: TP 2, FN 2; label 1: TP 1, FP 1
        let truth = DMatrix::from_row_slice(4, 2, &[true, true, true, false, true, false, true, false]);
        let pred = DMatrix::from_row_slice(4, 2, &[true, true, true, true, false, false, false, false]);
        let s = multilabel_f1(&truth, &pred, &[true, true]).unwrap();
        assert!((s.macro_f1 - 2.0 / 3.0).abs() <= 1e-12);
        assert!((s.micro_f1 - 2.0 / 3.0).abs() <= 1e-12);
    }

    #[test]
    fn perfect_predictions() {
        let truth = DMatrix::from_row_slice(2, 3, &[true, false, true, false, false, true]);
        let s = multilabel_f1(&truth, &truth, &[true; 3]).unwrap();
        assert_eq!((s.macro_f1, s.micro_f1, s.labels), (1.0, 1.0, 2));
        let s = multiclass_f1(&[0, 1, 2, 1], &[0, 1, 2, 1], 35).unwrap();
        assert_eq!((s.macro_f1, s.micro_f1), (1.0, 1.0));
        let y = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 4.0]);
        assert_eq!(r_squared(&y, &y).unwrap().mean, 1.0);
    }

    #[test]
    fn unseen_class_counts_as_zero() {
        // class 2 only in truth, never predicted
        let s = multiclass_f1(&[0, 1, 2], &[0, 1, 1], 3).unwrap();
        assert!((s.macro_f1 - (1.0 + 2.0 / 3.0 + 0.0) / 3.0).abs() < 1e-12);
    }

    #[test]
    fn excluded_labels_and_dims() {
        let truth = DMatrix::from_row_slice(2, 2, &[true, true, false, true]);
        let s = multilabel_f1(&truth, &truth, &[true, false]).unwrap();
        assert_eq!(s.labels, 1);
        let y = DMatrix::from_row_slice(3, 2, &[1.0, 5.0, 2.0, 5.0, 3.0, 5.0]);
        let r = r_squared(&y, &y).unwrap();
        assert_eq!(r.per_dim, vec![Some(1.0), None]);
        assert_eq!(r.excluded(), 1);
    }

    #[test]
    fn mean_predictor_is_not_positive() {
        let y = DMatrix::from_row_slice(4, 1, &[1.0, 2.0, 3.0, 7.0]);
        let train_mean = DMatrix::from_element(4, 1, 2.0);
        assert!(r_squared(&train_mean, &y).unwrap().mean <= 0.0);
    }

    proptest! {
        #[test]
        fn micro_equals_accuracy(
            pairs in proptest::collection::vec((0usize..5, 0usize..5), 1..60)
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let acc = t.iter().zip(&p).filter(|(a, b)| a == b).count() as f64 / t.len() as f64;
            let s = multiclass_f1(&t, &p, 5).unwrap();
            prop_assert!((s.micro_f1 - acc).abs() <= 1e-12);
        }

        #[test]
        fn macro_is_permutation_invariant(
            pairs in proptest::collection::vec((0usize..4, 0usize..4), 1..40),
            perm in Just(vec![0usize, 1, 2, 3]).prop_shuffle(),
        ) {
            let (t, p): (Vec<usize>, Vec<usize>) = pairs.into_iter().unzip();
            let a = multiclass_f1(&t, &p, 4).unwrap();
            let tp: Vec<usize> = t.iter().map(|&c| perm[c]).collect();
            let pp: Vec<usize> = p.iter().map(|&c| perm[c]).collect();
            let b = multiclass_f1(&tp, &pp, 4).unwrap();
            prop_assert!((a.macro_f1 - b.macro_f1).abs() <= 1e-12);
        }
    }
}
