//! L2-penalized logistic regression fitted by full-batch gradient descent
//! with Armijo backtracking.
//!
//! Parameters are laid out as a `(dims + 1) × outputs` column-major
//! matrix whose last row is the unpenalized bias.

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

/// A smooth objective over a flat parameter vector.
pub trait Objective<T: Real> {
    fn dim(&self) -> usize;
    fn loss_grad(&self, params: &DVector<T>) -> (T, DVector<T>);
    fn loss(&self, params: &DVector<T>) -> T {
        self.loss_grad(params).0
    }
}

/// Appends a column of ones.
pub fn with_bias<T: Real>(x: &DMatrix<T>) -> DMatrix<T> {
    let mut out = DMatrix::from_element(x.nrows(), x.ncols() + 1, T::one());
    out.columns_mut(0, x.ncols()).copy_from(x);
    out
}

fn penalty<T: Real>(w: &DMatrix<T>, l2: T, grad: &mut DMatrix<T>) -> T {
    let bias = w.nrows() - 1;
    let mut sq = T::zero();
    for c in 0..w.ncols() {
        for r in 0..bias {
            sq += w[(r, c)] * w[(r, c)];
            grad[(r, c)] += l2 * w[(r, c)];
        }
    }
    l2 * sq / T::of(2.0)
}

/// Mean softmax cross-entropy plus `l2/2 ‖W‖²` (bias excluded).
#[derive(Debug, Clone)]
pub struct Multinomial<T: Real> {
    /// Rows × (dims + 1), bias column last.
    pub x: DMatrix<T>,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub l2: T,
}

impl<T: Real> Multinomial<T> {
    pub fn new(x: DMatrix<T>, labels: Vec<usize>, classes: usize, l2: T) -> Result<Self> {
        if x.nrows() != labels.len() {
            return Err(Error::Shape(format!("{} rows vs {} labels", x.nrows(), labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Shape(format!("class {bad} out of range for {classes} classes")));
        }
        Ok(Self { x, labels, classes, l2 })
    }

    fn shape(&self, params: &DVector<T>) -> DMatrix<T> {
        DMatrix::from_column_slice(self.x.ncols(), self.classes, params.as_slice())
    }
}

/// Row-wise softmax probabilities and log-sum-exp values.
fn softmax_rows<T: Real>(logits: &DMatrix<T>) -> (DMatrix<T>, Vec<T>) {
    let mut probs = logits.clone();
    let mut lse = Vec::with_capacity(logits.nrows());
    for r in 0..logits.nrows() {
        let row = logits.row(r);
        let m = row.iter().copied().fold(T::neg_infinity(), Float::max);
        let s = row.iter().fold(T::zero(), |acc, &z| acc + Float::exp(z - m));
        for c in 0..logits.ncols() {
            probs[(r, c)] = Float::exp(logits[(r, c)] - m) / s;
        }
        lse.push(m + Float::ln(s));
    }
    (probs, lse)
}

impl<T: Real> Objective<T> for Multinomial<T> {
    fn dim(&self) -> usize {
        self.x.ncols() * self.classes
    }

    fn loss_grad(&self, params: &DVector<T>) -> (T, DVector<T>) {
        let w = self.shape(params);
        let logits = &self.x * &w;
        let (mut probs, lse) = softmax_rows(&logits);
        let n = T::of_usize(self.x.nrows());
        let mut loss = T::zero();
        for (r, &y) in self.labels.iter().enumerate() {
            loss += lse[r] - logits[(r, y)];
            probs[(r, y)] -= T::one();
        }
        let mut grad = self.x.tr_mul(&probs) / n;
        loss = loss / n + penalty(&w, self.l2, &mut grad);
        (loss, DVector::from_column_slice(grad.as_slice()))
    }
}

/// Mean binary cross-entropy plus `l2/2 ‖w‖²` (bias excluded).
#[derive(Debug, Clone)]
pub struct Binary<T: Real> {
    /// Rows × (dims + 1), bias column last.
    pub x: DMatrix<T>,
    pub labels: Vec<bool>,
    pub l2: T,
}

/// `ln(1 + e^z)` without overflow.
fn softplus<T: Real>(z: T) -> T {
    if z > T::zero() {
        z + Float::ln_1p(Float::exp(-z))
    } else {
        Float::ln_1p(Float::exp(z))
    }
}

pub fn sigmoid<T: Real>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + Float::exp(-z))
    } else {
        let e = Float::exp(z);
        e / (T::one() + e)
    }
}

impl<T: Real> Objective<T> for Binary<T> {
    fn dim(&self) -> usize {
        self.x.ncols()
    }

    fn loss_grad(&self, params: &DVector<T>) -> (T, DVector<T>) {
        let w = DMatrix::from_column_slice(self.x.ncols(), 1, params.as_slice());
        let z = &self.x * &w;
        let n = T::of_usize(self.x.nrows());
        let mut loss = T::zero();
        let mut resid = DMatrix::zeros(self.x.nrows(), 1);
        for (r, &y) in self.labels.iter().enumerate() {
            let zr = z[(r, 0)];
            // -log p(y | z) = softplus(z) - y z
            loss += softplus(zr) - if y { zr } else { T::zero() };
            resid[(r, 0)] = sigmoid(zr) - if y { T::one() } else { T::zero() };
        }
        let mut grad = self.x.tr_mul(&resid) / n;
        loss = loss / n + penalty(&w, self.l2, &mut grad);
        (loss, DVector::from_column_slice(grad.as_slice()))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Minimized<T: Real> {
    pub params: DVector<T>,
    /// Loss at the start and after every accepted step.
    pub losses: Vec<T>,
    pub grad_norm: T,
    pub converged: bool,
}

/// Gradient descent from `start` with Armijo backtracking; stops when the
/// gradient norm drops to `tolerance`, after `max_iters` steps, or when no
/// step size decreases the loss.
pub fn minimize<T: Real, O: Objective<T>>(obj: &O, start: DVector<T>, max_iters: usize, tolerance: T) -> Minimized<T> {
    let armijo = T::of(1e-4);
    let half = T::of(0.5);
    let min_step = T::of(1e-20);
    let mut params = start;
    let (mut loss, mut grad) = obj.loss_grad(&params);
    let mut losses = vec![loss];
    let mut step = T::one();
    for _ in 0..max_iters {
        let g2 = grad.norm_squared();
        if Float::sqrt(g2) <= tolerance {
            return Minimized {
                params,
                losses,
                grad_norm: Float::sqrt(g2),
                converged: true,
            };
        }
        let mut accepted = false;
        while step >= min_step {
            let candidate = &params - &grad * step;
            let (l, g) = obj.loss_grad(&candidate);
            if l <= loss - armijo * step * g2 {
                params = candidate;
                loss = l;
                grad = g;
                losses.push(loss);
                accepted = true;
                break;
            }
            step *= half;
        }
        if !accepted {
            break;
        }
        step = step + step;
    }
    let grad_norm = grad.norm();
    Minimized {
        params,
        losses,
        grad_norm,
        converged: grad_norm <= tolerance,
    }
}

/// Central-difference gradient, for checking [`Objective::loss_grad`].
pub fn numerical_gradient<T: Real, O: Objective<T>>(obj: &O, at: &DVector<T>, h: T) -> DVector<T> {
    let mut out = DVector::zeros(at.len());
    let mut probe = at.clone();
    for i in 0..at.len() {
        let orig = probe[i];
        probe[i] = orig + h;
        let up = obj.loss(&probe);
        probe[i] = orig - h;
        let down = obj.loss(&probe);
        probe[i] = orig;
        out[i] = (up - down) / (h + h);
    }
    out
}

/// `argmax` class per row (lowest index on ties).
pub fn predict_classes<T: Real>(x_bias: &DMatrix<T>, params: &DVector<T>, classes: usize) -> Vec<usize> {
    let w = DMatrix::from_column_slice(x_bias.ncols(), classes, params.as_slice());
    let logits = x_bias * w;
    (0..logits.nrows())
        .map(|r| {
            let mut best = 0;
            for c in 1..classes {
                if logits[(r, c)] > logits[(r, best)] {
                    best = c;
                }
            }
            best
        })
        .collect()
}

/// Positive iff `sigmoid(x·w) >= threshold`.
pub fn predict_binary<T: Real>(x_bias: &DMatrix<T>, params: &DVector<T>, threshold: T) -> Vec<bool> {
    (x_bias * params).iter().map(|&z| sigmoid(z) >= threshold).collect()
}
