//! Ridge regression for many targets sharing one design matrix.
//!
//! The design is decomposed once as `X = U Σ Vᵀ`; the solution for target
//! `v` with penalty `λ_v` is `V diag(σ / (σ² + λ_v)) Uᵀ y_v`, so adding
//! voxels costs a projection and a rescale, never another factorization.

use std::cell::Cell;

use nalgebra::{DMatrix, DVector};
use num_traits::Float;

use crate::error::{Error, Result};
use crate::scalar::Real;

thread_local! {
    static DECOMPOSITIONS: Cell<usize> = const { Cell::new(0) };
}

/// Number of SVDs computed on the current thread.
pub fn decomposition_count() -> usize {
    DECOMPOSITIONS.with(Cell::get)
}

/// Thin SVD of a design matrix, truncated to its numerical rank.
#[derive(Debug, Clone)]
pub struct SvdRidge<T: Real> {
    u: DMatrix<T>,
    singular: DVector<T>,
    v_t: DMatrix<T>,
}

impl<T: Real> SvdRidge<T> {
    pub fn new(x: &DMatrix<T>) -> Result<Self> {
        DECOMPOSITIONS.with(|c| c.set(c.get() + 1));
        let (n, f) = x.shape();
        let svd = x
            .clone()
            .try_svd(true, true, T::default_epsilon(), 0)
            .ok_or_else(|| Error::Numerical("SVD did not converge".into()))?;
        let u = svd.u.expect("requested U");
        let v_t = svd.v_t.expect("requested Vt");
        let s = svd.singular_values;
        let s_max = s.iter().copied().fold(T::zero(), Float::max);
        let cutoff = s_max * T::epsilon() * T::of_usize(n.max(f));
        let keep: Vec<usize> = (0..s.len()).filter(|&i| s[i] > cutoff).collect();
        Ok(Self {
            u: u.select_columns(&keep),
            singular: DVector::from_iterator(keep.len(), keep.iter().map(|&i| s[i])),
            v_t: v_t.select_rows(&keep),
        })
    }

    pub fn rank(&self) -> usize {
        self.singular.len()
    }

    pub fn features(&self) -> usize {
        self.v_t.ncols()
    }

    /// `Uᵀ Y`, shared by every penalty.
    pub fn project(&self, y: &DMatrix<T>) -> DMatrix<T> {
        self.u.tr_mul(y)
    }

    /// `σ / (σ² + λ)` per retained singular value.
    pub fn shrinkage(&self, lambda: T) -> DVector<T> {
        self.singular.map(|s| s / (s * s + lambda))
    }

    /// `X Vᵀᵀ` for new rows, so that predictions for any penalty are
    /// `projected_rows · diag(shrinkage) · Uᵀ Y`.
    pub fn rotate(&self, x: &DMatrix<T>) -> DMatrix<T> {
        x * self.v_t.transpose()
    }

    /// Weights (features × targets) given a projection from [`Self::project`].
    pub fn weights_from_projection(&self, projected: &DMatrix<T>, lambdas: &[T]) -> Result<DMatrix<T>> {
        if lambdas.len() != projected.ncols() {
            return Err(Error::Shape(format!(
                "{} penalties for {} targets",
                lambdas.len(),
                projected.ncols()
            )));
        }
        let scaled = self.scale_projection(projected, lambdas);
        Ok(self.v_t.tr_mul(&scaled))
    }

    /// Column `v` of the projection scaled by the shrinkage for `lambdas[v]`.
    pub fn scale_projection(&self, projected: &DMatrix<T>, lambdas: &[T]) -> DMatrix<T> {
        let mut scaled = projected.clone();
        let mut cache: Vec<(T, DVector<T>)> = Vec::new();
        for (v, &lambda) in lambdas.iter().enumerate() {
            let d = match cache.iter().find(|(l, _)| *l == lambda) {
                Some((_, d)) => d.clone(),
                None => {
                    let d = self.shrinkage(lambda);
                    cache.push((lambda, d.clone()));
                    d
                }
            };
            scaled.column_mut(v).component_mul_assign(&d);
        }
        scaled
    }

    pub fn weights(&self, y: &DMatrix<T>, lambdas: &[T]) -> Result<DMatrix<T>> {
        self.weights_from_projection(&self.project(y), lambdas)
    }
}

/// Column centering and optional scaling estimated on training rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer<T: Real> {
    pub means: Vec<T>,
    /// Zero marks a constant column that is dropped from the fit.
    pub scales: Vec<T>,
}

impl<T: Real> Standardizer<T> {
    pub fn fit(x: &DMatrix<T>, scale: bool) -> Self {
        let n = T::of_usize(x.nrows());
        let mut means = Vec::with_capacity(x.ncols());
        let mut scales = Vec::with_capacity(x.ncols());
        for c in 0..x.ncols() {
            let col = x.column(c);
            let mean = col.sum() / n;
            let var = col.iter().fold(T::zero(), |acc, &v| acc + (v - mean) * (v - mean)) / n;
            let sd = Float::sqrt(var);
            let s = if sd <= T::epsilon() * (T::one() + Float::abs(mean)) {
                T::zero()
            } else if scale {
                sd
            } else {
                T::one()
            };
            means.push(mean);
            scales.push(s);
        }
        Self { means, scales }
    }

    pub fn dropped(&self) -> usize {
        self.scales.iter().filter(|&&s| s == T::zero()).count()
    }

    pub fn transform(&self, x: &DMatrix<T>) -> DMatrix<T> {
        let mut out = x.clone();
        for c in 0..x.ncols() {
            let (m, s) = (self.means[c], self.scales[c]);
            if s == T::zero() {
                out.column_mut(c).fill(T::zero());
            } else {
                out.column_mut(c).apply(|v| *v = (*v - m) / s);
            }
        }
        out
    }
}

pub(crate) fn column_means<T: Real>(y: &DMatrix<T>) -> Vec<T> {
    let n = T::of_usize(y.nrows());
    (0..y.ncols()).map(|c| y.column(c).sum() / n).collect()
}

pub(crate) fn center_columns<T: Real>(y: &DMatrix<T>, means: &[T]) -> DMatrix<T> {
    let mut out = y.clone();
    for (c, &m) in means.iter().enumerate() {
        out.column_mut(c).add_scalar_mut(-m);
    }
    out
}

/// A fitted voxelwise encoding model.
#[derive(Debug, Clone, PartialEq)]
pub struct Ridge<T: Real> {
    /// Features × voxels, in standardized feature units.
    pub weights: DMatrix<T>,
    pub lambdas: Vec<T>,
    pub features: Standardizer<T>,
    pub response_means: Vec<T>,
}

impl<T: Real> Ridge<T> {
    pub fn predict(&self, x: &DMatrix<T>) -> Result<DMatrix<T>> {
        if x.ncols() != self.weights.nrows() {
            return Err(Error::Shape(format!(
                "model expects {} features, got {}",
                self.weights.nrows(),
                x.ncols()
            )));
        }
        let mut pred = self.features.transform(x) * &self.weights;
        for (c, &m) in self.response_means.iter().enumerate() {
            pred.column_mut(c).add_scalar_mut(m);
        }
        Ok(pred)
    }
}

/// Fits `argmin ‖y_v − X w‖² + λ_v ‖w‖²` for every column of `y` on
/// centered (and, if `standardize`, unit-variance) features using one
/// shared SVD. Constant feature columns get zero weight.
pub fn fit_ridge<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, lambdas: &[T], standardize: bool) -> Result<Ridge<T>> {
    if x.nrows() < 2 {
        return Err(Error::InsufficientData(format!("ridge needs >= 2 rows, got {}", x.nrows())));
    }
    if x.nrows() != y.nrows() {
        return Err(Error::Shape(format!("X has {} rows, Y has {}", x.nrows(), y.nrows())));
    }
    if lambdas.len() != y.ncols() {
        return Err(Error::Shape(format!("{} penalties for {} targets", lambdas.len(), y.ncols())));
    }
    if lambdas.iter().any(|&l| !(l >= T::zero()) || !Float::is_finite(l)) {
        return Err(Error::Config("penalties must be finite and >= 0".into()));
    }
    ensure_finite(x, "X")?;
    ensure_finite(y, "Y")?;
    let features = Standardizer::fit(x, standardize);
    if features.dropped() > 0 {
        log::warn!("{} constant feature column(s) dropped from the ridge fit", features.dropped());
    }
    let xs = features.transform(x);
    let response_means = column_means(y);
    let yc = center_columns(y, &response_means);
    let solver = SvdRidge::new(&xs)?;
    let mut weights = solver.weights(&yc, lambdas)?;
    for (c, &s) in features.scales.iter().enumerate() {
        if s == T::zero() {
            weights.row_mut(c).fill(T::zero());
        }
    }
    Ok(Ridge {
        weights,
        lambdas: lambdas.to_vec(),
        features,
        response_means,
    })
}

pub(crate) fn ensure_finite<T: Real>(m: &DMatrix<T>, what: &str) -> Result<()> {
    for c in 0..m.ncols() {
        for r in 0..m.nrows() {
            if !Float::is_finite(m[(r, c)]) {
                return Err(Error::NonFinite {
                    what: what.to_string(),
                    row: r,
                    col: c,
                });
            }
        }
    }
    Ok(())
}
