use nalgebra::DMatrix;

use crate::encoding::ridge::{center_columns, column_means, ensure_finite, Standardizer, SvdRidge};
use crate::encoding::{pearson_scores, RidgeConfig};
use crate::error::{Error, Result};
use crate::scalar::Real;

/// `[start, end)` row ranges of `folds` contiguous chunks over `rows`.
pub fn fold_bounds(rows: usize, folds: usize) -> Vec<(usize, usize)> {
    (0..folds)
        .map(|f| (f * rows / folds, (f + 1) * rows / folds))
        .collect()
}

/// Mean held-out Pearson r, grid × voxels.
pub fn cross_validation_scores<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, cfg: &RidgeConfig) -> Result<DMatrix<T>> {
    cfg.validate()?;
    let n = x.nrows();
    if n != y.nrows() {
        return Err(Error::Shape(format!("X has {} rows, Y has {}", n, y.nrows())));
    }
    if n < 2 * cfg.n_folds {
        return Err(Error::InsufficientData(format!(
            "{n} rows cannot form {} folds of >= 2 rows",
            cfg.n_folds
        )));
    }
    ensure_finite(x, "X")?;
    ensure_finite(y, "Y")?;
    let grid: Vec<T> = cfg.lambda_grid.iter().map(|&l| T::of(l)).collect();
    let mut scores = DMatrix::zeros(grid.len(), y.ncols());
    for (lo, hi) in fold_bounds(n, cfg.n_folds) {
        let train_rows: Vec<usize> = (0..lo).chain(hi..n).collect();
        let x_train = x.select_rows(&train_rows);
        let y_train = y.select_rows(&train_rows);
        let x_val = x.rows(lo, hi - lo).into_owned();
        let y_val = y.rows(lo, hi - lo).into_owned();

        let features = Standardizer::fit(&x_train, cfg.standardize);
        let solver = SvdRidge::new(&features.transform(&x_train))?;
        let projected = solver.project(&center_columns(&y_train, &column_means(&y_train)));
        let rotated = solver.rotate(&features.transform(&x_val));
        for (g, &lambda) in grid.iter().enumerate() {
            let scaled = solver.scale_projection(&projected, &vec![lambda; y.ncols()]);
            let pred = &rotated * scaled;
            let r = pearson_scores(&pred, &y_val)?;
            for (v, rv) in r.r.into_iter().enumerate() {
                scores[(g, v)] += rv;
            }
        }
    }
    let folds = T::of_usize(cfg.n_folds);
    Ok(scores / folds)
}

/// Chooses, per voxel, the grid penalty with the best mean held-out
/// correlation over contiguous folds; ties go to the larger penalty.
pub fn cross_validate_lambda<T: Real>(x: &DMatrix<T>, y: &DMatrix<T>, cfg: &RidgeConfig) -> Result<Vec<T>> {
    cfg.validate()?;
    if cfg.lambda_grid.len() == 1 {
        return Ok(vec![T::of(cfg.lambda_grid[0]); y.ncols()]);
    }
    let scores = cross_validation_scores(x, y, cfg)?;
    Ok((0..y.ncols())
        .map(|v| {
            let mut best = 0;
            for g in 1..scores.nrows() {
                if scores[(g, v)] >= scores[(best, v)] {
                    best = g;
                }
            }
            T::of(cfg.lambda_grid[best])
        })
        .collect())
}
