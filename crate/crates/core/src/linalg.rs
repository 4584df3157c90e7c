//! Small dense linear-algebra helpers shared by the fitting code.

use nalgebra::{DMatrix, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Singular values (descending) and the matching right singular vectors as
/// rows, for all `min(rows, cols)` components of `x`.
pub fn right_singular(x: &DMatrix<f64>) -> Result<(Vec<f64>, DMatrix<f64>)> {
    let svd = SVD::try_new(x.clone(), false, true, f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("SVD did not converge".into()))?;
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::NumericalFailure("SVD returned no right vectors".into()))?;
    let sigma = svd.singular_values;
    if sigma.iter().any(|s| !s.is_finite()) {
        return Err(Error::NumericalFailure("non-finite singular value".into()));
    }
    let mut order: Vec<usize> = (0..sigma.len()).collect();
    // stable sort keeps the solver's order for exact ties, so fits stay reproducible
    order.sort_by(|&a, &b| sigma[b].total_cmp(&sigma[a]));
    let values = order.iter().map(|&i| sigma[i].max(0.0)).collect();
    let mut rows = DMatrix::zeros(order.len(), x.ncols());
    for (dst, &src) in order.iter().enumerate() {
        rows.row_mut(dst).copy_from(&v_t.row(src));
    }
    Ok((values, rows))
}

/// Flips each row so its entry of largest magnitude is positive; exact ties
/// resolve to the lowest index. Returns the applied signs.
pub fn canonicalize_row_signs(rows: &mut DMatrix<f64>) -> Vec<f64> {
    let mut signs = Vec::with_capacity(rows.nrows());
    for r in 0..rows.nrows() {
        let mut best = 0;
        let mut best_abs = -1.0;
        for c in 0..rows.ncols() {
            let a = rows[(r, c)].abs();
            if a > best_abs {
                best_abs = a;
                best = c;
            }
        }
        let sign = if rows.ncols() > 0 && rows[(r, best)] < 0.0 {
            -1.0
        } else {
            1.0
        };
        if sign < 0.0 {
            rows.row_mut(r).neg_mut();
        }
        signs.push(sign);
    }
    signs
}

/// Largest entrywise deviation of `rows * rows^T` from the identity.
pub fn max_gram_deviation(rows: &DMatrix<f64>) -> f64 {
    let gram = rows * rows.transpose();
    let mut worst: f64 = 0.0;
    for i in 0..gram.nrows() {
        for j in 0..gram.ncols() {
            let target = if i == j { 1.0 } else { 0.0 };
            let dev = (gram[(i, j)] - target).abs();
            // NaN must register as a violation
            if dev.is_nan() {
                return f64::INFINITY;
            }
            worst = worst.max(dev);
        }
    }
    worst
}

/// `(W W^T)^{-1/2} W`: the closest matrix with orthonormal rows.
pub fn symmetric_decorrelation(w: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::try_new(w * w.transpose(), f64::EPSILON, 0)
        .ok_or_else(|| Error::NumericalFailure("eigendecomposition did not converge".into()))?;
    let min = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) {
        return Err(Error::NumericalFailure(
            "singular matrix in symmetric decorrelation".into(),
        ));
    }
    let inv_sqrt = DMatrix::from_diagonal(&eig.eigenvalues.map(|l| 1.0 / l.sqrt()));
    let q = &eig.eigenvectors;
    Ok(q * inv_sqrt * q.transpose() * w)
}
