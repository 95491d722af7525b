//! Small dense helpers shared by the model and gradient code.

use nalgebra::{Cholesky, DMatrix, Dyn};

pub(crate) const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Lower Cholesky factor, or `None` when a pivot is not strictly positive.
pub(crate) fn cholesky(a: &DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let chol = Cholesky::new(a.clone())?;
    let l = chol.l_dirty();
    if (0..l.nrows()).all(|i| l[(i, i)].is_finite() && l[(i, i)] > 0.0) {
        Some(chol)
    } else {
        None
    }
}

pub(crate) fn log_det_from_lower(l: &DMatrix<f64>) -> f64 {
    2.0 * (0..l.nrows()).map(|i| l[(i, i)].ln()).sum::<f64>()
}

/// Solves `L z = b` in place for lower-triangular `L`.
#[inline]
pub(crate) fn solve_lower_in_place(l: &DMatrix<f64>, b: &mut [f64]) {
    let n = b.len();
    for i in 0..n {
        let mut s = b[i];
        for j in 0..i {
            s -= l[(i, j)] * b[j];
        }
        b[i] = s / l[(i, i)];
    }
}

/// `max |A - Aᵀ| / max |A|`, zero for the zero matrix.
pub(crate) fn relative_asymmetry(a: &DMatrix<f64>) -> f64 {
    let scale = a.amax();
    if scale == 0.0 {
        return 0.0;
    }
    let mut worst = 0.0_f64;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst / scale
}

pub(crate) fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

/// `y += alpha * A x` for column-major `A` and slices.
#[inline]
pub(crate) fn gemv_acc(y: &mut [f64], alpha: f64, a: &DMatrix<f64>, x: &[f64]) {
    let rows = a.nrows();
    for (j, &xj) in x.iter().enumerate() {
        let s = alpha * xj;
        if s == 0.0 {
            continue;
        }
        let col = a.column(j);
        for i in 0..rows {
            y[i] += s * col[i];
        }
    }
}

/// `y += alpha * Aᵀ x`.
#[inline]
pub(crate) fn gemv_t_acc(y: &mut [f64], alpha: f64, a: &DMatrix<f64>, x: &[f64]) {
    for (j, yj) in y.iter_mut().enumerate() {
        let col = a.column(j);
        let mut s = 0.0;
        for (i, &xi) in x.iter().enumerate() {
            s += col[i] * xi;
        }
        *yj += alpha * s;
    }
}

/// `A += alpha * u vᵀ`.
#[inline]
pub(crate) fn rank_one_acc(a: &mut DMatrix<f64>, alpha: f64, u: &[f64], v: &[f64]) {
    for (j, &vj) in v.iter().enumerate() {
        let s = alpha * vj;
        if s == 0.0 {
            continue;
        }
        let mut col = a.column_mut(j);
        for (i, &ui) in u.iter().enumerate() {
            col[i] += s * ui;
        }
    }
}

#[inline]
pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}
