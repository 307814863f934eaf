//! Small dense linear-algebra helpers shared by the filters.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

pub type Vector = DVector<f64>;
pub type Matrix = DMatrix<f64>;

/// Returns `(a + aᵀ) / 2`.
pub fn symmetrize(a: &Matrix) -> Matrix {
    (a + a.transpose()) * 0.5
}

pub fn is_symmetric(a: &Matrix, rel_tol: f64) -> bool {
    if !a.is_square() {
        return false;
    }
    let scale = a.amax().max(f64::MIN_POSITIVE);
    (a - a.transpose()).amax() <= rel_tol * scale
}

/// Lower Cholesky factorization; failure means the matrix is not SPD.
pub fn cholesky(a: &Matrix, what: &'static str) -> Result<Cholesky<f64, Dyn>> {
    if !a.iter().all(|v| v.is_finite()) {
        return Err(Error::NonFinite(what));
    }
    Cholesky::new(a.clone()).ok_or(Error::NotPositiveDefinite(what))
}

/// Inverse of an SPD matrix through its Cholesky factor, re-symmetrized.
pub fn spd_inverse(a: &Matrix, what: &'static str) -> Result<Matrix> {
    Ok(symmetrize(&cholesky(a, what)?.inverse()))
}

/// `log det A` from the Cholesky factor.
pub fn log_det(chol: &Cholesky<f64, Dyn>) -> f64 {
    2.0 * chol.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>()
}

pub fn check_finite_vec(v: &Vector, what: &'static str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_finite_mat(m: &Matrix, what: &'static str) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite(what))
    }
}

pub fn check_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}

/// Central-difference Jacobian with step `1e-6 · (1 + |x_i|)`.
pub fn numerical_jacobian<F>(f: F, x: &Vector) -> Matrix
where
    F: Fn(&Vector) -> Vector,
{
    let n = x.len();
    let mut cols = Vec::with_capacity(n);
    let mut xp = x.clone();
    for i in 0..n {
        let h = 1e-6 * (1.0 + x[i].abs());
        xp[i] = x[i] + h;
        let fp = f(&xp);
        xp[i] = x[i] - h;
        let fm = f(&xp);
        xp[i] = x[i];
        cols.push((fp - fm) / (2.0 * h));
    }
    let m = cols.first().map_or(0, |c| c.len());
    let mut jac = Matrix::zeros(m, n);
    for (i, c) in cols.into_iter().enumerate() {
        jac.set_column(i, &c);
    }
    jac
}

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::PI;
    let mut w = (a + PI).rem_euclid(2.0 * PI) - PI;
    if w <= -PI {
        w += 2.0 * PI;
    }
    w
}
