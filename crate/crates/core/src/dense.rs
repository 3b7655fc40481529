//! Dense symmetric eigenvalue helpers for small generalized pencils.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Largest eigenpair of a generalized pencil `X v = λ Y v`.
#[derive(Clone, Debug)]
pub struct Eigenpair {
    pub value: f64,
    pub vector: DVector<f64>,
}

pub fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for i in 0..n {
        for j in 0..i {
            let s = 0.5 * (m[(i, j)] + m[(j, i)]);
            m[(i, j)] = s;
            m[(j, i)] = s;
        }
    }
}

/// Ascending eigenvalues of a symmetric matrix.
pub fn eigenvalues(mut m: DMatrix<f64>) -> Vec<f64> {
    symmetrize(&mut m);
    let mut v: Vec<f64> = m.symmetric_eigenvalues().iter().copied().collect();
    v.sort_by(f64::total_cmp);
    v
}

pub fn largest_eigenpair(mut m: DMatrix<f64>) -> Result<Eigenpair> {
    symmetrize(&mut m);
    let n = m.nrows();
    if n == 0 {
        return Err(Error::EigFailure("empty matrix".into()));
    }
    let eig = SymmetricEigen::try_new(m, f64::EPSILON, 100 * n.max(10))
        .ok_or_else(|| Error::EigFailure(format!("QR iteration did not converge for n = {n}")))?;
    let (k, &value) = eig.eigenvalues.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).expect("nonempty spectrum");
    Ok(Eigenpair { value, vector: eig.eigenvectors.column(k).into_owned() })
}

/// Largest eigenpair of `(X, Y)` given any `R` with `Y⁻¹ = R Rᵀ`: the
/// pencil is congruent to `Rᵀ X R`, and `v = R z`.
pub fn largest_reduced(x: &DMatrix<f64>, r: &DMatrix<f64>) -> Result<Eigenpair> {
    let c = r.transpose() * x * r;
    let top = largest_eigenpair(c)?;
    Ok(Eigenpair { value: top.value, vector: r * top.vector })
}

/// Same as [`largest_reduced`] for a diagonal right-hand side `Y = diag(y)`.
pub fn largest_diagonal_pencil(x: &DMatrix<f64>, y: &[f64]) -> Result<Eigenpair> {
    let s: Vec<f64> = y.iter().map(|v| 1.0 / v.sqrt()).collect();
    let mut c = x.clone();
    for j in 0..c.ncols() {
        for i in 0..c.nrows() {
            c[(i, j)] *= s[i] * s[j];
        }
    }
    let top = largest_eigenpair(c)?;
    let v = DVector::from_iterator(s.len(), top.vector.iter().zip(&s).map(|(z, s)| z * s));
    Ok(Eigenpair { value: top.value, vector: v })
}

/// `‖Xv − λYv‖ / (‖Xv‖ + λ‖Yv‖)`.
pub fn pencil_residual(x: &DMatrix<f64>, y: &DMatrix<f64>, pair: &Eigenpair) -> f64 {
    let xv = x * &pair.vector;
    let yv = y * &pair.vector;
    let denom = xv.norm() + pair.value.abs() * yv.norm();
    if denom == 0.0 {
        0.0
    } else {
        (xv - yv * pair.value).norm() / denom
    }
}

pub fn cholesky_lower(m: DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    m.cholesky().map(|c| c.unpack()).ok_or_else(|| Error::SolveFailure(format!("dense Cholesky failed for n = {n}")))
}

/// Spectral condition number of a symmetric positive definite matrix.
pub fn condition_number(m: DMatrix<f64>) -> Result<f64> {
    let ev = eigenvalues(m);
    let (lo, hi) = (ev[0], ev[ev.len() - 1]);
    if !(lo > 0.0) {
        return Err(Error::SingularMatrix(lo));
    }
    Ok(hi / lo)
}
