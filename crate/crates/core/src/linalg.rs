//! Small dense complex linear-algebra helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

use crate::error::{IsacError, Result};

pub type CMatrix = DMatrix<Complex64>;
pub type CVector = DVector<Complex64>;

pub const ZERO: Complex64 = Complex64 { re: 0.0, im: 0.0 };
pub const ONE: Complex64 = Complex64 { re: 1.0, im: 0.0 };

/// `(M + M^H) / 2`.
pub fn hermitian_part(m: &CMatrix) -> CMatrix {
    (m + m.adjoint()).scale(0.5)
}

/// `v v^H`.
pub fn outer(v: &CVector) -> CMatrix {
    v * v.adjoint()
}

/// Real part of the trace.
pub fn trace_re(m: &CMatrix) -> f64 {
    m.trace().re
}

/// Real inner product `Re tr(A^H B)`.
pub fn real_inner(a: &CMatrix, b: &CMatrix) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x.conj() * y).re).sum()
}

/// `Re(v^H M v)`.
pub fn quad_form(m: &CMatrix, v: &CVector) -> f64 {
    (v.adjoint() * m * v)[(0, 0)].re
}

/// Largest absolute deviation from Hermitian symmetry.
pub fn hermitian_defect(m: &CMatrix) -> f64 {
    let n = m.nrows();
    let mut worst = 0.0_f64;
    for i in 0..n {
        for j in 0..n {
            worst = worst.max((m[(i, j)] - m[(j, i)].conj()).norm());
        }
    }
    worst
}

/// Eigenvalues of the Hermitian part, ascending, with matching eigenvectors.
pub fn hermitian_eigen(m: &CMatrix) -> (Vec<f64>, CMatrix) {
    let eig = hermitian_part(m).symmetric_eigen();
    let mut order: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let values = order.iter().map(|&i| eig.eigenvalues[i]).collect();
    let vectors = CMatrix::from_columns(
        &order.iter().map(|&i| eig.eigenvectors.column(i).into_owned()).collect::<Vec<_>>(),
    );
    (values, vectors)
}

/// Eigenvalues of the Hermitian part, ascending.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let mut values: Vec<f64> = hermitian_part(m).symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

pub fn min_eigenvalue(m: &CMatrix) -> f64 {
    hermitian_eigenvalues(m).first().copied().unwrap_or(0.0)
}

/// Ratio of the second-largest to the largest eigenvalue (0 for a 1×1 or zero matrix).
pub fn second_eigen_ratio(m: &CMatrix) -> f64 {
    let values = hermitian_eigenvalues(m);
    let n = values.len();
    if n < 2 || values[n - 1] <= 0.0 {
        return 0.0;
    }
    values[n - 2].max(0.0) / values[n - 1]
}

/// Lower-triangular `L` with `L L^H = A` for a positive semidefinite `A`.
///
/// Strict Cholesky is tried first. If it fails (the residual is only
/// semidefinite, or slightly indefinite from roundoff) the eigenvalues are
/// clipped at `jitter * tr(A)` from below to zero and the clipped square root
/// is brought back to lower-triangular form through a QR factorization.
/// Eigenvalues below `-tol_neg * tr(A)` are reported as an order violation.
pub fn psd_lower_factor(a: &CMatrix, jitter: f64, tol_neg: f64) -> Result<CMatrix> {
    let a = hermitian_part(a);
    let n = a.nrows();
    let trace = trace_re(&a).max(0.0);
    if n == 0 {
        return Ok(a);
    }
    let (values, vectors) = hermitian_eigen(&a);
    let min_eig = values[0];
    if min_eig < -tol_neg * trace.max(f64::MIN_POSITIVE) {
        return Err(IsacError::OrderViolation { min_eig, trace });
    }
    if min_eig > jitter * trace {
        if let Some(chol) = a.clone().cholesky() {
            return Ok(chol.unpack());
        }
    }
    let cutoff = jitter * trace;
    let mut root = vectors.clone();
    for (j, &lambda) in values.iter().enumerate() {
        let s = if lambda > cutoff { lambda.sqrt() } else { 0.0 };
        root.column_mut(j).scale_mut(s);
    }
    // B = V sqrt(Λ) satisfies B B^H = A_clipped; QR of B^H gives B = R^H Q^H.
    let qr = root.adjoint().qr();
    let mut r = qr.r();
    for i in 0..n {
        let d = r[(i, i)];
        let mag = d.norm();
        if mag > 0.0 {
            let phase = d.conj() / mag;
            for j in 0..n {
                r[(i, j)] *= phase;
            }
        }
    }
    Ok(r.adjoint())
}

/// Frobenius norm.
pub fn fro(m: &CMatrix) -> f64 {
    m.norm()
}

pub fn from_real(m: &DMatrix<f64>) -> CMatrix {
    m.map(|v| Complex64::new(v, 0.0))
}
