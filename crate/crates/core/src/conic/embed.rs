//! Real embedding of complex Hermitian matrices.
//!
//! `H = A + jB` (A symmetric, B antisymmetric) maps to
//! `[[A, −B], [B, A]]`, which is PSD iff `H` is, has each eigenvalue of `H`
//! twice, and satisfies `⟨embed(H₁), embed(H₂)⟩ = 2 Re tr(H₁ H₂)`.

use nalgebra::DMatrix;
use num_complex::Complex64;

use crate::linalg::CMatrix;

pub fn embed(h: &CMatrix) -> DMatrix<f64> {
    let n = h.nrows();
    let mut out = DMatrix::zeros(2 * n, 2 * n);
    for i in 0..n {
        for j in 0..n {
            let v = h[(i, j)];
            out[(i, j)] = v.re;
            out[(i + n, j + n)] = v.re;
            out[(i, j + n)] = -v.im;
            out[(i + n, j)] = v.im;
        }
    }
    out
}

/// Inverse of [`embed`] on its range; for a general symmetric `Y` returns the
/// Hermitian matrix whose embedding is the orthogonal projection of `Y` onto
/// that range.
pub fn de_embed(y: &DMatrix<f64>) -> CMatrix {
    let n = y.nrows() / 2;
    CMatrix::from_fn(n, n, |i, j| {
        let re = 0.5 * (y[(i, j)] + y[(i + n, j + n)]);
        let im = 0.5 * (y[(i + n, j)] - y[(i, j + n)]);
        Complex64::new(re, im)
    })
}
