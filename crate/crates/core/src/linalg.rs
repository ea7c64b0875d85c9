//! Small dense helpers shared by the estimation, LMI and solver modules.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{config, Result};

/// Returns `(M + Mᵀ)/2`.
pub fn symmetrize(m: &DMatrix<f64>) -> DMatrix<f64> {
    (m + m.transpose()) * 0.5
}

/// Largest absolute entry, zero for empty matrices.
pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0_f64, |acc, v| acc.max(v.abs()))
}

/// Smallest eigenvalue of the symmetric part of `m`.
pub fn min_eigenvalue(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(m))
        .eigenvalues
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min)
}

/// Symmetrizes `m` and clips eigenvalues below zero.
///
/// Returns the clipped matrix and the magnitude of the most negative eigenvalue that was removed.
pub fn clip_psd(m: &DMatrix<f64>) -> (DMatrix<f64>, f64) {
    let n = m.nrows();
    if n == 0 {
        return (m.clone(), 0.0);
    }
    let eig = SymmetricEigen::new(symmetrize(m));
    let worst = eig.eigenvalues.iter().cloned().fold(0.0_f64, f64::min);
    if worst >= 0.0 {
        return (symmetrize(m), 0.0);
    }
    let clipped = eig.eigenvalues.map(|v| v.max(0.0));
    let v = &eig.eigenvectors;
    let out = v * DMatrix::from_diagonal(&clipped) * v.transpose();
    (symmetrize(&out), -worst)
}

/// Block-diagonal concatenation.
pub fn block_diag(blocks: &[DMatrix<f64>]) -> DMatrix<f64> {
    let rows: usize = blocks.iter().map(|b| b.nrows()).sum();
    let cols: usize = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = DMatrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), (b.nrows(), b.ncols())).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Kronecker product `I_q ⊗ M`.
pub fn kron_identity(q: usize, m: &DMatrix<f64>) -> DMatrix<f64> {
    block_diag(&vec![m.clone(); q])
}

/// Checks that `m` is symmetric within `tol` (absolute, scaled by `1 + max|m|`).
pub fn check_symmetric(m: &DMatrix<f64>, tol: f64, what: &str) -> Result<()> {
    if !m.is_square() {
        return config(format!("{what} must be square, got {}x{}", m.nrows(), m.ncols()));
    }
    let asym = max_abs(&(m - m.transpose()));
    if asym > tol * (1.0 + max_abs(m)) {
        return config(format!("{what} is not symmetric (max asymmetry {asym:.3e})"));
    }
    Ok(())
}

/// Checks symmetry and that the smallest eigenvalue is at least `-1e-10·‖m‖`.
pub fn check_psd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    check_symmetric(m, 1e-12, what)?;
    let norm = m.norm();
    let lam = min_eigenvalue(m);
    if lam < -1e-10 * norm {
        return config(format!("{what} is not positive semidefinite (min eigenvalue {lam:.3e})"));
    }
    Ok(())
}

/// Builds a row-major matrix, validating the element count.
pub fn from_row_major(rows: usize, cols: usize, data: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if data.len() != rows * cols {
        return config(format!(
            "{what}: expected {rows}x{cols} = {} entries, got {}",
            rows * cols,
            data.len()
        ));
    }
    Ok(DMatrix::from_row_slice(rows, cols, data))
}

/// Row-major flattening (inverse of [`from_row_major`]).
pub fn to_row_major(m: &DMatrix<f64>) -> Vec<f64> {
    let mut out = Vec::with_capacity(m.len());
    for i in 0..m.nrows() {
        for j in 0..m.ncols() {
            out.push(m[(i, j)]);
        }
    }
    out
}

/// Keeps only the listed rows.
pub fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    let mut out = DMatrix::zeros(rows.len(), m.ncols());
    for (k, &r) in rows.iter().enumerate() {
        out.row_mut(k).copy_from(&m.row(r));
    }
    out
}

/// Trace of `mask · P · maskᵀ` for a leading or trailing identity mask is just a partial trace;
/// this helper computes the general case.
pub fn masked_trace(mask: &DMatrix<f64>, p: &DMatrix<f64>) -> f64 {
    (mask * p * mask.transpose()).trace()
}

/// Diagonal matrix from a slice.
pub fn diag(v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_diagonal(&DVector::from_row_slice(v))
}

/// Spectral radius through the real Schur form.
pub fn spectral_radius(m: &DMatrix<f64>) -> f64 {
    if m.nrows() == 0 {
        return 0.0;
    }
    m.complex_eigenvalues()
        .iter()
        .map(|z| z.norm())
        .fold(0.0, f64::max)
}
