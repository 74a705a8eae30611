//! Dense linear-algebra primitives shared by all analysis modules.
//!
//! Everything is computed in `f64`. Decompositions are delegated to
//! `nalgebra`; this module adds the ordering and sign conventions the rest of
//! the crate relies on for reproducible output.

use alloc::vec::Vec;

use nalgebra::DMatrix;
use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::gaussian_matrix;

pub type Matrix = DMatrix<f64>;

/// Eigenvalues sorted in descending order with matching orthonormal
/// eigenvector columns.
///
/// Each eigenvector is signed so that its entry of largest magnitude is
/// positive (lowest index wins a tie).
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub eigenvalues: Vec<f64>,
    pub eigenvectors: Matrix,
}

impl Spectrum {
    pub fn dim(&self) -> usize {
        self.eigenvectors.nrows()
    }

    pub fn len(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn is_empty(&self) -> bool {
        self.eigenvalues.is_empty()
    }

    /// `V diag(f(λ)) Vᵀ`.
    pub fn recompose_with(&self, mut f: impl FnMut(f64) -> f64) -> Matrix {
        let mut scaled = self.eigenvectors.clone();
        for (j, &lambda) in self.eigenvalues.iter().enumerate() {
            let s = f(lambda);
            scaled.column_mut(j).scale_mut(s);
        }
        symmetrize(&(scaled * self.eigenvectors.transpose()))
    }

    pub fn recompose(&self) -> Matrix {
        self.recompose_with(|l| l)
    }

    /// Same eigenvectors, eigenvalues mapped through `f`. Order is kept even
    /// if `f` is not monotone.
    pub fn map_eigenvalues(&self, f: impl FnMut(f64) -> f64) -> Spectrum {
        Spectrum {
            eigenvalues: self.eigenvalues.iter().copied().map(f).collect(),
            eigenvectors: self.eigenvectors.clone(),
        }
    }
}

/// Thin singular value decomposition `M = U diag(s) Vᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Svd {
    pub u: Matrix,
    pub singular_values: Vec<f64>,
    pub v: Matrix,
}

impl Svd {
    pub fn recompose(&self) -> Matrix {
        let mut us = self.u.clone();
        for (j, &s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(s);
        }
        us * self.v.transpose()
    }
}

pub fn check_finite(m: &Matrix) -> Result<()> {
    if m.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::NonFinite)
    }
}

fn check_square(m: &Matrix) -> Result<usize> {
    if m.nrows() != m.ncols() {
        return Err(Error::NotSquare {
            rows: m.nrows(),
            cols: m.ncols(),
        });
    }
    Ok(m.nrows())
}

pub fn symmetrize(m: &Matrix) -> Matrix {
    (m + m.transpose()) * 0.5
}

/// Flips `col` so that its largest-magnitude entry is positive. Returns the
/// sign that was applied.
fn canonical_sign(col: &[f64]) -> f64 {
    let mut best = 0usize;
    let mut best_abs = f64::NEG_INFINITY;
    for (i, &x) in col.iter().enumerate() {
        let a = libm::fabs(x);
        if a > best_abs {
            best_abs = a;
            best = i;
        }
    }
    if col.get(best).copied().unwrap_or(0.0) < 0.0 {
        -1.0
    } else {
        1.0
    }
}

fn descending_order(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    // Stable sort keeps the solver's order for exact ties.
    order.sort_by(|&a, &b| values[b].total_cmp(&values[a]));
    order
}

/// Symmetric eigendecomposition. The input is symmetrized as `(M + Mᵀ)/2`
/// first.
pub fn sym_eig(m: &Matrix) -> Result<Spectrum> {
    let d = check_square(m)?;
    check_finite(m)?;
    if d == 0 {
        return Ok(Spectrum {
            eigenvalues: Vec::new(),
            eigenvectors: Matrix::zeros(0, 0),
        });
    }
    let eig = symmetrize(m).symmetric_eigen();
    let raw: Vec<f64> = eig.eigenvalues.iter().copied().collect();
    let order = descending_order(&raw);
    let mut vectors = Matrix::zeros(d, d);
    let mut eigenvalues = Vec::with_capacity(d);
    for (dst, &src) in order.iter().enumerate() {
        let col: Vec<f64> = eig.eigenvectors.column(src).iter().copied().collect();
        let sign = canonical_sign(&col);
        for (i, x) in col.iter().enumerate() {
            vectors[(i, dst)] = sign * x;
        }
        eigenvalues.push(raw[src]);
    }
    Ok(Spectrum {
        eigenvalues,
        eigenvectors: vectors,
    })
}

/// Thin SVD with descending singular values. Each left singular vector is
/// signed like an eigenvector (largest entry positive) and the matching right
/// vector is flipped with it.
pub fn svd(m: &Matrix) -> Result<Svd> {
    check_finite(m)?;
    let (rows, cols) = m.shape();
    let r = rows.min(cols);
    if r == 0 {
        return Ok(Svd {
            u: Matrix::zeros(rows, 0),
            singular_values: Vec::new(),
            v: Matrix::zeros(cols, 0),
        });
    }
    let dec = m.clone().svd(true, true);
    let (u_raw, vt_raw) = match (dec.u, dec.v_t) {
        (Some(u), Some(vt)) => (u, vt),
        _ => unreachable!("nalgebra svd called with compute_u and compute_v"),
    };
    let raw: Vec<f64> = dec.singular_values.iter().copied().collect();
    let order = descending_order(&raw);
    let mut u = Matrix::zeros(rows, r);
    let mut v = Matrix::zeros(cols, r);
    let mut singular_values = Vec::with_capacity(r);
    for (dst, &src) in order.iter().enumerate() {
        let ucol: Vec<f64> = u_raw.column(src).iter().copied().collect();
        let sign = canonical_sign(&ucol);
        for (i, x) in ucol.iter().enumerate() {
            u[(i, dst)] = sign * x;
        }
        for i in 0..cols {
            v[(i, dst)] = sign * vt_raw[(src, i)];
        }
        singular_values.push(raw[src].max(0.0));
    }
    Ok(Svd {
        u,
        singular_values,
        v,
    })
}

/// Eigenvalues below this are treated as genuine indefiniteness.
pub const PSD_REJECT: f64 = -1e-6;

/// Symmetric PSD square root. Small negative eigenvalues (round-off) are
/// clamped to zero.
pub fn psd_sqrt(c: &Matrix) -> Result<Matrix> {
    let spectrum = sym_eig(c)?;
    psd_sqrt_of(&spectrum)
}

pub(crate) fn psd_sqrt_of(spectrum: &Spectrum) -> Result<Matrix> {
    if let Some(&min) = spectrum.eigenvalues.last() {
        if min < PSD_REJECT {
            return Err(Error::NotPsd { eigenvalue: min });
        }
    }
    Ok(spectrum.recompose_with(|l| libm::sqrt(l.max(0.0))))
}

/// Sum of singular values.
pub fn nuclear_norm(m: &Matrix) -> Result<f64> {
    check_finite(m)?;
    if m.is_empty() {
        return Ok(0.0);
    }
    Ok(m.clone().singular_values().iter().map(|s| s.max(0.0)).sum())
}

pub fn trace(m: &Matrix) -> f64 {
    m.diagonal().iter().sum()
}

/// Haar-uniform random orthogonal matrix: QR of a Gaussian matrix with the
/// signs of `R`'s diagonal folded into `Q`.
pub fn haar_orthogonal<R: Rng + ?Sized>(rng: &mut R, d: usize) -> Matrix {
    let g = gaussian_matrix(rng, d, d);
    let qr = g.qr();
    let r = qr.r();
    let mut q = qr.q();
    for j in 0..d {
        if r[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    q
}

/// Orthonormal `d x r` column set obtained by orthonormalizing Gaussian
/// vectors.
pub fn random_orthonormal_columns<R: Rng + ?Sized>(rng: &mut R, d: usize, r: usize) -> Result<Matrix> {
    if r > d {
        return Err(crate::error::invalid(alloc::format!(
            "cannot draw {r} orthonormal vectors in dimension {d}"
        )));
    }
    let g = gaussian_matrix(rng, d, r);
    let qr = g.qr();
    let rr = qr.r();
    let mut q = qr.q();
    for j in 0..r {
        if rr[(j, j)] < 0.0 {
            q.column_mut(j).neg_mut();
        }
    }
    Ok(q)
}

/// `‖QᵀQ − I‖_F`.
pub fn orthogonality_defect(q: &Matrix) -> f64 {
    let n = q.ncols();
    (q.transpose() * q - Matrix::identity(n, n)).norm()
}
