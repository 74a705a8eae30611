//! Orthogonal Procrustes alignment of hidden representations and its action
//! on next-layer weights.
//!
//! Representations are stored one observation per row. The alignment `A`
//! maps the first network's representation onto the second's
//! (`φ′(x) ≈ A φ(x)`), and a first-network neuron row `w` becomes `w Aᵀ` in
//! the second network's coordinates.

use alloc::string::String;

use crate::error::{Error, Result};
use crate::factorization::ChannelWeight;
use crate::linalg::{check_finite, orthogonality_defect, svd, Matrix};

#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMatrix {
    /// `n x d`, one observation per row.
    pub samples: Matrix,
    pub layer_index: usize,
    pub label: String,
}

impl ActivationMatrix {
    pub fn new(samples: Matrix, layer_index: usize, label: impl Into<String>) -> Result<Self> {
        if samples.nrows() == 0 || samples.ncols() == 0 {
            return Err(crate::error::invalid("activation matrix must be non-empty"));
        }
        check_finite(&samples)?;
        Ok(Self {
            samples,
            layer_index,
            label: label.into(),
        })
    }

    pub fn n(&self) -> usize {
        self.samples.nrows()
    }

    pub fn dim(&self) -> usize {
        self.samples.ncols()
    }

    /// Keeps the first `cap` observations.
    pub fn truncated(&self, cap: usize) -> Self {
        let n = self.n().min(cap.max(1));
        Self {
            samples: self.samples.rows(0, n).into_owned(),
            layer_index: self.layer_index,
            label: self.label.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AlignmentMap {
    /// Orthogonal `d x d`.
    pub matrix: Matrix,
    pub source: String,
    pub target: String,
    pub layer_index: usize,
    /// Number of cross-moment singular values below `1e-10` (non-unique
    /// directions).
    pub degeneracy: usize,
}

impl AlignmentMap {
    pub fn identity(d: usize, layer_index: usize) -> Self {
        Self {
            matrix: Matrix::identity(d, d),
            source: String::new(),
            target: String::new(),
            layer_index,
            degeneracy: 0,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn inverse(&self) -> Self {
        Self {
            matrix: self.matrix.transpose(),
            source: self.target.clone(),
            target: self.source.clone(),
            layer_index: self.layer_index,
            degeneracy: self.degeneracy,
        }
    }

    /// Block-diagonal `I_K ⊗ A`, for applying a channel alignment to the
    /// filter-major `K C_in` inputs of a factorized layer.
    pub fn lifted(&self, blocks: usize) -> Self {
        let d = self.dim();
        let mut m = Matrix::zeros(d * blocks, d * blocks);
        for b in 0..blocks {
            m.view_mut((b * d, b * d), (d, d)).copy_from(&self.matrix);
        }
        Self {
            matrix: m,
            source: self.source.clone(),
            target: self.target.clone(),
            layer_index: self.layer_index,
            degeneracy: self.degeneracy * blocks,
        }
    }

    pub fn orthogonality_defect(&self) -> f64 {
        orthogonality_defect(&self.matrix)
    }
}

/// Singular values below this count towards [`AlignmentMap::degeneracy`].
pub const DEGENERATE_SINGULAR_VALUE: f64 = 1e-10;

/// `(1/n) Σ φ′(x) φ(x)ᵀ`, optionally with both sides mean-centered.
pub fn cross_moment(phi: &ActivationMatrix, phi_prime: &ActivationMatrix, centered: bool) -> Result<Matrix> {
    if phi.n() != phi_prime.n() {
        return Err(Error::DimensionMismatch {
            what: "observation count",
            expected: phi.n(),
            found: phi_prime.n(),
        });
    }
    if phi.dim() != phi_prime.dim() {
        return Err(Error::DimensionMismatch {
            what: "representation dimension",
            expected: phi.dim(),
            found: phi_prime.dim(),
        });
    }
    let n = phi.n() as f64;
    if centered {
        let center = |m: &Matrix| {
            let mean = m.row_mean();
            let mut c = m.clone();
            for mut row in c.row_iter_mut() {
                row -= &mean;
            }
            c
        };
        Ok(center(&phi_prime.samples).transpose() * center(&phi.samples) / n)
    } else {
        Ok(phi_prime.samples.transpose() * &phi.samples / n)
    }
}

/// Closed-form minimizer of `E‖A φ(x) − φ′(x)‖²` over orthogonal `A`:
/// `A = U Vᵀ` for `U Σ Vᵀ` the SVD of the cross-moment.
pub fn procrustes_align(phi: &ActivationMatrix, phi_prime: &ActivationMatrix, centered: bool) -> Result<AlignmentMap> {
    let m = cross_moment(phi, phi_prime, centered)?;
    let dec = svd(&m)?;
    let scale = dec.singular_values.first().copied().unwrap_or(0.0).max(1.0);
    let degeneracy = dec
        .singular_values
        .iter()
        .filter(|&&s| s < DEGENERATE_SINGULAR_VALUE * scale)
        .count();
    Ok(AlignmentMap {
        matrix: &dec.u * dec.v.transpose(),
        source: phi.label.clone(),
        target: phi_prime.label.clone(),
        layer_index: phi.layer_index,
        degeneracy,
    })
}

/// Mean squared alignment error `(1/n) ‖Φ Aᵀ − Φ′‖²_F`.
pub fn alignment_objective(phi: &ActivationMatrix, phi_prime: &ActivationMatrix, a: &Matrix) -> f64 {
    (&phi.samples * a.transpose() - &phi_prime.samples).norm_squared() / phi.n() as f64
}

/// Rewrites every neuron row `w` as `w Aᵀ`, i.e. `M Aᵀ`.
pub fn align_weights(c: &ChannelWeight, a: &AlignmentMap) -> Result<ChannelWeight> {
    if a.dim() != c.input_dim() {
        return Err(Error::DimensionMismatch {
            what: "alignment dimension",
            expected: c.input_dim(),
            found: a.dim(),
        });
    }
    let mut out = c.clone();
    out.matrix = &c.matrix * a.matrix.transpose();
    Ok(out)
}
