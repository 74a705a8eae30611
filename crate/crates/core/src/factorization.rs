//! Depthwise/pointwise factorization of convolution weights.
//!
//! A frozen spatial filter bank (leading spatial eigenvectors, optionally
//! followed by their negations) replaces the spatial part of a joint
//! convolution; what remains is a `C_out x (K C_in)` channel-mixing matrix.
//! Column `j * C_in + i` of that matrix belongs to bank filter `j` applied to
//! input channel `i`.

use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::linalg::Matrix;
use crate::spatial::{ConvWeight, SpatialSpectrum};

#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    k: usize,
    n_base: usize,
    with_opposites: bool,
    /// `K` flattened `k x k` filters.
    filters: Vec<Vec<f64>>,
}

impl FilterBank {
    /// Builds a bank from explicit filters. `n_base` leading filters must be
    /// orthonormal; with `with_opposites` the remaining `n_base` filters must
    /// be their negations.
    pub fn from_filters(k: usize, filters: Vec<Vec<f64>>, with_opposites: bool) -> Result<Self> {
        if k == 0 || filters.is_empty() {
            return Err(invalid("filter bank must be non-empty"));
        }
        if let Some(f) = filters.iter().find(|f| f.len() != k * k) {
            return Err(Error::DimensionMismatch {
                what: "bank filter length",
                expected: k * k,
                found: f.len(),
            });
        }
        let n_base = if with_opposites {
            if !filters.len().is_multiple_of(2) {
                return Err(invalid("an opposite-pair bank needs an even number of filters"));
            }
            let half = filters.len() / 2;
            for j in 0..half {
                if filters[j].iter().zip(&filters[j + half]).any(|(a, b)| *a != -*b) {
                    return Err(invalid(alloc::format!("filter {} is not the negation of filter {j}", j + half)));
                }
            }
            half
        } else {
            filters.len()
        };
        if n_base > k * k {
            return Err(invalid(alloc::format!("{n_base} base filters exceed spatial dimension {}", k * k)));
        }
        Ok(Self {
            k,
            n_base,
            with_opposites,
            filters,
        })
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    /// Bank size `K`.
    pub fn len(&self) -> usize {
        self.filters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.filters.is_empty()
    }

    pub fn n_base(&self) -> usize {
        self.n_base
    }

    pub fn with_opposites(&self) -> bool {
        self.with_opposites
    }

    pub fn filter(&self, j: usize) -> &[f64] {
        &self.filters[j]
    }

    pub fn filters(&self) -> &[Vec<f64>] {
        &self.filters
    }

    /// Gram matrix of the base filters.
    pub fn base_gram(&self) -> Matrix {
        Matrix::from_fn(self.n_base, self.n_base, |a, b| dot(&self.filters[a], &self.filters[b]))
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Takes the `n_base` leading spatial eigenvectors, appending their
/// negations when `with_opposites` is set (`K = 2 n_base`).
pub fn build_filter_bank(s: &SpatialSpectrum, n_base: usize, with_opposites: bool) -> Result<FilterBank> {
    let kk = s.kernel_size * s.kernel_size;
    if n_base == 0 || n_base > kk {
        return Err(invalid(alloc::format!("n_base must lie in 1..={kk}, got {n_base}")));
    }
    let mut filters: Vec<Vec<f64>> = (0..n_base).map(|r| s.eigenvector_image(r)).collect();
    if with_opposites {
        let negated: Vec<Vec<f64>> = filters.iter().map(|f| f.iter().map(|x| -x).collect()).collect();
        filters.extend(negated);
    }
    FilterBank::from_filters(s.kernel_size, filters, with_opposites)
}

/// Pointwise (channel-mixing) weights of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelWeight {
    /// `C_out x (K C_in)`; rows are neurons.
    pub matrix: Matrix,
    pub layer_index: usize,
    pub bank: Option<FilterBank>,
    pub init_std: Option<f64>,
}

impl ChannelWeight {
    pub fn new(matrix: Matrix, layer_index: usize) -> Self {
        Self {
            matrix,
            layer_index,
            bank: None,
            init_std: None,
        }
    }

    pub fn with_bank(mut self, bank: FilterBank) -> Self {
        self.bank = Some(bank);
        self
    }

    pub fn with_init_std(mut self, std: Option<f64>) -> Self {
        self.init_std = std;
        self
    }

    pub fn c_out(&self) -> usize {
        self.matrix.nrows()
    }

    /// Input dimension `K C_in`.
    pub fn input_dim(&self) -> usize {
        self.matrix.ncols()
    }
}

/// `M[o, j C_in + i] = ⟨w[o,i], f_j⟩`.
pub fn project_joint_to_channel(w: &ConvWeight, bank: &FilterBank) -> Result<ChannelWeight> {
    if bank.k != w.kernel_size() {
        return Err(Error::DimensionMismatch {
            what: "bank kernel size",
            expected: w.kernel_size(),
            found: bank.k,
        });
    }
    let (c_out, c_in, big_k) = (w.c_out(), w.c_in(), bank.len());
    let mut m = Matrix::zeros(c_out, big_k * c_in);
    for o in 0..c_out {
        for i in 0..c_in {
            let slice = w.filter(o, i);
            for (j, f) in bank.filters.iter().enumerate() {
                m[(o, j * c_in + i)] = dot(slice, f);
            }
        }
    }
    Ok(ChannelWeight {
        matrix: m,
        layer_index: w.layer_index,
        bank: Some(bank.clone()),
        init_std: None,
    })
}

/// `w[o,i] = Σ_j M[o, j C_in + i] f_j`.
pub fn reconstruct_joint(c: &ChannelWeight) -> Result<ConvWeight> {
    let bank = c.bank.as_ref().ok_or(Error::MissingBank)?;
    let big_k = bank.len();
    if !c.input_dim().is_multiple_of(big_k) {
        return Err(invalid(alloc::format!(
            "input dimension {} is not a multiple of bank size {big_k}",
            c.input_dim()
        )));
    }
    let c_in = c.input_dim() / big_k;
    let kk = bank.k * bank.k;
    let c_out = c.c_out();
    let mut data = alloc::vec![0.0; c_out * c_in * kk];
    for o in 0..c_out {
        for i in 0..c_in {
            let dst = &mut data[(o * c_in + i) * kk..(o * c_in + i + 1) * kk];
            for (j, f) in bank.filters.iter().enumerate() {
                let coef = c.matrix[(o, j * c_in + i)];
                if coef != 0.0 {
                    dst.iter_mut().zip(f).for_each(|(d, x)| *d += coef * x);
                }
            }
        }
    }
    ConvWeight::new(data, [c_out, c_in, bank.k, bank.k], c.layer_index, "")
}
