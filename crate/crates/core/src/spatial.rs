//! Spatial filter statistics: the `k² x k²` second moment of a convolution
//! kernel taken over all `(C_out, C_in)` channel pairs, its eigenbasis, and a
//! grayscale atlas of the eigenvectors.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::covariance::{Covariance, CovarianceKind};
use crate::error::{invalid, Error, Result};
use crate::linalg::{sym_eig, Matrix, Spectrum};

/// A joint convolution weight of shape `(C_out, C_in, k, k)`, stored
/// row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvWeight {
    data: Vec<f64>,
    c_out: usize,
    c_in: usize,
    k: usize,
    pub layer_index: usize,
    pub label: String,
    /// Standard deviation of the initialization distribution, if known.
    pub init_std: Option<f64>,
}

impl ConvWeight {
    pub fn new(data: Vec<f64>, shape: [usize; 4], layer_index: usize, label: impl Into<String>) -> Result<Self> {
        let [c_out, c_in, k, k2] = shape;
        if k != k2 {
            return Err(invalid(alloc::format!("spatial kernel must be square, got {k}x{k2}")));
        }
        if c_out == 0 || c_in == 0 || k == 0 {
            return Err(invalid("convolution weight dimensions must be positive"));
        }
        let expected = c_out * c_in * k * k;
        if data.len() != expected {
            return Err(Error::DimensionMismatch {
                what: "convolution weight length",
                expected,
                found: data.len(),
            });
        }
        if !data.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            data,
            c_out,
            c_in,
            k,
            layer_index,
            label: label.into(),
            init_std: None,
        })
    }

    pub fn from_fn(shape: [usize; 4], mut f: impl FnMut(usize, usize, usize, usize) -> f64) -> Result<Self> {
        let [c_out, c_in, k, _] = shape;
        let mut data = Vec::with_capacity(c_out * c_in * k * k);
        for o in 0..c_out {
            for i in 0..c_in {
                for r in 0..k {
                    for c in 0..k {
                        data.push(f(o, i, r, c));
                    }
                }
            }
        }
        Self::new(data, shape, 0, "")
    }

    pub fn with_init_std(mut self, std: Option<f64>) -> Self {
        self.init_std = std;
        self
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn kernel_size(&self) -> usize {
        self.k
    }

    pub fn shape(&self) -> [usize; 4] {
        [self.c_out, self.c_in, self.k, self.k]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Flattened `k*k` filter connecting input `i` to output `o`.
    pub fn filter(&self, o: usize, i: usize) -> &[f64] {
        let kk = self.k * self.k;
        let start = (o * self.c_in + i) * kk;
        &self.data[start..start + kk]
    }

    pub fn filters(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.k * self.k)
    }

    pub fn frobenius_norm(&self) -> f64 {
        libm::sqrt(self.data.iter().map(|x| x * x).sum())
    }

    pub fn scaled(&self, alpha: f64) -> Self {
        let mut out = self.clone();
        out.data.iter_mut().for_each(|x| *x *= alpha);
        out
    }
}

/// Channel-averaged spatial covariance with its eigenbasis.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialSpectrum {
    pub covariance: Covariance,
    pub spectrum: Spectrum,
    pub layer_index: usize,
    pub kernel_size: usize,
}

impl SpatialSpectrum {
    /// Eigenvector `rank` (0-based) reshaped to `k x k`, row-major.
    pub fn eigenvector_image(&self, rank: usize) -> Vec<f64> {
        self.spectrum.eigenvectors.column(rank).iter().copied().collect()
    }
}

/// `C[s,t] = (1/(C_out C_in)) Σ w[o,i,s] w[o,i,t]` over flattened spatial
/// positions. With `centered`, the mean filter is subtracted first.
pub fn spatial_covariance(w: &ConvWeight, centered: bool) -> Result<Covariance> {
    let kk = w.k * w.k;
    let n = w.c_out * w.c_in;
    let samples = Matrix::from_row_slice(n, kk, &w.data);
    let samples = if centered {
        let mean = samples.row_mean();
        let mut centered = samples;
        for mut row in centered.row_iter_mut() {
            row -= &mean;
        }
        centered
    } else {
        samples
    };
    let c = (samples.transpose() * &samples) / n as f64;
    Ok(Covariance::new(c, CovarianceKind::Spatial)?.with_samples(n))
}

pub fn spatial_eigvectors(w: &ConvWeight, centered: bool) -> Result<SpatialSpectrum> {
    let covariance = spatial_covariance(w, centered)?;
    let spectrum = sym_eig(&covariance.matrix)?;
    Ok(SpatialSpectrum {
        covariance,
        spectrum,
        layer_index: w.layer_index,
        kernel_size: w.k,
    })
}

/// 8-bit grayscale raster.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    fn set(&mut self, x: usize, y: usize, value: u8) {
        self.pixels[y * self.width + x] = value;
    }
}

/// Value range below which a cell is considered constant and drawn mid-gray.
const FLAT_RANGE: f64 = 1e-12;
const SEPARATOR: u8 = 255;

/// Linear map of `values` onto 0..=255 (min to 0, max to 255); constant
/// input maps to 128.
pub fn to_gray(values: &[f64]) -> Vec<u8> {
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    if !(range > FLAT_RANGE * max.abs().max(min.abs()).max(1.0)) {
        return vec![128; values.len()];
    }
    values
        .iter()
        .map(|&v| libm::round((v - min) / range * 255.0).clamp(0.0, 255.0) as u8)
        .collect()
}

/// Number of grid columns and rows used to lay out `count` cells.
pub fn grid_layout(count: usize) -> (usize, usize) {
    if count == 0 {
        return (0, 0);
    }
    let mut cols = libm::sqrt(count as f64) as usize;
    while cols * cols < count {
        cols += 1;
    }
    let rows = count.div_ceil(cols);
    (cols, rows)
}

/// Pastes `k x k` cells left to right, top to bottom, separated by 1-pixel
/// white lines. Each cell is contrast-stretched independently.
pub fn render_cells(cells: &[Vec<f64>], k: usize) -> GrayImage {
    let (cols, rows) = grid_layout(cells.len());
    if cols == 0 {
        return GrayImage::filled(0, 0, SEPARATOR);
    }
    let width = cols * k + cols - 1;
    let height = rows * k + rows - 1;
    let mut img = GrayImage::filled(width, height, SEPARATOR);
    for (n, cell) in cells.iter().enumerate() {
        let (gx, gy) = (n % cols, n / cols);
        let (x0, y0) = (gx * (k + 1), gy * (k + 1));
        for (p, g) in to_gray(cell).into_iter().enumerate() {
            img.set(x0 + p % k, y0 + p / k, g);
        }
    }
    img
}

/// Atlas of the leading `count` spatial eigenvectors.
pub fn eigvector_grid(s: &SpatialSpectrum, count: usize) -> Result<GrayImage> {
    let kk = s.kernel_size * s.kernel_size;
    if count > kk {
        return Err(invalid(alloc::format!("requested {count} eigenvectors but only {kk} exist")));
    }
    let cells: Vec<Vec<f64>> = (0..count).map(|r| s.eigenvector_image(r)).collect();
    Ok(render_cells(&cells, s.kernel_size))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::orthogonality_defect;
    use crate::rng::{gaussian, stream};

    fn random_weight(seed: u64, shape: [usize; 4]) -> ConvWeight {
        let mut rng = stream(seed, 7);
        ConvWeight::from_fn(shape, |_, _, _, _| gaussian(&mut rng)).unwrap()
    }

    #[test]
    fn single_filter_is_rank_one() {
        let f = [1.0, -2.0, 0.5, 3.0, 0.0, 1.0, -1.0, 2.0, 0.25];
        let w = ConvWeight::new(f.to_vec(), [1, 1, 3, 3], 0, "").unwrap();
        let c = spatial_covariance(&w, false).unwrap();
        for s in 0..9 {
            for t in 0..9 {
                assert!((c.matrix[(s, t)] - f[s] * f[t]).abs() < 1e-14);
            }
        }
        let s = spatial_eigvectors(&w, false).unwrap();
        let norm2: f64 = f.iter().map(|x| x * x).sum();
        assert!((s.spectrum.eigenvalues[0] - norm2).abs() < 1e-12);
        assert!(s.spectrum.eigenvalues[1..].iter().all(|l| l.abs() < 1e-12));
        let top = s.eigenvector_image(0);
        let norm = libm::sqrt(norm2);
        let dot: f64 = top.iter().zip(&f).map(|(a, b)| a * b / norm).sum();
        assert!((dot.abs() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn delta_filters_give_scaled_identity() {
        // C_in = k² one-hot filters, one per input channel, 2 outputs.
        let k = 3;
        let w = ConvWeight::from_fn([2, k * k, k, k], |_, i, r, c| if r * k + c == i { 1.0 } else { 0.0 }).unwrap();
        let c = spatial_covariance(&w, false).unwrap();
        let want = Matrix::identity(9, 9) / 9.0;
        assert!((c.matrix - want).norm() < 1e-15);
        let s = spatial_eigvectors(&w, false).unwrap();
        assert!(s.spectrum.eigenvalues.iter().all(|l| (l - 1.0 / 9.0).abs() < 1e-14));
    }

    #[test]
    fn iid_filters_approach_identity() {
        let w = random_weight(1, [64, 64, 3, 3]);
        let c = spatial_covariance(&w, false).unwrap();
        let dev = (c.matrix - Matrix::identity(9, 9)).amax();
        assert!(dev < 0.1, "{dev}");
    }

    #[test]
    fn trace_equals_mean_squared_filter_norm() {
        let w = random_weight(2, [5, 4, 5, 5]);
        let c = spatial_covariance(&w, false).unwrap();
        let mean_sq = w.data().iter().map(|x| x * x).sum::<f64>() / 20.0;
        assert!((crate::linalg::trace(&c.matrix) - mean_sq).abs() < 1e-12);
    }

    #[test]
    fn channel_permutation_invariance() {
        let w = random_weight(3, [4, 3, 3, 3]);
        let perm_out = [2usize, 0, 3, 1];
        let perm_in = [1usize, 2, 0];
        let p = ConvWeight::from_fn([4, 3, 3, 3], |o, i, r, c| w.filter(perm_out[o], perm_in[i])[r * 3 + c]).unwrap();
        let a = spatial_covariance(&w, false).unwrap();
        let b = spatial_covariance(&p, false).unwrap();
        assert!((a.matrix - b.matrix).norm() < 1e-13);
    }

    #[test]
    fn scaling_scales_eigenvalues_quadratically() {
        let w = random_weight(4, [6, 6, 3, 3]);
        let a = spatial_eigvectors(&w, false).unwrap();
        let b = spatial_eigvectors(&w.scaled(3.0), false).unwrap();
        for (x, y) in a.spectrum.eigenvalues.iter().zip(&b.spectrum.eigenvalues) {
            assert!((9.0 * x - y).abs() < 1e-10);
        }
        assert!((a.spectrum.eigenvectors - b.spectrum.eigenvectors).norm() < 1e-8);
    }

    #[test]
    fn centered_flag_removes_mean_filter() {
        let w = ConvWeight::from_fn([3, 3, 2, 2], |_, _, r, c| (r * 2 + c) as f64).unwrap();
        let c = spatial_covariance(&w, true).unwrap();
        assert!(c.matrix.norm() < 1e-14);
        let u = spatial_covariance(&w, false).unwrap();
        assert!(u.matrix.norm() > 1.0);
    }

    #[test]
    fn eigenvectors_orthonormal() {
        let s = spatial_eigvectors(&random_weight(5, [8, 8, 5, 5]), false).unwrap();
        assert!(orthogonality_defect(&s.spectrum.eigenvectors) < 1e-10);
    }

    #[test]
    fn rejects_invalid_weights() {
        assert!(ConvWeight::new(vec![0.0; 7], [1, 1, 3, 3], 0, "").is_err());
        assert!(ConvWeight::new(vec![f64::NAN; 9], [1, 1, 3, 3], 0, "").is_err());
        assert!(ConvWeight::new(vec![], [0, 1, 3, 3], 0, "").is_err());
    }

    #[test]
    fn constant_cell_is_mid_gray() {
        let cell = vec![1.0 / 3.0; 9];
        let img = render_cells(&[cell], 3);
        assert_eq!((img.width, img.height), (3, 3));
        assert!(img.pixels.iter().all(|&p| p == 128));
    }

    #[test]
    fn cell_contrast_stretch() {
        assert_eq!(to_gray(&[-1.0, 0.0, 1.0]), vec![0, 128, 255]);
    }

    #[test]
    fn nine_cells_of_seven_use_three_by_three_grid() {
        let w = random_weight(6, [4, 4, 7, 7]);
        let s = spatial_eigvectors(&w, false).unwrap();
        let img = eigvector_grid(&s, 9).unwrap();
        assert_eq!((img.width, img.height), (23, 23));
        for y in 0..23 {
            assert_eq!(img.get(7, y), 255);
            assert_eq!(img.get(15, y), 255);
        }
        assert!(eigvector_grid(&s, 50).is_err());
        assert_eq!(grid_layout(10), (4, 3));
        assert_eq!(grid_layout(1), (1, 1));
    }
}
