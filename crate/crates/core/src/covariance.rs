//! Weight covariances and the statistics used to compare them.
//!
//! Channel covariances are estimated from the neuron rows of a channel weight
//! matrix, denoised by spiked-model eigenvalue shrinkage, and compared with
//! the Bures-Wasserstein cosine. The normalized similarity rescales that
//! cosine between a random-rotation zero point and a resampling upper bound
//! so values are comparable across layers of different width.
//!
//! Convention: a covariance is "normalized" when its random bulk has unit
//! variance (`sigma2 == 1`); shrinkage is only defined in that regime.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{invalid, Error, Result};
use crate::factorization::ChannelWeight;
use crate::linalg::{nuclear_norm, psd_sqrt_of, sym_eig, symmetrize, trace, Matrix, Spectrum};
use crate::rng::{gaussian, stream, streams};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CovarianceKind {
    Spatial,
    Channel,
}

/// Where the variance divided out of the raw weights came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScaleSource {
    /// No rescaling was applied.
    None,
    /// Initialization standard deviation recorded with the layer.
    Recorded,
    /// Estimated from the median of the raw spectrum.
    Estimated,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Covariance {
    pub matrix: Matrix,
    pub kind: CovarianceKind,
    pub shrunk: bool,
    /// Dimension-to-sample ratio `d / n` of the estimate.
    pub gamma: Option<f64>,
    /// Variance of the random bulk in the units of `matrix`.
    pub sigma2: f64,
    /// Number of samples (neurons) the estimate was formed from.
    pub samples: Option<usize>,
    /// Variance the raw weights were divided by (1 when not rescaled).
    pub scale: f64,
    pub scale_source: ScaleSource,
    spectrum: Option<Spectrum>,
}

impl Covariance {
    /// Wraps a square finite matrix, symmetrizing it.
    pub fn new(matrix: Matrix, kind: CovarianceKind) -> Result<Self> {
        if matrix.nrows() != matrix.ncols() {
            return Err(Error::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        crate::linalg::check_finite(&matrix)?;
        Ok(Self {
            matrix: symmetrize(&matrix),
            kind,
            shrunk: false,
            gamma: None,
            sigma2: 1.0,
            samples: None,
            scale: 1.0,
            scale_source: ScaleSource::None,
            spectrum: None,
        })
    }

    pub fn from_diagonal(values: &[f64], kind: CovarianceKind) -> Result<Self> {
        let d = values.len();
        let mut m = Matrix::zeros(d, d);
        for (i, &v) in values.iter().enumerate() {
            m[(i, i)] = v;
        }
        Self::new(m, kind)
    }

    /// Records `samples` and sets `gamma = d / samples`.
    pub fn with_samples(mut self, samples: usize) -> Self {
        self.samples = Some(samples);
        if samples > 0 {
            self.gamma = Some(self.dim() as f64 / samples as f64);
        }
        self
    }

    pub fn with_gamma(mut self, gamma: f64) -> Self {
        self.gamma = Some(gamma);
        self
    }

    /// Marks the matrix as already denoised.
    pub fn assume_shrunk(mut self) -> Self {
        self.shrunk = true;
        self
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        trace(&self.matrix)
    }

    /// Eigendecomposition. Shrunk covariances keep the eigenvectors (and
    /// rank order) of the raw estimate they came from.
    pub fn spectrum(&self) -> Result<Spectrum> {
        match &self.spectrum {
            Some(s) => Ok(s.clone()),
            None => sym_eig(&self.matrix),
        }
    }

    /// `O C Oᵀ`, with all metadata carried over.
    pub fn rotated(&self, o: &Matrix) -> Result<Self> {
        if o.nrows() != self.dim() || o.ncols() != self.dim() {
            return Err(Error::DimensionMismatch {
                what: "rotation dimension",
                expected: self.dim(),
                found: o.nrows(),
            });
        }
        let mut out = self.clone();
        out.matrix = symmetrize(&(o * &self.matrix * o.transpose()));
        out.spectrum = None;
        Ok(out)
    }
}

/// Uncentered covariance `(1/C_out) MᵀM` of the neuron rows of `c`.
///
/// With `normalize`, the weights are first divided by the initialization
/// standard deviation recorded on the layer; if none is recorded the bulk
/// variance is estimated from the median eigenvalue (see
/// [`estimate_bulk_variance`]). Either way the result has `sigma2 == 1`.
pub fn channel_covariance(c: &ChannelWeight, normalize: bool) -> Result<Covariance> {
    let m = &c.matrix;
    let n = m.nrows();
    if n == 0 {
        return Err(invalid("channel weight has no neurons"));
    }
    let raw = (m.transpose() * m) / n as f64;
    let mut cov = Covariance::new(raw, CovarianceKind::Channel)?.with_samples(n);
    if normalize {
        let (scale, source) = match c.init_std {
            Some(std) if std > 0.0 && std.is_finite() => (std * std, ScaleSource::Recorded),
            Some(std) => return Err(invalid(alloc::format!("invalid init_std {std}"))),
            None => {
                let spectrum = sym_eig(&cov.matrix)?;
                (estimate_bulk_variance(&spectrum.eigenvalues, n)?, ScaleSource::Estimated)
            }
        };
        cov.matrix /= scale;
        cov.scale = scale;
        cov.scale_source = source;
    }
    Ok(cov)
}

/// Median of the Marchenko-Pastur law with ratio `gamma <= 1` and unit
/// variance.
pub fn marchenko_pastur_median(gamma: f64) -> f64 {
    assert!(gamma > 0.0 && gamma <= 1.0, "ratio must lie in (0, 1]");
    let sg = libm::sqrt(gamma);
    let (a, b) = ((1.0 - sg) * (1.0 - sg), (1.0 + sg) * (1.0 + sg));
    let half = (b - a) / 2.0;
    // x(θ) = a + half (1 - cos θ) turns the density into a smooth integrand.
    let integrand = |theta: f64| {
        let s = libm::sin(theta);
        let x = a + half * (1.0 - libm::cos(theta));
        if x <= 0.0 {
            // γ = 1, θ → 0 limit of sin²θ / x.
            return half * half * 2.0 / half / (2.0 * core::f64::consts::PI * gamma);
        }
        half * half * s * s / (2.0 * core::f64::consts::PI * gamma * x)
    };
    const STEPS: usize = 4096;
    let h = core::f64::consts::PI / STEPS as f64;
    let mut cdf = Vec::with_capacity(STEPS + 1);
    cdf.push(0.0);
    let mut acc = 0.0;
    for i in 0..STEPS {
        let t0 = i as f64 * h;
        // Simpson on each sub-interval.
        acc += h / 6.0 * (integrand(t0) + 4.0 * integrand(t0 + h / 2.0) + integrand(t0 + h));
        cdf.push(acc);
    }
    let total = acc;
    let target = 0.5 * total;
    let i = cdf.partition_point(|&v| v < target).clamp(1, STEPS);
    let (c0, c1) = (cdf[i - 1], cdf[i]);
    let frac = if c1 > c0 { (target - c0) / (c1 - c0) } else { 0.0 };
    let theta = (i as f64 - 1.0 + frac) * h;
    a + half * (1.0 - libm::cos(theta))
}

/// Estimates the bulk variance `σ²` of a covariance formed from `samples`
/// rows, assuming most eigenvalues belong to the Marchenko-Pastur bulk.
///
/// The median of the nonzero eigenvalues is divided by the median of the
/// bulk law at the observed aspect ratio, which keeps the estimate unbiased
/// when `d` approaches or exceeds the sample count.
pub fn estimate_bulk_variance(eigenvalues: &[f64], samples: usize) -> Result<f64> {
    let d = eigenvalues.len();
    if d == 0 || samples == 0 {
        return Err(invalid("cannot estimate bulk variance of an empty spectrum"));
    }
    let gamma = d as f64 / samples as f64;
    let nonzero = d.min(samples);
    let mut top: Vec<f64> = eigenvalues.to_vec();
    top.sort_by(|a, b| b.total_cmp(a));
    top.truncate(nonzero);
    top.sort_by(|a, b| a.total_cmp(b));
    let median = if nonzero % 2 == 1 {
        top[nonzero / 2]
    } else {
        0.5 * (top[nonzero / 2 - 1] + top[nonzero / 2])
    };
    let reference = if gamma <= 1.0 {
        marchenko_pastur_median(gamma)
    } else {
        gamma * marchenko_pastur_median(1.0 / gamma)
    };
    let sigma2 = median / reference;
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(invalid("bulk variance estimate is not positive"));
    }
    Ok(sigma2)
}

/// Detection threshold `(1 + √γ)²`: eigenvalues at or below it are
/// indistinguishable from the random bulk.
pub fn shrinkage_threshold(gamma: f64) -> f64 {
    let s = 1.0 + libm::sqrt(gamma);
    s * s
}

/// Spiked-model shrinker for a unit-bulk covariance:
/// `(λ−1−γ)/2 + √(((λ+1−γ)/2)² − λ)` above the detection threshold, else 0.
pub fn shrink_eigenvalue(lambda: f64, gamma: f64) -> Result<f64> {
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(invalid(alloc::format!("eigenvalue must be non-negative, got {lambda}")));
    }
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(invalid(alloc::format!("gamma must be positive, got {gamma}")));
    }
    if lambda <= shrinkage_threshold(gamma) {
        return Ok(0.0);
    }
    let half = (lambda + 1.0 - gamma) / 2.0;
    let disc = (half * half - lambda).max(0.0);
    Ok((lambda - 1.0 - gamma) / 2.0 + libm::sqrt(disc))
}

/// Applies [`shrink_eigenvalue`] to every eigenvalue, keeping eigenvectors.
pub fn shrink_covariance(c: &Covariance) -> Result<Covariance> {
    if c.shrunk {
        return Err(Error::AlreadyShrunk);
    }
    if (c.sigma2 - 1.0).abs() > 1e-12 {
        return Err(Error::NotNormalized { sigma2: c.sigma2 });
    }
    let gamma = c.gamma.ok_or_else(|| invalid("covariance has no aspect ratio recorded"))?;
    let raw = sym_eig(&c.matrix)?;
    let mut shrunk_values = Vec::with_capacity(raw.len());
    for &l in &raw.eigenvalues {
        shrunk_values.push(shrink_eigenvalue(l.max(0.0), gamma)?);
    }
    let spectrum = Spectrum {
        eigenvalues: shrunk_values,
        eigenvectors: raw.eigenvectors,
    };
    let mut out = c.clone();
    out.matrix = spectrum.recompose();
    out.shrunk = true;
    out.spectrum = Some(spectrum);
    Ok(out)
}

/// Eigenvalue-weighted mean rank `Σ k λ_k / Σ λ_k` (ranks from 1) of a
/// descending spectrum. Negative round-off is clamped to zero.
pub fn effective_rank_of(eigenvalues: &[f64]) -> Result<f64> {
    let mut sorted: Vec<f64> = eigenvalues.iter().map(|l| l.max(0.0)).collect();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let total: f64 = sorted.iter().sum();
    if !(total > 0.0) {
        return Err(Error::UndefinedRank);
    }
    let weighted: f64 = sorted.iter().enumerate().map(|(k, l)| (k + 1) as f64 * l).sum();
    Ok(weighted / total)
}

pub fn effective_rank(c: &Covariance) -> Result<f64> {
    if !c.shrunk {
        return Err(Error::NotShrunk);
    }
    effective_rank_of(&c.spectrum()?.eigenvalues)
}

/// Bures-Wasserstein cosine `‖C₁^½ C₂^½‖₁ / √(tr C₁ tr C₂)`, clamped to
/// `[0, 1]`.
pub fn bw_cosine(c1: &Covariance, c2: &Covariance) -> Result<f64> {
    if c1.dim() != c2.dim() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: c1.dim(),
            found: c2.dim(),
        });
    }
    let (t1, t2) = (c1.trace(), c2.trace());
    if !(t1 > 0.0 && t2 > 0.0) {
        return Err(Error::ZeroTrace);
    }
    let r1 = psd_sqrt_of(&c1.spectrum()?)?;
    let r2 = psd_sqrt_of(&c2.spectrum()?)?;
    let nuclear = nuclear_norm(&(r1 * r2))?;
    Ok((nuclear / libm::sqrt(t1 * t2)).clamp(0.0, 1.0))
}

/// Squared Bures-Wasserstein distance `tr C₁ + tr C₂ − 2‖C₁^½ C₂^½‖₁`.
pub fn bw_distance_squared(c1: &Covariance, c2: &Covariance) -> Result<f64> {
    let r1 = psd_sqrt_of(&c1.spectrum()?)?;
    let r2 = psd_sqrt_of(&c2.spectrum()?)?;
    let nuclear = nuclear_norm(&(r1 * r2))?;
    Ok((c1.trace() + c2.trace() - 2.0 * nuclear).max(0.0))
}

/// Draws `n_samples` Gaussian vectors with covariance `C + σ²I`, forms their
/// empirical covariance and shrinks it again. Deterministic in `seed`.
pub fn resample_covariance(c: &Covariance, n_samples: usize, seed: u64) -> Result<Covariance> {
    if !c.shrunk {
        return Err(Error::NotShrunk);
    }
    if n_samples < 1 {
        return Err(invalid("resampling needs at least one sample"));
    }
    let d = c.dim();
    let spectrum = c.spectrum()?;
    let sigma2 = c.sigma2;
    let scales: Vec<f64> = spectrum
        .eigenvalues
        .iter()
        .map(|&l| libm::sqrt(l.max(0.0) + sigma2))
        .collect();
    let mut rng = stream(seed, streams::RESAMPLE);
    // Rows are drawn in eigen coordinates: z_k scaled by √(λ_k + σ²).
    let mut coords = Matrix::zeros(n_samples, d);
    for r in 0..n_samples {
        for (k, s) in scales.iter().enumerate() {
            coords[(r, k)] = s * gaussian(&mut rng);
        }
    }
    let x = coords * spectrum.eigenvectors.transpose();
    let empirical = (x.transpose() * &x) / (n_samples as f64 * sigma2);
    let mut fresh = Covariance::new(empirical, c.kind)?.with_samples(n_samples);
    fresh.scale = c.scale;
    fresh.scale_source = c.scale_source;
    shrink_covariance(&fresh)
}

/// Random references for the normalized similarity of a covariance `C₁`.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityBaseline {
    pub seed: u64,
    /// Haar-uniform rotations `O` used for the zero point.
    pub rotations: Vec<Matrix>,
    /// Mean of `cos θ(C₁, O C₁ Oᵀ)` over `rotations`.
    pub zero_point: f64,
    /// Resampled and re-shrunk `Ĉ₁`.
    pub resampled: Covariance,
    /// `cos θ(C₁, Ĉ₁)`.
    pub upper_bound: f64,
}

impl SimilarityBaseline {
    /// `draws` rotations are averaged for the zero point (1 reproduces the
    /// single-draw definition).
    pub fn new(c1: &Covariance, seed: u64, draws: usize) -> Result<Self> {
        if !c1.shrunk {
            return Err(Error::NotShrunk);
        }
        if draws == 0 {
            return Err(invalid("baseline needs at least one rotation"));
        }
        let samples = c1.samples.ok_or(Error::MissingSampleCount)?;
        let mut rng = stream(seed, streams::ROTATION);
        let mut rotations = Vec::with_capacity(draws);
        let mut sum = 0.0;
        for _ in 0..draws {
            let o = crate::linalg::haar_orthogonal(&mut rng, c1.dim());
            sum += bw_cosine(c1, &c1.rotated(&o)?).map_err(degenerate)?;
            rotations.push(o);
        }
        let resampled = resample_covariance(c1, samples, seed)?;
        let upper_bound = bw_cosine(c1, &resampled).map_err(degenerate)?;
        Ok(Self {
            seed,
            rotations,
            zero_point: sum / draws as f64,
            resampled,
            upper_bound,
        })
    }
}

fn degenerate(e: Error) -> Error {
    match e {
        Error::ZeroTrace => Error::DegenerateNormalization { denominator: 0.0 },
        other => other,
    }
}

/// Denominators smaller than this make the normalization meaningless.
pub const DEGENERATE_DENOMINATOR: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalizedSimilarity {
    /// Normalized similarity, capped at 1 (the resampling bound).
    pub value: f64,
    /// Uncapped ratio.
    pub raw: f64,
    pub cosine: f64,
    pub zero_point: f64,
    pub upper_bound: f64,
}

/// `(cos(C₁,C₂) − zero) / (upper − zero)` against a precomputed baseline.
pub fn normalized_similarity_with(
    c1: &Covariance,
    c2: &Covariance,
    baseline: &SimilarityBaseline,
) -> Result<NormalizedSimilarity> {
    if !c1.shrunk || !c2.shrunk {
        return Err(Error::NotShrunk);
    }
    let denominator = baseline.upper_bound - baseline.zero_point;
    if !(denominator.abs() >= DEGENERATE_DENOMINATOR) {
        return Err(Error::DegenerateNormalization { denominator });
    }
    let cosine = bw_cosine(c1, c2)?;
    let raw = (cosine - baseline.zero_point) / denominator;
    Ok(NormalizedSimilarity {
        value: raw.min(1.0),
        raw,
        cosine,
        zero_point: baseline.zero_point,
        upper_bound: baseline.upper_bound,
    })
}

/// Normalized similarity with a single seeded rotation for the zero point.
pub fn normalized_similarity(c1: &Covariance, c2: &Covariance, seed: u64) -> Result<f64> {
    let baseline = SimilarityBaseline::new(c1, seed, 1)?;
    Ok(normalized_similarity_with(c1, c2, &baseline)?.value)
}

/// Relative eigenvalue gap under which neighbouring ranks are flagged.
pub const DEGENERATE_GAP: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct EigvecSimilarity {
    /// `|⟨u_i, A v_j⟩|` for ranks `i, j < max_rank`.
    pub matrix: Matrix,
    /// `1/√d`, the typical overlap of two random unit vectors.
    pub significance_base: f64,
    /// `5/√d`, the display saturation level.
    pub saturation: f64,
    /// Ranks (0-based) of each covariance that sit in a near-degenerate block.
    pub degenerate_ranks_1: Vec<usize>,
    pub degenerate_ranks_2: Vec<usize>,
}

fn degenerate_ranks(eigenvalues: &[f64], max_rank: usize) -> Vec<usize> {
    let lmax = eigenvalues.iter().copied().fold(0.0f64, |a, l| a.max(l.abs()));
    let tol = DEGENERATE_GAP * lmax;
    (0..max_rank)
        .filter(|&i| {
            let below = i + 1 < eigenvalues.len() && (eigenvalues[i] - eigenvalues[i + 1]).abs() < tol;
            let above = i > 0 && (eigenvalues[i - 1] - eigenvalues[i]).abs() < tol;
            below || above || lmax == 0.0
        })
        .collect()
}

/// Pairwise absolute cosines between the leading eigenvectors of `c1` and
/// those of `c2` mapped through `alignment` (identity when `None`).
pub fn eigvec_similarity_matrix(
    c1: &Covariance,
    c2: &Covariance,
    alignment: Option<&Matrix>,
    max_rank: usize,
) -> Result<EigvecSimilarity> {
    let d = c1.dim();
    if c2.dim() != d {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: d,
            found: c2.dim(),
        });
    }
    if max_rank > d {
        return Err(invalid(alloc::format!("max_rank {max_rank} exceeds dimension {d}")));
    }
    let s1 = c1.spectrum()?;
    let s2 = c2.spectrum()?;
    let u = s1.eigenvectors.columns(0, max_rank);
    let v = s2.eigenvectors.columns(0, max_rank).into_owned();
    let av = match alignment {
        Some(a) => {
            if a.nrows() != d || a.ncols() != d {
                return Err(Error::DimensionMismatch {
                    what: "alignment dimension",
                    expected: d,
                    found: a.nrows(),
                });
            }
            a * v
        }
        None => v,
    };
    let matrix = (u.transpose() * av).map(|x| x.abs().min(1.0));
    let base = 1.0 / libm::sqrt(d as f64);
    Ok(EigvecSimilarity {
        matrix,
        significance_base: base,
        saturation: 5.0 * base,
        degenerate_ranks_1: degenerate_ranks(&s1.eigenvalues, max_rank),
        degenerate_ranks_2: degenerate_ranks(&s2.eigenvalues, max_rank),
    })
}

/// Every metric for one pair of aligned, normalized (unshrunk) covariances.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityReport {
    pub layer_index: usize,
    pub effective_rank_1: Option<f64>,
    pub effective_rank_2: Option<f64>,
    pub bw_cosine: Option<f64>,
    pub normalized: Option<NormalizedSimilarity>,
    /// Mean of `S(C₁,C₂)` and `S(C₂,C₁)`.
    pub symmetrized_similarity: Option<f64>,
    pub eigvec: EigvecSimilarity,
    pub significance_base: f64,
    pub seed: u64,
    pub baseline_draws: usize,
    /// Metrics that could not be computed, with the reason.
    pub notes: Vec<String>,
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CompareOptions {
    pub seed: u64,
    pub baseline_draws: usize,
    pub max_rank: usize,
}

/// Shrinks both covariances and evaluates every similarity statistic.
/// Failures of individual statistics are recorded in `notes` rather than
/// aborting the report.
pub fn compare_covariances(
    layer_index: usize,
    raw1: &Covariance,
    raw2: &Covariance,
    options: &CompareOptions,
) -> Result<SimilarityReport> {
    if raw1.dim() != raw2.dim() {
        return Err(Error::DimensionMismatch {
            what: "covariance dimension",
            expected: raw1.dim(),
            found: raw2.dim(),
        });
    }
    let c1 = shrink_covariance(raw1)?;
    let c2 = shrink_covariance(raw2)?;
    let mut notes = Vec::new();
    let mut degenerate_flag = false;
    let note = |what: &str, e: &Error, notes: &mut Vec<String>| {
        notes.push(alloc::format!("{what}: {e}"));
    };
    let effective_rank_1 = effective_rank(&c1).map_err(|e| note("effective_rank_1", &e, &mut notes)).ok();
    let effective_rank_2 = effective_rank(&c2).map_err(|e| note("effective_rank_2", &e, &mut notes)).ok();
    let cosine = bw_cosine(&c1, &c2).map_err(|e| note("bw_cosine", &e, &mut notes)).ok();

    let mut forward = None;
    let mut backward = None;
    for (a, b, slot, label) in [(&c1, &c2, &mut forward, "S(C1,C2)"), (&c2, &c1, &mut backward, "S(C2,C1)")] {
        let result = SimilarityBaseline::new(a, options.seed, options.baseline_draws)
            .and_then(|base| normalized_similarity_with(a, b, &base));
        match result {
            Ok(s) => *slot = Some(s),
            Err(e) => {
                if matches!(e, Error::DegenerateNormalization { .. } | Error::ZeroTrace) {
                    degenerate_flag = true;
                }
                note(label, &e, &mut notes);
            }
        }
    }
    let symmetrized = match (&forward, &backward) {
        (Some(f), Some(b)) => Some(0.5 * (f.value + b.value)),
        _ => None,
    };
    let eigvec = eigvec_similarity_matrix(&c1, &c2, None, options.max_rank.min(c1.dim()))?;
    Ok(SimilarityReport {
        layer_index,
        effective_rank_1,
        effective_rank_2,
        bw_cosine: cosine,
        normalized: forward,
        symmetrized_similarity: symmetrized,
        significance_base: eigvec.significance_base,
        eigvec,
        seed: options.seed,
        baseline_draws: options.baseline_draws,
        notes,
        degenerate: degenerate_flag,
    })
}
