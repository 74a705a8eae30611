//! The comparison protocol as three commands: `spatial`, `compare`, `synth`.
//!
//! Archive naming convention:
//!
//! - `net/layer{i}/weight`: channel weight `(C_out, K*C_in)` or joint
//!   convolution `(C_out, C_in, k, k)`, told apart by rank
//! - `net/layer{i}/act`: activations feeding layer `i`, `(n, d)`
//! - `net/layer{i}/init_std`: optional initialization standard deviation
//! - `bank/filters`: filter bank `(K, k, k)`
//! - `align/layer{i}`, `eigvec/layer{i}`: alignment and eigenvector
//!   similarity matrices written by `compare`
//!
//! Layer indices start at 1.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use spectra_core::alignment::{align_weights, procrustes_align, ActivationMatrix, AlignmentMap};
use spectra_core::covariance::{channel_covariance, compare_covariances, CompareOptions, ScaleSource};
use spectra_core::factorization::{build_filter_bank, project_joint_to_channel, ChannelWeight, FilterBank};
use spectra_core::spatial::{eigvector_grid, spatial_eigvectors, ConvWeight};
use spectra_core::synth::{layer_models, make_paired_fixture, FixtureMode};
use spectra_core::Matrix;

use crate::error::{PipelineError, Result};
use crate::export::{eigenvalue_csv, heatmap, pgm_bytes};
use crate::neta::{matrix_row_major, TensorArchive};
use crate::report::{reports_csv, reports_json, AlignmentSummary, LayerReport, NormalizationSummary};

pub fn weight_name(i: usize) -> String {
    format!("net/layer{i}/weight")
}

pub fn act_name(i: usize) -> String {
    format!("net/layer{i}/act")
}

pub fn init_std_name(i: usize) -> String {
    format!("net/layer{i}/init_std")
}

pub const BANK_NAME: &str = "bank/filters";

/// Base filters taken from a network's own first-layer spectrum when no bank
/// is supplied; opposites are appended, giving `K = 10`.
pub const DEFAULT_BANK_BASE: usize = 5;

/// Alignment quality degrades below this many observations per dimension.
pub const SAMPLES_PER_DIM_WARNING: usize = 4;

/// An archive together with the SHA-256 of its bytes.
#[derive(Debug, Clone)]
pub struct LoadedArchive {
    pub path: PathBuf,
    pub archive: TensorArchive,
    pub digest: String,
}

impl LoadedArchive {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(PipelineError::io(path))?;
        let digest = hex::encode(Sha256::digest(&bytes));
        let archive = TensorArchive::from_bytes(&bytes).map_err(PipelineError::archive(path))?;
        Ok(Self {
            path: path.to_path_buf(),
            archive,
            digest,
        })
    }

    fn tensor(&self, name: &str) -> Option<&crate::neta::Tensor> {
        self.archive.get(name)
    }
}

/// Indices `i` for which `net/layer{i}/weight` exists.
pub fn layer_indices(archive: &TensorArchive) -> BTreeSet<usize> {
    archive
        .names()
        .filter_map(|n| n.strip_prefix("net/layer")?.strip_suffix("/weight")?.parse().ok())
        .collect()
}

#[derive(Debug, Clone)]
pub enum LayerWeight {
    Joint(ConvWeight),
    Channel(ChannelWeight),
}

fn format_err(path: &Path, msg: impl std::fmt::Display) -> PipelineError {
    PipelineError::Format(format!("{}: {msg}", path.display()))
}

fn load_init_std(src: &LoadedArchive, i: usize) -> Result<Option<f64>> {
    match src.tensor(&init_std_name(i)) {
        None => Ok(None),
        Some(t) => t.scalar().map(Some).map_err(|e| format_err(&src.path, e)),
    }
}

pub fn load_weight(src: &LoadedArchive, i: usize) -> Result<LayerWeight> {
    let name = weight_name(i);
    let t = src
        .tensor(&name)
        .ok_or_else(|| format_err(&src.path, format!("missing tensor `{name}`")))?;
    let init_std = load_init_std(src, i)?;
    let values = t.data.to_f64();
    match t.shape[..] {
        [rows, cols] => {
            let m = Matrix::from_row_slice(rows, cols, &values);
            spectra_core::linalg::check_finite(&m)?;
            let mut c = ChannelWeight::new(m, i).with_init_std(init_std);
            c.layer_index = i;
            Ok(LayerWeight::Channel(c))
        }
        [c_out, c_in, k1, k2] => {
            let w = ConvWeight::new(values, [c_out, c_in, k1, k2], i, name.clone())
                .map_err(|e| format_err(&src.path, format!("`{name}`: {e}")))?;
            Ok(LayerWeight::Joint(w.with_init_std(init_std)))
        }
        _ => Err(format_err(
            &src.path,
            format!("`{name}` has rank {}, expected 2 or 4", t.shape.len()),
        )),
    }
}

/// Reads `bank/filters`; a bank whose second half negates the first is
/// treated as an opposite-pair bank.
pub fn load_bank(src: &LoadedArchive) -> Result<FilterBank> {
    let t = src
        .tensor(BANK_NAME)
        .ok_or_else(|| format_err(&src.path, format!("missing tensor `{BANK_NAME}`")))?;
    let [big_k, k, k2] = t.shape[..] else {
        return Err(format_err(&src.path, "bank must have shape (K, k, k)"));
    };
    if k != k2 {
        return Err(format_err(&src.path, "bank filters must be square"));
    }
    let values = t.data.to_f64();
    let filters: Vec<Vec<f64>> = values.chunks_exact(k * k).map(<[f64]>::to_vec).collect();
    let half = big_k / 2;
    let paired = big_k.is_multiple_of(2)
        && (0..half).all(|j| filters[j].iter().zip(&filters[j + half]).all(|(a, b)| *a == -*b));
    FilterBank::from_filters(k, filters, paired).map_err(|e| format_err(&src.path, e))
}

pub fn bank_archive(bank: &FilterBank) -> Result<TensorArchive> {
    let k = bank.kernel_size();
    let mut a = TensorArchive::new();
    a.insert_f64(BANK_NAME, vec![bank.len(), k, k], bank.filters().concat())
        .map_err(|e| PipelineError::Format(e.to_string()))?;
    Ok(a)
}

/// Resolves the filter bank used to project a network's joint layers.
struct BankResolver<'a> {
    src: &'a LoadedArchive,
    supplied: Option<&'a FilterBank>,
    derived: BTreeMap<usize, FilterBank>,
}

impl<'a> BankResolver<'a> {
    fn new(src: &'a LoadedArchive, supplied: Option<&'a FilterBank>) -> Self {
        Self {
            src,
            supplied,
            derived: BTreeMap::new(),
        }
    }

    fn bank_for(&mut self, k: usize) -> Result<FilterBank> {
        if let Some(bank) = self.supplied {
            if bank.kernel_size() != k {
                return Err(PipelineError::ShapeMismatch(format!(
                    "bank has {}x{} filters, layer uses {k}x{k}",
                    bank.kernel_size(),
                    bank.kernel_size()
                )));
            }
            return Ok(bank.clone());
        }
        if let Some(b) = self.derived.get(&k) {
            return Ok(b.clone());
        }
        // First joint layer with this kernel size provides the eigenbasis.
        for i in layer_indices(&self.src.archive) {
            if let LayerWeight::Joint(w) = load_weight(self.src, i)? {
                if w.kernel_size() == k {
                    let spectrum = spatial_eigvectors(&w, false)?;
                    let bank = build_filter_bank(&spectrum, DEFAULT_BANK_BASE.min(k * k), true)?;
                    self.derived.insert(k, bank.clone());
                    return Ok(bank);
                }
            }
        }
        Err(format_err(&self.src.path, format!("no joint layer with kernel size {k}")))
    }

    fn channel_weight(&mut self, i: usize) -> Result<ChannelWeight> {
        match load_weight(self.src, i)? {
            LayerWeight::Channel(c) => Ok(c),
            LayerWeight::Joint(w) => {
                let bank = self.bank_for(w.kernel_size())?;
                let mut c = project_joint_to_channel(&w, &bank)?;
                c.init_std = w.init_std;
                Ok(c)
            }
        }
    }
}

/// How the initialization scale is removed before shrinkage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum NormalizationMode {
    /// Recorded `init_std` when present, otherwise estimated.
    #[default]
    Auto,
    /// Require a recorded `init_std` for every layer.
    Recorded,
    /// Always estimate the bulk variance from the spectrum.
    Estimated,
}

fn default_baseline_draws() -> usize {
    1
}

fn default_max_rank() -> usize {
    32
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompareConfig {
    pub net_a: PathBuf,
    pub net_b: PathBuf,
    pub acts_a: PathBuf,
    pub acts_b: PathBuf,
    #[serde(default)]
    pub bank: Option<PathBuf>,
    /// Layers to compare; all layers of `net_a` when absent.
    #[serde(default)]
    pub layers: Option<Vec<usize>>,
    /// Maximum number of activation rows used for alignment.
    #[serde(default)]
    pub sample_cap: Option<usize>,
    #[serde(default)]
    pub normalization: NormalizationMode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_baseline_draws")]
    pub baseline_draws: usize,
    #[serde(default = "default_max_rank")]
    pub max_rank: usize,
    pub out: PathBuf,
    #[serde(default)]
    pub jobs: Option<usize>,
    #[serde(default)]
    pub heatmaps: bool,
    /// Mean-center activations before forming the cross-moment.
    #[serde(default)]
    pub centered_alignment: bool,
}

/// Everything that influences results. Paths, output location and thread
/// count are excluded; input files enter through their digests.
#[derive(Serialize)]
struct CompareFingerprint<'a> {
    command: &'static str,
    inputs: Vec<&'a str>,
    layers: &'a Option<Vec<usize>>,
    sample_cap: Option<usize>,
    normalization: NormalizationMode,
    seed: u64,
    baseline_draws: usize,
    max_rank: usize,
    heatmaps: bool,
    centered_alignment: bool,
}

pub fn fingerprint(value: &impl Serialize) -> String {
    let bytes = serde_json::to_vec(value).expect("fingerprint serializes");
    hex::encode(Sha256::digest(bytes))
}

#[derive(Debug, Clone)]
pub struct CompareSummary {
    pub config_hash: String,
    pub reports: Vec<LayerReport>,
    pub files: Vec<PathBuf>,
}

impl CompareSummary {
    pub fn degenerate_layers(&self) -> Vec<usize> {
        self.reports.iter().filter(|r| r.degenerate).map(|r| r.layer_index).collect()
    }
}

struct LayerOutput {
    report: LayerReport,
    alignment: Matrix,
    eigvec: Matrix,
}

fn scale_source_name(s: ScaleSource) -> &'static str {
    match s {
        ScaleSource::None => "none",
        ScaleSource::Recorded => "recorded",
        ScaleSource::Estimated => "estimated",
    }
}

fn load_activations(src: &LoadedArchive, i: usize, cap: Option<usize>) -> Result<Option<ActivationMatrix>> {
    let Some(t) = src.tensor(&act_name(i)) else {
        return Ok(None);
    };
    let m = t.to_matrix().map_err(|e| format_err(&src.path, e))?;
    let acts = ActivationMatrix::new(m, i, src.digest.clone()).map_err(|e| format_err(&src.path, e))?;
    Ok(Some(match cap {
        Some(c) => acts.truncated(c),
        None => acts,
    }))
}

#[allow(clippy::too_many_arguments)]
fn compare_layer(
    i: usize,
    wa: ChannelWeight,
    wb: ChannelWeight,
    acts_a: &LoadedArchive,
    acts_b: &LoadedArchive,
    config: &CompareConfig,
    config_hash: &str,
) -> Result<LayerOutput> {
    let dim = wa.input_dim();
    if wb.input_dim() != dim {
        return Err(PipelineError::ShapeMismatch(format!(
            "layer {i}: input dimension {dim} in net A vs {} in net B",
            wb.input_dim()
        )));
    }
    let mut warnings = Vec::new();

    let phi = load_activations(acts_a, i, config.sample_cap)?;
    let phi_prime = load_activations(acts_b, i, config.sample_cap)?;
    let (map, summary) = match (phi, phi_prime) {
        (Some(phi), Some(phi_prime)) => {
            if phi.dim() != phi_prime.dim() || phi.n() != phi_prime.n() {
                return Err(PipelineError::ShapeMismatch(format!(
                    "layer {i}: activations {}x{} vs {}x{}",
                    phi.n(),
                    phi.dim(),
                    phi_prime.n(),
                    phi_prime.dim()
                )));
            }
            let d = phi.dim();
            let blocks = if d == dim {
                1
            } else if d > 0 && dim.is_multiple_of(d) {
                dim / d
            } else {
                return Err(PipelineError::ShapeMismatch(format!(
                    "layer {i}: activation dimension {d} does not match weight input dimension {dim}"
                )));
            };
            if phi.n() < d {
                return Err(PipelineError::InsufficientSamples(format!(
                    "layer {i}: {} observations for dimension {d}",
                    phi.n()
                )));
            }
            if phi.n() < SAMPLES_PER_DIM_WARNING * d {
                warnings.push(format!(
                    "only {} alignment observations for dimension {d} (recommended at least {})",
                    phi.n(),
                    SAMPLES_PER_DIM_WARNING * d
                ));
            }
            let base = procrustes_align(&phi, &phi_prime, config.centered_alignment)?;
            let summary = AlignmentSummary {
                kind: if blocks == 1 { "procrustes" } else { "lifted" }.into(),
                samples: phi.n(),
                dimension: d,
                degeneracy: base.degeneracy,
                orthogonality_defect: base.orthogonality_defect(),
            };
            (if blocks == 1 { base } else { base.lifted(blocks) }, summary)
        }
        (None, None) => (
            AlignmentMap::identity(dim, i),
            AlignmentSummary {
                kind: "identity".into(),
                samples: 0,
                dimension: dim,
                degeneracy: 0,
                orthogonality_defect: 0.0,
            },
        ),
        _ => {
            return Err(format_err(
                &acts_a.path,
                format!("layer {i}: activations present for only one network"),
            ))
        }
    };
    if summary.degeneracy > 0 {
        warnings.push(format!(
            "alignment_degeneracy: {} cross-moment singular values below 1e-10",
            summary.degeneracy
        ));
    }

    let aligned_a = align_weights(&wa, &map)?;
    let normalize = |mut c: ChannelWeight, label: &str| -> Result<_> {
        match config.normalization {
            NormalizationMode::Auto => {}
            NormalizationMode::Recorded if c.init_std.is_none() => {
                return Err(PipelineError::Format(format!("layer {i}: net {label} has no recorded init_std")))
            }
            NormalizationMode::Recorded => {}
            NormalizationMode::Estimated => c.init_std = None,
        }
        Ok(channel_covariance(&c, true)?)
    };
    let c1 = normalize(aligned_a, "A")?;
    let c2 = normalize(wb, "B")?;

    let max_rank = if config.max_rank > dim {
        warnings.push(format!("max_rank {} clamped to dimension {dim}", config.max_rank));
        dim
    } else {
        config.max_rank
    };
    let options = CompareOptions {
        seed: config.seed,
        baseline_draws: config.baseline_draws,
        max_rank,
    };
    let r = compare_covariances(i, &c1, &c2, &options)?;
    let eigvec = r.eigvec.matrix.clone();
    let norm_summary = |c: &spectra_core::Covariance| NormalizationSummary {
        sigma2: c.scale,
        source: scale_source_name(c.scale_source).into(),
        gamma: c.gamma.unwrap_or(f64::NAN),
        neurons: c.samples.unwrap_or(0),
    };
    let report = LayerReport {
        layer_index: i,
        config_hash: config_hash.to_string(),
        seed: r.seed,
        baseline_draws: r.baseline_draws,
        dimension: dim,
        effective_rank_1: r.effective_rank_1,
        effective_rank_2: r.effective_rank_2,
        bw_cosine: r.bw_cosine,
        normalized_similarity: r.normalized.map(|s| s.value),
        normalized_similarity_raw: r.normalized.map(|s| s.raw),
        symmetrized_similarity: r.symmetrized_similarity,
        zero_point: r.normalized.map(|s| s.zero_point),
        upper_bound: r.normalized.map(|s| s.upper_bound),
        significance_base: r.significance_base,
        saturation: r.eigvec.saturation,
        eigvec_similarity: eigvec.row_iter().map(|row| row.iter().copied().collect()).collect(),
        degenerate_ranks_1: r.eigvec.degenerate_ranks_1.clone(),
        degenerate_ranks_2: r.eigvec.degenerate_ranks_2.clone(),
        normalization_1: norm_summary(&c1),
        normalization_2: norm_summary(&c2),
        alignment: summary,
        degenerate: r.degenerate,
        warnings,
        notes: r.notes,
    };
    Ok(LayerOutput {
        report,
        alignment: map.matrix,
        eigvec,
    })
}

fn write_file(path: &Path, bytes: &[u8], files: &mut Vec<PathBuf>) -> Result<()> {
    fs::write(path, bytes).map_err(PipelineError::io(path))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn write_archive_file(path: &Path, archive: &TensorArchive, files: &mut Vec<PathBuf>) -> Result<()> {
    archive.save(path).map_err(PipelineError::archive(path))?;
    files.push(path.to_path_buf());
    Ok(())
}

fn thread_pool(jobs: Option<usize>) -> Result<rayon::ThreadPool> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    builder
        .build()
        .map_err(|e| PipelineError::Format(format!("thread pool: {e}")))
}

/// Aligns, normalizes, shrinks and compares every selected layer, writing
/// `report.json`, `report.csv`, `alignment.neta`, `eigvec_similarity.neta`
/// and (optionally) `eigvec_layer{i}.pgm` heatmaps into `config.out`.
///
/// Degenerate layers are reported, not fatal; see
/// [`CompareSummary::degenerate_layers`].
pub fn cmd_compare(config: &CompareConfig) -> Result<CompareSummary> {
    let net_a = LoadedArchive::load(&config.net_a)?;
    let net_b = LoadedArchive::load(&config.net_b)?;
    let acts_a = LoadedArchive::load(&config.acts_a)?;
    let acts_b = LoadedArchive::load(&config.acts_b)?;
    let bank_src = config.bank.as_deref().map(LoadedArchive::load).transpose()?;
    let bank = bank_src.as_ref().map(load_bank).transpose()?;
    if config.baseline_draws == 0 {
        return Err(PipelineError::Format("baseline_draws must be at least 1".into()));
    }
    if config.max_rank == 0 {
        return Err(PipelineError::Format("max_rank must be at least 1".into()));
    }

    let mut inputs = vec![
        net_a.digest.as_str(),
        net_b.digest.as_str(),
        acts_a.digest.as_str(),
        acts_b.digest.as_str(),
    ];
    if let Some(b) = &bank_src {
        inputs.push(&b.digest);
    }
    let config_hash = fingerprint(&CompareFingerprint {
        command: "compare",
        inputs,
        layers: &config.layers,
        sample_cap: config.sample_cap,
        normalization: config.normalization,
        seed: config.seed,
        baseline_draws: config.baseline_draws,
        max_rank: config.max_rank,
        heatmaps: config.heatmaps,
        centered_alignment: config.centered_alignment,
    });

    let available_a = layer_indices(&net_a.archive);
    let available_b = layer_indices(&net_b.archive);
    let selected: Vec<usize> = match &config.layers {
        Some(l) => l.clone(),
        None => available_a.iter().copied().collect(),
    };
    if selected.is_empty() {
        return Err(format_err(&net_a.path, "no `net/layer{i}/weight` tensors"));
    }
    for &i in &selected {
        if !available_a.contains(&i) || !available_b.contains(&i) {
            return Err(PipelineError::ShapeMismatch(format!(
                "layer {i} is missing from {}",
                if available_a.contains(&i) { "net B" } else { "net A" }
            )));
        }
    }

    let mut resolve_a = BankResolver::new(&net_a, bank.as_ref());
    let mut resolve_b = BankResolver::new(&net_b, bank.as_ref());
    let mut weights = Vec::with_capacity(selected.len());
    for &i in &selected {
        weights.push((i, resolve_a.channel_weight(i)?, resolve_b.channel_weight(i)?));
    }

    let pool = thread_pool(config.jobs)?;
    let outputs: Vec<Result<LayerOutput>> = pool.install(|| {
        weights
            .into_par_iter()
            .map(|(i, wa, wb)| compare_layer(i, wa, wb, &acts_a, &acts_b, config, &config_hash))
            .collect()
    });
    let outputs: Vec<LayerOutput> = outputs.into_iter().collect::<Result<_>>()?;

    fs::create_dir_all(&config.out).map_err(PipelineError::io(&config.out))?;
    let mut files = Vec::new();
    let reports: Vec<LayerReport> = outputs.iter().map(|o| o.report.clone()).collect();
    write_file(&config.out.join("report.json"), &reports_json(&reports), &mut files)?;
    write_file(
        &config.out.join("report.csv"),
        reports_csv(&reports, &config_hash, config.seed).as_bytes(),
        &mut files,
    )?;
    let mut align = TensorArchive::new();
    let mut eig = TensorArchive::new();
    for o in &outputs {
        let i = o.report.layer_index;
        let err = |e: crate::neta::NetaError| PipelineError::Format(e.to_string());
        align.insert_matrix(format!("align/layer{i}"), &o.alignment).map_err(err)?;
        eig.insert_f64(
            format!("eigvec/layer{i}"),
            vec![o.eigvec.nrows(), o.eigvec.ncols()],
            matrix_row_major(&o.eigvec),
        )
        .map_err(err)?;
        if config.heatmaps {
            let img = heatmap(&o.eigvec, o.report.saturation, 4);
            let comments = [format!("config_hash={config_hash} seed={} layer={i}", config.seed)];
            write_file(
                &config.out.join(format!("eigvec_layer{i}.pgm")),
                &pgm_bytes(&img, &comments),
                &mut files,
            )?;
        }
    }
    write_archive_file(&config.out.join("alignment.neta"), &align, &mut files)?;
    write_archive_file(&config.out.join("eigvec_similarity.neta"), &eig, &mut files)?;
    let meta = serde_json::json!({
        "config_hash": config_hash,
        "seed": config.seed,
        "baseline_draws": config.baseline_draws,
        "files": ["alignment.neta", "eigvec_similarity.neta"],
    });
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    write_file(&config.out.join(ARCHIVE_META), &bytes, &mut files)?;
    Ok(CompareSummary {
        config_hash,
        reports,
        files,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialConfig {
    pub net: PathBuf,
    pub out: PathBuf,
    /// Eigenvectors per atlas; all `k²` when absent.
    #[serde(default)]
    pub count: Option<usize>,
    /// Subtract the mean filter before forming the second moment.
    #[serde(default)]
    pub centered: bool,
}

#[derive(Serialize)]
struct SpatialFingerprint<'a> {
    command: &'static str,
    input: &'a str,
    count: Option<usize>,
    centered: bool,
}

/// Writes `spatial_layer{i}.csv` (eigenvalues) and `spatial_layer{i}.pgm`
/// (eigenvector atlas) for every joint convolution layer.
pub fn cmd_spatial(config: &SpatialConfig) -> Result<Vec<PathBuf>> {
    let net = LoadedArchive::load(&config.net)?;
    let hash = fingerprint(&SpatialFingerprint {
        command: "spatial",
        input: &net.digest,
        count: config.count,
        centered: config.centered,
    });
    let mut joint = Vec::new();
    for i in layer_indices(&net.archive) {
        if let LayerWeight::Joint(w) = load_weight(&net, i)? {
            joint.push(w);
        }
    }
    if joint.is_empty() {
        return Err(format_err(&net.path, "no joint convolution weights `net/layer{i}/weight` of rank 4"));
    }
    fs::create_dir_all(&config.out).map_err(PipelineError::io(&config.out))?;
    let mut files = Vec::new();
    for w in &joint {
        let i = w.layer_index;
        let s = spatial_eigvectors(w, config.centered)?;
        let kk = w.kernel_size() * w.kernel_size();
        let count = config.count.unwrap_or(kk);
        let comments = [
            format!("config_hash={hash}"),
            format!("layer={i} kernel={} centered={}", w.kernel_size(), config.centered),
        ];
        let csv = eigenvalue_csv(&s.spectrum.eigenvalues, &comments);
        write_file(&config.out.join(format!("spatial_layer{i}.csv")), csv.as_bytes(), &mut files)?;
        let img = eigvector_grid(&s, count)?;
        write_file(
            &config.out.join(format!("spatial_layer{i}.pgm")),
            &pgm_bytes(&img, &comments),
            &mut files,
        )?;
    }
    Ok(files)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum SynthMode {
    /// Network B is network A in a rotated basis.
    #[default]
    Conjugate,
    /// Network B is an independent draw from A's model, rotated.
    Shared,
    /// Network B has its own spike directions.
    Independent,
}

impl From<SynthMode> for FixtureMode {
    fn from(m: SynthMode) -> Self {
        match m {
            SynthMode::Conjugate => FixtureMode::Conjugate,
            SynthMode::Shared => FixtureMode::Shared,
            SynthMode::Independent => FixtureMode::Independent,
        }
    }
}

fn default_sigma2() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    /// Input dimension of every layer.
    pub d: usize,
    /// Neurons (`C_out`) per layer.
    pub n: usize,
    #[serde(default)]
    pub spikes: Vec<f64>,
    pub layers: usize,
    #[serde(default)]
    pub seed: u64,
    pub out: PathBuf,
    #[serde(default = "default_sigma2")]
    pub sigma2: f64,
    #[serde(default)]
    pub mode: SynthMode,
    /// Activation rows per layer; `8 d` when absent.
    #[serde(default)]
    pub acts: Option<usize>,
}

#[derive(Serialize)]
struct FixtureMeta<'a> {
    config_hash: &'a str,
    generator: &'a str,
    seed: u64,
    d: usize,
    n: usize,
    spikes: &'a [f64],
    sigma2: f64,
    layers: usize,
    mode: SynthMode,
    activation_samples: usize,
    files: BTreeMap<&'static str, &'static str>,
}

pub const FIXTURE_META: &str = "fixture_meta.json";

/// Sidecar recording the config hash and seed for the archives `compare`
/// writes, since NETA carries no free-form metadata.
pub const ARCHIVE_META: &str = "archives_meta.json";

/// Writes `net_a.neta`, `net_b.neta`, `acts_a.neta`, `acts_b.neta`,
/// `truth.neta` and `fixture_meta.json` into `config.out`.
pub fn cmd_synth(config: &SynthConfig) -> Result<Vec<PathBuf>> {
    if config.d == 0 || config.n == 0 || config.layers == 0 {
        return Err(PipelineError::Format("d, n and layers must be positive".into()));
    }
    if config.spikes.len() > config.d {
        return Err(PipelineError::Format("more spikes than dimensions".into()));
    }
    if config.spikes.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
        return Err(PipelineError::Format("spike values must be positive".into()));
    }
    if !(config.sigma2 > 0.0 && config.sigma2.is_finite()) {
        return Err(PipelineError::Format("sigma2 must be positive".into()));
    }
    let n_acts = config.acts.unwrap_or(8 * config.d);
    let models = layer_models(config.d, &config.spikes, config.sigma2, config.layers, config.seed)?;
    let fixture = make_paired_fixture(&models, config.n, n_acts, config.mode.into(), config.seed)?;

    let err = |e: crate::neta::NetaError| PipelineError::Format(e.to_string());
    let (mut net_a, mut net_b, mut acts_a, mut acts_b, mut truth) = (
        TensorArchive::new(),
        TensorArchive::new(),
        TensorArchive::new(),
        TensorArchive::new(),
        TensorArchive::new(),
    );
    for l in &fixture.layers {
        let i = l.layer_index;
        let std = config.sigma2.sqrt();
        net_a.insert_matrix(weight_name(i), &l.weights_a.matrix).map_err(err)?;
        net_a.insert_f64(init_std_name(i), vec![1], vec![std]).map_err(err)?;
        net_b.insert_matrix(weight_name(i), &l.weights_b.matrix).map_err(err)?;
        net_b.insert_f64(init_std_name(i), vec![1], vec![std]).map_err(err)?;
        acts_a.insert_matrix(act_name(i), &l.acts_a).map_err(err)?;
        acts_b.insert_matrix(act_name(i), &l.acts_b).map_err(err)?;
        truth.insert_matrix(format!("truth/layer{i}/rotation"), &l.rotation).map_err(err)?;
        truth.insert_matrix(format!("truth/layer{i}/cov_a"), &l.truth_a).map_err(err)?;
        truth.insert_matrix(format!("truth/layer{i}/cov_b"), &l.truth_b).map_err(err)?;
    }
    let hash = fingerprint(&config_without_out(config));
    fs::create_dir_all(&config.out).map_err(PipelineError::io(&config.out))?;
    let mut files = Vec::new();
    for (name, archive) in [
        ("net_a.neta", &net_a),
        ("net_b.neta", &net_b),
        ("acts_a.neta", &acts_a),
        ("acts_b.neta", &acts_b),
        ("truth.neta", &truth),
    ] {
        write_archive_file(&config.out.join(name), archive, &mut files)?;
    }
    let meta = FixtureMeta {
        config_hash: &hash,
        generator: spectra_core::rng::GENERATOR_NAME,
        seed: config.seed,
        d: config.d,
        n: config.n,
        spikes: &config.spikes,
        sigma2: config.sigma2,
        layers: config.layers,
        mode: config.mode,
        activation_samples: n_acts,
        files: BTreeMap::from([
            ("net_a", "net_a.neta"),
            ("net_b", "net_b.neta"),
            ("acts_a", "acts_a.neta"),
            ("acts_b", "acts_b.neta"),
            ("truth", "truth.neta"),
        ]),
    };
    let mut bytes = serde_json::to_vec_pretty(&meta).expect("meta serializes");
    bytes.push(b'\n');
    write_file(&config.out.join(FIXTURE_META), &bytes, &mut files)?;
    Ok(files)
}

fn config_without_out(config: &SynthConfig) -> serde_json::Value {
    let mut v = serde_json::to_value(config).expect("config serializes");
    if let Some(obj) = v.as_object_mut() {
        obj.remove("out");
        obj.insert("command".into(), "synth".into());
    }
    v
}
