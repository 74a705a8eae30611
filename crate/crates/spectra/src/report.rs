//! Serialized comparison reports.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlignmentSummary {
    /// `procrustes`, `lifted` (channel alignment repeated over filter
    /// blocks) or `identity` (no activations for this layer).
    pub kind: String,
    pub samples: usize,
    pub dimension: usize,
    pub degeneracy: usize,
    pub orthogonality_defect: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationSummary {
    /// Variance divided out of the raw weights.
    pub sigma2: f64,
    /// `recorded`, `estimated` or `none`.
    pub source: String,
    pub gamma: f64,
    pub neurons: usize,
}

/// One layer pair. Field names follow [`spectra_core::SimilarityReport`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerReport {
    pub layer_index: usize,
    pub config_hash: String,
    pub seed: u64,
    pub baseline_draws: usize,
    pub dimension: usize,
    pub effective_rank_1: Option<f64>,
    pub effective_rank_2: Option<f64>,
    pub bw_cosine: Option<f64>,
    /// Normalized similarity, capped at the resampling bound (1).
    pub normalized_similarity: Option<f64>,
    pub normalized_similarity_raw: Option<f64>,
    pub symmetrized_similarity: Option<f64>,
    pub zero_point: Option<f64>,
    pub upper_bound: Option<f64>,
    pub significance_base: f64,
    pub saturation: f64,
    pub eigvec_similarity: Vec<Vec<f64>>,
    pub degenerate_ranks_1: Vec<usize>,
    pub degenerate_ranks_2: Vec<usize>,
    pub normalization_1: NormalizationSummary,
    pub normalization_2: NormalizationSummary,
    pub alignment: AlignmentSummary,
    pub degenerate: bool,
    pub warnings: Vec<String>,
    pub notes: Vec<String>,
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn reports_csv(reports: &[LayerReport], config_hash: &str, seed: u64) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "# config_hash={config_hash} seed={seed}");
    out.push_str("layer,r_eff_1,r_eff_2,bw_cosine,S,seed,S_sym\n");
    for r in reports {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.layer_index,
            opt(r.effective_rank_1),
            opt(r.effective_rank_2),
            opt(r.bw_cosine),
            opt(r.normalized_similarity),
            r.seed,
            opt(r.symmetrized_similarity)
        );
    }
    out
}

pub fn reports_json(reports: &[LayerReport]) -> Vec<u8> {
    let mut bytes = serde_json::to_vec_pretty(reports).expect("reports serialize");
    bytes.push(b'\n');
    bytes
}
