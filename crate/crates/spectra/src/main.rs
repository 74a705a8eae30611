use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use spectra::error::{exit, PipelineError};
use spectra::pipeline::{cmd_compare, cmd_spatial, cmd_synth, NormalizationMode, SynthMode};

#[derive(Parser)]
#[command(name = "spectra", version, about = "Compare convolutional weight covariances across networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Spatial eigenvalues and eigenvector atlases of joint convolution layers.
    Spatial(SpatialArgs),
    /// Align two networks layer by layer and compare their channel covariances.
    Compare(CompareArgs),
    /// Generate a paired synthetic fixture with planted covariance spikes.
    Synth(SynthArgs),
}

#[derive(Args)]
struct SpatialArgs {
    /// JSON config; command-line flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    net: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Eigenvectors shown per atlas (default: all).
    #[arg(long)]
    count: Option<usize>,
    /// Mean-center filters before forming the second moment.
    #[arg(long)]
    centered: bool,
}

#[derive(Args)]
struct CompareArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    net_a: Option<PathBuf>,
    #[arg(long)]
    net_b: Option<PathBuf>,
    #[arg(long)]
    acts_a: Option<PathBuf>,
    #[arg(long)]
    acts_b: Option<PathBuf>,
    /// Filter bank archive used to project joint convolution weights.
    #[arg(long)]
    bank: Option<PathBuf>,
    /// Comma-separated layer indices (default: every layer of net A).
    #[arg(long, value_delimiter = ',')]
    layers: Option<Vec<usize>>,
    /// Use at most this many activation rows for alignment.
    #[arg(long)]
    sample_cap: Option<usize>,
    #[arg(long, value_enum)]
    normalization: Option<NormalizationMode>,
    #[arg(long)]
    seed: Option<u64>,
    /// Random rotations averaged into the similarity zero point.
    #[arg(long)]
    baseline_draws: Option<usize>,
    #[arg(long)]
    max_rank: Option<usize>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads for per-layer comparison.
    #[arg(long, env = "SPECTRA_JOBS")]
    jobs: Option<usize>,
    /// Also write eigenvector similarity heatmaps.
    #[arg(long)]
    heatmaps: bool,
    /// Mean-center activations before alignment.
    #[arg(long)]
    centered_alignment: bool,
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Input dimension.
    #[arg(long)]
    d: Option<usize>,
    /// Neurons per layer.
    #[arg(long)]
    n: Option<usize>,
    /// Comma-separated spike values; may be empty.
    #[arg(long, value_delimiter = ',', num_args = 0..)]
    spikes: Option<Vec<String>>,
    #[arg(long)]
    layers: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    sigma2: Option<f64>,
    #[arg(long, value_enum)]
    mode: Option<SynthMode>,
    /// Activation rows per layer (default: 8 d).
    #[arg(long)]
    acts: Option<usize>,
}

/// Starts from the config file (if any) and overwrites keys given on the
/// command line.
struct Overlay(Map<String, Value>);

impl Overlay {
    fn new(config: Option<&PathBuf>) -> Result<Self, PipelineError> {
        let Some(path) = config else {
            return Ok(Self(Map::new()));
        };
        let text = std::fs::read_to_string(path).map_err(PipelineError::io(path))?;
        match serde_json::from_str(&text) {
            Ok(Value::Object(m)) => Ok(Self(m)),
            Ok(_) => Err(PipelineError::Format(format!("{}: config must be a JSON object", path.display()))),
            Err(e) => Err(PipelineError::Format(format!("{}: {e}", path.display()))),
        }
    }

    fn set<T: serde::Serialize>(&mut self, key: &str, value: Option<T>) -> &mut Self {
        if let Some(v) = value {
            self.0.insert(key.into(), serde_json::to_value(v).expect("flag serializes"));
        }
        self
    }

    fn flag(&mut self, key: &str, on: bool) -> &mut Self {
        self.set(key, on.then_some(true))
    }

    fn build<T: DeserializeOwned>(&mut self) -> Result<T, PipelineError> {
        serde_json::from_value(Value::Object(std::mem::take(&mut self.0)))
            .map_err(|e| PipelineError::Format(format!("configuration: {e}")))
    }
}

fn parse_spikes(raw: Vec<String>) -> Result<Vec<f64>, PipelineError> {
    raw.iter()
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse().map_err(|_| PipelineError::Format(format!("invalid spike value `{s}`"))))
        .collect()
}

fn run(cli: Cli) -> Result<u8, PipelineError> {
    match cli.command {
        Command::Spatial(a) => {
            let config = Overlay::new(a.config.as_ref())?
                .set("net", a.net)
                .set("out", a.out)
                .set("count", a.count)
                .flag("centered", a.centered)
                .build()?;
            let files = cmd_spatial(&config)?;
            eprintln!("wrote {} files to {}", files.len(), config.out.display());
            Ok(exit::SUCCESS)
        }
        Command::Compare(a) => {
            let config = Overlay::new(a.config.as_ref())?
                .set("net_a", a.net_a)
                .set("net_b", a.net_b)
                .set("acts_a", a.acts_a)
                .set("acts_b", a.acts_b)
                .set("bank", a.bank)
                .set("layers", a.layers)
                .set("sample_cap", a.sample_cap)
                .set("normalization", a.normalization)
                .set("seed", a.seed)
                .set("baseline_draws", a.baseline_draws)
                .set("max_rank", a.max_rank)
                .set("out", a.out)
                .set("jobs", a.jobs)
                .flag("heatmaps", a.heatmaps)
                .flag("centered_alignment", a.centered_alignment)
                .build()?;
            let summary = cmd_compare(&config)?;
            for r in &summary.reports {
                for w in &r.warnings {
                    eprintln!("warning: layer {}: {w}", r.layer_index);
                }
                for n in &r.notes {
                    eprintln!("note: layer {}: {n}", r.layer_index);
                }
            }
            eprintln!("wrote {} files to {}", summary.files.len(), config.out.display());
            let degenerate = summary.degenerate_layers();
            if degenerate.is_empty() {
                Ok(exit::SUCCESS)
            } else {
                eprintln!("error: degenerate layers {degenerate:?}");
                Ok(exit::DEGENERATE)
            }
        }
        Command::Synth(a) => {
            let spikes = a.spikes.map(parse_spikes).transpose()?;
            let config = Overlay::new(a.config.as_ref())?
                .set("d", a.d)
                .set("n", a.n)
                .set("spikes", spikes)
                .set("layers", a.layers)
                .set("seed", a.seed)
                .set("out", a.out)
                .set("sigma2", a.sigma2)
                .set("mode", a.mode)
                .set("acts", a.acts)
                .build()?;
            let files = cmd_synth(&config)?;
            eprintln!("wrote {} files to {}", files.len(), config.out.display());
            Ok(exit::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
