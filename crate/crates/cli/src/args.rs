//! Flag definitions and their resolution into configs.

use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgAction, ArgMatches, Args, Parser, Subcommand};
use hc2_core::data::SynthConfig;
use hc2_core::train::config::{parse_kv, KEYS};
use hc2_core::train::TrainConfig;
use hc2_core::{Error, Result};

fn d() -> TrainConfig {
    TrainConfig::default()
}

fn widths(v: &[usize]) -> String {
    v.iter().map(usize::to_string).collect::<Vec<_>>().join(",")
}

#[derive(Parser, Debug)]
#[command(
    name = "hc2",
    version,
    args_override_self = true,
    about = "Multi-scenario ranking with hybrid contrastive training",
    after_help = "Option precedence: command-line flag, then --config file, then \
                  HC2_SEED (seed only), then the built-in default."
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a synthetic multi-scenario dataset
    Synth(SynthArgs),
    /// Train a model and write metrics, parameters and a run manifest
    Train(TrainArgs),
    /// Score a trained model on a dataset's test split
    Eval(EvalArgs),
    /// Train the full model and every single-component ablation over several seeds
    Ablate(AblateArgs),
    /// Write shared representations of a sample of the data as CSV
    DumpReprs(DumpArgs),
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    /// Output directory
    #[arg(long)]
    pub out: PathBuf,
    /// Number of scenarios
    #[arg(long, default_value_t = 3)]
    pub k: usize,
    /// Number of categorical fields
    #[arg(long, default_value_t = 8)]
    pub fields: usize,
    /// Vocabulary size of every field
    #[arg(long, default_value_t = 20)]
    pub vocab: usize,
    /// Samples per regular scenario
    #[arg(long, default_value_t = 4000)]
    pub samples: usize,
    /// How many trailing scenarios are sparse
    #[arg(long, default_value_t = 1)]
    pub sparse: usize,
    /// Size of a sparse scenario relative to a regular one
    #[arg(long, default_value_t = 0.1)]
    pub sparse_fraction: f64,
    /// Strength of the signal shared by all scenarios
    #[arg(long, default_value_t = 3.0)]
    pub a_shared: f64,
    /// Strength of each scenario's own signal
    #[arg(long, default_value_t = 2.0)]
    pub a_spec: f64,
    /// Fraction of labels flipped after sampling
    #[arg(long, default_value_t = 0.0)]
    pub noise: f64,
    /// Random seed
    #[arg(long, env = "HC2_SEED", default_value_t = 42)]
    pub seed: u64,
}

impl SynthArgs {
    pub fn config(&self) -> Result<SynthConfig> {
        if self.k == 0 {
            return Err(Error::Config("--k must be at least 1".into()));
        }
        if self.sparse > self.k {
            return Err(Error::Config(format!(
                "--sparse {} exceeds --k {}",
                self.sparse, self.k
            )));
        }
        if !(self.sparse_fraction > 0.0 && self.sparse_fraction <= 1.0) {
            return Err(Error::Config("--sparse-fraction must be in (0, 1]".into()));
        }
        let sparse = ((self.samples as f64) * self.sparse_fraction).round() as usize;
        let counts = (0..self.k)
            .map(|k| {
                if k + self.sparse >= self.k {
                    sparse
                } else {
                    self.samples
                }
            })
            .collect();
        let cfg = SynthConfig {
            vocab_sizes: vec![self.vocab; self.fields],
            a_shared: self.a_shared,
            a_spec: self.a_spec,
            counts,
            noise: self.noise,
            seed: self.seed,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

/// Every training hyperparameter. Flags given on the command line override
/// the `--config` file, which overrides the defaults shown here.
#[derive(Args, Debug)]
pub struct TrainFlags {
    /// Flat `key = value` file using the long flag names as keys
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Random seed
    #[arg(long, env = "HC2_SEED", default_value_t = d().seed)]
    pub seed: u64,
    /// Training epochs
    #[arg(long, default_value_t = d().epochs)]
    pub epochs: usize,
    /// Batch size
    #[arg(long, default_value_t = d().batch)]
    pub batch: usize,
    /// Adam learning rate
    #[arg(long, default_value_t = d().lr)]
    pub lr: f64,
    /// Contrastive temperature
    #[arg(long, default_value_t = d().tau)]
    pub tau: f64,
    /// Weight of the generalized contrastive loss
    #[arg(long, default_value_t = d().lambda1)]
    pub lambda1: f64,
    /// Weight of the individual contrastive loss
    #[arg(long, default_value_t = d().lambda2)]
    pub lambda2: f64,
    /// Negatives per anchor
    #[arg(long, default_value_t = d().negatives)]
    pub negatives: usize,
    /// Memory bank capacity (0 disables it)
    #[arg(long, default_value_t = d().bank)]
    pub bank: usize,
    /// k-means clusters for fine-grained selection
    #[arg(long, default_value_t = d().clusters)]
    pub clusters: usize,
    /// Optimizer steps between k-means refits
    #[arg(long, default_value_t = d().refresh)]
    pub refresh: usize,
    /// Lloyd iterations per k-means refit
    #[arg(long, default_value_t = d().kmeans_iters)]
    pub kmeans_iters: usize,
    /// Diffusion steps T
    #[arg(long, default_value_t = d().diff_steps)]
    pub diff_steps: usize,
    /// First diffusion noise rate
    #[arg(long, default_value_t = d().beta_start)]
    pub beta_start: f64,
    /// Last diffusion noise rate
    #[arg(long, default_value_t = d().beta_end)]
    pub beta_end: f64,
    /// Dropout rate of the augmented tower pass
    #[arg(long, default_value_t = d().dropout)]
    pub dropout: f64,
    /// Components to switch off: g-loss, noise, weight, s-loss, fine
    #[arg(long, value_delimiter = ',', default_value = "")]
    pub ablate: Vec<String>,
    /// Contrastive terms as -ln p (true) or -p (false)
    #[arg(long, action = ArgAction::Set, default_value_t = d().log_form)]
    pub log_form: bool,
    /// Embedding width per field
    #[arg(long, default_value_t = d().embed_dim)]
    pub embed_dim: usize,
    /// Shared layer widths, comma-separated
    #[arg(long, default_value_t = widths(&d().shared_widths))]
    pub shared_widths: String,
    /// Tower layer widths, comma-separated
    #[arg(long, default_value_t = widths(&d().tower_widths))]
    pub tower_widths: String,
    /// Test samples used for the uniformity diagnostic
    #[arg(long, default_value_t = d().uniformity_limit)]
    pub uniformity_limit: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Dataset directory holding train.csv and test.csv
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct AblateArgs {
    /// Dataset directory holding train.csv and test.csv
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Seeds of the sweep, comma-separated
    #[arg(long, value_delimiter = ',', default_value = "1,2,3,4,5")]
    pub seeds: Vec<u64>,
    #[command(flatten)]
    pub flags: TrainFlags,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory holding test.csv
    #[arg(long)]
    pub data: PathBuf,
}

#[derive(Args, Debug)]
pub struct DumpArgs {
    /// Model file written by `train`
    #[arg(long)]
    pub model: PathBuf,
    /// Dataset directory
    #[arg(long)]
    pub data: PathBuf,
    /// Output CSV file (standard output when absent)
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Split to draw samples from
    #[arg(long, value_parser = ["train", "test"], default_value = "test")]
    pub split: String,
    /// Most rows to write; a larger split is subsampled
    #[arg(long, default_value_t = 2000)]
    pub limit: usize,
    /// Seed of the subsample
    #[arg(long, env = "HC2_SEED", default_value_t = 42)]
    pub seed: u64,
}

/// Keys a run manifest carries besides the configuration.
pub const MANIFEST_ONLY: [&str; 6] = [
    "command",
    "train-sha256",
    "test-sha256",
    "metrics",
    "model",
    "diagnostics",
];

/// Paths named by a config file.
#[derive(Debug, Default)]
pub struct FilePaths {
    pub data: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub train_sha256: Option<String>,
    pub test_sha256: Option<String>,
}

fn given(m: &ArgMatches, id: &str) -> bool {
    matches!(m.value_source(id), Some(ValueSource::CommandLine))
}

/// Resolves the training config from defaults, the config file, the
/// command line and `HC2_SEED`, in increasing order of precedence except
/// that the environment only fills in a seed the file leaves unset.
pub fn resolve(flags: &TrainFlags, m: &ArgMatches) -> Result<(TrainConfig, FilePaths)> {
    let mut cfg = TrainConfig::default();
    let mut paths = FilePaths::default();
    let mut file_seed = false;
    if let Some(path) = &flags.config {
        let text = std::fs::read_to_string(path)?;
        for (key, value) in parse_kv(&text)? {
            match key.as_str() {
                "data" => paths.data = Some(value.into()),
                "out" => paths.out = Some(value.into()),
                "train-sha256" => paths.train_sha256 = Some(value),
                "test-sha256" => paths.test_sha256 = Some(value),
                k if MANIFEST_ONLY.contains(&k) => {}
                k => {
                    file_seed |= k == "seed";
                    cfg.set(k, &value)?;
                }
            }
        }
    }
    for key in KEYS {
        let id = key.replace('-', "_");
        let from_env = key == "seed"
            && !file_seed
            && matches!(m.value_source(&id), Some(ValueSource::EnvVariable));
        if !(given(m, &id) || from_env) {
            continue;
        }
        let raw: Vec<String> = m
            .get_raw(&id)
            .into_iter()
            .flatten()
            .map(|v| v.to_string_lossy().into_owned())
            .collect();
        cfg.set(key, &raw.join(","))?;
    }
    cfg.validate()?;
    Ok((cfg, paths))
}
