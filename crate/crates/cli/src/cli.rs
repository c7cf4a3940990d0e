use std::path::PathBuf;

use clap::parser::ValueSource;
use clap::{ArgGroup, ArgMatches, Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use temi::{LossMode, TrainConfig};

use crate::run::{CliResult, Failure};

#[derive(Debug, Parser)]
#[command(name = "temi", version, about = "Cluster precomputed embeddings with mutual-information heads")]
pub struct Cli {
    /// Worker threads (defaults to all cores). Results do not depend on it.
    #[arg(long, global = true, env = "TEMI_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a labeled Gaussian-blob feature file.
    Synth(SynthArgs),
    /// Mine the k nearest cosine neighbors of every example.
    Knn(KnnArgs),
    /// Train a head ensemble on mined neighbor pairs.
    Train(TrainCmd),
    /// Score cluster assignments against ground truth.
    Eval(EvalArgs),
    /// k-means baseline.
    Kmeans(KmeansArgs),
    /// Linear-probe baseline (supervised upper reference).
    Probe(ProbeArgs),
    /// Check that the expected-pmi maximizer recovers a discrete model's classes.
    TheoremCheck(TheoremArgs),
    /// Train once per beta and report cluster-balance statistics.
    BetaScan(BetaScanArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    pub classes: usize,
    #[arg(long, default_value_t = 250)]
    pub n_per_class: usize,
    #[arg(long, default_value_t = 64)]
    pub dim: usize,
    /// Radius of the sphere the class centers lie on.
    #[arg(long, default_value_t = 6.0)]
    pub sep: f64,
    /// Within-class standard deviation.
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Feature file to write (TEMIFEAT).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct KnnArgs {
    /// Feature file (TEMIFEAT, or .csv).
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(short, default_value_t = 50)]
    pub k: usize,
    /// Let an example count as its own neighbor.
    #[arg(long)]
    pub include_self: bool,
    /// Skip per-dimension standardization.
    #[arg(long)]
    pub raw: bool,
    /// Neighbor file to write (TEMIKNN0).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 16 heads, 50 epochs (5 warmup), batch 128.
    Desk,
}

fn parse_loss(s: &str) -> Result<LossMode, String> {
    s.parse::<LossMode>().map_err(|e| e.to_string())
}

/// Hyperparameters shared by `train` and `beta-scan`.
#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// pmi, wpmi, temi or scan.
    #[arg(long, default_value = "temi", value_parser = parse_loss)]
    pub loss: LossMode,
    #[arg(long, default_value_t = 50)]
    pub heads: usize,
    #[arg(long, default_value_t = 200)]
    pub epochs: usize,
    #[arg(long, default_value_t = 20)]
    pub warmup_epochs: usize,
    #[arg(long, default_value_t = 512)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-4)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 0.996)]
    pub teacher_momentum: f64,
    /// Momentum of the running class marginal.
    #[arg(long, default_value_t = 0.9)]
    pub marginal_momentum: f64,
    /// Student temperature.
    #[arg(long, default_value_t = 0.1)]
    pub tau: f64,
    /// Number of clusters [default: number of labeled classes, else 10].
    #[arg(long)]
    pub clusters: Option<usize>,
    /// Neighbors to mine when no --knn file is given.
    #[arg(short, default_value_t = 50)]
    pub k: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden1: usize,
    #[arg(long, default_value_t = 512)]
    pub hidden2: usize,
    /// Entropy weight of the scan loss.
    #[arg(long, default_value_t = 4.0)]
    pub scan_lambda: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Replaces heads, epochs, warmup and batch size unless given explicitly.
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Skip per-dimension standardization.
    #[arg(long)]
    pub raw: bool,
}

impl TrainArgs {
    /// Builds the training configuration. `m` holds the subcommand's matches,
    /// used to tell explicit flags from defaults when a preset is active.
    pub fn resolve(&self, m: &ArgMatches, beta: f64, labeled_classes: Option<usize>) -> TrainConfig {
        let explicit = |id: &str| matches!(m.value_source(id), Some(ValueSource::CommandLine | ValueSource::EnvVariable));
        let mut cfg = TrainConfig {
            epochs: self.epochs,
            warmup_epochs: self.warmup_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            weight_decay: self.weight_decay,
            teacher_momentum: self.teacher_momentum,
            marginal_momentum: self.marginal_momentum,
            beta,
            tau: self.tau,
            heads: self.heads,
            knn_k: self.k,
            clusters: self.clusters.or(labeled_classes).unwrap_or(10),
            hidden1: self.hidden1,
            hidden2: self.hidden2,
            scan_lambda: self.scan_lambda,
            seed: self.seed,
            mode: self.loss,
        };
        if self.preset == Some(Preset::Desk) {
            let desk = TrainConfig::desk();
            if !explicit("heads") {
                cfg.heads = desk.heads;
            }
            if !explicit("epochs") {
                cfg.epochs = desk.epochs;
            }
            if !explicit("warmup_epochs") {
                cfg.warmup_epochs = desk.warmup_epochs;
            }
            if !explicit("batch_size") {
                cfg.batch_size = desk.batch_size;
            }
        }
        cfg
    }
}

#[derive(Debug, Args)]
pub struct TrainCmd {
    /// Feature file (TEMIFEAT, or .csv).
    #[arg(short, long)]
    pub input: PathBuf,
    /// Neighbor file from `temi knn`; mined on the fly when absent.
    #[arg(long)]
    pub knn: Option<PathBuf>,
    /// Exponent on the joint term, in (0.5, 1].
    #[arg(long, default_value_t = 0.6)]
    pub beta: f64,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
#[command(group(ArgGroup::new("ground_truth").required(true).multiple(true).args(["truth", "features"])))]
pub struct EvalArgs {
    /// Predicted assignments (JSON array, or object with an "assignments" field).
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth labels, same JSON layouts as --pred.
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Labeled feature file; supplies ground truth and, with --checkpoint,
    /// the inputs for confidence diagnostics.
    #[arg(long)]
    pub features: Option<PathBuf>,
    /// Checkpoint from `temi train`, for confidence diagnostics.
    #[arg(long, requires = "features")]
    pub checkpoint: Option<PathBuf>,
    /// Neighbor file, for true/false pair weight separation (needs --checkpoint).
    #[arg(long, requires = "checkpoint")]
    pub knn: Option<PathBuf>,
    /// Head whose teacher is evaluated [default: the head recorded in --pred, else 0].
    #[arg(long)]
    pub head: Option<usize>,
    /// Features were used without standardization.
    #[arg(long)]
    pub raw: bool,
    /// Emit one CSV row (method, backbone, acc, nmi, ari, ami) instead of JSON.
    #[arg(long)]
    pub csv: bool,
    /// Leave out the CSV header line.
    #[arg(long, requires = "csv")]
    pub no_header: bool,
    /// Method name for the CSV row [default: recorded in --pred, else "unknown"].
    #[arg(long)]
    pub method: Option<String>,
    /// Backbone tag for the CSV row.
    #[arg(long, default_value = "none")]
    pub backbone: String,
    /// Report file [default: stdout].
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Serialize)]
pub struct KmeansArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    /// Clusters [default: number of labeled classes].
    #[arg(short)]
    pub k: Option<usize>,
    #[arg(long, default_value_t = 10)]
    pub restarts: usize,
    #[arg(long, default_value_t = 300)]
    pub max_iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub raw: bool,
    /// Output directory.
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    /// Labeled training features.
    #[arg(long)]
    pub train: PathBuf,
    /// Labeled held-out features.
    #[arg(long)]
    pub eval: PathBuf,
    #[arg(long, default_value_t = 1e-3)]
    pub lr: f64,
    #[arg(long, default_value_t = 1e-3)]
    pub weight_decay: f64,
    #[arg(long, default_value_t = 100)]
    pub epochs: usize,
    #[arg(long, default_value_t = 256)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub raw: bool,
    /// Report file (JSON).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerArg {
    Exhaustive,
    Gradient,
}

#[derive(Debug, Args, Serialize)]
pub struct TheoremArgs {
    /// Size of the input alphabet.
    #[arg(long, default_value_t = 9)]
    pub n_x: usize,
    /// Number of classes [default: 3, or the number of --priors].
    #[arg(long)]
    pub classes: Option<usize>,
    /// Comma-separated class priors [default: uniform].
    #[arg(long, value_delimiter = ',', conflicts_with = "soft")]
    pub priors: Option<Vec<f64>>,
    /// Random overlapping p(x|c) instead of disjoint blocks.
    #[arg(long)]
    pub soft: bool,
    #[arg(long, value_enum, default_value_t = OptimizerArg::Exhaustive)]
    pub optimizer: OptimizerArg,
    /// Gradient ascent step size.
    #[arg(long, default_value_t = 0.5)]
    pub step: f64,
    #[arg(long, default_value_t = 5000)]
    pub iterations: usize,
    #[arg(long, default_value_t = 8)]
    pub restarts: usize,
    /// Steps without improvement before ascent is reported as stalled.
    #[arg(long, default_value_t = 10_000)]
    pub patience: usize,
    /// Use one global step size instead of per-example steps.
    #[arg(long)]
    pub plain: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Verdict file (JSON).
    #[arg(short, long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BetaScanArgs {
    #[arg(short, long)]
    pub input: PathBuf,
    #[arg(long)]
    pub knn: Option<PathBuf>,
    /// Comma-separated beta values, each in (0.5, 1].
    #[arg(long, value_delimiter = ',', default_value = "0.55,0.6,0.7,0.8,0.9,1.0")]
    pub betas: Vec<f64>,
    #[command(flatten)]
    pub train: TrainArgs,
    /// Sweep file (CSV).
    #[arg(short, long)]
    pub out: PathBuf,
}

/// Rejects a zero thread count before any pool is built.
pub fn thread_count(threads: Option<usize>) -> CliResult<Option<usize>> {
    match threads {
        Some(0) => Err(Failure::arg("--threads must be at least 1")),
        other => Ok(other),
    }
}
