use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

pub const EXIT_CODES: &str = "\
Exit codes:
  0  success
  1  other failure
  2  usage error (unknown flag, bad flag value)
  3  I/O error (missing or unwritable file)
  4  invalid configuration
  5  data file parse or validation error
  6  training diverged

Errors are printed to stderr as one line:
  error: kind=<kind> exit=<code> message=<json string>";

pub const LOSS_HELP: &str = "\
Loss selection (--loss):
  preset[:key=value]*            e.g. focal:gamma=1, hill:lambda=2
  pos=FAMILY[:k=v]*,neg=FAMILY[:k=v]*
  append +splc[:tau=T][:start=E] for self-paced loss correction
  append +pseudo[:thr=T] for two-stage pseudo-label retraining

Presets:
  bce           binary cross-entropy on both branches
  focal         focal loss on both branches (gamma=2)
  asl           asymmetric loss (gamma_pos=0, gamma_neg=4, m=0.05)
  hill          focal margin positives (m=1, gamma=2) + Hill negatives (lambda=1.5)
  focal_margin  focal margin positives (m=1, gamma=2) + BCE negatives
  mse           BCE positives + squared-probability negatives
  wan           BCE positives + negatives weighted by 1/(K-1)
  bce_ls        label-smoothed BCE (eps=0.1)

Positive families: bce, bce_ls(eps=0.1), focal(gamma=2, alpha=1),
  focal_margin(m=1, gamma=2), asl(gamma_pos=0, gamma_neg=4, m=0.05)
Negative families: bce, bce_ls(eps=0.1), wan(weight=1/(K-1)),
  focal(gamma=2, alpha=1), asl(gamma_neg=4, m=0.05), mse, hill(lambda=1.5)
SPLC: tau=0.6, start=1 (corrections begin after this many epochs). Pseudo-label: thr=0.5.";

/// Losses, label correction and seeded benchmarks for multi-label learning
/// with missing labels.
#[derive(Parser, Debug)]
#[command(name = "mlml", version, about, after_help = EXIT_CODES)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a fully labeled dataset from a planted linear model.
    #[command(after_help = EXIT_CODES)]
    GenData(GenDataArgs),
    /// Remove positive labels with a missing ratio.
    #[command(after_help = EXIT_CODES)]
    Corrupt(CorruptArgs),
    /// Train one model and write checkpoint, diagnostics and metrics.
    #[command(after_help = format!("{LOSS_HELP}\n\n{EXIT_CODES}"))]
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    #[command(after_help = EXIT_CODES)]
    Eval(EvalArgs),
    /// Tabulate gradient magnitude against probability for loss branches.
    #[command(after_help = EXIT_CODES)]
    GradCurves(GradCurvesArgs),
    /// Train several methods over several seeds and tabulate test metrics.
    #[command(after_help = format!("{LOSS_HELP}\n\n{EXIT_CODES}"))]
    Compare(CompareArgs),
    /// Vary one hyper-parameter of a method over several seeds.
    #[command(after_help = format!("{LOSS_HELP}\n\n{EXIT_CODES}"))]
    Sweep(SweepArgs),
    /// Re-execute the job recorded in a run manifest.
    #[command(after_help = EXIT_CODES)]
    Rerun(RerunArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Output path of the training split (JSON lines).
    #[arg(long)]
    pub out: PathBuf,
    /// Also write a test split drawn from the same planted model.
    #[arg(long)]
    pub test_out: Option<PathBuf>,
    /// TOML file with a [benchmark.generator] table.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub n_samples: Option<usize>,
    /// Size of the test split.
    #[arg(long)]
    pub n_test: Option<usize>,
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub classes: Option<usize>,
    /// Per-class positive rate [default: 0.15]
    #[arg(long)]
    pub positive_rate: Option<f64>,
    /// Label co-occurrence strength in [0, 1) [default: 0.5]
    #[arg(long)]
    pub correlation: Option<f64>,
    /// Norm of each class weight vector [default: 3]
    #[arg(long)]
    pub weight_scale: Option<f64>,
    /// Gaussian logit noise; 0 keeps the labels separable [default: 0]
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct CorruptArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Missing ratio r: each sample keeps min(n, floor(n(1-r)) + 1) of its n positives.
    #[arg(long)]
    pub ratio: f64,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

/// Training overrides shared by train, compare and sweep.
#[derive(Args, Debug, Default)]
pub struct TrainFlags {
    /// TOML file with [train] and [benchmark] tables.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// [default: 30]
    #[arg(long)]
    pub epochs: Option<usize>,
    /// [default: 64]
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Peak learning rate of the schedule [default: 0.01]
    #[arg(long)]
    pub lr: Option<f64>,
    /// Decoupled weight decay on weight matrices [default: 1e-4]
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Parameter averaging decay for the evaluation model [default: 0.99]
    #[arg(long, conflicts_with = "no_ema")]
    pub ema_decay: Option<f64>,
    /// Evaluate the raw optimizer iterate instead of the averaged model.
    #[arg(long)]
    pub no_ema: bool,
    /// linear, or mlp:HIDDEN [default: linear]
    #[arg(long)]
    pub model: Option<String>,
    /// Probability threshold for F1 metrics [default: 0.5]
    #[arg(long)]
    pub threshold: Option<f64>,
}

/// Where compare and sweep get their data.
#[derive(Args, Debug)]
pub struct SourceFlags {
    /// Training dataset; without it the pinned synthetic benchmark is
    /// regenerated for every seed.
    #[arg(long, requires = "test")]
    pub data: Option<PathBuf>,
    /// Test dataset scored with its complete labels.
    #[arg(long, requires = "data")]
    pub test: Option<PathBuf>,
    /// Use the synthetic benchmark (the default when --data is absent).
    #[arg(long, conflicts_with = "data")]
    pub benchmark: bool,
}

#[derive(Args, Debug)]
pub struct SplcFlags {
    /// Wrap the loss in self-paced loss correction.
    #[arg(long)]
    pub splc: bool,
    /// Correction threshold; implies --splc [default: 0.6]
    #[arg(long)]
    pub tau: Option<f64>,
    /// Corrections begin after this many completed epochs; implies --splc [default: 1]
    #[arg(long)]
    pub start_epoch: Option<usize>,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub data: PathBuf,
    /// Evaluation dataset for per-epoch and final metrics.
    #[arg(long)]
    pub test: Option<PathBuf>,
    /// Loss or method string, see below [default: bce]
    #[arg(long)]
    pub loss: Option<String>,
    #[command(flatten)]
    pub splc: SplcFlags,
    #[arg(long)]
    pub seed: Option<u64>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Output directory.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 0.5)]
    pub threshold: f64,
    /// Metrics JSON path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct GradCurvesArgs {
    /// Branches such as hill_neg or asl_neg:gamma_neg=4:m=0.05
    /// [default: bce_neg focal_neg asl_neg mse_neg hill_neg bce_pos focal_pos focal_margin_pos]
    #[arg(long, num_args = 1..)]
    pub losses: Vec<String>,
    #[arg(long, default_value_t = 999)]
    pub points: usize,
    #[arg(long, default_value_t = 0.001)]
    pub lo: f64,
    #[arg(long, default_value_t = 0.999)]
    pub hi: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SeedFlags {
    /// Seeds as a comma list; items may be ranges like 0..10 [default: 0..10]
    #[arg(long, value_delimiter = ',')]
    pub seeds: Vec<String>,
    /// Worker threads across independent runs; results do not depend on it.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
}

#[derive(Args, Debug)]
pub struct CompareArgs {
    /// Method strings, space separated or repeated.
    #[arg(long, num_args = 1.., required = true)]
    pub losses: Vec<String>,
    #[command(flatten)]
    pub seeds: SeedFlags,
    #[command(flatten)]
    pub source: SourceFlags,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Comparison CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct SweepArgs {
    /// margin, tau, start_epoch or lambda
    #[arg(long)]
    pub axis: String,
    #[arg(long, value_delimiter = ',', required = true)]
    pub values: Vec<f64>,
    /// Method whose hyper-parameter is varied [default: the [train] method of --config]
    #[arg(long)]
    pub loss: Option<String>,
    #[command(flatten)]
    pub splc: SplcFlags,
    #[command(flatten)]
    pub seeds: SeedFlags,
    #[command(flatten)]
    pub source: SourceFlags,
    /// Base configuration (TOML), same layout as --config.
    #[arg(long, conflicts_with = "config")]
    pub base_config: Option<PathBuf>,
    #[command(flatten)]
    pub train: TrainFlags,
    /// Sweep CSV path.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct RerunArgs {
    #[arg(long)]
    pub manifest: PathBuf,
}
