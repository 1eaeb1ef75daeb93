//! `stacklab` command-line interface.
//!
//! Exit codes: 0 on success, 2 when input or configuration is invalid, 3 when
//! a pipeline stage fails (including any failed regime of `run`).

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use stacklab::{Error, Granularity, MetaKind, MetadataPolicy, ReportFormat};

#[derive(Parser)]
#[command(
    name = "stacklab",
    version,
    about = "Meta-ensembles over patient-aware data splits"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset from a spec file.
    Generate(GenerateArgs),
    /// Partition a dataset's training pool into a split plan.
    Split(SplitArgs),
    /// Train one base model on its share of a plan.
    TrainBase(TrainBaseArgs),
    /// Stack the logits of base models over the meta split or the test set.
    Extract(ExtractArgs),
    /// Train a meta-model on a logit stack.
    TrainMeta(TrainMetaArgs),
    /// Score predictions, a base model, or a meta-model.
    Evaluate(EvaluateArgs),
    /// Run a full experiment from a config file.
    Run(RunArgs),
    /// Render a saved report bundle.
    Report(ReportArgs),
}

/// Class list of a dataset CSV. Defaults to the four respiratory classes.
#[derive(Args, Clone)]
struct TaxonomyArgs {
    /// Comma-separated class names in id order.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "normal,crackle,wheeze,both"
    )]
    classes: Vec<String>,
    /// The normal class; defaults to the first class.
    #[arg(long)]
    normal: Option<String>,
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    spec: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Extra test-tagged samples per training patient.
    #[arg(long, default_value_t = 2)]
    test_per_patient: usize,
    /// Also write samples of unseen patients here.
    #[arg(long)]
    ood: Option<PathBuf>,
    #[arg(long, default_value_t = 100)]
    fresh_patients: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum StrategyArg {
    Fixed,
    Kfold,
}

#[derive(Clone, Copy, ValueEnum)]
enum GranularityArg {
    Patient,
    Sample,
}

impl From<GranularityArg> for Granularity {
    fn from(g: GranularityArg) -> Self {
        match g {
            GranularityArg::Patient => Granularity::PatientLevel,
            GranularityArg::Sample => Granularity::SampleLevel,
        }
    }
}

#[derive(Args)]
struct SplitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    #[arg(long, value_enum)]
    strategy: StrategyArg,
    #[arg(long, default_value_t = 5)]
    k: usize,
    #[arg(long, value_enum)]
    granularity: GranularityArg,
    #[arg(long, default_value_t = 0.8)]
    base_fraction: f64,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum MetadataArg {
    Ignore,
    OneHot,
}

impl From<MetadataArg> for MetadataPolicy {
    fn from(m: MetadataArg) -> Self {
        match m {
            MetadataArg::Ignore => MetadataPolicy::Ignore,
            MetadataArg::OneHot => MetadataPolicy::OneHotAppend,
        }
    }
}

/// Optimizer settings; unset values keep the defaults of the model kind.
#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
}

#[derive(Args)]
struct TrainBaseArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    #[arg(long)]
    plan: PathBuf,
    /// 1-based model index; with a k-fold plan, model i validates on fold i.
    #[arg(long)]
    model_index: usize,
    #[arg(long)]
    seed: u64,
    /// Hidden layer widths.
    #[arg(long, value_delimiter = ',', default_value = "64")]
    hidden: Vec<usize>,
    #[arg(long, value_enum, default_value = "ignore")]
    metadata: MetadataArg,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum SelectorArg {
    Meta,
    Test,
}

#[derive(Args)]
struct ExtractArgs {
    #[arg(long, num_args = 1.., required = true)]
    models: Vec<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    #[arg(long, value_enum)]
    selector: SelectorArg,
    /// Required for `--selector meta`.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct TrainMetaArgs {
    /// 1h, 2h, feature or fusion.
    #[arg(long)]
    variant: MetaKind,
    #[arg(long)]
    stack: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    #[arg(long)]
    seed: u64,
    /// Checks the stack against the plan's meta split.
    #[arg(long)]
    plan: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "ignore")]
    metadata: MetadataArg,
    #[command(flatten)]
    train: TrainArgs,
    #[arg(long, default_value = "meta.json")]
    out: PathBuf,
}

#[derive(Args)]
#[group(id = "source", required = true, multiple = false)]
struct PredictionSource {
    /// CSV with `sample_id,prediction` (class name or id).
    #[arg(long, group = "source")]
    preds: Option<PathBuf>,
    /// A base model file.
    #[arg(long, group = "source")]
    model: Option<PathBuf>,
    /// A meta-model file; needs `--stack`.
    #[arg(long, group = "source", requires = "stack")]
    meta: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[command(flatten)]
    source: PredictionSource,
    #[arg(long)]
    stack: Option<PathBuf>,
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    taxonomy: TaxonomyArgs,
    /// Score every row instead of only the test-tagged ones.
    #[arg(long)]
    all: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Train models across threads; results are identical either way.
    #[arg(long)]
    parallel: bool,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Json,
    Table,
}

impl From<FormatArg> for ReportFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Json => ReportFormat::Json,
            FormatArg::Table => ReportFormat::Table,
        }
    }
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    bundle: PathBuf,
    #[arg(long, value_enum, default_value = "table")]
    format: FormatArg,
    /// Write the report file into this directory instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Why a command stopped.
enum Failure {
    Invalid(Error),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(e)
        } else {
            Failure::Stage(e.to_string())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Generate(a) => commands::generate(a),
        Command::Split(a) => commands::split(a),
        Command::TrainBase(a) => commands::train_base(a),
        Command::Extract(a) => commands::extract(a),
        Command::TrainMeta(a) => commands::train_meta(a),
        Command::Evaluate(a) => commands::evaluate(a),
        Command::Run(a) => commands::run(a),
        Command::Report(a) => commands::report(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Invalid(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(3)
        }
    }
}
