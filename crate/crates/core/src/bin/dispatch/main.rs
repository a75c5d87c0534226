//! `dispatch`: the full pipeline as subcommands sharing one TOML config.
//! Artifacts go to the output directory, logs to standard error.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use dispatch_core::nn::Family;
use dispatch_core::pipeline::{PipelineError, RunConfig, SchemeKind};

#[derive(Debug, Parser)]
#[command(name = "dispatch", version, about = "Learned reactive power dispatch: data, oracle, training, evaluation")]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for artifacts and manifests.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads for labeling and evaluation.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// More log output on standard error (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    /// Only warnings and errors on standard error.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Network description checks.
    #[command(subcommand)]
    Grid(GridCmd),
    /// Power flow.
    #[command(subcommand)]
    Pf(PfCmd),
    /// Optimal reactive power dispatch (the labeling oracle).
    #[command(subcommand)]
    Orpd(OrpdCmd),
    /// Dataset construction.
    #[command(subcommand)]
    Data(DataCmd),
    /// Train one model family.
    Train(TrainArgs),
    /// Seeded random hyperparameter search for one family.
    Hyper(HyperArgs),
    /// Score a checkpoint (or the oracle labels) on the test split.
    Eval(EvalArgs),
    /// Comparison table from metric files.
    Report(ReportArgs),
    /// Ground truth vs prediction plot data from a metric file.
    Plot(PlotArgs),
    /// Synthesize or ingest inputs, then label, split, train both families,
    /// evaluate and report.
    Pipeline(PipelineArgs),
}

#[derive(Debug, Args)]
struct GridArg {
    /// Grid description (JSON).
    #[arg(long)]
    grid: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum GridCmd {
    /// Validate a grid; writes `validation.json`.
    Validate {
        #[command(flatten)]
        grid: GridArg,
        /// Also print the report to standard output.
        #[arg(long)]
        print: bool,
    },
}

#[derive(Debug, Subcommand)]
enum PfCmd {
    /// Solve every row of an input table; writes `pf_solution.csv`.
    Run {
        #[command(flatten)]
        grid: GridArg,
        /// Input batch CSV; one all-zero instance when absent.
        #[arg(long)]
        inputs: Option<PathBuf>,
        /// Control batch CSV (one row per input row); nominal controls when absent.
        #[arg(long)]
        controls: Option<PathBuf>,
    },
}

#[derive(Debug, Subcommand)]
enum OrpdCmd {
    /// Solve every row of an input table; writes `orpd_solution.csv`.
    Solve {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
    },
}

#[derive(Debug, Subcommand)]
enum DataCmd {
    /// Uniform samples around a nominal profile; writes `inputs.csv`.
    Synth {
        #[command(flatten)]
        grid: GridArg,
        /// Nominal profile (batch CSV, first row used).
        #[arg(long)]
        nominal: Option<PathBuf>,
        #[arg(long)]
        count: Option<usize>,
        #[arg(long)]
        spread: Option<f64>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Align recorded generation and load tables; writes `inputs.csv` and
    /// `ingest_report.json`.
    Ingest {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        generation: Option<PathBuf>,
        #[arg(long)]
        load: Option<PathBuf>,
        /// Keep every n-th aligned hour.
        #[arg(long)]
        stride: Option<usize>,
    },
    /// Recorded-like generation and load tables; writes `generation.csv`
    /// and `load.csv`.
    Realistic {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        nominal: Option<PathBuf>,
        #[arg(long)]
        hours: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Label inputs with the oracle; writes `labeled.csv`.
    Label {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        inputs: Option<PathBuf>,
    },
    /// Tag train/val/test and compute statistics; writes `dataset.csv`.
    Split {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long, value_enum)]
        scheme: Option<Scheme>,
        /// Train, validation and test fractions.
        #[arg(long, value_delimiter = ',', num_args = 3)]
        fractions: Option<Vec<f64>>,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Histograms and season-by-hour means of an input table; writes `stats/`.
    Stats {
        #[command(flatten)]
        grid: GridArg,
        #[arg(long)]
        inputs: Option<PathBuf>,
        #[arg(long)]
        bins: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum Scheme {
    Random,
    Chronological,
}

impl From<Scheme> for SchemeKind {
    fn from(s: Scheme) -> Self {
        match s {
            Scheme::Random => SchemeKind::Random,
            Scheme::Chronological => SchemeKind::Chronological,
        }
    }
}

#[derive(Debug, Clone, Copy, clap::ValueEnum)]
enum FamilyArg {
    Fcnn,
    Gnn,
}

impl From<FamilyArg> for Family {
    fn from(f: FamilyArg) -> Self {
        match f {
            FamilyArg::Fcnn => Family::Fcnn,
            FamilyArg::Gnn => Family::Gnn,
        }
    }
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    grid: GridArg,
    /// Split dataset CSV.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_epochs: Option<usize>,
}

#[derive(Debug, Args)]
struct HyperArgs {
    #[command(flatten)]
    grid: GridArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, value_enum)]
    family: FamilyArg,
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[command(flatten)]
    grid: GridArg,
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, conflicts_with = "oracle", required_unless_present = "oracle")]
    model: Option<PathBuf>,
    /// Replay the oracle labels instead of a model.
    #[arg(long)]
    oracle: bool,
    /// Display name (defaults to the model family).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    /// Metric files, optionally `path=regime`.
    #[arg(long, required = true, num_args = 1..)]
    metrics: Vec<String>,
    /// Also print the table to standard output.
    #[arg(long)]
    print: bool,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[arg(long)]
    metrics: PathBuf,
    /// Outputs to plot, e.g. `vgen_1_vset,comp_8_q`; all when absent.
    #[arg(long, value_delimiter = ',')]
    outputs: Vec<String>,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    #[command(flatten)]
    grid: GridArg,
    /// Nominal profile for synthetic sampling.
    #[arg(long)]
    nominal: Option<PathBuf>,
    /// Recorded generation table; with `--load`, replaces synthetic sampling.
    #[arg(long, requires = "load")]
    generation: Option<PathBuf>,
    #[arg(long, requires = "generation")]
    load: Option<PathBuf>,
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    regime: Option<String>,
}

fn init_logging(verbose: u8, quiet: bool) {
    let level = match (quiet, verbose) {
        (true, _) => log::LevelFilter::Warn,
        (false, 0) => log::LevelFilter::Info,
        (false, 1) => log::LevelFilter::Debug,
        _ => log::LevelFilter::Trace,
    };
    env_logger::Builder::new().filter_level(level).format_timestamp(None).target(env_logger::Target::Stderr).init();
}

fn load_config(cli: &Cli) -> Result<RunConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(out) = &cli.out {
        cfg.paths.out_dir = Some(out.clone());
    }
    if let Some(w) = cli.workers {
        cfg.workers = Some(w);
    }
    if let Some(w) = cfg.workers {
        if w == 0 {
            return Err(PipelineError::Config("workers must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(w)
            .build_global()
            .map_err(|e| PipelineError::Config(format!("worker pool: {e}")))?;
    }
    Ok(cfg)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    init_logging(cli.verbose, cli.quiet);
    let result = load_config(&cli).and_then(|cfg| commands::run(cli.command, cfg));
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.render());
            ExitCode::from(e.category().exit_code() as u8)
        }
    }
}
