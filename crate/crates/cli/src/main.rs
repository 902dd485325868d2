mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use xmc_core::ensemble::Scheme;
use xmc_core::uncertainty::EntropyKind;

use crate::commands::{EvalArgs, EvalTask};
use crate::config::RunConfig;
use crate::error::{CliError, Result};

pub const VERSION_STRING: &str = concat!(env!("CARGO_PKG_VERSION"), " (", env!("XMC_GIT_DESCRIBE"), ")");

#[derive(Parser)]
#[command(name = "xmc", version = VERSION_STRING, about = "Label-tree extreme multi-label classifier with ensemble uncertainty")]
struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log progress (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(flatten)]
    overrides: Overrides,

    #[command(subcommand)]
    command: Command,
}

/// Per-run settings; each one overrides the config file.
#[derive(Args, Default)]
struct Overrides {
    /// single, bagging, boosting, boosted-bagging or mc-dropout.
    #[arg(long, global = true, value_parser = parse_scheme)]
    scheme: Option<Scheme>,
    /// Ensemble size.
    #[arg(short = 'M', long, global = true)]
    members: Option<usize>,
    /// Boosting mixing rate.
    #[arg(long, global = true)]
    alpha: Option<f64>,
    /// Hard negatives mined per instance when boosting.
    #[arg(long, global = true)]
    k_hard: Option<usize>,
    /// Tree branching factor.
    #[arg(short = 'B', long, global = true)]
    branching: Option<usize>,
    #[arg(long, global = true)]
    max_leaf: Option<usize>,
    #[arg(long, global = true)]
    kmeans_max_iter: Option<usize>,
    /// Loss weight of the node classifiers.
    #[arg(long, global = true)]
    c: Option<f64>,
    #[arg(long, global = true)]
    solver_tol: Option<f64>,
    #[arg(long, global = true)]
    solver_max_iter: Option<usize>,
    /// Weights below this magnitude are dropped after training.
    #[arg(long, global = true)]
    prune: Option<f64>,
    /// Weight dropout rate for mc-dropout.
    #[arg(long, global = true)]
    dropout: Option<f64>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Beam width.
    #[arg(short = 'b', long, global = true)]
    beam: Option<usize>,
    /// Labels returned per instance.
    #[arg(short = 'k', long, global = true)]
    top_k: Option<usize>,
    /// Probability assumed for labels a member did not retrieve.
    #[arg(long, global = true)]
    delta: Option<f64>,
    /// binary or positive-only.
    #[arg(long, global = true, value_parser = parse_entropy)]
    entropy: Option<EntropyKind>,
    /// Keep feature rows as read instead of L2-normalizing them.
    #[arg(long, global = true)]
    no_normalize: bool,
    /// Largest label count for which exhaustive inference is allowed.
    #[arg(long, global = true)]
    max_exact_labels: Option<usize>,
}

fn parse_scheme(s: &str) -> std::result::Result<Scheme, String> {
    s.parse().map_err(|e: xmc_core::Error| e.to_string())
}

fn parse_entropy(s: &str) -> std::result::Result<EntropyKind, String> {
    match s {
        "binary" => Ok(EntropyKind::Binary),
        "positive-only" => Ok(EntropyKind::PositiveOnly),
        _ => Err(format!("unknown entropy {s:?} (binary or positive-only)")),
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum UncertaintyMode {
    Exact,
    Beam,
}

#[derive(Clone, Copy, ValueEnum)]
enum Task {
    Rank,
    Miscls,
    Ood,
}

#[derive(Subcommand)]
enum Command {
    /// Train a model or ensemble.
    Train {
        /// Training data in the sparse text format.
        #[arg(long)]
        train: PathBuf,
        /// Output model directory.
        #[arg(short, long)]
        out: PathBuf,
    },
    /// Write top-k label predictions.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Beam as wide as the widest layer, so nothing is pruned.
        #[arg(long, conflicts_with = "exhaustive")]
        full_width: bool,
        /// Score every label directly.
        #[arg(long)]
        exhaustive: bool,
    },
    /// Write the per-label and per-instance uncertainty report.
    Uncertainty {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "beam")]
        mode: UncertaintyMode,
        /// Also run exact mode and print the largest differences.
        #[arg(long)]
        compare_exact: bool,
    },
    /// Score predictions or reports against ground truth.
    Eval {
        #[arg(long, value_enum)]
        task: Task,
        /// Data file whose labels are the ground truth.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long)]
        predictions: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        /// Report on out-of-distribution instances (task ood).
        #[arg(long)]
        ood_report: Option<PathBuf>,
        /// Score: pv, tu, ku, edu, energy (miscls) or joint-energy (ood).
        #[arg(long, default_value = "pv")]
        metric: String,
        #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
        ks: Vec<usize>,
        /// Write the JSON here instead of stdout.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Time exact against beam inference.
    Bench {
        #[arg(long, required_unless_present = "sweep")]
        model: Option<PathBuf>,
        #[arg(long, required_unless_present = "sweep")]
        test: Option<PathBuf>,
        /// Only use the first N test instances.
        #[arg(long)]
        limit: Option<usize>,
        /// Sweep synthetic trees of growing size instead.
        #[arg(long)]
        sweep: bool,
        /// Sweep sizes as L:depth pairs.
        #[arg(long, default_value = "1024:5,4096:6,16384:7,65536:8", value_parser = commands::parse_sizes)]
        sizes: std::vec::Vec<(usize, usize)>,
        #[arg(long, default_value_t = 0.5)]
        gamma: f64,
        #[arg(long, default_value_t = 200)]
        queries: usize,
        #[arg(long, default_value_t = 3)]
        reps: usize,
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    let o = &cli.overrides;
    macro_rules! take {
        ($($f:ident),+) => { $(if let Some(v) = o.$f { cfg.$f = v; })+ };
    }
    take!(
        scheme,
        members,
        alpha,
        k_hard,
        branching,
        max_leaf,
        kmeans_max_iter,
        c,
        solver_tol,
        solver_max_iter,
        prune,
        dropout,
        seed,
        beam,
        top_k,
        delta,
        entropy,
        max_exact_labels
    );
    if o.no_normalize {
        cfg.normalize = false;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Usage(format!("cannot configure thread pool: {e}")))?;
    }
    let cfg = resolve(&cli)?;
    log::debug!("resolved config {}", cfg.to_json());
    match &cli.command {
        Command::Train { train, out } => commands::train(&cfg, train, out),
        Command::Predict {
            model,
            test,
            out,
            full_width,
            exhaustive,
        } => commands::predict(&cfg, model, test, out, *full_width, *exhaustive),
        Command::Uncertainty {
            model,
            test,
            out,
            mode,
            compare_exact,
        } => commands::uncertainty(&cfg, model, test, out, matches!(mode, UncertaintyMode::Exact), *compare_exact),
        Command::Eval {
            task,
            truth,
            predictions,
            report,
            ood_report,
            metric,
            ks,
            out,
        } => {
            if ks.is_empty() || ks.contains(&0) {
                return Err(CliError::Usage("--ks needs positive cut-offs".into()));
            }
            commands::eval(&EvalArgs {
                task: match task {
                    Task::Rank => EvalTask::Rank,
                    Task::Miscls => EvalTask::Miscls,
                    Task::Ood => EvalTask::Ood,
                },
                truth: truth.as_deref(),
                predictions: predictions.as_deref(),
                report: report.as_deref(),
                ood_report: ood_report.as_deref(),
                metric,
                ks,
                out: out.as_deref(),
            })
        }
        Command::Bench {
            model,
            test,
            limit,
            sweep,
            sizes,
            gamma,
            queries,
            reps,
            out,
        } => {
            if *sweep {
                commands::bench_sweep(&cfg, sizes, *gamma, *queries, *reps, out.as_deref())
            } else {
                let (Some(model), Some(test)) = (model, test) else {
                    return Err(CliError::Usage("bench needs --model and --test, or --sweep".into()));
                };
                commands::bench(&cfg, model, test, *limit, out.as_deref())
            }
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
