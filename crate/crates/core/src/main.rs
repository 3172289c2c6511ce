use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use alsim::cli::{self, artifacts, plot, Stage, SweepConfig, SweepOptions, SweepReport};
use alsim::factoranalysis::EncodeOptions;
use alsim::taskgen::{InputType, TaskId, TaskSpec};
use alsim::Result;

#[derive(Parser)]
#[command(name = "alsim", version, about = "Active learning vs random selection simulation workbench")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct SweepArgs {
    /// Sweep configuration file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the config.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Master seed; overrides `master_seed` in the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; overrides `parallelism` in the config.
    #[arg(long)]
    parallelism: Option<usize>,
    /// Recompute cells whose outputs already exist.
    #[arg(long)]
    force: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Write a task definition, optionally calibrated to a Bayes error.
    GenTask {
        #[arg(long)]
        task: TaskId,
        #[arg(long)]
        ber: Option<f64>,
        #[arg(long, default_value = "continuous")]
        input_type: InputType,
        #[arg(long, default_value_t = 2)]
        input_dim: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 100_000)]
        n_mc: usize,
        /// Output file; stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run experiments and write trajectories without evaluating them.
    Run(SweepArgs),
    /// Run and evaluate every cell, then assemble results.csv.
    Sweep(SweepArgs),
    /// Evaluate finished experiments under a sweep directory.
    Evaluate {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        parallelism: usize,
        #[arg(long)]
        force: bool,
    },
    /// Fit the zone-length regressions to results.csv.
    Analyze {
        #[arg(long)]
        out: PathBuf,
        /// Results table; `<out>/results.csv` when omitted.
        #[arg(long)]
        results: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        alpha: f64,
        /// Leave `space_for_al` and `mismatch` out of the design.
        #[arg(long)]
        exclude_inferred: bool,
    },
    /// Render the three SVG figures for each experiment.
    Plot {
        #[arg(long)]
        out: PathBuf,
        /// Only this experiment id.
        #[arg(long)]
        experiment: Option<String>,
    },
}

fn load(args: &SweepArgs) -> Result<SweepConfig> {
    let mut config = cli::load_config(&args.config)?;
    if let Some(out) = &args.out {
        config.output_dir = out.clone();
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    if let Some(p) = args.parallelism {
        config.parallelism = p;
    }
    config.validate()?;
    Ok(config)
}

fn summarize(report: &SweepReport) -> ExitCode {
    eprintln!(
        "{} experiments: {} computed, {} skipped, {} failed",
        report.total,
        report.completed,
        report.skipped,
        report.failures.len()
    );
    if report.all_succeeded() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}

fn run_grid(args: &SweepArgs, stage: Stage) -> Result<ExitCode> {
    let config = load(args)?;
    eprintln!("grid: {} combinations x {} repeats", config.grid_size(), config.repeats);
    let report = cli::run_sweep(&config, SweepOptions { force: args.force, stage })?;
    Ok(summarize(&report))
}

fn execute(command: Command) -> Result<ExitCode> {
    match command {
        Command::GenTask {
            task,
            ber,
            input_type,
            input_dim,
            seed,
            n_mc,
            out,
        } => {
            let spec = TaskSpec::new(task).with_input(input_type, input_dim);
            let text = cli::generate_task(&spec, ber, n_mc, seed)?;
            match out {
                Some(path) => artifacts::write_atomic(&path, text.as_bytes())?,
                None => print!("{text}"),
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Run(args) => run_grid(&args, Stage::Run),
        Command::Sweep(args) => run_grid(&args, Stage::Full),
        Command::Evaluate { out, parallelism, force } => Ok(summarize(&cli::evaluate_all(&out, parallelism, force)?)),
        Command::Analyze {
            out,
            results,
            alpha,
            exclude_inferred,
        } => {
            let results = results.unwrap_or_else(|| out.join(artifacts::RESULTS_FILE));
            let options = EncodeOptions {
                include_inferred_covariates: !exclude_inferred,
            };
            let analysis = cli::analyze_results(&results, &out, alpha, &options)?;
            print!("{}", analysis.report());
            Ok(ExitCode::SUCCESS)
        }
        Command::Plot { out, experiment } => {
            let dirs = match experiment {
                Some(id) => vec![artifacts::experiment_dir(&out, &id)],
                None => {
                    let root = artifacts::experiments_root(&out);
                    let mut dirs: Vec<PathBuf> = std::fs::read_dir(&root)
                        .map_err(|_| alsim::Error::MissingInput(root.clone()))?
                        .filter_map(|e| e.ok().map(|e| e.path()))
                        .filter(|p| p.join(artifacts::TRAJECTORIES_FILE).exists())
                        .collect();
                    dirs.sort();
                    dirs
                }
            };
            for dir in dirs {
                plot::render_plots(&dir)?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
