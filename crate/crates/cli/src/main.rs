use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use gsmo_core::data::{Layout, SyntheticSpec};
use gsmo_core::experiment::{self, ExperimentConfig};
use gsmo_core::training::{coarse_grid, Approach, BalanceWeights};
use gsmo_core::Error;

#[derive(Parser)]
#[command(name = "gsmo", version, about = "Joint plant species and disease classification experiments")]
struct Cli {
    /// Worker threads for independent runs and per-sample kernels.
    #[arg(long, global = true, env = "GSMO_JOBS")]
    jobs: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum LayoutArg {
    Pairdir,
    Csv,
}

impl From<LayoutArg> for Layout {
    fn from(l: LayoutArg) -> Self {
        match l {
            LayoutArg::Pairdir => Layout::Pairdir,
            LayoutArg::Csv => Layout::Csv,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Render a synthetic leaf dataset.
    Generate {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Repeated training of one approach.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// multi_model, powerset, multi_output or gsmo.
        #[arg(long)]
        approach: Option<String>,
        /// beta1,beta2,delta1,delta2
        #[arg(long, allow_hyphen_values = true)]
        weights: Option<String>,
        /// Initialize from this checkpoint (groups and freezing per the config's `transfer`).
        #[arg(long)]
        from: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train every approach on the same splits and seeds.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Search balance weights for the stacked model.
    Gridsearch {
        #[arg(long)]
        config: PathBuf,
        /// `coarse` or a JSON file of weight tuples.
        #[arg(long, default_value = "coarse")]
        grid: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate checkpoint(s) on a dataset and print the metrics as JSON.
    Eval {
        /// Repeat for a single_plant + single_disease pair.
        #[arg(long, required = true)]
        checkpoint: Vec<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
        #[arg(long, default_value_t = 32)]
        batch_size: usize,
        /// Write per-sample predictions as CSV.
        #[arg(long)]
        predictions: Option<PathBuf>,
        /// Include per-class scores.
        #[arg(long)]
        per_class: bool,
    },
    /// Print dataset statistics as JSON.
    Stats {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum)]
        layout: Option<LayoutArg>,
    },
}

fn exit_code(err: &anyhow::Error) -> u8 {
    match err.downcast_ref::<Error>() {
        Some(Error::Config(_) | Error::InvalidArgument(_) | Error::Shape(_) | Error::Label(_)) => 2,
        Some(Error::Io { .. } | Error::Image { .. } | Error::Dataset(_) | Error::Checkpoint(_)) => 3,
        Some(Error::Divergence { .. }) => 4,
        Some(Error::LabelMismatch(_)) => 5,
        None => 1,
    }
}

fn load_config(path: &Path, out: Option<PathBuf>) -> anyhow::Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path)?;
    if let Some(out) = out {
        cfg.output = out;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(value: &T) -> anyhow::Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn summarize(report: &experiment::Report) {
    for a in report.ranked_aggregates() {
        println!(
            "{:<14} runs={} failed={} plant_f1={:.4}±{:.4} dis_f1={:.4}±{:.4} both_acc={:.4}±{:.4} both_f1={:.4}±{:.4}",
            a.approach,
            a.runs,
            a.failed,
            a.metrics.plant_f1.mean,
            a.metrics.plant_f1.std,
            a.metrics.dis_f1.mean,
            a.metrics.dis_f1.std,
            a.metrics.both_acc.mean,
            a.metrics.both_acc.std,
            a.metrics.both_f1.mean,
            a.metrics.both_f1.std,
        );
    }
    for a in report.aggregates.iter().filter(|a| a.failed > 0) {
        for f in &a.failures {
            eprintln!("{} seed {} failed: {}", a.approach, f.seed, f.error);
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Generate { spec, out } => {
            let text = std::fs::read_to_string(&spec)
                .map_err(|e| Error::Io {
                    context: format!("reading {}", spec.display()),
                    source: e,
                })?;
            let spec: SyntheticSpec = serde_json::from_str(&text)
                .map_err(|e| Error::Config(format!("{}: {e}", spec.display())))?;
            let outcome = experiment::cmd_generate(&spec, &out)?;
            if outcome.up_to_date {
                println!("up-to-date: {} images in {}", outcome.samples, out.display());
            } else {
                println!("wrote {} images to {}", outcome.samples, out.display());
            }
            for p in &outcome.stats.pairs {
                println!("{}{}{}\t{}", p.species, gsmo_core::data::PAIR_SEPARATOR, p.disease, p.count);
            }
        }
        Command::Train {
            config,
            approach,
            weights,
            from,
            out,
        } => {
            let mut cfg = load_config(&config, out)?;
            if let Some(a) = approach {
                cfg.approach = Approach::parse(&a)?;
            }
            if let Some(w) = weights {
                cfg.weights = BalanceWeights::parse(&w).map_err(|e| Error::Config(e.to_string()))?;
            }
            let report = experiment::cmd_train(&cfg, from.as_deref())?;
            summarize(&report);
            println!("reports written to {}", cfg.output.display());
        }
        Command::Compare { config, out } => {
            let cfg = load_config(&config, out)?;
            let report = experiment::cmd_compare(&cfg)?;
            summarize(&report);
            println!("reports written to {}", cfg.output.display());
        }
        Command::Gridsearch { config, grid, out } => {
            let cfg = load_config(&config, out)?;
            let grid = if grid == "coarse" {
                coarse_grid(&[0.2, 0.4, 0.6, 0.8])
            } else {
                experiment::load_grid(Path::new(&grid))?
            };
            let table = experiment::cmd_gridsearch(&cfg, &grid)?;
            let w = table.best;
            println!(
                "{} tuples; best beta1={} beta2={} delta1={} delta2={} (val both-F1 {:.4})",
                table.rows.len(),
                w.beta1,
                w.beta2,
                w.delta1,
                w.delta2,
                table.rows[0].val_both_f1
            );
        }
        Command::Eval {
            checkpoint,
            data,
            layout,
            batch_size,
            predictions,
            per_class,
        } => {
            let (report, samples) =
                experiment::cmd_eval(&checkpoint, &data, layout.map(Layout::from), batch_size)?;
            if let Some(p) = predictions {
                experiment::write_predictions(&p, &samples)?;
            }
            if per_class {
                print_json(&report)?;
            } else {
                print_json(&report.without_per_class())?;
            }
        }
        Command::Stats { data, layout } => {
            let stats = experiment::cmd_stats(&data, layout.map(Layout::from))?;
            print_json(&stats)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs.max(1)).build_global() {
            eprintln!("warning: could not configure {jobs} jobs: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {:#}", e);
            ExitCode::from(exit_code(&e))
        }
    }
}
