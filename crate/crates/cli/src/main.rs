use std::path::PathBuf;
use std::process::ExitCode;

use brainpop_core::pipeline::{load_config, MetricsDocument, RunDir};
use brainpop_core::{Error, ErrorKind, Result};
use clap::{Parser, Subcommand};
use log::error;

#[derive(Debug, Parser)]
#[command(name = "brainpop", version, about = "Two-stage brain/population graph classification")]
struct Cli {
    /// TOML configuration file; defaults apply to anything it omits.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override a field by dotted path, e.g. `stage2.fusion=add`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Parent of the run directory, which is named by the config hash.
    #[arg(long, default_value = "out", global = true)]
    out: PathBuf,
    /// Root seed; shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, Subcommand)]
enum Command {
    /// Write the configured synthetic cohort to `data/`.
    GenData,
    /// Build the semantic region graph and summarise it.
    BuildGraphs,
    /// Train the brain-graph model on every subject.
    TrainStage1,
    /// Cross-validate both stages and train the final population model.
    TrainStage2,
    /// Write metrics.json and metrics.csv.
    Evaluate,
    /// Write node importance and region co-assignment tables.
    Explain,
    /// Run every stage in order, resuming from existing artifacts.
    RunAll,
    /// Expand the ablation grid and write one comparison table.
    Ablate,
}

fn exit_code(e: &Error) -> u8 {
    match e.kind() {
        ErrorKind::Config => 2,
        ErrorKind::Data => 3,
        ErrorKind::Numerical => 4,
    }
}

fn print_metrics(doc: &MetricsDocument) {
    for (stage, r) in [("stage1", &doc.stage1), ("stage2", &doc.stage2)] {
        println!(
            "{stage}: acc {:.4}±{:.4} auc {:.4}±{:.4} spe {:.4}±{:.4} sen {:.4}±{:.4}",
            r.acc.mean, r.acc.std, r.auc.mean, r.auc.std, r.spe.mean, r.spe.std, r.sen.mean, r.sen.std
        );
    }
}

fn run(cli: &Cli) -> Result<()> {
    let mut overrides = cli.overrides.clone();
    if let Some(seed) = cli.seed {
        overrides.push(format!("seed={seed}"));
    }
    let config = load_config(cli.config.as_deref(), &overrides)?;
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            return Err(Error::Config("--jobs must be at least 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(jobs)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    let run = RunDir::create(&cli.out, config)?;
    println!("run directory: {}", run.root.display());
    match cli.command {
        Command::GenData => run.gen_data()?,
        Command::BuildGraphs => run.build_graphs()?,
        Command::TrainStage1 => run.train_stage1()?,
        Command::TrainStage2 => run.train_stage2()?,
        Command::Evaluate => print_metrics(&run.evaluate()?),
        Command::Explain => run.explain()?,
        Command::RunAll => print_metrics(&run.run_all()?),
        Command::Ablate => {
            let rows = run.ablate()?;
            println!("{} ablation cells -> {}", rows.len(), run.ablation_csv().display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            error!("{e}");
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
