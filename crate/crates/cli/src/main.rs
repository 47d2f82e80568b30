use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use fuselab_core::Activation;
use fuselab_core::harness::{
    self, format_table, load_records_csv, run_alpha_sweep_on, run_demo2d_with, run_experiment_on,
    summarize, write_demo_csv, write_records_csv, write_records_jsonl, write_summary_csv,
    DatasetKind, DemoOutcome, ExperimentConfig, ResultRecord, RunOptions,
};

#[derive(Parser)]
#[command(name = "fuselab", version, about = "One-shot federated model fusion experiments")]
struct Cli {
    /// Increase log verbosity (-v info, -vv debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Two-client 2D concatenation demo over several seeds.
    Demo2d {
        /// Seeds as `a..b` (half-open) or a comma list.
        #[arg(long, default_value = "0..50")]
        seeds: String,
        /// Hidden-unit activation: relu or leaky_relu.
        #[arg(long, default_value = "leaky_relu")]
        activation: Activation,
        /// Per-seed CSV output.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Runs one experiment configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Runs a configuration once per Dirichlet alpha (hetero_dir).
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated ascending alphas.
        #[arg(long, value_delimiter = ',', required = true)]
        alphas: Vec<f64>,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Mean and sample standard deviation per setting and method.
    Summarize {
        #[arg(long = "in")]
        input: PathBuf,
        /// Also write the summary as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

#[derive(Args)]
struct OutputArgs {
    /// Result CSV (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
    /// JSON-lines mirror of the results.
    #[arg(long)]
    jsonl: Option<PathBuf>,
    /// Directory for local and fused model weight files.
    #[arg(long)]
    models_out: Option<PathBuf>,
    /// Directory for per-trial disturbing-matrix CSVs.
    #[arg(long)]
    disturbing_out: Option<PathBuf>,
    /// Test samples exported per trial with --disturbing-out.
    #[arg(long, default_value_t = 100)]
    disturbing_samples: usize,
}

impl OutputArgs {
    fn run_options(&self) -> RunOptions {
        RunOptions {
            models_out: self.models_out.clone(),
            disturbing_out: self.disturbing_out.clone(),
            disturbing_samples: self.disturbing_samples,
        }
    }

    fn emit(&self, records: &[ResultRecord]) -> Result<()> {
        match &self.out {
            Some(p) => write_records_csv(
                BufWriter::new(File::create(p).with_context(|| format!("creating {}", p.display()))?),
                records,
            )?,
            None => write_records_csv(std::io::stdout().lock(), records)?,
        }
        if let Some(p) = &self.jsonl {
            write_records_jsonl(BufWriter::new(File::create(p)?), records)?;
        }
        eprint!("{}", format_table(&summarize(records)));
        Ok(())
    }
}

fn parse_seeds(s: &str) -> Result<Vec<u64>> {
    let seeds: Vec<u64> = if let Some((a, b)) = s.split_once("..") {
        let (a, b): (u64, u64) = (a.trim().parse()?, b.trim().parse()?);
        (a..b).collect()
    } else {
        s.split(',').map(|t| t.trim().parse()).collect::<Result<_, _>>()?
    };
    if seeds.is_empty() {
        bail!("no seeds in '{s}'");
    }
    Ok(seeds)
}

fn load_config(path: &PathBuf) -> Result<ExperimentConfig> {
    ExperimentConfig::from_file(path).with_context(|| format!("reading config {}", path.display()))
}

fn load_data(cfg: &ExperimentConfig) -> Result<Option<(fuselab_core::Dataset, fuselab_core::Dataset)>> {
    match cfg.dataset {
        DatasetKind::Mnist => {
            let dir = harness::mnist_dir();
            let data = fuselab_core::data::load_mnist_dir(&dir).with_context(|| {
                format!(
                    "loading MNIST from {} (set {} to the directory holding the IDX files)",
                    dir.display(),
                    harness::DATA_DIR_ENV
                )
            })?;
            Ok(Some(data))
        }
        DatasetKind::Diamond2d => Ok(None),
    }
}

fn demo(seeds: &str, activation: Activation, out: Option<&PathBuf>) -> Result<()> {
    let records = run_demo2d_with(&parse_seeds(seeds)?, activation)?;
    let mut stdout = std::io::stdout().lock();
    writeln!(stdout, "{:>6}  {:>7}  {:>7}  {:>7}  outcome", "seed", "left%", "right%", "global%")?;
    for r in &records {
        writeln!(
            stdout,
            "{:>6}  {:>7.2}  {:>7.2}  {:>7.2}  {:?}",
            r.seed,
            100.0 * r.acc_left,
            100.0 * r.acc_right,
            100.0 * r.acc_global,
            r.outcome
        )?;
    }
    let count = |o: DemoOutcome| records.iter().filter(|r| r.outcome == o).count();
    writeln!(
        stdout,
        "success {}  fail {}  neutral {}  diverged {}  (of {})",
        count(DemoOutcome::Success),
        count(DemoOutcome::Fail),
        count(DemoOutcome::Neutral),
        count(DemoOutcome::Diverged),
        records.len()
    )?;
    if let Some(p) = out {
        write_demo_csv(BufWriter::new(File::create(p)?), &records)?;
    }
    Ok(())
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();

    match cli.command {
        Command::Demo2d { seeds, activation, out } => demo(&seeds, activation, out.as_ref()),
        Command::Run { config, output } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let records = run_experiment_on(&cfg, data.as_ref(), &output.run_options())?;
            output.emit(&records)
        }
        Command::Sweep { config, alphas, output } => {
            let cfg = load_config(&config)?;
            let data = load_data(&cfg)?;
            let records = run_alpha_sweep_on(&cfg, &alphas, data.as_ref(), &output.run_options())?;
            output.emit(&records)
        }
        Command::Summarize { input, csv } => {
            let records = load_records_csv(&input)
                .with_context(|| format!("reading results {}", input.display()))?;
            let rows = summarize(&records);
            print!("{}", format_table(&rows));
            if let Some(p) = csv {
                write_summary_csv(BufWriter::new(File::create(p)?), &rows)?;
            }
            Ok(())
        }
    }
}
