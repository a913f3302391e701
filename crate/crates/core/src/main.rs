use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use memsgd::compression::TieBreak;
use memsgd::harness::{
    cmd_check, cmd_compare, cmd_run, cmd_tune_gamma0, dataset_info, metrics, variance_report, CheckOptions,
    HarnessError, RunConfig,
};

#[derive(Parser)]
#[command(name = "memsgd", version, about = "Sparsified SGD with memory: runs, comparisons and self-checks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

/// Flags shared by commands that read a run configuration. They override
/// values from the file.
#[derive(Args, Clone, Default)]
struct Overrides {
    /// Override any key, as `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
    /// Replace the compressor, e.g. "top_k k=1" or "qsgd s=16".
    #[arg(long)]
    compressor: Option<String>,
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
}

impl Overrides {
    fn list(&self) -> Vec<String> {
        let mut out = Vec::new();
        if let Some(c) = &self.compressor {
            out.push(format!("compressor={c}"));
        }
        if let Some(v) = self.steps {
            out.push(format!("run.steps={v}"));
        }
        if let Some(v) = self.seed {
            out.push(format!("run.seed={v}"));
        }
        if let Some(v) = self.workers {
            out.push(format!("run.workers={v}"));
        }
        out.extend(self.set.iter().cloned());
        out
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run one configuration and write its checkpoint CSV and JSON summary.
    Run {
        #[arg(long, short)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Output prefix; without one the CSV goes to standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run several configurations on the same problem and merge their CSVs.
    Compare {
        #[arg(required = true, num_args = 1..)]
        configs: Vec<PathBuf>,
        /// Overrides applied to every configuration.
        #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
        set: Vec<String>,
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Grid search over gamma0 for the rate gamma0 / (1 + gamma0 lambda t).
    #[command(name = "tune-gamma0")]
    TuneGamma0 {
        #[arg(long, short)]
        config: PathBuf,
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated gamma0 values.
        #[arg(long, value_delimiter = ',', required = true)]
        grid: Vec<f64>,
        /// Fraction of the components used for tuning.
        #[arg(long, default_value_t = 0.1)]
        fraction: f64,
        /// Write the table as CSV here instead of standard output.
        #[arg(long, short)]
        output: Option<PathBuf>,
    },
    /// Run the built-in invariant suites.
    Check {
        /// Test hook: resolve top-k ties toward the highest index.
        #[arg(long, hide = true)]
        corrupt_tie_rule: bool,
    },
    /// Print statistics of a LIBSVM file.
    #[command(name = "dataset-info")]
    DatasetInfo {
        path: PathBuf,
        /// Read labels 0/1 and map 0 to -1.
        #[arg(long)]
        zero_one_labels: bool,
    },
    /// Estimate the variance of the rescaled rand-k gradient estimator at x = 0.
    #[command(name = "variance-probe")]
    VarianceProbe {
        #[arg(long, short)]
        config: PathBuf,
        #[arg(long)]
        k: usize,
        /// Mini-batch size; defaults to ceil(d/k).
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

enum Failure {
    Harness(HarnessError),
    Checks,
}

impl From<HarnessError> for Failure {
    fn from(e: HarnessError) -> Self {
        Failure::Harness(e)
    }
}

fn stdout_err(e: std::io::Error) -> HarnessError {
    HarnessError::io("<stdout>", e)
}

fn print_json<T: serde::Serialize>(value: &T) -> Result<(), HarnessError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| stdout_err(e.into()))?;
    println!("{text}");
    Ok(())
}

fn load(path: &Path, overrides: &[String]) -> Result<RunConfig, HarnessError> {
    RunConfig::from_file(path, overrides)
}

fn dispatch(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Run {
            config,
            overrides,
            output,
        } => {
            let mut cfg = load(&config, &overrides.list())?;
            if output.is_some() {
                cfg.output = output;
            }
            let report = cmd_run(&cfg)?;
            if cfg.output.is_none() {
                let mut out = std::io::stdout().lock();
                metrics::write_csv_header(&mut out)
                    .and_then(|_| metrics::write_csv_rows(&mut out, &report.label, &report.rows))
                    .map_err(stdout_err)?;
            }
            eprintln!(
                "{}: output objective {} after {} steps, {} bits",
                report.label, report.summary.output_objective, report.summary.steps, report.summary.total_bits
            );
        }
        Command::Compare { configs, set, output } => {
            let configs = configs
                .iter()
                .map(|p| load(p, &set))
                .collect::<Result<Vec<_>, _>>()?;
            let report = cmd_compare(&configs, output.as_deref())?;
            if output.is_none() {
                print!("{}", report.to_csv());
            }
        }
        Command::TuneGamma0 {
            config,
            overrides,
            grid,
            fraction,
            output,
        } => {
            let cfg = load(&config, &overrides.list())?;
            let report = cmd_tune_gamma0(&cfg, &grid, fraction)?;
            match output {
                Some(path) => std::fs::write(&path, report.to_csv()).map_err(|e| HarnessError::io(path, e))?,
                None => print!("{}", report.to_csv()),
            }
            eprintln!("best gamma0 = {} on {} components", report.best_gamma0, report.subsample_n);
        }
        Command::Check { corrupt_tie_rule } => {
            let opts = CheckOptions {
                tie_break: if corrupt_tie_rule {
                    TieBreak::HighestIndex
                } else {
                    TieBreak::LowestIndex
                },
            };
            let results = cmd_check(&opts);
            let mut out = std::io::stdout().lock();
            for r in &results {
                let line = serde_json::to_string(r).map_err(|e| stdout_err(e.into()))?;
                writeln!(out, "{line}").map_err(stdout_err)?;
            }
            if results.iter().any(|r| !r.passed) {
                return Err(Failure::Checks);
            }
        }
        Command::DatasetInfo { path, zero_one_labels } => {
            print_json(&dataset_info(&path, zero_one_labels)?)?;
        }
        Command::VarianceProbe {
            config,
            k,
            batch,
            trials,
            seed,
        } => {
            let cfg = load(&config, &[])?;
            let problem = cfg.problem.build()?;
            print_json(&variance_report(&problem, k, batch, trials, seed)?)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Harness(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Checks) => ExitCode::from(2),
    }
}
