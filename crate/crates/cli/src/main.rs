use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use metapred::bayes::EngineConfig;
use metapred::io::{self, ReportFormat};
use metapred::method::parse_method_list;
use metapred::priors::{bind_prior, PriorFamily};
use metapred::sim;
use metapred::Error;

const EXIT_USAGE: u8 = 2;
const EXIT_DATA: u8 = 3;
const EXIT_NUMERIC: u8 = 4;

const SEED_ENV: &str = "METAPRED_SEED";

/// Prediction and credible intervals for random-effects meta-analysis.
#[derive(Parser)]
#[command(name = "metapred", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute intervals for one dataset (CSV with columns study,effect,se).
    Analyze {
        #[arg(long)]
        data: PathBuf,
        /// Comma-separated method names, or `all`.
        #[arg(long, default_value = "all")]
        methods: String,
        #[arg(long, default_value_t = 0.95)]
        level: f64,
        /// json, csv or plotdata.
        #[arg(long, default_value = "json")]
        format: String,
    },
    /// Run a coverage study described by a config file.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Worker threads; defaults to the number of available cores.
        #[arg(long)]
        parallelism: Option<usize>,
        /// Output file for the coverage table; stdout if omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Inspect the heterogeneity priors.
    Priors {
        #[command(subcommand)]
        command: PriorsCommand,
    },
}

#[derive(Subcommand)]
enum PriorsCommand {
    /// List the built-in priors.
    List,
    /// Tabulate a prior's density (and CDF, if proper) over a grid of τ values.
    Density {
        #[arg(long)]
        prior: String,
        /// Dataset fixing the data-dependent constants.
        #[arg(long)]
        data: PathBuf,
        /// e.g. `[0..2 step 0.1]` or `0.1,0.5,1`.
        #[arg(long = "tau-grid")]
        tau_grid: String,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Self {
        Failure {
            code: EXIT_USAGE,
            message: message.into(),
        }
    }
}

/// Exit code for a library error raised while processing a dataset.
fn classify(e: Error) -> Failure {
    let code = match e {
        Error::Config(_) | Error::Unsupported(_) => EXIT_USAGE,
        Error::Parse { .. } | Error::InvalidInput(_) => EXIT_DATA,
        Error::NumericFailure { .. } | Error::DivergedPosterior { .. } => EXIT_NUMERIC,
    };
    Failure {
        code,
        message: e.to_string(),
    }
}

fn read_file(path: &Path, code: u8) -> Result<Vec<u8>, Failure> {
    fs::read(path).map_err(|e| Failure {
        code,
        message: format!("cannot read {}: {e}", path.display()),
    })
}

fn write_stdout(bytes: &[u8]) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    out.write_all(bytes).and_then(|_| out.flush()).map_err(|e| Failure {
        code: 1,
        message: format!("cannot write output: {e}"),
    })
}

fn load_dataset(path: &Path) -> Result<metapred::MetaDataset, Failure> {
    let bytes = read_file(path, EXIT_DATA)?;
    io::parse_dataset_csv(&bytes).map_err(|e| Failure {
        code: EXIT_DATA,
        message: format!("{}: {e}", path.display()),
    })
}

fn analyze(data: &Path, methods: &str, level: f64, format: &str) -> Result<(), Failure> {
    let format: ReportFormat = format.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let methods = parse_method_list(methods).map_err(|e| Failure::usage(e.to_string()))?;
    if !(level > 0.0 && level < 1.0) {
        return Err(Failure::usage(format!("--level must lie in (0, 1), got {level}")));
    }
    let dataset = load_dataset(data)?;
    let report = io::build_analysis_report(&dataset, &methods, level, &EngineConfig::default()).map_err(classify)?;
    write_stdout(&io::emit_analysis_report(&report, format))?;
    let failed: Vec<_> = report.failures().collect();
    for r in &failed {
        eprintln!("metapred: {} failed: {}", r.method, r.error.as_deref().unwrap_or("unknown error"));
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure {
            code: EXIT_NUMERIC,
            message: format!("{} of {} methods failed", failed.len(), report.results.len()),
        })
    }
}

fn simulate(config: &Path, parallelism: Option<usize>, out: Option<&Path>) -> Result<(), Failure> {
    let text = read_file(config, EXIT_USAGE)?;
    let mut cfg = io::parse_sim_config(&text).map_err(|e| Failure::usage(format!("{}: {e}", config.display())))?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.master_seed = seed
            .trim()
            .parse()
            .map_err(|_| Failure::usage(format!("{SEED_ENV} must be an unsigned 64-bit integer, got {seed:?}")))?;
    }
    let threads = match parallelism {
        Some(0) => return Err(Failure::usage("--parallelism must be >= 1")),
        Some(p) => p,
        None => std::thread::available_parallelism().map_or(1, |n| n.get()),
    };
    let study = sim::run_study_with_log(&cfg, threads).map_err(classify)?;
    for f in &study.failures {
        eprintln!(
            "metapred: {} failed at n={} tau2={} rep={} (seed {}): {}",
            f.method, f.scenario.n, f.scenario.tau2, f.rep, f.seed, f.message
        );
    }
    let table = io::emit_coverage_table(&study.records).map_err(classify)?;
    match out {
        Some(path) => fs::write(path, &table).map_err(|e| Failure {
            code: 1,
            message: format!("cannot write {}: {e}", path.display()),
        }),
        None => write_stdout(&table),
    }
}

fn priors_list() -> Result<(), Failure> {
    let mut text = String::from("name,proper\n");
    for f in PriorFamily::standard() {
        text.push_str(&format!("{},{}\n", f.name(), f.is_proper()));
    }
    write_stdout(text.as_bytes())
}

fn priors_density(prior: &str, data: &Path, tau_grid: &str) -> Result<(), Failure> {
    let family: PriorFamily = prior.parse().map_err(|e: Error| Failure::usage(e.to_string()))?;
    let taus = io::parse_number_list(tau_grid).map_err(|e| Failure::usage(format!("--tau-grid: {e}")))?;
    let dataset = load_dataset(data)?;
    let bound = bind_prior(family, &dataset).map_err(classify)?;
    let table = io::emit_prior_density(&bound, &taus).map_err(|e| match e {
        Error::InvalidInput(m) => Failure::usage(m),
        other => classify(other),
    })?;
    write_stdout(&table)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Analyze {
            data,
            methods,
            level,
            format,
        } => analyze(&data, &methods, level, &format),
        Command::Simulate {
            config,
            parallelism,
            out,
        } => simulate(&config, parallelism, out.as_deref()),
        Command::Priors { command } => match command {
            PriorsCommand::List => priors_list(),
            PriorsCommand::Density { prior, data, tau_grid } => priors_density(&prior, &data, &tau_grid),
        },
    }
}

fn main() -> ExitCode {
    // clap exits with status 2 on usage errors.
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("metapred: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
