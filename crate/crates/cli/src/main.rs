//! `qbss`: generate synthetic datasets, estimate the coupling, audit the
//! gradient and tabulate the log-likelihood.
//!
//! Exit codes: 0 success, 1 other failure, 2 usage, 3 no interior maximum
//! (the report is still printed), 4 dataset or output error, 5 configuration
//! error. Log verbosity is read from `QBSS_LOG` (default `warn`).

use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::{info, warn};
use qbss_core::io::{self as qio, Config, DatasetMeta, EstimateReport, GridSpec, FLOAT_FORMAT, FORMAT_VERSION};
use qbss_core::likelihood::GradientVariant;
use qbss_core::mixing::MixingParam;
use qbss_core::{datagen, estimate_v, scan, validation, EstimateError};

const DEFAULT_AUDIT_GRID: &str = "0.10:0.90:0.05";
const DEFAULT_SCAN_GRID: &str = "0.05:0.95:0.01";

#[derive(Parser)]
#[command(name = "qbss", version, about = "Coupling estimation for a nonlinear two-qubit mixing model")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded synthetic dataset and its metadata sidecar.
    Generate {
        #[command(flatten)]
        config: ConfigArg,
        /// Dataset CSV to write; the sidecar goes to `<out>.meta.json`.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the seed in the configuration.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the maximum-likelihood coupling as JSON.
    Estimate {
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[command(flatten)]
        objective: ObjectiveArgs,
    },
    /// Compare analytic gradients with finite differences of the log-likelihood.
    CheckGradient {
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = DEFAULT_AUDIT_GRID)]
        grid: GridSpec,
        #[command(flatten)]
        out: OutArg,
    },
    /// Tabulate the log-likelihood and its slope on a grid.
    Scan {
        dataset: PathBuf,
        #[command(flatten)]
        config: ConfigArg,
        #[arg(long, default_value = DEFAULT_SCAN_GRID)]
        grid: GridSpec,
        #[command(flatten)]
        objective: ObjectiveArgs,
        #[command(flatten)]
        out: OutArg,
    },
    /// Print the tool and file-format versions.
    Version,
}

#[derive(Args)]
struct ConfigArg {
    /// JSON configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Args)]
struct ObjectiveArgs {
    /// Gradient variant followed by the search.
    #[arg(long, value_parser = parse_variant)]
    gradient: Option<GradientVariant>,
    /// Drop samples that do not invert at the queried coupling.
    #[arg(long)]
    allow_exclusion: bool,
}

#[derive(Args)]
struct OutArg {
    /// Output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn parse_variant(s: &str) -> Result<GradientVariant, String> {
    s.parse()
}

/// Failure carrying its exit code.
struct Failure {
    code: u8,
    msg: String,
}

impl Failure {
    fn new(code: u8, msg: impl ToString) -> Self {
        Failure {
            code,
            msg: msg.to_string(),
        }
    }
}

const EXIT_OTHER: u8 = 1;
const EXIT_NO_INTERIOR: u8 = 3;
const EXIT_DATA: u8 = 4;
const EXIT_CONFIG: u8 = 5;

fn load_config(arg: &ConfigArg) -> Result<Config, Failure> {
    match &arg.config {
        Some(path) => Config::load(path).map_err(|e| Failure::new(EXIT_CONFIG, e)),
        None => Ok(Config::default()),
    }
}

fn load_data(path: &Path) -> Result<qbss_core::SampleSet, Failure> {
    let data = qio::load_dataset(path).map_err(|e| Failure::new(EXIT_DATA, e))?;
    info!("loaded {} samples from {}", data.len(), path.display());
    Ok(data)
}

/// Buffers output in memory so that nothing is written on failure.
fn emit(out: &OutArg, body: &[u8]) -> Result<(), Failure> {
    match &out.out {
        Some(path) => std::fs::write(path, body).map_err(|e| Failure::new(EXIT_DATA, format!("{}: {e}", path.display()))),
        None => {
            let mut stdout = io::stdout().lock();
            stdout
                .write_all(body)
                .and_then(|_| stdout.flush())
                .map_err(|e| Failure::new(EXIT_OTHER, e))
        }
    }
}

fn generate(config: &ConfigArg, out: &Path, seed: Option<u64>) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let g = cfg.generate;
    let seed = seed.unwrap_or(g.seed);
    let v_true = MixingParam::new(g.v_true).map_err(|e| Failure::new(EXIT_CONFIG, format!("generate.v_true: {e}")))?;
    let data = datagen::generate(&cfg.priors, v_true, g.n, seed).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
    let (data, dropped) = if g.noise_scale > 0.0 {
        let p = datagen::perturb(&data, g.noise_scale, g.noise_seed).map_err(|e| Failure::new(EXIT_CONFIG, e))?;
        if p.dropped > 0 {
            warn!("noise invalidated {} of {} samples", p.dropped, g.n);
        }
        (p.data, Some(p.dropped))
    } else {
        (data, None)
    };
    let meta = DatasetMeta {
        format_version: FORMAT_VERSION.into(),
        float_format: FLOAT_FORMAT.into(),
        n: data.len(),
        sample: data.meta().clone(),
        priors: Some(cfg.priors),
        noise_scale: (g.noise_scale > 0.0).then_some(g.noise_scale),
        dropped,
    };
    qio::save_dataset(out, &data, &meta).map_err(|e| Failure::new(EXIT_DATA, e))?;
    info!("wrote {} samples to {}", data.len(), out.display());
    Ok(())
}

fn search_options(cfg: &Config, objective: &ObjectiveArgs) -> qbss_core::SearchOptions {
    let mut opts = cfg.search_options();
    if let Some(g) = objective.gradient {
        opts.gradient = g;
    }
    opts.allow_exclusion |= objective.allow_exclusion;
    opts
}

fn print_json(report: &EstimateReport) -> Result<(), Failure> {
    let mut body = serde_json::to_string_pretty(report).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    body.push('\n');
    emit(&OutArg { out: None }, body.as_bytes())
}

fn estimate(dataset: &Path, config: &ConfigArg, objective: &ObjectiveArgs) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = load_data(dataset)?;
    let opts = search_options(&cfg, objective);
    match estimate_v(&data, &cfg.priors, &opts) {
        Ok(r) => {
            if r.excluded_samples > 0 {
                warn!("{} samples excluded at the estimate", r.excluded_samples);
            }
            print_json(&EstimateReport::from(&r))
        }
        Err(e) => match EstimateReport::from_error(&e) {
            Some(report) => {
                print_json(&report)?;
                Err(Failure::new(EXIT_NO_INTERIOR, e))
            }
            None => Err(match e {
                EstimateError::Options(_) => Failure::new(EXIT_CONFIG, e),
                EstimateError::Infeasible(_) | EstimateError::Evaluation(_) => Failure::new(EXIT_DATA, e),
                _ => Failure::new(EXIT_OTHER, e),
            }),
        },
    }
}

fn check_gradient(dataset: &Path, config: &ConfigArg, grid: &GridSpec, out: &OutArg) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = load_data(dataset)?;
    let singular = std::f64::consts::FRAC_1_SQRT_2;
    let exclusion = cfg.tolerances.singular_exclusion;
    let points: Vec<f64> = grid
        .points()
        .into_iter()
        .filter(|&v| v > 0.0 && v < 1.0 && (v - singular).abs() >= exclusion)
        .collect();
    if points.is_empty() {
        warn!("grid {grid:?} has no usable points; writing an empty audit");
    }
    let reports = validation::gradient_audit(&data, &cfg.priors, &points, &cfg.audit_options());
    let failed = reports.iter().filter(|r| r.error.is_some()).count();
    if failed > 0 {
        warn!("{failed} audit rows could not be evaluated");
    }
    let mut body = Vec::new();
    qio::write_audit_csv(&mut body, &reports).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    emit(out, &body)
}

fn scan_cmd(
    dataset: &Path,
    config: &ConfigArg,
    grid: &GridSpec,
    objective: &ObjectiveArgs,
    out: &OutArg,
) -> Result<(), Failure> {
    let cfg = load_config(config)?;
    let data = load_data(dataset)?;
    let opts = search_options(&cfg, objective);
    let points = scan(&data, &cfg.priors, &grid.points(), &opts).map_err(|e| match e {
        EstimateError::Grid(_) => Failure::new(EXIT_CONFIG, e),
        _ => Failure::new(EXIT_DATA, e),
    })?;
    let failed = points.iter().filter(|p| p.result.is_err()).count();
    if failed > 0 {
        warn!("{failed} of {} scan points could not be evaluated", points.len());
    }
    let mut body = Vec::new();
    qio::write_scan_csv(&mut body, &points).map_err(|e| Failure::new(EXIT_OTHER, e))?;
    emit(out, &body)
}

fn run(cli: Cli) -> Result<(), Failure> {
    match cli.command {
        Command::Generate { config, out, seed } => generate(&config, &out, seed),
        Command::Estimate {
            dataset,
            config,
            objective,
        } => estimate(&dataset, &config, &objective),
        Command::CheckGradient {
            dataset,
            config,
            grid,
            out,
        } => check_gradient(&dataset, &config, &grid, &out),
        Command::Scan {
            dataset,
            config,
            grid,
            objective,
            out,
        } => scan_cmd(&dataset, &config, &grid, &objective, &out),
        Command::Version => {
            let mut w = BufWriter::new(io::stdout().lock());
            writeln!(w, "qbss {}", env!("CARGO_PKG_VERSION"))
                .and_then(|_| writeln!(w, "dataset format {FORMAT_VERSION} ({FLOAT_FORMAT})"))
                .and_then(|_| w.flush())
                .map_err(|e| Failure::new(EXIT_OTHER, e))
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("QBSS_LOG", "warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.msg);
            ExitCode::from(f.code)
        }
    }
}
