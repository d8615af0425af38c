//! `pmle`: fit deconvolved densities, run simulation grids and check the
//! theoretical bounds.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use log::info;

use pmle::distributions::{ErrorFamily, ErrorModel, TrueDistribution};
use pmle::evaluation::{emit_ise, emit_table, parse_scenarios, run_scenario, Scenario};
use pmle::io::{fit_report_json, read_sample, write_atomic};
use pmle::pipeline::{fit, FitConfig, LambdaMode};
use pmle::theory::run_sweeps;
use pmle::PmleError;

const THREADS_ENV: &str = "PMLE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "pmle", version, about = "Density deconvolution by penalized maximum likelihood")]
struct Cli {
    /// Worker threads (overrides PMLE_THREADS; default: available parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Estimate the latent density of a contaminated sample.
    Fit(FitArgs),
    /// Run Monte-Carlo scenarios and write the MISE table.
    Simulate(SimulateArgs),
    /// Run the randomized sweeps of every theoretical bound.
    Validate(ValidateArgs),
}

#[derive(Args, Debug)]
struct FitArgs {
    /// Single-column CSV of observations.
    #[arg(long)]
    data: PathBuf,
    /// Single-column CSV of pure-error observations.
    #[arg(long)]
    error_sample: Option<PathBuf>,
    /// Parametric error family: normal, laplace or beta.
    #[arg(long, value_parser = parse_family)]
    error_family: Option<ErrorFamily>,
    /// Scale C of the parametric error family.
    #[arg(long)]
    error_scale: Option<f64>,
    /// Fixed smoothing parameter.
    #[arg(long, conflicts_with_all = ["lambda_r", "cv"])]
    lambda: Option<f64>,
    /// Gradient ratio R of the heuristic smoothing parameter.
    #[arg(long = "lambda-R", conflicts_with = "cv")]
    lambda_r: Option<f64>,
    /// Choose the smoothing parameter by likelihood cross-validation.
    #[arg(long)]
    cv: bool,
    /// Size of the cross-validation grid.
    #[arg(long, default_value_t = 9, requires = "cv")]
    cv_grid: usize,
    /// Number of cross-validation folds.
    #[arg(long, default_value_t = 5, requires = "cv")]
    cv_folds: usize,
    /// Fixed support `l u`; disables the data-driven choice and shrinking.
    #[arg(long, num_args = 2, value_names = ["L", "U"], allow_negative_numbers = true)]
    support: Option<Vec<f64>>,
    #[arg(long)]
    subsample_size: Option<usize>,
    #[arg(long)]
    n_subsamples: Option<usize>,
    #[arg(long)]
    grid_points: Option<usize>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Output JSON file; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    /// Scenario file of `[scenario]` sections.
    #[arg(long, conflicts_with_all = ["truth", "error", "n", "c"])]
    scenarios: Option<PathBuf>,
    /// True distributions (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_truth)]
    truth: Vec<TrueDistribution>,
    /// Error families (comma separated).
    #[arg(long, value_delimiter = ',', value_parser = parse_family)]
    error: Vec<ErrorFamily>,
    /// Sample sizes (comma separated).
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    /// Error scales C (comma separated).
    #[arg(long, value_delimiter = ',')]
    c: Vec<f64>,
    /// Replicates per scenario (default for scenario files without one).
    #[arg(long, default_value_t = 100)]
    replicates: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Gradient ratio R of the heuristic smoothing parameter.
    #[arg(long = "lambda-R")]
    lambda_r: Option<f64>,
    /// MISE table CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-replicate ISE CSV.
    #[arg(long)]
    ise_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ValidateArgs {
    /// Random instances per check.
    #[arg(long, default_value_t = 100)]
    sweep_size: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

fn parse_family(s: &str) -> Result<ErrorFamily, String> {
    ErrorFamily::parse(s).map_err(|e| e.to_string())
}

fn parse_truth(s: &str) -> Result<TrueDistribution, String> {
    TrueDistribution::parse(s).map_err(|e| e.to_string())
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Failure(PmleError),
}

impl From<PmleError> for CliError {
    fn from(e: PmleError) -> Self {
        CliError::Failure(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn read_input(path: &Path, what: &str) -> Result<Vec<f64>, CliError> {
    read_sample(path).map_err(|e| usage(format!("cannot read {what} {}: {e}", path.display())))
}

fn check_output(path: &Path) -> Result<(), CliError> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    if dir.is_dir() {
        Ok(())
    } else {
        Err(usage(format!("output directory {} does not exist", dir.display())))
    }
}

fn error_model(args: &FitArgs) -> Result<ErrorModel, CliError> {
    const BOTH: &str = "specify exactly one of --error-sample or --error-family (with --error-scale)";
    match (&args.error_sample, args.error_family, args.error_scale) {
        (Some(path), None, None) => Ok(ErrorModel::empirical(&read_input(path, "error sample")?)?),
        (None, Some(family), Some(c)) => {
            if !(c > 0.0 && c.is_finite()) {
                return Err(usage(format!("--error-scale {c} must be positive")));
            }
            Ok(family.scaled(c))
        }
        (None, Some(_), None) => Err(usage("--error-family requires --error-scale")),
        (None, None, Some(_)) => Err(usage("--error-scale requires --error-family")),
        _ => Err(usage(BOTH)),
    }
}

fn cmd_fit(args: FitArgs) -> Result<(), CliError> {
    let error = error_model(&args)?;
    let y = read_input(&args.data, "data")?;
    if let Some(out) = &args.out {
        check_output(out)?;
    }
    let defaults = FitConfig::default();
    let lambda_mode = if let Some(l) = args.lambda {
        LambdaMode::Fixed(l)
    } else if args.cv {
        LambdaMode::CrossValidated {
            grid_size: args.cv_grid,
            folds: args.cv_folds,
        }
    } else {
        LambdaMode::Heuristic(args.lambda_r)
    };
    let config = FitConfig {
        lambda_mode,
        subsample_size: args.subsample_size.unwrap_or(defaults.subsample_size),
        n_subsamples: args.n_subsamples.or(defaults.n_subsamples),
        support: args.support.as_ref().map(|s| (s[0], s[1])),
        grid_points: args.grid_points.unwrap_or(defaults.grid_points),
        seed: args.seed,
        ..defaults
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let est = fit(&y, &error, &config)?;
    info!(
        "support [{:.4}, {:.4}], lambda {:.4e}, {} subsamples",
        est.support.0,
        est.support.1,
        est.diagnostics.lambda,
        est.per_subsample.len()
    );
    let mut json = fit_report_json(&est)?;
    json.push('\n');
    match &args.out {
        Some(path) => write_atomic(path, json.as_bytes())?,
        None => print!("{json}"),
    }
    Ok(())
}

fn scenarios(args: &SimulateArgs) -> Result<Vec<Scenario>, CliError> {
    if let Some(path) = &args.scenarios {
        let text = std::fs::read_to_string(path)
            .map_err(|e| usage(format!("cannot read scenario file {}: {e}", path.display())))?;
        return parse_scenarios(&text, args.replicates, args.seed).map_err(|e| usage(e.to_string()));
    }
    let missing: Vec<&str> = [
        ("--truth", args.truth.is_empty()),
        ("--error", args.error.is_empty()),
        ("--n", args.n.is_empty()),
        ("--c", args.c.is_empty()),
    ]
    .iter()
    .filter(|(_, m)| *m)
    .map(|(k, _)| *k)
    .collect();
    if !missing.is_empty() {
        return Err(usage(format!(
            "give --scenarios or all of --truth, --error, --n, --c (missing {})",
            missing.join(", ")
        )));
    }
    let mut out = Vec::new();
    for &truth in &args.truth {
        for &error in &args.error {
            for &n in &args.n {
                for &c in &args.c {
                    let s = Scenario {
                        truth,
                        error,
                        c,
                        n,
                        replicates: args.replicates,
                        seed: args.seed,
                    };
                    s.validate().map_err(|e| usage(e.to_string()))?;
                    out.push(s);
                }
            }
        }
    }
    Ok(out)
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let list = scenarios(&args)?;
    check_output(&args.out)?;
    if let Some(p) = &args.ise_out {
        check_output(p)?;
    }
    let config = FitConfig {
        lambda_mode: LambdaMode::Heuristic(args.lambda_r),
        ..FitConfig::default()
    };
    config.validate().map_err(|e| usage(e.to_string()))?;
    let mut results = Vec::with_capacity(list.len());
    for s in &list {
        results.push(run_scenario(s, &config)?);
    }
    emit_table(&results, &args.out)?;
    if let Some(p) = &args.ise_out {
        emit_ise(&results, p)?;
    }
    Ok(())
}

fn cmd_validate(args: ValidateArgs) -> Result<bool, CliError> {
    if args.sweep_size == 0 {
        return Err(usage("--sweep-size must be at least 1"));
    }
    let reports = run_sweeps(args.sweep_size, args.seed)?;
    let mut all = true;
    for r in &reports {
        all &= r.all_passed();
        println!(
            "{} {:<22} {}/{} worst margin {:.3e}",
            if r.all_passed() { "PASS" } else { "FAIL" },
            r.name,
            r.passed,
            r.instances,
            r.worst_margin
        );
    }
    Ok(all)
}

fn thread_count(flag: Option<usize>) -> Result<Option<usize>, CliError> {
    if let Some(t) = flag {
        return Ok(Some(t));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| usage(format!("{THREADS_ENV}='{v}' is not a thread count"))),
        Err(_) => Ok(None),
    }
}

fn run(cli: Cli) -> Result<bool, CliError> {
    if let Some(t) = thread_count(cli.threads)? {
        if t == 0 {
            return Err(usage("thread count must be at least 1"));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build_global()
            .map_err(|e| usage(format!("cannot configure {t} threads: {e}")))?;
    }
    match cli.command {
        Command::Fit(a) => cmd_fit(a).map(|_| true),
        Command::Simulate(a) => cmd_simulate(a).map(|_| true),
        Command::Validate(a) => cmd_validate(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Failure(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
