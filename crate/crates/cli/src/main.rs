use std::ffi::OsString;
use std::fs::{self, OpenOptions};
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::Serialize;

use eiv_adapt::dgp::{generate, ModelId, ModelSpec, SigmaChoice};
use eiv_adapt::io::{load_primary, load_validation, parse_key_values, save_primary, save_validation};
use eiv_adapt::mc::{
    bandwidth_sweep, gnuplot_script, power_curve, run_mc, write_csv, McConfig, McResult, McTest,
    PlotKind, ValidationSize,
};
use eiv_adapt::teststat::{evaluate, prepare};
use eiv_adapt::{BandwidthPlan, BandwidthRegime, CriticalConvention, Error, LinkFunction, RegimeRequest, TestConfig};

const EXIT_INPUT: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;

#[derive(Debug, Parser)]
#[command(
    name = "eiv-adapt",
    version,
    about = "Adaptive-to-model lack-of-fit tests for errors-in-variables single-index regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Test a parametric single-index model on primary and validation CSV files.
    Test(TestArgs),
    /// Monte Carlo size or power for one model over an a grid.
    Simulate(SimulateArgs),
    /// Monte Carlo size over a grid of bandwidth constants.
    Sweep(SweepArgs),
    /// Monte Carlo power curves over an a grid for several models.
    Powercurve(PowerArgs),
    /// Write a synthetic primary and validation dataset.
    Generate(GenerateArgs),
}

#[derive(Debug, Args)]
struct TestArgs {
    /// Primary sample CSV with header y,w1,...,wp.
    #[arg(long)]
    primary: PathBuf,
    /// Validation sample CSV with header w1,...,wp,x1,...,xp.
    #[arg(long)]
    validation: PathBuf,
    /// Null link g: linear or cubic.
    #[arg(long, default_value = "linear")]
    link: String,
    /// Significance level in (0, 0.5].
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// auto, tilde, split, small-lambda, infinite-lambda or zheng.
    #[arg(long, default_value = "auto")]
    regime: String,
    /// Bandwidth constant for h (positive).
    #[arg(long, default_value_t = 1.6)]
    c1: f64,
    /// Bandwidth constant for the calibration bandwidth v (positive).
    #[arg(long, default_value_t = 1.6)]
    c2: f64,
    /// Critical value: normal (upper-alpha quantile) or 1.65 (alpha = 0.05 only).
    #[arg(long, default_value = "normal")]
    critical: String,
    /// Append a JSON line with the full outcome to this file.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Flat key=value file supplying any of the flags above.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CellArgs {
    /// Model: H11..H19 or local_alt.
    #[arg(long, default_value = "H11")]
    model: String,
    /// Covariate dimension (at least the model's minimum).
    #[arg(long, default_value_t = 2)]
    p: usize,
    /// Primary sample size (at least 2).
    #[arg(long, default_value_t = 100)]
    n: usize,
    /// Validation sample size (at least 2); conflicts with --ratio.
    #[arg(long = "N")]
    big_n: Option<usize>,
    /// Validation size as a multiple of n (positive); default 4.
    #[arg(long)]
    ratio: Option<f64>,
    /// Covariance of X: identity or ar03.
    #[arg(long, default_value = "identity")]
    sigma: String,
    /// Variance of each measurement-error coordinate (nonnegative).
    #[arg(long, default_value_t = 0.5)]
    sigma_u: f64,
    /// Master seed.
    #[arg(long, default_value_t = 1)]
    seed: u64,
}

#[derive(Debug, Args)]
struct McArgs {
    /// Replications per cell (at least 1).
    #[arg(long, default_value_t = 500)]
    reps: usize,
    /// Comma-separated tests: split, tilde, infinite-lambda, small-lambda, zheng, auto.
    #[arg(long, value_delimiter = ',', default_value = "split")]
    tests: Vec<String>,
    /// Significance level in (0, 0.5].
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Critical value: 1.65 (alpha = 0.05 only) or normal.
    #[arg(long, default_value = "1.65")]
    critical: String,
    /// Bandwidth constant of the zheng test (positive); ignored by sweep.
    #[arg(long, default_value_t = 3.9)]
    zheng_c: f64,
    /// Bandwidth constant of the small-lambda test (positive); ignored by sweep.
    #[arg(long, default_value_t = 2.0)]
    small_lambda_c: f64,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Directory for a gnuplot script (requires --out).
    #[arg(long)]
    plots: Option<PathBuf>,
    /// Worker threads (at least 1); results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Flat key=value file supplying any of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    cell: CellArgs,
    #[command(flatten)]
    mc: McArgs,
    /// Comma-separated alternative sizes a.
    #[arg(long, value_delimiter = ',', default_value = "0")]
    a: Vec<f64>,
    /// Bandwidth constant c = c1 = c2 (positive).
    #[arg(long, default_value_t = 1.6)]
    c: f64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    #[command(flatten)]
    cell: CellArgs,
    #[command(flatten)]
    mc: McArgs,
    /// Bandwidth grid start:end:step (nonnegative).
    #[arg(long, default_value = "0:2:0.1")]
    c: String,
}

#[derive(Debug, Args)]
struct PowerArgs {
    #[command(flatten)]
    cell: CellArgs,
    #[command(flatten)]
    mc: McArgs,
    /// Comma-separated models.
    #[arg(long, value_delimiter = ',', default_value = "H16,H17,H18,H19")]
    models: Vec<String>,
    /// Comma-separated alternative sizes a.
    #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1.0")]
    a: Vec<f64>,
    /// Bandwidth constant c = c1 = c2 (positive).
    #[arg(long, default_value_t = 1.6)]
    c: f64,
}

#[derive(Debug, Args)]
struct GenerateArgs {
    #[command(flatten)]
    cell: CellArgs,
    /// Alternative size a.
    #[arg(long, default_value_t = 0.0)]
    a: f64,
    /// Primary CSV to write.
    #[arg(long)]
    out_primary: PathBuf,
    /// Validation CSV to write.
    #[arg(long)]
    out_validation: PathBuf,
    /// Flat key=value file supplying any of the flags.
    #[arg(long)]
    config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let cli = match parse_with_config(std::env::args_os().collect()) {
        Ok(cli) => cli,
        Err(Failure::Clap(e)) => e.exit(),
        Err(Failure::Core(e)) => return report_error(&e),
    };
    let result = match cli.command {
        Command::Test(args) => cmd_test(args),
        Command::Simulate(args) => cmd_simulate(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::Powercurve(args) => cmd_powercurve(args),
        Command::Generate(args) => cmd_generate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &Error) -> ExitCode {
    eprintln!("error: {e}");
    if let Error::InsufficientVariance { .. } = e {
        eprintln!("no decision: the residuals carry too little variation to standardize the statistic");
    }
    ExitCode::from(if e.is_input_error() { EXIT_INPUT } else { EXIT_NUMERICAL })
}

enum Failure {
    Clap(clap::Error),
    Core(Error),
}

/// Parses the command line, then appends flags from `--config`. A key that
/// is also given on the command line is an error.
fn parse_with_config(argv: Vec<OsString>) -> Result<Cli, Failure> {
    let matches = Cli::command().try_get_matches_from(&argv).map_err(Failure::Clap)?;
    let Some((name, sub)) = matches.subcommand() else {
        return Cli::from_arg_matches(&matches).map_err(Failure::Clap);
    };
    let Some(path) = sub.get_one::<PathBuf>("config") else {
        return Cli::from_arg_matches(&matches).map_err(Failure::Clap);
    };
    let text = fs::read_to_string(path)
        .map_err(|e| Failure::Core(Error::Io(format!("{}: {e}", path.display()))))?;
    let pairs = parse_key_values(&text).map_err(Failure::Core)?;
    let extra = config_flags(name, sub, &pairs).map_err(Failure::Core)?;
    let mut full = argv;
    full.extend(extra);
    let matches = Cli::command().try_get_matches_from(&full).map_err(Failure::Clap)?;
    Cli::from_arg_matches(&matches).map_err(Failure::Clap)
}

fn config_flags(subcommand: &str, sub: &ArgMatches, pairs: &[(String, String)]) -> Result<Vec<OsString>, Error> {
    let command = Cli::command();
    let spec = command
        .find_subcommand(subcommand)
        .expect("parsed subcommand exists");
    let mut extra = Vec::new();
    for (key, value) in pairs {
        let long = key.replace('_', "-");
        let arg = spec
            .get_arguments()
            .find(|a| a.get_long() == Some(long.as_str()))
            .filter(|a| a.get_id() != "config")
            .ok_or_else(|| {
                Error::InvalidConfig(format!("config key '{key}' is not a flag of '{subcommand}'"))
            })?;
        if sub.value_source(arg.get_id().as_str()) == Some(ValueSource::CommandLine) {
            return Err(Error::InvalidConfig(format!(
                "'{key}' is set both on the command line and in the config file"
            )));
        }
        extra.push(OsString::from(format!("--{long}")));
        extra.push(OsString::from(value));
    }
    Ok(extra)
}

fn parse_critical(s: &str) -> Result<CriticalConvention, Error> {
    match s.trim().to_ascii_lowercase().as_str() {
        "normal" | "normal-quantile" | "normal_quantile" => Ok(CriticalConvention::NormalQuantile),
        "1.65" | "literal" | "literal-1.65" => Ok(CriticalConvention::Literal165),
        other => Err(Error::InvalidConfig(format!(
            "unknown critical convention '{other}' (expected normal or 1.65)"
        ))),
    }
}

#[derive(Serialize)]
struct TestReport<'a> {
    primary: String,
    validation: String,
    link: &'a str,
    alpha: f64,
    c1: f64,
    c2: f64,
    regime_request: &'a str,
    #[serde(flatten)]
    outcome: &'a eiv_adapt::TestOutcome,
    decision: &'a str,
    rule: &'a str,
}

fn cmd_test(args: TestArgs) -> Result<(), Error> {
    let link = LinkFunction::parse(&args.link)?;
    let regime = RegimeRequest::parse(&args.regime)?;
    let critical = parse_critical(&args.critical)?;
    let plan = BandwidthPlan::new(args.c1, args.c2, BandwidthRegime::Standard)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let config = TestConfig {
        link,
        plan,
        alpha: args.alpha,
        regime,
        critical,
    };
    config.critical.critical_value(config.alpha)?;
    let primary = load_primary(&args.primary)?;
    let validation = load_validation(&args.validation, primary.p())?;
    let prepared = prepare(&primary, &validation, link)?;
    let outcome = evaluate(&primary, &validation, &prepared, &config)?;

    let decision = if outcome.reject { "reject H0" } else { "do not reject H0" };
    let rule = "reject H0 when the standardized statistic exceeds the critical value";
    let mut out = io::stdout().lock();
    let beta: Vec<String> = outcome.beta_hat.iter().map(|b| format!("{b:.6}")).collect();
    writeln!(out, "regime          {}", outcome.regime.name())?;
    writeln!(out, "lambda_hat      {:.6}", outcome.lambda_hat)?;
    writeln!(out, "q_hat           {}", outcome.q_hat)?;
    writeln!(out, "beta_hat        [{}]", beta.join(", "))?;
    writeln!(out, "h               {:.6}", outcome.h)?;
    writeln!(out, "v_N             {:.6}", outcome.v)?;
    writeln!(out, "statistic       {:.6e}", outcome.raw_statistic)?;
    writeln!(out, "scale           {:.6}", outcome.scale_factor)?;
    writeln!(out, "bias            {:.6e}", outcome.bias_hat)?;
    if let Some(nu) = outcome.nu_hat {
        writeln!(out, "nu_hat          {nu:.6e}")?;
    }
    writeln!(out, "variance        {:.6e}", outcome.variance_hat)?;
    writeln!(out, "standardized    {:.6}", outcome.standardized)?;
    writeln!(out, "critical value  {:.6}", outcome.critical_value)?;
    writeln!(out, "decision        {decision}")?;

    if let Some(path) = &args.report {
        let report = TestReport {
            primary: args.primary.display().to_string(),
            validation: args.validation.display().to_string(),
            link: link.name(),
            alpha: args.alpha,
            c1: args.c1,
            c2: args.c2,
            regime_request: regime.name(),
            outcome: &outcome,
            decision,
            rule,
        };
        let line = serde_json::to_string(&report).map_err(|e| Error::Io(e.to_string()))?;
        let mut file = OpenOptions::new()
            .create(true)
            .append(true)
            .open(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        writeln!(file, "{line}")?;
    }
    Ok(())
}

fn cell_spec(cell: &CellArgs, a: f64) -> Result<(ModelSpec, ValidationSize), Error> {
    let model: ModelId = cell.model.parse()?;
    let sigma: SigmaChoice = cell.sigma.parse()?;
    let spec = ModelSpec::new(model, cell.p, a, sigma)?.with_sigma_u(cell.sigma_u)?;
    let size = match (cell.big_n, cell.ratio) {
        (Some(_), Some(_)) => {
            return Err(Error::InvalidConfig(
                "--N and --ratio are mutually exclusive".into(),
            ))
        }
        (Some(k), None) => ValidationSize::Explicit(k),
        (None, Some(r)) => ValidationSize::Ratio(r),
        (None, None) => ValidationSize::Ratio(4.0),
    };
    Ok((spec, size))
}

fn mc_config(cell: &CellArgs, mc: &McArgs, c_grid: Vec<f64>, a_grid: Vec<f64>) -> Result<McConfig, Error> {
    let (spec, validation) = cell_spec(cell, a_grid.first().copied().unwrap_or(0.0))?;
    let mut tests = Vec::new();
    for name in &mc.tests {
        let regime = RegimeRequest::parse(name)?;
        tests.push(match regime {
            RegimeRequest::Zheng => McTest::with_c(regime, mc.zheng_c),
            RegimeRequest::SmallLambda => McTest::with_c(regime, mc.small_lambda_c),
            _ => McTest::new(regime),
        });
    }
    if mc.plots.is_some() && mc.out.is_none() {
        return Err(Error::InvalidConfig("--plots needs --out for the script to reference".into()));
    }
    Ok(McConfig {
        spec,
        n: cell.n,
        validation,
        reps: mc.reps,
        a_grid,
        c_grid,
        tests,
        alpha: mc.alpha,
        seed: cell.seed,
        critical: parse_critical(&mc.critical)?,
        workers: mc.workers,
    })
}

fn emit(result: &McResult, mc: &McArgs, kind: PlotKind, plot_name: &str) -> Result<(), Error> {
    match &mc.out {
        Some(path) => {
            let file = fs::File::create(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
            write_csv(result, io::BufWriter::new(file))?;
        }
        None => write_csv(result, io::stdout().lock())?,
    }
    if let (Some(dir), Some(out)) = (&mc.plots, &mc.out) {
        fs::create_dir_all(dir).map_err(|e| Error::Io(format!("{}: {e}", dir.display())))?;
        let script = gnuplot_script(result, &out.display().to_string(), kind);
        let path = dir.join(format!("{plot_name}.gp"));
        fs::write(&path, script).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    }
    if mc.out.is_some() {
        print_summary(result);
    }
    Ok(())
}

fn print_summary(result: &McResult) {
    println!(
        "{:<16} {:<9} {:>3} {:>5} {:>5} {:>6} {:>6} {:>6} {:>8} {:>8}",
        "test", "model", "p", "n", "N", "a", "c", "reps", "rate", "failures"
    );
    for r in &result.rows {
        println!(
            "{:<16} {:<9} {:>3} {:>5} {:>5} {:>6.3} {:>6.3} {:>6} {:>8.4} {:>8}{}",
            r.test,
            r.model,
            r.p,
            r.n,
            r.big_n,
            r.a,
            r.c,
            r.reps,
            r.reject_rate,
            r.failures,
            if r.valid() { "" } else { "  invalid" }
        );
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), Error> {
    let config = mc_config(&args.cell, &args.mc, vec![args.c], args.a.clone())?;
    let result = run_mc(&config)?;
    emit(&result, &args.mc, PlotKind::PowerVsA, "simulate")
}

fn parse_range(s: &str) -> Result<Vec<f64>, Error> {
    let bad = || Error::InvalidConfig(format!("expected start:end:step, got '{s}'"));
    let parts: Vec<f64> = s
        .split(':')
        .map(|p| p.trim().parse::<f64>().map_err(|_| bad()))
        .collect::<Result<_, _>>()?;
    let [start, end, step] = parts[..] else {
        return Err(bad());
    };
    if !(step > 0.0) || end < start || !start.is_finite() || !end.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "range '{s}' needs a positive step and end >= start"
        )));
    }
    let count = ((end - start) / step + 1e-9).floor() as usize + 1;
    Ok((0..count)
        .map(|i| ((start + i as f64 * step) * 1e9).round() / 1e9)
        .collect())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), Error> {
    let grid = parse_range(&args.c)?;
    let config = mc_config(&args.cell, &args.mc, grid, vec![0.0])?;
    let result = bandwidth_sweep(&config)?;
    emit(&result, &args.mc, PlotKind::SizeVsBandwidth, "sweep")
}

fn cmd_powercurve(args: PowerArgs) -> Result<(), Error> {
    let models: Vec<ModelId> = args.models.iter().map(|m| m.parse()).collect::<Result<_, _>>()?;
    let mut cell_p = args.cell.p;
    if let Some(first) = models.first() {
        cell_p = cell_p.max(first.min_p());
    }
    let cell = CellArgs {
        model: models.first().map_or("H16".to_string(), |m| m.name().to_string()),
        p: cell_p,
        ..args.cell
    };
    let config = mc_config(&cell, &args.mc, vec![args.c], args.a.clone())?;
    let result = power_curve(&config, &models)?;
    emit(&result, &args.mc, PlotKind::PowerVsA, "powercurve")
}

fn cmd_generate(args: GenerateArgs) -> Result<(), Error> {
    let (spec, size) = cell_spec(&args.cell, args.a)?;
    let big_n = size.resolve(args.cell.n)?;
    let data = generate(&spec, args.cell.n, big_n, args.cell.seed)?;
    save_primary(&args.out_primary, &data.primary)?;
    save_validation(&args.out_validation, &data.validation)?;
    println!(
        "wrote {} primary rows to {} and {} validation rows to {}",
        args.cell.n,
        display(&args.out_primary),
        big_n,
        display(&args.out_validation)
    );
    Ok(())
}

fn display(path: &Path) -> String {
    path.display().to_string()
}
