//! Command-line front end. Reports are JSON documents of schema version
//! `v1` (see `schema/report.v1.json`); long tables can be written as CSV.

use std::path::PathBuf;
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};

use crate::boundary::{classify_both, BoundaryClassification};
use crate::characteristics::{builtin, BuiltinParams, DiffusionModel, ModelSpec, BUILTIN_NAMES};
use crate::regularity::{dc_check, image_window, DcReport, DcTarget, DEFAULT_DC_LEVELS};
use crate::simulate::{
    build_chain_pinned, default_truncation, evaluate_strategy, hitting_stats, martingale_test, simulate_demo_25,
    simulate_paths, summarize, EnsembleSummary, HittingStats, MartingaleReport, PathEnsemble, PayoffStats,
};
use crate::verdict::{
    c2_windows, check_invariants, demo_certificate, na_verdict_with, Certificate, Horizon, ModelAnalysis, Verdict,
};

pub const SCHEMA_VERSION: &str = "v1";
pub const SCHEMA: &str = include_str!("../schema/report.v1.json");
/// Name accepted by `simulate` and `arbitrage` for the post-hit clock demo.
pub const DEMO_MODEL: &str = "demo_post_hit_clock";
pub const THREADS_ENV: &str = "DIFFNA_THREADS";

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_INCONSISTENT: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "diffna", version, about = "No-arbitrage analysis of one-dimensional general diffusion markets")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// List the built-in models with characteristic summaries.
    Catalog(OutputArgs),
    /// Boundary classifications and dc reports for s and its inverse.
    Classify(ModelArgs),
    /// NA / ACLMM verdict with evidence and rule trace.
    Verdict(VerdictArgs),
    /// Chain Monte Carlo statistics.
    Simulate(SimArgs),
    /// Verdict, then evaluation of the arbitrage certificate if any.
    Arbitrage(SimArgs),
    /// Everything above for one model.
    Report(SimArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args)]
pub struct OutputArgs {
    /// Output file; stdout when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "json")]
    pub format: Format,
}

#[derive(Debug, Clone, Args)]
pub struct ModelArgs {
    /// Built-in name or path to a model-spec JSON file.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[command(flatten)]
    pub output: OutputArgs,
}

#[derive(Debug, Clone, Args)]
pub struct VerdictArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: f64,
    /// Positive number or "inf".
    #[arg(long)]
    pub horizon: String,
}

#[derive(Debug, Clone, Args)]
pub struct SimArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[arg(long, allow_hyphen_values = true)]
    pub x0: f64,
    #[arg(long)]
    pub horizon: String,
    #[arg(long, default_value_t = 10_000)]
    pub n_paths: usize,
    #[arg(long, default_value_t = 128)]
    pub cells: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Exit interval `a,b` for hitting statistics.
    #[arg(long, allow_hyphen_values = true)]
    pub exit: Option<String>,
    /// Stop band `a,b` for the martingale test.
    #[arg(long, allow_hyphen_values = true)]
    pub band: Option<String>,
    /// Euler step of the demo model.
    #[arg(long, default_value_t = 1e-4)]
    pub dt: f64,
}

/// Error carrying the process exit status.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub message: String,
}

impl CliError {
    fn validation(message: impl Into<String>) -> Self {
        Self { code: EXIT_VALIDATION, message: message.into() }
    }
}

fn v<E: std::fmt::Display>(e: E) -> CliError {
    CliError::validation(e.to_string())
}

/// A finished command: the text to write and the exit status.
#[derive(Debug, Clone, PartialEq)]
pub struct Outcome {
    pub text: String,
    pub code: i32,
    /// Diagnostics rather than a report.
    pub is_error: bool,
}

#[derive(Debug, Serialize)]
struct Meta {
    tool_version: &'static str,
    generated_unix_secs: u64,
}

fn envelope<T: Serialize>(command: &str, body: T) -> Result<String, CliError> {
    let meta = Meta {
        tool_version: env!("CARGO_PKG_VERSION"),
        generated_unix_secs: SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0),
    };
    let doc = json!({
        "schema_version": SCHEMA_VERSION,
        "command": command,
        "meta": meta,
        "body": body,
    });
    serde_json::to_string_pretty(&doc).map(|s| s + "\n").map_err(|e| CliError { code: 1, message: e.to_string() })
}

/// Strips the metadata field so reports can be compared byte for byte.
pub fn without_meta(report: &str) -> Result<String, serde_json::Error> {
    let mut v: Value = serde_json::from_str(report)?;
    if let Some(o) = v.as_object_mut() {
        o.remove("meta");
    }
    serde_json::to_string_pretty(&v)
}

pub fn load_model(args: &ModelArgs) -> Result<DiffusionModel, CliError> {
    let params = BuiltinParams { rho: args.rho, alpha: args.alpha, ..Default::default() };
    if BUILTIN_NAMES.contains(&args.model.as_str()) {
        return builtin(&args.model, &params).map_err(v);
    }
    let path = PathBuf::from(&args.model);
    if !path.exists() {
        return Err(CliError::validation(format!(
            "unknown model '{}': not a built-in ({}) and no such file",
            args.model,
            BUILTIN_NAMES.join(", ")
        )));
    }
    let text = std::fs::read_to_string(&path).map_err(v)?;
    let spec: ModelSpec = serde_json::from_str(&text).map_err(|e| {
        CliError::validation(format!("{}: parse error at line {}, column {}: {e}", path.display(), e.line(), e.column()))
    })?;
    DiffusionModel::from_spec(spec).map_err(|e| CliError::validation(format!("{}: {e}", path.display())))
}

fn parse_pair(s: &str, what: &str) -> Result<(f64, f64), CliError> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 2 {
        return Err(CliError::validation(format!("{what} must be 'a,b', got '{s}'")));
    }
    let a: f64 = parts[0].trim().parse().map_err(|_| CliError::validation(format!("bad {what} '{s}'")))?;
    let b: f64 = parts[1].trim().parse().map_err(|_| CliError::validation(format!("bad {what} '{s}'")))?;
    if !(a < b) {
        return Err(CliError::validation(format!("{what} needs a < b, got '{s}'")));
    }
    Ok((a, b))
}

fn finite_horizon(s: &str) -> Result<f64, CliError> {
    match s.parse::<Horizon>().map_err(CliError::validation)? {
        Horizon::Finite(t) => Ok(t),
        Horizon::Infinite => Err(CliError::validation("horizon \"inf\" is only valid for verdict")),
    }
}

#[derive(Debug, Serialize)]
pub struct CatalogEntry {
    pub name: String,
    pub spec: ModelSpec,
    pub scale_limits: (Value, Value),
    pub boundaries: Vec<BoundaryClassification>,
}

fn ext(x: f64) -> Value {
    if x.is_finite() {
        json!(x)
    } else if x > 0.0 {
        json!("inf")
    } else {
        json!("-inf")
    }
}

pub fn catalog_entries() -> Result<Vec<CatalogEntry>, CliError> {
    BUILTIN_NAMES
        .iter()
        .map(|&name| {
            let m = builtin(name, &BuiltinParams::default()).map_err(v)?;
            let (lo, hi) = m.scale().limits();
            Ok(CatalogEntry {
                name: name.to_string(),
                spec: m.to_spec(),
                scale_limits: (ext(lo), ext(hi)),
                boundaries: classify_both(&m).map_err(v)?.to_vec(),
            })
        })
        .collect()
}

#[derive(Debug, Serialize)]
pub struct Classification {
    pub model: String,
    pub boundaries: Vec<BoundaryClassification>,
    pub dc_scale: DcReport,
    pub dc_inverse: DcReport,
}

pub fn classify_model(model: &DiffusionModel) -> Result<Classification, CliError> {
    let analysis = ModelAnalysis::new(model).map_err(v)?;
    let w = c2_windows(model.interval())[0];
    let dc_inverse = dc_check(model.scale(), DcTarget::InverseScale, image_window(model.scale(), w), DEFAULT_DC_LEVELS);
    Ok(Classification {
        model: model.label().to_string(),
        boundaries: analysis.boundaries.clone(),
        dc_scale: analysis.c2_report.clone(),
        dc_inverse,
    })
}

fn verdict_checked(model: &DiffusionModel, x0: f64, horizon: Horizon) -> Result<(Verdict, Vec<String>), CliError> {
    let analysis = ModelAnalysis::new(model).map_err(v)?;
    let verdict = na_verdict_with(&analysis, x0, horizon).map_err(v)?;
    let violations = check_invariants(&verdict);
    Ok((verdict, violations))
}

#[derive(Debug, Serialize)]
pub struct SimulationReport {
    pub summary: EnsembleSummary,
    pub truncation: Option<(f64, f64)>,
    pub hitting: Option<HittingStats>,
    pub martingale: Option<MartingaleReport>,
}

/// With an exit interval the chain lives on it, so its cells resolve the
/// exit rather than the whole truncation.
fn run_ensemble(
    args: &SimArgs,
    model: Option<&DiffusionModel>,
    horizon: f64,
    seed: u64,
    exit: Option<(f64, f64)>,
) -> Result<(PathEnsemble, Option<(f64, f64)>), CliError> {
    match model {
        None => Ok((simulate_demo_25(args.x0, horizon, args.dt, args.n_paths, seed).map_err(v)?, None)),
        Some(m) => {
            let mut tr = default_truncation(m, args.x0).map_err(v)?;
            if let Some((a, b)) = exit {
                tr = (a.max(tr.0), b.min(tr.1));
            }
            let chain = build_chain_pinned(m, args.cells, tr, &[args.x0]).map_err(v)?;
            Ok((simulate_paths(&chain, args.x0, horizon, args.n_paths, seed).map_err(v)?, Some(tr)))
        }
    }
}

pub fn simulation_report(args: &SimArgs, model: Option<&DiffusionModel>, seed: u64) -> Result<SimulationReport, CliError> {
    let horizon = finite_horizon(&args.horizon)?;
    let exit = args.exit.as_deref().map(|s| parse_pair(s, "exit")).transpose()?;
    let (ens, tr) = run_ensemble(args, model, horizon, seed, exit)?;
    let hitting = match exit {
        Some((a, b)) => Some(hitting_stats(&ens, a, b).map_err(v)?),
        None => None,
    };
    let martingale = match tr {
        Some((lo, hi)) => {
            let band = match &args.band {
                Some(s) => parse_pair(s, "band")?,
                None => (0.5 * (lo + ens.x0), 0.5 * (hi + ens.x0)),
            };
            let checkpoints = [0.25 * horizon, 0.5 * horizon, horizon];
            Some(martingale_test(&ens, &checkpoints, band).map_err(v)?)
        }
        None => None,
    };
    Ok(SimulationReport { summary: summarize(&ens), truncation: tr, hitting, martingale })
}

#[derive(Debug, Serialize)]
pub struct ArbitrageReport {
    pub verdict: Option<Verdict>,
    pub certificate: Option<Certificate>,
    pub payoff: Option<PayoffStats>,
    pub note: String,
}

pub fn arbitrage_report(args: &SimArgs, model: Option<&DiffusionModel>, seed: u64) -> Result<(ArbitrageReport, Vec<String>), CliError> {
    let horizon = finite_horizon(&args.horizon)?;
    let Some(m) = model else {
        let d = demo_certificate();
        let (ens, _) = run_ensemble(args, None, horizon, seed, None)?;
        let payoff = evaluate_strategy(&ens, &d, d.admissibility_bound);
        return Ok((
            ArbitrageReport {
                verdict: None,
                certificate: Some(Certificate::Arbitrage(d)),
                payoff: Some(payoff),
                note: "post-hit clock demo; payoff is T - T0 ∧ T per path".into(),
            },
            Vec::new(),
        ));
    };
    let (verdict, violations) = verdict_checked(m, args.x0, Horizon::Finite(horizon))?;
    let (payoff, note) = match &verdict.certificate {
        Some(Certificate::Arbitrage(d)) => {
            let (ens, _) = run_ensemble(args, Some(m), horizon, seed, None)?;
            (Some(evaluate_strategy(&ens, d, d.admissibility_bound)), "arbitrage certificate evaluated on the chain ensemble".to_string())
        }
        Some(Certificate::Companion(_)) => (None, "no arbitrage certificate; companion ACLMM descriptor attached".to_string()),
        None => (None, "no constructive arbitrage certificate for this verdict".to_string()),
    };
    let certificate = verdict.certificate.clone();
    Ok((ArbitrageReport { verdict: Some(verdict), certificate, payoff, note }, violations))
}

fn emit(out: &OutputArgs, text: String, code: i32) -> Result<Outcome, CliError> {
    if let Some(p) = &out.out {
        std::fs::write(p, &text).map_err(|e| CliError { code: 1, message: format!("{}: {e}", p.display()) })?;
        return Ok(Outcome { text: String::new(), code, is_error: false });
    }
    Ok(Outcome { text, code, is_error: false })
}

fn no_csv(out: &OutputArgs, what: &str) -> Result<(), CliError> {
    if out.format == Format::Csv {
        return Err(CliError::validation(format!("csv output is not available for {what}")));
    }
    Ok(())
}

fn sim_model(args: &SimArgs) -> Result<Option<DiffusionModel>, CliError> {
    if args.model.model == DEMO_MODEL {
        Ok(None)
    } else {
        load_model(&args.model).map(Some)
    }
}

fn need_seed(args: &SimArgs) -> Result<u64, CliError> {
    args.seed.ok_or_else(|| CliError::validation("--seed is required for simulate, arbitrage and report"))
}

fn inconsistency_code(violations: &[String]) -> i32 {
    if violations.is_empty() {
        EXIT_OK
    } else {
        EXIT_INCONSISTENT
    }
}

/// Runs a parsed command.
pub fn run(cli: Cli) -> Result<Outcome, CliError> {
    match cli.command {
        Command::Catalog(out) => {
            no_csv(&out, "catalog")?;
            let text = envelope("catalog", catalog_entries()?)?;
            emit(&out, text, EXIT_OK)
        }
        Command::Classify(args) => {
            let model = load_model(&args)?;
            let c = classify_model(&model)?;
            let text = match args.output.format {
                Format::Json => envelope("classify", &c)?,
                Format::Csv => format!("# scale\n{}# inverse\n{}", c.dc_scale.to_csv(), c.dc_inverse.to_csv()),
            };
            emit(&args.output, text, EXIT_OK)
        }
        Command::Verdict(args) => {
            no_csv(&args.model.output, "verdict")?;
            let model = load_model(&args.model)?;
            let horizon: Horizon = args.horizon.parse().map_err(CliError::validation)?;
            let (verdict, violations) = verdict_checked(&model, args.x0, horizon)?;
            let text = envelope("verdict", json!({ "verdict": verdict, "invariant_violations": violations }))?;
            emit(&args.model.output, text, inconsistency_code(&violations))
        }
        Command::Simulate(args) => {
            let seed = need_seed(&args)?;
            let model = sim_model(&args)?;
            let r = simulation_report(&args, model.as_ref(), seed)?;
            let text = match args.model.output.format {
                Format::Json => envelope("simulate", &r)?,
                Format::Csv => match &r.martingale {
                    Some(m) => m.to_csv(),
                    None => return Err(CliError::validation("csv output needs a chain model")),
                },
            };
            emit(&args.model.output, text, EXIT_OK)
        }
        Command::Arbitrage(args) => {
            let seed = need_seed(&args)?;
            let model = sim_model(&args)?;
            let (r, violations) = arbitrage_report(&args, model.as_ref(), seed)?;
            let text = match args.model.output.format {
                Format::Json => envelope("arbitrage", json!({ "arbitrage": r, "invariant_violations": violations }))?,
                Format::Csv => match &r.payoff {
                    Some(p) => format!(
                        "n,min_payoff,mean,std_err,frac_positive,ci_low,ci_high,admissibility_violations\n{},{:e},{:e},{:e},{},{},{},{}\n",
                        p.n, p.min_payoff, p.mean, p.std_err, p.frac_positive, p.frac_positive_ci.0, p.frac_positive_ci.1, p.admissibility_violations
                    ),
                    None => String::from("n,min_payoff,mean,std_err,frac_positive,ci_low,ci_high,admissibility_violations\n"),
                },
            };
            emit(&args.model.output, text, inconsistency_code(&violations))
        }
        Command::Report(args) => {
            no_csv(&args.model.output, "report")?;
            let seed = need_seed(&args)?;
            let model = load_model(&args.model)?;
            let horizon = finite_horizon(&args.horizon)?;
            let classification = classify_model(&model)?;
            let (finite, mut violations) = verdict_checked(&model, args.x0, Horizon::Finite(horizon))?;
            let (infinite, more) = verdict_checked(&model, args.x0, Horizon::Infinite)?;
            violations.extend(more);
            let simulation = simulation_report(&args, Some(&model), seed)?;
            let (arbitrage, more) = arbitrage_report(&args, Some(&model), seed)?;
            violations.extend(more);
            let text = envelope(
                "report",
                json!({
                    "classify": classification,
                    "verdict_finite": finite,
                    "verdict_infinite": infinite,
                    "simulate": simulation,
                    "arbitrage": arbitrage,
                    "invariant_violations": violations,
                }),
            )?;
            emit(&args.model.output, text, inconsistency_code(&violations))
        }
    }
}

/// Parses `argv` and runs it; clap usage errors map to exit status 2.
pub fn run_args<I, T>(argv: I) -> Outcome
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_VALIDATION } else { EXIT_OK };
            return Outcome { text: e.to_string(), code, is_error: e.use_stderr() };
        }
    };
    match run(cli) {
        Ok(o) => o,
        Err(e) => Outcome { text: format!("error: {}\n", e.message), code: e.code, is_error: true },
    }
}

/// Sizes the global thread pool from `DIFFNA_THREADS` when set.
pub fn init_threads() {
    if let Some(n) = std::env::var(THREADS_ENV).ok().and_then(|s| s.parse::<usize>().ok()) {
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
}
