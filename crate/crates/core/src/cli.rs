//! Command-line front end.
//!
//! Every command is a pure function of its arguments and input bytes. Exit
//! codes: 0 on success, 1 for input or configuration errors, 2 when the
//! estimation itself fails.

use std::ffi::OsString;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::analysis::{classical_pca, tolerance_ellipse, weight_comparison, DEFAULT_ELLIPSE_LEVEL};
use crate::data::DataMatrix;
use crate::datasets::{
    generate_skewed, generate_two_cluster, load_csv, load_geyser_variant, write_csv,
    ContaminationSpec, GeyserVariant,
};
use crate::error::{Error, Result};
use crate::estimation::{
    deterministic_starts, h_for_bdp, mcd_estimate, mm_estimate, s_estimate, FitResult, McdConfig,
    MmConfig, SConfig, Starts, SubsetPool,
};
use crate::monitoring::{
    detect_transition, monitor, EstimatorKind, MmTuning, MonitoringTrace,
    DEFAULT_MM_START_BDP, DEFAULT_TRANSITION_THRESHOLD,
};
use crate::rho::{RhoFamily, RhoSpec};

/// Version of the JSON layouts written by this tool.
pub const SCHEMA_VERSION: u32 = 1;

const DEFAULT_BDP: f64 = 0.5;
const DEFAULT_A: f64 = 0.2;
const DEFAULT_EFFICIENCY: f64 = 0.95;
const DEFAULT_SEED: u64 = 1;
const DEFAULT_SUBSETS: usize = 1000;

#[derive(Parser, Debug)]
#[command(
    name = "robmon",
    version,
    about = "Robust location/scatter fits (S, MM, MCD) and tuning-parameter monitoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Fit one estimator and write its location, scatter, distances and weights.
    Fit(FitArgs),
    /// Refit along a tuning grid with one fixed set of starts.
    Monitor(MonitorArgs),
    /// Tabulate MCD distances and weights next to ρ-function weights.
    Weights(WeightsArgs),
    /// Write the boundary points of a tolerance ellipse (p = 2).
    Ellipse(EllipseArgs),
    /// Classical principal components.
    Pca(PcaArgs),
    /// Generate a synthetic dataset.
    Simulate(SimulateArgs),
}

#[derive(Args, Debug, Clone)]
struct DataArgs {
    /// Bundled dataset `geyser` (272 rows) or `geyser299` (299 rows), or a CSV path.
    #[arg(long)]
    data: String,
    /// The CSV file has no header row; columns are named x1..xp.
    #[arg(long)]
    no_header: bool,
}

#[derive(Args, Debug, Clone)]
struct StartArgs {
    /// Seed of all randomness; the subset-pool seed is derived from it [default: 1].
    #[arg(long)]
    seed: Option<u64>,
    /// `elemental:N` random (p+1)-subsets or `deterministic` starts [default: elemental:1000].
    #[arg(long)]
    starts: Option<String>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum EstimatorArg {
    S,
    Mm,
    Mcd,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum RhoArg {
    Bisquare,
    Custom,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum FormatArg {
    Csv,
    Json,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum MmTuningArg {
    Efficiency,
    Bdp,
}

#[derive(Args, Debug, Clone)]
struct EstimatorArgs {
    /// Estimator.
    #[arg(long, value_enum, default_value = "s")]
    estimator: EstimatorArg,
    /// ρ-function of the S-estimator (S only; MM always uses the bisquare) [default: bisquare].
    #[arg(long, value_enum)]
    rho: Option<RhoArg>,
    /// Breakdown value: of the bisquare S-estimator, of the S start for mm,
    /// or mapped to h = ⌈n(1 − bdp)⌉ for mcd [default: 0.5].
    #[arg(long)]
    bdp: Option<f64>,
    /// Parameter a of the custom ρ (rho custom only) [default: 0.2].
    #[arg(long)]
    a: Option<f64>,
    /// Subset size of the MCD (mcd only; excludes --bdp).
    #[arg(long)]
    h: Option<usize>,
    /// Gaussian efficiency of the MM bisquare (mm only) [default: 0.95].
    #[arg(long)]
    efficiency: Option<f64>,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    est: EstimatorArgs,
    #[command(flatten)]
    starts: StartArgs,
    /// Output file [default: standard output, with the summary line on standard error].
    #[arg(long)]
    output: Option<PathBuf>,
    /// json: the full fit; csv: obs_index,distance,weight (plus raw_weight for mcd).
    #[arg(long, value_enum, default_value = "json")]
    format: FormatArg,
}

#[derive(Args, Debug)]
struct MonitorArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Estimator swept along the grid.
    #[arg(long, value_enum, default_value = "s")]
    estimator: EstimatorArg,
    /// ρ-function for s (the grid holds bdp for bisquare, a for custom) [default: bisquare].
    #[arg(long, value_enum)]
    rho: Option<RhoArg>,
    /// Breakdown value of the bisquare S start shared by an mm sweep [default: 0.5].
    #[arg(long)]
    bdp: Option<f64>,
    /// Quantity on the grid of an mm sweep [default: efficiency].
    #[arg(long, value_enum)]
    mm_tuning: Option<MmTuningArg>,
    /// `start:step:end` (both ends included, step sign taken from the ends) or a comma list.
    #[arg(long, allow_hyphen_values = true)]
    grid: String,
    /// Relative drop of the largest distance reported as a transition.
    #[arg(long, default_value_t = DEFAULT_TRANSITION_THRESHOLD)]
    threshold: f64,
    #[command(flatten)]
    starts: StartArgs,
    /// Long-format trace CSV with columns grid_value,obs_index,distance.
    #[arg(long)]
    output: PathBuf,
    /// JSON summary [default: the output path with extension .json].
    #[arg(long)]
    summary: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct WeightsArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Breakdown value of the MCD whose distances form the first column.
    #[arg(long, default_value_t = DEFAULT_BDP)]
    bdp: f64,
    /// ρ-function to tabulate: `bisquare:BDP` or `custom:A`; repeatable
    /// [default: bisquare:0.5 and custom:0.2].
    #[arg(long = "spec")]
    specs: Vec<String>,
    #[command(flatten)]
    starts: StartArgs,
    /// Output CSV [default: standard output].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EllipseArgs {
    /// A fit written by `fit --format json`; replaces --data and the estimator flags.
    #[arg(long, conflicts_with_all = ["data", "estimator"])]
    fit: Option<PathBuf>,
    /// Bundled dataset or CSV path to fit first.
    #[arg(long)]
    data: Option<String>,
    #[arg(long)]
    no_header: bool,
    /// Estimator used with --data.
    #[arg(long, value_enum)]
    estimator: Option<EstimatorArg>,
    #[arg(long, value_enum)]
    rho: Option<RhoArg>,
    #[arg(long)]
    bdp: Option<f64>,
    #[arg(long)]
    a: Option<f64>,
    #[arg(long)]
    h: Option<usize>,
    #[arg(long)]
    efficiency: Option<f64>,
    #[command(flatten)]
    starts: StartArgs,
    /// Coverage probability; the boundary is at squared distance χ²_{2, level}.
    #[arg(long, default_value_t = DEFAULT_ELLIPSE_LEVEL)]
    level: f64,
    /// Number of boundary points.
    #[arg(long, default_value_t = 200)]
    points: usize,
    /// Output CSV with columns x,y [default: standard output].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PcaArgs {
    #[command(flatten)]
    data: DataArgs,
    /// Number of components.
    #[arg(long, default_value_t = 2)]
    k: usize,
    /// csv: scores with columns pc1..pck; json: ratios, loadings and scores.
    #[arg(long, value_enum, default_value = "csv")]
    format: FormatArg,
    /// Output file [default: standard output].
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(subcommand)]
    kind: SimulateKind,
}

#[derive(Subcommand, Debug)]
enum SimulateKind {
    /// Two Gaussian clusters laid out like the geyser data.
    TwoCluster {
        #[arg(long, default_value_t = 300)]
        n: usize,
        /// Fraction of rows in the small cluster.
        #[arg(long, default_value_t = 0.35)]
        epsilon: f64,
        /// Distance of the small cluster relative to the geyser layout (1 = as in the data).
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Data CSV [default: standard output].
        #[arg(long)]
        output: Option<PathBuf>,
        /// CSV with one column `minority` (1 for small-cluster rows).
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// A right-skewed unimodal cloud.
    Skewed {
        #[arg(long, default_value_t = 300)]
        n: usize,
        #[arg(long, default_value_t = 4)]
        p: usize,
        /// Comma-separated skew direction of length p [default: 1,1,…,1].
        #[arg(long)]
        direction: Option<String>,
        #[arg(long, default_value_t = DEFAULT_SEED)]
        seed: u64,
        /// Data CSV [default: standard output].
        #[arg(long)]
        output: Option<PathBuf>,
    },
}

/// Failure of a command, carrying its exit code.
#[derive(Debug)]
struct Failure {
    code: i32,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match e {
            Error::EstimationFailed { .. }
            | Error::Numeric(_)
            | Error::NotPositiveDefinite
            | Error::RankDeficient(_) => 2,
            _ => 1,
        };
        let mut message = e.to_string();
        if let Error::EstimationFailed { diagnostics, .. } = &e {
            for d in diagnostics.iter().take(10) {
                message.push_str("\n  ");
                message.push_str(d);
            }
        }
        Failure { code, message }
    }
}

fn config_error(message: impl Into<String>) -> Failure {
    Failure {
        code: 1,
        message: message.into(),
    }
}

type CmdResult = std::result::Result<(), Failure>;

/// Parses `args` (including the program name) and runs the command.
/// Returns the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Fit(a) => cmd_fit(a),
        Command::Monitor(a) => cmd_monitor(a),
        Command::Weights(a) => cmd_weights(a),
        Command::Ellipse(a) => cmd_ellipse(a),
        Command::Pca(a) => cmd_pca(a),
        Command::Simulate(a) => cmd_simulate(a),
    };
    match result {
        Ok(()) => 0,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

/// Seed of the subset pool for a user seed (one SplitMix64 step, so the pool
/// stream differs from a data generator run with the same seed).
pub fn pool_seed(seed: u64) -> u64 {
    let mut z = seed.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Parses `start:step:end` (inclusive within 1e-9, step sign from the ends)
/// or a comma-separated list.
pub fn parse_grid(text: &str) -> Result<Vec<f64>> {
    let num = |s: &str| {
        s.trim()
            .parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::InvalidArgument(format!("`{s}` in grid is not a number")))
    };
    let parts: Vec<&str> = text.split(':').collect();
    let grid = match parts.len() {
        1 => text.split(',').map(num).collect::<Result<Vec<f64>>>()?,
        3 => {
            let (start, step, end) = (num(parts[0])?, num(parts[1])?.abs(), num(parts[2])?);
            if step == 0.0 {
                return Err(Error::InvalidArgument("grid step must be nonzero".into()));
            }
            let span = (end - start).abs();
            let count = ((span + 1e-9) / step).floor() as usize;
            if count > 100_000 {
                return Err(Error::InvalidArgument("grid has more than 100000 points".into()));
            }
            let sign = if end >= start { 1.0 } else { -1.0 };
            (0..=count)
                .map(|i| {
                    let v = start + sign * step * i as f64;
                    (v * 1e12).round() / 1e12
                })
                .collect()
        }
        _ => {
            return Err(Error::InvalidArgument(format!(
                "grid `{text}` is neither start:step:end nor a comma list"
            )))
        }
    };
    Ok(grid)
}

fn load_data(spec: &str, no_header: bool) -> Result<DataMatrix<f64>> {
    match spec {
        "geyser" => Ok(load_geyser_variant(GeyserVariant::Faithful)),
        "geyser299" => Ok(load_geyser_variant(GeyserVariant::AzzaliniBowman)),
        path => load_csv(Path::new(path), !no_header).map_err(|e| match e {
            Error::Parse { .. } => Error::InvalidArgument(format!("{path}: {e}")),
            e => e,
        }),
    }
}

struct StartChoice {
    starts: Starts<f64>,
    seed: u64,
    pool_seed: Option<u64>,
    label: String,
}

fn build_starts(data: &DataMatrix<f64>, args: &StartArgs) -> Result<StartChoice> {
    let seed = args.seed.unwrap_or(DEFAULT_SEED);
    let text = args
        .starts
        .clone()
        .unwrap_or_else(|| format!("elemental:{DEFAULT_SUBSETS}"));
    if text == "deterministic" {
        return Ok(StartChoice {
            starts: Starts::Estimates(deterministic_starts(data)?),
            seed,
            pool_seed: None,
            label: text,
        });
    }
    let count = text
        .strip_prefix("elemental:")
        .and_then(|c| c.parse::<usize>().ok())
        .filter(|&c| c > 0)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "--starts must be elemental:N with N ≥ 1 or deterministic, got `{text}`"
            ))
        })?;
    let ps = pool_seed(seed);
    Ok(StartChoice {
        starts: Starts::Subsets(SubsetPool::elemental(data.n(), data.p(), count, ps)?),
        seed,
        pool_seed: Some(ps),
        label: text,
    })
}

/// A fully resolved single-fit request.
#[derive(Clone, Debug, Serialize)]
struct FitPlan {
    estimator: &'static str,
    rho: Option<RhoFamily>,
    bdp: Option<f64>,
    a: Option<f64>,
    h: Option<usize>,
    efficiency: Option<f64>,
}

fn resolve_fit(est: &EstimatorArgs) -> std::result::Result<FitPlan, Failure> {
    let only = |flag: &str, given: bool, allowed: bool, when: &str| {
        if given && !allowed {
            Err(config_error(format!("{flag} is only valid {when}")))
        } else {
            Ok(())
        }
    };
    let rho = est.rho.unwrap_or(RhoArg::Bisquare);
    let is = |e| est.estimator == e;
    only("--rho", est.rho.is_some(), is(EstimatorArg::S), "with --estimator s")?;
    only("--a", est.a.is_some(), is(EstimatorArg::S) && rho == RhoArg::Custom, "with --rho custom")?;
    only("--h", est.h.is_some(), is(EstimatorArg::Mcd), "with --estimator mcd")?;
    only("--efficiency", est.efficiency.is_some(), is(EstimatorArg::Mm), "with --estimator mm")?;
    only(
        "--bdp",
        est.bdp.is_some(),
        !(is(EstimatorArg::S) && rho == RhoArg::Custom) && est.h.is_none(),
        "for the bisquare, mm or mcd without --h",
    )?;
    Ok(match est.estimator {
        EstimatorArg::S => match rho {
            RhoArg::Bisquare => FitPlan {
                estimator: "s",
                rho: Some(RhoFamily::Bisquare),
                bdp: Some(est.bdp.unwrap_or(DEFAULT_BDP)),
                a: None,
                h: None,
                efficiency: None,
            },
            RhoArg::Custom => FitPlan {
                estimator: "s",
                rho: Some(RhoFamily::CustomA),
                bdp: None,
                a: Some(est.a.unwrap_or(DEFAULT_A)),
                h: None,
                efficiency: None,
            },
        },
        EstimatorArg::Mm => FitPlan {
            estimator: "mm",
            rho: Some(RhoFamily::Bisquare),
            bdp: Some(est.bdp.unwrap_or(DEFAULT_MM_START_BDP)),
            a: None,
            h: None,
            efficiency: Some(est.efficiency.unwrap_or(DEFAULT_EFFICIENCY)),
        },
        EstimatorArg::Mcd => FitPlan {
            estimator: "mcd",
            rho: None,
            bdp: if est.h.is_some() {
                None
            } else {
                Some(est.bdp.unwrap_or(DEFAULT_BDP))
            },
            a: None,
            h: est.h,
            efficiency: None,
        },
    })
}

fn execute_fit(
    data: &DataMatrix<f64>,
    plan: &mut FitPlan,
    starts: &Starts<f64>,
) -> Result<(FitResult<f64>, Option<RhoSpec<f64>>)> {
    let p = data.p();
    match plan.estimator {
        "s" => {
            let spec = match plan.rho {
                Some(RhoFamily::CustomA) => RhoSpec::custom(p, plan.a.expect("resolved"))?,
                _ => RhoSpec::bisquare_for_bdp(p, plan.bdp.expect("resolved"))?,
            };
            let fit = s_estimate(data, &spec, starts, &SConfig::default())?;
            Ok((fit, Some(spec)))
        }
        "mm" => {
            let start = RhoSpec::bisquare_for_bdp(p, plan.bdp.expect("resolved"))?;
            let s_fit = s_estimate(data, &start, starts, &SConfig::default())?;
            let spec = RhoSpec::bisquare_for_efficiency(p, plan.efficiency.expect("resolved"))?;
            let fit = mm_estimate(data, &s_fit, &spec, &MmConfig::default())?;
            Ok((fit, Some(spec)))
        }
        _ => {
            let h = match (plan.h, plan.bdp) {
                (Some(h), _) => h,
                (None, Some(b)) => {
                    if !(0.0..=0.5).contains(&b) {
                        return Err(Error::InvalidArgument(format!(
                            "MCD breakdown value must lie in [0, 0.5], got {b}"
                        )));
                    }
                    h_for_bdp(data.n(), p, b)
                }
                (None, None) => unreachable!("resolve_fit sets h or bdp"),
            };
            plan.h = Some(h);
            let fit = mcd_estimate(data, h, starts, &McdConfig::default())?;
            Ok((fit, None))
        }
    }
}

#[derive(Serialize, Deserialize)]
struct RhoJson {
    family: RhoFamily,
    param: f64,
    k_const: f64,
    breakdown_value: f64,
}

#[derive(Serialize, Deserialize)]
struct McdJson {
    h: usize,
    subset: Vec<usize>,
    raw_location: Vec<f64>,
    raw_scatter: Vec<f64>,
    raw_weights: Vec<f64>,
    consistency_factor: f64,
}

#[derive(Serialize, Deserialize)]
struct DiagnosticsJson {
    starts: String,
    starts_total: usize,
    starts_discarded: usize,
    best_start: Option<usize>,
    notes: Vec<String>,
}

#[derive(Serialize, Deserialize)]
struct FitJson {
    schema_version: u32,
    method: String,
    location: Vec<f64>,
    /// Row-major.
    scatter: Vec<f64>,
    distances: Vec<f64>,
    weights: Vec<f64>,
    objective: f64,
    log_det: f64,
    converged: bool,
    iterations: usize,
    seed: u64,
    pool_seed: Option<u64>,
    rho: Option<RhoJson>,
    mcd: Option<McdJson>,
    diagnostics: DiagnosticsJson,
}

/// The fields `ellipse --fit` needs.
#[derive(Deserialize)]
struct FitInput {
    location: Vec<f64>,
    scatter: Vec<f64>,
}

fn row_major(m: &DMatrix<f64>) -> Vec<f64> {
    m.transpose().as_slice().to_vec()
}

fn fit_json(
    fit: &FitResult<f64>,
    spec: Option<&RhoSpec<f64>>,
    choice: &StartChoice,
) -> Result<FitJson> {
    Ok(FitJson {
        schema_version: SCHEMA_VERSION,
        method: fit.method.to_string(),
        location: fit.location.as_slice().to_vec(),
        scatter: row_major(&fit.scatter),
        distances: fit.distances.as_slice().to_vec(),
        weights: fit.weights.as_slice().to_vec(),
        objective: fit.objective,
        log_det: fit.log_det,
        converged: fit.converged,
        iterations: fit.iterations,
        seed: choice.seed,
        pool_seed: choice.pool_seed,
        rho: match spec {
            Some(s) => Some(RhoJson {
                family: s.family(),
                param: s.param(),
                k_const: s.k_const(),
                breakdown_value: s.breakdown_value()?,
            }),
            None => None,
        },
        mcd: fit.mcd.as_ref().map(|m| McdJson {
            h: m.h,
            subset: m.subset.clone(),
            raw_location: m.location.as_slice().to_vec(),
            raw_scatter: row_major(&m.scatter),
            raw_weights: m.weights.as_slice().to_vec(),
            consistency_factor: m.consistency_factor,
        }),
        diagnostics: DiagnosticsJson {
            starts: choice.label.clone(),
            starts_total: fit.diagnostics.starts_total,
            starts_discarded: fit.diagnostics.starts_discarded,
            best_start: fit.diagnostics.best_start,
            notes: fit.diagnostics.notes.clone(),
        },
    })
}

fn open_output(path: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    match path {
        Some(p) => {
            let f = File::create(p).map_err(|source| Error::Io {
                path: p.clone(),
                source,
            })?;
            Ok(Box::new(BufWriter::new(f)))
        }
        None => Ok(Box::new(BufWriter::new(io::stdout()))),
    }
}

fn io_err(path: &Option<PathBuf>) -> impl Fn(io::Error) -> Error + '_ {
    move |source| Error::Io {
        path: path.clone().unwrap_or_else(|| "<stdout>".into()),
        source,
    }
}

fn write_json<S: Serialize>(value: &S, path: &Option<PathBuf>) -> Result<()> {
    let mut out = open_output(path)?;
    serde_json::to_writer_pretty(&mut out, value)
        .map_err(|e| io_err(path)(io::Error::other(e)))?;
    writeln!(out).map_err(io_err(path))?;
    out.flush().map_err(io_err(path))
}

fn cmd_fit(args: FitArgs) -> CmdResult {
    let mut plan = resolve_fit(&args.est)?;
    let data = load_data(&args.data.data, args.data.no_header)?;
    let choice = build_starts(&data, &args.starts)?;
    let (fit, spec) = execute_fit(&data, &mut plan, &choice.starts)?;
    match args.format {
        FormatArg::Json => write_json(&fit_json(&fit, spec.as_ref(), &choice)?, &args.output)?,
        FormatArg::Csv => {
            let mut out = open_output(&args.output)?;
            let e = io_err(&args.output);
            let raw = fit.mcd.as_ref().map(|m| &m.weights);
            write!(out, "obs_index,distance,weight").map_err(&e)?;
            if raw.is_some() {
                write!(out, ",raw_weight").map_err(&e)?;
            }
            writeln!(out).map_err(&e)?;
            for i in 0..data.n() {
                write!(out, "{i},{},{}", fit.distances[i], fit.weights[i]).map_err(&e)?;
                if let Some(r) = raw {
                    write!(out, ",{}", r[i]).map_err(&e)?;
                }
                writeln!(out).map_err(&e)?;
            }
            out.flush().map_err(&e)?;
        }
    }
    let line = format!(
        "method={} log_det={} converged={} iterations={} seed={} pool_seed={}",
        fit.method,
        fit.log_det,
        fit.converged,
        fit.iterations,
        choice.seed,
        choice
            .pool_seed
            .map_or_else(|| "none".to_string(), |s| s.to_string())
    );
    if args.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

#[derive(Serialize)]
struct GridPointJson {
    grid_value: f64,
    converged: bool,
    iterations: usize,
    log_det: Option<f64>,
    location: Option<Vec<f64>>,
    max_distance: Option<f64>,
    starts_fingerprint: String,
    error: Option<String>,
}

#[derive(Serialize)]
struct MonitorJson {
    schema_version: u32,
    estimator: String,
    rho: Option<RhoFamily>,
    parameter: String,
    mm_start_bdp: Option<f64>,
    seed: u64,
    pool_seed: Option<u64>,
    starts: String,
    threshold: f64,
    transition_index: Option<usize>,
    transition_value: Option<f64>,
    n_failed: usize,
    points: Vec<GridPointJson>,
}

fn monitor_json(
    trace: &MonitoringTrace<f64>,
    choice: &StartChoice,
    threshold: f64,
) -> MonitorJson {
    let transition = detect_transition(trace, threshold);
    let maxima = trace.max_distances();
    MonitorJson {
        schema_version: SCHEMA_VERSION,
        estimator: trace.estimator.to_string(),
        rho: trace.rho_family,
        parameter: trace.parameter.clone(),
        mm_start_bdp: trace.mm_start_bdp,
        seed: choice.seed,
        pool_seed: trace.pool_seed,
        starts: choice.label.clone(),
        threshold,
        transition_index: transition,
        transition_value: transition.map(|k| trace.grid[k]),
        n_failed: trace.distances.iter().filter(|d| d.is_none()).count(),
        points: trace
            .grid
            .iter()
            .zip(&trace.summaries)
            .zip(maxima)
            .map(|((&g, s), m)| GridPointJson {
                grid_value: g,
                converged: s.converged,
                iterations: s.iterations,
                log_det: s.log_det,
                location: s.location.as_ref().map(|l| l.as_slice().to_vec()),
                max_distance: m,
                starts_fingerprint: format!("{:016x}", s.starts_fingerprint),
                error: s.error.clone(),
            })
            .collect(),
    }
}

fn cmd_monitor(args: MonitorArgs) -> CmdResult {
    let rho = args.rho.unwrap_or(RhoArg::Bisquare);
    if args.rho.is_some() && args.estimator != EstimatorArg::S {
        return Err(config_error("--rho is only valid with --estimator s"));
    }
    if args.bdp.is_some() && args.estimator != EstimatorArg::Mm {
        return Err(config_error(
            "--bdp is only valid with --estimator mm (the grid carries the swept value)",
        ));
    }
    if args.mm_tuning.is_some() && args.estimator != EstimatorArg::Mm {
        return Err(config_error("--mm-tuning is only valid with --estimator mm"));
    }
    if !(args.threshold > 0.0 && args.threshold < 1.0) {
        return Err(config_error(format!(
            "--threshold must lie in (0, 1), got {}",
            args.threshold
        )));
    }
    let summary_path = args
        .summary
        .clone()
        .unwrap_or_else(|| args.output.with_extension("json"));
    if summary_path == args.output {
        return Err(config_error("--summary must differ from --output"));
    }
    let kind = match (args.estimator, rho) {
        (EstimatorArg::S, RhoArg::Bisquare) => EstimatorKind::SBisquare,
        (EstimatorArg::S, RhoArg::Custom) => EstimatorKind::SCustom,
        (EstimatorArg::Mm, _) => EstimatorKind::MM {
            start_bdp: args.bdp.unwrap_or(DEFAULT_MM_START_BDP),
            tuning: match args.mm_tuning.unwrap_or(MmTuningArg::Efficiency) {
                MmTuningArg::Efficiency => MmTuning::Efficiency,
                MmTuningArg::Bdp => MmTuning::Bdp,
            },
        },
        (EstimatorArg::Mcd, _) => EstimatorKind::Mcd,
    };
    let grid = parse_grid(&args.grid)?;
    let data = load_data(&args.data.data, args.data.no_header)?;
    let choice = build_starts(&data, &args.starts)?;
    let trace = monitor(&data, &kind, &grid, &choice.starts, &Default::default())?;

    let out_path = Some(args.output.clone());
    let mut out = open_output(&out_path)?;
    trace.write_csv(&mut out)?;
    out.flush().map_err(io_err(&out_path))?;
    let summary = monitor_json(&trace, &choice, args.threshold);
    write_json(&summary, &Some(summary_path))?;

    let ok = trace.distances.iter().filter(|d| d.is_some()).count();
    println!(
        "grid_points={} succeeded={} transition={} pool_seed={}",
        trace.len(),
        ok,
        summary
            .transition_value
            .map_or_else(|| "none".to_string(), |v| v.to_string()),
        trace
            .pool_seed
            .map_or_else(|| "none".to_string(), |s| s.to_string())
    );
    if ok == 0 {
        return Err(Failure {
            code: 2,
            message: "every grid point failed".into(),
        });
    }
    Ok(())
}

fn parse_weight_spec(text: &str, p: usize) -> Result<(String, RhoSpec<f64>)> {
    let bad = || {
        Error::InvalidArgument(format!(
            "--spec must be bisquare:BDP or custom:A, got `{text}`"
        ))
    };
    let (family, value) = text.split_once(':').ok_or_else(bad)?;
    let v: f64 = value.trim().parse().map_err(|_| bad())?;
    match family {
        "bisquare" => Ok((format!("bisquare_bdp{v}"), RhoSpec::bisquare_for_bdp(p, v)?)),
        "custom" => Ok((format!("custom_a{v}"), RhoSpec::custom(p, v)?)),
        _ => Err(bad()),
    }
}

fn cmd_weights(args: WeightsArgs) -> CmdResult {
    let data = load_data(&args.data.data, args.data.no_header)?;
    let texts = if args.specs.is_empty() {
        vec![format!("bisquare:{DEFAULT_BDP}"), format!("custom:{DEFAULT_A}")]
    } else {
        args.specs.clone()
    };
    let specs = texts
        .iter()
        .map(|t| parse_weight_spec(t, data.p()))
        .collect::<Result<Vec<_>>>()?;
    if !(0.0..=0.5).contains(&args.bdp) {
        return Err(config_error(format!(
            "--bdp must lie in [0, 0.5], got {}",
            args.bdp
        )));
    }
    let choice = build_starts(&data, &args.starts)?;
    let h = h_for_bdp(data.n(), data.p(), args.bdp);
    let fit = mcd_estimate(&data, h, &choice.starts, &McdConfig::default())?;
    let table = weight_comparison(&data, &fit, &specs)?;
    let mut out = open_output(&args.output)?;
    table.write_csv(&mut out)?;
    out.flush().map_err(io_err(&args.output))?;
    Ok(())
}

fn cmd_ellipse(args: EllipseArgs) -> CmdResult {
    let (location, scatter) = match (&args.fit, &args.data) {
        (Some(path), _) => {
            let file = File::open(path).map_err(|source| Error::Io {
                path: path.clone(),
                source,
            })?;
            let input: FitInput = serde_json::from_reader(io::BufReader::new(file))
                .map_err(|e| config_error(format!("{}: {e}", path.display())))?;
            let p = input.location.len();
            if input.scatter.len() != p * p {
                return Err(config_error(format!(
                    "{}: scatter has {} entries for a location of length {p}",
                    path.display(),
                    input.scatter.len()
                )));
            }
            (
                DVector::from_vec(input.location),
                DMatrix::from_row_slice(p, p, &input.scatter),
            )
        }
        (None, Some(spec)) => {
            let est = EstimatorArgs {
                estimator: args.estimator.unwrap_or(EstimatorArg::S),
                rho: args.rho,
                bdp: args.bdp,
                a: args.a,
                h: args.h,
                efficiency: args.efficiency,
            };
            let mut plan = resolve_fit(&est)?;
            let data = load_data(spec, args.no_header)?;
            let choice = build_starts(&data, &args.starts)?;
            let (fit, _) = execute_fit(&data, &mut plan, &choice.starts)?;
            (fit.location, fit.scatter)
        }
        (None, None) => return Err(config_error("ellipse needs --fit or --data")),
    };
    let points = tolerance_ellipse(&location, &scatter, args.level, args.points)?;
    let mut out = open_output(&args.output)?;
    let e = io_err(&args.output);
    writeln!(out, "x,y").map_err(&e)?;
    for [x, y] in points {
        writeln!(out, "{x},{y}").map_err(&e)?;
    }
    out.flush().map_err(&e)?;
    Ok(())
}

#[derive(Serialize)]
struct PcaJson {
    schema_version: u32,
    explained_variance_ratio: Vec<f64>,
    variances: Vec<f64>,
    mean: Vec<f64>,
    /// Row-major `p × k`.
    loadings: Vec<f64>,
    /// Row-major `n × k`.
    scores: Vec<f64>,
}

fn cmd_pca(args: PcaArgs) -> CmdResult {
    let data = load_data(&args.data.data, args.data.no_header)?;
    let pca = classical_pca(&data, args.k)?;
    let ratios = pca.explained_variance_ratio.as_slice().to_vec();
    match args.format {
        FormatArg::Json => write_json(
            &PcaJson {
                schema_version: SCHEMA_VERSION,
                explained_variance_ratio: ratios.clone(),
                variances: pca.variances.as_slice().to_vec(),
                mean: pca.mean.as_slice().to_vec(),
                loadings: row_major(&pca.loadings),
                scores: row_major(&pca.scores),
            },
            &args.output,
        )?,
        FormatArg::Csv => {
            let names: Vec<String> = (1..=args.k).map(|j| format!("pc{j}")).collect();
            let scores = DataMatrix::new(pca.scores.clone(), names).map_err(|_| {
                config_error("too few observations to write scores as a data table")
            })?;
            let out = open_output(&args.output)?;
            write_csv(&scores, out)?;
        }
    }
    let text: Vec<String> = ratios.iter().map(|r| r.to_string()).collect();
    let line = format!("explained_variance_ratio={}", text.join(","));
    if args.output.is_some() {
        println!("{line}");
    } else {
        eprintln!("{line}");
    }
    Ok(())
}

fn cmd_simulate(args: SimulateArgs) -> CmdResult {
    match args.kind {
        SimulateKind::TwoCluster {
            n,
            epsilon,
            separation,
            seed,
            output,
            mask,
        } => {
            if !separation.is_finite() {
                return Err(config_error("--separation must be finite"));
            }
            let spec = ContaminationSpec::geyser_like(n, epsilon, separation, seed);
            let (data, flags) = generate_two_cluster::<f64>(&spec)?;
            write_csv(&data, open_output(&output)?)?;
            if let Some(path) = &mask {
                let target = Some(path.clone());
                let mut out = open_output(&target)?;
                let e = io_err(&target);
                writeln!(out, "minority").map_err(&e)?;
                for f in &flags {
                    writeln!(out, "{}", u8::from(*f)).map_err(&e)?;
                }
                out.flush().map_err(&e)?;
            }
            let line = format!(
                "rows={} minority={} seed={seed}",
                data.n(),
                flags.iter().filter(|&&f| f).count()
            );
            if output.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
        }
        SimulateKind::Skewed {
            n,
            p,
            direction,
            seed,
            output,
        } => {
            let dir = match direction {
                Some(text) => text
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<f64>().map_err(|_| {
                            config_error(format!("`{s}` in --direction is not a number"))
                        })
                    })
                    .collect::<std::result::Result<Vec<f64>, Failure>>()?,
                None => vec![1.0; p],
            };
            let data = generate_skewed::<f64>(n, p, &dir, seed)?;
            write_csv(&data, open_output(&output)?)?;
            let line = format!("rows={} p={} seed={seed}", data.n(), data.p());
            if output.is_some() {
                println!("{line}");
            } else {
                eprintln!("{line}");
            }
        }
    }
    Ok(())
}
