//! Run configuration, execution and report writing for the `jetsolve` binary.
//!
//! Exit codes: 0 success, 1 a lemma check failed, 2 no convergence,
//! 3 configuration error, 4 oracle failure.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::error::{Error, Result};
use crate::grid::{DEFAULT_PAIR_CAP, DEFAULT_PAIR_SEED};
use crate::kobayashi::{estimate, KobayashiQuery};
use crate::lemmas::run_suite;
use crate::par;
use crate::picard::{picard_solve, SolveConfig, SolveReport};
use crate::reduce::{check_ellipticity, reduce, JetSpec, PoissonSystem};
use crate::systems::{SystemRegistry, TargetManifold};

pub const SCHEMA_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_LEMMA_FAILED: i32 = 1;
pub const EXIT_NO_CONVERGENCE: i32 = 2;
pub const EXIT_CONFIG: i32 = 3;
pub const EXIT_ORACLE: i32 = 4;

#[derive(Debug, Parser)]
#[command(name = "jetsolve", version, about = "Local solutions of quasi-linear elliptic systems with a prescribed 1-jet")]
pub struct Cli {
    /// Worker threads, 0 picks automatically. Falls back to JETSOLVE_THREADS.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Solve the system described by a JSON config; `--key value` pairs override config keys.
    Solve {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
    /// Run the norm-inequality and potential sweeps.
    VerifyLemmas {
        #[arg(long, default_value_t = 0.5)]
        alpha: f64,
        #[arg(long = "R", default_value_t = 1.0)]
        radius: f64,
        #[arg(long, default_value_t = 2)]
        n: usize,
        #[arg(long, default_value_t = 21)]
        res: usize,
        #[arg(long, default_value_t = DEFAULT_PAIR_SEED)]
        seed: u64,
        #[arg(long = "pair_cap", alias = "pair-cap", default_value_t = DEFAULT_PAIR_CAP)]
        pair_cap: usize,
        /// Directory for report.json.
        #[arg(long, default_value = ".")]
        out: PathBuf,
    },
    /// Upper-bound the Kobayashi metric for the `kobayashi` block of a config.
    Kobayashi {
        config: PathBuf,
        #[arg(trailing_var_arg = true, allow_hyphen_values = true)]
        overrides: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SystemSpec {
    pub name: String,
    pub params: Value,
}

impl Default for SystemSpec {
    fn default() -> Self {
        SystemSpec {
            name: "laplace".into(),
            params: Value::Object(Map::new()),
        }
    }
}

/// Empty arrays stand for zeros.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct JetConfig {
    pub c0: Vec<f64>,
    pub c1: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub report: String,
    pub field: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig {
            dir: PathBuf::from("."),
            report: "report.json".into(),
            field: "field.csv".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KobayashiConfig {
    pub target: String,
    pub m: usize,
    pub p: Vec<f64>,
    #[serde(rename = "X")]
    pub x: Vec<f64>,
    pub r_start: f64,
    pub growth: f64,
    pub max_steps: usize,
    pub conformality_tol: f64,
}

impl Default for KobayashiConfig {
    fn default() -> Self {
        KobayashiConfig {
            target: "hyperbolic".into(),
            m: 2,
            p: vec![0.0, 0.0],
            x: vec![0.0, 0.0],
            r_start: 0.25,
            growth: 1.5,
            max_steps: 8,
            conformality_tol: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub system: SystemSpec,
    pub n: usize,
    pub m: Option<usize>,
    pub jet: JetConfig,
    #[serde(flatten)]
    pub solver: SolveConfig,
    pub output: OutputConfig,
    pub kobayashi: Option<KobayashiConfig>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            system: SystemSpec::default(),
            n: 2,
            m: None,
            jet: JetConfig::default(),
            solver: SolveConfig::default(),
            output: OutputConfig::default(),
            kobayashi: None,
        }
    }
}

/// Sets `path` (dot-separated) in a JSON object, creating objects on the way.
pub fn set_path(root: &mut Value, path: &str, value: Value) -> Result<()> {
    let mut cur = root;
    let parts: Vec<&str> = path.split('.').collect();
    for (k, part) in parts.iter().enumerate() {
        if part.is_empty() {
            return Err(Error::config(path, "empty key segment"));
        }
        let obj = cur
            .as_object_mut()
            .ok_or_else(|| Error::config(parts[..k].join("."), "not an object"))?;
        if k + 1 == parts.len() {
            obj.insert(part.to_string(), value);
            return Ok(());
        }
        cur = obj
            .entry(part.to_string())
            .or_insert_with(|| Value::Object(Map::new()));
    }
    unreachable!("split yields at least one segment")
}

/// `--key value` and `--key=value` pairs. Values parse as JSON when they
/// can and are taken as strings otherwise.
pub fn parse_overrides(args: &[String]) -> Result<Vec<(String, Value)>> {
    let mut out = Vec::new();
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let key = a
            .strip_prefix("--")
            .ok_or_else(|| Error::config(a.as_str(), "expected `--key value`"))?;
        let (key, raw) = match key.split_once('=') {
            Some((k, v)) => (k.to_string(), v.to_string()),
            None => {
                let v = it
                    .next()
                    .ok_or_else(|| Error::config(key, "missing value"))?;
                (key.to_string(), v.clone())
            }
        };
        let value = serde_json::from_str(&raw).unwrap_or(Value::String(raw));
        out.push((key, value));
    }
    Ok(out)
}

fn json_error_field(e: &serde_json::Error) -> String {
    let msg = e.to_string();
    // serde names the field in backticks for unknown/missing fields
    msg.split('`').nth(1).unwrap_or("config").to_string()
}

/// Reads a config file and applies overrides. Unknown top-level keys and
/// malformed values are reported with the key that caused them.
pub fn load_config(path: &Path, overrides: &[(String, Value)]) -> Result<RunConfig> {
    let text = fs::read_to_string(path).map_err(|e| Error::config("config", format!("{}: {e}", path.display())))?;
    let mut value: Value =
        serde_json::from_str(&text).map_err(|e| Error::config("config", format!("not valid JSON: {e}")))?;
    if !value.is_object() {
        return Err(Error::config("config", "top level must be an object"));
    }
    for (k, v) in overrides {
        set_path(&mut value, k, v.clone())?;
    }
    resolve_config(value)
}

pub fn resolve_config(value: Value) -> Result<RunConfig> {
    let known = serde_json::to_value(RunConfig::default())?;
    let known = known.as_object().expect("struct serializes to an object");
    if let Some(obj) = value.as_object() {
        for key in obj.keys() {
            if !known.contains_key(key) {
                return Err(Error::config(key.as_str(), "unknown key"));
            }
        }
    }
    let mut cfg: RunConfig = serde_json::from_value(value).map_err(|e| Error::config(json_error_field(&e), e.to_string()))?;
    cfg.solver.r_min = Some(cfg.solver.r_min());
    cfg.solver.validate()?;
    if !(2..=3).contains(&cfg.n) {
        return Err(Error::config("n", format!("must be 2 or 3, got {}", cfg.n)));
    }
    Ok(cfg)
}

fn jet_from_config(jet: &JetConfig, m: usize, n: usize) -> Result<JetSpec> {
    let c0 = if jet.c0.is_empty() {
        DVector::zeros(m)
    } else if jet.c0.len() == m {
        DVector::from_vec(jet.c0.clone())
    } else {
        return Err(Error::config("jet.c0", format!("expected {m} entries, got {}", jet.c0.len())));
    };
    let c1 = if jet.c1.is_empty() {
        DMatrix::zeros(m, n)
    } else if jet.c1.len() == m && jet.c1.iter().all(|r| r.len() == n) {
        DMatrix::from_fn(m, n, |a, i| jet.c1[a][i])
    } else {
        return Err(Error::config("jet.c1", format!("expected {m} rows of {n} entries")));
    };
    if c0.iter().chain(c1.iter()).any(|v| !v.is_finite()) {
        return Err(Error::config("jet", "non-finite entry"));
    }
    Ok(JetSpec { c0, c1 })
}

/// Builds the system, checks ellipticity on its sample box and reduces it.
pub fn prepare_system(cfg: &RunConfig, registry: &SystemRegistry) -> Result<PoissonSystem> {
    let system = registry.build(&cfg.system.name, cfg.n, &cfg.system.params)?;
    if let Some(m) = cfg.m {
        if m != system.m {
            return Err(Error::config("m", format!("system `{}` has {} components", system.name, system.m)));
        }
    }
    check_ellipticity(&system, 1000, cfg.solver.seed)?;
    let jet = jet_from_config(&cfg.jet, system.m, system.n)?;
    reduce(&system, &jet)
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::NoConvergence { .. } | Error::IterateEscaped { .. } => EXIT_NO_CONVERGENCE,
        Error::OracleFailure { .. } | Error::NonFinite(_) | Error::SingularKernel => EXIT_ORACLE,
        _ => EXIT_CONFIG,
    }
}

fn metadata(start: Instant) -> Value {
    let ts = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0);
    json!({
        "timestamp_unix": ts,
        "elapsed_seconds": start.elapsed().as_secs_f64(),
        "threads": threads_in_use(),
        "parallel": par::is_parallel(),
    })
}

fn threads_in_use() -> usize {
    #[cfg(feature = "parallel")]
    {
        if par::is_parallel() {
            return rayon::current_num_threads();
        }
    }
    1
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

/// `x1..xn,u1..um,residual`, one row per node in original coordinates.
/// The residual is `NaN` off the interior.
pub fn field_csv(sys: &PoissonSystem, report: &SolveReport) -> String {
    let mut s = String::new();
    let cols: Vec<String> = (1..=sys.n)
        .map(|i| format!("x{i}"))
        .chain((1..=sys.m).map(|a| format!("u{a}")))
        .chain(std::iter::once("residual".to_string()))
        .collect();
    s.push_str(&cols.join(","));
    s.push('\n');
    for ((x, u), r) in report.original_rows(sys).into_iter().zip(&report.residual_field) {
        let row: Vec<String> = x
            .iter()
            .chain(u.iter())
            .map(|v| format!("{v:?}"))
            .chain(std::iter::once(format!("{:?}", r.unwrap_or(f64::NAN))))
            .collect();
        s.push_str(&row.join(","));
        s.push('\n');
    }
    s
}

/// The deterministic part of a solve report, without `metadata`.
pub fn solve_report_value(cfg: &RunConfig, outcome: &Result<SolveReport>) -> Result<Value> {
    let mut v = json!({
        "schema": SCHEMA_VERSION,
        "command": "solve",
        "config": serde_json::to_value(cfg)?,
    });
    match outcome {
        Ok(rep) => {
            v["status"] = json!("converged");
            v["grid"] = serde_json::to_value(&rep.grid)?;
            v["pair_count"] = json!(rep.pair_count);
            v["result"] = serde_json::to_value(rep)?;
        }
        Err(e) => {
            v["status"] = json!(match e {
                Error::IterateEscaped { .. } => "escaped",
                Error::NoConvergence { .. } => "no_convergence",
                _ => "failed",
            });
            v["error"] = json!(e.to_string());
        }
    }
    Ok(v)
}

fn run_solve(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let sys = prepare_system(cfg, &SystemRegistry::with_builtins())?;
    let outcome = match picard_solve(&sys, &cfg.solver) {
        Err(e) if exit_code(&e) != EXIT_NO_CONVERGENCE => return Err(e),
        other => other,
    };
    fs::create_dir_all(&cfg.output.dir)?;
    let mut report = solve_report_value(cfg, &outcome)?;
    report["metadata"] = metadata(start);
    write_json(&cfg.output.dir.join(&cfg.output.report), &report)?;
    match outcome {
        Ok(rep) => {
            fs::write(cfg.output.dir.join(&cfg.output.field), field_csv(&sys, &rep))?;
            eprintln!(
                "converged at R = {} in {} iterations, residual {:e}",
                rep.radius, rep.iterations, rep.residual
            );
            Ok(EXIT_OK)
        }
        Err(e) => {
            eprintln!("error: {e}");
            Ok(exit_code(&e))
        }
    }
}

fn run_kobayashi(cfg: &RunConfig) -> Result<i32> {
    let start = Instant::now();
    let k = cfg
        .kobayashi
        .clone()
        .ok_or_else(|| Error::config("kobayashi", "missing `kobayashi` block"))?;
    let target = TargetManifold::by_name(&k.target, k.m).map_err(|_| Error::config("kobayashi.target", format!("unknown target `{}`", k.target)))?;
    let query = KobayashiQuery {
        target,
        p: DVector::from_vec(k.p.clone()),
        x: DVector::from_vec(k.x.clone()),
        r_start: k.r_start,
        growth: k.growth,
        max_steps: k.max_steps,
        conformality_tol: k.conformality_tol,
        solve: cfg.solver.clone(),
    };
    let est = estimate(&query).map_err(|e| match e {
        Error::InvalidConfig { field, message } => Error::config(format!("kobayashi.{field}"), message),
        other => other,
    })?;
    fs::create_dir_all(&cfg.output.dir)?;
    let report = json!({
        "schema": SCHEMA_VERSION,
        "command": "kobayashi",
        "config": serde_json::to_value(cfg)?,
        "status": if est.upper_bound.is_some() { "ok" } else { "inconclusive" },
        "result": serde_json::to_value(&est)?,
        "metadata": metadata(start),
    });
    write_json(&cfg.output.dir.join(&cfg.output.report), &report)?;
    match est.upper_bound {
        Some(b) => eprintln!("K(p, X) <= {b}"),
        None => eprintln!("inconclusive: no radius in the schedule succeeded"),
    }
    Ok(EXIT_OK)
}

#[allow(clippy::too_many_arguments)]
fn run_verify(alpha: f64, radius: f64, n: usize, res: usize, seed: u64, pair_cap: usize, out: &Path) -> Result<i32> {
    let start = Instant::now();
    if !(radius > 0.0 && radius.is_finite()) {
        return Err(Error::config("R", format!("must be positive, got {radius}")));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha", format!("must lie in (0, 1), got {alpha}")));
    }
    if !(2..=3).contains(&n) {
        return Err(Error::config("n", format!("must be 2 or 3, got {n}")));
    }
    if res < 5 || res.is_multiple_of(2) {
        return Err(Error::config("res", format!("must be odd and at least 5, got {res}")));
    }
    let suite = run_suite(n, radius, alpha, res, seed, pair_cap)?;
    fs::create_dir_all(out)?;
    let report = json!({
        "schema": SCHEMA_VERSION,
        "command": "verify-lemmas",
        "status": if suite.all_pass() { "pass" } else { "fail" },
        "result": serde_json::to_value(&suite)?,
        "metadata": metadata(start),
    });
    write_json(&out.join("report.json"), &report)?;
    for l in &suite.lemmas {
        eprintln!("[{}] {} ({} checked)", if l.pass { "PASS" } else { "FAIL" }, l.name, l.checked);
    }
    Ok(if suite.all_pass() { EXIT_OK } else { EXIT_LEMMA_FAILED })
}

type Overrides = Vec<(String, Value)>;

fn split_threads(overrides: Overrides) -> Result<(Option<usize>, Overrides)> {
    let mut threads = None;
    let mut rest = Vec::new();
    for (k, v) in overrides {
        if k == "threads" {
            threads = Some(
                v.as_u64()
                    .ok_or_else(|| Error::config("threads", "expected a non-negative integer"))? as usize,
            );
        } else {
            rest.push((k, v));
        }
    }
    Ok((threads, rest))
}

fn configure_threads(flag: Option<usize>) -> Result<()> {
    let threads = match flag {
        Some(t) => t,
        None => match std::env::var("JETSOLVE_THREADS") {
            Ok(s) => s
                .trim()
                .parse()
                .map_err(|_| Error::config("JETSOLVE_THREADS", format!("not an integer: `{s}`")))?,
            Err(_) => 0,
        },
    };
    par::init_threads(threads);
    Ok(())
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Solve { config, overrides } => {
            let (t, rest) = split_threads(parse_overrides(&overrides)?)?;
            configure_threads(t.or(cli.threads))?;
            let cfg = load_config(&config, &rest)?;
            run_solve(&cfg)
        }
        Command::Kobayashi { config, overrides } => {
            let (t, rest) = split_threads(parse_overrides(&overrides)?)?;
            configure_threads(t.or(cli.threads))?;
            let cfg = load_config(&config, &rest)?;
            run_kobayashi(&cfg)
        }
        Command::VerifyLemmas {
            alpha,
            radius,
            n,
            res,
            seed,
            pair_cap,
            out,
        } => {
            configure_threads(cli.threads)?;
            run_verify(alpha, radius, n, res, seed, pair_cap, &out)
        }
    }
}

/// Parses arguments, runs the command and returns the process exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    match dispatch(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}
