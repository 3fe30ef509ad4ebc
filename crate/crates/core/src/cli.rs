//! The `ntz` command line: simulation paths, closed-form reports, grids and the verification suite.
//!
//! Exit codes: 0 success, 1 verification or data failure, 2 usage error.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Map, Value};

use crate::closed_forms::{
    constrained_second_derivative, grad_k_at0, grad_survival_at0, hess_k_at0, hess_survival_at0, k_axis,
    lagrange_lambda, survival_at0, GradPair, HessTriple, MAX_ETA,
};
use crate::error::{Error, Result};
use crate::gaussian::RngStream;
use crate::optimizer::improvement_table;
use crate::process::{gen_path, ModelParams, MAX_ALPHA};
use crate::solver::{contour_grid, SolverConfig, MAX_SOLVER_ETA};
use crate::verify::{run_all, GateStatus, VerifyConfig};

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_USAGE: i32 = 2;
pub const DEFAULT_SEED: u64 = 20_240_601;
/// Share of contour cells that must solve for a zero exit.
pub const CONTOUR_OK_SHARE: f64 = 0.9;

#[derive(Debug, Parser)]
#[command(name = "ntz", version, about = "Hysteresis no-trade-zone model toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate one path; CSV columns t,x,x_smooth,y,w.
    Simulate(SimulateArgs),
    /// Closed-form K, H, their derivatives and the multiplier at alpha = 0, as JSON.
    Analytic(AnalyticArgs),
    /// Solver H on a grid; CSV columns alpha,eta,H,status.
    Contour(ContourArgs),
    /// Run the cross-validation gates; exits 1 if any gate fails.
    Verify(VerifyArgs),
    /// Improvement ratio on a grid; CSV columns alpha,eta,R.
    Improvement(ImprovementArgs),
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, env = "SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct AnalyticArgs {
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    #[arg(long)]
    eta: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GridArgs {
    #[arg(long)]
    alpha_min: f64,
    #[arg(long)]
    alpha_max: f64,
    #[arg(long)]
    alpha_steps: usize,
    #[arg(long)]
    eta_min: f64,
    #[arg(long)]
    eta_max: f64,
    #[arg(long)]
    eta_steps: usize,
}

#[derive(Debug, Args)]
struct ContourArgs {
    #[command(flatten)]
    grid: GridArgs,
    /// Odd number of solver nodes per cell.
    #[arg(long, default_value_t = 2001)]
    n_grid: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ImprovementArgs {
    #[command(flatten)]
    grid: GridArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// Correlation level c of the traced curve; defaults to 2 rho f(1).
    #[arg(long)]
    level: Option<f64>,
    #[arg(long, default_value_t = 0.1)]
    rho: f64,
    /// Monte Carlo budget multiplier.
    #[arg(long, default_value_t = 1.0)]
    budget: f64,
    /// Agreement band in standard errors, within [2, 6].
    #[arg(long, default_value_t = 3.0)]
    z: f64,
    #[arg(long, env = "SEED", default_value_t = DEFAULT_SEED)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Provenance record written next to (or inside) every output.
#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub params: BTreeMap<String, String>,
    pub master_seed: Option<u64>,
    pub version: String,
    pub wall_time_s: f64,
    pub errors: Vec<String>,
}

impl RunManifest {
    fn new(command: &str, params: &[(&str, String)], master_seed: Option<u64>) -> Self {
        Self {
            command: command.into(),
            params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
            master_seed,
            version: env!("CARGO_PKG_VERSION").into(),
            wall_time_s: 0.0,
            errors: Vec::new(),
        }
    }
}

/// Shortest decimal that round-trips to the same `f64`.
pub fn num(x: f64) -> String {
    format!("{x:?}")
}

/// `n` evenly spaced values from `lo` to `hi`; a single step yields `lo`.
pub fn linspace(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![lo],
        _ => (0..n).map(|i| if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 }).collect(),
    }
}

enum Outcome {
    Ok,
    Failed(String),
}

struct Usage(String);

impl From<Error> for Usage {
    fn from(e: Error) -> Self {
        Usage(e.to_string())
    }
}

/// Run the CLI on `args` (program name first), writing data to `stdout` when no `--out` is given.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let rendered = e.render().to_string();
            let _ = if code == EXIT_OK {
                stdout.write_all(rendered.as_bytes())
            } else {
                stderr.write_all(rendered.as_bytes())
            };
            return code;
        }
    };
    let started = Instant::now();
    let result = match cli.command {
        Command::Simulate(a) => simulate(a, started, stdout, stderr),
        Command::Analytic(a) => analytic(a, started, stdout),
        Command::Contour(a) => contour(a, started, stdout, stderr),
        Command::Verify(a) => verify(a, started, stdout, stderr),
        Command::Improvement(a) => improvement(a, started, stdout, stderr),
    };
    match result {
        Ok(Outcome::Ok) => EXIT_OK,
        Ok(Outcome::Failed(msg)) => {
            let _ = writeln!(stderr, "error: {msg}");
            EXIT_FAILURE
        }
        Err(Usage(msg)) => {
            let _ = writeln!(stderr, "usage error: {msg}");
            EXIT_USAGE
        }
    }
}

fn sidecar(out: &Path) -> PathBuf {
    let mut name = out.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

fn io_failure(path: &Path, e: std::io::Error) -> Usage {
    Usage(format!("cannot write {}: {e}", path.display()))
}

/// CSV goes to `out` with a manifest sidecar, or to stdout with the manifest on stderr.
fn emit_csv(
    csv: &str,
    out: Option<&Path>,
    mut manifest: RunManifest,
    started: Instant,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> std::result::Result<(), Usage> {
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    let meta = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
    match out {
        Some(path) => {
            std::fs::write(path, csv).map_err(|e| io_failure(path, e))?;
            let side = sidecar(path);
            std::fs::write(&side, meta + "\n").map_err(|e| io_failure(&side, e))?;
        }
        None => {
            stdout.write_all(csv.as_bytes()).map_err(|e| Usage(e.to_string()))?;
            let _ = writeln!(stderr, "{meta}");
        }
    }
    Ok(())
}

/// JSON reports carry their manifest under the `"manifest"` key.
fn emit_json(
    mut body: Map<String, Value>,
    out: Option<&Path>,
    mut manifest: RunManifest,
    started: Instant,
    stdout: &mut dyn Write,
) -> std::result::Result<(), Usage> {
    manifest.wall_time_s = started.elapsed().as_secs_f64();
    body.insert("manifest".into(), serde_json::to_value(&manifest).expect("manifest serializes"));
    let text = serde_json::to_string_pretty(&Value::Object(body)).expect("report serializes") + "\n";
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| io_failure(path, e)),
        None => stdout.write_all(text.as_bytes()).map_err(|e| Usage(e.to_string())),
    }
}

fn simulate(
    a: SimulateArgs,
    started: Instant,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> std::result::Result<Outcome, Usage> {
    let params = ModelParams::new(a.rho, a.alpha, a.eta)?;
    let path = gen_path(&params, a.steps, &RngStream::new(a.seed, 0))?;
    let mut csv = String::from("t,x,x_smooth,y,w\n");
    for t in 0..path.len() {
        let _ = writeln!(csv, "{t},{},{},{},{}", num(path.x[t]), num(path.x_smooth[t]), num(path.y[t]), path.w[t]);
    }
    let manifest = RunManifest::new(
        "simulate",
        &[
            ("rho", num(a.rho)),
            ("alpha", num(a.alpha)),
            ("eta", num(a.eta)),
            ("steps", a.steps.to_string()),
            ("burn_in", path.burn_in.to_string()),
        ],
        Some(a.seed),
    );
    emit_csv(&csv, a.out.as_deref(), manifest, started, stdout, stderr)?;
    Ok(Outcome::Ok)
}

fn grad_json(g: &GradPair) -> Value {
    json!({ "d_alpha": num(g.d_alpha), "d_eta": num(g.d_eta) })
}

fn hess_json(h: &HessTriple) -> Value {
    json!({ "d_alpha_alpha": num(h.d_aa), "d_alpha_eta": num(h.d_ae), "d_eta_eta": num(h.d_ee) })
}

fn analytic(a: AnalyticArgs, started: Instant, stdout: &mut dyn Write) -> std::result::Result<Outcome, Usage> {
    let (rho, eta) = (a.rho, a.eta);
    let mut body = Map::new();
    body.insert("rho".into(), num(rho).into());
    body.insert("eta".into(), num(eta).into());
    body.insert("K_axis".into(), num(k_axis(eta, rho)?).into());
    body.insert("grad_K".into(), grad_json(&grad_k_at0(eta, rho)?));
    body.insert("hess_K".into(), hess_json(&hess_k_at0(eta, rho)?));
    body.insert("H".into(), num(survival_at0(eta)?).into());
    body.insert("grad_H".into(), grad_json(&grad_survival_at0(eta)?));
    body.insert("hess_H".into(), hess_json(&hess_survival_at0(eta)?));
    let mut manifest = RunManifest::new("analytic", &[("rho", num(rho)), ("eta", num(eta))], None);
    for (key, value) in [
        ("lambda", lagrange_lambda(eta, rho)),
        ("constrained_second_derivative", constrained_second_derivative(eta, rho)),
    ] {
        match value {
            Ok(v) => {
                body.insert(key.into(), num(v).into());
            }
            Err(e @ Error::Singularity(_)) => {
                body.insert(key.into(), Value::Null);
                body.insert(format!("{key}_reason"), e.to_string().into());
                manifest.errors.push(format!("{key}: {e}"));
            }
            Err(e) => return Err(e.into()),
        }
    }
    emit_json(body, a.out.as_deref(), manifest, started, stdout)?;
    Ok(Outcome::Ok)
}

fn grid_axes(g: &GridArgs, eta_max: f64) -> std::result::Result<(Vec<f64>, Vec<f64>), Usage> {
    if g.alpha_steps == 0 || g.eta_steps == 0 {
        return Err(Usage("grid is empty: --alpha-steps and --eta-steps must be at least 1".into()));
    }
    let finite = [g.alpha_min, g.alpha_max, g.eta_min, g.eta_max].iter().all(|v| v.is_finite());
    if !finite || g.alpha_min > g.alpha_max || g.eta_min > g.eta_max {
        return Err(Usage("grid bounds must be finite with min <= max".into()));
    }
    if g.alpha_min < 0.0 || g.alpha_max > MAX_ALPHA {
        return Err(Usage(format!("alpha must lie in [0, {MAX_ALPHA}]")));
    }
    if g.eta_min < 0.0 || g.eta_max > eta_max {
        return Err(Usage(format!("eta must lie in [0, {eta_max}]")));
    }
    Ok((linspace(g.alpha_min, g.alpha_max, g.alpha_steps), linspace(g.eta_min, g.eta_max, g.eta_steps)))
}

fn grid_params(g: &GridArgs) -> Vec<(&'static str, String)> {
    vec![
        ("alpha_min", num(g.alpha_min)),
        ("alpha_max", num(g.alpha_max)),
        ("alpha_steps", g.alpha_steps.to_string()),
        ("eta_min", num(g.eta_min)),
        ("eta_max", num(g.eta_max)),
        ("eta_steps", g.eta_steps.to_string()),
    ]
}

fn contour(
    a: ContourArgs,
    started: Instant,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> std::result::Result<Outcome, Usage> {
    let (alphas, etas) = grid_axes(&a.grid, MAX_SOLVER_ETA)?;
    let cfg = SolverConfig { n_grid: a.n_grid, ..SolverConfig::default() };
    cfg.validate()?;
    let cells = contour_grid(&alphas, &etas, &cfg);
    let mut params = grid_params(&a.grid);
    params.push(("n_grid", a.n_grid.to_string()));
    let mut manifest = RunManifest::new("contour", &params, None);
    let mut csv = String::from("alpha,eta,H,status\n");
    for c in &cells {
        match c.h {
            Some(h) => {
                let _ = writeln!(csv, "{},{},{},ok", num(c.alpha), num(c.eta), num(h));
            }
            None => {
                // The full message may contain commas; the CSV keeps only the first word of it.
                let kind = c.status.split(':').next().unwrap_or("error").trim().replace([' ', ','], "-");
                let _ = writeln!(csv, "{},{},,{kind}", num(c.alpha), num(c.eta));
                manifest.errors.push(format!("alpha={},eta={}: {}", num(c.alpha), num(c.eta), c.status));
            }
        }
    }
    let ok = cells.iter().filter(|c| c.is_ok()).count();
    emit_csv(&csv, a.out.as_deref(), manifest, started, stdout, stderr)?;
    if (ok as f64) < CONTOUR_OK_SHARE * cells.len() as f64 {
        return Ok(Outcome::Failed(format!("only {ok} of {} cells solved", cells.len())));
    }
    Ok(Outcome::Ok)
}

fn improvement(
    a: ImprovementArgs,
    started: Instant,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> std::result::Result<Outcome, Usage> {
    let (alphas, etas) = grid_axes(&a.grid, MAX_ETA)?;
    let table = improvement_table(&alphas, &etas)?;
    let mut csv = String::from("alpha,eta,R\n");
    for c in &table {
        let _ = writeln!(csv, "{},{},{}", num(c.alpha), num(c.eta), num(c.r));
    }
    let manifest = RunManifest::new("improvement", &grid_params(&a.grid), None);
    emit_csv(&csv, a.out.as_deref(), manifest, started, stdout, stderr)?;
    Ok(Outcome::Ok)
}

fn verify(
    a: VerifyArgs,
    started: Instant,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> std::result::Result<Outcome, Usage> {
    let level = match a.level {
        Some(c) => c,
        None => k_axis(1.0, a.rho)?,
    };
    let cfg = VerifyConfig { level, rho: a.rho, budget: a.budget, z: a.z, master_seed: a.seed };
    cfg.validate()?;
    let gates = run_all(&cfg)?;
    for g in &gates {
        let _ = writeln!(stderr, "gate {} {}: {}", g.id, g.name, g.status);
    }
    let failed: Vec<_> = gates.iter().filter(|g| g.status == GateStatus::Fail).collect();
    let mut body = Map::new();
    body.insert("passed".into(), failed.is_empty().into());
    body.insert("gates".into(), serde_json::to_value(&gates).expect("gates serialize"));
    let mut manifest = RunManifest::new(
        "verify",
        &[("level", num(cfg.level)), ("rho", num(cfg.rho)), ("budget", num(cfg.budget)), ("z", num(cfg.z))],
        Some(cfg.master_seed),
    );
    manifest.errors =
        failed.iter().map(|g| format!("{}: {}", g.name, g.first_failure().map_or("", |c| c.detail.as_str()))).collect();
    emit_json(body, a.out.as_deref(), manifest, started, stdout)?;
    match failed.first() {
        None => Ok(Outcome::Ok),
        Some(g) => {
            let check = g.first_failure().map(|c| format!(" ({}: {})", c.label, c.detail)).unwrap_or_default();
            Ok(Outcome::Failed(format!("gate {} {} failed{check}", g.id, g.name)))
        }
    }
}

/// Strip the `"manifest"` key from a JSON report, leaving its data section.
pub fn data_section(report: &str) -> Result<String> {
    let mut v: Value = serde_json::from_str(report).map_err(|e| Error::Domain(format!("not a JSON report: {e}")))?;
    match v.as_object_mut() {
        Some(obj) => {
            obj.remove("manifest");
        }
        None => return Err(Error::Domain("report is not a JSON object".into())),
    }
    Ok(v.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(std::iter::once("ntz").chain(args.iter().copied()), &mut out, &mut err);
        (code, String::from_utf8(out).unwrap(), String::from_utf8(err).unwrap())
    }

    #[test]
    fn linspace_endpoints() {
        assert_eq!(linspace(0.0, 0.8, 9).last(), Some(&0.8));
        assert_eq!(linspace(0.2, 1.0, 1), vec![0.2]);
        assert!(linspace(0.0, 1.0, 0).is_empty());
        assert!((linspace(0.0, 0.8, 9)[2] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn numbers_round_trip() {
        for x in [0.1, 1.0 / 3.0, 6.302_974_888_154_112, 1e-300, -2.5e17] {
            assert_eq!(num(x).parse::<f64>().unwrap(), x);
        }
    }

    #[test]
    fn simulate_header_and_rows() {
        let (code, out, _) = run_str(&["simulate", "--alpha", "0", "--eta", "1", "--steps", "100", "--seed", "7"]);
        assert_eq!(code, 0);
        let lines: Vec<_> = out.lines().collect();
        assert_eq!(lines[0], "t,x,x_smooth,y,w");
        assert_eq!(lines.len(), 101);
    }

    #[test]
    fn usage_errors_exit_two() {
        assert_eq!(run_str(&["simulate", "--alpha", "1.5", "--eta", "1", "--steps", "10"]).0, 2);
        assert_eq!(run_str(&["simulate", "-a", "0.5"]).0, 2);
        assert_eq!(run_str(&["frobnicate"]).0, 2);
        assert_eq!(run_str(&["verify", "--z", "10"]).0, 2);
        assert_eq!(run_str(&["verify", "--budget", "-1"]).0, 2);
        let args = "improvement --alpha-min 0 --alpha-max 0.8 --alpha-steps 0 --eta-min 0.2 --eta-max 1 --eta-steps 3";
        let (code, _, err) = run_str(&args.split(' ').collect::<Vec<_>>());
        assert_eq!(code, 2);
        assert!(err.contains("empty"));
    }

    #[test]
    fn analytic_singular_lambda() {
        let (code, out, _) = run_str(&["analytic", "--eta", "0"]);
        assert_eq!(code, 0);
        let v: Value = serde_json::from_str(&out).unwrap();
        assert!(v["lambda"].is_null());
        assert!(v["lambda_reason"].as_str().unwrap().contains("eta = 0"));
        assert!(v["manifest"].is_object());
    }

    #[test]
    fn data_section_drops_manifest() {
        let d = data_section(r#"{"a":"1","manifest":{"wall_time_s":3.0}}"#).unwrap();
        assert_eq!(d, r#"{"a":"1"}"#);
        assert!(data_section("[1]").is_err());
    }

    #[test]
    fn sidecar_name() {
        assert_eq!(sidecar(Path::new("/tmp/grid.csv")), PathBuf::from("/tmp/grid.csv.manifest.json"));
    }
}
