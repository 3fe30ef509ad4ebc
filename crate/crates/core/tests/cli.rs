use std::process::{Command, Output};
use std::time::Instant;

use ntz_core::cli::data_section;
use ntz_core::closed_forms::{
    constrained_second_derivative, grad_k_at0, grad_survival_at0, hess_k_at0, hess_survival_at0, improvement_ratio,
    k_axis, lagrange_lambda, survival_at0,
};
use serde_json::Value;

fn ntz(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntz")).args(args).env_remove("SEED").output().unwrap()
}

fn ntz_env(args: &[&str], seed: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ntz")).args(args).env("SEED", seed).output().unwrap()
}

fn words(s: &str) -> Vec<&str> {
    s.split_whitespace().collect()
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn stderr(o: &Output) -> String {
    String::from_utf8(o.stderr.clone()).unwrap()
}

fn rows(csv: &str) -> Vec<Vec<String>> {
    csv.lines().skip(1).map(|l| l.split(',').map(str::to_owned).collect()).collect()
}

fn f(s: &str) -> f64 {
    s.parse().unwrap()
}

#[test]
fn simulate_writes_csv_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("path.csv");
    let out_s = out.to_str().unwrap();
    let args = ["simulate", "--alpha", "0", "--eta", "1", "--steps", "100", "--seed", "7", "--out", out_s];
    assert_eq!(ntz(&args).status.code(), Some(0));
    let first = std::fs::read(&out).unwrap();
    let text = String::from_utf8(first.clone()).unwrap();
    assert!(text.starts_with("t,x,x_smooth,y,w\n"));
    assert_eq!(text.lines().count(), 101);
    assert!(!text.contains('\r'));
    for r in rows(&text) {
        assert!(r[4] == "1" || r[4] == "-1");
        // At alpha = 0 the smoothed signal is the raw one.
        assert_eq!(r[1], r[2]);
    }
    let manifest: Value =
        serde_json::from_str(&std::fs::read_to_string(format!("{out_s}.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["command"], "simulate");
    assert_eq!(manifest["master_seed"], 7);
    assert_eq!(manifest["params"]["steps"], "100");

    assert_eq!(ntz(&args).status.code(), Some(0));
    assert_eq!(std::fs::read(&out).unwrap(), first);
}

#[test]
fn seed_comes_from_env_unless_flagged() {
    let base = ["simulate", "--alpha", "0.3", "--eta", "0.5", "--steps", "50"];
    let flagged = ntz(&[&base[..], &["--seed", "7"]].concat());
    assert_eq!(ntz_env(&base, "7").stdout, flagged.stdout);
    assert_ne!(ntz_env(&base, "8").stdout, flagged.stdout);
    assert_eq!(ntz_env(&[&base[..], &["--seed", "7"]].concat(), "8").stdout, flagged.stdout);
}

#[test]
fn invalid_alpha_is_a_usage_error() {
    let o = ntz(&["simulate", "--alpha", "1.5", "--eta", "1", "--steps", "10"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[0, 0.99]"), "{}", stderr(&o));
    assert_eq!(ntz(&["simulate", "--eta", "1", "--steps", "10"]).status.code(), Some(2));
    assert_eq!(ntz(&["analytic", "--eta", "-1"]).status.code(), Some(2));
}

#[test]
fn analytic_round_trips_exactly() {
    let o = ntz(&["analytic", "--eta", "1", "--rho", "0.1"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let g = |key: &str| f(v[key].as_str().unwrap());
    let sub = |key: &str, inner: &str| f(v[key][inner].as_str().unwrap());
    assert!(g("constrained_second_derivative") < 0.0);
    assert_eq!(g("constrained_second_derivative"), constrained_second_derivative(1.0, 0.1).unwrap());
    assert_eq!(g("K_axis"), k_axis(1.0, 0.1).unwrap());
    assert_eq!(g("H"), survival_at0(1.0).unwrap());
    assert_eq!(g("lambda"), lagrange_lambda(1.0, 0.1).unwrap());
    let gk = grad_k_at0(1.0, 0.1).unwrap();
    let gh = grad_survival_at0(1.0).unwrap();
    assert_eq!((sub("grad_K", "d_alpha"), sub("grad_K", "d_eta")), (gk.d_alpha, gk.d_eta));
    assert_eq!((sub("grad_H", "d_alpha"), sub("grad_H", "d_eta")), (gh.d_alpha, gh.d_eta));
    let hk = hess_k_at0(1.0, 0.1).unwrap();
    let hh = hess_survival_at0(1.0).unwrap();
    assert_eq!(sub("hess_K", "d_alpha_eta"), hk.d_ae);
    assert_eq!(sub("hess_H", "d_alpha_alpha"), hh.d_aa);
    assert_eq!(sub("hess_H", "d_eta_eta"), hh.d_ee);
    assert_eq!(v["manifest"]["command"], "analytic");
}

#[test]
fn analytic_at_zero_threshold_reports_null_lambda() {
    let o = ntz(&["analytic", "--eta", "0"]);
    assert_eq!(o.status.code(), Some(0));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert!(v["lambda"].is_null());
    assert!(v["lambda_reason"].is_string());
    assert_eq!(f(v["H"].as_str().unwrap()), 2.0);
}

#[test]
fn contour_single_cell() {
    let o = ntz(&words("contour --alpha-min 0 --alpha-max 0 --alpha-steps 1 --eta-min 1 --eta-max 1 --eta-steps 1"));
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("alpha,eta,H,status\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 1);
    assert_eq!(r[0][3], "ok");
    assert!((f(&r[0][2]) - 6.3030).abs() < 5e-5);
}

#[test]
fn contour_grid_is_complete() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("h.csv");
    let mut args =
        words("contour --alpha-min 0 --alpha-max 0.8 --alpha-steps 17 --eta-min 0.1 --eta-max 2 --eta-steps 20");
    args.extend(["--out", out.to_str().unwrap()]);
    let o = ntz(&args);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let r = rows(&std::fs::read_to_string(&out).unwrap());
    assert_eq!(r.len(), 340);
    assert!(r.iter().all(|c| c[3] == "ok"));
    for c in r.iter().filter(|c| f(&c[0]) == 0.0) {
        let eta = f(&c[1]);
        assert!((f(&c[2]) - survival_at0(eta).unwrap()).abs() < 1e-8, "eta {eta}");
    }
    // H grows with the threshold at every smoothing level.
    for chunk in r.chunks(20) {
        assert!(chunk.windows(2).all(|w| f(&w[1][2]) > f(&w[0][2])));
    }
}

#[test]
fn empty_grids_are_usage_errors() {
    let grid = words("--alpha-min 0 --alpha-max 0.5 --alpha-steps 0 --eta-min 1 --eta-max 2 --eta-steps 4");
    assert_eq!(ntz(&[&["contour"][..], &grid[..]].concat()).status.code(), Some(2));
    assert_eq!(ntz(&[&["improvement"][..], &grid[..]].concat()).status.code(), Some(2));
    let inverted =
        words("improvement --alpha-min 0.5 --alpha-max 0 --alpha-steps 3 --eta-min 1 --eta-max 2 --eta-steps 4");
    assert_eq!(ntz(&inverted).status.code(), Some(2));
}

#[test]
fn improvement_table() {
    let started = Instant::now();
    let o = ntz(&words(
        "improvement --alpha-min 0 --alpha-max 0.8 --alpha-steps 9 --eta-min 0.2 --eta-max 1.8 --eta-steps 9",
    ));
    assert!(started.elapsed().as_secs_f64() < 1.0);
    assert_eq!(o.status.code(), Some(0));
    let out = stdout(&o);
    assert!(out.starts_with("alpha,eta,R\n"));
    let r = rows(&out);
    assert_eq!(r.len(), 81);
    assert!(r.iter().filter(|c| f(&c[0]) == 0.0).all(|c| f(&c[2]) == 0.0));
    let cell = r.iter().find(|c| (f(&c[0]) - 0.2).abs() < 1e-12 && (f(&c[1]) - 1.0).abs() < 1e-12).unwrap();
    assert!((f(&cell[2]) - improvement_ratio(0.2, 1.0).unwrap()).abs() < 1e-12);
}

#[test]
fn verify_tiny_budget_is_underpowered() {
    let o = ntz(&["verify", "--budget", "0.001"]);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    for g in v["gates"].as_array().unwrap() {
        let mc = matches!(g["id"].as_u64().unwrap(), 2 | 3 | 4 | 8);
        assert_eq!(g["status"], if mc { "UNDERPOWERED" } else { "PASS" }, "{g}");
    }
    assert!(stderr(&o).contains("UNDERPOWERED"));
    let again = ntz(&["verify", "--budget", "0.001"]);
    assert_eq!(data_section(&stdout(&o)).unwrap(), data_section(&stdout(&again)).unwrap());
}

#[test]
fn verify_rejects_out_of_range_tolerance() {
    for args in [["verify", "--z", "1"], ["verify", "--z", "9"], ["verify", "--budget", "0"]] {
        assert_eq!(ntz(&args).status.code(), Some(2));
    }
}

#[test]
fn verify_names_the_failing_gate() {
    // Just below the ceiling 0.1 * sqrt(2/pi): smoothing at alpha = 0.2 can no longer reach it.
    let o = ntz(&["verify", "--level", "0.0795"]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("level-curve-optimality"), "{err}");
    let v: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(v["passed"], false);
}
