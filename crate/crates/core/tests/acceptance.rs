//! End-to-end acceptance run: one PASS/FAIL line per criterion, nonzero exit on any failure.

use std::process::Command;
use std::time::Instant;

use ntz_core::cli::data_section;
use ntz_core::verify::{run_all, run_gate, time_limit, GateResult, GateStatus, VerifyConfig, GATE_COUNT};

fn report(id: u8, name: &str, ok: bool, note: &str) -> bool {
    println!("criterion {id:>2} {name:<24} {} {note}", if ok { "PASS" } else { "FAIL" });
    ok
}

fn gates_in_pool(threads: usize, cfg: &VerifyConfig) -> Vec<GateResult> {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().expect("thread pool");
    pool.install(|| run_all(cfg)).expect("valid config")
}

fn ntz(args: &[&str]) -> (i32, Vec<u8>) {
    let out = Command::new(env!("CARGO_BIN_EXE_ntz")).args(args).env_remove("SEED").output().expect("ntz runs");
    (out.status.code().unwrap_or(-1), out.stdout)
}

fn determinism(cfg: &VerifyConfig, first: &[GateResult]) -> (bool, String) {
    let a = serde_json::to_string(first).unwrap();
    let b = serde_json::to_string(&gates_in_pool(1, cfg)).unwrap();
    let c = serde_json::to_string(&gates_in_pool(4, cfg)).unwrap();
    let pools_agree = a == b && b == c;

    let verify = ["verify", "--budget", "0.01", "--seed", "11"];
    let (code1, out1) = ntz(&verify);
    let (code2, out2) = ntz(&verify);
    let sections = |o: &[u8]| data_section(std::str::from_utf8(o).unwrap_or("")).ok();
    let cli_agrees = code1 == 0 && code1 == code2 && sections(&out1).is_some() && sections(&out1) == sections(&out2);

    let sim = ["simulate", "--alpha", "0.5", "--eta", "1", "--steps", "500", "--seed", "3"];
    let sim_agrees = ntz(&sim) == ntz(&sim);
    (
        pools_agree && cli_agrees && sim_agrees,
        format!("pools 1/4/default identical: {pools_agree}, verify data sections identical: {cli_agrees}, simulate identical: {sim_agrees}"),
    )
}

fn main() {
    let cfg = VerifyConfig::default();
    let mut all_ok = true;
    let mut gates = Vec::new();
    for id in 1..=GATE_COUNT {
        let started = Instant::now();
        let gate = run_gate(id, &cfg).expect("valid config");
        let secs = started.elapsed().as_secs_f64();
        let in_time = time_limit(id).is_none_or(|limit| secs < limit);
        let note = match (gate.first_failure(), time_limit(id)) {
            (Some(c), _) => format!("[{:.1}s] {}: {}", secs, c.label, c.detail),
            (None, Some(limit)) => format!("[{secs:.1}s of {limit}s]"),
            (None, None) => format!("[{secs:.1}s]"),
        };
        all_ok &= report(id, &gate.name, gate.status == GateStatus::Pass && in_time, &note);
        gates.push(gate);
    }
    let (ok, note) = determinism(&cfg, &gates);
    all_ok &= report(10, "determinism", ok, &note);
    if !all_ok {
        std::process::exit(1);
    }
}
