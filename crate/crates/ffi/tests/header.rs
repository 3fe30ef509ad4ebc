use std::path::Path;
use std::process::Command;

const PROGRAM: &str = r#"
#include "ntz.h"
#include <stdio.h>

int main(void) {
    double h = 0.0;
    NtzSolver *solver = NULL;
    NtzSolverConfig cfg = ntz_solver_config_default();
    if (ntz_survival_at0(1.0, &h) != NTZ_STATUS_OK) return 1;
    if (ntz_solver_new(&cfg, &solver) != NTZ_STATUS_OK) return 1;
    ntz_solver_free(solver);
    printf("%s %.4f\n", ntz_version(), h);
    return 0;
}
"#;

#[test]
fn generated_header_compiles_as_c() {
    let include = Path::new(env!("CARGO_MANIFEST_DIR")).join("include");
    let header = std::fs::read_to_string(include.join("ntz.h")).unwrap();
    for symbol in ["ntz_solver_new", "ntz_solver_copy_grid", "ntz_estimate_h_mc", "NTZ_STATUS_PANIC"] {
        assert!(header.contains(symbol), "{symbol} missing from header");
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(&src, PROGRAM).unwrap();
    let status = Command::new("cc")
        .args(["-std=c99", "-Wall", "-Wextra", "-Werror", "-c", "-o"])
        .arg(dir.path().join("main.o"))
        .arg("-I")
        .arg(&include)
        .arg(&src)
        .status()
        .expect("a C compiler is available");
    assert!(status.success());
}
