//! Compiles a C program against the generated header and the static
//! library, then runs it.

use std::path::PathBuf;
use std::process::Command;

const PROGRAM: &str = r#"
#include <stdio.h>
#include <math.h>
#include "dispatch.h"

int main(int argc, char **argv) {
    dispatch_grid *grid = NULL;
    if (dispatch_grid_load(argv[1], &grid) != DISPATCH_STATUS_OK) {
        fprintf(stderr, "load: %s\n", dispatch_last_error());
        return 1;
    }
    size_t n = dispatch_grid_n_buses(grid);
    double inputs[3 * DISPATCH_INPUT_COLUMNS] = {0};
    double vm[3], va[3], loss = -1.0;
    if (n != 3) return 2;
    if (dispatch_pf_solve(grid, inputs, NULL, vm, va, &loss) != DISPATCH_STATUS_OK) return 3;
    if (!isfinite(loss) || vm[0] < 0.5 || vm[0] > 1.5) return 4;

    dispatch_grid *bad = NULL;
    if (dispatch_grid_from_json("not json", &bad) != DISPATCH_STATUS_INVALID_GRID) return 5;
    if (dispatch_last_error()[0] == '\0') return 6;
    printf("%s %zu %.6f\n", dispatch_version(), n, vm[0]);
    dispatch_grid_free(grid);
    return 0;
}
"#;

#[test]
fn c_program_links_against_the_static_library() {
    let crate_dir = PathBuf::from(env!("CARGO_MANIFEST_DIR"));
    // target/<profile>/deps/<this test> -> target/<profile>
    let profile_dir = std::env::current_exe().unwrap().parent().unwrap().parent().unwrap().to_path_buf();
    let lib = profile_dir.join("libdispatch_ffi.a");
    assert!(lib.exists(), "{} not built", lib.display());

    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    let exe = dir.path().join("main");
    std::fs::write(&src, PROGRAM).unwrap();
    let cc = std::env::var("CC").unwrap_or_else(|_| "cc".into());
    let status = Command::new(cc)
        .args(["-std=c99", "-Wall", "-Werror", "-I"])
        .arg(crate_dir.join("include"))
        .arg(&src)
        .arg(&lib)
        .args(["-lm", "-lpthread", "-ldl", "-o"])
        .arg(&exe)
        .status()
        .unwrap();
    assert!(status.success(), "C compilation failed");

    let grid = crate_dir.join("../core/fixtures/three_bus.json");
    let out = Command::new(&exe).arg(grid).output().unwrap();
    assert!(out.status.success(), "exit {:?}: {}", out.status.code(), String::from_utf8_lossy(&out.stderr));
    let line = String::from_utf8(out.stdout).unwrap();
    let fields: Vec<&str> = line.split_whitespace().collect();
    assert_eq!(fields[0], env!("CARGO_PKG_VERSION"));
    assert_eq!(fields[1], "3");
}
