use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dispatch_core::batch::BatchTable;
use dispatch_core::fixtures;

const BIN: &str = env!("CARGO_BIN_EXE_dispatch");

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("fixtures").join(name)
}

fn dispatch(out: &Path, args: &[&str]) -> Output {
    Command::new(BIN).arg("--quiet").arg("--out").arg(out).args(args).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn grid_validate_on_bundled_fixture_is_clean() {
    let dir = tempfile::tempdir().unwrap();
    let o = dispatch(dir.path(), &["grid", "validate", "--grid", s(&fixture("small14.json")), "--print"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("validation.json")).unwrap()).unwrap();
    let printed: serde_json::Value = serde_json::from_slice(&o.stdout).unwrap();
    assert_eq!(report, printed);
    assert!(dir.path().join("grid_validate.manifest.json").exists());
}

#[test]
fn synth_ten_thousand_rows_within_bounds() {
    let dir = tempfile::tempdir().unwrap();
    let grid = fixtures::small14();
    let (g, n) = (fixture("small14.json"), fixture("small14_nominal.csv"));
    let args = [
        "data", "synth", "--grid", s(&g), "--nominal", s(&n),
        "--count", "10000", "--spread", "0.3", "--seed", "9",
    ];
    let o = dispatch(dir.path(), &args);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let xs = BatchTable::read(dir.path().join("inputs.csv")).unwrap().to_inputs(&grid).unwrap();
    assert_eq!(xs.len(), 10000);
    let nominal = fixtures::small14_nominal(&grid);
    for x in &xs {
        for (v, n) in x.rows.iter().flatten().zip(nominal.rows.iter().flatten()) {
            let (lo, hi) = (0.7 * n, 1.3 * n);
            let tol = 1e-9 * n.abs().max(1.0);
            assert!(*v >= lo.min(hi) - tol && *v <= lo.max(hi) + tol, "{v} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn zero_load_power_flow_is_flat() {
    let dir = tempfile::tempdir().unwrap();
    let grid_path = dir.path().join("two_bus.json");
    std::fs::write(&grid_path, fixtures::two_bus().to_json()).unwrap();
    let o = dispatch(dir.path(), &["pf", "run", "--grid", s(&grid_path)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let mut rdr = csv::Reader::from_path(dir.path().join("pf_solution.csv")).unwrap();
    let headers = rdr.headers().unwrap().clone();
    let rows: Vec<csv::StringRecord> = rdr.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 1);
    for (h, v) in headers.iter().zip(rows[0].iter()) {
        match h {
            "converged" => assert_eq!(v, "true"),
            "p_loss" => assert!(v.parse::<f64>().unwrap().abs() < 1e-12),
            h if h.starts_with("vm_") => assert!((v.parse::<f64>().unwrap() - 1.0).abs() < 1e-12),
            h if h.starts_with("va_") => assert!(v.parse::<f64>().unwrap().abs() < 1e-12),
            _ => {}
        }
    }
}

#[test]
fn errors_map_to_exit_categories() {
    let dir = tempfile::tempdir().unwrap();

    let o = dispatch(dir.path(), &["grid", "validate"]);
    assert_eq!(code(&o), 2);
    let line = String::from_utf8_lossy(&o.stderr);
    assert_eq!(line.trim().lines().count(), 1);
    assert!(line.starts_with("error[config]"), "{line}");

    let cfg = dir.path().join("run.toml");
    std::fs::write(&cfg, "[paths]\ngrid = 3\n").unwrap();
    let o = Command::new(BIN).arg("--config").arg(&cfg).args(["grid", "validate"]).output().unwrap();
    assert_eq!(code(&o), 2);

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{\"base_mva\": 100, \"buses\": 7}").unwrap();
    let o = dispatch(dir.path(), &["grid", "validate", "--grid", s(&bad)]);
    assert_eq!(code(&o), 3);
    assert!(String::from_utf8_lossy(&o.stderr).starts_with("error[data]"));

    // A line onto a bus that does not exist: schema-valid, semantically broken.
    let mut grid: serde_json::Value = serde_json::from_str(&fixtures::two_bus().to_json()).unwrap();
    grid["lines"][0]["to"] = 5.into();
    std::fs::write(&bad, grid.to_string()).unwrap();
    let o = dispatch(dir.path(), &["grid", "validate", "--grid", s(&bad)]);
    assert_eq!(code(&o), 3);
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("validation.json")).unwrap()).unwrap();
    assert_ne!(report, serde_json::json!({}));
}

#[test]
fn chain_reruns_are_byte_identical() {
    let grid = s(&fixture("three_bus.json")).to_string();
    let run = |dir: &Path| {
        let nominal = dir.join("nominal.csv");
        let g = fixtures::three_bus();
        BatchTable::from_inputs(&g, &[fixtures::three_bus_inputs()]).write(&nominal).unwrap();
        let steps: Vec<Vec<String>> = vec![
            vec!["data".into(), "synth".into(), "--nominal".into(), s(&nominal).into(), "--count".into(), "40".into()],
            vec!["data".into(), "label".into(), "--inputs".into(), s(&dir.join("inputs.csv")).into()],
            vec!["data".into(), "split".into(), "--dataset".into(), s(&dir.join("labeled.csv")).into()],
            vec!["train".into(), "--family".into(), "gnn".into(), "--dataset".into(), s(&dir.join("dataset.csv")).into(), "--max-epochs".into(), "15".into()],
            vec!["eval".into(), "--model".into(), s(&dir.join("model_gnn.json")).into(), "--dataset".into(), s(&dir.join("dataset.csv")).into()],
            vec!["report".into(), "--metrics".into(), format!("{}=synthetic", s(&dir.join("metrics_gnn.json")))],
        ];
        for step in steps {
            let mut args: Vec<&str> = step.iter().map(String::as_str).collect();
            if step[0] != "report" {
                args.extend(["--grid", &grid]);
            }
            let o = dispatch(dir, &args);
            assert_eq!(code(&o), 0, "{step:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
    };
    let (a, b) = (tempfile::tempdir().unwrap(), tempfile::tempdir().unwrap());
    run(a.path());
    run(b.path());
    for f in ["inputs.csv", "labeled.csv", "dataset.csv", "model_gnn.json", "metrics_gnn.json", "report.txt", "report.json"] {
        let (x, y) = (std::fs::read(a.path().join(f)).unwrap(), std::fs::read(b.path().join(f)).unwrap());
        assert!(x == y, "{f} differs between reruns");
    }
}

#[test]
fn worker_count_does_not_change_labels() {
    let g = fixtures::three_bus();
    let labels = |workers: &str| {
        let dir = tempfile::tempdir().unwrap();
        let nominal = dir.path().join("nominal.csv");
        BatchTable::from_inputs(&g, &[fixtures::three_bus_inputs()]).write(&nominal).unwrap();
        let grid = fixture("three_bus.json");
        let o = dispatch(dir.path(), &["data", "synth", "--grid", s(&grid), "--nominal", s(&nominal), "--count", "12"]);
        assert_eq!(code(&o), 0);
        let inputs = dir.path().join("inputs.csv");
        let o = dispatch(dir.path(), &["--workers", workers, "data", "label", "--grid", s(&grid), "--inputs", s(&inputs)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        std::fs::read(dir.path().join("labeled.csv")).unwrap()
    };
    assert_eq!(labels("1"), labels("3"));
}
