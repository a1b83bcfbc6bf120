use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use expdyn::FiberMeasure;

fn expdyn(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_expdyn"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .unwrap()
}

fn ok(args: &[&str], out: &Path) {
    let o = expdyn(args, out);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn missing_required_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let o = expdyn(&["pressure"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("A"));
}

#[test]
fn bad_flag_values_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(expdyn(&["pressure", "--A", "x"], dir.path()).status.code(), Some(1));
    assert_eq!(expdyn(&["pressure", "--A", "1", "--t", "0.5"], dir.path()).status.code(), Some(1));
    assert_eq!(expdyn(&["bogus"], dir.path()).status.code(), Some(1));
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "A = 1.0\nnot_a_key = 3\n").unwrap();
    let o = expdyn(&["pressure", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("c.toml");
    fs::write(&cfg, "A = 1.0\nt = \"1.5\"\nn = 30\natoms = 200\n").unwrap();
    ok(&["pressure", "--config", cfg.to_str().unwrap(), "--n", "20"], dir.path());
    let meta = json(&dir.path().join("pressure.json"));
    assert_eq!(meta["config"]["n"], 20);
    assert_eq!(meta["config"]["A"], 1.0);
}

#[test]
fn pressure_writes_one_row_per_t() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["pressure", "--A", "1", "--t", "1.2:2.0:0.1", "--n", "20", "--atoms", "150"],
        dir.path(),
    );
    let mut r = csv::Reader::from_path(dir.path().join("pressure.csv")).unwrap();
    assert_eq!(r.headers().unwrap(), vec!["t", "value", "stderr", "n"]);
    let rows: Vec<_> = r.records().map(Result::unwrap).collect();
    assert_eq!(rows.len(), 9);
    let ts: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert!((ts[0] - 1.2).abs() < 1e-12 && (ts[8] - 2.0).abs() < 1e-12);
    let meta = json(&dir.path().join("pressure.json"));
    assert_eq!(meta["schema"], "expdyn.pressure/1");
    assert_eq!(meta["curve"]["points"].as_array().unwrap().len(), 9);
}

#[test]
fn operator_grid_method_runs() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["pressure", "--A", "1", "--t", "1.5", "--n", "20", "--method", "operator_grid", "--grid-m", "6"],
        dir.path(),
    );
    let meta = json(&dir.path().join("pressure.json"));
    let p = &meta["curve"]["points"][0];
    assert_eq!(p["method"], "operator_grid");
    assert!(p["value"].as_f64().unwrap().is_finite());
}

#[test]
fn scan_reports_a_fraction() {
    let dir = tempfile::tempdir().unwrap();
    ok(
        &["scan", "--driver", "iid_uniform", "--A", "1", "--B", "1.2", "--seed", "2", "--scan-grid", "16", "--n", "24"],
        dir.path(),
    );
    let meta = json(&dir.path().join("scan.json"));
    let f = meta["report"]["fraction_satisfying"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&f));
    let rows = csv::Reader::from_path(dir.path().join("scan.csv")).unwrap().records().count();
    assert_eq!(rows, 3);
}

#[test]
fn raster_is_binary_pgm() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["raster", "--A", "1", "--width", "40", "--height", "30", "--n", "15"], dir.path());
    let bytes = fs::read(dir.path().join("raster.pgm")).unwrap();
    let header = b"P5\n40 30\n255\n";
    assert!(bytes.starts_with(header));
    assert_eq!(bytes.len(), header.len() + 40 * 30);
}

#[test]
fn measure_csv_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["measure", "--A", "1", "--n", "16", "--atoms", "300", "--t", "1.5"], dir.path());
    let nu = FiberMeasure::load(&dir.path().join("measure.csv"), 0).unwrap();
    assert!(!nu.is_empty() && nu.len() <= 300);
    assert!((nu.total_mass() - 1.0).abs() < 1e-9);
    let mut again = Vec::new();
    nu.write_csv(&mut again).unwrap();
    assert_eq!(again, fs::read(dir.path().join("measure.csv")).unwrap());
    let meta = json(&dir.path().join("measure.json"));
    assert_eq!(meta["log_lambdas"].as_array().unwrap().len(), 16);
    assert!(meta["conformality_residual"].as_f64().unwrap().is_finite());
}

#[test]
fn bowen_with_loose_tolerance() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["bowen", "--A", "1", "--n", "24", "--atoms", "200", "--tol", "0.5"], dir.path());
    let meta = json(&dir.path().join("bowen.json"));
    let h = meta["result"]["h"].as_f64().unwrap();
    assert!(h > 1.0 && h < 2.0, "{h}");
}

#[test]
fn same_seed_same_bytes_and_config_replays() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    let args = ["scan", "--driver", "iid_uniform", "--A", "1", "--B", "1.3", "--seed", "77", "--scan-grid", "12", "--n", "20"];
    ok(&args, &a);
    ok(&args, &b);
    let cfg = a.join("scan.config.toml");
    ok(&["scan", "--config", cfg.to_str().unwrap()], &c);
    for f in ["scan.csv", "scan.json", "scan.config.toml"] {
        let x = fs::read(a.join(f)).unwrap();
        assert_eq!(x, fs::read(b.join(f)).unwrap(), "{f}");
        assert_eq!(x, fs::read(c.join(f)).unwrap(), "{f}");
    }
    // a different seed changes the driver and so the report
    let d = dir.path().join("d");
    let mut other = args;
    other[8] = "78";
    ok(&other, &d);
    assert_ne!(fs::read(a.join("scan.config.toml")).unwrap(), fs::read(d.join("scan.config.toml")).unwrap());
}
