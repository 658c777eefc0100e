use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use tempfile::TempDir;

fn gnm(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gnm"))
        .args(args)
        .arg("--out")
        .arg(out)
        .output()
        .expect("binary runs")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap_or_else(|e| panic!("{}: {e}", path.display()))
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[test]
fn standoff_run_writes_metrics_and_manifest() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["run", "--preset", "standoff", "--duration", "2"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["run.json", "density_speed.csv", "collisions.csv", "density_speed.gp"] {
        assert!(dir.path().join(f).exists(), "missing {f}");
    }
    let manifest: serde_json::Value = serde_json::from_str(&fs::read_to_string(dir.path().join("run.json")).unwrap()).unwrap();
    assert_eq!(manifest["config"]["duration"], 2.0);
    assert!(manifest["wall_clock"].as_f64().unwrap() >= 0.0);
    assert_eq!(manifest["seed"], manifest["config"]["population"]["seed"]);
}

#[test]
fn manifest_reproduces_the_run() {
    let first = TempDir::new().unwrap();
    let o = gnm(
        &[
            "run",
            "--preset",
            "fundamental-diagram",
            "--rho",
            "0.5",
            "--duration",
            "2",
            "--seed",
            "9",
            "--param",
            "tau=0.4",
        ],
        first.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let second = TempDir::new().unwrap();
    let manifest = first.path().join("run.json");
    let o = gnm(&["run", "--scenario", manifest.to_str().unwrap()], second.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read(first.path().join("density_speed.csv")).unwrap();
    let b = fs::read(second.path().join("density_speed.csv")).unwrap();
    assert!(!a.is_empty());
    assert_eq!(a, b);
}

#[test]
fn bottleneck_run_counts_every_crossing() {
    let dir = TempDir::new().unwrap();
    let o = gnm(
        &["run", "--preset", "bottleneck", "--width", "1.0", "--seed", "7"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("flow.csv"));
    assert_eq!(rows.len(), 180);
}

#[test]
fn stop_and_go_run_reports_its_density() {
    let dir = TempDir::new().unwrap();
    let o = gnm(
        &["run", "--preset", "stop-and-go", "--rho", "4.0", "--duration", "32"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("speed_stats.csv"));
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0][0].parse::<f64>().unwrap(), 4.0);
}

#[test]
fn invalid_width_is_a_configuration_error() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["run", "--preset", "bottleneck", "--width", "-1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).contains("--width"));
}

#[test]
fn unknown_parameter_is_a_configuration_error() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["run", "--preset", "standoff", "--param", "nope=1"], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn unwritable_output_is_an_io_error() {
    let dir = TempDir::new().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "").unwrap();
    let o = gnm(&["run", "--preset", "standoff", "--duration", "0.5"], &blocker.join("sub"));
    assert_eq!(o.status.code(), Some(4), "{}", stderr(&o));
}

#[test]
fn corridor_sweep_writes_one_row_per_density() {
    let dir = TempDir::new().unwrap();
    let o = gnm(
        &[
            "sweep",
            "--preset",
            "stop-and-go",
            "--densities",
            "1,2",
            "--seeds",
            "1",
            "--duration",
            "32",
            "--parallel",
            "1",
        ],
        dir.path(),
    );
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("speed_stats.csv"));
    let rhos: Vec<f64> = rows.iter().map(|r| r[0].parse().unwrap()).collect();
    assert_eq!(rhos, vec![1.0, 2.0]);
    assert!(dir.path().join("sweep.json").exists());
}

#[test]
fn empty_sweep_grid_is_rejected() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["sweep", "--preset", "stop-and-go", "--densities", ""], dir.path());
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
}

#[test]
fn calibration_solves_the_standoff() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["calibrate"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("calibration.json")).unwrap()).unwrap();
    let c = &report["calibration"];
    assert!(c["residual"].as_f64().unwrap() <= 1e-10);
    assert!((c["p_p"].as_f64().unwrap() - 3.72).abs() < 0.01);
    assert_eq!(report["neighbors"].as_array().unwrap().len(), 4);
}

#[test]
fn calibration_writes_back_into_a_scenario() {
    let dir = TempDir::new().unwrap();
    let scenario = dir.path().join("standoff.json");
    fs::copy(
        concat!(env!("CARGO_MANIFEST_DIR"), "/../core/presets/standoff.json"),
        &scenario,
    )
    .unwrap();
    let o = gnm(&["calibrate", "--write-back", scenario.to_str().unwrap()], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let config: serde_json::Value = serde_json::from_str(&fs::read_to_string(&scenario).unwrap()).unwrap();
    assert!((config["model"]["ped_height"].as_f64().unwrap() - 3.7234).abs() < 1e-3);
    assert!((config["model"]["obstacle_height"].as_f64().unwrap() - 18.0847).abs() < 1e-3);
}

#[test]
fn field_dump_flows_around_walls() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["field", "--preset", "bottleneck"], dir.path());
    assert!(o.status.success(), "{}", stderr(&o));
    let rows = csv_rows(&dir.path().join("field_1.csv"));
    assert_eq!(rows.len(), 251 * 121);
    // nodes just in front of the wall faces, away from the opening
    for r in &rows {
        let (x, y): (f64, f64) = (r[0].parse().unwrap(), r[1].parse().unwrap());
        let gx: f64 = r[3].parse().unwrap();
        if (x - 11.5).abs() < 1e-6 && !(4.5..=7.5).contains(&y) && y > 1.0 && y < 11.0 {
            // walking direction is -grad sigma; it must not push into the face at x = 12
            assert!(-gx < 0.3, "({x}, {y}): gx = {gx}");
        }
    }
}

#[test]
fn missing_target_lists_available_ids() {
    let dir = TempDir::new().unwrap();
    let o = gnm(&["field", "--preset", "bottleneck", "--target", "9"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("[1]"), "{}", stderr(&o));
}

#[test]
fn output_root_defaults_to_environment() {
    let dir = TempDir::new().unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_gnm"))
        .args(["calibrate"])
        .env("GNM_OUT_DIR", dir.path())
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(dir.path().join("calibration.json").exists());
}
