use std::path::Path;
use std::process::{Command, Output};

const BIN: &str = env!("CARGO_BIN_EXE_mstou");

const SMALL: &str = r#"
seed = 7
[domain]
space = [0.0, 20.0]
time = [0.0, 20.0]
space_pad = 20.0
time_pad = 20.0
"#;

fn run(dir: &Path, args: &[&str]) -> Output {
    Command::new(BIN).current_dir(dir).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

/// Data rows of a CSV written by the tool, as split cells.
fn rows(text: &str) -> Vec<Vec<String>> {
    text.lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn simulate_is_byte_identical_across_runs_and_threads() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "small.toml", SMALL);
    for (out, threads) in [("a", "1"), ("b", "8"), ("c", "8")] {
        let o = run(d, &["simulate", "--config", "small.toml", "--out", out, "--threads", threads]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    }
    for file in ["field.csv", "jumps.csv", "diagnostics.csv"] {
        let a = std::fs::read(d.join("a").join(file)).unwrap();
        assert_eq!(a, std::fs::read(d.join("b").join(file)).unwrap(), "{file}");
        assert_eq!(a, std::fs::read(d.join("c").join(file)).unwrap(), "{file}");
    }
    let other = run(d, &["simulate", "--config", "small.toml", "--out", "d", "--seed", "8"]);
    assert!(other.status.success());
    assert_ne!(read(&d.join("a"), "field.csv"), read(&d.join("d"), "field.csv"));
}

#[test]
fn every_csv_records_the_config_hash() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "small.toml", SMALL);
    assert!(run(d, &["simulate", "--config", "small.toml", "--out", "s"]).status.success());
    assert!(run(d, &["car", "--out", "s"]).status.success());
    assert!(run(d, &["mse-bound", "--out", "s"]).status.success());
    let mut hashes = Vec::new();
    for file in ["field.csv", "jumps.csv", "diagnostics.csv", "car.csv", "kernel.csv", "mse.csv"] {
        let first = read(&d.join("s"), file).lines().next().unwrap().to_string();
        assert!(first.starts_with("# config_hash="), "{file}: {first}");
        assert_eq!(first.len(), "# config_hash=".len() + 64);
        hashes.push(first);
    }
    // simulate used the small config; car and mse-bound used defaults.
    assert_eq!(hashes[0], hashes[2]);
    assert_eq!(hashes[3], hashes[5]);
    assert_ne!(hashes[0], hashes[3]);
}

#[test]
fn zero_intensity_gives_an_empty_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "zero.toml", &format!("{SMALL}\n[model]\nintensity = 0.0\n"));
    let o = run(d, &["simulate", "--config", "zero.toml", "--out", "z"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let z = d.join("z");
    assert!(rows(&read(&z, "jumps.csv")).is_empty());
    let field = rows(&read(&z, "field.csv"));
    assert_eq!(field.len(), 41 * 41);
    assert!(field.iter().all(|r| r[2] == "0"));
    let diag = rows(&read(&z, "diagnostics.csv"));
    let get = |k: &str| diag.iter().find(|r| r[0] == k).unwrap()[1].clone();
    assert_eq!(get("jump_count"), "0");
    assert_eq!(get("truncation_indicator"), "1");
}

#[test]
fn simulate_diagnostics_for_the_reference_setup() {
    let dir = tempfile::tempdir().unwrap();
    let o = run(dir.path(), &["simulate", "--out", "r"]);
    assert!(o.status.success());
    let diag = rows(&read(&dir.path().join("r"), "diagnostics.csv"));
    let get = |k: &str| diag.iter().find(|r| r[0] == k).unwrap()[1].parse::<f64>().unwrap();
    // μ · 180 · 140 on the padded domain.
    assert!((get("expected_jump_count") - 5040.0).abs() < 1e-9);
    assert!((get("jump_count") - 5040.0).abs() < 4.0 * 5040f64.sqrt());
    assert!((get("mse_bound") - 0.016932).abs() < 1e-6);
    assert_eq!(get("grid_points"), 201.0 * 201.0);
}

#[test]
fn moments_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let o = run(d, &["moments", "--out", "m"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let table = rows(&read(&d.join("m"), "moments.csv"));
    let at = |dt: &str, dx: &str| table.iter().find(|r| r[0] == dt && r[1] == dx).unwrap().clone();
    assert!((at("1", "0")[4].parse::<f64>().unwrap() - 0.5).abs() < 1e-12);
    for r in &table {
        let closed: f64 = r[2].parse().unwrap();
        let oracle: f64 = r[3].parse().unwrap();
        assert_eq!(format!("{closed:.6}"), format!("{oracle:.6}"), "{r:?}");
    }
    let summary = read(&d.join("m"), "summary.csv");
    assert!(summary.contains("dependence,long_range"));

    write_config(d, "dirac.toml", "[model]\nrate = { kind = \"dirac\", lambda = 0.7 }\n");
    assert!(run(d, &["moments", "--config", "dirac.toml", "--out", "dm"]).status.success());
    for r in rows(&read(&d.join("dm"), "moments.csv")) {
        let dt: f64 = r[0].parse().unwrap();
        let dx: f64 = r[1].parse().unwrap();
        let corr: f64 = r[4].parse().unwrap();
        assert!((corr - (-0.7 * dt.max(dx)).exp()).abs() < 1e-12);
    }
}

#[test]
fn car_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(run(d, &["car", "--out", "c"]).status.success());
    let car = rows(&read(&d.join("c"), "car.csv"));
    let expected = [(-1.0, 1.0), (-2.0, -1.0)];
    for (r, (e, w)) in car.iter().zip(expected) {
        assert!((r[1].parse::<f64>().unwrap() - e).abs() < 1e-9);
        assert!((r[2].parse::<f64>().unwrap() - w).abs() < 1e-9);
    }
    write_config(d, "p1.toml", "[car]\ncoefficients = [2.0]\n");
    assert!(run(d, &["car", "--config", "p1.toml", "--out", "p1"]).status.success());
    let car = rows(&read(&d.join("p1"), "car.csv"));
    assert_eq!(car.len(), 1);
    assert_eq!(car[0][2], "1");
}

#[test]
fn invalid_car_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "bad.toml", "[car]\ncoefficients = [2.0, 1.0]\n");
    let o = run(d, &["car", "--config", "bad.toml", "--out", "bad"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("repeated eigenvalue"));
    assert!(!d.join("bad").join("car.csv").exists());
}

#[test]
fn missing_field_file_fails_without_partial_output() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "est.toml", "[estimate]\nfields = [\"present.csv\", \"absent.csv\"]\n");
    assert!(run(d, &["simulate", "--config", "est.toml", "--out", "."]).status.success());
    std::fs::rename(d.join("field.csv"), d.join("present.csv")).unwrap();
    let o = run(d, &["estimate", "--config", "est.toml", "--out", "e"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("absent.csv"));
    assert!(!d.join("e").exists());
}

#[test]
fn tiny_field_estimate_smoke() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(
        d,
        "tiny.toml",
        r#"
seed = 3
[domain]
space = [0.0, 4.5]
time = [0.0, 4.5]
[estimate]
fields = ["tiny/field.csv"]
generations = 50
"#,
    );
    assert!(run(d, &["simulate", "--config", "tiny.toml", "--out", "tiny"]).status.success());
    assert_eq!(rows(&read(&d.join("tiny"), "field.csv")).len(), 100);
    let o = run(d, &["estimate", "--config", "tiny.toml", "--out", "e"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let est = rows(&read(&d.join("e"), "estimates.csv"));
    assert_eq!(est.len(), 1);
    assert_eq!(est[0][1], "tiny/field.csv");
    assert!(d.join("e").join("estimate_summary.csv").exists());
    assert!(d.join("e").join("lrd.csv").exists());
}

#[test]
fn acf_of_simulated_replicates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "small.toml", &format!("{SMALL}\n[acf]\nreplicates = 2\nmax_lag = 4\n"));
    let o = run(d, &["acf", "--config", "small.toml", "--out", "a"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let acf = rows(&read(&d.join("a"), "acf.csv"));
    assert_eq!(acf.len(), 5);
    assert_eq!(acf[0][2], "1");
    assert_eq!(acf[0][4], "1");
}

#[test]
fn usage_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(run(dir.path(), &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["simulate", "--seed", "x"]).status.code(), Some(1));
    assert_eq!(run(dir.path(), &["--help"]).status.code(), Some(0));
}

#[test]
fn bad_config_is_a_runtime_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write_config(d, "typo.toml", "[model]\nintensty = 0.3\n");
    let o = run(d, &["simulate", "--config", "typo.toml", "--out", "t"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(!d.join("t").exists());
    let o = run(d, &["simulate", "--config", "nowhere.toml"]);
    assert_eq!(o.status.code(), Some(2));
}
