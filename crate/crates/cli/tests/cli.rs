use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn nsstpp(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_nsstpp")).current_dir(dir).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_events_file_is_a_data_error_with_no_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsstpp(dir.path(), &["fit", "--events", "absent.csv", "--out", "fit", "--horizon", "70"]);
    assert_eq!(code(&o), 2, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("fit").exists());
}

#[test]
fn usage_errors_exit_one() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&nsstpp(dir.path(), &["frobnicate"])), 1);
    assert_eq!(code(&nsstpp(dir.path(), &["simulate", "--out", "sim"])), 1, "horizon is required");
    assert!(!dir.path().join("sim").exists());
    assert_eq!(code(&nsstpp(dir.path(), &["--help"])), 0);
}

#[test]
fn error_bound_point_query() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsstpp(dir.path(), &["error-bound", "--A", "0.35", "--c", "0.1"]);
    assert_eq!(code(&o), 0);
    assert!(stdout(&o).contains("max_rel_err = 0.045886"), "{}", stdout(&o));
    assert_eq!(code(&nsstpp(dir.path(), &["error-bound", "--A", "-1", "--c", "0.1"])), 1);
}

#[test]
fn locked_output_directory_is_refused() {
    let dir = tempfile::tempdir().unwrap();
    fs::create_dir(dir.path().join("sim")).unwrap();
    fs::write(dir.path().join("sim/.nsstpp.lock"), "").unwrap();
    let o = nsstpp(dir.path(), &["simulate", "--out", "sim", "--horizon", "14"]);
    assert_eq!(code(&o), 2);
    assert!(!dir.path().join("sim/events.csv").exists());
}

#[test]
fn simulate_then_fit_converges() {
    let dir = tempfile::tempdir().unwrap();
    let o = nsstpp(dir.path(), &["simulate", "--out", "sim", "--horizon", "70", "--seed", "3"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["events.csv", "regions.geojson", "truth.json", "simulation.json"] {
        assert!(dir.path().join("sim").join(f).exists(), "{f}");
    }
    let o = nsstpp(
        dir.path(),
        &["fit", "--events", "sim/events.csv", "--regions", "sim/regions.geojson", "--out", "fit", "--horizon", "70"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout(&o).contains("stop_reason=converged"), "{}", stdout(&o));
    assert!(!dir.path().join("fit/.nsstpp.lock").exists());
    let events = fs::read_to_string(dir.path().join("sim/events.csv")).unwrap();
    assert!(events.starts_with("# seed=3,config_hash="));

    let o = nsstpp(
        dir.path(),
        &["predict", "--model", "fit/model.json", "--events", "sim/events.csv", "--out", "pred", "--week", "9", "--horizon", "70"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let raster = fs::read_to_string(dir.path().join("pred/raster.csv")).unwrap();
    assert_eq!(raster.lines().filter(|l| !l.starts_with('#')).count(), 1 + 50 * 50);
}

#[test]
fn events_outside_the_horizon_are_reported_by_line() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("ev.csv"), "t,x,y\n1.0,5,5\n99.0,5,5\n2.0,5,5\n").unwrap();
    let o = nsstpp(dir.path(), &["fit", "--events", "ev.csv", "--out", "fit", "--horizon", "70"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("line 3"), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!dir.path().join("fit").exists());
}

#[test]
fn lonlat_input_without_origin_is_centred_on_the_events() {
    let dir = tempfile::tempdir().unwrap();
    let (lon0, lat0) = (-76.53, 3.42);
    let square = |dx: f64, dy: f64| {
        format!(
            r#"{{"type":"Feature","id":"r{dx}{dy}","properties":{{}},"geometry":{{"type":"Polygon","coordinates":[[[{a},{b}],[{c},{b}],[{c},{d}],[{a},{d}],[{a},{b}]]]}}}}"#,
            a = lon0 - 0.05 + dx * 0.05,
            b = lat0 - 0.05 + dy * 0.05,
            c = lon0 + dx * 0.05,
            d = lat0 + dy * 0.05,
        )
    };
    let regions = format!(
        r#"{{"type":"FeatureCollection","features":[{},{},{},{}]}}"#,
        square(0.0, 0.0),
        square(1.0, 0.0),
        square(0.0, 1.0),
        square(1.0, 1.0)
    );
    fs::write(dir.path().join("regions.geojson"), regions).unwrap();
    let mut csv = String::from("t,lon,lat\n");
    for k in 0..140 {
        let u = (k as f64 * 0.618).fract() - 0.5;
        let v = (k as f64 * 0.382).fract() - 0.5;
        csv.push_str(&format!("{},{},{}\n", k as f64 * 0.5, lon0 + 0.08 * u, lat0 + 0.08 * v));
    }
    fs::write(dir.path().join("ev.csv"), csv).unwrap();
    let o = nsstpp(
        dir.path(),
        &["pacf", "--events", "ev.csv", "--regions", "regions.geojson", "--coordinates", "lonlat", "--out", "p", "--horizon", "70", "--max-lag", "3"],
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let pacf = fs::read_to_string(dir.path().join("p/pacf.csv")).unwrap();
    assert_eq!(pacf.lines().count(), 2 + 4 * 3);
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), "horizon = 14.0\nseed = 5\nlambda0 = 0.02\n").unwrap();
    let o = nsstpp(dir.path(), &["simulate", "--config", "run.toml", "--seed", "9", "--out", "sim"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let events = fs::read_to_string(dir.path().join("sim/events.csv")).unwrap();
    assert!(events.starts_with("# seed=9,"));
    fs::write(dir.path().join("bad.toml"), "horizon = 14.0\nno_such_key = 1\n").unwrap();
    assert_ne!(code(&nsstpp(dir.path(), &["simulate", "--config", "bad.toml", "--out", "sim2"])), 0);
}
