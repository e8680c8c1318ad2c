use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use mudsense::harness::{SAMPLES_HEADER, STRIDES_HEADER};

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn mudsense(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mudsense")).args(args).output().expect("binary runs")
}

fn write_config(dir: &Path, name: &str, body: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, body).unwrap();
    p.to_string_lossy().into_owned()
}

fn header(path: &Path) -> Vec<String> {
    let mut r = csv::Reader::from_path(path).unwrap();
    r.headers().unwrap().iter().map(String::from).collect()
}

const SHORT_TRACK: &str = r#"
scenario = "trackway-map"
seed = 3

[trial]
max_strides = 4

[[trackway.segments]]
id = "firm"
length = 0.3
w = 0.495
"#;

#[test]
fn trial_run_writes_documented_schemas() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", SHORT_TRACK);
    let out = tmp.path().join("out");
    let o = mudsense(&["run", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    assert_eq!(header(&out.join("samples.csv")), SAMPLES_HEADER);
    assert_eq!(header(&out.join("strides.csv")), STRIDES_HEADER);
    let mut r = csv::Reader::from_path(out.join("samples.csv")).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert!(!rows.is_empty());
    let phase_col = SAMPLES_HEADER.iter().position(|&h| h == "phase").unwrap();
    let segment_col = SAMPLES_HEADER.iter().position(|&h| h == "segment").unwrap();
    for row in &rows {
        assert_eq!(&row[segment_col], "firm");
        assert_eq!(row.len(), SAMPLES_HEADER.len());
        assert!(["insertion", "stance", "extraction", "swing"].contains(&&row[phase_col]), "{:?}", &row[phase_col]);
        for (i, field) in row.iter().enumerate() {
            if i != phase_col && i != segment_col {
                assert!(field.parse::<f64>().is_ok_and(f64::is_finite), "column {} = {field:?}", SAMPLES_HEADER[i]);
            }
        }
    }
    let t_col = SAMPLES_HEADER.iter().position(|&h| h == "t").unwrap();
    let ts: Vec<f64> = rows.iter().map(|r| r[t_col].parse().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[1] >= w[0]));
    assert!(String::from_utf8_lossy(&o.stdout).contains("scenario"));
    assert!(out.join("summary.txt").exists());
}

#[test]
fn seed_override_is_deterministic_and_matters() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", SHORT_TRACK);
    let read = |seed: &str, name: &str| {
        let out = tmp.path().join(format!("{name}_{seed}"));
        let o = mudsense(&["run", &cfg, "--seed", seed, "--out", out.to_str().unwrap()]);
        assert!(o.status.success());
        fs::read(out.join("samples.csv")).unwrap()
    };
    assert_eq!(read("5", "a"), read("5", "b"));
    assert_ne!(read("5", "a"), read("6", "a"));
}

#[test]
fn plots_do_not_change_csvs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", SHORT_TRACK);
    let on = tmp.path().join("on");
    let off = tmp.path().join("off");
    assert!(mudsense(&["run", &cfg, "--plots", "on", "--out", on.to_str().unwrap()]).status.success());
    assert!(mudsense(&["run", &cfg, "--plots", "off", "--out", off.to_str().unwrap()]).status.success());
    for f in ["samples.csv", "strides.csv"] {
        assert_eq!(fs::read(on.join(f)).unwrap(), fs::read(off.join(f)).unwrap(), "{f}");
    }
    assert!(fs::read_dir(&on).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
    assert!(!fs::read_dir(&off).unwrap().any(|e| e.unwrap().path().extension().is_some_and(|x| x == "svg")));
}

#[test]
fn config_errors_exit_one() {
    let tmp = tempfile::tempdir().unwrap();
    let unknown = write_config(tmp.path(), "a.toml", "scenario = \"adapt\"\nturbo = true\n");
    let out_of_range = write_config(
        tmp.path(),
        "b.toml",
        "scenario = \"adapt\"\n[[trackway.segments]]\nid = \"wet\"\nlength = 1.0\nw = 0.538\n",
    );
    let bad_value = write_config(tmp.path(), "c.toml", "scenario = \"adapt\"\n[trial.gait]\nv_stance = -1.0\n");
    for cfg in [unknown, out_of_range, bad_value, tmp.path().join("missing.toml").to_string_lossy().into_owned()] {
        let o = mudsense(&["run", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(1), "{cfg}: {}", String::from_utf8_lossy(&o.stderr));
    }
}

#[test]
fn runtime_failures_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "t.toml", SHORT_TRACK);
    let blocker = tmp.path().join("file");
    fs::write(&blocker, "not a directory").unwrap();
    let o = mudsense(&["run", &cfg, "--out", blocker.join("out").to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2), "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn empty_sweep_grid_succeeds() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "s.toml", "scenario = \"sweep\"\n[sweep]\nmodes = []\n");
    let out = tmp.path().join("sweep");
    let o = mudsense(&["sweep", &cfg, "--out", out.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
    let mut r = csv::Reader::from_path(out.join("sweep.csv")).unwrap();
    assert_eq!(r.records().count(), 0);
}

#[test]
fn shipped_configs_parse() {
    for entry in fs::read_dir(configs()).unwrap() {
        let path = entry.unwrap().path();
        mudsense::config::ExperimentConfig::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    }
}

#[test]
fn calibrate_scenario_writes_table() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("cal");
    let cfg = configs().join("calibrate.toml");
    let o = mudsense(&["run", cfg.to_str().unwrap(), "--plots", "off", "--out", out.to_str().unwrap()]);
    assert!(o.status.success());
    let rows = csv::Reader::from_path(out.join("calibration.csv")).unwrap().records().count();
    assert_eq!(rows, 8);
    assert!(String::from_utf8_lossy(&o.stdout).contains("rmse"));
}
