use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn basecagg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_basecagg")).args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write_config(dir: &Path, body: &str) -> String {
    let path = dir.join("config.toml");
    fs::write(&path, body).unwrap();
    path.to_str().unwrap().to_string()
}

const SMALL: &str = "rounds = 8\n[data]\ntrain_samples = 1000\ntest_samples = 200\nfeatures = 5\n";

#[test]
fn run_writes_csv_and_manifest_and_guards_overwrite() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("run");
    let out_s = out.to_str().unwrap();

    let o = basecagg(&["run", "--config", &cfg, "--out", out_s, "--seed", "5"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("metrics.csv")).unwrap();
    assert!(csv.starts_with("round,wallclock_virtual,accuracy,loss,mean_staleness,dropouts,overflow_warnings\n"));
    assert_eq!(csv.lines().count(), 9);
    let manifest = fs::read_to_string(out.join("manifest.toml")).unwrap();
    assert!(manifest.contains("seed = 5"));
    assert!(manifest.contains("scheme = \"basecagg\""));
    assert!(manifest.contains("[config.protocol]"));

    let again = basecagg(&["run", "--config", &cfg, "--out", out_s, "--seed", "5"]);
    assert!(!again.status.success());
    assert!(stderr(&again).contains("--force"));

    let forced = basecagg(&["run", "--config", &cfg, "--out", out_s, "--seed", "5", "--force"]);
    assert!(forced.status.success());
    assert_eq!(fs::read_to_string(out.join("metrics.csv")).unwrap(), csv);
}

#[test]
fn scheme_flag_and_seed_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    let o = basecagg(&["run", "--config", &cfg, "--out", a.to_str().unwrap(), "--scheme", "fedbuff-float"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(fs::read_to_string(a.join("manifest.toml")).unwrap().contains("scheme = \"fedbuff-float\""));
    let o = basecagg(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--seed", "77"]);
    assert!(o.status.success());
    assert_ne!(fs::read(a.join("metrics.csv")).unwrap(), fs::read(b.join("metrics.csv")).unwrap());

    let bad = basecagg(&["run", "--config", &cfg, "--out", b.to_str().unwrap(), "--scheme", "fedbuff"]);
    assert!(!bad.status.success());
}

#[test]
fn unknown_config_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "rounds = 3\n[protocol]\nbuffer = 4\n");
    let o = basecagg(&["run", "--config", &cfg, "--out", tmp.path().join("x").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("buffer"), "{}", stderr(&o));
}

#[test]
fn sweep_runs_each_point_with_its_own_seed() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}[sweep]\naxis = \"c_l\"\nvalues = [16, 65536]\n"));
    let out = tmp.path().join("sweep");
    let o = basecagg(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap(), "--seed", "3"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 3);
    let m0 = fs::read_to_string(out.join("000_c_l=16/manifest.toml")).unwrap();
    let m1 = fs::read_to_string(out.join("001_c_l=65536/manifest.toml")).unwrap();
    assert!(m0.contains("c_l = 16"));
    assert!(m1.contains("c_l = 65536"));
    let seed = |m: &str| m.lines().find(|l| l.starts_with("seed = ")).unwrap().to_string();
    assert_ne!(seed(&m0), seed(&m1));

    // Same master seed, same child seeds and outputs.
    let out2 = tmp.path().join("sweep2");
    basecagg(&["sweep", "--config", &cfg, "--out", out2.to_str().unwrap(), "--seed", "3"]);
    assert_eq!(
        fs::read(out.join("001_c_l=65536/metrics.csv")).unwrap(),
        fs::read(out2.join("001_c_l=65536/metrics.csv")).unwrap()
    );
}

#[test]
fn empty_sweep_grid_is_an_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "[sweep]\naxis = \"c_l\"\nvalues = []\n");
    let o = basecagg(&["sweep", "--config", &cfg, "--out", tmp.path().join("s").to_str().unwrap()]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("empty"));
}

#[test]
fn sweep_reports_partial_failure() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), &format!("{SMALL}[sweep]\naxis = \"c_l\"\nvalues = [0, 256]\n"));
    let out = tmp.path().join("sweep");
    let o = basecagg(&["sweep", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(!o.status.success());
    let text = stdout(&o);
    assert!(text.contains("000_c_l=0") && text.contains("FAILED"), "{text}");
    assert!(text.contains("001_c_l=256") && text.contains(" ok "), "{text}");
    assert!(stderr(&o).contains("1 of 2 sweep points failed"));
    let summary = fs::read_to_string(out.join("sweep_summary.csv")).unwrap();
    assert!(summary.contains("failed"));
    assert!(out.join("001_c_l=256/metrics.csv").exists());
}

#[test]
fn verify_passes_and_reports_zero_information() {
    let o = basecagg(&["verify"]);
    let text = stdout(&o);
    assert!(o.status.success(), "{text}");
    assert!(text.contains("PASS mutual-information-zero: 0.0 bits"), "{text}");
    assert!(!text.contains("FAIL"));
}

#[test]
fn verify_detects_a_corrupted_share() {
    let o = basecagg(&["verify", "--inject-fault", "--rounds", "100"]);
    assert!(!o.status.success());
    assert!(stdout(&o).contains("FAIL exact-field-aggregate"));
}

#[test]
fn compare_runs_both_schemes_on_one_schedule() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), SMALL);
    let out = tmp.path().join("cmp");
    let o = basecagg(&["compare", "--config", &cfg, "--out", out.to_str().unwrap()]);
    assert!(o.status.success(), "{}", stderr(&o));
    let a = fs::read_to_string(out.join("basecagg.csv")).unwrap();
    let b = fs::read_to_string(out.join("fedbuff-float.csv")).unwrap();
    let col = |s: &str, i: usize| -> Vec<String> { s.lines().map(|l| l.split(',').nth(i).unwrap().to_string()).collect() };
    // Virtual time, staleness and dropouts come from the shared schedule.
    for i in [1, 4, 5] {
        assert_eq!(col(&a, i), col(&b, i));
    }
    assert!(stdout(&o).contains("difference"));
}
