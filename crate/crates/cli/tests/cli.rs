use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use afc_cli::timeline::{build_timeline, build_timeline_with, TimelineKind, PHASE_NAMES};
use afc_cli::Scenario;

fn scenario(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("scenarios").join(name)
}

fn afcmem(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_afcmem")).args(args).env_remove("AFC_OUT_DIR").output().unwrap()
}

fn run_ok(args: &[&str]) {
    let out = afcmem(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

/// A small copy of the time-bin scenario with fewer trials.
fn quick_timebin(dir: &Path, trials: u64) -> PathBuf {
    let text = fs::read_to_string(scenario("timebin_fidelity.toml")).unwrap();
    let text = text.replace("trials = 100000", &format!("trials = {trials}"));
    let path = dir.join("quick.toml");
    fs::write(&path, text).unwrap();
    path
}

fn read_csv(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path).unwrap().lines().skip(1).map(|l| l.split(',').map(str::to_string).collect()).collect()
}

#[test]
fn bundled_scenarios_round_trip() {
    for name in ["echo_train.toml", "timebin_fidelity.toml"] {
        let parsed = Scenario::load(&scenario(name)).unwrap();
        parsed.validate().unwrap();
        let text = parsed.to_toml_string().unwrap();
        let again = Scenario::from_toml_str(&text, Path::new(name)).unwrap();
        assert_eq!(parsed, again, "{name}");
        assert_eq!(text, again.to_toml_string().unwrap());
    }
}

#[test]
fn echo_scenario_outputs_silenced_train_and_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    run_ok(&["simulate", "--scenario", scenario("echo_train.toml").to_str().unwrap(), "--out", out.to_str().unwrap()]);
    let summary: serde_json::Value = serde_json::from_slice(&fs::read(out.join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["echo"]["schedule"], "silenced at n=1..2, recovered at n=3");
    let rows = read_csv(&out.join("efficiency.csv"));
    assert_eq!(rows.len(), 6);
    let eta: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!(eta.windows(2).all(|w| w[1] < w[0]), "{eta:?}");
    assert!((eta[0] - 0.109).abs() < 0.002);
    assert!(summary["pump"]["enhancement"].as_f64().unwrap() > 2.0);
    assert!(out.join("trace.csv").exists() && out.join("spectrum.csv").exists());
}

#[test]
fn identical_seed_gives_identical_bytes() {
    let dir = tempfile::tempdir().unwrap();
    let sc = quick_timebin(dir.path(), 5000);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for o in [&a, &b] {
        run_ok(&["timebin", "--scenario", sc.to_str().unwrap(), "--out", o.to_str().unwrap()]);
    }
    for f in ["fidelity.csv", "traces.csv", "histogram_early.csv", "fidelity.txt", "summary.json"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let c = dir.path().join("c");
    run_ok(&["timebin", "--scenario", sc.to_str().unwrap(), "--seed", "99", "--out", c.to_str().unwrap()]);
    assert_ne!(fs::read(a.join("fidelity.csv")).unwrap(), fs::read(c.join("fidelity.csv")).unwrap());
}

#[test]
fn timebin_table_beats_bound() {
    let dir = tempfile::tempdir().unwrap();
    let sc = quick_timebin(dir.path(), 5000);
    let out = dir.path().join("o");
    run_ok(&["timebin", "--scenario", sc.to_str().unwrap(), "--out", out.to_str().unwrap(), "--format", "json"]);
    let rows: Vec<afc_core::bench::FidelityRow> =
        serde_json::from_slice(&fs::read(out.join("fidelity.json")).unwrap()).unwrap();
    assert_eq!(rows.len(), 5);
    assert!(rows.iter().all(|r| r.violation_sigmas > 5.0));
    assert!(fs::read_to_string(out.join("fidelity.txt")).unwrap().contains("|e>+i|l>"));
}

fn expect_config_error(dir: &Path, text: &str, needle: &str) {
    let path = dir.join("bad.toml");
    fs::write(&path, text).unwrap();
    let out_dir = dir.join("never");
    let out = afcmem(&["timebin", "--scenario", path.to_str().unwrap(), "--out", out_dir.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains(needle), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!out_dir.exists(), "no partial outputs");
}

#[test]
fn malformed_scenarios_exit_2_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let base = fs::read_to_string(scenario("timebin_fidelity.toml")).unwrap();
    expect_config_error(dir.path(), &base.replace("mu = [0.2,", "mu = [-0.2,"), "qubit.mu[0]");
    expect_config_error(dir.path(), &base.replace("finesse = 7.8\n", "finesse = 7.8\nfinnese = 1\n"), "finnese");
    expect_config_error(dir.path(), &base.replace("schema_version = 1", "schema_version = 2"), "schema_version");
    expect_config_error(dir.path(), &base.replace("separation_ns = 40.0", "separation_ns = 45.0"), "separation");
    expect_config_error(dir.path(), &base.replace("delta_MHz = 6.25\nfinesse = 7.8\nbandwidth_MHz = 150.0\nbackground_d0 = 0.1\n\n[basis_comb.calibrate]", "delta_MHz = 6.25\nstorage_ns = 160.0\nfinesse = 7.8\nbandwidth_MHz = 150.0\nbackground_d0 = 0.1\n\n[basis_comb.calibrate]"), "exactly one");
}

#[test]
fn unstable_pump_step_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("pump.toml");
    fs::write(&path, "schema_version = 1\n[pump]\npump_rate_per_s = 1e5\ndt_us = 1000.0\n").unwrap();
    let out = afcmem(&["simulate", "--scenario", path.to_str().unwrap(), "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("o").exists());
}

#[test]
fn output_dir_defaults_to_env_var() {
    let dir = tempfile::tempdir().unwrap();
    let target = dir.path().join("from_env");
    let out = Command::new(env!("CARGO_BIN_EXE_afcmem"))
        .args(["bound", "--mu", "0.2,0.8,3.2", "--eta", "0.069"])
        .env("AFC_OUT_DIR", &target)
        .output()
        .unwrap();
    assert!(out.status.success());
    let rows = read_csv(&target.join("bound.csv"));
    let bound: Vec<f64> = rows.iter().map(|r| r[2].parse().unwrap()).collect();
    assert!((bound[1] - 0.809).abs() < 0.02);
    assert!(bound.windows(2).all(|w| w[1] >= w[0]));
}

#[test]
fn bound_rejects_impossible_efficiency() {
    let dir = tempfile::tempdir().unwrap();
    let out = afcmem(&["bound", "--mu", "0.8", "--eta", "1.5", "--out", dir.path().join("o").to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn timeline_defaults_and_overrides() {
    let single = build_timeline(TimelineKind::SingleAfc);
    let storage = single.phase("storage_trials").unwrap();
    assert!((storage.duration() - 0.25).abs() < 1e-12);
    assert!((single.phase("initialization").unwrap().duration() - 1.5).abs() < 1e-12);
    assert!((single.phase("afc_preparation").unwrap().duration() - 1.25).abs() < 1e-12);
    assert!((single.phase("wait").unwrap().duration() - 0.2).abs() < 1e-12);

    let double = build_timeline(TimelineKind::DoubleAfc);
    let prep = double.phase("afc_preparation").unwrap();
    assert_eq!(prep.repetitions, 9000);
    assert!((prep.period - 50e-6).abs() < 1e-18);

    for tl in [single, double, build_timeline_with(TimelineKind::SingleAfc, &[("wait".into(), 0)]).unwrap()] {
        let sum: f64 = tl.phases.iter().map(|p| p.duration()).sum();
        assert!((sum - tl.total_duration()).abs() < 1e-12);
        assert_eq!(tl.phases[0].start, 0.0);
        for w in tl.phases.windows(2) {
            assert!(w[1].start >= w[0].end() - 1e-15 && (w[1].start - w[0].end()).abs() < 1e-12);
        }
    }
    let without = build_timeline_with(TimelineKind::SingleAfc, &[("wait".into(), 0)]).unwrap();
    assert!(without.phase("wait").is_none());
    assert_eq!(without.phases.len(), PHASE_NAMES.len() - 1);
    assert!(build_timeline_with(TimelineKind::SingleAfc, &[("nap".into(), 1)]).is_err());
}

#[test]
fn timeline_subcommand_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("t");
    run_ok(&["timeline", "--kind", "single-afc", "--set", "wait=0", "--out", out.to_str().unwrap()]);
    let rows = read_csv(&out.join("timeline.csv"));
    assert_eq!(rows.len(), 3);
    assert!(rows.iter().all(|r| r[0] != "wait"));
}

#[test]
fn sweep_over_readout_orders() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let sc = scenario("echo_train.toml");
    run_ok(&["sweep", "--scenario", sc.to_str().unwrap(), "--param", "readout.orders", "--values", "1,2,3,4,5,6,7,8,9,10", "--out", out.to_str().unwrap()]);
    let rows = read_csv(&out.join("sweep.csv"));
    let eta: Vec<f64> = rows.iter().map(|r| r[3].parse().unwrap()).collect();
    assert_eq!(eta.len(), 10);
    assert!(eta.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn sweep_over_finesse_decays_slower_at_higher_finesse() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let sc = scenario("echo_train.toml");
    run_ok(&["sweep", "--scenario", sc.to_str().unwrap(), "--param", "comb.finesse", "--values", "8.7,14.5", "--out", out.to_str().unwrap()]);
    let rows = read_csv(&out.join("sweep.csv"));
    let ratio = |value: &str| {
        let eta: Vec<f64> = rows.iter().filter(|r| r[0] == format!("\"{value}\"")).map(|r| r[3].parse().unwrap()).collect();
        eta[eta.len() - 1] / eta[0]
    };
    assert!(ratio("14.5") > ratio("8.7"));
}

#[test]
fn sweep_over_comb_shift_is_sinusoid_with_period_one_over_t() {
    let dir = tempfile::tempdir().unwrap();
    let sc = quick_timebin(dir.path(), 2000);
    let text = fs::read_to_string(&sc).unwrap().replace("mu = [0.2, 0.4, 0.8, 1.6, 3.2]", "mu = [0.8]");
    fs::write(&sc, text).unwrap();
    let period = 1.0 / 320e-9;
    let values: Vec<String> = (0..8).map(|k| format!("{}", f64::from(k) * period / 8.0 * 1e-6)).collect();
    let out = dir.path().join("s");
    run_ok(&["sweep", "--scenario", sc.to_str().unwrap(), "--param", "double_comb.delta_f_MHz", "--values", &values.join(","), "--out", out.to_str().unwrap()]);
    let ie: Vec<f64> = read_csv(&out.join("sweep.csv")).iter().map(|r| r[9].parse().unwrap()).collect();
    // Project onto the first harmonic of 1/T; the rest must be small.
    let n = ie.len() as f64;
    let mean = ie.iter().sum::<f64>() / n;
    let (mut c, mut s) = (0.0, 0.0);
    for (k, y) in ie.iter().enumerate() {
        let ph = 2.0 * std::f64::consts::PI * k as f64 / n;
        c += (y - mean) * ph.cos() * 2.0 / n;
        s += (y - mean) * ph.sin() * 2.0 / n;
    }
    let residual = ie.iter().enumerate().map(|(k, y)| {
        let ph = 2.0 * std::f64::consts::PI * k as f64 / n;
        (y - mean - c * ph.cos() - s * ph.sin()).powi(2)
    });
    let rms = (residual.sum::<f64>() / n).sqrt();
    let amp = c.hypot(s);
    assert!(amp > 0.5 * mean, "fringe amplitude {amp}, mean {mean}");
    assert!(rms < 0.05 * amp, "residual {rms} vs amplitude {amp}");
}

#[test]
fn sweep_rejects_unknown_path_before_running() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("s");
    let sc = scenario("echo_train.toml");
    for param in ["comb.finese", "nosuch.key", "comb"] {
        let o = afcmem(&["sweep", "--scenario", sc.to_str().unwrap(), "--param", param, "--values", "1", "--out", out.to_str().unwrap()]);
        assert_eq!(o.status.code(), Some(2), "{param}");
    }
    assert!(!out.exists());
}

#[test]
fn validate_reports_ok() {
    let out = afcmem(&["validate", "--scenario", scenario("timebin_fidelity.toml").to_str().unwrap()]);
    assert!(out.status.success());
    assert!(String::from_utf8_lossy(&out.stdout).contains("ok"));
}
