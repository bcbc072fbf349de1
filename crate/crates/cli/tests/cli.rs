use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn paper_config() -> String {
    fs::read_to_string(Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/paper.toml")).unwrap()
}

/// The sample config on a coarse grid so that runs take a fraction of a second.
fn small_config() -> String {
    paper_config().replace("n_q = 101", "n_q = 21").replace("n_l = 51", "n_l = 11")
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let path = dir.join("config.toml");
    fs::write(&path, text).unwrap();
    path
}

fn xvenue(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_xvenue"))
        .args(args)
        .env_remove("XVENUE_OUTPUT_DIR")
        .output()
        .unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn csv_rows(path: &Path) -> Vec<Vec<String>> {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .map(|l| l.split(',').map(String::from).collect())
        .collect()
}

#[test]
fn curve_has_expected_endpoints() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &paper_config());
    let out = dir.path().join("out");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "curve", "--points", "11"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let rows = csv_rows(&out.join("curve.csv"));
    assert_eq!(rows[0], ["t", "q"]);
    assert_eq!(rows.len(), 12);
    assert_eq!(rows[1], ["0", "50000"]);
    assert_eq!(rows[11], ["10", "0"]);
    let qs: Vec<f64> = rows[1..].iter().map(|r| r[1].parse().unwrap()).collect();
    assert!(qs.windows(2).all(|w| w[1] < w[0]));
}

#[test]
fn solve_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "solve"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        tables.push(fs::read(out.join("value_policy.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    let text = String::from_utf8(tables[0].clone()).unwrap();
    let header = text.lines().next().unwrap();
    assert_eq!(header, "t,q,spread_1,spread_2,imbalance_1,imbalance_2,v,l_1,l_2,p_1,p_2,m_1,m_2");
    // 10 decision times, 21 inventories, 36 states
    assert_eq!(text.lines().count(), 1 + 10 * 21 * 36);
}

#[test]
fn solve_cache_reuses_entries() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let text = small_config().replace("[run]\n", &format!("[run]\ncache_dir = {:?}\n", s(&cache)));
    let cfg = write_config(dir.path(), &text);
    let mut tables = Vec::new();
    for name in ["a", "b"] {
        let out = dir.path().join(name);
        let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "solve"]);
        assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
        tables.push(fs::read(out.join("value_policy.csv")).unwrap());
    }
    assert_eq!(tables[0], tables[1]);
    assert_eq!(fs::read_dir(&cache).unwrap().count(), 1);
}

#[test]
fn run_writes_every_artifact_and_plot_data_reads_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "run"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    for v in 0..10 {
        assert!(out.join(format!("events/slice_{v:03}.jsonl")).is_file());
    }
    assert!(out.join("value_policy/slice_000.csv").is_file());
    assert!(out.join("posterior.toml").is_file());
    let slices = csv_rows(&out.join("slices.csv"));
    assert_eq!(slices.len(), 11);
    assert_eq!(slices[0][0], "slice");
    // inventory telescopes
    for w in slices[1..].windows(2) {
        assert_eq!(w[0][3], w[1][2]);
    }
    let inventory = csv_rows(&out.join("inventory.csv"));
    assert_eq!(inventory[0], ["slice", "t", "q"]);
    let trace = csv_rows(&out.join("posterior_trace.csv"));
    assert_eq!(trace[0], ["slice", "parameter", "estimate"]);

    let plot = dir.path().join("plot");
    let res = xvenue(&["--output-dir", s(&plot), "plot-data", "--run-dir", s(&out)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let drift = csv_rows(&plot.join("drift_trace.csv"));
    assert_eq!(drift[0], ["slice", "mu"]);
    assert_eq!(drift.len(), 11);
    for name in ["value_vs_q.csv", "limit_vs_q.csv", "volume_vs_q.csv", "estimates_vs_slice.csv"] {
        assert!(plot.join(name).is_file(), "{name}");
    }
    let value = csv_rows(&plot.join("value_vs_q.csv"));
    let times: std::collections::BTreeSet<String> = value[1..].iter().map(|r| r[1].clone()).collect();
    assert_eq!(times.len(), 10);
    let limits = csv_rows(&plot.join("limit_vs_q.csv"));
    assert!(limits[1..].iter().all(|r| ["-1", "0", "1"].contains(&r.last().unwrap().as_str())));
}

#[test]
fn plot_data_on_empty_dir_fails_without_output() {
    let dir = tempfile::tempdir().unwrap();
    let empty = dir.path().join("empty");
    fs::create_dir(&empty).unwrap();
    let plot = dir.path().join("plot");
    let res = xvenue(&["--output-dir", s(&plot), "plot-data", "--run-dir", s(&empty)]);
    assert_eq!(res.status.code(), Some(4));
    assert!(!plot.exists());
}

#[test]
fn posterior_reloads_as_prior() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config();
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("run");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "--slices", "2", "run"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    let start = text.find("[prior]").unwrap();
    let end = text.find("[run]").unwrap();
    let reloaded = format!(
        "{}[prior]\nfile = {:?}\n\n{}",
        &text[..start],
        s(&out.join("posterior.toml")),
        &text[end..]
    );
    let cfg2 = dir.path().join("again.toml");
    fs::write(&cfg2, reloaded).unwrap();
    let res = xvenue(&["-c", s(&cfg2), "--output-dir", s(&dir.path().join("again")), "--slices", "1", "run"]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));

    // the first slice of the second run starts from the posterior of the first
    let first = csv_rows(&out.join("posterior_trace.csv"));
    let second = csv_rows(&dir.path().join("again/posterior_trace.csv"));
    let last: Vec<&Vec<String>> = first.iter().filter(|r| r[0] == "1").collect();
    assert!(!last.is_empty());
    let params: Vec<&String> = second.iter().filter(|r| r[0] == "0").map(|r| &r[1]).collect();
    assert_eq!(params, last.iter().map(|r| &r[1]).collect::<Vec<_>>());
}

#[test]
fn calibrate_reads_event_logs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &small_config());
    let out = dir.path().join("run");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "--slices", "3", "run"]);
    assert!(res.status.success());
    let cal = dir.path().join("cal");
    let events: Vec<String> = (0..3).map(|v| s(&out.join(format!("events/slice_{v:03}.jsonl"))).to_string()).collect();
    let mut args = vec!["-c", s(&cfg), "--output-dir", s(&cal), "calibrate", "--events"];
    args.extend(events.iter().map(String::as_str));
    let res = xvenue(&args);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    // batch calibration over the three logs equals the run's last posterior
    assert_eq!(fs::read(cal.join("posterior.toml")).unwrap(), fs::read(out.join("posterior.toml")).unwrap());
    assert!(cal.join("calibration_trace.csv").is_file());
}

#[test]
fn output_dir_from_environment() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &paper_config());
    let out = dir.path().join("from-env");
    let res = Command::new(env!("CARGO_BIN_EXE_xvenue"))
        .args(["-c", s(&cfg), "curve"])
        .env("XVENUE_OUTPUT_DIR", &out)
        .output()
        .unwrap();
    assert!(res.status.success());
    assert!(out.join("curve.csv").is_file());
}

#[test]
fn unknown_key_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &paper_config().replace("[grid]\n", "[grid]\nn_z = 3\n"));
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(dir.path()), "curve"]);
    assert_eq!(res.status.code(), Some(2));
    let err = String::from_utf8_lossy(&res.stderr);
    assert!(err.contains("grid") && err.contains("n_z"), "{err}");
}

#[test]
fn wrong_type_names_the_key_path() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), &paper_config().replace("q0 = 50000.0", "q0 = \"lots\""));
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(dir.path()), "curve"]);
    assert_eq!(res.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&res.stderr).contains("curve.q0"));
}

#[test]
fn missing_config_is_an_io_error() {
    let dir = tempfile::tempdir().unwrap();
    let res = xvenue(&["-c", s(&dir.path().join("nope.toml")), "--output-dir", s(dir.path()), "curve"]);
    assert_eq!(res.status.code(), Some(4));
}

#[test]
fn blow_up_is_a_numerical_error() {
    let dir = tempfile::tempdir().unwrap();
    let text = small_config().replace("[grid]\n", "[grid]\nblowup_bound = 1.0\n");
    let cfg = write_config(dir.path(), &text);
    let out = dir.path().join("out");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "solve"]);
    assert_eq!(res.status.code(), Some(3), "{}", String::from_utf8_lossy(&res.stderr));
    assert!(!out.exists());
}

const OTC_CONFIG: &str = r#"
[otc]
assets = 2
variant = "printed"
fill_probability = { kind = "logistic", a = -1.0, b = 2.0 }
rfq_prior = { alpha = 2.0, beta = 1.0 }
size_prior = { shape = 1.0, a0 = 2.0, b0 = 1.0 }
niw = { mu0 = [0.0, 0.0], kappa0 = 1.0, nu0 = 5.0, psi = [[1.0, 0.0], [0.0, 1.0]] }
"#;

const OTC_LOG: &str = r#"{"type":"prices","time":0.0,"prices":[100.0,50.0]}
{"type":"quote","time":0.0,"asset":0,"side":"bid","delta":0.5}
{"type":"rfq","time":1.0,"asset":0,"side":"bid","size":2.0,"delta":0.5,"filled":true}
{"type":"rfq","time":2.0,"asset":1,"side":"ask","size":1.0,"delta":1.0,"filled":false}
{"type":"prices","time":3.0,"prices":[100.5,49.0]}
{"type":"end","time":4.0}
"#;

#[test]
fn otc_calibrate_writes_a_reloadable_posterior() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OTC_CONFIG);
    let log = dir.path().join("otc.jsonl");
    fs::write(&log, OTC_LOG).unwrap();
    let out = dir.path().join("otc");
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(&out), "otc-calibrate", "--log", s(&log)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
    let trace = csv_rows(&out.join("otc_trace.csv"));
    assert_eq!(trace[0], ["time", "parameter", "estimate"]);

    let again = dir.path().join("again");
    let res = xvenue(&["-c", s(&out.join("otc_posterior.toml")), "--output-dir", s(&again), "otc-calibrate", "--log", s(&log)]);
    assert!(res.status.success(), "{}", String::from_utf8_lossy(&res.stderr));
}

#[test]
fn otc_log_out_of_order_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), OTC_CONFIG);
    let log = dir.path().join("otc.jsonl");
    fs::write(&log, "{\"type\":\"end\",\"time\":4.0}\n{\"type\":\"end\",\"time\":1.0}\n").unwrap();
    let res = xvenue(&["-c", s(&cfg), "--output-dir", s(dir.path()), "otc-calibrate", "--log", s(&log)]);
    assert_eq!(res.status.code(), Some(4));
}
