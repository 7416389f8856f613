use std::path::Path;
use std::process::{Command, Output};

use combphase::calibration;
use combphase::scenario::{self, MetricsSpec, TrackingSample};
use combphase::EngineGeometry;

fn combphase(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_combphase"))
        .args(args)
        .output()
        .expect("spawn combphase")
}

fn stdout(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8(o.stdout.clone()).unwrap()
}

fn path(p: &Path) -> &str {
    p.to_str().unwrap()
}

#[test]
fn predict_prints_one_row() {
    let out = stdout(&combphase(&[
        "predict", "--n", "1300", "--egr", "0.2", "--phi", "0.6", "--p-ivc", "3.0", "--t-ivc", "380",
    ]));
    let lines: Vec<&str> = out.lines().collect();
    assert_eq!(lines[0], "p_soi,t_soi,soc,ca50,soc_full,burn_duration,ca50_full");
    let v: Vec<f64> = lines[1].split(',').map(|x| x.parse().unwrap()).collect();
    assert_eq!(v.len(), 7);
    assert!(v[3] > v[2], "CA50 after SOC");
    assert!((v[2] - v[4]).abs() < 1.0);
}

#[test]
fn gen_data_is_seeded() {
    let a = stdout(&combphase(&["gen-data", "--count", "12", "--noise", "0.3", "--seed", "1"]));
    let b = stdout(&combphase(&["gen-data", "--count", "12", "--noise", "0.3", "--seed", "1"]));
    let c = stdout(&combphase(&["gen-data", "--count", "12", "--noise", "0.3", "--seed", "2"]));
    assert_eq!(a, b);
    assert_ne!(a, c);
    let data = calibration::read_dataset(a.as_bytes(), "stdout", &EngineGeometry::default()).unwrap();
    assert_eq!(data.len(), 12);
}

#[test]
fn calibrate_writes_params_and_report() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    let params = dir.path().join("p.txt");
    let report = dir.path().join("r.csv");
    stdout(&combphase(&["gen-data", "--count", "30", "--out", path(&data)]));
    let o = combphase(&[
        "calibrate", "--data", path(&data), "--perturb", "0.1", "--max-epochs", "25",
        "--report", path(&report), "--out", path(&params),
    ]);
    stdout(&o);
    let p = combphase::ModelParams::read_param_file(&params).unwrap();
    p.validate().unwrap();
    let text = std::fs::read_to_string(&report).unwrap();
    let rmse: Vec<f64> = text
        .lines()
        .skip(1)
        .take_while(|l| !l.starts_with('#'))
        .map(|l| l.split(',').nth(1).unwrap().parse().unwrap())
        .collect();
    assert!(rmse.len() >= 2);
    assert!(rmse.windows(2).all(|w| w[1] <= w[0]));
    assert!(String::from_utf8_lossy(&o.stderr).contains("rmse"));
}

#[test]
fn simulate_csv_reproduces_reported_metrics() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("run.csv");
    let metrics = dir.path().join("m.toml");
    stdout(&combphase(&[
        "simulate", "--preset", "case2", "--controller", "feedforward",
        "--out", path(&csv), "--metrics", path(&metrics),
    ]));
    let reported: scenario::RunMetrics = toml::from_str(&std::fs::read_to_string(&metrics).unwrap()).unwrap();

    // Recompute from the raw columns without the library reader.
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap().split(',').collect();
    let col = |name: &str| header.iter().position(|h| *h == name).unwrap();
    let (t, y, r) = (col("time_s"), col("ca50"), col("ca50_ref"));
    let rows: Vec<TrackingSample> = lines
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            TrackingSample {
                time_s: f[t].parse().unwrap(),
                ca50: (!f[y].is_empty()).then(|| f[y].parse().unwrap()),
                ca50_ref: f[r].parse().unwrap(),
            }
        })
        .collect();
    let spec = MetricsSpec { band: reported.band, split: 5.0, duration: 10.0, steady_window: 2.0 };
    let again = scenario::compute_metrics(&rows, &spec);
    assert_eq!(again, reported);
    let post = reported.post();
    let steady: Vec<f64> = rows
        .iter()
        .filter(|s| s.time_s >= 8.0 - 1e-9)
        .filter_map(|s| s.ca50.map(|c| c - s.ca50_ref))
        .collect();
    let lo = steady.iter().copied().fold(f64::INFINITY, f64::min);
    assert_eq!(lo, post.steady_state_error_band[0]);
}

#[test]
fn simulate_reads_scenario_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("s.toml");
    std::fs::write(
        &cfg,
        "preset = \"case3\"\nduration = 6.0\n[controller]\nkind = \"adaptive\"\n[outputs]\ncsv = \"out.csv\"\n",
    )
    .unwrap();
    let o = combphase(&["simulate", path(&cfg)]);
    stdout(&o);
    let text = std::fs::read_to_string(dir.path().join("out.csv")).unwrap();
    assert_eq!(text.lines().next().unwrap(), scenario::CSV_HEADER.join(","));
    assert!(String::from_utf8_lossy(&o.stderr).contains("[[segments]]"));
}

#[test]
fn sensitivity_and_compare_soc_emit_tables() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("d.csv");
    stdout(&combphase(&["gen-data", "--count", "20", "--out", path(&data)]));
    let s = stdout(&combphase(&["sensitivity", "--data", path(&data)]));
    assert_eq!(s.lines().count(), 12);
    assert!(s.starts_with("source,delta,mean,std_dev,max_abs_error"));
    let o = combphase(&["compare-soc", "--count", "15"]);
    assert_eq!(stdout(&o).lines().count(), 16);
    assert!(String::from_utf8_lossy(&o.stderr).contains("max_abs_error"));
}

#[test]
fn errors_exit_nonzero_with_diagnostic() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.csv");
    std::fs::write(&bad, "not,a,header\n").unwrap();
    for args in [
        vec!["calibrate", "--data", path(&bad)],
        vec!["calibrate", "--data", "/nonexistent/d.csv"],
        vec!["simulate", "--preset", "case9"],
        vec!["predict", "--n", "1300", "--egr", "0.2", "--phi", "-1", "--p-ivc", "3", "--t-ivc", "380"],
    ] {
        let o = combphase(&args);
        assert!(!o.status.success(), "{args:?} should fail");
        assert!(String::from_utf8_lossy(&o.stderr).starts_with("error:"), "{args:?}");
    }
}
