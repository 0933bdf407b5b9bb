use std::process::{Command, Output};

fn bench(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bench")).args(args).output().expect("run bench")
}

fn stdout(o: &Output) -> String {
    String::from_utf8(o.stdout.clone()).unwrap()
}

#[test]
fn transfer_csv_has_fixed_header_and_plateau() {
    let o = bench(&["transfer", "--min", "65536", "--max", "67108864", "--step", "65536"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let text = stdout(&o);
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("bytes,mean_us,rate_gbps"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 1024);
    let last_rate: f64 = rows.last().unwrap().split(',').nth(2).unwrap().parse().unwrap();
    assert!((last_rate - 5.07).abs() < 0.01, "{last_rate}");
}

#[test]
fn dual_json_round_trips() {
    let o = bench(&["dual", "--dims", "4k", "--n", "10,100", "--repeats", "3", "--out", "json", "--seed", "7"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 8);
    assert_eq!(v["environment"]["seed"], 7);
    assert_eq!(rows[0]["samples"].as_array().unwrap().len(), 3);
}

#[test]
fn desk_scale_caps_are_validation_errors() {
    let o = bench(&["dual", "--n", "10000"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("paper scale"));
    let o = bench(&["sweep", "--max", "8192"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bench(&["--scale", "huge", "kernels"]);
    assert_eq!(o.status.code(), Some(2));
    let o = bench(&["--profile", "/definitely/missing.json", "kernels"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn sweep_writes_map_and_csv_file() {
    let dir = tempfile::tempdir().unwrap();
    let png = dir.path().join("map.png");
    let csv = dir.path().join("rates.csv");
    let o = bench(&[
        "--profile",
        "synthetic",
        "sweep",
        "--max",
        "1024",
        "--map",
        png.to_str().unwrap(),
        "--out",
        csv.to_str().unwrap(),
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let bytes = std::fs::read(&png).unwrap();
    assert!(bytes.starts_with(&[0x89, b'P', b'N', b'G']));
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next(), Some("width,height,rate_gbps"));
    assert_eq!(text.lines().count(), 1 + 64);
}

#[test]
fn kernels_report_speedup() {
    let o = bench(&["kernels", "--out", "json"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let speedup = v["summary"]["speedup_pct"].as_f64().unwrap();
    assert!((speedup - 15.86).abs() < 0.1, "{speedup}");
    assert_eq!(v["rows"][0]["avg_us"], 679);
}

#[test]
fn ttest_separates_8k_variants() {
    let o = bench(&["ttest", "--out", "json"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let v: serde_json::Value = serde_json::from_str(&stdout(&o)).unwrap();
    let p = v["rows"][0]["p"].as_f64().unwrap();
    assert!(p <= 1e-10, "{p}");
    let o = bench(&["ttest", "--a", "2b-final", "--b", "2b-final"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn calibrate_reproduces_the_shipped_profile() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.json");
    let o = bench(&["calibrate", "--out", path.to_str().unwrap()]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let fitted = floodstream_core::DeviceProfile::from_json(&std::fs::read_to_string(&path).unwrap()).unwrap();
    assert_eq!(fitted, floodstream_core::DeviceProfile::paper_calibrated());
    // The fitted profile loads back through --profile.
    let o = bench(&["--profile", path.to_str().unwrap(), "kernels", "--iterations", "1"]);
    assert!(o.status.success());

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"name":"x","kernel_runs":[],"stream_runs":[]}"#).unwrap();
    let o = bench(&["calibrate", "--targets", bad.to_str().unwrap()]);
    assert_eq!(o.status.code(), Some(2));
}
