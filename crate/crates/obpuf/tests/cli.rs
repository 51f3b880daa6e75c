use std::path::Path;
use std::process::{Command, Output};

use obpuf::output::read_csv;

fn obpuf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_obpuf")).args(args).output().expect("spawn obpuf")
}

fn out_arg(dir: &Path) -> String {
    dir.to_str().unwrap().to_owned()
}

#[test]
fn usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let d = out_arg(dir.path());
    let o = obpuf(&["--out", &d, "--seed", "1", "design", "--p", "9", "--m", "3"]);
    assert_eq!(o.status.code(), Some(2));
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("m = 3") && err.contains("8"), "{err}");

    assert_eq!(obpuf(&["design", "--no-such-flag"]).status.code(), Some(2));
    assert_eq!(obpuf(&["no-such-command"]).status.code(), Some(2));
    assert_eq!(obpuf(&["--out", &d, "capability", "--row", "4,4"]).status.code(), Some(2));
    assert_eq!(obpuf(&["--out", &d, "capability", "--row", "4,4,9"]).status.code(), Some(2));
    assert_eq!(obpuf(&["--out", &d, "--config", "/nonexistent.toml", "design"]).status.code(), Some(2));

    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "unknown_key = 3\n").unwrap();
    assert_eq!(obpuf(&["--out", &d, "--config", cfg.to_str().unwrap(), "design"]).status.code(), Some(2));
}

#[test]
fn runtime_errors_exit_with_one() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("not-a-dir");
    std::fs::write(&file, "").unwrap();
    let o = obpuf(&["--out", file.to_str().unwrap(), "--seed", "1", "capability"]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn missing_seed_is_drawn_and_echoed() {
    let dir = tempfile::tempdir().unwrap();
    let o = obpuf(&["--out", &out_arg(dir.path()), "design", "--samples", "200", "--trials", "4"]);
    assert!(o.status.success());
    let err = String::from_utf8_lossy(&o.stderr);
    let seed: u64 = err.trim().strip_prefix("seed: ").expect("echoed seed").parse().unwrap();
    let f = read_csv(&dir.path().join("fhd_summary.csv")).unwrap();
    assert!(f.provenance.contains(&format!("seed={seed} ")), "{}", f.provenance);
}

fn files_of(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.file_name().unwrap() != "timing.csv")
        .map(|p| (p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn same_seed_gives_identical_outputs() {
    let runs: [&[&str]; 4] = [
        &["design", "--samples", "500", "--trials", "6"],
        &["protocol", "--n-ins", "4", "--p", "2", "--m", "2", "--genuine", "5", "--impostors", "5", "--calibration-trials", "5000"],
        &["attack", "--family", "fixed", "--k", "16", "--sessions", "3", "--rounds", "40", "--generations", "5", "--test-crps", "200"],
        &["distances", "--trials", "2000", "--devices", "3", "--calibration-trials", "5000"],
    ];
    for args in runs {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        for dir in [&a, &b] {
            let mut full = vec!["--seed", "17", "--out", dir.path().to_str().unwrap()];
            full.extend_from_slice(args);
            let o = obpuf(&full);
            assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
        }
        let (fa, fb) = (files_of(a.path()), files_of(b.path()));
        assert!(!fa.is_empty());
        assert_eq!(fa, fb, "{args:?}");
    }
}

#[test]
fn design_defaults_and_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let o = obpuf(&["--seed", "2", "--out", &out_arg(dir.path()), "design"]);
    assert!(o.status.success());
    let f = read_csv(&dir.path().join("fhd_summary.csv")).unwrap();
    assert_eq!(f.get(0, "k"), Some("64"));
    assert_eq!(f.get(0, "m"), Some("3"));
    assert_eq!(f.get(0, "p"), Some("4"));
    assert_eq!(f.get(0, "n_ins"), Some("4"));
    assert_eq!(f.get(0, "samples"), Some("10000"));
    let h = read_csv(&dir.path().join("fhd_histogram.csv")).unwrap();
    let total: u64 = h.records.iter().map(|r| r[2].parse::<u64>().unwrap()).sum();
    assert_eq!(total, 10_000);
    assert!(dir.path().join("patterns.json").exists());
}

#[test]
fn capability_rows_and_custom_configurations() {
    let dir = tempfile::tempdir().unwrap();
    let start = std::time::Instant::now();
    let o = obpuf(&["--out", &out_arg(dir.path()), "capability", "--form", "both"]);
    assert!(o.status.success());
    assert!(start.elapsed().as_secs() < 10);
    let t = read_csv(&dir.path().join("capability.csv")).unwrap();
    assert_eq!(t.records.len(), 7 * 3 * 2);
    let d = read_csv(&dir.path().join("discrepancy.csv")).unwrap();
    assert_eq!(d.records.len(), 7 * 3 * 2);
    let n_eer: usize = t.get(0, "n_eer").unwrap().parse().unwrap();
    let n_th: usize = t.get(0, "n_th").unwrap().parse().unwrap();
    assert_eq!(n_eer, n_th + 1);

    let dir = tempfile::tempdir().unwrap();
    let o = obpuf(&["--out", &out_arg(dir.path()), "--format", "json", "capability", "--row", "3,2,1", "--target", "1e-4"]);
    assert!(o.status.success());
    let v: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("capability.json")).unwrap()).unwrap();
    let rows = v["rows"].as_array().unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0]["n_ins"], 3);
    assert_eq!(rows[0]["status"], "ok");
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("design.toml");
    std::fs::write(&cfg, "k = 32\np = 2\nsamples = 300\ntrials = 4\nseed = 99\n").unwrap();
    let out = dir.path().join("out");
    let o = obpuf(&["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "design", "--p", "3"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    assert!(o.stderr.is_empty(), "a configured seed is not echoed");
    let f = read_csv(&out.join("fhd_summary.csv")).unwrap();
    assert_eq!(f.get(0, "k"), Some("32"));
    assert_eq!(f.get(0, "p"), Some("3"));
    assert!(f.provenance.contains("seed=99 "));
}

#[test]
fn socket_and_inproc_transcripts_agree() {
    let mut transcripts = Vec::new();
    for transport in ["inproc", "socket"] {
        let dir = tempfile::tempdir().unwrap();
        let o = obpuf(&[
            "--seed",
            "8",
            "--out",
            dir.path().to_str().unwrap(),
            "protocol",
            "--n-ins",
            "8",
            "--n",
            "42",
            "--n-th",
            "30",
            "--genuine",
            "20",
            "--impostors",
            "10",
            "--calibration-trials",
            "5000",
            "--transport",
            transport,
        ]);
        assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
        transcripts.push((
            std::fs::read(dir.path().join("genuine.jsonl")).unwrap(),
            std::fs::read(dir.path().join("impostor.jsonl")).unwrap(),
        ));
    }
    assert_eq!(transcripts[0], transcripts[1]);
    assert_eq!(String::from_utf8_lossy(&transcripts[0].0).lines().count(), 20);
}

#[test]
fn baseline_mode_writes_report_and_timing() {
    let dir = tempfile::tempdir().unwrap();
    let o = obpuf(&[
        "--seed",
        "3",
        "--out",
        &out_arg(dir.path()),
        "attack",
        "--baseline",
        "--k",
        "16",
        "--baseline-crps",
        "500",
        "--baseline-test-crps",
        "500",
        "--baseline-generations",
        "100",
        "--runs",
        "2",
    ]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let r = read_csv(&dir.path().join("baseline_report.csv")).unwrap();
    assert_eq!(r.records.len(), 2);
    assert_eq!(r.get(1, "seed"), Some("4"));
    let acc: f64 = r.get(0, "test_accuracy").unwrap().parse().unwrap();
    assert!(acc > 0.8);
    let t = read_csv(&dir.path().join("timing.csv")).unwrap();
    assert!(t.get(0, "wall_seconds").unwrap().parse::<f64>().unwrap() >= 0.0);
}
