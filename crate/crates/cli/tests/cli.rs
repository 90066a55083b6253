use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn driftlab(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_driftlab"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn artifact_bytes(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut v: Vec<_> = fs::read_dir(dir)
        .unwrap()
        .map(|e| e.unwrap())
        .filter(|e| !e.file_name().to_string_lossy().ends_with("manifest.json"))
        .map(|e| (e.file_name().to_string_lossy().into_owned(), fs::read(e.path()).unwrap()))
        .collect();
    v.sort();
    v
}

#[test]
fn sample_to_csv_and_rerun_from_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("batch.csv");
    let o = driftlab(&["sample", "--delta", "0.1", "--mode", "per-step", "--n", "300", "--seed", "7", "--out", p(&out)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = fs::read_to_string(&out).unwrap();
    assert!(text.starts_with("sample_id,dim_0,cond\n"));
    assert_eq!(text.lines().count(), 301);

    // the manifest's config is a valid --config file and reproduces the batch
    let manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(tmp.path().join("batch.manifest.json")).unwrap()).unwrap();
    let cfg = tmp.path().join("config.json");
    fs::write(&cfg, manifest["config"].to_string()).unwrap();
    let again = tmp.path().join("again").join("batch.csv");
    let o = driftlab(&["sample", "--config", p(&cfg), "--out", p(&again)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(fs::read(&out).unwrap(), fs::read(&again).unwrap());

    let o = driftlab(&["report", p(tmp.path().join("again").as_path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn thread_count_does_not_change_output() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    for (dir, threads) in [(&a, "1"), (&b, "3")] {
        let o = driftlab(&["sweep-drift", "--n", "200", "--threads", threads, "--out", p(dir)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }
    assert_eq!(artifact_bytes(&a), artifact_bytes(&b));
}

#[test]
fn sweep_writes_seven_batches_and_trajectories() {
    let tmp = tempfile::tempdir().unwrap();
    let o = driftlab(&["sweep-drift", "--grid=-0.2,-0.1,-0.05,0,0.05,0.1,0.2", "--n", "200", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names: Vec<String> = fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    let count = |pre: &str, suf: &str| names.iter().filter(|n| n.starts_with(pre) && n.ends_with(suf)).count();
    assert_eq!(count("batch_", ".csv"), 7);
    assert_eq!(count("trajectory_", ".csv"), 7);
    assert_eq!(count("trajectory_", ".jsonl"), 7);
}

#[test]
fn config_errors_exit_two() {
    let tmp = tempfile::tempdir().unwrap();
    assert_eq!(code(&driftlab(&["sample", "--delta", "abc"])), 2);
    assert_eq!(code(&driftlab(&["sample", "--mode", "sideways"])), 2);
    assert_eq!(code(&driftlab(&["sweep-drift", "--grid=0.1,0.0", "--out", p(tmp.path())])), 2);

    let cfg = tmp.path().join("bad.json");
    fs::write(&cfg, r#"{"version":1,"seed":1,"schedule":{"beta_start":0.001,"beta_end":0.3}}"#).unwrap();
    let o = driftlab(&["sample", "--config", p(&cfg), "--out", p(&tmp.path().join("x"))]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("schedule.T"));
}

#[test]
fn numeric_failure_exits_three_and_leaves_no_output() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let o = driftlab(&["sample", "--delta", "1e307", "--n", "50", "--out", p(&out)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(!out.exists() || fs::read_dir(&out).unwrap().next().is_none());
}

#[test]
fn compare_reports_and_rejects_kind_mismatch() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b, g) = (tmp.path().join("a"), tmp.path().join("b"), tmp.path().join("g"));
    for (dir, delta) in [(&a, "0"), (&b, "0.05")] {
        let o = driftlab(&["sample", "--n", "500", "--delta", delta, "--out", p(dir)]);
        assert_eq!(code(&o), 0);
    }
    let o = driftlab(&["compare", p(&a), p(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let csv = String::from_utf8(o.stdout).unwrap();
    assert!(csv.starts_with("metric,a,b,delta,std_error,z,p_value\n"));
    assert!(csv.lines().any(|l| l.starts_with("mean,")));

    let o = driftlab(&["grid-search", "--n", "200", "--out", p(&g)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert_eq!(code(&driftlab(&["compare", p(&a), p(&g)])), 2);
}

#[test]
fn counterfactual_runs_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let o = driftlab(&["counterfactual", "--lambda", "1.0", "--target-label", "1", "--strength", "0.6", "--n", "100", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let losses = fs::read_to_string(tmp.path().join("losses.csv")).unwrap();
    assert!(losses.starts_with("sample_id,total,outcome,instance,flipped\n"));
    assert_eq!(losses.lines().count(), 101);
}

#[test]
fn report_fails_on_orphans() {
    let tmp = tempfile::tempdir().unwrap();
    let o = driftlab(&["sample", "--n", "50", "--out", p(tmp.path())]);
    assert_eq!(code(&o), 0);
    assert_eq!(code(&driftlab(&["report", p(tmp.path())])), 0);
    fs::write(tmp.path().join("leftover.csv"), "x\n").unwrap();
    assert_eq!(code(&driftlab(&["report", p(tmp.path())])), 1);
}

#[test]
fn report_summarizes_a_batch_against_another() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a.csv"), tmp.path().join("b.csv"));
    assert_eq!(code(&driftlab(&["sample", "--n", "400", "--out", p(&a)])), 0);
    assert_eq!(code(&driftlab(&["sample", "--n", "400", "--delta", "0.1", "--out", p(&b)])), 0);
    let o = driftlab(&["report", p(&a), "--against", p(&b)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let text = String::from_utf8(o.stdout).unwrap();
    assert!(text.starts_with("metric,value,std_error,n_a,n_b,bins_or_bandwidth\n"));
    assert_eq!(text.lines().count(), 3);
}
