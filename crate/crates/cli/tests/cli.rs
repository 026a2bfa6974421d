use std::process::Command;

fn helps(args: &[&str]) -> (bool, String, String) {
    let out = Command::new(env!("CARGO_BIN_EXE_helps")).args(args).env_remove("RUST_BACKTRACE").output().unwrap();
    (out.status.success(), String::from_utf8(out.stdout).unwrap(), String::from_utf8(out.stderr).unwrap())
}

#[test]
fn run_prints_outcome_and_event_log() {
    let dir = tempfile::tempdir().unwrap();
    let events = dir.path().join("events.ndjson");
    let (ok, out, err) = helps(&["run", "--scenario", "minimal", "--seed", "3", "--events", events.to_str().unwrap()]);
    assert!(ok, "{err}");
    let v: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(v["success"], true);
    assert_eq!(v["seed"], 3);
    let log = std::fs::read_to_string(events).unwrap();
    assert!(log.lines().count() > 2);
    for line in log.lines() {
        let e: serde_json::Value = serde_json::from_str(line).unwrap();
        assert!(e["time_s"].is_number() && e["event"].is_string());
    }
}

#[test]
fn batch_writes_csv_and_summary() {
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("trials.csv");
    let summary = dir.path().join("summary.json");
    let args = [
        "batch", "--scenario", "room-building", "--policy", "knock_baseline", "--placement", "uniform-random-room", "--trials", "5",
        "--workers", "2", "--out", csv.to_str().unwrap(), "--summary", summary.to_str().unwrap(),
    ];
    let (ok, out, err) = helps(&args);
    assert!(ok, "{err}");
    let printed: serde_json::Value = serde_json::from_str(&out).unwrap();
    let saved: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&summary).unwrap()).unwrap();
    assert_eq!(printed, saved);
    assert_eq!(printed["n_trials"], 5);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "seed,success,building_time,room_time,total_time,dist_sme-1,dist_sme-2,dist_sme-3");
    assert_eq!(lines.count(), 5);

    let (_, again, _) = helps(&args);
    assert_eq!(again, out);
}

#[test]
fn validate_reports_bad_files() {
    let dir = tempfile::tempdir().unwrap();
    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, "{}").unwrap();
    let (ok, out, _) = helps(&["validate", "testbed", "room-building"]);
    assert!(ok);
    assert_eq!(out.lines().count(), 2);
    let (ok, out, _) = helps(&["validate", "minimal", bad.to_str().unwrap()]);
    assert!(!ok);
    assert!(out.contains("minimal: ok"));
}

#[test]
fn export_contour_writes_grid() {
    let (ok, out, err) = helps(&["export-contour", "--scenario", "room-building", "--seed", "2"]);
    assert!(ok, "{err}");
    let mut lines = out.lines();
    assert_eq!(lines.next(), Some("row,col,x,y,rssi_dbm"));
    assert!(lines.filter(|l| !l.ends_with(',')).count() > 10);
}

#[test]
fn unknown_policy_is_rejected() {
    let (ok, _, err) = helps(&["run", "--policy", "teleport"]);
    assert!(!ok);
    assert!(err.contains("teleport"));
}
