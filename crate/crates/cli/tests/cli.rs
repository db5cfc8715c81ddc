mod common;

use std::fs;
use std::path::Path;

use common::{build_groups, run, run_ok, snapshot, synthetic_badges, write_badges};

const SMALL: &str = "speakers = 3\nhorizon_s = 120.0\nsweeps = 30\nburn_in = 10\n";

fn small_root() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("small.toml"), SMALL).unwrap();
    dir
}

fn simulate(root: &Path, seed: &str, out: &str) {
    run_ok(root, &["--seed", seed, "--config", "small.toml", "--out", out, "simulate"]);
}

#[test]
fn simulate_is_deterministic_per_seed() {
    let root = small_root();
    let r = root.path();
    simulate(r, "7", "a");
    simulate(r, "7", "b");
    simulate(r, "8", "c");
    let a = snapshot(&r.join("a"));
    assert_eq!(a, snapshot(&r.join("b")));
    for name in ["catalog.json", "trajectory.csv", "observations.csv", "true_rates.csv", "simulate.manifest.json"] {
        assert!(a.contains_key(name), "missing {name}");
    }
    let c = snapshot(&r.join("c"));
    assert_ne!(a["trajectory.csv"], c["trajectory.csv"]);
    assert_ne!(a["observations.csv"], c["observations.csv"]);
}

#[test]
fn manifest_records_outputs_and_inputs() {
    let root = small_root();
    let r = root.path();
    simulate(r, "1", "sim");
    run_ok(r, &["--config", "small.toml", "--out", "ex", "extract", "--trajectory", "sim/trajectory.csv"]);
    let m: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("ex/extract.manifest.json")).unwrap()).unwrap();
    assert_eq!(m["command"], "extract");
    assert_eq!(m["inputs"].as_object().unwrap().len(), 1);
    let outputs = m["outputs"].as_object().unwrap();
    for name in ["events.csv", "counts.csv", "minute_statistics.json"] {
        let hash = outputs[name].as_str().unwrap();
        assert_eq!(hash.len(), 64);
    }
}

#[test]
fn simulate_then_infer() {
    let root = small_root();
    let r = root.path();
    simulate(r, "3", "sim");
    run_ok(r, &["--seed", "3", "--config", "small.toml", "--out", "inf", "infer", "--observations", "sim/observations.csv"]);
    let rates = fs::read_to_string(r.join("inf/rates.csv")).unwrap();
    assert_eq!(rates.lines().next().unwrap(), "event,label,mean,sd,psrf");
    // 3 speakers: 9 + 15 events.
    assert_eq!(rates.lines().count(), 1 + 24);
    for line in rates.lines().skip(1) {
        let mean: f64 = line.split(',').nth(2).unwrap().parse().unwrap();
        assert!(mean.is_finite() && mean >= 0.0, "{line}");
    }
    let states = fs::read_to_string(r.join("inf/states.csv")).unwrap();
    assert_eq!(states.lines().next().unwrap(), "slot,speaker,status,probability");
    let chain: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("inf/chain.json")).unwrap()).unwrap();
    assert_eq!(chain["retained"], 20);
}

#[test]
fn several_chains_add_cross_chain_psrf() {
    let root = small_root();
    let r = root.path();
    simulate(r, "4", "sim");
    run_ok(
        r,
        &["--config", "small.toml", "--out", "inf", "infer", "--observations", "sim/observations.csv", "--chains", "2"],
    );
    let rates = fs::read_to_string(r.join("inf/rates.csv")).unwrap();
    assert_eq!(rates.lines().next().unwrap(), "event,label,mean,sd,psrf,psrf_chains");
}

#[test]
fn malformed_csv_is_a_data_error_with_line_number() {
    let root = small_root();
    let r = root.path();
    simulate(r, "5", "sim");
    let text = fs::read_to_string(r.join("sim/observations.csv")).unwrap();
    let mut lines: Vec<String> = text.lines().map(str::to_string).collect();
    let bad = lines.iter().position(|l| !l.starts_with('#') && !l.starts_with("slot_index")).unwrap() + 3;
    lines[bad] = "0,zero,not-a-number,1,2".into();
    fs::write(r.join("bad.csv"), lines.join("\n")).unwrap();
    let out = run(r, &["--config", "small.toml", "--out", "inf", "infer", "--observations", "bad.csv"]);
    assert_eq!(out.status.code(), Some(2));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains(&format!("line {}", bad + 1)), "{stderr}");
}

#[test]
fn missing_input_is_a_data_error() {
    let root = small_root();
    let out = run(root.path(), &["extract", "--turns", "nowhere.csv"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn usage_errors_exit_one() {
    let root = small_root();
    let r = root.path();
    assert_eq!(run(r, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(run(r, &["extract"]).status.code(), Some(1));
    assert_eq!(run(r, &["extract", "--turns", "a", "--trajectory", "b"]).status.code(), Some(1));
    fs::write(r.join("bad.toml"), "unknown_key = 3\n").unwrap();
    assert_eq!(run(r, &["--config", "bad.toml", "simulate"]).status.code(), Some(1));
    fs::write(r.join("neg.toml"), "speakers = 0\n").unwrap();
    assert_eq!(run(r, &["--config", "neg.toml", "simulate"]).status.code(), Some(1));
    assert_eq!(run(r, &["--help"]).status.code(), Some(0));
}

#[test]
fn segment_badges_to_turns() {
    let root = small_root();
    let r = root.path();
    let streams = synthetic_badges(3, 120.0, &[0.0, 0.4, -0.9], 11);
    write_badges(&r.join("badges"), &streams);
    run_ok(r, &["--out", "seg", "segment", "--badges", "badges"]);
    let turns = fs::read_to_string(r.join("seg/turns.csv")).unwrap();
    assert!(turns.lines().count() > 10, "{turns}");
    let seg: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("seg/segmentation.json")).unwrap()).unwrap();
    assert!(seg.is_object());
    run_ok(r, &["--out", "ex", "extract", "--turns", "seg/turns.csv"]);
    assert!(r.join("ex/counts.csv").exists());
}

#[test]
fn segment_rejects_sparse_badge_ids() {
    let root = small_root();
    let r = root.path();
    let mut streams = synthetic_badges(2, 30.0, &[0.0, 0.0], 2);
    streams[1].badge = 3;
    write_badges(&r.join("badges"), &streams);
    let out = run(r, &["--out", "seg", "segment", "--badges", "badges"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn tasksim_sweep() {
    let root = small_root();
    let r = root.path();
    fs::write(r.join("t.toml"), "games = 20\nqualities = [0.0, 1.0]\n").unwrap();
    run_ok(r, &["--seed", "2", "--config", "t.toml", "--out", "ts", "tasksim"]);
    let sweep = fs::read_to_string(r.join("ts/sweep.csv")).unwrap();
    let rows: Vec<Vec<f64>> = sweep
        .lines()
        .skip(1)
        .map(|l| l.split(',').map(|x| x.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 2);
    // Perfect questions never exceed the bound.
    assert!(rows[1][3] <= 20.0);
    assert!(rows[0][2] >= rows[1][2]);
}

#[test]
fn report_over_groups() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    build_groups(r, 12);
    fs::write(r.join("rep.toml"), "replicates = 10\n").unwrap();
    run_ok(r, &["--seed", "9", "--config", "rep.toml", "--out", "rep1", "report", "--groups", "groups"]);
    run_ok(r, &["--seed", "9", "--config", "rep.toml", "--out", "rep2", "report", "--groups", "groups"]);
    let a = snapshot(&r.join("rep1"));
    assert_eq!(a, snapshot(&r.join("rep2")));
    let report: serde_json::Value = serde_json::from_slice(&a["report.json"]).unwrap();
    let text = serde_json::to_string(&report).unwrap();
    for row in ["25%", "50%", "75%"] {
        assert!(text.contains(row), "missing row {row}");
    }

    run_ok(r, &["--config", "rep.toml", "--out", "t1", "table1", "--groups", "groups"]);
    let table: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("t1/table1.json")).unwrap()).unwrap();
    assert!(table.to_string().contains("50%"));

    fs::create_dir_all(r.join("empty")).unwrap();
    let out = run(r, &["--out", "rep3", "report", "--groups", "empty"]);
    assert_eq!(out.status.code(), Some(2));

    fs::remove_file(r.join("groups/g03/rates.csv")).unwrap();
    let out = run(r, &["--out", "rep4", "report", "--groups", "groups"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("rates.csv"));
}

#[test]
fn survival_from_task_records() {
    let root = tempfile::tempdir().unwrap();
    let r = root.path();
    let groups = build_groups(r, 2);
    run_ok(r, &["--out", "surv", "survival", "--records", groups.join("g00/records.csv").to_str().unwrap()]);
    let hazard: serde_json::Value = serde_json::from_str(&fs::read_to_string(r.join("surv/hazard.json")).unwrap()).unwrap();
    assert!(hazard["records"].as_u64().unwrap() > 0);
}
