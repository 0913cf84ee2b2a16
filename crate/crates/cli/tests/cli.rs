use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn rmelab(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rmelab"));
    cmd.args(args).env_remove("RMELAB_OUT_DIR");
    if let Some(d) = out_env {
        cmd.env("RMELAB_OUT_DIR", d);
    }
    cmd.output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn stdout_json(o: &Output) -> serde_json::Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn histories(dir: &Path) -> Vec<PathBuf> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir.join("histories"))
        .unwrap()
        .map(|e| e.unwrap().path())
        .filter(|p| p.extension().is_some_and(|e| e == "jsonl"))
        .collect();
    v.sort();
    v
}

#[test]
fn run_writes_one_history_per_seed_and_a_metrics_table() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(&["run", "--lock", "super", "--n", "8", "--seeds", "20", "--crash-prob", "0.01", "-o", out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary = stdout_json(&o);
    assert_eq!(summary["runs"], 20);
    assert_eq!(summary["clean"], 20);
    assert_eq!(histories(dir.path()).len(), 20);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "run,n,lock,pid,passage,superpassage,level,rmr,steps,failure_free,completed,failure_density,point_contention"
    );
    assert_eq!(lines.count() as u64, summary["passages"].as_u64().unwrap());
}

#[test]
fn output_dir_defaults_to_the_environment_variable() {
    let dir = tempfile::tempdir().unwrap();
    let o = rmelab(&["run", "--lock", "wr", "--n", "2"], Some(dir.path()));
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(dir.path().join("metrics.csv").exists());
    assert_eq!(histories(dir.path()).len(), 1);
}

#[test]
fn crash_after_fas_shows_an_unsafe_wr_failure_and_replays() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(&["run", "--lock", "wr", "--n", "2", "--scenario", "crash-after-fas", "-o", out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(stdout_json(&o)["unsafe_failures"].as_u64().unwrap() >= 1);
    let h = histories(dir.path());
    assert_eq!(h.len(), 1);
    let h = h[0].to_str().unwrap();

    let check = rmelab(&["check", h], None);
    assert_eq!(code(&check), 0);
    let v = &stdout_json(&check)[0];
    assert!(!v["report"]["me"].as_array().unwrap().is_empty());
    assert!(v["report"]["me_hard"].as_array().unwrap().is_empty());

    let replay = rmelab(&["replay", h], None);
    assert_eq!(code(&replay), 0);
    assert_eq!(stdout_json(&replay)[0]["identical"], true);
}

#[test]
fn check_and_replay_reject_a_tampered_history() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(&["run", "--lock", "semi", "--n", "3", "--requests", "2", "-o", out], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let h = histories(dir.path()).remove(0);
    // Drop one CsEnd marker and renumber: the history no longer follows the marker grammar.
    let text = std::fs::read_to_string(&h).unwrap();
    let mut events: Vec<serde_json::Value> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let cut = events.iter().position(|e| e["kind"]["Marker"]["marker"] == "CsEnd").unwrap();
    events.remove(cut);
    let mut body = String::new();
    for (i, e) in events.iter_mut().enumerate() {
        e["seq"] = i.into();
        body += &format!("{e}\n");
    }
    std::fs::write(&h, body).unwrap();
    let check = rmelab(&["check", h.to_str().unwrap()], None);
    assert_eq!(code(&check), 1, "{}", String::from_utf8_lossy(&check.stdout));
    assert_eq!(stdout_json(&check)[0]["clean"], false);

    let replay = rmelab(&["replay", h.to_str().unwrap()], None);
    assert_eq!(code(&replay), 1);
    assert_eq!(stdout_json(&replay)[0]["identical"], false);
}

#[test]
fn selected_properties_limit_the_verdict() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(&["run", "--lock", "wr", "--n", "2", "-o", out], None);
    assert_eq!(code(&o), 0);
    let h = histories(dir.path()).remove(0);
    let csv = dir.path().join("again.csv");
    let check = rmelab(
        &["check", h.to_str().unwrap(), "-p", "me,bounds", "--csv", csv.to_str().unwrap()],
        None,
    );
    assert_eq!(code(&check), 0);
    assert_eq!(stdout_json(&check)[0]["failed"], serde_json::json!([]));
    assert_eq!(
        std::fs::read_to_string(csv).unwrap(),
        std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap()
    );
}

#[test]
fn config_files_use_nested_tables_and_flags_override_them() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("exp.toml");
    std::fs::write(
        &cfg,
        format!(
            "n = 3\nseeds = 2\nrequests = 2\n[lock]\nkind = \"wr\"\nreclaim = true\n[model]\nkind = \"dsm\"\n\
             [crash]\nprobability = 0.05\n[output]\ndir = {:?}\n",
            dir.path().join("from-config")
        ),
    )
    .unwrap();
    let o = rmelab(&["run", "-c", cfg.to_str().unwrap(), "--seeds", "3"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let hs = histories(&dir.path().join("from-config"));
    assert_eq!(hs.len(), 3);
    assert!(hs[0].file_name().unwrap().to_str().unwrap().starts_with("wr-mr-dsm-n3-"));
}

#[test]
fn config_and_usage_errors_exit_with_two() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("bad.toml");
    std::fs::write(&cfg, "n = 2\n[crash]\nprobabilty = 0.1\n").unwrap();
    let o = rmelab(&["run", "-c", cfg.to_str().unwrap()], Some(dir.path()));
    assert_eq!(code(&o), 2);
    let err = String::from_utf8_lossy(&o.stderr);
    assert!(err.contains("probabilty") && err.contains("line 3"), "{err}");

    let out = dir.path().to_str().unwrap();
    for args in [
        vec!["run", "--lock", "tournament", "--reclaim", "-o", out],
        vec!["run", "--lock", "arbitrator", "--n", "3", "-o", out],
        vec!["run", "--lock", "super", "--scenario", "crash-after-fas", "-o", out],
        vec!["run", "--crash-prob", "2", "-o", out],
        vec!["run", "--no-such-flag"],
        vec!["check", "/nonexistent.jsonl"],
    ] {
        assert_eq!(code(&rmelab(&args, None)), 2, "{args:?}");
    }
}

#[test]
fn sweep_prints_a_profile_per_lock() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(
        &["sweep", "--locks", "wr,super", "--ns", "2,4", "--crash-probs", "0,0.05", "--seeds", "5", "-o", out],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let summary: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("summary.json")).unwrap()).unwrap();
    assert_eq!(summary["wr"]["runs"], 20);
    assert_eq!(summary["wr"]["constant_when_failure_free"], true);
    assert_eq!(summary["super"]["clean"], 20);
    let profile = std::fs::read_to_string(dir.path().join("profile-wr.csv")).unwrap();
    assert!(profile.starts_with("n,failure_density,passages,max_rmr,max_level\n2,0,"));
}

#[test]
fn escalation_reaches_the_requested_level() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let o = rmelab(
        &["run", "--lock", "super", "--n", "4", "--levels", "3", "--scenario", "escalation", "--escalation-level", "3", "-o", out],
        None,
    );
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let s = stdout_json(&o);
    assert_eq!(s["failures"], 3);
    let csv = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let max_level = csv.lines().skip(1).map(|l| l.split(',').nth(6).unwrap().parse::<u32>().unwrap()).max();
    assert_eq!(max_level, Some(3));
}

#[test]
fn explore_covers_the_two_process_arbitrator() {
    let o = rmelab(&["explore", "--lock", "arbitrator", "--depth", "40", "--crash-budget", "1"], None);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let r = &stdout_json(&o)["report"];
    assert!(r["violation"].is_null());
    assert!(r["states"].as_u64().unwrap() > 100);
    assert!(r["complete_paths"].as_u64().unwrap() > 0);
}
