use std::fs;
use std::path::Path;
use std::process::Command;

fn cre_sim() -> Command {
    Command::new(env!("CARGO_BIN_EXE_cre-sim"))
}

fn read(dir: &Path, name: &str) -> String {
    fs::read_to_string(dir.join(name)).unwrap_or_else(|e| panic!("{name}: {e}"))
}

#[test]
fn scenario1_writes_all_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let st = cre_sim().args(["run", "--scenario", "1", "--seed", "1", "--out"]).arg(dir.path()).status().unwrap();
    assert!(st.success());
    let series = read(dir.path(), "series.csv");
    assert!(series.starts_with("t_s,rtt_ms\n"));
    assert!(series.lines().count() >= 29);
    assert!(read(dir.path(), "events.csv").starts_with("time_ms,flow,event,"));
    assert!(!read(dir.path(), "monitoring.csv").is_empty());
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["seed"], 1);
}

#[test]
fn flags_override_config_file() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    fs::write(&cfg, "scenario = 1\nseed = 9\nperiod = 2.0\nexplore = 0.1\n").unwrap();
    let out = dir.path().join("o");
    let st = cre_sim().arg("run").arg("--config").arg(&cfg).args(["--seed", "4", "--out"]).arg(&out).status().unwrap();
    assert!(st.success());
    let report: serde_json::Value = serde_json::from_str(&read(&out, "report.json")).unwrap();
    assert_eq!(report["seed"], 4);
}

#[test]
fn same_seed_same_bytes() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    for d in [&a, &b] {
        assert!(cre_sim().args(["run", "--seed", "7", "--explore", "0.2", "--out"]).arg(d.path()).status().unwrap().success());
    }
    for f in ["series.csv", "events.csv", "monitoring.csv", "report.json"] {
        assert_eq!(read(a.path(), f), read(b.path(), f), "{f}");
    }
}

#[test]
fn scenario2_writes_table() {
    let dir = tempfile::tempdir().unwrap();
    let st = cre_sim().args(["run", "--scenario", "2", "--experiments", "2", "--seed", "3", "--out"]).arg(dir.path()).status().unwrap();
    assert!(st.success());
    let table = read(dir.path(), "table.csv");
    let lines: Vec<_> = table.lines().collect();
    assert_eq!(lines[0], "exp,opt_monitoring,cre_monitoring,delta_s,gap_pct");
    assert_eq!(lines.len(), 4);
    assert!(lines[3].starts_with("avg,"));
    let report: serde_json::Value = serde_json::from_str(&read(dir.path(), "report.json")).unwrap();
    assert_eq!(report["experiments"].as_array().unwrap().len(), 2);
}

#[test]
fn bad_input_fails_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    for args in [&["--alpha", "1.5"][..], &["--z", "0"], &["--scenario", "3"], &["--period", "0"]] {
        let out = cre_sim().arg("run").args(args).arg("--out").arg(dir.path()).output().unwrap();
        assert!(!out.status.success(), "{args:?}");
        assert!(!out.stderr.is_empty());
    }
    let missing = cre_sim().args(["run", "--topo", "/nonexistent.topo"]).output().unwrap();
    assert!(!missing.status.success());
    let unknown = dir.path().join("bad.toml");
    fs::write(&unknown, "colour = 3\n").unwrap();
    assert!(!cre_sim().arg("run").arg("--config").arg(&unknown).output().unwrap().status.success());
}
