use std::path::Path;
use std::process::Command;

fn casca() -> Command {
    Command::new(env!("CARGO_BIN_EXE_casca"))
}

fn fixtures() -> &'static Path {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures"))
}

#[test]
fn run_then_report() {
    let dir = tempfile::tempdir().unwrap();
    let f = fixtures();
    let scenario = serde_json::json!({
        "seed": 3,
        "duration_s": 1200,
        "warmup_steps": 10,
        "model": {"initial_threads": 16},
        "hooks": [f.join("hooks/fps.json"), f.join("hooks/power.json")],
        "slos": f.join("slos.json"),
        "emma": {"sources": f.join("sources.csv"), "locations": f.join("locations.csv")},
        "decision": {"system": "gds", "slo_id": "FPS", "param_id": "EncodingThreadCount", "delta": 1, "lambda": 1}
    });
    let sc = dir.path().join("scenario.json");
    std::fs::write(&sc, scenario.to_string()).unwrap();
    let run_dir = dir.path().join("run");
    let out = casca().args(["run", "--scenario"]).arg(&sc).arg("--out").arg(&run_dir).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let steps = std::fs::read_to_string(run_dir.join("steps.csv")).unwrap();
    assert_eq!(steps.lines().count(), 21);
    assert!(steps.starts_with("step,ts,"));
    assert!(steps.lines().next().unwrap().ends_with(",reward"));

    let out = casca().arg("report").arg(&run_dir).output().unwrap();
    assert!(out.status.success());
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["steps"], 20);
    assert_eq!(report["metrics"][0]["fulfilment"], 1.0);
}

#[test]
fn missing_scenario_file_fails() {
    let out = casca().args(["run", "--scenario", "/nonexistent/scenario.json"]).output().unwrap();
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("scenario.json"));
}

#[test]
fn bench_overhead_prints_four_categories() {
    let out = casca().args(["bench-overhead", "--n", "8"]).output().unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v.as_array().unwrap().len(), 4);
}
