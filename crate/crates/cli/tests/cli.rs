use std::process::Command;

fn evpool() -> Command {
    Command::new(env!("CARGO_BIN_EXE_evpool"))
}

#[test]
fn missing_config_is_a_config_error() {
    let out = evpool().args(["--log", "error", "fit", "-c", "/nonexistent/pipeline.toml"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bad_threshold_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("p.toml");
    std::fs::write(&cfg, "[preprocess]\nvif_threshold = 0.5\n").unwrap();
    let out = evpool().args(["--log", "error", "run", "-c"]).arg(&cfg).output().unwrap();
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn synth_then_run_writes_summary() {
    let dir = tempfile::tempdir().unwrap();
    let world = dir.path().join("w");
    let st = evpool().args(["--log", "error", "synth", "--seed", "3", "-o"]).arg(&world).status().unwrap();
    assert!(st.success());
    let out = evpool()
        .args(["--log", "error", "run", "--replicates", "20", "-c"])
        .arg(world.join("pipeline.toml"))
        .arg("-o")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let summary: serde_json::Value = serde_json::from_slice(&std::fs::read(dir.path().join("out/08_summary.json")).unwrap()).unwrap();
    assert_eq!(summary["n_pools"], 300);
    assert!(dir.path().join("out/manifest.json").exists());
    assert!(!dir.path().join("out/error.json").exists());
}
