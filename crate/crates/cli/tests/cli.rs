use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
seed = 4
[collect]
episodes = 3
duration_s = 6.0
[fit]
heldout_episodes = 1
mono_max_samples = 1000
mono_degree = 2
se3_degree = 2
[eval]
horizon = 20
windows = 8
sweep_sizes = [100, 300]
sweep_repeats = 2
sweep_windows = 4
degrees = [1, 2]
degree_sweep_samples = 300
lipschitz_pairs = 100
[run]
laps = 0.2
"#;

fn rkmpc(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_rkmpc")).args(args).env("RUST_LOG", "warn").output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap_or(-1)
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn read_all(dir: &Path, names: &[&str]) -> Vec<Vec<u8>> {
    names.iter().map(|n| std::fs::read(dir.join(n)).unwrap()).collect()
}

#[test]
fn full_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    let cfg = root.join("small.toml");
    std::fs::write(&cfg, SMALL).unwrap();
    let data = root.join("data");

    let o = rkmpc(&["collect", "--config", s(&cfg), "--out", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    for f in ["manifest.json", "config.toml", "episode_000.log", "episode_002.log"] {
        assert!(data.join(f).is_file(), "missing {f}");
    }

    for kind in ["residual", "mono", "se3"] {
        let out = root.join(format!("{kind}.json"));
        let o = rkmpc(&["fit", "--data", s(&data), "--model", kind, "--out", s(&out)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    }

    let models = ["residual", "mono", "se3"].map(|k| root.join(format!("{k}.json")).to_str().unwrap().to_string()).join(",");
    let eval = root.join("eval").join("report.json");
    let o = rkmpc(&["eval", "--models", &models, "--data", s(&data), "--out", s(&eval)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let report: serde_json::Value = serde_json::from_slice(&std::fs::read(&eval).unwrap()).unwrap();
    assert_eq!(report["prediction"]["models"].as_array().unwrap().len(), 4);
    for f in ["rmse_boxes.csv", "drift_curve.csv"] {
        assert!(eval.parent().unwrap().join(f).is_file(), "missing {f}");
    }

    let run = root.join("run");
    let o = rkmpc(&["run", "--variant", "rkmpc", "--config", s(&cfg), "--model", s(&root.join("residual.json")), "--out", s(&run)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let names = ["metrics.json", "trajectory_xy.csv", "cross_track.csv"];
    let first = read_all(&run, &names);

    // regenerating from the log reproduces the same bytes
    for _ in 0..2 {
        let o = rkmpc(&["report", "--in", s(&run)]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        assert_eq!(read_all(&run, &names), first);
    }
    let o = rkmpc(&["report", "--in", s(&data)]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(data.join("dataset_summary.json").is_file());

    // the SE(3) baseline loses the robot; the log is still written
    let se3 = root.join("se3run");
    let o = rkmpc(&["run", "--variant", "se3kmpc", "--config", s(&cfg), "--se3-model", s(&root.join("se3.json")), "--out", s(&se3)]);
    assert_eq!(code(&o), 3, "{}", String::from_utf8_lossy(&o.stderr));
    assert!(se3.join("run.log").is_file());
}

#[test]
fn unknown_config_key_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "seed = 1\nbogus_key = 3\n").unwrap();
    let o = rkmpc(&["collect", "--config", s(&cfg), "--out", s(&tmp.path().join("d"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn missing_data_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rkmpc(&["fit", "--data", s(&tmp.path().join("nowhere")), "--model", "residual", "--out", s(&tmp.path().join("m.json"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn residual_variant_needs_a_model() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rkmpc(&["run", "--variant", "rkmpc", "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 2);
}

#[test]
fn unknown_variant_is_a_config_error() {
    let tmp = tempfile::tempdir().unwrap();
    let o = rkmpc(&["run", "--variant", "pid", "--out", s(&tmp.path().join("r"))]);
    assert_eq!(code(&o), 2);
}
