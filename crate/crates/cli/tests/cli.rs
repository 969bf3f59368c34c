use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const SMALL: &str = r#"
[train]
robots = 2
horizon = 15
trajectories = 2
epochs = 3
hidden = 8
checkpoint_every = 2

[map]
height = 12
width = 12

[experiment]
trials = 2
failure_step = 5
kill = [1]
team_sizes = [2, 3]
radius_percentages = [0.0, 50.0]
refresh_period = 5
"#;

fn marlas(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marlas"))
        .args(args)
        .current_dir(cwd)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) {
    assert!(out.status.success(), "stderr: {}", String::from_utf8_lossy(&out.stderr));
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    fs::write(dir.path().join("run.toml"), SMALL).unwrap();
    dir
}

#[test]
fn train_writes_checkpoints_and_curve() {
    let dir = setup();
    ok(&marlas(&["train", "--config", "run.toml", "--out", "t"], dir.path()));
    let out = dir.path().join("t");
    for f in ["policy.ckpt", "training_curve.csv", "train_timing.csv", "config.toml", "checkpoints/epoch_00002.ckpt"] {
        assert!(out.join(f).exists(), "{f}");
    }
    let curve = fs::read_to_string(out.join("training_curve.csv")).unwrap();
    assert_eq!(curve.lines().count(), 1 + 3);
}

#[test]
fn training_is_reproducible_across_runs_and_execution_modes() {
    let dir = setup();
    ok(&marlas(&["train", "--config", "run.toml", "--out", "a", "--seed", "4"], dir.path()));
    ok(&marlas(&["train", "--config", "run.toml", "--out", "b", "--seed", "4", "--sequential"], dir.path()));
    for f in ["policy.ckpt", "training_curve.csv"] {
        assert_eq!(fs::read(dir.path().join("a").join(f)).unwrap(), fs::read(dir.path().join("b").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn eval_from_checkpoint_then_reexport_matches() {
    let dir = setup();
    ok(&marlas(&["train", "--config", "run.toml", "--out", "t"], dir.path()));
    ok(&marlas(&["eval", "--config", "run.toml", "--checkpoint", "t/policy.ckpt", "--out", "e", "--mode", "sample"], dir.path()));
    let e = dir.path().join("e");
    let traj = fs::read_to_string(e.join("trajectories.csv")).unwrap();
    // 2 trials, 2 robots, horizon + 1 positions each
    assert_eq!(traj.lines().count(), 1 + 2 * 2 * 16);
    assert!(e.join("heatmap_001.ppm").exists());

    ok(&marlas(&["export", "--config", "run.toml", "--logs", "e/episodes.json", "--out", "r"], dir.path()));
    for f in ["trajectories.csv", "metrics.csv", "summary.json", "heatmap_000.ppm"] {
        assert_eq!(fs::read(e.join(f)).unwrap(), fs::read(dir.path().join("r").join(f)).unwrap(), "{f}");
    }
}

#[test]
fn sweeps_and_failure_runs_with_baselines() {
    let dir = setup();
    ok(&marlas(&["sweep-team", "--config", "run.toml", "--baseline", "greedy", "--out", "st"], dir.path()));
    let rows = fs::read_to_string(dir.path().join("st/sweep_team.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);

    ok(&marlas(&["sweep-comm", "--config", "run.toml", "--baseline", "random", "--out", "sc"], dir.path()));
    let rows = fs::read_to_string(dir.path().join("sc/sweep_comm.csv")).unwrap();
    assert_eq!(rows.lines().count(), 1 + 2 * 2);

    ok(&marlas(&["failure", "--config", "run.toml", "--baseline", "greedy", "--out", "f"], dir.path()));
    let summary = fs::read_to_string(dir.path().join("f/summary.json")).unwrap();
    assert!(summary.contains("robots_killed"), "{summary}");
}

#[test]
fn adapt_writes_field_snapshots() {
    let dir = setup();
    ok(&marlas(&["adapt", "--config", "run.toml", "--baseline", "greedy", "--out", "ad"], dir.path()));
    let snaps = fs::read_dir(dir.path().join("ad"))
        .unwrap()
        .filter(|e| e.as_ref().unwrap().file_name().to_string_lossy().starts_with("field_t"))
        .count();
    assert_eq!(snaps, 3);
}

#[test]
fn bad_inputs_exit_nonzero_with_a_message() {
    let dir = setup();
    fs::write(dir.path().join("bad.toml"), "[train]\nrobots = 2\nnope = 1\n").unwrap();
    let out = marlas(&["eval", "--config", "bad.toml", "--baseline", "random"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("line 3"));

    let out = marlas(&["eval", "--config", "run.toml"], dir.path());
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--checkpoint"));

    fs::write(dir.path().join("wrong.toml"), SMALL.replace("hidden = 8", "hidden = 16")).unwrap();
    ok(&marlas(&["train", "--config", "run.toml", "--out", "t", "--epochs", "1"], dir.path()));
    let out = marlas(&["eval", "--config", "wrong.toml", "--checkpoint", "t/policy.ckpt"], dir.path());
    assert!(!out.status.success());
}
