use std::fs;
use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = "\
[experiment]
envs = gem_rooms:G=6,N=1
modes = rollout-iw, vae-iw, active-olive
seeds = 2
train_budget = 600
max_train_episodes = 3
eval_episodes = 2

[planner]
budget_per_action = 20
max_train_actions = 10
max_eval_actions = 10

[vae]
latent = 8
epochs = 2
batch = 8

[dataset]
k = 8
cap = 24
";

fn olive(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_olive")).args(args).output().expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exited normally")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

#[test]
fn run_eval_report_roundtrip() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write(tmp.path(), "tiny.ini", TINY);
    let out = tmp.path().join("out");
    let out_s = out.to_str().unwrap();

    let r = olive(&["run", "--config", &config, "--seeds", "1", "--out", out_s]);
    assert_eq!(code(&r), 0, "stderr: {}", String::from_utf8_lossy(&r.stderr));
    for f in ["scores.csv", "summary.csv", "winloss.csv", "report.txt", "timings.csv"] {
        assert!(out.join(f).is_file(), "missing {f}");
    }
    let scores = fs::read_to_string(out.join("scores.csv")).unwrap();
    // 3 modes x 1 seed x 2 eval episodes, plus training rows for the learners
    assert_eq!(scores.lines().filter(|l| l.contains(",eval,")).count(), 6);
    let logs = out.join("logs").join("active-olive_gem_rooms_G_6_N_1_seed0");
    let first = fs::read_to_string(logs.join("eval-000.jsonl")).unwrap();
    assert!(first.lines().all(|l| l.starts_with('{') && l.contains("\"action\"")));

    let ckpt = out.join("checkpoints").join("active-olive_gem_rooms_G_6_N_1_seed0.olv");
    assert_eq!(&fs::read(&ckpt).unwrap()[..4], b"OLV1");
    let pgm = tmp.path().join("pgm");
    let e = olive(&[
        "eval",
        "--checkpoint",
        ckpt.to_str().unwrap(),
        "--env",
        "gem_rooms:G=6,N=1",
        "--episodes",
        "2",
        "--config",
        &config,
        "--pgm",
        pgm.to_str().unwrap(),
    ]);
    assert_eq!(code(&e), 0, "stderr: {}", String::from_utf8_lossy(&e.stderr));
    assert_eq!(String::from_utf8_lossy(&e.stdout).lines().filter(|l| l.starts_with("episode")).count(), 2);
    for f in ["screen.pgm", "reconstruction.pgm"] {
        assert!(fs::read(pgm.join(f)).unwrap().starts_with(b"P5\n32 32\n255\n"));
    }

    let rep = olive(&["report", "--in", out_s]);
    assert_eq!(code(&rep), 0);
    assert!(String::from_utf8_lossy(&rep.stdout).contains("active-olive"));
}

#[test]
fn config_errors_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("out");
    for bad in [
        "[experiment]\nmodes = rollout-iw\nbogus = 1\n",
        "[experiment]\nmodes = not-a-mode\n",
        "[experiment]\nenvs = chain:L=x\nmodes = rollout-iw\n",
        "[planner]\ngamma = 2\n",
        "[experiment]\nseeds = 1\nseeds = 2\n",
    ] {
        let config = write(tmp.path(), "bad.ini", bad);
        let r = olive(&["run", "--config", &config, "--out", out.to_str().unwrap()]);
        assert_eq!(code(&r), 2, "config {bad:?}: {}", String::from_utf8_lossy(&r.stderr));
    }
    assert!(!out.exists());
    // argument errors count as configuration errors too
    assert_eq!(code(&olive(&["run"])), 2);
    assert_eq!(code(&olive(&["eval", "--checkpoint", "x", "--episodes", "none"])), 2);
}

#[test]
fn io_errors_exit_3() {
    let tmp = tempfile::tempdir().unwrap();
    let missing = tmp.path().join("missing.ini");
    assert_eq!(code(&olive(&["run", "--config", missing.to_str().unwrap()])), 3);
    assert_eq!(code(&olive(&["report", "--in", tmp.path().join("nowhere").to_str().unwrap()])), 3);
    let garbage = write(tmp.path(), "garbage.olv", "not a checkpoint");
    assert_eq!(code(&olive(&["eval", "--checkpoint", &garbage])), 3);
    assert_eq!(code(&olive(&["eval", "--checkpoint", tmp.path().join("none.olv").to_str().unwrap()])), 3);
}
