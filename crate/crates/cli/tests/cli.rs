use std::path::Path;
use std::process::{Command, Output};

const TINY: &str = r#"{
  "model.image_size": 16, "model.dim": 32, "model.heads": 2, "model.layers": 1,
  "model.mlp_hidden": 32, "model.lora_rank": 2,
  "train.batch_size": 2, "train.pretrain_steps": 6, "train.finetune_steps": 4,
  "train.log_interval": 2, "sample.steps": 3, "data.count": 3, "data.eval_count": 2
}"#;

fn dractrl(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dractrl"))
        .current_dir(dir)
        .env("DRACTRL_THREADS", "1")
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) -> Output {
    let o = dractrl(dir, args);
    assert!(o.status.success(), "{args:?}: {}", String::from_utf8_lossy(&o.stderr));
    o
}

fn setup() -> tempfile::TempDir {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("tiny.json"), TINY).unwrap();
    dir
}

#[test]
fn export_transition_writes_thirteen_frames() {
    let dir = setup();
    ok(
        dir.path(),
        &["export-transition", "--config", "tiny.json", "--out", "o"],
    );
    let n = std::fs::read_dir(dir.path().join("o/transition")).unwrap().count();
    assert_eq!(n, 13);
    ok(
        dir.path(),
        &[
            "export-transition",
            "--config",
            "tiny.json",
            "--frames",
            "12",
            "--out",
            "p",
        ],
    );
    assert_eq!(std::fs::read_dir(dir.path().join("p/transition")).unwrap().count(), 17);
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.json"), r#"{"fooo": 1}"#).unwrap();
    let o = dractrl(dir.path(), &["datagen", "--config", "bad.json"]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("fooo"));
}

#[test]
fn bad_frames_flag_is_a_config_error() {
    let dir = setup();
    let o = dractrl(
        dir.path(),
        &["export-transition", "--config", "tiny.json", "--frames", "6"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn infer_and_eval_need_a_checkpoint() {
    let dir = setup();
    for cmd in ["infer", "eval"] {
        let o = dractrl(dir.path(), &[cmd, "--config", "tiny.json", "--out", "o"]);
        assert_eq!(o.status.code(), Some(2), "{cmd}");
    }
    let o = dractrl(
        dir.path(),
        &["eval", "--config", "tiny.json", "--checkpoint", "nope.ckpt"],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn corrupt_checkpoint_is_a_format_error() {
    let dir = setup();
    std::fs::write(dir.path().join("bad.ckpt"), b"XXXXjunk").unwrap();
    let o = dractrl(
        dir.path(),
        &["eval", "--config", "tiny.json", "--checkpoint", "bad.ckpt"],
    );
    assert_eq!(o.status.code(), Some(4));
}

#[test]
fn datagen_writes_pairs_and_manifest() {
    let dir = setup();
    ok(
        dir.path(),
        &["datagen", "--config", "tiny.json", "--task", "edges", "--out", "o"],
    );
    let d = dir.path().join("o/datasets/edges");
    assert!(d.join("manifest.json").exists());
    assert!(d.join("00002_condition.ppm").exists());
    assert!(d.join("00002_target.ppm").exists());
}

#[test]
fn pipeline_is_deterministic() {
    let dir = setup();
    let p = dir.path();
    for run in ["a", "b"] {
        ok(p, &["pretrain", "--config", "tiny.json", "--out", run]);
        let base = format!("{run}/pretrain.ckpt");
        ok(
            p,
            &["finetune", "--config", "tiny.json", "--out", run, "--checkpoint", &base],
        );
        let ft = format!("{run}/finetune.ckpt");
        ok(p, &["export-transition", "--config", "tiny.json", "--out", run]);
        let cond = format!("{run}/transition/frame_00.ppm");
        let img = format!("{run}/gen.ppm");
        ok(
            p,
            &[
                "infer",
                "--config",
                "tiny.json",
                "--checkpoint",
                &ft,
                "--condition",
                &cond,
                "--prompt",
                "a red circle on a blue background",
                "--output",
                &img,
            ],
        );
        ok(p, &["eval", "--config", "tiny.json", "--out", run, "--checkpoint", &ft]);
    }
    for f in [
        "pretrain.ckpt",
        "finetune.ckpt",
        "gen.ppm",
        "eval/metrics.csv",
        "eval/records.jsonl",
    ] {
        let a = std::fs::read(p.join("a").join(f)).unwrap();
        let b = std::fs::read(p.join("b").join(f)).unwrap();
        assert!(a == b, "{f} differs between runs");
    }
    let log = std::fs::read_to_string(p.join("a/pretrain.log")).unwrap();
    assert_eq!(log.lines().count(), 3);
    let csv = std::fs::read_to_string(p.join("a/eval/metrics.csv")).unwrap();
    assert!(csv.starts_with("task,n,"));
}

#[test]
fn omega_flag_overrides_file() {
    let dir = setup();
    let p = dir.path();
    ok(p, &["pretrain", "--config", "tiny.json", "--out", "o"]);
    ok(p, &["export-transition", "--config", "tiny.json", "--out", "o"]);
    let args = |omega: &'static str, out: &'static str| {
        vec![
            "infer",
            "--config",
            "tiny.json",
            "--checkpoint",
            "o/pretrain.ckpt",
            "--condition",
            "o/transition/frame_00.ppm",
            "--prompt",
            "a red circle",
            "--omega",
            omega,
            "--output",
            out,
        ]
    };
    ok(p, &args("0", "w0.ppm"));
    ok(p, &args("0.6", "w6.ppm"));
    ok(p, &args("0", "w0b.ppm"));
    assert_eq!(
        std::fs::read(p.join("w0.ppm")).unwrap(),
        std::fs::read(p.join("w0b.ppm")).unwrap()
    );
}
