mod common;

use common::{ircoco, run, stderr, tiny_config, tiny_corpus};

#[test]
fn unknown_flag_is_a_usage_error_with_help() {
    let o = run(&["sft", "--bogus"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("Usage"));
    assert_eq!(run(&[]).status.code(), Some(1));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn missing_checkpoint_is_a_runtime_failure_naming_the_path() {
    let work = tempfile::tempdir().unwrap();
    let missing = work.path().join("nowhere").join("actor.ckpt");
    let o = run(&[
        "evaluate", "--seed", "1", "--data", work.path().to_str().unwrap(), "--actor", missing.to_str().unwrap(),
        "--out", "r.json", "--method", "x",
    ]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains(missing.to_str().unwrap()), "{}", stderr(&o));
}

#[test]
fn critic_schedules_refuse_to_run_without_a_critic() {
    let work = tempfile::tempdir().unwrap();
    let src = tiny_corpus(work.path());
    let cfg = tiny_config(work.path(), 2);
    let (c, data, sft) = (cfg.to_str().unwrap(), work.path().join("data"), work.path().join("sft"));
    let (data, sft) = (data.to_str().unwrap(), sft.to_str().unwrap());
    assert!(run(&["prepare", "--config", c, "--in", src.to_str().unwrap(), "--out", data]).status.success());
    assert!(run(&["sft", "--config", c, "--data", data, "--out", sft]).status.success());
    let actor = format!("{sft}/actor.ckpt");
    let out = work.path().join("aligned");
    for schedule in ["ircoco", "delayed", "la"] {
        let o = run(&["align", "--config", c, "--data", data, "--actor", &actor, "--out", out.to_str().unwrap(), "--schedule", schedule]);
        assert_eq!(o.status.code(), Some(2), "{schedule}");
        assert!(stderr(&o).contains("critic"), "{}", stderr(&o));
        assert!(!out.join("actor.ckpt").exists());
    }
    // The reference-matching schedule needs none.
    let o = run(&["align", "--config", c, "--data", data, "--actor", &actor, "--out", out.to_str().unwrap(), "--schedule", "binary"]);
    assert!(o.status.success(), "{}", stderr(&o));
}

#[test]
fn a_seed_is_required_and_the_environment_wins() {
    let work = tempfile::tempdir().unwrap();
    let src = tiny_corpus(work.path());
    let s = src.to_str().unwrap();
    let out = |n: &str| work.path().join(n).to_str().unwrap().to_string();

    let o = run(&["prepare", "--in", s, "--out", &out("none")]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("seed"));

    assert!(run(&["prepare", "--seed", "7", "--in", s, "--out", &out("flag7")]).status.success());
    let env = ircoco()
        .env("IRCOCO_SEED", "7")
        .args(["prepare", "--seed", "8", "--in", s, "--out", &out("env7")])
        .output()
        .unwrap();
    assert!(env.status.success());
    assert!(run(&["prepare", "--seed", "8", "--in", s, "--out", &out("flag8")]).status.success());
    let train = |d: &str| std::fs::read(work.path().join(d).join("train.jsonl")).unwrap();
    assert_eq!(train("flag7"), train("env7"));
    assert_ne!(train("flag8"), train("env7"));

    let bad = ircoco().env("IRCOCO_SEED", "x").args(["prepare", "--in", s, "--out", &out("bad")]).output().unwrap();
    assert_eq!(bad.status.code(), Some(2));
}
