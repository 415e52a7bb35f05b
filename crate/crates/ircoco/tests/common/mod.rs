#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

pub fn corpus_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data").join("python")
}

/// The binary with `IRCOCO_SEED` cleared so the caller decides.
pub fn ircoco() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_ircoco"));
    c.env_remove("IRCOCO_SEED");
    c
}

pub fn run(args: &[&str]) -> Output {
    ircoco().args(args).output().expect("binary runs")
}

pub fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// A handful of the smallest corpus files.
pub fn tiny_corpus(dir: &Path) -> PathBuf {
    let src = dir.join("src");
    std::fs::create_dir_all(&src).unwrap();
    for f in ["bisect.py", "fnmatch.py", "glob.py", "string.py"] {
        std::fs::copy(corpus_dir().join(f), src.join(f)).unwrap();
    }
    src
}

/// A configuration small enough for the full pipeline to run in seconds.
pub fn tiny_config(dir: &Path, seed: u64) -> PathBuf {
    let model = serde_json::json!({"layers": 1, "heads": 2, "d_model": 16, "max_len": 32});
    let cfg = serde_json::json!({
        "seed": seed,
        "corpus": {"chunk_lines": 6, "vocab_cap": 300},
        "actor": model,
        "critic_model": model,
        "sft": {"epochs": 1, "batch_size": 16, "lr": 0.001},
        "critic": {"epochs": 1, "batch_size": 16, "lr": 0.001},
        "align": {"epochs": 1, "batch_size": 8, "lr": 0.0001},
        "align_train_limit": 40
    });
    let path = dir.join("config.json");
    std::fs::write(&path, serde_json::to_string_pretty(&cfg).unwrap()).unwrap();
    path
}

fn ok(args: &[&str]) {
    let o = run(args);
    assert!(o.status.success(), "{args:?}: {}", stderr(&o));
}

/// Every stage through the command line; returns the report directory.
pub fn full_pipeline(work: &Path) -> PathBuf {
    let src = tiny_corpus(work);
    let cfg = tiny_config(work, 5);
    let p = |name: &str| work.join(name).to_str().unwrap().to_string();
    let c = cfg.to_str().unwrap();
    let (data, sft, cd, critic, aligned) = (p("data"), p("sft"), p("critic_data"), p("critic"), p("aligned"));
    let actor = format!("{sft}/actor.ckpt");
    ok(&["prepare", "--config", c, "--in", src.to_str().unwrap(), "--out", &data]);
    ok(&["sft", "--config", c, "--data", &data, "--out", &sft]);
    ok(&["build-critic-data", "--config", c, "--data", &data, "--actor", &actor, "--out", &cd]);
    ok(&["train-critic", "--config", c, "--data", &data, "--critic-data", &cd, "--out", &critic]);
    ok(&[
        "align", "--config", c, "--data", &data, "--actor", &actor, "--critic", &format!("{critic}/critic.ckpt"),
        "--out", &aligned, "--schedule", "ircoco",
    ]);
    let (r_sft, r_al) = (p("eval_sft.json"), p("eval_ircoco.json"));
    ok(&["evaluate", "--config", c, "--data", &data, "--actor", &actor, "--out", &r_sft, "--method", "sft"]);
    ok(&[
        "evaluate", "--config", c, "--data", &data, "--actor", &format!("{aligned}/actor.ckpt"), "--out", &r_al,
        "--method", "ircoco",
    ]);
    let report = p("report");
    ok(&["report", "--runs", &format!("{r_sft},{r_al}"), "--out", &report]);
    PathBuf::from(report)
}
