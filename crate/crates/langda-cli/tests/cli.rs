//! End-to-end drives of the compiled binary: the full scene -> captions
//! -> embed -> train -> eval -> plot chain on a tiny dataset, plus the
//! exit-code and stage-tagging contract on failures.

use std::path::Path;
use std::process::{Command, Output};

fn langda(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_langda"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(path: &Path, text: &str) {
    std::fs::write(path, text).unwrap();
}

const TINY_CONFIG: &str = "total_steps = 3\nwarmup_steps = 2\n\
    [network]\nnum_classes = 6\nembed_dim = 32\nwidths = [4, 8]\npool_heads = 2\n";

#[test]
fn full_pipeline_runs_through_the_binary() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(
        &root.join("scene.toml"),
        "height = 24\nwidth = 24\nn_source = 4\nn_target = 4\nseed = 9\n\
         [shift]\nhue_shift = 25.0\nbrightness_scale = 0.8\nnoise_sigma = 0.02\ntexture_freq = 2.0\n",
    );
    let data = root.join("data");
    let out = langda(&[
        "scene",
        "build",
        "--spec",
        root.join("scene.toml").to_str().unwrap(),
        "--out",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 source + 4 target"));

    let bank = root.join("captions.jsonl");
    let out = langda(&[
        "captions",
        "generate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        bank.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    // Rerunning reuses the cache.
    let out = langda(&[
        "captions",
        "generate",
        "--data",
        data.to_str().unwrap(),
        "--out",
        bank.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("4 cache hits"), "{}", stdout(&out));

    let out = langda(&["captions", "stats", "--bank", bank.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("\"count\": 4"), "{}", stdout(&out));

    let out = langda(&["captions", "refine", "--bank", bank.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));

    let ldeb = root.join("embeddings.ldeb");
    let out = langda(&[
        "embed",
        "--bank",
        bank.to_str().unwrap(),
        "--out",
        ldeb.to_str().unwrap(),
        "--dim",
        "32",
    ]);
    assert!(out.status.success(), "{}", stderr(&out));

    write(&root.join("train.toml"), TINY_CONFIG);
    let run = root.join("run");
    let out = langda(&[
        "train",
        "--config",
        root.join("train.toml").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
        "--embeddings",
        ldeb.to_str().unwrap(),
        "--run-dir",
        run.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("target mIoU"), "{}", stdout(&out));
    assert!(run.join("metrics.csv").exists());
    assert!(run.join("final.ldck").exists());

    let out = langda(&[
        "eval",
        "--checkpoint",
        run.join("final.ldck").to_str().unwrap(),
        "--data",
        data.to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(stdout(&out).contains("mIoU"), "{}", stdout(&out));

    // Token histogram input for the plot stage.
    std::fs::copy(&bank, run.join("captions.jsonl")).unwrap();
    let out = langda(&["plot", "--run-dir", run.to_str().unwrap()]);
    assert!(out.status.success(), "{}", stderr(&out));
    assert!(run.join("loss_curves.png").exists());
    assert!(run.join("token_histogram.json").exists());
}

#[test]
fn bad_config_exits_nonzero_with_stage_tag() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(&root.join("bad.toml"), &format!("tau = 1.5\n{TINY_CONFIG}"));
    let out = langda(&[
        "train",
        "--config",
        root.join("bad.toml").to_str().unwrap(),
        "--data",
        root.join("missing").to_str().unwrap(),
        "--run-dir",
        root.join("run").to_str().unwrap(),
    ]);
    assert!(!out.status.success());
    assert_eq!(out.status.code(), Some(1));
    let err = stderr(&out);
    assert!(err.contains("error[train]"), "{err}");
    assert!(err.contains("tau"), "{err}");
}

#[test]
fn unknown_preset_is_rejected() {
    let out = langda(&[
        "experiment",
        "run",
        "no-such-preset",
        "--out",
        "/tmp/unused",
    ]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("error[experiment]"), "{err}");
    assert!(err.contains("no-such-preset"), "{err}");
}

#[test]
fn plot_without_history_is_a_stage_tagged_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = langda(&["plot", "--run-dir", dir.path().to_str().unwrap()]);
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("error[plot]"), "{err}");
    assert!(err.contains("history"), "{err}");
}

#[test]
fn experiment_run_executes_a_preset_file() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path();
    write(
        &root.join("preset.toml"),
        "name = \"mini\"\nseeds = [0]\n\
         [scene]\nheight = 24\nwidth = 24\nn_source = 4\nn_target = 4\n\
         [shift]\nhue_shift = 25.0\nbrightness_scale = 0.8\nnoise_sigma = 0.02\ntexture_freq = 2.0\n\
         [train]\ntotal_steps = 3\nwarmup_steps = 2\n\
         [train.network]\nnum_classes = 6\nembed_dim = 32\nwidths = [4, 8]\npool_heads = 2\n",
    );
    let out = langda(&[
        "experiment",
        "run",
        root.join("preset.toml").to_str().unwrap(),
        "--out",
        root.join("runs").to_str().unwrap(),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let text = stdout(&out);
    assert!(text.contains("seed 0"), "{text}");
    assert!(text.contains("±"), "{text}");
    assert!(root.join("runs/mini/seed-0/metrics.csv").exists());
    assert!(root.join("runs/mini/summary.json").exists());
}

#[test]
fn remote_backends_require_environment_variables() {
    let dir = tempfile::tempdir().unwrap();
    let bank = dir.path().join("bank.jsonl");
    std::fs::write(&bank, "").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_langda"))
        .args([
            "embed",
            "--bank",
            bank.to_str().unwrap(),
            "--out",
            dir.path().join("e.ldeb").to_str().unwrap(),
            "--backend",
            "remote",
        ])
        .env_remove("LANGDA_EMBED_ENDPOINT")
        .output()
        .unwrap();
    assert!(!out.status.success());
    let err = stderr(&out);
    assert!(err.contains("LANGDA_EMBED_ENDPOINT"), "{err}");
}
