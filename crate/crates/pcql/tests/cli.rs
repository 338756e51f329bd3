//! End-to-end tests of the `pcql` binary: the five subcommands chained on a
//! tiny synthetic dataset, plus the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_pcql"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exit code")
}

fn write_tiny_config(dir: &Path) -> String {
    let path = dir.join("run.conf");
    let text = format!(
        "\
seed = 3
output_root = {}
generate.n_surgeries = 18
generate.duration_min_steps = 35
generate.duration_max_steps = 50
train.epochs = 1
train.batch_size = 64
train.hidden_actor_critic = 12,12
train.hidden_constraint = 8
train.d_proj = 4
train.n_action_samples = 2
fqe.epochs = 2
fqe.hidden = 12
band.n_samples = 8
explain.samples = 2
explain.background = 8
explain.permutations = 6
",
        dir.join("out").display()
    );
    std::fs::write(&path, text).unwrap();
    path.display().to_string()
}

#[test]
fn full_pipeline_runs_and_writes_all_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    let out_root = dir.path().join("out");

    for sub in ["generate", "ingest", "train", "evaluate", "explain"] {
        let out = run(&["--config", &conf, sub]);
        assert_eq!(
            code(&out),
            0,
            "{sub} failed: {}{}",
            String::from_utf8_lossy(&out.stdout),
            String::from_utf8_lossy(&out.stderr)
        );
    }

    assert!(out_root.join("raw/clinical.csv").exists());
    for split in ["train", "valid", "test"] {
        assert!(out_root.join("processed").join(split).join("meta.json").exists());
    }
    assert!(out_root.join("checkpoint.json").exists());
    assert!(out_root.join("train_steps.csv").exists());
    assert!(out_root.join("train_epochs.csv").exists());
    assert!(out_root.join("eval/checkpoint/report.json").exists());
    assert!(out_root.join("eval/checkpoint/curves").read_dir().unwrap().next().is_some());
    assert!(out_root.join("explain/attributions.json").exists());
    let scores = std::fs::read_to_string(out_root.join("explain/scores.csv")).unwrap();
    assert!(scores.starts_with("feature,score\n"));
    assert_eq!(scores.lines().count(), 20); // header + 19 features
}

#[test]
fn generate_refuses_to_clobber_without_overwrite() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    assert_eq!(code(&run(&["--config", &conf, "generate"])), 0);
    let second = run(&["--config", &conf, "generate"]);
    assert_eq!(code(&second), 2);
    assert!(String::from_utf8_lossy(&second.stderr).contains("--overwrite"));
    assert_eq!(code(&run(&["--config", &conf, "generate", "--overwrite"])), 0);
}

#[test]
fn usage_and_config_errors_exit_2() {
    assert_eq!(code(&run(&["--set", "train.epochz=1", "ingest"])), 2); // unknown key
    assert_eq!(code(&run(&["--set", "train.epochs", "ingest"])), 2); // not KEY=VALUE
    assert_eq!(code(&run(&["--no-such-flag"])), 2); // clap usage error
    assert_eq!(code(&run(&[])), 2); // missing subcommand
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("nope.conf");
    assert_eq!(code(&run(&["--config", missing.to_str().unwrap(), "ingest"])), 2);
}

#[test]
fn runtime_failures_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let root = dir.path().join("out");
    let out = run(&["--set", &format!("output_root={}", root.display()), "ingest"]);
    assert_eq!(code(&out), 1); // no raw data to ingest
}

#[test]
fn print_config_round_trips_and_reflects_overrides() {
    let out = run(&["--set", "train.epochs=5", "--set", "seed=9", "--print-config"]);
    assert_eq!(code(&out), 0);
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("train.epochs = 5\n"));
    assert!(text.contains("seed = 9\n"));
    // the dump itself must be a valid config file
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("dumped.conf");
    std::fs::write(&conf, &text).unwrap();
    let again = run(&["--config", conf.to_str().unwrap(), "--print-config"]);
    assert_eq!(code(&again), 0);
    assert_eq!(String::from_utf8(again.stdout).unwrap(), text);
}

#[test]
fn cql_variant_and_checkpoint_comparison_table() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    let out_root = dir.path().join("out");
    assert_eq!(code(&run(&["--config", &conf, "generate"])), 0);
    assert_eq!(code(&run(&["--config", &conf, "ingest"])), 0);

    let pcql_ckpt = out_root.join("pcql.json");
    let cql_ckpt = out_root.join("cql.json");
    let set_ckpt = |p: &Path| format!("checkpoint={}", p.display());
    assert_eq!(
        code(&run(&["--config", &conf, "--set", &set_ckpt(&pcql_ckpt), "train"])),
        0
    );
    assert_eq!(
        code(&run(&[
            "--config",
            &conf,
            "--set",
            &set_ckpt(&cql_ckpt),
            "train",
            "--variant",
            "cql"
        ])),
        0
    );

    let out = run(&[
        "--config",
        &conf,
        "evaluate",
        "--checkpoint",
        pcql_ckpt.to_str().unwrap(),
        "--checkpoint",
        cql_ckpt.to_str().unwrap(),
    ]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    let table = String::from_utf8(out.stdout).unwrap();
    let mut lines = table.lines();
    assert!(lines.next().unwrap().contains("checkpoint"));
    assert!(table.contains("pcql"));
    assert!(table.contains("cql"));
    assert!(out_root.join("eval/pcql/report.json").exists());
    assert!(out_root.join("eval/cql/report.json").exists());
}

#[test]
fn explain_self_test_flag_passes() {
    let dir = tempfile::tempdir().unwrap();
    let conf = write_tiny_config(dir.path());
    for sub in ["generate", "ingest", "train"] {
        assert_eq!(code(&run(&["--config", &conf, sub])), 0);
    }
    let out = run(&["--config", &conf, "explain", "--self-test"]);
    assert_eq!(code(&out), 0, "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stdout).contains("self-test passed"));
}
