//! The `slime` binary's contract: artifacts, config handling, exit codes.

use std::path::Path;
use std::process::{Command, Output};

fn slime(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_slime"))
        .args(args)
        .env_remove("SLIME_OUTPUT_ROOT")
        .output()
        .expect("spawn slime")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

#[test]
fn train_writes_metrics_checkpoint_and_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = slime(&["train", "--objective", "slime", "--synthetic", "2000", "--out", p(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    for f in ["metrics.csv", "model.ckpt", "config.toml"] {
        assert!(run.join(f).is_file(), "missing {f}");
    }
    let metrics = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert!(metrics.starts_with(
        "step,lr,objective_loss,loss_w,loss_l,loss_dist,hard_margin_violation,soft_gate,mean_delta,\
         preference_accuracy,mean_chosen_loglik,mean_rejected_loglik,min_rejected_token_logprob\n"
    ));
    let bytes = std::fs::read(run.join("model.ckpt")).unwrap();
    let model = slime_core::PolicyModel::from_bytes(&bytes).unwrap();
    assert_eq!(model.dims(), slime_core::PolicyDims::default());
}

#[test]
fn periodic_checkpoints() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = slime(&[
        "train",
        "--synthetic",
        "300",
        "--set",
        "checkpoint_every=5",
        "--out",
        p(&run),
    ]);
    assert!(out.status.success(), "{}", stderr(&out));
    let mut names: Vec<String> = std::fs::read_dir(run.join("checkpoints"))
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    names.sort();
    // 300 pairs -> 201 preference -> 181 training pairs -> 12 batches of 16
    assert_eq!(names, ["step-000005.ckpt", "step-000010.ckpt"]);
    slime_cli::checkpoint::load(&run.join("checkpoints/step-000010.ckpt")).unwrap();
}

#[test]
fn unknown_keys_are_rejected_by_name() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("bad.toml");
    std::fs::write(&cfg, "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = slime(&["train", "--config", p(&cfg), "--out", p(&tmp.path().join("a"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("learning_rate"), "{}", stderr(&out));

    let out = slime(&["train", "--set", "warmup=10", "--out", p(&tmp.path().join("b"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("`warmup`"), "{}", stderr(&out));
}

#[test]
fn override_reaches_the_snapshot() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = slime(&["gen-data", "--set", "p=3.0", "--set", "baseline.simpo_beta=2.5", "--out", p(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let snap = slime_cli::config::RunConfig::load(&run.join("config.toml")).unwrap();
    assert_eq!(snap.slime.p, 3.0);
    assert_eq!(snap.baseline.simpo_beta, 2.5);
}

#[test]
fn invalid_values_exit_1() {
    let tmp = tempfile::tempdir().unwrap();
    let out = slime(&["train", "--set", "kappa=-1", "--out", p(&tmp.path().join("a"))]);
    assert_eq!(out.status.code(), Some(1));
    let out = slime(&["train", "--objective", "ppo", "--out", p(&tmp.path().join("b"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("ppo"));
}

#[test]
fn gradcheck_report_and_mutation_hook() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("ok");
    let out = slime(&["gradcheck", "--set", "n_points=50", "--out", p(&run)]);
    assert!(out.status.success(), "{}", stderr(&out));
    let report = std::fs::read_to_string(run.join("gradcheck.csv")).unwrap();
    let mut lines = report.lines();
    assert_eq!(lines.next(), Some("component,point,analytic,numeric,rel_error"));
    assert_eq!(lines.count(), 50 * 3);
    let probe = std::fs::read_to_string(run.join("probe.csv")).unwrap();
    assert_eq!(probe.lines().count(), 1 + 3 * 20);

    let out = slime(&["gradcheck", "--corrupt", "--out", p(&tmp.path().join("bad"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("worst offender: grad_dual_margin"), "{}", stderr(&out));
}

#[test]
fn divergent_run_aborts_with_diagnostic() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    let out = slime(&["train", "--synthetic", "200", "--lr", "1e200", "--out", p(&run)]);
    assert_eq!(out.status.code(), Some(2), "{}", stderr(&out));
    let diag = std::fs::read_to_string(run.join("abort.txt")).unwrap();
    assert!(diag.contains("non-finite"), "{diag}");
}

#[test]
fn jsonl_round_trip_through_train() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    assert!(slime(&["gen-data", "--synthetic", "300", "--out", p(&data)]).status.success());
    let corpus = data.join("pairs.jsonl");
    assert_eq!(std::fs::read_to_string(&corpus).unwrap().lines().count(), 300);

    let via_file = tmp.path().join("file");
    let via_gen = tmp.path().join("gen");
    assert!(slime(&["train", "--data", p(&corpus), "--out", p(&via_file)]).status.success());
    assert!(slime(&["train", "--synthetic", "300", "--out", p(&via_gen)]).status.success());
    assert_eq!(
        std::fs::read(via_file.join("metrics.csv")).unwrap(),
        std::fs::read(via_gen.join("metrics.csv")).unwrap()
    );
}

#[test]
fn malformed_jsonl_names_the_line() {
    let tmp = tempfile::tempdir().unwrap();
    let corpus = tmp.path().join("pairs.jsonl");
    std::fs::write(
        &corpus,
        "{\"prompt\":[1],\"chosen\":[2],\"rejected\":[3]}\n{\"prompt\":[1],\"chosen\":[],\"rejected\":[3]}\n",
    )
    .unwrap();
    let out = slime(&["train", "--data", p(&corpus), "--out", p(&tmp.path().join("run"))]);
    assert_eq!(out.status.code(), Some(1));
    assert!(stderr(&out).contains("line 2"), "{}", stderr(&out));
}

#[test]
fn compare_has_three_objective_columns() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("run");
    assert!(slime(&["compare", "--synthetic", "400", "--out", p(&run)]).status.success());
    let summary = std::fs::read_to_string(run.join("summary.csv")).unwrap();
    assert!(summary.starts_with("metric,slime,simpo,dpo\n"));
    assert!(summary.contains("\nchosen_loglik_drift,"));
    for o in ["slime", "simpo", "dpo"] {
        assert!(run.join(format!("metrics_{o}.csv")).is_file());
    }
}

#[test]
fn output_root_from_environment() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_slime"))
        .args(["gen-data", "--synthetic", "10"])
        .env("SLIME_OUTPUT_ROOT", tmp.path())
        .output()
        .unwrap();
    assert!(out.status.success());
    let dirs: Vec<String> = std::fs::read_dir(tmp.path())
        .unwrap()
        .map(|e| e.unwrap().file_name().to_string_lossy().into_owned())
        .collect();
    assert_eq!(dirs.len(), 1);
    assert!(dirs[0].starts_with("gen-data-"), "{dirs:?}");
    assert!(tmp.path().join(&dirs[0]).join("pairs.jsonl").is_file());
}
