//! End-to-end tests of the `tinslt` binary: every subcommand runs as a
//! subprocess against real files in a temp directory, checking outputs,
//! exit codes, and byte-level reproducibility.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_tinslt"))
}

fn run_in(dir: &Path, args: &[&str]) -> Output {
    bin()
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn run_ok(dir: &Path, args: &[&str]) -> String {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "command {:?} failed\nstdout: {}\nstderr: {}",
        args,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).expect("utf-8 stdout")
}

fn exit_code(out: &Output) -> i32 {
    out.status.code().expect("no signal")
}

/// Last JSON object printed to stdout (commands may echo config first).
fn stdout_json(stdout: &str) -> serde_json::Value {
    let start = stdout.find('{').expect("stdout contains JSON");
    serde_json::from_str(&stdout[start..]).expect("stdout JSON parses")
}

fn gen_corpus(dir: &Path, name: &str, pairs: usize, seed: u64) {
    run_ok(
        dir,
        &[
            "gen-corpus",
            "--out",
            ".",
            "--name",
            name,
            "--pairs",
            &pairs.to_string(),
            "--seed",
            &seed.to_string(),
            "--no-timestamp",
        ],
    );
}

const TINY_CONFIG: &str = r#"
[train]
lr = 0.003
warmup_steps = 20
max_epochs = 2
batch_size = 8
early_stop_patience = 3
dev_fraction = 0.2
seed = 0

[train.model]
d_model = 16
d_ff = 32
n_heads = 2
n_enc_layers = 1
n_dec_layers = 1
dropout_rate = 0.1
label_smoothing = 0.1

[teacher]
d_model = 16
d_ff = 32
n_heads = 2
n_layers = 1

[pretrain]
epochs = 2
"#;

fn write_tiny_config(dir: &Path) -> PathBuf {
    let path = dir.join("tiny.toml");
    fs::write(&path, TINY_CONFIG).unwrap();
    path
}

fn line_count(path: &Path) -> usize {
    fs::read_to_string(path).unwrap().lines().count()
}

#[test]
fn gen_corpus_writes_files_and_reproducible_report() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 30, 7);
    assert_eq!(line_count(&dir.join("demo.gloss")), 30);
    assert_eq!(line_count(&dir.join("demo.text")), 30);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("demo.json")).unwrap()).unwrap();
    assert_eq!(report["n_pairs"], 30);
    assert_eq!(report["seed"], 7);
    assert!(report.get("timestamp").is_none());

    let first = fs::read(dir.join("demo.json")).unwrap();
    gen_corpus(dir, "demo", 30, 7);
    assert_eq!(fs::read(dir.join("demo.json")).unwrap(), first);

    // Without suppression the report carries a timestamp.
    run_ok(
        dir,
        &["gen-corpus", "--out", ".", "--name", "t", "--pairs", "5"],
    );
    let stamped: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("t.json")).unwrap()).unwrap();
    assert!(stamped.get("timestamp").is_some());
}

#[test]
fn augment_report_matches_written_files() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 30, 7);
    let stdout = run_ok(dir, &["augment", "--in", "demo", "--out", ".", "--no-timestamp"]);
    let report = stdout_json(&stdout);
    for key in ["phi_v", "phi_r", "phi_s", "phi_d", "Phi", "n_injected", "seed"] {
        assert!(report.get(key).is_some(), "report missing {key}");
    }
    let n_injected = report["n_injected"].as_u64().unwrap() as usize;
    assert_eq!(line_count(&dir.join("demo.aug.gloss")), 30 + n_injected);
    assert_eq!(line_count(&dir.join("demo.aug.text")), 30 + n_injected);

    // Injected pairs copy the text side onto the gloss side.
    let gloss = fs::read_to_string(dir.join("demo.aug.gloss")).unwrap();
    let text = fs::read_to_string(dir.join("demo.aug.text")).unwrap();
    for (g, t) in gloss.lines().zip(text.lines()).skip(30) {
        assert_eq!(g, t);
    }

    let file_report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("demo.aug.json")).unwrap()).unwrap();
    assert_eq!(file_report, report);
}

#[test]
fn stats_factors_stay_in_range_and_respect_overrides() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 30, 7);
    let report = stdout_json(&run_ok(dir, &["stats", "--in", "demo"]));
    for key in ["phi_v", "phi_r", "phi_s", "phi_d"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v), "{key} = {v}");
    }
    assert!(report["Phi"].as_f64().unwrap() >= 0.0);

    // Raising the cover threshold can only shrink the candidate set.
    let strict = stdout_json(&run_ok(dir, &["stats", "--in", "demo", "--tau-c", "0.99"]));
    assert!(
        strict["n_candidates"].as_u64().unwrap() <= report["n_candidates"].as_u64().unwrap()
    );
    assert_eq!(strict["tau_c"].as_f64().unwrap(), 0.99);
}

#[test]
fn evaluate_identity_scores_100_and_writes_table_row() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("ref.txt"), "the rain come in morning\nsun shine all day\n").unwrap();
    let stdout = run_ok(
        dir,
        &[
            "evaluate",
            "--hyp",
            "ref.txt",
            "--ref",
            "ref.txt",
            "--csv-out",
            "row.csv",
            "--label",
            "full",
        ],
    );
    let report = stdout_json(&stdout);
    assert_eq!(report["bleu4"].as_f64().unwrap(), 100.0);
    assert_eq!(report["rouge_l"].as_f64().unwrap(), 100.0);
    assert_eq!(report["n_sentences"], 2);

    let csv = fs::read_to_string(dir.join("row.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "config,bleu1,bleu2,bleu3,bleu4,rouge_l,meteor"
    );
    assert!(lines.next().unwrap().starts_with("full,100.0000,"));
}

#[test]
fn evaluate_mismatched_line_counts_is_runtime_error() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    fs::write(dir.join("hyp.txt"), "a b\n").unwrap();
    fs::write(dir.join("ref.txt"), "a b\nc d\n").unwrap();
    let out = run_in(dir, &["evaluate", "--hyp", "hyp.txt", "--ref", "ref.txt"]);
    assert_eq!(exit_code(&out), 1);
}

#[test]
fn unknown_config_key_exits_2_and_names_the_key() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 10, 0);
    fs::write(dir.join("bad.toml"), "[train]\nlearning_rate = 0.1\n").unwrap();
    let out = run_in(dir, &["train", "--in", "demo", "--config", "bad.toml"]);
    assert_eq!(exit_code(&out), 2);
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("learning_rate"), "stderr: {stderr}");
}

#[test]
fn full_pipeline_pretrain_train_translate_evaluate() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 30, 7);
    let config = write_tiny_config(dir);
    let config = config.to_str().unwrap();

    run_ok(
        dir,
        &["pretrain", "--in", "demo", "--out", "run", "--config", config, "--no-timestamp"],
    );
    assert!(dir.join("run/teacher.bin").exists());
    let teacher_sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/teacher.json")).unwrap()).unwrap();
    assert_eq!(teacher_sidecar["kind"], "teacher");

    let stdout = run_ok(
        dir,
        &[
            "train", "--in", "demo", "--out", "run", "--config", config, "--teacher",
            "run/teacher", "--no-timestamp",
        ],
    );
    assert!(stdout.contains("# effective configuration"));
    assert!(stdout.contains("best epoch"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/model.json")).unwrap()).unwrap();
    assert_eq!(sidecar["kind"], "model");
    assert!(sidecar["instruction"].is_object());
    let log = fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert!(log.starts_with("epoch,loss,dev_bleu4,alpha_enc,alpha_dec,lr\n"));
    assert_eq!(log.lines().count(), 1 + 2);

    // Decode a few training glosses and score them against their texts.
    let gloss = fs::read_to_string(dir.join("demo.gloss")).unwrap();
    let text = fs::read_to_string(dir.join("demo.text")).unwrap();
    let probe: String = gloss.lines().take(3).collect::<Vec<_>>().join("\n") + "\n";
    let refs: String = text.lines().take(3).collect::<Vec<_>>().join("\n") + "\n";
    fs::write(dir.join("probe.gloss"), &probe).unwrap();
    fs::write(dir.join("probe.ref"), &refs).unwrap();
    run_ok(
        dir,
        &[
            "translate", "--model", "run/model", "--teacher", "run/teacher", "--in",
            "probe.gloss", "--out", "probe.hyp", "--beam-size", "2",
        ],
    );
    assert_eq!(line_count(&dir.join("probe.hyp")), 3);

    // Same checkpoint, same input: byte-identical translations.
    let first = fs::read(dir.join("probe.hyp")).unwrap();
    run_ok(
        dir,
        &[
            "translate", "--model", "run/model", "--teacher", "run/teacher", "--in",
            "probe.gloss", "--out", "probe2.hyp", "--beam-size", "2",
        ],
    );
    assert_eq!(fs::read(dir.join("probe2.hyp")).unwrap(), first);

    let report = stdout_json(&run_ok(
        dir,
        &["evaluate", "--hyp", "probe.hyp", "--ref", "probe.ref"],
    ));
    assert!(report["bleu4"].as_f64().is_some());

    // The fused checkpoint reports its learned coefficients.
    let alpha = stdout_json(&run_ok(dir, &["inspect-alpha", "--model", "run/model"]));
    assert_eq!(alpha["strategy"], "learned");
    let a = alpha["alpha_enc"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&a));

    // Translating without the teacher the checkpoint was fused with fails.
    let out = run_in(
        dir,
        &["translate", "--model", "run/model", "--in", "probe.gloss"],
    );
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn train_fused_without_teacher_is_usage_error_and_vanilla_works() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 20, 3);
    let config = write_tiny_config(dir);
    let config = config.to_str().unwrap();

    let out = run_in(dir, &["train", "--in", "demo", "--out", "run", "--config", config]);
    assert_eq!(exit_code(&out), 2);

    let stdout = run_ok(
        dir,
        &[
            "train", "--in", "demo", "--out", "run", "--config", config, "--vanilla",
            "--max-epochs", "1", "--no-timestamp",
        ],
    );
    assert!(stdout.contains("vanilla backbone"));
    let sidecar: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.join("run/model.json")).unwrap()).unwrap();
    assert!(sidecar.get("instruction").is_none());
    // Vanilla log keeps the alpha columns empty.
    let log = fs::read_to_string(dir.join("run/train_log.csv")).unwrap();
    assert!(log.lines().nth(1).unwrap().contains(",,"));
}

#[test]
fn train_reruns_are_byte_identical() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 20, 3);
    let config = write_tiny_config(dir);
    let config = config.to_str().unwrap();
    for out in ["r1", "r2"] {
        run_ok(
            dir,
            &[
                "train", "--in", "demo", "--out", out, "--config", config, "--vanilla",
                "--no-timestamp",
            ],
        );
    }
    for name in ["model.bin", "model.json", "train_log.csv"] {
        assert_eq!(
            fs::read(dir.join("r1").join(name)).unwrap(),
            fs::read(dir.join("r2").join(name)).unwrap(),
            "{name} differs between reruns"
        );
    }
}

#[test]
fn inspect_alpha_schedule_endpoints_are_exact() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    let stdout = run_ok(
        dir,
        &[
            "inspect-alpha", "--strategy", "cosine-annealing", "--epochs", "26", "--t-c", "25",
        ],
    );
    let lines: Vec<&str> = stdout.lines().collect();
    assert_eq!(lines[0], "epoch,alpha");
    assert_eq!(lines[1], "0,0.000000");
    assert_eq!(lines[26], "25,1.000000");

    // Learned alpha lives in checkpoints, not closed forms.
    let out = run_in(dir, &["inspect-alpha", "--strategy", "learned"]);
    assert_eq!(exit_code(&out), 2);

    let out = run_in(dir, &["inspect-alpha", "--strategy", "sigmoid"]);
    assert_eq!(exit_code(&out), 2);
}

#[test]
fn sweep_rejects_unknown_parameter() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 10, 0);
    let out = run_in(dir, &["sweep", "--param", "momentum", "--values", "1,2", "--in", "demo"]);
    assert_eq!(exit_code(&out), 2);
    assert!(String::from_utf8_lossy(&out.stderr).contains("momentum"));
}

#[test]
fn sweep_beam_size_writes_expected_schema() {
    let tmp = TempDir::new().unwrap();
    let dir = tmp.path();
    gen_corpus(dir, "demo", 20, 3);
    let config = write_tiny_config(dir);
    let config = config.to_str().unwrap();
    let stdout = run_ok(
        dir,
        &[
            "sweep", "--param", "beam-size", "--values", "1,2", "--in", "demo", "--out", "swp",
            "--config", config, "--vanilla", "--no-timestamp",
        ],
    );
    assert!(stdout.contains("value,dev_bleu4"));
    let csv = fs::read_to_string(dir.join("swp/sweep_beam_size.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "value,dev_bleu4");
    assert_eq!(lines.len(), 3);
    assert!(lines[1].starts_with("1,"));
    assert!(lines[2].starts_with("2,"));
}

#[test]
fn help_lists_subcommands_and_flag_defaults() {
    let out = bin().arg("--help").output().unwrap();
    assert!(out.status.success());
    let help = String::from_utf8_lossy(&out.stdout);
    for sub in [
        "gen-corpus", "augment", "pretrain", "train", "translate", "evaluate", "ablate",
        "sweep", "inspect-alpha", "stats",
    ] {
        assert!(help.contains(sub), "--help missing {sub}");
    }
    assert!(help.contains("TINSLT_THREADS"));

    let out = bin().args(["gen-corpus", "--help"]).output().unwrap();
    let help = String::from_utf8_lossy(&out.stdout);
    assert!(help.contains("[default: 200]"));
    assert!(help.contains("--drop-prob"));

    let out = bin().args(["train", "--help"]).output().unwrap();
    let help = String::from_utf8_lossy(&out.stdout);
    for flag in ["--lr", "--teacher", "--vanilla", "--no-augment", "--beam-size"] {
        assert!(help.contains(flag), "train --help missing {flag}");
    }
}
