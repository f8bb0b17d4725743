use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use trajrank_core::dataset::load_dataset;
use trajrank_core::inference::{
    save_predictions, PredictionHeader, PredictionRecord, Strategy, PREDICTION_VERSION,
};

fn trajrank(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trajrank"))
        .current_dir(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, args: &[&str]) {
    let out = trajrank(dir, args);
    assert!(
        out.status.success(),
        "trajrank {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn json_line(path: &Path, line: usize) -> serde_json::Value {
    let text = fs::read_to_string(path).unwrap();
    serde_json::from_str(text.lines().nth(line).unwrap()).unwrap()
}

#[test]
fn version_prints_format_versions() {
    let dir = tempfile::tempdir().unwrap();
    let out = trajrank(dir.path(), &["--version"]);
    assert!(out.status.success());
    let text = String::from_utf8(out.stdout).unwrap();
    assert!(text.contains("checkpoint format 1"), "{text}");
    assert!(text.contains("index format 1"), "{text}");
}

#[test]
fn exit_codes_distinguish_usage_and_data_errors() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_eq!(trajrank(d, &["frobnicate"]).status.code(), Some(1));
    assert_eq!(
        trajrank(d, &["gen", "--out", "d.jsonl", "--mix", "hover"])
            .status
            .code(),
        Some(1)
    );
    fs::write(d.join("bad.jsonl"), "{\"M\": 3}\nnot json\n").unwrap();
    let out = trajrank(d, &["cluster", "--in", "bad.jsonl", "--out", "bank.jsonl"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(out.stdout.is_empty(), "diagnostics belong on stderr");
    assert!(!out.stderr.is_empty());
}

#[test]
fn diverging_training_exits_with_numeric_status() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--mix",
            "turn_left,turn_right",
            "--n",
            "80",
            "--seed",
            "1",
            "--out",
            "d.jsonl",
        ],
    );
    ok(
        d,
        &[
            "cluster",
            "--in",
            "d.jsonl",
            "--k",
            "2",
            "--out",
            "bank.jsonl",
        ],
    );
    let out = trajrank(
        d,
        &[
            "train",
            "--in",
            "d.jsonl",
            "--bank",
            "bank.jsonl",
            "--out",
            "m.ckpt",
            "--learning-rate",
            "1e300",
            "--max-steps",
            "20",
            "--pseudo-epoch-batches",
            "5",
            "--embedding-dim",
            "4",
            "--scene-hidden",
            "8",
            "--trajectory-hidden",
            "8",
            "--n-mc-samples",
            "16",
            "--batch-size",
            "4",
        ],
    );
    assert_eq!(
        out.status.code(),
        Some(3),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    assert!(
        d.join("m.ckpt").exists(),
        "best parameters are still written"
    );
}

#[test]
fn eval_of_ground_truth_is_perfect() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "gen",
            "--mix",
            "fork,stop",
            "--n",
            "40",
            "--seed",
            "4",
            "--out",
            "d.jsonl",
        ],
    );
    let data = load_dataset(&d.join("d.jsonl")).unwrap();
    let records: Vec<PredictionRecord> = data
        .examples
        .iter()
        .map(|e| PredictionRecord {
            id: e.id.clone(),
            mode_index: 0,
            weight: 1.0,
            trajectory: e.ground_truth.clone(),
        })
        .collect();
    let header = PredictionHeader {
        m: data.header.m,
        strategy: Strategy::Mean,
        version: PREDICTION_VERSION,
    };
    save_predictions(&d.join("p.jsonl"), &header, &records).unwrap();
    let before = fs::read(d.join("p.jsonl")).unwrap();
    ok(
        d,
        &[
            "eval",
            "--pred",
            "p.jsonl",
            "--data",
            "d.jsonl",
            "--out",
            "r.jsonl",
            "--per-example",
        ],
    );
    assert_eq!(
        fs::read(d.join("p.jsonl")).unwrap(),
        before,
        "inputs are left untouched"
    );
    let report = json_line(&d.join("r.jsonl"), 0);
    assert_eq!(report["ade"], 0.0);
    assert_eq!(report["fde"], 0.0);
    assert_eq!(report["hit_rate"], 1.0);
    assert_eq!(report["n_examples"], 40);
    let lines = fs::read_to_string(d.join("r.jsonl"))
        .unwrap()
        .lines()
        .count();
    assert_eq!(lines, 41);
    assert_eq!(
        json_line(&d.join("r.jsonl"), 1)["id"],
        data.examples[0].id.as_str()
    );
}

#[test]
fn stage_by_stage_run_produces_scored_predictions() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("run.toml"),
        "[gen]\nmix = \"straight,turn_left,turn_right\"\nn = 200\nseed = 2\n\n\
         [cluster]\nk = 6\n\n\
         [train]\nmax_steps = 60\npseudo_epoch_batches = 20\nembedding_dim = 8\nscene_hidden = [16]\n\
         trajectory_hidden = [16]\nn_mc_samples = 32\nbatch_size = 8\nlearning_rate = 0.003\n\n\
         [predict]\ntop_k = 30\n",
    )
    .unwrap();
    ok(d, &["gen", "--config", "run.toml", "--out", "d.jsonl"]);
    ok(
        d,
        &[
            "cluster",
            "--config",
            "run.toml",
            "--in",
            "d.jsonl",
            "--out",
            "bank.jsonl",
        ],
    );
    ok(
        d,
        &[
            "train",
            "--config",
            "run.toml",
            "--in",
            "d.jsonl",
            "--bank",
            "bank.jsonl",
            "--out",
            "m.ckpt",
        ],
    );
    ok(
        d,
        &[
            "build-index",
            "--config",
            "run.toml",
            "--bank",
            "bank.jsonl",
            "--checkpoint",
            "m.ckpt",
            "--out",
            "i.bin",
        ],
    );
    for strategy in ["top1", "mode_h", "mean", "meanshift", "sample", "mixture"] {
        let pred = format!("{strategy}.jsonl");
        ok(
            d,
            &[
                "predict",
                "--config",
                "run.toml",
                "--checkpoint",
                "m.ckpt",
                "--index",
                "i.bin",
                "--bank",
                "bank.jsonl",
                "--in",
                "d.jsonl",
                "--strategy",
                strategy,
                "--out",
                &pred,
            ],
        );
        ok(
            d,
            &[
                "eval", "--pred", &pred, "--data", "d.jsonl", "--out", "r.jsonl",
            ],
        );
        let report = json_line(&d.join("r.jsonl"), 0);
        assert_eq!(report["n_examples"], 200, "{strategy}");
        assert!(report["ade"].as_f64().unwrap().is_finite(), "{strategy}");
    }
    // resolved configs record the file values
    let resolved = fs::read_to_string(d.join("m.ckpt.config.toml")).unwrap();
    assert!(resolved.contains("max_steps = 60"), "{resolved}");
    ok(
        d,
        &[
            "plotdata",
            "--log",
            "m.ckpt.log.jsonl",
            "--out",
            "curve.tsv",
        ],
    );
    let curve = fs::read_to_string(d.join("curve.tsv")).unwrap();
    assert!(curve.starts_with("step\ttrain_nll\tval_nll\tlr\n"));
    assert_eq!(
        curve.lines().count(),
        1 + 4,
        "evaluations at steps 0, 20, 40, 60"
    );
}

#[test]
fn small_pipeline_writes_report_and_trend_table() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        d,
        &[
            "pipeline",
            "--preset",
            "noisy",
            "--out-dir",
            "out",
            "--seeds",
            "4",
            "--n-train",
            "150",
            "--n-test",
            "30",
            "--max-steps",
            "10",
        ],
    );
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(d.join("out/report.json")).unwrap()).unwrap();
    assert_eq!(report["preset"], "noisy");
    assert_eq!(report["criteria"].as_array().unwrap().len(), 2);
    assert!(d.join("out/pipeline.toml").exists());
    assert!(d.join("out/seed4/m1.ckpt").exists());
    ok(
        d,
        &[
            "plotdata",
            "--report",
            "out/report.json",
            "--out",
            "trend.tsv",
        ],
    );
    let trend = fs::read_to_string(d.join("trend.tsv")).unwrap();
    assert_eq!(trend.lines().count(), 1 + 3, "{trend}");
    assert!(trend.lines().nth(1).unwrap().starts_with("4\tm1\ttop1\t"));
}
