//! File-to-file implementations of the subcommands.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::Serialize;
use trajrank_core::bank::{build_bank, TrajectoryBank};
use trajrank_core::dataset::{load_dataset, save_dataset};
use trajrank_core::encoders::ModelParams;
use trajrank_core::inference::{
    load_predictions, save_predictions, PredictionHeader, Predictor, PREDICTION_VERSION,
};
use trajrank_core::metrics::{evaluate, per_example, EvalReport};
use trajrank_core::mips::MipsIndex;
use trajrank_core::synth::generate;
use trajrank_core::trainer::{
    train_with_progress, LogRecord, TrainConfig, TrainOutcome, TrainStatus,
};

use crate::config::{ClusterConfig, GenConfig, IndexConfig, PredictConfig};
use crate::error::{CliError, CliResult};

pub fn gen(cfg: &GenConfig, out: &Path) -> CliResult<usize> {
    let grid = cfg.grid();
    let examples = generate(&cfg.scenarios()?, cfg.n, cfg.seed, grid)?;
    save_dataset(out, &grid.header(), &examples)?;
    Ok(examples.len())
}

pub fn cluster(cfg: &ClusterConfig, input: &Path, out: &Path) -> CliResult<TrajectoryBank> {
    let data = load_dataset(input)?;
    let bank = build_bank(
        &data.examples,
        data.header.dt,
        cfg.k,
        cfg.method,
        cfg.seed,
        cfg.options(),
    )?;
    bank.save(out)?;
    Ok(bank)
}

/// Trains, then writes the best checkpoint and the metrics log even when training aborts.
pub fn train(
    cfg: &TrainConfig,
    input: &Path,
    bank: &Path,
    out: &Path,
    log: &Path,
) -> CliResult<TrainOutcome> {
    cfg.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let data = load_dataset(input)?;
    let bank = TrajectoryBank::load(bank)?;
    let outcome = train_with_progress(cfg, &data.examples, &bank, |r| {
        eprintln!(
            "step {:>6}  val_nll {:.5}  lr {:.2e}{}",
            r.step,
            r.val_nll,
            r.lr,
            r.train_nll
                .map(|t| format!("  train_nll {t:.5}"))
                .unwrap_or_default()
        );
    })?;
    outcome.params.save(out)?;
    write_log(log, &outcome.log)?;
    if let TrainStatus::Aborted { step, message } = &outcome.status {
        return Err(CliError::Aborted {
            step: *step,
            message: message.clone(),
        });
    }
    Ok(outcome)
}

pub fn write_log(path: &Path, log: &[LogRecord]) -> CliResult<()> {
    write_lines(path, log)
}

pub fn read_log(path: &Path) -> CliResult<Vec<LogRecord>> {
    let file = File::open(path).map_err(|e| CliError::io(path, e))?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| CliError::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let record = serde_json::from_str(&line).map_err(|e| trajrank_core::Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        })?;
        records.push(record);
    }
    Ok(records)
}

pub fn build_index(
    cfg: &IndexConfig,
    bank: &Path,
    checkpoint: &Path,
    out: &Path,
) -> CliResult<MipsIndex> {
    let bank = TrajectoryBank::load(bank)?;
    let params = ModelParams::load(checkpoint)?;
    let index = MipsIndex::build(&bank, &params, cfg.variant(), cfg.seed)?;
    index.save(out)?;
    Ok(index)
}

pub fn predict(
    cfg: &PredictConfig,
    checkpoint: &Path,
    index: &Path,
    bank: &Path,
    input: &Path,
    out: &Path,
) -> CliResult<usize> {
    let params = ModelParams::load(checkpoint)?;
    let index = MipsIndex::load(index)?;
    let bank = TrajectoryBank::load(bank)?;
    let data = load_dataset(input)?;
    let predictor = Predictor::new(&params, &index, &bank)?;
    let records = predictor.predict_all(&data.examples, cfg.strategy, &cfg.options(), cfg.seed)?;
    let header = PredictionHeader {
        m: data.header.m,
        strategy: cfg.strategy,
        version: PREDICTION_VERSION,
    };
    save_predictions(out, &header, &records)?;
    Ok(records.len())
}

#[derive(Serialize)]
struct ExampleLine<'a> {
    id: &'a str,
    ade: f64,
    fde: f64,
    hit: bool,
    ll: f64,
}

/// Writes the aggregate report as the first line, then optionally one line per example.
pub fn eval(
    pred: &Path,
    data: &Path,
    out: &Path,
    per_example_lines: bool,
) -> CliResult<EvalReport> {
    let (_, records) = load_predictions(pred)?;
    let data = load_dataset(data)?;
    let report = evaluate(&records, &data.examples)?;
    let file = File::create(out).map_err(|e| CliError::io(out, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| CliError::io(out, e);
    serde_json::to_writer(&mut w, &report).map_err(|e| CliError::io(out, e.into()))?;
    w.write_all(b"\n").map_err(io)?;
    if per_example_lines {
        for (id, m) in per_example(&records, &data.examples, |_| true)? {
            let line = ExampleLine {
                id,
                ade: m.ade,
                fde: m.fde,
                hit: m.hit,
                ll: m.ll,
            };
            serde_json::to_writer(&mut w, &line).map_err(|e| CliError::io(out, e.into()))?;
            w.write_all(b"\n").map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(report)
}

/// Tab-separated training curve: `step train_nll val_nll lr`, empty cells for missing values.
pub fn plot_log(log: &[LogRecord]) -> String {
    let mut out = String::from("step\ttrain_nll\tval_nll\tlr\n");
    for r in log {
        let train = r.train_nll.map(|v| v.to_string()).unwrap_or_default();
        out += &format!("{}\t{}\t{}\t{}\n", r.step, train, r.val_nll, r.lr);
    }
    out
}

pub(crate) fn write_lines<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let file = File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut w = BufWriter::new(file);
    for r in rows {
        serde_json::to_writer(&mut w, r).map_err(|e| CliError::io(path, e.into()))?;
        w.write_all(b"\n").map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}
