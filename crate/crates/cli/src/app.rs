//! Argument parsing and dispatch.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use trajrank_core::bank::{ClusterMethod, BANK_VERSION};
use trajrank_core::dataset::DATASET_VERSION;
use trajrank_core::encoders::CHECKPOINT_VERSION;
use trajrank_core::inference::{Strategy, PREDICTION_VERSION};
use trajrank_core::mips::INDEX_VERSION;

use crate::commands;
use crate::config::{RunConfig, VariantKind};
use crate::error::{CliError, CliResult};
use crate::pipeline::{self, PipelinePlan, PlanOverrides, Preset};

#[derive(Debug, Parser)]
#[command(
    name = "trajrank",
    about = "Trajectory forecasting by ranking a clustered trajectory bank"
)]
#[command(disable_version_flag = true)]
struct Cli {
    /// Print the program and file format versions.
    #[arg(short = 'V', long)]
    version: bool,

    /// Maximum worker threads.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Option<Command>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Gen(GenArgs),
    /// Cluster ground-truth trajectories into a bank.
    Cluster(ClusterArgs),
    /// Train scene and trajectory encoders.
    Train(TrainArgs),
    /// Embed a bank and build a search index.
    BuildIndex(BuildIndexArgs),
    /// Predict trajectories for a dataset.
    Predict(PredictArgs),
    /// Score predictions against ground truth.
    Eval(EvalArgs),
    /// Run a named end-to-end experiment.
    Pipeline(PipelineArgs),
    /// Emit a training curve or a pipeline trend table as tab-separated text.
    Plotdata(PlotArgs),
}

#[derive(Debug, Args)]
struct ConfigArg {
    /// TOML run configuration; flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct GenArgs {
    #[command(flatten)]
    config: ConfigArg,
    /// Scenario mix, e.g. `fork:0.5,straight` (entries `kind[:weight[:speed[:noise]]]`).
    #[arg(long)]
    mix: Option<String>,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    speed: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long = "M")]
    m: Option<usize>,
    #[arg(long)]
    dt: Option<f64>,
    #[arg(long = "H")]
    h: Option<usize>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ClusterArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    k: Option<usize>,
    /// minibatch_kmeans, full_kmeans or none.
    #[arg(long)]
    method: Option<ClusterMethod>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    /// Checkpoint path.
    #[arg(long)]
    out: PathBuf,
    /// Metrics log path; defaults to `<out>.log.jsonl`.
    #[arg(long)]
    log: Option<PathBuf>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    n_mc_samples: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    plateau_patience: Option<usize>,
    #[arg(long)]
    pseudo_epoch_batches: Option<usize>,
    #[arg(long)]
    lr_halving_factor: Option<f64>,
    #[arg(long)]
    min_learning_rate: Option<f64>,
    #[arg(long)]
    max_steps: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    use_noise_model: Option<bool>,
    #[arg(long)]
    normalized_kernel: Option<bool>,
    #[arg(long)]
    train_beta: Option<bool>,
    #[arg(long)]
    modes: Option<usize>,
    #[arg(long)]
    mixture_warmup_steps: Option<usize>,
    #[arg(long)]
    val_fraction: Option<f64>,
    #[arg(long)]
    max_val_examples: Option<usize>,
    #[arg(long)]
    embedding_dim: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    scene_hidden: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    trajectory_hidden: Option<Vec<usize>>,
}

#[derive(Debug, Args)]
struct BuildIndexArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long)]
    checkpoint: PathBuf,
    /// exact or ivf.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<VariantKind>,
    #[arg(long)]
    n_lists: Option<usize>,
    #[arg(long)]
    n_probe: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[command(flatten)]
    config: ConfigArg,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    index: PathBuf,
    #[arg(long)]
    bank: PathBuf,
    #[arg(long = "in")]
    input: PathBuf,
    /// top1, mode_h, mean, meanshift, sample or mixture.
    #[arg(long)]
    strategy: Option<Strategy>,
    #[arg(long)]
    top_k: Option<usize>,
    #[arg(long)]
    h_weighted: Option<bool>,
    #[arg(long)]
    n_samples: Option<usize>,
    #[arg(long)]
    with_noise: Option<bool>,
    /// Per-mode readout of the mixture strategy.
    #[arg(long)]
    mode_strategy: Option<Strategy>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Append one line of metrics per example.
    #[arg(long)]
    per_example: bool,
}

#[derive(Debug, Args)]
struct PipelineArgs {
    /// fork-bimodal, imbalanced or noisy.
    #[arg(long)]
    preset: Preset,
    #[arg(long)]
    out_dir: PathBuf,
    /// Comma-separated seeds replacing the preset's.
    #[arg(long, value_delimiter = ',')]
    seeds: Option<Vec<u64>>,
    #[arg(long)]
    n_train: Option<usize>,
    #[arg(long)]
    n_test: Option<usize>,
    /// Cap on training steps for every variant (for quick smoke runs).
    #[arg(long)]
    max_steps: Option<usize>,
}

#[derive(Debug, Args)]
#[group(required = true, multiple = false, id = "source")]
struct PlotSource {
    /// Training metrics log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Pipeline report.
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct PlotArgs {
    #[command(flatten)]
    source: PlotSource,
    #[arg(long)]
    out: PathBuf,
}

fn parse_variant(s: &str) -> Result<VariantKind, String> {
    match s {
        "exact" => Ok(VariantKind::Exact),
        "ivf" => Ok(VariantKind::Ivf),
        _ => Err(format!(
            "unknown index variant {s:?}, expected exact or ivf"
        )),
    }
}

/// Program and file format versions, one per line.
pub fn version_text() -> String {
    format!(
        "trajrank {}\ndataset format {DATASET_VERSION}\nbank format {BANK_VERSION}\n\
         checkpoint format {CHECKPOINT_VERSION}\nindex format {INDEX_VERSION}\nprediction format {PREDICTION_VERSION}\n",
        env!("CARGO_PKG_VERSION")
    )
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

/// Parses `args` (program name first), runs the command and returns the exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: Cli) -> CliResult<()> {
    if cli.version {
        print!("{}", version_text());
        return Ok(());
    }
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Usage("--threads must be at least 1".into()));
        }
        // Fails only if a pool already exists, which cannot happen this early.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
    let command = cli
        .command
        .ok_or_else(|| CliError::Usage("missing subcommand; see --help".into()))?;
    match command {
        Command::Gen(a) => {
            let mut c = RunConfig::load_or_default(a.config.config.as_deref())?;
            let g = &mut c.gen;
            set(&mut g.mix, a.mix);
            set(&mut g.n, a.n);
            set(&mut g.seed, a.seed);
            set(&mut g.speed, a.speed);
            set(&mut g.noise, a.noise);
            set(&mut g.m, a.m);
            set(&mut g.dt, a.dt);
            set(&mut g.h, a.h);
            c.write_beside(&a.out)?;
            let n = commands::gen(&c.gen, &a.out)?;
            eprintln!("wrote {n} examples to {}", a.out.display());
        }
        Command::Cluster(a) => {
            let mut c = RunConfig::load_or_default(a.config.config.as_deref())?;
            set(&mut c.cluster.k, a.k);
            set(&mut c.cluster.method, a.method);
            set(&mut c.cluster.seed, a.seed);
            c.write_beside(&a.out)?;
            let bank = commands::cluster(&c.cluster, &a.input, &a.out)?;
            eprintln!(
                "wrote bank of {} trajectories in {} clusters to {}",
                bank.len(),
                bank.k(),
                a.out.display()
            );
        }
        Command::Train(a) => {
            let mut c = RunConfig::load_or_default(a.config.config.as_deref())?;
            let t = &mut c.train;
            set(&mut t.batch_size, a.batch_size);
            set(&mut t.n_mc_samples, a.n_mc_samples);
            set(&mut t.learning_rate, a.learning_rate);
            set(&mut t.plateau_patience, a.plateau_patience);
            set(&mut t.pseudo_epoch_batches, a.pseudo_epoch_batches);
            set(&mut t.lr_halving_factor, a.lr_halving_factor);
            set(&mut t.min_learning_rate, a.min_learning_rate);
            set(&mut t.max_steps, a.max_steps);
            set(&mut t.seed, a.seed);
            set(&mut t.use_noise_model, a.use_noise_model);
            set(&mut t.normalized_kernel, a.normalized_kernel);
            set(&mut t.train_beta, a.train_beta);
            set(&mut t.modes, a.modes);
            set(&mut t.mixture_warmup_steps, a.mixture_warmup_steps);
            set(&mut t.val_fraction, a.val_fraction);
            set(&mut t.max_val_examples, a.max_val_examples);
            set(&mut t.embedding_dim, a.embedding_dim);
            set(&mut t.scene_hidden, a.scene_hidden);
            set(&mut t.trajectory_hidden, a.trajectory_hidden);
            c.write_beside(&a.out)?;
            let log = a.log.unwrap_or_else(|| suffixed(&a.out, ".log.jsonl"));
            let outcome = commands::train(&c.train, &a.input, &a.bank, &a.out, &log)?;
            eprintln!(
                "trained {} steps ({:?}), best val_nll {:.5}; checkpoint {}",
                outcome.steps,
                outcome.status,
                outcome.best_val_nll,
                a.out.display()
            );
        }
        Command::BuildIndex(a) => {
            let mut c = RunConfig::load_or_default(a.config.config.as_deref())?;
            set(&mut c.index.variant, a.variant);
            set(&mut c.index.n_lists, a.n_lists);
            set(&mut c.index.n_probe, a.n_probe);
            set(&mut c.index.seed, a.seed);
            c.write_beside(&a.out)?;
            let index = commands::build_index(&c.index, &a.bank, &a.checkpoint, &a.out)?;
            eprintln!(
                "indexed {} embeddings of dimension {} into {}",
                index.len(),
                index.dim(),
                a.out.display()
            );
        }
        Command::Predict(a) => {
            let mut c = RunConfig::load_or_default(a.config.config.as_deref())?;
            let p = &mut c.predict;
            set(&mut p.strategy, a.strategy);
            set(&mut p.top_k, a.top_k);
            set(&mut p.h_weighted, a.h_weighted);
            set(&mut p.n_samples, a.n_samples);
            set(&mut p.with_noise, a.with_noise);
            set(&mut p.mode_strategy, a.mode_strategy);
            set(&mut p.seed, a.seed);
            c.write_beside(&a.out)?;
            let n = commands::predict(
                &c.predict,
                &a.checkpoint,
                &a.index,
                &a.bank,
                &a.input,
                &a.out,
            )?;
            eprintln!("wrote {n} predictions to {}", a.out.display());
        }
        Command::Eval(a) => {
            let r = commands::eval(&a.pred, &a.data, &a.out, a.per_example)?;
            eprintln!(
                "ade {:.4}  fde {:.4}  hit_rate {:.4}  ll {:.4}  ll_per_timestamp {:.4}  n {}",
                r.ade, r.fde, r.hit_rate, r.ll, r.ll_per_timestamp, r.n_examples
            );
        }
        Command::Pipeline(a) => {
            let overrides = PlanOverrides {
                seeds: a.seeds,
                n_train: a.n_train,
                n_test: a.n_test,
                max_steps: a.max_steps,
            };
            let plan = PipelinePlan::for_preset(a.preset, &overrides);
            let report = pipeline::run(&plan, &a.out_dir)?;
            for c in &report.criteria {
                eprintln!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            eprintln!(
                "report written to {}",
                a.out_dir.join("report.json").display()
            );
        }
        Command::Plotdata(a) => {
            let text = match (a.source.log, a.source.report) {
                (Some(log), _) => commands::plot_log(&commands::read_log(&log)?),
                (None, Some(report)) => {
                    let raw = fs::read_to_string(&report).map_err(|e| CliError::io(&report, e))?;
                    let parsed =
                        serde_json::from_str(&raw).map_err(|e| trajrank_core::Error::Parse {
                            path: report.clone(),
                            line: e.line(),
                            message: e.to_string(),
                        })?;
                    pipeline::plot_report(&parsed)
                }
                (None, None) => unreachable!("clap requires one source"),
            };
            fs::write(&a.out, text).map_err(|e| CliError::io(&a.out, e))?;
        }
    }
    Ok(())
}

fn suffixed(path: &Path, suffix: &str) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(suffix);
    PathBuf::from(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn usage_errors_exit_with_one() {
        assert_eq!(run(["trajrank", "no-such-command"]), 1);
        assert_eq!(run(["trajrank"]), 1);
        assert_eq!(run(["trajrank", "gen", "--n", "x", "--out", "d.jsonl"]), 1);
    }

    #[test]
    fn version_lists_formats() {
        let v = version_text();
        assert!(v.starts_with("trajrank "));
        for name in ["dataset", "bank", "checkpoint", "index", "prediction"] {
            assert!(v.contains(&format!("{name} format ")), "{v}");
        }
        assert_eq!(run(["trajrank", "--version"]), 0);
    }

    #[test]
    fn flags_override_config_file() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(&cfg, "[gen]\nmix = \"stop\"\nn = 5\nseed = 3\n").unwrap();
        let out = dir.path().join("d.jsonl");
        let code = run([
            "trajrank",
            "gen",
            "--config",
            cfg.to_str().unwrap(),
            "--n",
            "7",
            "--out",
            out.to_str().unwrap(),
        ]);
        assert_eq!(code, 0);
        let resolved = RunConfig::load(&suffixed(&out, ".config.toml")).unwrap();
        assert_eq!(
            (resolved.gen.mix.as_str(), resolved.gen.n, resolved.gen.seed),
            ("stop", 7, 3)
        );
        assert_eq!(fs::read_to_string(&out).unwrap().lines().count(), 8);
    }

    #[test]
    fn bad_config_key_is_a_usage_error() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.toml");
        fs::write(&cfg, "[gen]\nsamples = 5\n").unwrap();
        let out = dir.path().join("d.jsonl");
        assert_eq!(
            run([
                "trajrank",
                "gen",
                "--config",
                cfg.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            1
        );
    }

    #[test]
    fn missing_input_is_a_data_error() {
        let dir = tempfile::tempdir().unwrap();
        let out = dir.path().join("bank.jsonl");
        let input = dir.path().join("absent.jsonl");
        assert_eq!(
            run([
                "trajrank",
                "cluster",
                "--in",
                input.to_str().unwrap(),
                "--out",
                out.to_str().unwrap()
            ]),
            2
        );
    }
}
