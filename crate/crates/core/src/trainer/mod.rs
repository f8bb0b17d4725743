//! Model fitting: sampled-softmax losses, Adam, and a plateau-halving
//! learning-rate schedule driven by a held-out validation split.

mod adam;
mod loss;
mod schedule;

pub use adam::{adam_step, AdamState};
pub use loss::{
    log_mc_normalizer, loss_and_grad, mc_normalizer, nll_base, nll_mixture, nll_noise, LossInput,
    LossOptions,
};
pub use schedule::PlateauSchedule;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::bank::TrajectoryBank;
use crate::encoders::{ModelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::types::{Example, SceneFeatures, Trajectory};

/// Salt that separates the split shuffle from the per-step streams.
const SPLIT_SALT: u64 = 0x5eed_5b11_7000_0001;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Bank samples per batch used for the normalizer estimate.
    pub n_mc_samples: usize,
    pub learning_rate: f64,
    /// Non-improving validations tolerated before the rate is halved.
    pub plateau_patience: usize,
    /// Batches between validations.
    pub pseudo_epoch_batches: usize,
    pub lr_halving_factor: f64,
    pub min_learning_rate: f64,
    pub max_steps: usize,
    pub seed: u64,
    pub use_noise_model: bool,
    pub normalized_kernel: bool,
    /// Whether the noise precision is learned or held at its initial value.
    pub train_beta: bool,
    /// Mixture modes `m`.
    pub modes: usize,
    /// Steps during which the mixture weights stay uniform so every mode keeps receiving gradient.
    pub mixture_warmup_steps: usize,
    pub val_fraction: f64,
    pub max_val_examples: usize,
    pub embedding_dim: usize,
    pub scene_hidden: Vec<usize>,
    pub trajectory_hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            n_mc_samples: 256,
            learning_rate: 5e-4,
            plateau_patience: 5,
            pseudo_epoch_batches: 100,
            lr_halving_factor: 0.5,
            min_learning_rate: 1e-7,
            max_steps: 3000,
            seed: 0,
            use_noise_model: true,
            normalized_kernel: false,
            train_beta: true,
            modes: 1,
            mixture_warmup_steps: 0,
            val_fraction: 0.1,
            max_val_examples: 512,
            embedding_dim: 32,
            scene_hidden: vec![128, 128, 64],
            trajectory_hidden: vec![128, 128, 64],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("batch_size", self.batch_size),
            ("plateau_patience", self.plateau_patience),
            ("pseudo_epoch_batches", self.pseudo_epoch_batches),
            ("modes", self.modes),
            ("max_val_examples", self.max_val_examples),
            ("embedding_dim", self.embedding_dim),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Argument(format!("{name} must be at least 1")));
        }
        if self.n_mc_samples < 2 {
            return Err(Error::Argument("n_mc_samples must be at least 2".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Argument("learning_rate must be positive".into()));
        }
        if !(self.lr_halving_factor > 0.0 && self.lr_halving_factor < 1.0) {
            return Err(Error::Argument(
                "lr_halving_factor must lie in (0, 1)".into(),
            ));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return Err(Error::Argument("val_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }

    fn loss_options(&self) -> LossOptions {
        LossOptions {
            noise_model: self.use_noise_model,
            normalized_kernel: self.normalized_kernel,
        }
    }

    pub fn model_config(&self, scene_dim: usize, trajectory_len: usize) -> ModelConfig {
        ModelConfig::with_dims(
            scene_dim,
            trajectory_len,
            self.modes,
            self.embedding_dim,
            self.scene_hidden.clone(),
            self.trajectory_hidden.clone(),
        )
    }
}

/// One line of the loss-curve log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRecord {
    pub step: usize,
    /// Mean training loss since the previous record; absent before the first step.
    pub train_nll: Option<f64>,
    pub val_nll: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum TrainStatus {
    /// Ran for `max_steps`.
    Completed,
    /// The learning rate fell below the configured minimum.
    LearningRateExhausted,
    /// A non-finite loss or gradient stopped training at `step`.
    Aborted { step: usize, message: String },
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters with the best validation loss seen.
    pub params: ModelParams,
    pub log: Vec<LogRecord>,
    pub status: TrainStatus,
    pub best_val_nll: f64,
    pub steps: usize,
}

/// Seeded shuffle into `(train, validation)` index sets; validation keeps at least one example.
pub fn split_indices(n: usize, val_fraction: f64, seed: u64) -> Result<(Vec<usize>, Vec<usize>)> {
    if n < 2 {
        return Err(Error::Argument(
            "need at least two examples to carve a validation split".into(),
        ));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut ChaCha8Rng::seed_from_u64(seed ^ SPLIT_SALT));
    let n_val = ((n as f64 * val_fraction).round() as usize).clamp(1, n - 1);
    let train = idx.split_off(n_val);
    Ok((train, idx))
}

fn step_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Mean loss over `examples`, scored in batches against one fixed sample set.
fn validation_loss(
    params: &ModelParams,
    examples: &[&Example],
    samples: &[&Trajectory],
    batch_size: usize,
    options: LossOptions,
) -> Result<f64> {
    let mut total = 0.0;
    for chunk in examples.chunks(batch_size) {
        let scenes: Vec<&SceneFeatures> = chunk.iter().map(|e| &e.scene).collect();
        let mut candidates = samples.to_vec();
        candidates.extend(chunk.iter().map(|e| &e.ground_truth));
        let gt_index: Vec<usize> = (samples.len()..candidates.len()).collect();
        let input = LossInput {
            scenes: &scenes,
            candidates: &candidates,
            gt_index: &gt_index,
            log_weights: None,
        };
        total += nll_mixture(params, &input, options)? * chunk.len() as f64;
    }
    Ok(total / examples.len() as f64)
}

fn check_inputs(examples: &[Example], bank: &TrajectoryBank) -> Result<(usize, usize)> {
    let first = examples
        .first()
        .ok_or_else(|| Error::Argument("training set is empty".into()))?;
    let (f, m) = (first.scene.len(), first.ground_truth.len());
    if bank.m() != m {
        return Err(Error::Shape(format!(
            "bank trajectories have {} points, examples have {m}",
            bank.m()
        )));
    }
    if let Some(bad) = examples
        .iter()
        .find(|e| e.scene.len() != f || e.ground_truth.len() != m)
    {
        return Err(Error::Shape(format!(
            "example {} disagrees with the first example's shape",
            bad.id
        )));
    }
    Ok((f, m))
}

pub fn train(
    config: &TrainConfig,
    examples: &[Example],
    bank: &TrajectoryBank,
) -> Result<TrainOutcome> {
    train_with_progress(config, examples, bank, |_| {})
}

/// Like [`train`], calling `progress` after every validation.
pub fn train_with_progress(
    config: &TrainConfig,
    examples: &[Example],
    bank: &TrajectoryBank,
    mut progress: impl FnMut(&LogRecord),
) -> Result<TrainOutcome> {
    config.validate()?;
    let (f, m) = check_inputs(examples, bank)?;
    let (train_idx, val_idx) = split_indices(examples.len(), config.val_fraction, config.seed)?;
    let train_set: Vec<&Example> = train_idx.iter().map(|&i| &examples[i]).collect();
    let val_set: Vec<&Example> = val_idx
        .iter()
        .take(config.max_val_examples)
        .map(|&i| &examples[i])
        .collect();

    let mut params = ModelParams::init(config.model_config(f, m), config.seed)?;
    params.fit_standardization(
        train_set.iter().map(|e| &e.scene),
        bank.entries().iter().map(|e| &e.trajectory),
    );

    let options = config.loss_options();
    let mut val_rng = step_rng(config.seed, 0);
    let val_samples: Vec<&Trajectory> = (0..config.n_mc_samples)
        .map(|_| &bank.sample_h(&mut val_rng).trajectory)
        .collect();
    let evaluate =
        |p: &ModelParams| validation_loss(p, &val_set, &val_samples, config.batch_size, options);

    let mut schedule = PlateauSchedule::new(
        config.learning_rate,
        config.lr_halving_factor,
        config.plateau_patience,
    );
    let mut adam = AdamState::new(params.len());
    let mut log = Vec::new();

    let initial = evaluate(&params)?;
    schedule.observe(initial);
    let mut best = params.clone();
    let first = LogRecord {
        step: 0,
        train_nll: None,
        val_nll: initial,
        lr: schedule.lr(),
    };
    progress(&first);
    log.push(first);

    let mut status = TrainStatus::Completed;
    let mut running = (0.0, 0usize);
    let mut step = 0;
    while step < config.max_steps {
        if schedule.lr() < config.min_learning_rate {
            status = TrainStatus::LearningRateExhausted;
            break;
        }
        let mut rng = step_rng(config.seed, step as u64 + 1);
        let batch: Vec<&Example> = (0..config.batch_size)
            .map(|_| train_set[rng.random_range(0..train_set.len())])
            .collect();
        let mut candidates: Vec<&Trajectory> = (0..config.n_mc_samples)
            .map(|_| &bank.sample_h(&mut rng).trajectory)
            .collect();
        candidates.extend(batch.iter().map(|e| &e.ground_truth));
        let scenes: Vec<&SceneFeatures> = batch.iter().map(|e| &e.scene).collect();
        let gt_index: Vec<usize> = (config.n_mc_samples..candidates.len()).collect();
        let input = LossInput {
            scenes: &scenes,
            candidates: &candidates,
            gt_index: &gt_index,
            log_weights: None,
        };
        let (loss, mut grads) = match loss_and_grad(&params, &input, options) {
            Ok(v) => v,
            Err(Error::Numeric(message)) => {
                status = TrainStatus::Aborted { step, message };
                break;
            }
            Err(e) => return Err(e),
        };
        if step < config.mixture_warmup_steps {
            grads[params.mixture_head_range()].fill(0.0);
        }
        if !config.train_beta {
            grads[params.beta_index()] = 0.0;
        }
        adam_step(params.values_mut(), &grads, &mut adam, schedule.lr());
        step += 1;
        running.0 += loss;
        running.1 += 1;

        if step % config.pseudo_epoch_batches == 0 || step == config.max_steps {
            let val = match evaluate(&params) {
                Ok(v) => v,
                Err(Error::Numeric(message)) => {
                    status = TrainStatus::Aborted { step, message };
                    break;
                }
                Err(e) => return Err(e),
            };
            if schedule.observe(val) {
                best = params.clone();
            }
            let record = LogRecord {
                step,
                train_nll: Some(running.0 / running.1 as f64),
                val_nll: val,
                lr: schedule.lr(),
            };
            running = (0.0, 0);
            progress(&record);
            log.push(record);
        }
    }

    Ok(TrainOutcome {
        params: best,
        best_val_nll: schedule.best().unwrap_or(initial),
        log,
        status,
        steps: step,
    })
}
