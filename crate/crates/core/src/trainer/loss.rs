//! Sampled-softmax likelihoods: the plain ranking loss, the variant with an
//! exponential noise kernel around the ground truth, and their mixture.
//!
//! Every loss works on a shared candidate set (MC samples from the bank plus
//! the batch ground truths). With candidate log-weights `lw_j` and scores
//! `S_bj = α ⟨f(q_b), g(t_j)⟩`, the per-example terms are
//!
//! * plain: `lse_j(S_bj + lw_j) - S_b,gt(b)`
//! * noise: `lse_j(S_bj + lw_j) - lse_j(S_bj + lw_j - β ‖t_gt(b) - t_j‖)`
//!
//! and the mixture is `-log Σ_k π_k exp(-loss_k)`.

use crate::encoders::ModelParams;
use crate::error::{Error, Result};
use crate::tape::{log_sum_exp, Matrix, Tape, Var};
use crate::types::{euclidean, Embedding, SceneFeatures, Trajectory};

/// One batch of examples scored against a shared candidate set.
#[derive(Debug, Clone, Copy)]
pub struct LossInput<'a> {
    pub scenes: &'a [&'a SceneFeatures],
    pub candidates: &'a [&'a Trajectory],
    /// Position of each example's ground truth inside `candidates`.
    pub gt_index: &'a [usize],
    /// Optional log-weights of the candidates; all zero when `None`.
    pub log_weights: Option<&'a [f64]>,
}

impl LossInput<'_> {
    fn validate(&self) -> Result<()> {
        if self.scenes.is_empty() || self.candidates.is_empty() {
            return Err(Error::Argument(
                "loss needs at least one example and one candidate".into(),
            ));
        }
        if self.gt_index.len() != self.scenes.len() {
            return Err(Error::Length {
                expected: self.scenes.len(),
                actual: self.gt_index.len(),
            });
        }
        if let Some(&bad) = self.gt_index.iter().find(|&&i| i >= self.candidates.len()) {
            return Err(Error::Argument(format!(
                "ground-truth index {bad} outside {} candidates",
                self.candidates.len()
            )));
        }
        if let Some(lw) = self.log_weights {
            if lw.len() != self.candidates.len() {
                return Err(Error::Length {
                    expected: self.candidates.len(),
                    actual: lw.len(),
                });
            }
        }
        Ok(())
    }

    /// `batch × candidates` ground-truth-to-candidate distances.
    fn distances(&self) -> Matrix {
        let n = self.candidates.len();
        let data = self
            .gt_index
            .iter()
            .flat_map(|&g| {
                let gt = self.candidates[g].as_flat();
                self.candidates
                    .iter()
                    .map(move |c| euclidean(gt, c.as_flat()))
            })
            .collect();
        Matrix::new(self.scenes.len(), n, data)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct LossOptions {
    pub noise_model: bool,
    /// Include the normalizing constant of the noise kernel so `β` is calibrated.
    pub normalized_kernel: bool,
}

/// `log Ẑ = log Σ_j w_j exp(α ⟨q, e_j⟩) / Σ_j w_j`, with uniform weights when `log_weights` is `None`.
pub fn log_mc_normalizer(
    scene: &Embedding,
    samples: &[Embedding],
    alpha: f64,
    log_weights: Option<&[f64]>,
) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::Argument(
            "normalizer needs at least one sample".into(),
        ));
    }
    let zero = vec![0.0; samples.len()];
    let lw = log_weights.unwrap_or(&zero);
    if lw.len() != samples.len() {
        return Err(Error::Length {
            expected: samples.len(),
            actual: lw.len(),
        });
    }
    let mut terms = Vec::with_capacity(samples.len());
    for (e, w) in samples.iter().zip(lw) {
        if e.dim() != scene.dim() {
            return Err(Error::Shape(format!(
                "embedding dims {} and {}",
                scene.dim(),
                e.dim()
            )));
        }
        terms.push(alpha * scene.dot(e.values()) + w);
    }
    Ok(log_sum_exp(&terms) - log_sum_exp(lw))
}

/// Monte-Carlo estimate `Ẑ = (1/N) Σ exp(α ⟨q, g(t')⟩)` over uniformly drawn samples.
pub fn mc_normalizer(scene: &Embedding, samples: &[Embedding], alpha: f64) -> Result<f64> {
    Ok(log_mc_normalizer(scene, samples, alpha, None)?.exp())
}

/// `log` of the normalizer of `exp(-β ‖x‖)` over `R^dim`, as a function of `β`: `c - dim·log β`.
/// Returns `c = log(2 π^{dim/2} Γ(dim) / Γ(dim/2))`.
pub(crate) fn kernel_log_constant(dim: usize) -> f64 {
    let half = dim as f64 / 2.0;
    std::f64::consts::LN_2 + half * std::f64::consts::PI.ln() + ln_gamma_int(dim)
        - ln_gamma_half(dim)
}

/// `log Γ(n)` for integer `n ≥ 1`.
fn ln_gamma_int(n: usize) -> f64 {
    (1..n).map(|k| (k as f64).ln()).sum()
}

/// `log Γ(n / 2)` for integer `n ≥ 1`.
fn ln_gamma_half(n: usize) -> f64 {
    if n.is_multiple_of(2) {
        ln_gamma_int(n / 2)
    } else {
        // Γ(k + 1/2) = √π · Π_{i<k} (i + 1/2)
        let k = n / 2;
        0.5 * std::f64::consts::PI.ln() + (0..k).map(|i| (i as f64 + 0.5).ln()).sum::<f64>()
    }
}

/// Per-mode loss columns (`batch × 1` each) plus the mixture logits.
struct ModeLosses {
    per_mode: Vec<Var>,
    mixture_logits: Var,
}

fn mode_losses(
    tape: &mut Tape,
    params: &ModelParams,
    input: &LossInput,
    options: LossOptions,
) -> Result<ModeLosses> {
    input.validate()?;
    let scene = params.scene_graph(tape, input.scenes)?;
    let cand = params.trajectory_graph(tape, input.candidates)?;
    let lw = input
        .log_weights
        .map(|w| tape.constant(Matrix::new(1, w.len(), w.to_vec())));
    let noise = if options.noise_model {
        let (beta_raw, beta) = params.beta_graph(tape);
        let d = tape.constant(input.distances());
        Some((beta_raw, beta, d))
    } else {
        None
    };

    let mut per_mode = Vec::with_capacity(params.modes());
    for k in 0..params.modes() {
        let (_, alpha) = params.alpha_graph(tape, k);
        let dots = tape.matmul_nt(scene.embeddings[k], cand);
        let scores = tape.scale(dots, alpha);
        let weighted = match lw {
            Some(lw) => tape.add_row(scores, lw),
            None => scores,
        };
        let log_z = tape.log_sum_exp_rows(weighted);
        let loss = match noise {
            None => {
                let gt = tape.gather_cols(scores, input.gt_index.to_vec());
                tape.sub(log_z, gt)
            }
            Some((beta_raw, beta, d)) => {
                let penalty = tape.scale(d, beta);
                let kernel = tape.sub(weighted, penalty);
                let log_num = tape.log_sum_exp_rows(kernel);
                let loss = tape.sub(log_z, log_num);
                if options.normalized_kernel {
                    // -log of the kernel density adds c - dim·log β
                    let dim = 2 * input.candidates[0].len();
                    let log_beta_term = tape.scale_const(beta_raw, -(dim as f64));
                    let shifted = tape.add_scalar(loss, log_beta_term);
                    let c = tape.constant(Matrix::scalar(kernel_log_constant(dim)));
                    tape.add_scalar(shifted, c)
                } else {
                    loss
                }
            }
        };
        per_mode.push(loss);
    }
    Ok(ModeLosses {
        per_mode,
        mixture_logits: scene.mixture_logits,
    })
}

fn mixture_graph(tape: &mut Tape, losses: &ModeLosses) -> Var {
    let log_norm = tape.log_sum_exp_rows(losses.mixture_logits);
    let log_pi = tape.sub_col(losses.mixture_logits, log_norm);
    let neg: Vec<Var> = losses
        .per_mode
        .iter()
        .map(|&l| tape.scale_const(l, -1.0))
        .collect();
    let log_lik = tape.concat_cols(neg);
    let joint = tape.add(log_pi, log_lik);
    let per_example = tape.log_sum_exp_rows(joint);
    let mean = tape.mean(per_example);
    tape.scale_const(mean, -1.0)
}

fn unimodal(params: &ModelParams, input: &LossInput, options: LossOptions) -> Result<f64> {
    let mut tape = Tape::new();
    let losses = mode_losses(&mut tape, params, input, options)?;
    let mean = tape.mean(losses.per_mode[0]);
    finite(tape.scalar_value(mean))
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("loss evaluated to {v}")))
    }
}

/// Mean sampled-softmax cross-entropy of the ground truths under mode 0.
pub fn nll_base(params: &ModelParams, input: &LossInput) -> Result<f64> {
    unimodal(params, input, LossOptions::default())
}

/// Mean noise-model negative log-likelihood under mode 0.
pub fn nll_noise(params: &ModelParams, input: &LossInput, normalized_kernel: bool) -> Result<f64> {
    unimodal(
        params,
        input,
        LossOptions {
            noise_model: true,
            normalized_kernel,
        },
    )
}

/// Mean mixture negative log-likelihood over all modes.
pub fn nll_mixture(params: &ModelParams, input: &LossInput, options: LossOptions) -> Result<f64> {
    let mut tape = Tape::new();
    let losses = mode_losses(&mut tape, params, input, options)?;
    let root = mixture_graph(&mut tape, &losses);
    finite(tape.scalar_value(root))
}

/// Mixture loss and its gradient with respect to the flat parameter vector.
pub fn loss_and_grad(
    params: &ModelParams,
    input: &LossInput,
    options: LossOptions,
) -> Result<(f64, Vec<f64>)> {
    let mut tape = Tape::new();
    let losses = mode_losses(&mut tape, params, input, options)?;
    let root = mixture_graph(&mut tape, &losses);
    let loss = finite(tape.scalar_value(root))?;
    let grads = tape.backward(root)?.param_grads(params.len());
    if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Numeric(format!(
            "gradient entry {bad} is not finite"
        )));
    }
    Ok((loss, grads))
}
