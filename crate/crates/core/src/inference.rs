//! Posterior readouts over search results: top-1 and h-corrected modes, the
//! weighted posterior mean, mean-shift mode seeking under the noise kernel,
//! posterior sampling, and per-mode aggregation for mixture models.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Gamma, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bank::TrajectoryBank;
use crate::dataset::{read_jsonl, write_jsonl};
use crate::encoders::{ModelParams, SceneEncoding};
use crate::error::{Error, Result};
use crate::mips::MipsIndex;
use crate::tape::log_sum_exp;
use crate::types::{euclidean, Embedding, Example, SceneFeatures, Trajectory};

pub const DEFAULT_TOP_K: usize = 150;
pub const PREDICTION_VERSION: u32 = 1;

const MEAN_SHIFT_TOL: f64 = 1e-4;
const MEAN_SHIFT_MAX_ITERS: usize = 50;
const MEAN_SHIFT_MAX_HALVINGS: usize = 30;
const DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    #[serde(rename = "traj")]
    pub trajectory: Trajectory,
    pub weight: f64,
    pub mode_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    Top1,
    ModeH,
    Mean,
    #[serde(rename = "meanshift")]
    MeanShift,
    Sample,
    Mixture,
}

impl Strategy {
    pub fn name(self) -> &'static str {
        match self {
            Strategy::Top1 => "top1",
            Strategy::ModeH => "mode_h",
            Strategy::Mean => "mean",
            Strategy::MeanShift => "meanshift",
            Strategy::Sample => "sample",
            Strategy::Mixture => "mixture",
        }
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        [
            Strategy::Top1,
            Strategy::ModeH,
            Strategy::Mean,
            Strategy::MeanShift,
            Strategy::Sample,
            Strategy::Mixture,
        ]
        .into_iter()
        .find(|k| k.name() == s)
        .ok_or_else(|| Error::Argument(format!("unknown strategy {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PredictOptions {
    pub top_k: usize,
    /// Multiply candidate weights by the bank density `h(t)`.
    pub h_weighted: bool,
    /// Draws per scene for [`Strategy::Sample`].
    pub n_samples: usize,
    /// Add kernel noise to posterior samples.
    pub with_noise: bool,
    /// Per-mode readout used by [`Strategy::Mixture`].
    pub mode_strategy: Strategy,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            top_k: DEFAULT_TOP_K,
            h_weighted: false,
            n_samples: 6,
            with_noise: false,
            mode_strategy: Strategy::Mean,
        }
    }
}

/// One search result with its shift-stabilized, unnormalized posterior weight.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate<'a> {
    pub id: u64,
    pub trajectory: &'a Trajectory,
    pub score: f64,
    pub weight: f64,
}

/// Scales candidate weights to sum to one.
pub fn normalized_weights(candidates: &[Candidate]) -> Vec<f64> {
    let total: f64 = candidates.iter().map(|c| c.weight).sum();
    candidates.iter().map(|c| c.weight / total).collect()
}

/// Result of a mean-shift run.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanShiftResult {
    pub point: Vec<f64>,
    /// `log F` of every accepted iterate, starting with the initial point.
    pub log_objective: Vec<f64>,
    pub iterations: usize,
}

/// `log F(t) = log Σ w_i exp(-β ‖t - p_i‖)`.
pub fn mean_shift_log_objective(t: &[f64], points: &[&[f64]], weights: &[f64], beta: f64) -> f64 {
    let terms: Vec<f64> = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w.ln() - beta * euclidean(t, p))
        .collect();
    log_sum_exp(&terms)
}

/// Climbs `F(t) = Σ w_i exp(-β ‖t - p_i‖)` from `init` by fixed-point iteration with
/// weights `w_i β exp(-β r_i) / max(r_i, 1e-9)`. A step that lowers `F` is halved
/// until it does not; the best iterate is returned.
pub fn mean_shift(points: &[&[f64]], weights: &[f64], beta: f64, init: &[f64]) -> MeanShiftResult {
    assert_eq!(points.len(), weights.len());
    assert!(!points.is_empty());
    let objective = |t: &[f64]| mean_shift_log_objective(t, points, weights, beta);
    let mut t = init.to_vec();
    let mut trace = vec![objective(&t)];
    let mut iterations = 0;
    while iterations < MEAN_SHIFT_MAX_ITERS {
        iterations += 1;
        let log_c: Vec<f64> = points
            .iter()
            .zip(weights)
            .map(|(p, w)| {
                let r = euclidean(&t, p);
                w.ln() + beta.ln() - beta * r - r.max(DISTANCE_FLOOR).ln()
            })
            .collect();
        let lse = log_sum_exp(&log_c);
        let mut target = vec![0.0; t.len()];
        for (p, lc) in points.iter().zip(&log_c) {
            let c = (lc - lse).exp();
            target.iter_mut().zip(*p).for_each(|(x, y)| *x += c * y);
        }
        let current = *trace.last().expect("trace starts non-empty");
        let mut step: Vec<f64> = target.iter().zip(&t).map(|(a, b)| a - b).collect();
        let mut accepted = None;
        for _ in 0..MEAN_SHIFT_MAX_HALVINGS {
            let candidate: Vec<f64> = t.iter().zip(&step).map(|(a, s)| a + s).collect();
            let value = objective(&candidate);
            if value >= current {
                accepted = Some((candidate, value));
                break;
            }
            step.iter_mut().for_each(|s| *s *= 0.5);
        }
        let Some((next, value)) = accepted else { break };
        let moved = euclidean(&next, &t);
        t = next;
        trace.push(value);
        if moved < MEAN_SHIFT_TOL {
            break;
        }
    }
    MeanShiftResult {
        point: t,
        log_objective: trace,
        iterations,
    }
}

/// Inference context binding a model to its bank and search index.
#[derive(Debug, Clone, Copy)]
pub struct Predictor<'a> {
    params: &'a ModelParams,
    index: &'a MipsIndex,
    bank: &'a TrajectoryBank,
}

impl<'a> Predictor<'a> {
    pub fn new(
        params: &'a ModelParams,
        index: &'a MipsIndex,
        bank: &'a TrajectoryBank,
    ) -> Result<Self> {
        if index.dim() != params.config().embedding_dim() {
            return Err(Error::Shape(format!(
                "index dim {} disagrees with model dim {}",
                index.dim(),
                params.config().embedding_dim()
            )));
        }
        if bank.m() != params.config().trajectory_len() {
            return Err(Error::Shape(
                "bank trajectory length disagrees with the model".into(),
            ));
        }
        if let Some(id) = index.ids().iter().find(|&&id| bank.get(id).is_none()) {
            return Err(Error::Argument(format!(
                "index id {id} is missing from the bank"
            )));
        }
        Ok(Self {
            params,
            index,
            bank,
        })
    }

    pub fn encode(&self, scene: &SceneFeatures) -> Result<SceneEncoding> {
        Ok(self
            .params
            .encode_scenes(&[scene])?
            .pop()
            .expect("one scene in, one out"))
    }

    /// Search results for `query` under mode `mode` with weights `exp(α_k s - α_k s_max)`,
    /// optionally times `h(t)`.
    pub fn candidates_for(
        &self,
        query: &Embedding,
        mode: usize,
        top_k: usize,
        h_weighted: bool,
    ) -> Result<Vec<Candidate<'a>>> {
        let hits = self.index.search(query, top_k)?;
        let alpha = self.params.alpha(mode);
        let best = hits.first().map_or(0.0, |h| alpha * h.score);
        let bank = self.bank;
        Ok(hits
            .into_iter()
            .map(|h| {
                let mut weight = (alpha * h.score - best).exp();
                if h_weighted {
                    weight *= bank
                        .h_density(h.id)
                        .expect("index ids checked against the bank");
                }
                Candidate {
                    id: h.id,
                    trajectory: &bank
                        .get(h.id)
                        .expect("index ids checked against the bank")
                        .trajectory,
                    score: h.score,
                    weight,
                }
            })
            .collect())
    }

    pub fn candidate_scores(
        &self,
        scene: &SceneFeatures,
        mode: usize,
        options: &PredictOptions,
    ) -> Result<Vec<Candidate<'a>>> {
        let enc = self.encode(scene)?;
        let query = enc
            .per_mode
            .get(mode)
            .ok_or_else(|| Error::Argument(format!("mode {mode} out of range")))?;
        self.candidates_for(query, mode, options.top_k, options.h_weighted)
    }

    fn dominant_mode(enc: &SceneEncoding) -> usize {
        enc.mixture
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (k, &p)| {
                if p > best.1 {
                    (k, p)
                } else {
                    best
                }
            })
            .0
    }

    /// Single-trajectory readout of `mode`.
    fn point_estimate(
        &self,
        enc: &SceneEncoding,
        mode: usize,
        strategy: Strategy,
        options: &PredictOptions,
    ) -> Result<Trajectory> {
        let query = &enc.per_mode[mode];
        match strategy {
            Strategy::Top1 => {
                let c = self.candidates_for(query, mode, 1, false)?;
                Ok(c[0].trajectory.clone())
            }
            Strategy::ModeH => {
                let c = self.candidates_for(query, mode, options.top_k, true)?;
                let best = c.iter().fold(
                    &c[0],
                    |best, x| if x.weight > best.weight { x } else { best },
                );
                Ok(best.trajectory.clone())
            }
            Strategy::Mean => {
                let c = self.candidates_for(query, mode, options.top_k, options.h_weighted)?;
                let w = normalized_weights(&c);
                let mut mean = vec![0.0; c[0].trajectory.as_flat().len()];
                for (cand, wi) in c.iter().zip(&w) {
                    mean.iter_mut()
                        .zip(cand.trajectory.as_flat())
                        .for_each(|(m, x)| *m += wi * x);
                }
                Trajectory::from_flat(mean)
            }
            Strategy::MeanShift => {
                let c = self.candidates_for(query, mode, options.top_k, options.h_weighted)?;
                let w = normalized_weights(&c);
                let points: Vec<&[f64]> = c.iter().map(|x| x.trajectory.as_flat()).collect();
                let result = mean_shift(&points, &w, self.params.beta(), points[0]);
                Trajectory::from_flat(result.point)
            }
            Strategy::Sample | Strategy::Mixture => Err(Error::Argument(format!(
                "{strategy} is not a per-mode point estimate"
            ))),
        }
    }

    /// Draws `n` trajectories from the posterior; for mixture models each draw first picks a mode.
    pub fn sample_posterior<R: Rng + ?Sized>(
        &self,
        scene: &SceneFeatures,
        n: usize,
        options: &PredictOptions,
        rng: &mut R,
    ) -> Result<Vec<(usize, Trajectory)>> {
        let enc = self.encode(scene)?;
        let modes = WeightedIndex::new(&enc.mixture)
            .map_err(|e| Error::Numeric(format!("mixture weights: {e}")))?;
        let mut per_mode: Vec<Option<(Vec<Candidate>, WeightedIndex<f64>)>> =
            vec![None; enc.per_mode.len()];
        let beta = self.params.beta();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let k = modes.sample(rng);
            if per_mode[k].is_none() {
                let c =
                    self.candidates_for(&enc.per_mode[k], k, options.top_k, options.h_weighted)?;
                let w: Vec<f64> = c.iter().map(|x| x.weight).collect();
                let dist = WeightedIndex::new(&w)
                    .map_err(|e| Error::Numeric(format!("candidate weights: {e}")))?;
                per_mode[k] = Some((c, dist));
            }
            let (cands, dist) = per_mode[k].as_ref().expect("filled above");
            let base = cands[dist.sample(rng)].trajectory;
            let t = if options.with_noise {
                add_kernel_noise(base, beta, rng)?
            } else {
                base.clone()
            };
            out.push((k, t));
        }
        Ok(out)
    }

    /// Runs `strategy` for one scene. Unimodal strategies on a mixture model use the mode with the largest weight.
    pub fn predict<R: Rng + ?Sized>(
        &self,
        scene: &SceneFeatures,
        strategy: Strategy,
        options: &PredictOptions,
        rng: &mut R,
    ) -> Result<Vec<Prediction>> {
        if options.top_k == 0 {
            return Err(Error::Argument("top_k must be at least 1".into()));
        }
        match strategy {
            Strategy::Sample => {
                if options.n_samples == 0 {
                    return Err(Error::Argument("n_samples must be at least 1".into()));
                }
                let w = 1.0 / options.n_samples as f64;
                Ok(self
                    .sample_posterior(scene, options.n_samples, options, rng)?
                    .into_iter()
                    .map(|(k, trajectory)| Prediction {
                        trajectory,
                        weight: w,
                        mode_index: k,
                    })
                    .collect())
            }
            Strategy::Mixture => self.predict_mixture(scene, options.mode_strategy, options),
            _ => {
                let enc = self.encode(scene)?;
                let k = Self::dominant_mode(&enc);
                Ok(vec![Prediction {
                    trajectory: self.point_estimate(&enc, k, strategy, options)?,
                    weight: 1.0,
                    mode_index: k,
                }])
            }
        }
    }

    /// One prediction per mode, weighted by the mixture weights `π_k(q)`.
    pub fn predict_mixture(
        &self,
        scene: &SceneFeatures,
        per_mode: Strategy,
        options: &PredictOptions,
    ) -> Result<Vec<Prediction>> {
        let enc = self.encode(scene)?;
        (0..enc.per_mode.len())
            .map(|k| {
                Ok(Prediction {
                    trajectory: self.point_estimate(&enc, k, per_mode, options)?,
                    weight: enc.mixture[k],
                    mode_index: k,
                })
            })
            .collect()
    }

    /// Predictions for every example, in parallel; the sampler of example `i` uses stream `i`.
    pub fn predict_all(
        &self,
        examples: &[Example],
        strategy: Strategy,
        options: &PredictOptions,
        seed: u64,
    ) -> Result<Vec<PredictionRecord>> {
        let per_example: Vec<Vec<PredictionRecord>> = examples
            .par_iter()
            .enumerate()
            .map(|(i, ex)| {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(i as u64);
                let preds = self.predict(&ex.scene, strategy, options, &mut rng)?;
                Ok(preds
                    .into_iter()
                    .map(|p| PredictionRecord {
                        id: ex.id.clone(),
                        mode_index: p.mode_index,
                        weight: p.weight,
                        trajectory: p.trajectory,
                    })
                    .collect())
            })
            .collect::<Result<_>>()?;
        Ok(per_example.into_iter().flatten().collect())
    }
}

/// `base + δ` with `‖δ‖ ~ Gamma(2M, 1/β)` and a uniform direction: a draw from the density ∝ `exp(-β ‖δ‖)`.
pub fn add_kernel_noise<R: Rng + ?Sized>(
    base: &Trajectory,
    beta: f64,
    rng: &mut R,
) -> Result<Trajectory> {
    let dim = base.as_flat().len();
    let radius = Gamma::new(dim as f64, 1.0 / beta)
        .map_err(|e| Error::Numeric(format!("noise radius: {e}")))?
        .sample(rng);
    let dir = loop {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 0.0 {
            break v.into_iter().map(|x| x / norm).collect::<Vec<_>>();
        }
    };
    Trajectory::from_flat(
        base.as_flat()
            .iter()
            .zip(dir)
            .map(|(b, d)| b + radius * d)
            .collect(),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionHeader {
    #[serde(rename = "M")]
    pub m: usize,
    pub strategy: Strategy,
    pub version: u32,
}

/// One line of a prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PredictionRecord {
    pub id: String,
    pub mode_index: usize,
    pub weight: f64,
    #[serde(rename = "traj")]
    pub trajectory: Trajectory,
}

pub fn save_predictions(
    path: &Path,
    header: &PredictionHeader,
    records: &[PredictionRecord],
) -> Result<()> {
    write_jsonl(path, header, records)
}

pub fn load_predictions(path: &Path) -> Result<(PredictionHeader, Vec<PredictionRecord>)> {
    let (header, records): (PredictionHeader, Vec<PredictionRecord>) = read_jsonl(path)?;
    if header.version != PREDICTION_VERSION {
        return Err(Error::parse(
            path,
            1,
            format!("unsupported prediction version {}", header.version),
        ));
    }
    if let Some((i, r)) = records
        .iter()
        .enumerate()
        .find(|(_, r)| r.trajectory.len() != header.m)
    {
        return Err(Error::parse(
            path,
            i + 2,
            format!("prediction for {} has {} points", r.id, r.trajectory.len()),
        ));
    }
    Ok((header, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bank::{build_bank, BankEntry, ClusterMethod, ClusterOptions};
    use crate::encoders::ModelConfig;
    use crate::mips::IndexVariant;
    use crate::synth::{generate, parse_mix, WorldGrid};

    struct Fixture {
        params: ModelParams,
        bank: TrajectoryBank,
        index: MipsIndex,
        examples: Vec<Example>,
    }

    fn fixture(n: usize, k: usize, modes: usize, alpha_raw: f64) -> Fixture {
        let grid = WorldGrid {
            m: 5,
            dt: 0.2,
            h: 3,
        };
        let mix = parse_mix("straight:0.4,fork:0.3,turn_left:0.3", 8.0, 0.2).unwrap();
        let examples = generate(&mix, n, 11, grid).unwrap();
        let method = if k == 1 {
            ClusterMethod::None
        } else {
            ClusterMethod::FullKmeans
        };
        let bank = build_bank(&examples, grid.dt, k, method, 1, ClusterOptions::default()).unwrap();
        let cfg =
            ModelConfig::with_dims(grid.feature_dim(), grid.m, modes, 8, vec![16], vec![16, 16]);
        let mut params = ModelParams::init(cfg, 2).unwrap();
        for m in 0..modes {
            params.set_alpha_raw(m, alpha_raw);
        }
        let index = MipsIndex::build(&bank, &params, IndexVariant::Exact, 0).unwrap();
        Fixture {
            params,
            bank,
            index,
            examples,
        }
    }

    impl Fixture {
        fn predictor(&self) -> Predictor<'_> {
            Predictor::new(&self.params, &self.index, &self.bank).unwrap()
        }
    }

    fn opts(top_k: usize) -> PredictOptions {
        PredictOptions {
            top_k,
            ..PredictOptions::default()
        }
    }

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(0)
    }

    #[test]
    fn alpha_zero_gives_equal_weights() {
        let fx = fixture(64, 4, 1, f64::NEG_INFINITY);
        let c = fx
            .predictor()
            .candidate_scores(&fx.examples[0].scene, 0, &opts(10))
            .unwrap();
        assert!(c.iter().all(|x| x.weight == 1.0));
        let one = fx
            .predictor()
            .candidate_scores(&fx.examples[0].scene, 0, &opts(1))
            .unwrap();
        assert_eq!(normalized_weights(&one), vec![1.0]);
    }

    #[test]
    fn weights_match_softmax_enumeration() {
        let fx = fixture(64, 6, 1, 2.0);
        let p = fx.predictor();
        let scene = &fx.examples[3].scene;
        let q = fx.params.encode_scene(scene, 0).unwrap();
        let alpha = fx.params.alpha(0);
        let top = p.candidate_scores(scene, 0, &opts(20)).unwrap();
        let w = normalized_weights(&top);
        let exps: Vec<f64> = top
            .iter()
            .map(|c| {
                (alpha * q.dot(fx.params.encode_trajectory(c.trajectory).unwrap().values())).exp()
            })
            .collect();
        let total: f64 = exps.iter().sum();
        for (a, b) in w.iter().zip(&exps) {
            assert!((a - b / total).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_matches_enumeration_over_full_bank() {
        let fx = fixture(64, 6, 1, 2.5);
        let p = fx.predictor();
        let scene = &fx.examples[5].scene;
        for h_weighted in [false, true] {
            let o = PredictOptions {
                h_weighted,
                ..opts(64)
            };
            let got = p.predict(scene, Strategy::Mean, &o, &mut rng()).unwrap();
            let q = fx.params.encode_scene(scene, 0).unwrap();
            let mut num = vec![0.0; 10];
            let mut den = 0.0;
            for e in fx.bank.entries() {
                let s = fx.params.alpha(0)
                    * q.dot(fx.params.encode_trajectory(&e.trajectory).unwrap().values());
                let w = s.exp()
                    * if h_weighted {
                        fx.bank.h_density(e.id).unwrap()
                    } else {
                        1.0
                    };
                den += w;
                num.iter_mut()
                    .zip(e.trajectory.as_flat())
                    .for_each(|(n, x)| *n += w * x);
            }
            for (a, b) in got[0].trajectory.as_flat().iter().zip(&num) {
                assert!((a - b / den).abs() < 1e-12, "{a} vs {}", b / den);
            }
        }
    }

    #[test]
    fn bank_of_one() {
        let fx = fixture(1, 1, 1, 1.0);
        let p = fx.predictor();
        for s in [
            Strategy::Top1,
            Strategy::ModeH,
            Strategy::Mean,
            Strategy::MeanShift,
        ] {
            let out = p
                .predict(&fx.examples[0].scene, s, &opts(150), &mut rng())
                .unwrap();
            assert_eq!(out[0].trajectory, fx.bank.entries()[0].trajectory, "{s}");
            assert_eq!(out[0].weight, 1.0);
        }
    }

    #[test]
    fn uniform_h_leaves_mode_unchanged() {
        let fx = fixture(64, 1, 1, 3.0);
        let p = fx.predictor();
        for ex in &fx.examples[..10] {
            let a = p
                .predict(&ex.scene, Strategy::Top1, &opts(50), &mut rng())
                .unwrap();
            let b = p
                .predict(&ex.scene, Strategy::ModeH, &opts(50), &mut rng())
                .unwrap();
            assert_eq!(a, b);
        }
    }

    /// Three hand-placed candidates: scores favour id 0, but it sits in a crowded cluster.
    fn rigged() -> (ModelParams, TrajectoryBank, MipsIndex, SceneFeatures) {
        let cfg = ModelConfig::with_dims(2, 1, 1, 2, vec![2], vec![2, 2]);
        let params = ModelParams::init(cfg, 0).unwrap();
        let q = params
            .encode_scene(&SceneFeatures::new(vec![0.5, -0.25]).unwrap(), 0)
            .unwrap();
        let (a, b) = (q.values()[0], q.values()[1]);
        let perp = [-b, a];
        let at = |cos: f64| {
            Embedding::project(vec![
                cos * a + (1.0 - cos * cos).sqrt() * perp[0],
                cos * b + (1.0 - cos * cos).sqrt() * perp[1],
            ])
        };
        let embs = vec![at(1.0), at(0.9), at(0.8)];
        // ids 0, 3, 4 share cluster 0 (h = 1/9); ids 1 and 2 are singletons (h = 1/3); only ids 0, 1, 2 are indexed
        let traj = |x: f64| Trajectory::from_flat(vec![x, 0.0]).unwrap();
        let entries = vec![
            BankEntry {
                id: 0,
                cluster: 0,
                trajectory: traj(0.0),
            },
            BankEntry {
                id: 1,
                cluster: 1,
                trajectory: traj(1.0),
            },
            BankEntry {
                id: 2,
                cluster: 2,
                trajectory: traj(2.0),
            },
            BankEntry {
                id: 3,
                cluster: 0,
                trajectory: traj(3.0),
            },
            BankEntry {
                id: 4,
                cluster: 0,
                trajectory: traj(4.0),
            },
        ];
        let bank = TrajectoryBank::new(0.2, 3, entries).unwrap();
        let index =
            MipsIndex::from_embeddings(vec![0, 1, 2], &embs, IndexVariant::Exact, 0).unwrap();
        (
            params,
            bank,
            index,
            SceneFeatures::new(vec![0.5, -0.25]).unwrap(),
        )
    }

    #[test]
    fn h_correction_picks_the_discrete_mode() {
        let (params, bank, index, scene) = rigged();
        let p = Predictor::new(&params, &index, &bank).unwrap();
        // α = 1: weights ∝ h · e^s = (1/9)e^1, (1/3)e^0.9, (1/3)e^0.8 → id 1 wins
        let top1 = p
            .predict(&scene, Strategy::Top1, &opts(3), &mut rng())
            .unwrap();
        let mode = p
            .predict(&scene, Strategy::ModeH, &opts(3), &mut rng())
            .unwrap();
        assert_eq!(top1[0].trajectory.as_flat(), &[0.0, 0.0]);
        assert_eq!(mode[0].trajectory.as_flat(), &[1.0, 0.0]);
    }

    #[test]
    fn mean_of_equal_scores_is_midpoint() {
        let (params, bank, _, scene) = rigged();
        let q = params.encode_scene(&scene, 0).unwrap();
        let index = MipsIndex::from_embeddings(vec![1, 2], &[q.clone(), q], IndexVariant::Exact, 0)
            .unwrap();
        let p = Predictor::new(&params, &index, &bank).unwrap();
        let out = p
            .predict(&scene, Strategy::Mean, &opts(2), &mut rng())
            .unwrap();
        assert_eq!(out[0].trajectory.as_flat(), &[1.5, 0.0]);
    }

    #[test]
    fn mean_shift_single_candidate() {
        let p = [3.0, -1.0];
        let r = mean_shift(&[&p], &[1.0], 2.0, &p);
        assert_eq!(r.point, p.to_vec());
        assert_eq!(r.iterations, 1);
    }

    #[test]
    fn mean_shift_stays_in_nearer_basin() {
        let (a, b) = ([0.0], [10.0]);
        let r = mean_shift(&[&a, &b], &[0.5, 0.5], 3.0, &[1.0]);
        assert!(r.point[0].abs() < 1e-3, "{:?}", r.point);
        assert!(r.log_objective.last().unwrap() >= &r.log_objective[0]);
        assert!(r.log_objective.windows(2).all(|w| w[1] >= w[0]));
    }

    #[test]
    fn mean_shift_beats_random_probes() {
        let mut g = ChaCha8Rng::seed_from_u64(4);
        let pts: Vec<[f64; 2]> = (0..5)
            .map(|_| [g.random_range(-3.0..3.0), g.random_range(-3.0..3.0)])
            .collect();
        let w = [0.3, 0.25, 0.2, 0.15, 0.1];
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let beta = 0.7;
        let r = mean_shift(&refs, &w, beta, refs[0]);
        let f = |t: &[f64]| mean_shift_log_objective(t, &refs, &w, beta).exp();
        let best_probe = (0..10_000)
            .map(|_| f(&[g.random_range(-4.0..4.0), g.random_range(-4.0..4.0)]))
            .fold(f64::NEG_INFINITY, f64::max);
        assert!(
            f(&r.point) >= best_probe - 1e-6,
            "{} vs {best_probe}",
            f(&r.point)
        );
    }

    #[test]
    fn sharp_posterior_samples_the_winner() {
        let fx = fixture(64, 4, 1, 8.0);
        let p = fx.predictor();
        let scene = &fx.examples[0].scene;
        let top = p
            .predict(scene, Strategy::Top1, &opts(1), &mut rng())
            .unwrap();
        let o = PredictOptions {
            top_k: 1,
            ..opts(1)
        };
        let samples = p.sample_posterior(scene, 50, &o, &mut rng()).unwrap();
        assert!(samples.iter().all(|(_, t)| *t == top[0].trajectory));
    }

    #[test]
    fn noiseless_samples_come_from_the_bank() {
        let fx = fixture(64, 4, 2, 1.0);
        let p = fx.predictor();
        let samples = p
            .sample_posterior(&fx.examples[1].scene, 200, &opts(30), &mut rng())
            .unwrap();
        for (_, t) in samples {
            assert!(fx
                .bank
                .entries()
                .iter()
                .any(|e| e.trajectory.as_flat() == t.as_flat()));
        }
    }

    #[test]
    fn noise_radius_has_gamma_mean() {
        let base = Trajectory::zeros(5);
        let beta = 2.5;
        let mut g = rng();
        let n = 100_000;
        let mean = (0..n)
            .map(|_| {
                crate::types::l2_norm(add_kernel_noise(&base, beta, &mut g).unwrap().as_flat())
            })
            .sum::<f64>()
            / n as f64;
        let want = 10.0 / beta;
        assert!((mean - want).abs() < 0.01 * want, "{mean} vs {want}");
    }

    #[test]
    fn single_mode_mixture_matches_unimodal() {
        let fx = fixture(64, 4, 1, 1.5);
        let p = fx.predictor();
        let scene = &fx.examples[2].scene;
        for s in [Strategy::Top1, Strategy::Mean, Strategy::MeanShift] {
            let o = PredictOptions {
                mode_strategy: s,
                ..opts(40)
            };
            let mix = p.predict(scene, Strategy::Mixture, &o, &mut rng()).unwrap();
            let uni = p.predict(scene, s, &o, &mut rng()).unwrap();
            assert_eq!(mix, uni);
        }
    }

    #[test]
    fn identical_heads_give_identical_modes() {
        let mut fx = fixture(64, 4, 3, 1.5);
        let head: Vec<f64> = fx.params.values()[fx.params.scene_head_range(0)].to_vec();
        for k in 1..3 {
            let r = fx.params.scene_head_range(k);
            fx.params.values_mut()[r].copy_from_slice(&head);
        }
        let p = fx.predictor();
        let out = p
            .predict_mixture(&fx.examples[0].scene, Strategy::Mean, &opts(30))
            .unwrap();
        assert_eq!(out.len(), 3);
        assert!(out.iter().all(|x| x.trajectory == out[0].trajectory));
        assert!((out.iter().map(|x| x.weight).sum::<f64>() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn coverage_mass_grows_with_top_k() {
        let fx = fixture(128, 4, 1, 2.0);
        let p = fx.predictor();
        let mass = |k| -> f64 {
            p.candidate_scores(&fx.examples[0].scene, 0, &opts(k))
                .unwrap()
                .iter()
                .map(|c| c.weight)
                .sum()
        };
        let curve: Vec<f64> = [1, 5, 20, 60, 128].iter().map(|&k| mass(k)).collect();
        assert!(curve.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn means_lie_in_the_bank_hull_box() {
        let fx = fixture(64, 4, 1, 1.0);
        let p = fx.predictor();
        let lo: Vec<f64> = (0..10)
            .map(|j| {
                fx.bank
                    .entries()
                    .iter()
                    .map(|e| e.trajectory.as_flat()[j])
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let hi: Vec<f64> = (0..10)
            .map(|j| {
                fx.bank
                    .entries()
                    .iter()
                    .map(|e| e.trajectory.as_flat()[j])
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect();
        for s in [Strategy::Mean, Strategy::MeanShift] {
            for ex in &fx.examples[..8] {
                let t = &p.predict(&ex.scene, s, &opts(64), &mut rng()).unwrap()[0].trajectory;
                for (j, x) in t.as_flat().iter().enumerate() {
                    assert!(*x >= lo[j] - 1e-9 && *x <= hi[j] + 1e-9);
                }
            }
        }
    }

    #[test]
    fn prediction_file_round_trip_and_determinism() {
        let fx = fixture(40, 4, 2, 1.0);
        let p = fx.predictor();
        let o = PredictOptions {
            with_noise: true,
            ..opts(20)
        };
        let a = p
            .predict_all(&fx.examples, Strategy::Sample, &o, 5)
            .unwrap();
        let b = p
            .predict_all(&fx.examples, Strategy::Sample, &o, 5)
            .unwrap();
        assert_eq!(a, b);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pred.jsonl");
        let header = PredictionHeader {
            m: 5,
            strategy: Strategy::Sample,
            version: PREDICTION_VERSION,
        };
        save_predictions(&path, &header, &a).unwrap();
        assert_eq!(load_predictions(&path).unwrap(), (header, a));
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in ["top1", "mode_h", "mean", "meanshift", "sample", "mixture"] {
            assert_eq!(s.parse::<Strategy>().unwrap().name(), s);
        }
        assert!("median".parse::<Strategy>().is_err());
    }

    proptest::proptest! {
        #[test]
        fn mean_shift_never_lowers_the_objective(
            pts in proptest::collection::vec(proptest::collection::vec(-5.0..5.0f64, 4), 1..12),
            raw_w in proptest::collection::vec(0.01..1.0f64, 12),
            beta in 0.1..5.0f64,
            start in 0usize..12,
        ) {
            let points: Vec<&[f64]> = pts.iter().map(Vec::as_slice).collect();
            let weights = &raw_w[..points.len()];
            let init: Vec<f64> = points[start % points.len()].iter().map(|x| x + 0.3).collect();
            let run = mean_shift(&points, weights, beta, &init);
            for pair in run.log_objective.windows(2) {
                proptest::prop_assert!(pair[1] >= pair[0]);
            }
            let end = mean_shift_log_objective(&run.point, &points, weights, beta);
            proptest::prop_assert_eq!(Some(&end), run.log_objective.last());
        }
    }
}
