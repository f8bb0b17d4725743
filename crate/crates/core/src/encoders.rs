//! The two towers: a scene encoder with one output head per mixture mode plus
//! a mixture-logit head, and a trajectory encoder with residual connections.
//! Both project onto the unit sphere.
//!
//! All parameters live in one flat `f64` vector whose layout is derived from
//! the [`ModelConfig`]. Graph builders record forward passes on a [`Tape`] so
//! the training losses can differentiate through them.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tape::{log_sum_exp, Matrix, Tape, Var};
use crate::types::{Embedding, SceneFeatures, Trajectory};

pub const CHECKPOINT_VERSION: u32 = 1;

/// Rows encoded per tape when embedding large trajectory sets.
const ENCODE_CHUNK: usize = 1024;

/// Fully connected network with ReLU between layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MlpSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    /// Residual connection around every hidden layer whose input and output widths agree.
    pub skip: bool,
}

impl MlpSpec {
    fn dims(&self) -> Vec<usize> {
        let mut dims = Vec::with_capacity(self.hidden.len() + 2);
        dims.push(self.input_dim);
        dims.extend(&self.hidden);
        dims.push(self.output_dim);
        dims
    }

    /// Whether layer `l` (mapping `dims[l] -> dims[l + 1]`) carries a residual connection.
    fn residual(&self, l: usize) -> bool {
        let dims = self.dims();
        self.skip && l >= 1 && l + 2 < dims.len() && dims[l] == dims[l + 1]
    }

    fn validate(&self, what: &str) -> Result<()> {
        if self.dims().contains(&0) {
            return Err(Error::Argument(format!(
                "{what}: all layer widths must be >= 1"
            )));
        }
        if self.skip && !(0..self.hidden.len() + 1).any(|l| self.residual(l)) {
            return Err(Error::Argument(format!(
                "{what}: skip connections need two consecutive hidden layers of equal width"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub scene: MlpSpec,
    pub trajectory: MlpSpec,
    /// Number of mixture modes `m`.
    pub modes: usize,
}

impl ModelConfig {
    /// Default architecture: `d = 32`, both towers `[128, 128, 64]`, residual trajectory tower.
    pub fn standard(scene_dim: usize, trajectory_len: usize, modes: usize) -> Self {
        Self::with_dims(
            scene_dim,
            trajectory_len,
            modes,
            32,
            vec![128, 128, 64],
            vec![128, 128, 64],
        )
    }

    pub fn with_dims(
        scene_dim: usize,
        trajectory_len: usize,
        modes: usize,
        d: usize,
        scene_hidden: Vec<usize>,
        trajectory_hidden: Vec<usize>,
    ) -> Self {
        let skip = trajectory_hidden.windows(2).any(|w| w[0] == w[1]);
        Self {
            scene: MlpSpec {
                input_dim: scene_dim,
                hidden: scene_hidden,
                output_dim: d,
                skip: false,
            },
            trajectory: MlpSpec {
                input_dim: 2 * trajectory_len,
                hidden: trajectory_hidden,
                output_dim: d,
                skip,
            },
            modes,
        }
    }

    pub fn embedding_dim(&self) -> usize {
        self.scene.output_dim
    }

    pub fn trajectory_len(&self) -> usize {
        self.trajectory.input_dim / 2
    }

    pub fn validate(&self) -> Result<()> {
        self.scene.validate("scene encoder")?;
        self.trajectory.validate("trajectory encoder")?;
        if self.scene.output_dim != self.trajectory.output_dim {
            return Err(Error::Argument(
                "both encoders must share the embedding dimension".into(),
            ));
        }
        if !self.trajectory.input_dim.is_multiple_of(2) {
            return Err(Error::Argument("trajectory input must be 2M wide".into()));
        }
        if self.modes == 0 {
            return Err(Error::Argument("mode count must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Linear {
    weight: usize,
    bias: usize,
    fan_in: usize,
    fan_out: usize,
}

/// Offsets of every tensor inside the flat parameter vector, in declaration order.
#[derive(Debug, Clone, PartialEq)]
struct Layout {
    scene_shift: usize,
    scene_scale: usize,
    trajectory_shift: usize,
    trajectory_scale: usize,
    scene_trunk: Vec<Linear>,
    scene_heads: Vec<Linear>,
    mixture_head: Linear,
    trajectory_layers: Vec<Linear>,
    alpha_raw: usize,
    beta_raw: usize,
    len: usize,
}

impl Layout {
    fn new(config: &ModelConfig) -> Self {
        let mut next = 0;
        let mut take = |n: usize| {
            let at = next;
            next += n;
            at
        };
        let scene_in = config.scene.input_dim;
        let traj_in = config.trajectory.input_dim;
        let scene_shift = take(scene_in);
        let scene_scale = take(scene_in);
        let trajectory_shift = take(traj_in);
        let trajectory_scale = take(traj_in);
        let mut linear = |fan_in: usize, fan_out: usize| Linear {
            weight: take(fan_in * fan_out),
            bias: take(fan_out),
            fan_in,
            fan_out,
        };
        let sd = config.scene.dims();
        let scene_trunk = sd[..sd.len() - 1]
            .windows(2)
            .map(|w| linear(w[0], w[1]))
            .collect();
        let trunk_out = sd[sd.len() - 2];
        let scene_heads = (0..config.modes)
            .map(|_| linear(trunk_out, config.embedding_dim()))
            .collect();
        let mixture_head = linear(trunk_out, config.modes);
        let trajectory_layers = config
            .trajectory
            .dims()
            .windows(2)
            .map(|w| linear(w[0], w[1]))
            .collect();
        let alpha_raw = take(config.modes);
        let beta_raw = take(1);
        Self {
            scene_shift,
            scene_scale,
            trajectory_shift,
            trajectory_scale,
            scene_trunk,
            scene_heads,
            mixture_head,
            trajectory_layers,
            alpha_raw,
            beta_raw,
            len: next,
        }
    }
}

/// Graph nodes produced by encoding a batch of scenes.
#[derive(Debug, Clone)]
pub struct SceneGraph {
    /// One `batch × d` unit-row matrix per mode.
    pub embeddings: Vec<Var>,
    /// `batch × m` mixture logits.
    pub mixture_logits: Var,
}

/// Everything the scene tower says about one scene.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneEncoding {
    pub per_mode: Vec<Embedding>,
    pub mixture: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    config: ModelConfig,
    layout: Layout,
    values: Vec<f64>,
}

impl ModelParams {
    /// Glorot-uniform weights, zero biases, identity input standardization,
    /// a zero mixture head (uniform mixture weights) and `α = β = 1`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut values = vec![0.0; layout.len];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        values[layout.scene_scale..layout.scene_scale + config.scene.input_dim].fill(1.0);
        values[layout.trajectory_scale..layout.trajectory_scale + config.trajectory.input_dim]
            .fill(1.0);
        let glorot = layout
            .scene_trunk
            .iter()
            .chain(&layout.scene_heads)
            .chain(&layout.trajectory_layers);
        for lin in glorot {
            let limit = (6.0 / (lin.fan_in + lin.fan_out) as f64).sqrt();
            for w in &mut values[lin.weight..lin.weight + lin.fan_in * lin.fan_out] {
                *w = rng.random_range(-limit..limit);
            }
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn from_values(config: ModelConfig, values: Vec<f64>) -> Result<Self> {
        config.validate()?;
        let layout = Layout::new(&config);
        if values.len() != layout.len {
            return Err(Error::Length {
                expected: layout.len,
                actual: values.len(),
            });
        }
        Ok(Self {
            config,
            layout,
            values,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn modes(&self) -> usize {
        self.config.modes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Mask of entries that gradient steps may change (input standardization is fixed).
    pub fn trainable_mask(&self) -> Vec<bool> {
        let frozen_end = self.layout.trajectory_scale + self.config.trajectory.input_dim;
        (0..self.values.len()).map(|i| i >= frozen_end).collect()
    }

    pub fn alpha_raw(&self, mode: usize) -> f64 {
        self.values[self.layout.alpha_raw + mode]
    }

    pub fn set_alpha_raw(&mut self, mode: usize, v: f64) {
        self.values[self.layout.alpha_raw + mode] = v;
    }

    /// Score sharpness `α_k = exp(alpha_raw_k)`.
    pub fn alpha(&self, mode: usize) -> f64 {
        self.alpha_raw(mode).exp()
    }

    pub fn beta_raw(&self) -> f64 {
        self.values[self.layout.beta_raw]
    }

    pub fn set_beta_raw(&mut self, v: f64) {
        self.values[self.layout.beta_raw] = v;
    }

    /// Noise precision `β = exp(beta_raw)`.
    pub fn beta(&self) -> f64 {
        self.beta_raw().exp()
    }

    /// Offsets of the flat parameter ranges that hold head `mode`'s weights and bias.
    pub fn scene_head_range(&self, mode: usize) -> std::ops::Range<usize> {
        let lin = self.layout.scene_heads[mode];
        lin.weight..lin.bias + lin.fan_out
    }

    /// Position of `beta_raw` in the flat parameter vector.
    pub fn beta_index(&self) -> usize {
        self.layout.beta_raw
    }

    pub fn mixture_head_range(&self) -> std::ops::Range<usize> {
        let lin = self.layout.mixture_head;
        lin.weight..lin.bias + lin.fan_out
    }

    /// Sets the fixed per-feature standardization `(x - mean) / std` of both towers.
    /// Features with (near) zero spread keep unit scale.
    pub fn fit_standardization<'a>(
        &mut self,
        scenes: impl IntoIterator<Item = &'a SceneFeatures>,
        trajectories: impl IntoIterator<Item = &'a Trajectory>,
    ) {
        let (shift, scale) = column_moments(
            scenes.into_iter().map(|s| s.values()),
            self.config.scene.input_dim,
        );
        self.set_standardization(
            self.layout.scene_shift,
            self.layout.scene_scale,
            shift,
            scale,
        );
        let (shift, scale) = column_moments(
            trajectories.into_iter().map(|t| t.as_flat()),
            self.config.trajectory.input_dim,
        );
        self.set_standardization(
            self.layout.trajectory_shift,
            self.layout.trajectory_scale,
            shift,
            scale,
        );
    }

    fn set_standardization(
        &mut self,
        shift_at: usize,
        scale_at: usize,
        shift: Vec<f64>,
        scale: Vec<f64>,
    ) {
        self.values[shift_at..shift_at + shift.len()].copy_from_slice(&shift);
        self.values[scale_at..scale_at + scale.len()].copy_from_slice(&scale);
    }

    fn standardized(
        &self,
        rows: &[&[f64]],
        shift_at: usize,
        scale_at: usize,
        dim: usize,
    ) -> Matrix {
        let shift = &self.values[shift_at..shift_at + dim];
        let scale = &self.values[scale_at..scale_at + dim];
        let data = rows
            .iter()
            .flat_map(|r| {
                r.iter()
                    .zip(shift)
                    .zip(scale)
                    .map(|((x, s), c)| (x - s) * c)
            })
            .collect();
        Matrix::new(rows.len(), dim, data)
    }

    fn linear(&self, tape: &mut Tape, x: Var, lin: Linear) -> Var {
        let w = tape.param(&self.values, lin.weight, lin.fan_in, lin.fan_out);
        let b = tape.param(&self.values, lin.bias, 1, lin.fan_out);
        let h = tape.matmul(x, w);
        tape.add_row(h, b)
    }

    /// Hidden layers: linear, ReLU, then the residual where `MlpSpec` asks for one.
    fn hidden_stack(&self, tape: &mut Tape, mut h: Var, layers: &[Linear], spec: &MlpSpec) -> Var {
        for (l, &lin) in layers.iter().enumerate() {
            let z = self.linear(tape, h, lin);
            let z = tape.relu(z);
            h = if spec.residual(l) { tape.add(z, h) } else { z };
        }
        h
    }

    /// Records the scene tower on `tape` for a batch of scenes.
    pub fn scene_graph(&self, tape: &mut Tape, scenes: &[&SceneFeatures]) -> Result<SceneGraph> {
        let dim = self.config.scene.input_dim;
        if let Some(bad) = scenes.iter().find(|s| s.len() != dim) {
            return Err(Error::Shape(format!(
                "scene has {} features, model expects {dim}",
                bad.len()
            )));
        }
        let rows: Vec<&[f64]> = scenes.iter().map(|s| s.values()).collect();
        let x = self.standardized(&rows, self.layout.scene_shift, self.layout.scene_scale, dim);
        let x = tape.constant(x);
        let trunk = self.hidden_stack(tape, x, &self.layout.scene_trunk, &self.config.scene);
        let embeddings = self
            .layout
            .scene_heads
            .iter()
            .map(|&head| {
                let z = self.linear(tape, trunk, head);
                tape.normalize_rows(z)
            })
            .collect();
        let mixture_logits = self.linear(tape, trunk, self.layout.mixture_head);
        Ok(SceneGraph {
            embeddings,
            mixture_logits,
        })
    }

    /// Records the trajectory tower on `tape`; the result is `n × d` with unit rows.
    pub fn trajectory_graph(&self, tape: &mut Tape, trajectories: &[&Trajectory]) -> Result<Var> {
        let dim = self.config.trajectory.input_dim;
        if let Some(bad) = trajectories.iter().find(|t| 2 * t.len() != dim) {
            return Err(Error::Shape(format!(
                "trajectory has {} points, model expects {}",
                bad.len(),
                dim / 2
            )));
        }
        let rows: Vec<&[f64]> = trajectories.iter().map(|t| t.as_flat()).collect();
        let x = self.standardized(
            &rows,
            self.layout.trajectory_shift,
            self.layout.trajectory_scale,
            dim,
        );
        let x = tape.constant(x);
        let layers = &self.layout.trajectory_layers;
        let (hidden, last) = layers.split_at(layers.len() - 1);
        let h = self.hidden_stack(tape, x, hidden, &self.config.trajectory);
        let z = self.linear(tape, h, last[0]);
        Ok(tape.normalize_rows(z))
    }

    /// `(alpha_raw_k, α_k)` nodes.
    pub fn alpha_graph(&self, tape: &mut Tape, mode: usize) -> (Var, Var) {
        let raw = tape.param(&self.values, self.layout.alpha_raw + mode, 1, 1);
        (raw, tape.exp(raw))
    }

    /// `(beta_raw, β)` nodes.
    pub fn beta_graph(&self, tape: &mut Tape) -> (Var, Var) {
        let raw = tape.param(&self.values, self.layout.beta_raw, 1, 1);
        (raw, tape.exp(raw))
    }

    pub fn encode_scenes(&self, scenes: &[&SceneFeatures]) -> Result<Vec<SceneEncoding>> {
        let mut tape = Tape::new();
        let graph = self.scene_graph(&mut tape, scenes)?;
        let logits = tape.value(graph.mixture_logits);
        Ok((0..scenes.len())
            .map(|i| SceneEncoding {
                per_mode: graph
                    .embeddings
                    .iter()
                    .map(|&e| Embedding::project(tape.value(e).row(i).to_vec()))
                    .collect(),
                mixture: softmax(logits.row(i)),
            })
            .collect())
    }

    /// Unit embedding of `scene` under head `mode`.
    pub fn encode_scene(&self, scene: &SceneFeatures, mode: usize) -> Result<Embedding> {
        if mode >= self.modes() {
            return Err(Error::Argument(format!(
                "mode {mode} out of range for {} modes",
                self.modes()
            )));
        }
        let mut enc = self
            .encode_scenes(&[scene])?
            .pop()
            .expect("one scene in, one out");
        Ok(enc.per_mode.swap_remove(mode))
    }

    /// Mixture weights `π(q)`: softmax of the mixture head.
    pub fn mixture_weights(&self, scene: &SceneFeatures) -> Result<Vec<f64>> {
        Ok(self
            .encode_scenes(&[scene])?
            .pop()
            .expect("one scene in, one out")
            .mixture)
    }

    pub fn encode_trajectory(&self, trajectory: &Trajectory) -> Result<Embedding> {
        Ok(self
            .encode_trajectories(&[trajectory])?
            .pop()
            .expect("one trajectory in, one out"))
    }

    pub fn encode_trajectories(&self, trajectories: &[&Trajectory]) -> Result<Vec<Embedding>> {
        let mut out = Vec::with_capacity(trajectories.len());
        for chunk in trajectories.chunks(ENCODE_CHUNK) {
            let mut tape = Tape::new();
            let e = self.trajectory_graph(&mut tape, chunk)?;
            let m = tape.value(e);
            out.extend((0..m.rows).map(|i| Embedding::project(m.row(i).to_vec())));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let header = CheckpointHeader {
            scene: self.config.scene.clone(),
            trajectory: self.config.trajectory.clone(),
            d: self.config.embedding_dim(),
            m: self.config.modes,
            n_params: self.values.len(),
            version: CHECKPOINT_VERSION,
        };
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        let io = |e| Error::io(path, e);
        serde_json::to_writer(&mut w, &header).map_err(|e| io(std::io::Error::other(e)))?;
        w.write_all(b"\n").map_err(io)?;
        for v in &self.values {
            w.write_all(&v.to_le_bytes()).map_err(io)?;
        }
        w.flush().map_err(io)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut r = BufReader::new(file);
        let mut line = Vec::new();
        r.read_until(b'\n', &mut line)
            .map_err(|e| Error::io(path, e))?;
        let header: CheckpointHeader = serde_json::from_slice(&line)
            .map_err(|e| Error::parse(path, 1, format!("bad checkpoint header: {e}")))?;
        if header.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                path,
                1,
                format!("unsupported checkpoint version {}", header.version),
            ));
        }
        let config = ModelConfig {
            scene: header.scene,
            trajectory: header.trajectory,
            modes: header.m,
        };
        if config.embedding_dim() != header.d {
            return Err(Error::parse(
                path,
                1,
                "embedding dimension disagrees with encoder specs",
            ));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
        if bytes.len() != 8 * header.n_params {
            return Err(Error::parse(
                path,
                2,
                format!(
                    "expected {} parameter bytes, found {}",
                    8 * header.n_params,
                    bytes.len()
                ),
            ));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
            .collect();
        Self::from_values(config, values).map_err(|e| Error::parse(path, 1, e.to_string()))
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointHeader {
    scene: MlpSpec,
    trajectory: MlpSpec,
    d: usize,
    m: usize,
    n_params: usize,
    version: u32,
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let lse = log_sum_exp(logits);
    logits.iter().map(|l| (l - lse).exp()).collect()
}

fn column_moments<'a>(rows: impl Iterator<Item = &'a [f64]>, dim: usize) -> (Vec<f64>, Vec<f64>) {
    let mut sum = vec![0.0; dim];
    let mut sum_sq = vec![0.0; dim];
    let mut n = 0usize;
    for row in rows {
        n += 1;
        for ((s, q), x) in sum.iter_mut().zip(&mut sum_sq).zip(row) {
            *s += x;
            *q += x * x;
        }
    }
    if n == 0 {
        return (vec![0.0; dim], vec![1.0; dim]);
    }
    let n = n as f64;
    let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
    let scale = sum_sq
        .iter()
        .zip(&mean)
        .map(|(q, m)| {
            let std = (q / n - m * m).max(0.0).sqrt();
            if std > 1e-6 {
                1.0 / std
            } else {
                1.0
            }
        })
        .collect();
    (mean, scale)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy_config(modes: usize) -> ModelConfig {
        ModelConfig::with_dims(6, 3, modes, 4, vec![5, 5], vec![7, 7])
    }

    fn scene(seed: u64) -> SceneFeatures {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        SceneFeatures::new((0..6).map(|_| rng.random_range(-3.0..3.0)).collect()).unwrap()
    }

    fn traj(seed: u64) -> Trajectory {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Trajectory::from_flat((0..6).map(|_| rng.random_range(-10.0..10.0)).collect()).unwrap()
    }

    #[test]
    fn embeddings_are_unit_norm() {
        let params = ModelParams::init(toy_config(3), 1).unwrap();
        for s in 0..20 {
            for k in 0..3 {
                let e = params.encode_scene(&scene(s), k).unwrap();
                assert!((crate::types::l2_norm(e.values()) - 1.0).abs() < 1e-6);
            }
            let e = params.encode_trajectory(&traj(s)).unwrap();
            assert!((crate::types::l2_norm(e.values()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn encoding_is_deterministic() {
        let params = ModelParams::init(toy_config(2), 1).unwrap();
        let a = params.encode_scene(&scene(3), 1).unwrap();
        assert_eq!(a, params.encode_scene(&scene(3), 1).unwrap());
        assert_eq!(
            params.encode_trajectory(&traj(3)).unwrap(),
            params.encode_trajectory(&traj(3)).unwrap()
        );
        let batched = params.encode_scenes(&[&scene(1), &scene(3)]).unwrap();
        assert_eq!(batched[1].per_mode[1], a);
    }

    #[test]
    fn single_head_matches_unimodal_encoding() {
        let params = ModelParams::init(toy_config(1), 4).unwrap();
        let enc = params.encode_scenes(&[&scene(2)]).unwrap();
        assert_eq!(
            enc[0].per_mode[0],
            params.encode_scene(&scene(2), 0).unwrap()
        );
        assert_eq!(enc[0].mixture, vec![1.0]);
    }

    #[test]
    fn zero_trajectory_is_well_defined() {
        let params = ModelParams::init(toy_config(1), 2).unwrap();
        let e = params.encode_trajectory(&Trajectory::zeros(3)).unwrap();
        assert!(e.values().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn mixture_weights_start_uniform_and_sum_to_one() {
        let mut params = ModelParams::init(toy_config(4), 2).unwrap();
        assert_eq!(params.mixture_weights(&scene(0)).unwrap(), vec![0.25; 4]);
        let range = params.mixture_head_range();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for v in &mut params.values_mut()[range] {
            *v = rng.random_range(-2.0..2.0);
        }
        for s in 0..10 {
            let w = params.mixture_weights(&scene(s)).unwrap();
            assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            assert!(w.iter().all(|&p| p > 0.0));
        }
    }

    #[test]
    fn trajectory_encoder_is_locally_lipschitz() {
        let params = ModelParams::init(toy_config(1), 6).unwrap();
        let base = traj(1);
        let e0 = params.encode_trajectory(&base).unwrap();
        let ratios: Vec<f64> = [1e-3, 1e-4, 1e-5]
            .iter()
            .map(|&eps| {
                let mut c = base.as_flat().to_vec();
                c[2] += eps;
                let e1 = params
                    .encode_trajectory(&Trajectory::from_flat(c).unwrap())
                    .unwrap();
                crate::types::euclidean(e0.values(), e1.values()) / eps
            })
            .collect();
        // the change shrinks linearly with the perturbation
        assert!(
            ratios.iter().all(|r| r.is_finite() && *r < 10.0),
            "{ratios:?}"
        );
        assert!((ratios[1] - ratios[2]).abs() < 1e-3 * ratios[1].max(1.0));
    }

    #[test]
    fn shape_errors() {
        let params = ModelParams::init(toy_config(1), 0).unwrap();
        let wrong = SceneFeatures::new(vec![1.0; 5]).unwrap();
        assert!(matches!(
            params.encode_scene(&wrong, 0),
            Err(Error::Shape(_))
        ));
        assert!(params.encode_scene(&scene(0), 1).is_err());
        assert!(matches!(
            params.encode_trajectory(&Trajectory::zeros(4)),
            Err(Error::Shape(_))
        ));
    }

    #[test]
    fn config_validation() {
        let mut cfg = toy_config(1);
        cfg.trajectory.hidden = vec![7, 8];
        assert!(ModelParams::init(cfg, 0).is_err());
        let mut cfg = toy_config(1);
        cfg.modes = 0;
        assert!(ModelParams::init(cfg, 0).is_err());
        let mut cfg = toy_config(1);
        cfg.scene.output_dim = 5;
        assert!(ModelParams::init(cfg, 0).is_err());
    }

    #[test]
    fn initial_scalars_are_neutral() {
        let params = ModelParams::init(toy_config(2), 0).unwrap();
        assert_eq!(
            (params.alpha(0), params.alpha(1), params.beta()),
            (1.0, 1.0, 1.0)
        );
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut params = ModelParams::init(ModelConfig::standard(44, 25, 2), 9).unwrap();
        let wide = SceneFeatures::new((0..44).map(|i| i as f64 * 0.37).collect()).unwrap();
        params.fit_standardization([&wide], std::iter::empty());
        params.set_beta_raw(-0.1234567890123);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        params.save(&path).unwrap();
        let loaded = ModelParams::load(&path).unwrap();
        assert_eq!(loaded.config(), params.config());
        assert!(loaded
            .values()
            .iter()
            .zip(params.values())
            .all(|(a, b)| a.to_bits() == b.to_bits()));

        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 3]).unwrap();
        assert!(matches!(ModelParams::load(&path), Err(Error::Parse { .. })));
    }

    #[test]
    fn standardization_is_frozen_and_applied() {
        let mut params = ModelParams::init(toy_config(1), 3).unwrap();
        let scenes = [scene(1), scene(2), scene(3)];
        let trajs = [traj(1), traj(2)];
        let before = params.encode_scene(&scenes[0], 0).unwrap();
        params.fit_standardization(scenes.iter(), trajs.iter());
        assert_ne!(before, params.encode_scene(&scenes[0], 0).unwrap());
        let mask = params.trainable_mask();
        assert_eq!(mask.iter().filter(|m| !**m).count(), 2 * 6 + 2 * 6);
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_inputs_embed_on_the_unit_sphere(
            s in proptest::collection::vec(-1e3..1e3f64, 6),
            t in proptest::collection::vec(-1e3..1e3f64, 6),
            seed in 0u64..20,
        ) {
            let params = ModelParams::init(toy_config(2), seed).unwrap();
            let scene = SceneFeatures::new(s).unwrap();
            for k in 0..2 {
                let e = params.encode_scene(&scene, k).unwrap();
                proptest::prop_assert!((crate::types::l2_norm(e.values()) - 1.0).abs() < 1e-9);
            }
            let e = params.encode_trajectory(&Trajectory::from_flat(t).unwrap()).unwrap();
            proptest::prop_assert!((crate::types::l2_norm(e.values()) - 1.0).abs() < 1e-9);
        }
    }
}
