//! Seeded generator of synthetic driving scenarios.
//!
//! Every scenario follows a closed-form kinematic template in the agent frame:
//! constant speed, a constant-curvature arc, linear deceleration to a stop, or
//! a straight lead-in that branches left or right. Ground truth gets i.i.d.
//! Gaussian position noise; scene features are computed from the noise-free
//! history of the same template.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{DatasetHeader, DATASET_VERSION};
use crate::error::{Error, Result};
use crate::types::{Example, SceneFeatures, Trajectory};

/// Total heading change of turn arcs and fork branches.
pub const TURN_ANGLE: f64 = PI / 6.0;
/// Seconds of straight driving before a fork branches.
pub const FORK_LEAD_IN: f64 = 1.0;
/// Context scalars appended after the per-timestamp history block.
pub const CONTEXT_FEATURES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    Straight,
    TurnLeft,
    TurnRight,
    Stop,
    Fork,
}

impl ScenarioKind {
    pub const ALL: [ScenarioKind; 5] = [
        ScenarioKind::Straight,
        ScenarioKind::TurnLeft,
        ScenarioKind::TurnRight,
        ScenarioKind::Stop,
        ScenarioKind::Fork,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScenarioKind::Straight => "straight",
            ScenarioKind::TurnLeft => "turn_left",
            ScenarioKind::TurnRight => "turn_right",
            ScenarioKind::Stop => "stop",
            ScenarioKind::Fork => "fork",
        }
    }

    /// Recovers the scenario kind from an example id produced by [`generate`].
    pub fn from_example_id(id: &str) -> Option<Self> {
        let (_, kind) = id.split_once('-')?;
        kind.parse().ok()
    }
}

impl fmt::Display for ScenarioKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ScenarioKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ScenarioKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Argument(format!("unknown scenario kind {s:?}")))
    }
}

/// Which way a fork resolves. Turns use the same sign convention: left is +y.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Branch {
    Left,
    Right,
}

impl Branch {
    fn sign(self) -> f64 {
        match self {
            Branch::Left => 1.0,
            Branch::Right => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub kind: ScenarioKind,
    /// Speed at prediction time, m/s.
    pub speed: f64,
    /// Standard deviation of ground-truth position noise, meters.
    pub noise_std: f64,
    pub weight: f64,
}

impl ScenarioSpec {
    pub fn new(kind: ScenarioKind, speed: f64, noise_std: f64, weight: f64) -> Self {
        Self {
            kind,
            speed,
            noise_std,
            weight,
        }
    }
}

/// Parses `kind[:weight[:speed[:noise]]]` entries separated by commas.
///
/// Entries without an explicit weight split whatever mass the weighted entries leave.
pub fn parse_mix(text: &str, default_speed: f64, default_noise: f64) -> Result<Vec<ScenarioSpec>> {
    let mut specs = Vec::new();
    let mut unweighted = Vec::new();
    for entry in text.split(',').map(str::trim).filter(|e| !e.is_empty()) {
        let mut parts = entry.split(':');
        let kind: ScenarioKind = parts.next().unwrap_or_default().parse()?;
        let num = |p: Option<&str>, what: &str| -> Result<Option<f64>> {
            p.map(|v| {
                v.parse::<f64>().map_err(|_| {
                    Error::Argument(format!("bad {what} {v:?} in mix entry {entry:?}"))
                })
            })
            .transpose()
        };
        let weight = num(parts.next(), "weight")?;
        let speed = num(parts.next(), "speed")?.unwrap_or(default_speed);
        let noise = num(parts.next(), "noise")?.unwrap_or(default_noise);
        if parts.next().is_some() {
            return Err(Error::Argument(format!(
                "too many fields in mix entry {entry:?}"
            )));
        }
        if weight.is_none() {
            unweighted.push(specs.len());
        }
        specs.push(ScenarioSpec::new(kind, speed, noise, weight.unwrap_or(0.0)));
    }
    if !unweighted.is_empty() {
        let rest = 1.0 - specs.iter().map(|s| s.weight).sum::<f64>();
        let share = rest / unweighted.len() as f64;
        for i in unweighted {
            specs[i].weight = share;
        }
    }
    validate_mix(&specs)?;
    Ok(specs)
}

fn validate_mix(mix: &[ScenarioSpec]) -> Result<()> {
    if mix.is_empty() {
        return Err(Error::Argument("scenario mix is empty".into()));
    }
    for s in mix {
        if !(s.speed.is_finite() && s.speed >= 0.0) {
            return Err(Error::Argument(format!(
                "speed must be >= 0, got {}",
                s.speed
            )));
        }
        if !(s.noise_std.is_finite() && s.noise_std >= 0.0) {
            return Err(Error::Argument(format!(
                "noise_std must be >= 0, got {}",
                s.noise_std
            )));
        }
        if !(s.weight.is_finite() && s.weight >= 0.0) {
            return Err(Error::Argument(format!(
                "weight must be >= 0, got {}",
                s.weight
            )));
        }
    }
    let total: f64 = mix.iter().map(|s| s.weight).sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!(
            "mix weights sum to {total}, expected 1"
        )));
    }
    Ok(())
}

/// Time grid of the generated data.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WorldGrid {
    pub m: usize,
    pub dt: f64,
    pub h: usize,
}

impl Default for WorldGrid {
    fn default() -> Self {
        Self {
            m: 25,
            dt: 0.2,
            h: 10,
        }
    }
}

impl WorldGrid {
    pub fn horizon(&self) -> f64 {
        self.m as f64 * self.dt
    }

    pub fn feature_dim(&self) -> usize {
        4 * self.h + CONTEXT_FEATURES
    }

    pub fn header(&self) -> DatasetHeader {
        DatasetHeader {
            m: self.m,
            dt: self.dt,
            h: self.h,
            f: self.feature_dim(),
            version: DATASET_VERSION,
        }
    }

    pub fn from_header(header: &DatasetHeader) -> Self {
        Self {
            m: header.m,
            dt: header.dt,
            h: header.h,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.m < 2 || self.h == 0 || !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(Error::Argument(format!("invalid grid {self:?}")));
        }
        Ok(())
    }

    fn fork_lead_in(&self) -> f64 {
        FORK_LEAD_IN.min(0.5 * self.horizon())
    }
}

/// Closed-form kinematic template of one scenario realization.
#[derive(Debug, Clone, Copy)]
struct Template {
    kind: ScenarioKind,
    speed: f64,
    branch: Branch,
    grid: WorldGrid,
}

impl Template {
    /// Position and velocity at time `t` (negative times are history).
    fn state(&self, t: f64) -> ([f64; 2], [f64; 2]) {
        let v = self.speed;
        let horizon = self.grid.horizon();
        match self.kind {
            ScenarioKind::Straight => ([v * t, 0.0], [v, 0.0]),
            ScenarioKind::TurnLeft | ScenarioKind::TurnRight => {
                if v == 0.0 {
                    return ([0.0, 0.0], [0.0, 0.0]);
                }
                let sign = if self.kind == ScenarioKind::TurnLeft {
                    1.0
                } else {
                    -1.0
                };
                let curvature = sign * TURN_ANGLE / (v * horizon);
                arc([0.0, 0.0], v, curvature, t)
            }
            ScenarioKind::Stop => {
                let decel = v / horizon;
                ([v * t - 0.5 * decel * t * t, 0.0], [v - decel * t, 0.0])
            }
            ScenarioKind::Fork => {
                let lead = self.grid.fork_lead_in();
                if t <= lead || v == 0.0 {
                    return ([v * t, 0.0], [v, 0.0]);
                }
                let curvature = self.branch.sign() * TURN_ANGLE / (v * (horizon - lead));
                arc([v * lead, 0.0], v, curvature, t - lead)
            }
        }
    }

    fn future(&self) -> Trajectory {
        let m = self.grid.m;
        let coords = (1..=m)
            .flat_map(|k| self.state(k as f64 * self.grid.dt).0)
            .collect();
        Trajectory::from_flat(coords).expect("template coordinates are finite")
    }

    fn features(&self) -> Vec<f64> {
        let WorldGrid { dt, h, .. } = self.grid;
        let mut out = Vec::with_capacity(self.grid.feature_dim());
        for j in 0..h {
            let t = -((h - 1 - j) as f64) * dt;
            let (p, vel) = self.state(t);
            out.extend_from_slice(&[p[0], p[1], vel[0], vel[1]]);
        }
        let last3: Vec<[f64; 2]> = (0..3)
            .rev()
            .map(|j| self.state(-(j as f64) * dt).0)
            .collect();
        out.push(self.speed);
        out.push(signed_curvature(last3[0], last3[1], last3[2]));
        out.push(if self.kind == ScenarioKind::Fork {
            self.grid.fork_lead_in()
        } else {
            -1.0
        });
        out.push(if self.kind == ScenarioKind::Stop && self.speed > 0.0 {
            1.0
        } else {
            0.0
        });
        out
    }
}

/// Point on a constant-curvature arc that starts at `start` heading along +x.
fn arc(start: [f64; 2], speed: f64, curvature: f64, t: f64) -> ([f64; 2], [f64; 2]) {
    let phi = curvature * speed * t;
    let (sin, cos) = phi.sin_cos();
    (
        [
            start[0] + sin / curvature,
            start[1] + (1.0 - cos) / curvature,
        ],
        [speed * cos, speed * sin],
    )
}

/// Signed Menger curvature through three points; zero when degenerate.
fn signed_curvature(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    let (ab, bc, ac) = (dist(a, b), dist(b, c), dist(a, c));
    let denom = ab * bc * ac;
    if denom < 1e-12 {
        return 0.0;
    }
    let cross = (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0]);
    2.0 * cross / denom
}

fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Noise-free future trajectory of a scenario; `branch` only matters for forks.
pub fn analytic_trajectory(
    kind: ScenarioKind,
    speed: f64,
    branch: Branch,
    grid: WorldGrid,
) -> Trajectory {
    Template {
        kind,
        speed,
        branch,
        grid,
    }
    .future()
}

/// Draws `n` examples from `mix`. Example `i` depends only on `(mix, seed, i)`.
pub fn generate(
    mix: &[ScenarioSpec],
    n: usize,
    seed: u64,
    grid: WorldGrid,
) -> Result<Vec<Example>> {
    validate_mix(mix)?;
    grid.validate()?;
    if n == 0 {
        return Err(Error::Argument("n must be at least 1".into()));
    }
    let picker = WeightedIndex::new(mix.iter().map(|s| s.weight))
        .map_err(|e| Error::Argument(format!("bad mix weights: {e}")))?;
    let examples = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            let spec = mix[picker.sample(&mut rng)];
            let branch = if rng.random_bool(0.5) {
                Branch::Left
            } else {
                Branch::Right
            };
            let template = Template {
                kind: spec.kind,
                speed: spec.speed,
                branch,
                grid,
            };
            let mut coords = template.future().as_flat().to_vec();
            if spec.noise_std > 0.0 {
                let noise = Normal::new(0.0, spec.noise_std).expect("validated noise_std");
                coords.iter_mut().for_each(|c| *c += noise.sample(&mut rng));
            }
            Example {
                id: format!("{i:07}-{}", spec.kind),
                scene: SceneFeatures::new(template.features()).expect("finite features"),
                ground_truth: Trajectory::from_flat(coords).expect("finite trajectory"),
            }
        })
        .collect();
    Ok(examples)
}
