//! Shared domain types and the agent reference frame.
//!
//! All trajectories live in the agent frame: the agent sits at the origin at
//! prediction time and its heading points along +x. Point `i` of a trajectory
//! is the position at time `(i + 1) * dt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Future positions of an agent, stored flat as `x0, y0, x1, y1, ...`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<[f64; 2]>", into = "Vec<[f64; 2]>")]
pub struct Trajectory {
    coords: Vec<f64>,
}

impl Trajectory {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        Self::from_flat(points.into_iter().flatten().collect())
    }

    /// Builds a trajectory from a flattened `2M` coordinate vector.
    pub fn from_flat(coords: Vec<f64>) -> Result<Self> {
        if coords.is_empty() || !coords.len().is_multiple_of(2) {
            return Err(Error::Shape(format!(
                "trajectory needs a nonempty even number of coordinates, got {}",
                coords.len()
            )));
        }
        if let Some(bad) = coords.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!(
                "non-finite trajectory coordinate {bad}"
            )));
        }
        Ok(Self { coords })
    }

    pub fn zeros(m: usize) -> Self {
        Self {
            coords: vec![0.0; 2 * m],
        }
    }

    /// Number of timestamps `M`.
    pub fn len(&self) -> usize {
        self.coords.len() / 2
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn as_flat(&self) -> &[f64] {
        &self.coords
    }

    pub fn point(&self, i: usize) -> [f64; 2] {
        [self.coords[2 * i], self.coords[2 * i + 1]]
    }

    pub fn points(&self) -> impl Iterator<Item = [f64; 2]> + '_ {
        self.coords.chunks_exact(2).map(|c| [c[0], c[1]])
    }

    pub fn last(&self) -> [f64; 2] {
        self.point(self.len() - 1)
    }
}

impl TryFrom<Vec<[f64; 2]>> for Trajectory {
    type Error = Error;

    fn try_from(points: Vec<[f64; 2]>) -> Result<Self> {
        Trajectory::new(points)
    }
}

impl From<Trajectory> for Vec<[f64; 2]> {
    fn from(t: Trajectory) -> Self {
        t.points().collect()
    }
}

/// Fixed-length feature vector describing the scene around an agent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<f64>", into = "Vec<f64>")]
pub struct SceneFeatures {
    values: Vec<f64>,
}

impl SceneFeatures {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("scene features must be nonempty".into()));
        }
        if let Some(bad) = values.iter().find(|v| !v.is_finite()) {
            return Err(Error::Argument(format!("non-finite scene feature {bad}")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl TryFrom<Vec<f64>> for SceneFeatures {
    type Error = Error;

    fn try_from(values: Vec<f64>) -> Result<Self> {
        SceneFeatures::new(values)
    }
}

impl From<SceneFeatures> for Vec<f64> {
    fn from(s: SceneFeatures) -> Self {
        s.values
    }
}

/// One training or evaluation record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub scene: SceneFeatures,
    #[serde(rename = "gt")]
    pub ground_truth: Trajectory,
}

/// Point on the unit sphere in the shared latent space.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    values: Vec<f64>,
}

/// Norms below this are treated as degenerate and mapped to the first basis vector.
pub const DEGENERATE_NORM: f64 = 1e-12;

impl Embedding {
    /// Projects `values` onto the unit sphere.
    pub fn project(mut values: Vec<f64>) -> Self {
        let norm = l2_norm(&values);
        if norm < DEGENERATE_NORM {
            values.iter_mut().for_each(|v| *v = 0.0);
            values[0] = 1.0;
        } else {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values }
    }

    /// Wraps a vector that is already unit norm (within 1e-6).
    pub fn from_unit(values: Vec<f64>) -> Result<Self> {
        let norm = l2_norm(&values);
        if (norm - 1.0).abs() > 1e-6 {
            return Err(Error::Argument(format!("embedding norm {norm} is not 1")));
        }
        Ok(Self { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn dot(&self, other: &[f64]) -> f64 {
        dot(&self.values, other)
    }
}

/// Pose of the agent at prediction time in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Expresses world points in the frame anchored at `anchor`.
pub fn to_agent_frame(world_points: &[[f64; 2]], anchor: Pose, m: usize) -> Result<Trajectory> {
    if world_points.len() != m {
        return Err(Error::Length {
            expected: m,
            actual: world_points.len(),
        });
    }
    if !anchor.heading.is_finite() {
        return Err(Error::Argument("anchor heading must be finite".into()));
    }
    let (sin, cos) = anchor.heading.sin_cos();
    let points = world_points
        .iter()
        .map(|&[x, y]| {
            let (dx, dy) = (x - anchor.x, y - anchor.y);
            [cos * dx + sin * dy, -sin * dx + cos * dy]
        })
        .collect();
    Trajectory::new(points)
}

/// Inverse of [`to_agent_frame`].
pub fn from_agent_frame(traj: &Trajectory, anchor: Pose) -> Vec<[f64; 2]> {
    let (sin, cos) = anchor.heading.sin_cos();
    traj.points()
        .map(|[x, y]| [anchor.x + cos * x - sin * y, anchor.y + sin * x + cos * y])
        .collect()
}

/// Euclidean distance between two trajectories over all `2M` coordinates.
pub fn trajectory_distance(a: &Trajectory, b: &Trajectory) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Length {
            expected: a.len(),
            actual: b.len(),
        });
    }
    Ok(euclidean(a.as_flat(), b.as_flat()))
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn l2_norm(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

pub(crate) fn squared_euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_euclidean(a, b).sqrt()
}

#[cfg(test)]
mod tests {
    use std::f64::consts::FRAC_PI_2;

    use proptest::prelude::*;

    use super::*;

    fn traj(points: &[[f64; 2]]) -> Trajectory {
        Trajectory::new(points.to_vec()).unwrap()
    }

    #[test]
    fn identity_frame_is_noop() {
        let pts = [[0.0, 0.0], [1.5, -2.0], [3.0, 4.0]];
        let anchor = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        assert_eq!(to_agent_frame(&pts, anchor, 3).unwrap(), traj(&pts));
    }

    #[test]
    fn pure_translation() {
        let anchor = Pose {
            x: 1.0,
            y: 1.0,
            heading: 0.0,
        };
        let t = to_agent_frame(&[[1.0, 1.0], [2.0, 1.0]], anchor, 2).unwrap();
        assert_eq!(t, traj(&[[0.0, 0.0], [1.0, 0.0]]));
    }

    #[test]
    fn quarter_turn_rotation() {
        // Heading pi/2: a point one meter ahead of the agent in world +y lands on +x.
        let anchor = Pose {
            x: 3.0,
            y: -2.0,
            heading: FRAC_PI_2,
        };
        let t = to_agent_frame(&[[3.0, -1.0], [3.0, -2.0]], anchor, 2).unwrap();
        let [x, y] = t.point(0);
        assert!((x - 1.0).abs() < 1e-15 && y.abs() < 1e-15);
    }

    #[test]
    fn wrong_length_rejected() {
        let anchor = Pose {
            x: 0.0,
            y: 0.0,
            heading: 0.0,
        };
        let err = to_agent_frame(&[[0.0, 0.0]], anchor, 2).unwrap_err();
        assert!(matches!(
            err,
            Error::Length {
                expected: 2,
                actual: 1
            }
        ));
    }

    #[test]
    fn distance_examples() {
        let a = traj(&[[0.0, 0.0], [1.0, 0.0], [2.0, 0.5], [3.0, 1.0]]);
        assert_eq!(trajectory_distance(&a, &a).unwrap(), 0.0);
        let b = Trajectory::new(a.points().map(|[x, y]| [x + 1.0, y]).collect()).unwrap();
        assert_eq!(trajectory_distance(&a, &b).unwrap(), 2.0);
        let short = traj(&[[0.0, 0.0], [1.0, 0.0]]);
        assert!(trajectory_distance(&a, &short).is_err());
    }

    #[test]
    fn non_finite_rejected() {
        assert!(Trajectory::new(vec![[0.0, f64::NAN], [0.0, 0.0]]).is_err());
        assert!(SceneFeatures::new(vec![f64::INFINITY]).is_err());
    }

    #[test]
    fn degenerate_projection_is_basis_vector() {
        let e = Embedding::project(vec![0.0; 4]);
        assert_eq!(e.values(), &[1.0, 0.0, 0.0, 0.0]);
    }

    fn coords(m: usize) -> impl Strategy<Value = Vec<[f64; 2]>> {
        prop::collection::vec([-100.0..100.0f64, -100.0..100.0f64], m)
    }

    proptest! {
        #[test]
        fn frame_round_trip(pts in coords(6), x in -50.0..50.0f64, y in -50.0..50.0f64, h in -7.0..7.0f64) {
            let anchor = Pose { x, y, heading: h };
            let local = to_agent_frame(&pts, anchor, 6).unwrap();
            let back = from_agent_frame(&local, anchor);
            for (p, q) in pts.iter().zip(&back) {
                prop_assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }

        #[test]
        fn distance_is_a_metric(a in coords(5), b in coords(5), c in coords(5)) {
            let (a, b, c) = (traj(&a), traj(&b), traj(&c));
            let ab = trajectory_distance(&a, &b).unwrap();
            let ba = trajectory_distance(&b, &a).unwrap();
            let bc = trajectory_distance(&b, &c).unwrap();
            let ac = trajectory_distance(&a, &c).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ba);
            prop_assert!(ac <= ab + bc + 1e-9);
        }
    }
}
