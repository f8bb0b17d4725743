//! Displacement errors, hit rate and the Gaussian-mixture log-likelihood of
//! the ground truth under a weighted prediction set.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::inference::{Prediction, PredictionRecord};
use crate::tape::log_sum_exp;
use crate::types::{Example, Trajectory};

pub const HIT_THRESHOLD: f64 = 0.5;
/// Allowed deviation of a prediction set's total weight from one.
pub const WEIGHT_SUM_TOL: f64 = 1e-9;

fn point_errors<'a>(
    pred: &'a Trajectory,
    gt: &'a Trajectory,
) -> Result<impl Iterator<Item = f64> + 'a> {
    if pred.len() != gt.len() {
        return Err(Error::Length {
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    Ok(pred
        .points()
        .zip(gt.points())
        .map(|(a, b)| (a[0] - b[0]).hypot(a[1] - b[1])))
}

/// Mean per-point Euclidean distance.
pub fn ade(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(point_errors(pred, gt)?.sum::<f64>() / gt.len() as f64)
}

/// Distance at the last point.
pub fn fde(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(point_errors(pred, gt)?.last().unwrap_or(0.0))
}

pub fn max_displacement(pred: &Trajectory, gt: &Trajectory) -> Result<f64> {
    Ok(point_errors(pred, gt)?.fold(0.0, f64::max))
}

/// Whether every point lies strictly within `threshold` of the ground truth.
pub fn hit(pred: &Trajectory, gt: &Trajectory, threshold: f64) -> Result<bool> {
    Ok(max_displacement(pred, gt)? < threshold)
}

/// `log Σ_i w_i N(gt | t_i, I)` over all `2M` coordinates.
pub fn ll(preds: &[Prediction], gt: &Trajectory) -> Result<f64> {
    if preds.is_empty() {
        return Err(Error::Argument(
            "log-likelihood needs at least one prediction".into(),
        ));
    }
    let total: f64 = preds.iter().map(|p| p.weight).sum();
    if (total - 1.0).abs() > WEIGHT_SUM_TOL || preds.iter().any(|p| p.weight < 0.0) {
        return Err(Error::Argument(format!(
            "prediction weights sum to {total}, expected 1"
        )));
    }
    let dim = 2 * gt.len();
    let log_norm = -0.5 * dim as f64 * (2.0 * std::f64::consts::PI).ln();
    let mut terms = Vec::with_capacity(preds.len());
    for p in preds {
        if p.trajectory.len() != gt.len() {
            return Err(Error::Length {
                expected: gt.len(),
                actual: p.trajectory.len(),
            });
        }
        let sq = crate::types::squared_euclidean(p.trajectory.as_flat(), gt.as_flat());
        terms.push(p.weight.ln() + log_norm - 0.5 * sq);
    }
    Ok(log_sum_exp(&terms))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExampleMetrics {
    pub ade: f64,
    pub fde: f64,
    pub hit: bool,
    pub ll: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub ade: f64,
    pub fde: f64,
    pub hit_rate: f64,
    pub ll: f64,
    pub ll_per_timestamp: f64,
    pub n_examples: usize,
}

/// Metrics for one example: displacement errors from the highest-weight prediction
/// (lowest mode index on ties), likelihood from all of them.
pub fn example_metrics(preds: &[Prediction], gt: &Trajectory) -> Result<ExampleMetrics> {
    let best = preds
        .iter()
        .reduce(|best, p| {
            if p.weight > best.weight || (p.weight == best.weight && p.mode_index < best.mode_index)
            {
                p
            } else {
                best
            }
        })
        .ok_or_else(|| Error::Argument("no predictions".into()))?;
    Ok(ExampleMetrics {
        ade: ade(&best.trajectory, gt)?,
        fde: fde(&best.trajectory, gt)?,
        hit: hit(&best.trajectory, gt, HIT_THRESHOLD)?,
        ll: ll(preds, gt)?,
    })
}

/// Groups prediction records by example id.
pub fn group_predictions(records: &[PredictionRecord]) -> HashMap<&str, Vec<Prediction>> {
    let mut by_id: HashMap<&str, Vec<Prediction>> = HashMap::new();
    for r in records {
        by_id.entry(r.id.as_str()).or_default().push(Prediction {
            trajectory: r.trajectory.clone(),
            weight: r.weight,
            mode_index: r.mode_index,
        });
    }
    by_id
}

/// Per-example metrics for every example selected by `keep`, in dataset order.
pub fn per_example<'a>(
    records: &[PredictionRecord],
    examples: &'a [Example],
    keep: impl Fn(&Example) -> bool + Sync,
) -> Result<Vec<(&'a str, ExampleMetrics)>> {
    let grouped = group_predictions(records);
    if let Some(id) = grouped
        .keys()
        .find(|id| !examples.iter().any(|e| e.id == **id))
    {
        return Err(Error::Argument(format!(
            "predictions reference unknown example {id}"
        )));
    }
    examples
        .par_iter()
        .filter(|e| keep(e))
        .map(|e| {
            let preds = grouped
                .get(e.id.as_str())
                .ok_or_else(|| Error::Argument(format!("no predictions for example {}", e.id)))?;
            Ok((e.id.as_str(), example_metrics(preds, &e.ground_truth)?))
        })
        .collect()
}

/// Averages per-example metrics over the examples selected by `keep`.
pub fn evaluate_subset(
    records: &[PredictionRecord],
    examples: &[Example],
    keep: impl Fn(&Example) -> bool + Sync,
) -> Result<EvalReport> {
    let rows = per_example(records, examples, keep)?;
    if rows.is_empty() {
        return Err(Error::Argument("no examples to evaluate".into()));
    }
    let m = examples
        .iter()
        .map(|e| e.ground_truth.len())
        .next()
        .unwrap_or(1);
    let n = rows.len() as f64;
    let mean = |f: fn(&ExampleMetrics) -> f64| rows.iter().map(|(_, r)| f(r)).sum::<f64>() / n;
    let ll = mean(|r| r.ll);
    Ok(EvalReport {
        ade: mean(|r| r.ade),
        fde: mean(|r| r.fde),
        hit_rate: mean(|r| if r.hit { 1.0 } else { 0.0 }),
        ll,
        ll_per_timestamp: ll / m as f64,
        n_examples: rows.len(),
    })
}

pub fn evaluate(records: &[PredictionRecord], examples: &[Example]) -> Result<EvalReport> {
    evaluate_subset(records, examples, |_| true)
}
