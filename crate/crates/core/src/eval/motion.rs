//! Motion forecasting metrics: minADE, minFDE, miss rate and EPA.

use serde::{Deserialize, Serialize};

use crate::losses::{ade, fde};
use crate::model::{Point2, TrajectorySet};

use super::EvalError;

/// Center-distance threshold for matching and for a hit, meters.
pub const MATCH_DISTANCE: f64 = 2.0;
pub const MISS_DISTANCE: f64 = 2.0;
pub const FALSE_POSITIVE_PENALTY: f64 = 0.5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionPrediction {
    pub center: Point2,
    pub score: f64,
    pub futures: TrajectorySet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MotionTruth {
    pub center: Point2,
    pub future: Vec<Point2>,
}

/// One frame's confident predictions and ground truth.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionFrame {
    pub predictions: Vec<MotionPrediction>,
    pub truths: Vec<MotionTruth>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MotionMetrics {
    pub min_ade: f64,
    pub min_fde: f64,
    pub miss_rate: f64,
    pub epa: f64,
    pub matched: usize,
    pub hits: usize,
    pub false_positives: usize,
    pub ground_truth: usize,
}

/// Greedy matching in descending score order to the nearest free truth
/// within `max_distance`. Returns (prediction, truth) pairs.
pub fn greedy_center_match(pred: &[(Point2, f64)], truth: &[Point2], max_distance: f64) -> Vec<(usize, usize)> {
    let mut order: Vec<usize> = (0..pred.len()).collect();
    order.sort_by(|&a, &b| pred[b].1.total_cmp(&pred[a].1).then(a.cmp(&b)));
    let mut taken = vec![false; truth.len()];
    let mut pairs = Vec::new();
    for i in order {
        let p = pred[i].0;
        let mut best: Option<(usize, f64)> = None;
        for (j, t) in truth.iter().enumerate() {
            if taken[j] {
                continue;
            }
            let d = (p[0] - t[0]).hypot(p[1] - t[1]);
            if d <= max_distance && best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if let Some((j, _)) = best {
            taken[j] = true;
            pairs.push((i, j));
        }
    }
    pairs
}

/// Aggregates over frames. Every prediction passed in counts as a
/// detection; unmatched ones are false positives.
pub fn motion_metrics(frames: &[MotionFrame]) -> Result<MotionMetrics, EvalError> {
    let mut m = MotionMetrics::default();
    let (mut sum_ade, mut sum_fde, mut misses) = (0.0, 0.0, 0usize);
    for f in frames {
        let pred: Vec<(Point2, f64)> = f.predictions.iter().map(|p| (p.center, p.score)).collect();
        let truth: Vec<Point2> = f.truths.iter().map(|t| t.center).collect();
        let pairs = greedy_center_match(&pred, &truth, MATCH_DISTANCE);
        m.ground_truth += truth.len();
        m.false_positives += pred.len() - pairs.len();
        for (i, j) in pairs {
            let gt = &f.truths[j].future;
            let mut best_ade = f64::INFINITY;
            let mut best_fde = f64::INFINITY;
            for mode in &f.predictions[i].futures.modes {
                best_ade = best_ade.min(ade(&mode.points, gt)?);
                best_fde = best_fde.min(fde(&mode.points, gt)?);
            }
            if !best_ade.is_finite() {
                return Err(EvalError::Empty("prediction without modes".into()));
            }
            sum_ade += best_ade;
            sum_fde += best_fde;
            m.matched += 1;
            if best_fde > MISS_DISTANCE {
                misses += 1;
            } else {
                m.hits += 1;
            }
        }
    }
    if m.matched > 0 {
        m.min_ade = sum_ade / m.matched as f64;
        m.min_fde = sum_fde / m.matched as f64;
        m.miss_rate = misses as f64 / m.matched as f64;
    }
    if m.ground_truth > 0 {
        m.epa = (m.hits as f64 - FALSE_POSITIVE_PENALTY * m.false_positives as f64) / m.ground_truth as f64;
    }
    Ok(m)
}
