//! Training losses: trajectory displacement, focal classification, L1
//! regression and matching-based detection / map supervision.
//!
//! Every loss that takes part in training also returns its gradient with
//! respect to the network outputs, which seeds the reverse pass.

mod hungarian;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::polyline_chamfer;
use crate::model::{AgentInstance, GtAgent, Point2, ANCHOR_DIM};

pub use hungarian::{brute_force_match, hungarian_match, MatchResult};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("length mismatch: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("scores are not a probability distribution (sum {0})")]
    NotNormalized(f64),
    #[error("positive index {0} out of range for {1} modes")]
    BadIndex(usize, usize),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("empty input")]
    Empty,
}

const PROB_EPS: f64 = 1e-12;

/// Mean Euclidean displacement.
pub fn ade(pred: &[Point2], gt: &[Point2]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    Ok(pred.iter().zip(gt).map(|(a, b)| crate::model::dist2(*a, *b)).sum::<f64>() / pred.len() as f64)
}

/// Final-point displacement.
pub fn fde(pred: &[Point2], gt: &[Point2]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    match (pred.last(), gt.last()) {
        (Some(a), Some(b)) => Ok(crate::model::dist2(*a, *b)),
        _ => Err(LossError::Empty),
    }
}

fn check_distribution(scores: &[f64], positive: usize) -> Result<(), LossError> {
    if positive >= scores.len() {
        return Err(LossError::BadIndex(positive, scores.len()));
    }
    if scores.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(LossError::NotNormalized(scores.iter().sum()));
    }
    let s: f64 = scores.iter().sum();
    if (s - 1.0).abs() > 1e-6 {
        return Err(LossError::NotNormalized(s));
    }
    Ok(())
}

/// `x^γ · ln(y)` with the convention that it vanishes when `x = 0`.
fn pow_log(x: f64, gamma: f64, y: f64) -> f64 {
    if x <= 0.0 {
        0.0
    } else {
        x.powf(gamma) * y.max(PROB_EPS).ln()
    }
}

/// Focal loss over a normalized mode distribution: the positive mode is
/// pulled up with weight `weight`, every other mode pushed down with
/// `1 − weight`.
pub fn focal_loss(scores: &[f64], positive: usize, gamma: f64, weight: f64) -> Result<f64, LossError> {
    check_distribution(scores, positive)?;
    let mut loss = -weight * pow_log(1.0 - scores[positive], gamma, scores[positive]);
    if weight < 1.0 {
        for (i, &p) in scores.iter().enumerate() {
            if i != positive {
                loss -= (1.0 - weight) * pow_log(p, gamma, 1.0 - p);
            }
        }
    }
    Ok(loss)
}

/// Gradient of [`focal_loss`] with respect to each mode probability.
pub fn focal_loss_grad(scores: &[f64], positive: usize, gamma: f64, weight: f64) -> Result<Vec<f64>, LossError> {
    check_distribution(scores, positive)?;
    Ok(scores
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
            if i == positive {
                let q = 1.0 - p;
                weight * (gamma * q.powf(gamma - 1.0) * p.ln() - q.powf(gamma) / p)
            } else {
                let q = 1.0 - p;
                -(1.0 - weight) * (gamma * p.powf(gamma - 1.0) * q.ln() - p.powf(gamma) / q)
            }
        })
        .collect())
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Binary focal loss on a logit and its derivative with respect to the logit.
pub fn sigmoid_focal(logit: f64, target: bool, gamma: f64, alpha: f64) -> (f64, f64) {
    let p = sigmoid(logit);
    if target {
        let ln_p = -softplus(-logit);
        let q = 1.0 - p;
        let loss = -alpha * q.powf(gamma) * ln_p;
        let grad = alpha * q.powf(gamma) * (gamma * p * ln_p - q);
        (loss, grad)
    } else {
        let ln_q = -softplus(logit);
        let loss = -(1.0 - alpha) * p.powf(gamma) * ln_q;
        let grad = (1.0 - alpha) * p.powf(gamma) * (p - gamma * (1.0 - p) * ln_q);
        (loss, grad)
    }
}

/// Binary focal loss on a probability.
pub fn binary_focal(p: f64, target: bool, gamma: f64, alpha: f64) -> f64 {
    if target {
        -alpha * pow_log(1.0 - p, gamma, p)
    } else {
        -(1.0 - alpha) * pow_log(p, gamma, 1.0 - p)
    }
}

/// Mean absolute error over all coordinates.
pub fn l1_trajectory_loss(pred: &[Point2], gt: &[Point2]) -> Result<f64, LossError> {
    if pred.len() != gt.len() {
        return Err(LossError::LengthMismatch(pred.len(), gt.len()));
    }
    if pred.is_empty() {
        return Err(LossError::Empty);
    }
    let s: f64 = pred
        .iter()
        .zip(gt)
        .map(|(a, b)| (a[0] - b[0]).abs() + (a[1] - b[1]).abs())
        .sum();
    Ok(s / (2 * pred.len()) as f64)
}

/// Gradient of [`l1_trajectory_loss`] with respect to `pred`.
pub fn l1_trajectory_grad(pred: &[Point2], gt: &[Point2]) -> Vec<Point2> {
    let n = (2 * pred.len()).max(1) as f64;
    pred.iter()
        .zip(gt)
        .map(|(a, b)| [sign(a[0] - b[0]) / n, sign(a[1] - b[1]) / n])
        .collect()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Weights of matching costs and loss terms.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub class_cost: f64,
    pub box_cost: f64,
    pub gamma: f64,
    pub focal_weight: f64,
    pub regression_weight: f64,
    /// Per-coordinate weights of the encoded anchor regression loss. Matching
    /// always uses the unweighted L1.
    pub box_weights: [f64; ANCHOR_DIM],
    pub map_point_cost: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            class_cost: 2.0,
            box_cost: 0.25,
            gamma: 2.0,
            focal_weight: 0.25,
            regression_weight: 0.25,
            // Velocity is the only cue radar adds that the camera lacks;
            // at unit weight it is drowned out by the ten other terms.
            box_weights: [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 4.0, 4.0, 1.0],
            map_point_cost: 1.0,
        }
    }
}

/// Value and breakdown of a matching-based set loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SetLoss {
    pub classification: f64,
    pub regression: f64,
    pub total: f64,
    pub matching: MatchResult,
}

/// A set loss and its gradients with respect to class logits and regressed
/// values.
#[derive(Clone, Debug)]
pub struct SetLossGrad {
    pub loss: SetLoss,
    pub logits: Array2<f64>,
    pub values: Array2<f64>,
}

fn l1(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

fn classification_terms(logits: &Array2<f64>, targets: &[Option<usize>], cfg: &LossConfig, norm: f64) -> (f64, Array2<f64>) {
    let mut grad = Array2::zeros(logits.raw_dim());
    let mut total = 0.0;
    for ((i, c), &x) in logits.indexed_iter() {
        let (l, g) = sigmoid_focal(x, targets[i] == Some(c), cfg.gamma, cfg.focal_weight);
        total += l;
        grad[[i, c]] = g / norm;
    }
    (total / norm, grad)
}

/// Detection loss on raw outputs: class logits `N × classes` and encoded
/// anchors `N × 11`, against ground-truth classes and encoded anchors.
pub fn detection_loss_with_grad(
    logits: &Array2<f64>,
    boxes: &Array2<f64>,
    gt_classes: &[usize],
    gt_boxes: &[[f64; ANCHOR_DIM]],
    cfg: &LossConfig,
) -> Result<SetLossGrad, LossError> {
    let n = logits.nrows();
    let m = gt_classes.len();
    if boxes.nrows() != n || gt_boxes.len() != m {
        return Err(LossError::LengthMismatch(boxes.nrows(), n));
    }
    let cost = Array2::from_shape_fn((n, m), |(i, j)| {
        let p = sigmoid(logits[[i, gt_classes[j]]]);
        let b = boxes.row(i).to_vec();
        cfg.class_cost * (1.0 - p) + cfg.box_cost * l1(&b, &gt_boxes[j])
    });
    let matching = hungarian_match(&cost)?;
    let norm = m.max(1) as f64;
    let mut targets = vec![None; n];
    for &(i, j) in &matching.pairs {
        targets[i] = Some(gt_classes[j]);
    }
    let (classification, glogits) = classification_terms(logits, &targets, cfg, norm);
    let mut gvalues = Array2::zeros(boxes.raw_dim());
    let mut regression = 0.0;
    for &(i, j) in &matching.pairs {
        for c in 0..ANCHOR_DIM {
            let d = boxes[[i, c]] - gt_boxes[j][c];
            regression += cfg.box_weights[c] * d.abs();
            gvalues[[i, c]] = cfg.regression_weight * cfg.box_weights[c] * sign(d) / norm;
        }
    }
    let regression = cfg.regression_weight * regression / norm;
    Ok(SetLossGrad {
        loss: SetLoss {
            classification,
            regression,
            total: classification + regression,
            matching,
        },
        logits: glogits,
        values: gvalues,
    })
}

fn logit(p: f64) -> f64 {
    let p = p.clamp(PROB_EPS, 1.0 - PROB_EPS);
    (p / (1.0 - p)).ln()
}

/// Detection loss on decoded instances: Hungarian matching on
/// `class_cost·(1 − p_class) + box_cost·L1(anchor)`, then focal
/// classification over all predictions and L1 regression over matches.
pub fn detection_loss(preds: &[AgentInstance], gts: &[GtAgent], cfg: &LossConfig) -> Result<SetLoss, LossError> {
    let classes = preds.first().map_or(crate::model::AgentClass::COUNT, |p| p.class_scores.len());
    let logits = Array2::from_shape_fn((preds.len(), classes), |(i, c)| logit(preds[i].class_scores[c]));
    let boxes = Array2::from_shape_fn((preds.len(), ANCHOR_DIM), |(i, c)| preds[i].anchor.encode()[c]);
    let gt_classes: Vec<usize> = gts.iter().map(|g| g.class.index()).collect();
    let gt_boxes: Vec<[f64; ANCHOR_DIM]> = gts.iter().map(|g| g.anchor.encode()).collect();
    Ok(detection_loss_with_grad(&logits, &boxes, &gt_classes, &gt_boxes, cfg)?.loss)
}

/// Map loss: polylines matched on class cost plus Chamfer distance, then
/// per-waypoint L1 on matches. `points` is `N × 2·N_p`, interleaved x/y;
/// ground-truth polylines must have `N_p` waypoints.
pub fn map_loss_with_grad(
    logits: &Array2<f64>,
    points: &Array2<f64>,
    gt_classes: &[usize],
    gt_points: &[Vec<Point2>],
    cfg: &LossConfig,
) -> Result<SetLossGrad, LossError> {
    let n = logits.nrows();
    let m = gt_classes.len();
    let np = points.ncols() / 2;
    if points.nrows() != n || gt_points.len() != m {
        return Err(LossError::LengthMismatch(points.nrows(), n));
    }
    if let Some(bad) = gt_points.iter().find(|g| g.len() != np) {
        return Err(LossError::LengthMismatch(bad.len(), np));
    }
    let pred_wp: Vec<Vec<Point2>> = (0..n)
        .map(|i| (0..np).map(|k| [points[[i, 2 * k]], points[[i, 2 * k + 1]]]).collect())
        .collect();
    let mut cost = Array2::zeros((n, m));
    for i in 0..n {
        for j in 0..m {
            let p = sigmoid(logits[[i, gt_classes[j]]]);
            let ch = polyline_chamfer(&pred_wp[i], &gt_points[j]).map_err(|e| LossError::NonFinite(e.to_string()))?;
            cost[[i, j]] = cfg.class_cost * (1.0 - p) + cfg.map_point_cost * ch;
        }
    }
    let matching = hungarian_match(&cost)?;
    let norm = m.max(1) as f64;
    let mut targets = vec![None; n];
    for &(i, j) in &matching.pairs {
        targets[i] = Some(gt_classes[j]);
    }
    let (classification, glogits) = classification_terms(logits, &targets, cfg, norm);
    let mut gvalues = Array2::zeros(points.raw_dim());
    let mut regression = 0.0;
    let per_point = 1.0 / np.max(1) as f64;
    for &(i, j) in &matching.pairs {
        for k in 0..np {
            for c in 0..2 {
                let d = points[[i, 2 * k + c]] - gt_points[j][k][c];
                regression += per_point * d.abs();
                gvalues[[i, 2 * k + c]] = cfg.regression_weight * per_point * sign(d) / norm;
            }
        }
    }
    let regression = cfg.regression_weight * regression / norm;
    Ok(SetLossGrad {
        loss: SetLoss {
            classification,
            regression,
            total: classification + regression,
            matching,
        },
        logits: glogits,
        values: gvalues,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentClass, Anchor};
    use proptest::prelude::*;

    #[test]
    fn ade_examples() {
        let g = vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0]];
        assert_eq!(ade(&g, &g).unwrap(), 0.0);
        let off: Vec<Point2> = g.iter().map(|p| [p[0], p[1] + 1.0]).collect();
        assert!((ade(&off, &g).unwrap() - 1.0).abs() < 1e-12);
        let p = vec![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0]];
        assert!((ade(&p, &g).unwrap() - 1.0).abs() < 1e-12);
        assert!(ade(&p[..2], &g).is_err());
    }

    #[test]
    fn focal_examples() {
        assert_eq!(focal_loss(&[1.0, 0.0, 0.0], 0, 2.0, 0.25).unwrap(), 0.0);
        let s = [0.7, 0.2, 0.1];
        assert_eq!(focal_loss(&s, 0, 0.0, 1.0).unwrap(), -(0.7f64).ln());
        let l = focal_loss(&[0.9, 0.1], 0, 2.0, 1.0).unwrap();
        assert!((l - 0.01 * -(0.9f64).ln()).abs() < 1e-15);
        assert!((l - 1.0536e-3).abs() < 1e-7);
        assert!(focal_loss(&[0.5, 0.6], 0, 2.0, 0.25).is_err());
    }

    #[test]
    fn focal_grad_matches_differences() {
        let s = [0.5, 0.3, 0.2];
        let g = focal_loss_grad(&s, 1, 2.0, 0.25).unwrap();
        // Each coordinate moved on its own, so evaluate the unnormalized sum.
        let f = |p: &[f64]| {
            let mut l = -0.25 * (1.0 - p[1]).powi(2) * p[1].ln();
            for i in [0, 2] {
                l -= 0.75 * p[i].powi(2) * (1.0 - p[i]).ln();
            }
            l
        };
        for i in 0..3 {
            let mut a = s;
            let mut b = s;
            a[i] += 1e-6;
            b[i] -= 1e-6;
            let fd = (f(&a) - f(&b)) / 2e-6;
            assert!((fd - g[i]).abs() < 1e-6, "{i}: {fd} vs {}", g[i]);
        }
    }

    #[test]
    fn sigmoid_focal_grad() {
        for &x in &[-3.0, -0.4, 0.0, 1.3, 5.0] {
            for t in [false, true] {
                let (l, g) = sigmoid_focal(x, t, 2.0, 0.25);
                let fd = (sigmoid_focal(x + 1e-6, t, 2.0, 0.25).0 - sigmoid_focal(x - 1e-6, t, 2.0, 0.25).0) / 2e-6;
                assert!((fd - g).abs() < 1e-7, "{x} {t}");
                assert!((l - binary_focal(sigmoid(x), t, 2.0, 0.25)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn l1_examples() {
        let g = vec![[0.0, 0.0], [1.0, 2.0]];
        assert_eq!(l1_trajectory_loss(&g, &g).unwrap(), 0.0);
        let p: Vec<Point2> = g.iter().map(|q| [q[0] + 0.5, q[1]]).collect();
        assert_eq!(l1_trajectory_loss(&p, &g).unwrap(), 0.25);
    }

    #[test]
    fn l1_matches_naive_sum() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let p: Vec<Point2> = (0..12).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let g: Vec<Point2> = (0..12).map(|_| [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)]).collect();
            let mut naive = 0.0;
            for t in 0..12 {
                for c in 0..2 {
                    naive += (p[t][c] - g[t][c]).abs();
                }
            }
            naive /= 24.0;
            assert!((l1_trajectory_loss(&p, &g).unwrap() - naive).abs() < 1e-9);
        }
    }

    fn gt(id: u64, class: AgentClass, x: f64) -> GtAgent {
        GtAgent {
            id,
            class,
            anchor: Anchor::from_pose([x, 0.0, 0.8], class.nominal_size(), 0.0, [1.0, 0.0, 0.0]),
            future: vec![],
            future_yaw: vec![],
        }
    }

    fn pred(anchor: Anchor, scores: Vec<f64>) -> AgentInstance {
        AgentInstance {
            anchor,
            feature: vec![],
            class_scores: scores,
            instance_id: 0,
        }
    }

    #[test]
    fn perfect_detection_has_zero_regression() {
        let gts = vec![gt(1, AgentClass::Car, 10.0), gt(2, AgentClass::Truck, -8.0)];
        let preds = vec![
            pred(gts[1].anchor, vec![0.0, 1.0, 0.0]),
            pred(gts[0].anchor, vec![1.0, 0.0, 0.0]),
        ];
        let l = detection_loss(&preds, &gts, &LossConfig::default()).unwrap();
        assert!(l.regression.abs() < 1e-12);
        assert_eq!(l.matching.pairs, vec![(0, 1), (1, 0)]);
        assert!(l.classification < 1e-9);
    }

    #[test]
    fn no_ground_truth_is_pure_negative() {
        let cfg = LossConfig::default();
        let a = Anchor::from_pose([3.0, 1.0, 0.8], [1.9, 1.6, 4.6], 0.3, [0.0; 3]);
        let preds = vec![pred(a, vec![0.2, 0.1, 0.05])];
        let l = detection_loss(&preds, &[], &cfg).unwrap();
        assert_eq!(l.regression, 0.0);
        let expect: f64 = [0.2, 0.1, 0.05].iter().map(|&p| binary_focal(p, false, 2.0, 0.25)).sum();
        assert!((l.classification - expect).abs() < 1e-9);
        assert!(l.matching.pairs.is_empty());
    }

    #[test]
    fn two_by_two_assembly() {
        let cfg = LossConfig::default();
        let gts = vec![gt(1, AgentClass::Car, 10.0), gt(2, AgentClass::Cyclist, 20.0)];
        let mut a0 = gts[0].anchor;
        a0.x += 0.5;
        let mut a1 = gts[1].anchor;
        a1.y -= 1.0;
        let preds = vec![pred(a1, vec![0.1, 0.1, 0.8]), pred(a0, vec![0.6, 0.3, 0.1])];
        let l = detection_loss(&preds, &gts, &cfg).unwrap();
        assert_eq!(l.matching.pairs, vec![(0, 1), (1, 0)]);
        let mut cls = 0.0;
        for (i, target) in [(0usize, 2usize), (1, 0)] {
            for c in 0..3 {
                cls += binary_focal(preds[i].class_scores[c], c == target, 2.0, 0.25);
            }
        }
        let reg = 0.25 * (0.5 + 1.0);
        assert!((l.classification - cls / 2.0).abs() < 1e-9, "{} vs {}", l.classification, cls / 2.0);
        assert!((l.regression - reg / 2.0).abs() < 1e-9);
    }

    proptest! {
        #[test]
        fn ade_symmetric_and_nonnegative(pts in prop::collection::vec((-50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64, -50.0..50.0f64), 1..24)) {
            let a: Vec<Point2> = pts.iter().map(|p| [p.0, p.1]).collect();
            let b: Vec<Point2> = pts.iter().map(|p| [p.2, p.3]).collect();
            let ab = ade(&a, &b).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, ade(&b, &a).unwrap());
        }

        #[test]
        fn focal_decreases_in_positive_probability(p in 0.01..0.98f64, dp in 0.001..0.01f64, gamma in 0.0..4.0f64, w in 0.0..1.0f64) {
            let l1 = focal_loss(&[p, 1.0 - p], 0, gamma, w).unwrap();
            let l2 = focal_loss(&[p + dp, 1.0 - p - dp], 0, gamma, w).unwrap();
            prop_assert!(l2 <= l1 + 1e-12);
            prop_assert!(l1 >= 0.0);
        }
    }
}
