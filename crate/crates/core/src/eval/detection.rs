//! Center-distance detection AP, true-positive errors and NDS.
//!
//! Matching is class-agnostic: the attribute error is the rate of class
//! disagreement among true positives.

use serde::{Deserialize, Serialize};

use crate::model::{wrap_angle, AgentClass, Point2};

pub const DISTANCE_THRESHOLDS: [f64; 4] = [0.5, 1.0, 2.0, 4.0];
/// Threshold whose matches define the true-positive errors.
pub const TP_THRESHOLD: f64 = 2.0;
pub const MIN_RECALL: f64 = 0.1;
pub const MIN_PRECISION: f64 = 0.1;
const RECALL_SAMPLES: usize = 101;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DetectionBox {
    pub center: Point2,
    /// Width, height, length.
    pub size: [f64; 3],
    pub yaw: f64,
    /// BEV velocity compensated for ego motion.
    pub velocity: Point2,
    pub class: AgentClass,
    pub score: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionFrame {
    pub predictions: Vec<DetectionBox>,
    pub truths: Vec<DetectionBox>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DetectionMetrics {
    pub map: f64,
    pub ap: Vec<f64>,
    pub mate: f64,
    pub mase: f64,
    pub maoe: f64,
    pub mave: f64,
    pub maae: f64,
    pub true_positives: usize,
}

impl DetectionMetrics {
    pub fn tp_errors(&self) -> [f64; 5] {
        [self.mate, self.mase, self.maoe, self.mave, self.maae]
    }
}

fn dist(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// 1 − IoU of two boxes sharing center and heading.
pub fn scale_error(a: [f64; 3], b: [f64; 3]) -> f64 {
    let inter: f64 = (0..3).map(|k| a[k].min(b[k])).product();
    let union = a.iter().product::<f64>() + b.iter().product::<f64>() - inter;
    1.0 - inter / union
}

/// Per prediction in global score order: (frame, index, matched truth).
fn match_all(frames: &[DetectionFrame], threshold: f64) -> Vec<(usize, usize, Option<usize>)> {
    let mut order: Vec<(usize, usize)> = frames
        .iter()
        .enumerate()
        .flat_map(|(f, fr)| (0..fr.predictions.len()).map(move |i| (f, i)))
        .collect();
    order.sort_by(|a, b| {
        let sa = frames[a.0].predictions[a.1].score;
        let sb = frames[b.0].predictions[b.1].score;
        sb.total_cmp(&sa).then(a.cmp(b))
    });
    let mut taken: Vec<Vec<bool>> = frames.iter().map(|f| vec![false; f.truths.len()]).collect();
    order
        .into_iter()
        .map(|(f, i)| {
            let p = frames[f].predictions[i].center;
            let mut best: Option<(usize, f64)> = None;
            for (j, t) in frames[f].truths.iter().enumerate() {
                let d = dist(p, t.center);
                if !taken[f][j] && d <= threshold && best.is_none_or(|(_, bd)| d < bd) {
                    best = Some((j, d));
                }
            }
            if let Some((j, _)) = best {
                taken[f][j] = true;
            }
            (f, i, best.map(|b| b.0))
        })
        .collect()
}

/// Linear interpolation of `ys` over increasing `xs`, clamped to the first
/// value on the left and zero beyond the last sample.
fn interp(x: f64, xs: &[f64], ys: &[f64]) -> f64 {
    if xs.is_empty() || x > xs[xs.len() - 1] {
        return 0.0;
    }
    if x <= xs[0] {
        return ys[0];
    }
    let k = xs.partition_point(|&v| v < x);
    let (x0, x1, y0, y1) = (xs[k - 1], xs[k], ys[k - 1], ys[k]);
    if x1 == x0 {
        y1
    } else {
        y0 + (y1 - y0) * (x - x0) / (x1 - x0)
    }
}

/// Average precision from a score-ordered true-positive sequence: precision
/// is made monotone, sampled at 101 recall levels, and the area above the
/// minimum precision for recall above the minimum recall is normalized.
pub fn average_precision(tp: &[bool], n_truth: usize) -> f64 {
    if n_truth == 0 || tp.is_empty() {
        return 0.0;
    }
    let mut recall = Vec::with_capacity(tp.len());
    let mut precision = Vec::with_capacity(tp.len());
    let mut hits = 0usize;
    for (k, &t) in tp.iter().enumerate() {
        hits += t as usize;
        recall.push(hits as f64 / n_truth as f64);
        precision.push(hits as f64 / (k + 1) as f64);
    }
    for k in (0..precision.len().saturating_sub(1)).rev() {
        precision[k] = precision[k].max(precision[k + 1]);
    }
    let first = (MIN_RECALL * (RECALL_SAMPLES - 1) as f64).round() as usize + 1;
    let sampled: Vec<f64> = (first..RECALL_SAMPLES)
        .map(|i| (interp(i as f64 / (RECALL_SAMPLES - 1) as f64, &recall, &precision) - MIN_PRECISION).max(0.0))
        .collect();
    // Mathematically ≤ 1; the clamp only absorbs summation rounding.
    (sampled.iter().sum::<f64>() / sampled.len() as f64 / (1.0 - MIN_PRECISION)).min(1.0)
}

/// mAP over `thresholds` and true-positive errors at [`TP_THRESHOLD`].
/// Without true positives every error is 1.
pub fn detection_map(frames: &[DetectionFrame], thresholds: &[f64]) -> DetectionMetrics {
    let n_truth: usize = frames.iter().map(|f| f.truths.len()).sum();
    let ap: Vec<f64> = thresholds
        .iter()
        .map(|&d| {
            let m = match_all(frames, d);
            let tp: Vec<bool> = m.iter().map(|x| x.2.is_some()).collect();
            average_precision(&tp, n_truth)
        })
        .collect();
    let map = if ap.is_empty() { 0.0 } else { ap.iter().sum::<f64>() / ap.len() as f64 };

    let mut sums = [0.0; 5];
    let mut count = 0usize;
    for (f, i, j) in match_all(frames, TP_THRESHOLD) {
        let Some(j) = j else { continue };
        let p = &frames[f].predictions[i];
        let t = &frames[f].truths[j];
        sums[0] += dist(p.center, t.center);
        sums[1] += scale_error(p.size, t.size);
        sums[2] += wrap_angle(p.yaw - t.yaw).abs();
        sums[3] += dist(p.velocity, t.velocity);
        sums[4] += (p.class != t.class) as u8 as f64;
        count += 1;
    }
    let err = |k: usize| if count == 0 { 1.0 } else { sums[k] / count as f64 };
    DetectionMetrics {
        map,
        ap,
        mate: err(0),
        mase: err(1),
        maoe: err(2),
        mave: err(3),
        maae: err(4),
        true_positives: count,
    }
}

/// `(5·mAP + Σ (1 − min(1, err))) / 10` over the five TP errors.
pub fn nds(map: f64, tp_errors: [f64; 5]) -> f64 {
    (5.0 * map + tp_errors.iter().map(|e| 1.0 - e.min(1.0)).sum::<f64>()) / 10.0
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn bx(x: f64, y: f64, score: f64) -> DetectionBox {
        DetectionBox {
            center: [x, y],
            size: [1.8, 1.6, 4.5],
            yaw: 0.0,
            velocity: [0.0, 0.0],
            class: AgentClass::Car,
            score,
        }
    }

    #[test]
    fn nds_reference_rows() {
        assert_eq!(nds(1.0, [0.0; 5]), 1.0);
        let a = nds(0.466, [0.512, 0.271, 0.494, 0.173, 0.177]);
        assert!((a - 0.570).abs() < 0.005, "{a}");
        let b = nds(0.418, [0.566, 0.275, 0.552, 0.261, 0.190]);
        assert!((b - 0.525).abs() < 0.005, "{b}");
    }

    #[test]
    fn perfect_and_empty() {
        let truths = vec![bx(0.0, 0.0, 1.0), bx(10.0, 5.0, 1.0)];
        let perfect = DetectionFrame {
            predictions: truths.clone(),
            truths: truths.clone(),
        };
        let m = detection_map(&[perfect], &DISTANCE_THRESHOLDS);
        assert_eq!(m.map, 1.0);
        assert_eq!(m.tp_errors(), [0.0; 5]);
        let none = DetectionFrame {
            predictions: vec![],
            truths,
        };
        assert_eq!(detection_map(&[none], &DISTANCE_THRESHOLDS).map, 0.0);
    }

    #[test]
    fn one_tp_one_fp_by_hand() {
        // Equal scores: the earlier prediction (the TP) ranks first, so the
        // curve is recall 1 at precision 1, then precision 1/2. The monotone
        // envelope keeps precision 1 up to recall 1: AP = 1.
        let f = DetectionFrame {
            predictions: vec![bx(0.1, 0.0, 0.5), bx(20.0, 0.0, 0.5)],
            truths: vec![bx(0.0, 0.0, 1.0)],
        };
        assert_eq!(detection_map(std::slice::from_ref(&f), &[1.0]).map, 1.0);
        // FP first: precision 0 at recall 0, then 1/2 at recall 1; the
        // envelope is 1/2 everywhere, so AP = (0.5 − 0.1)/0.9.
        let g = DetectionFrame {
            predictions: vec![bx(20.0, 0.0, 0.5), bx(0.1, 0.0, 0.5)],
            truths: f.truths.clone(),
        };
        let ap = detection_map(&[g], &[1.0]).map;
        assert!((ap - 0.4 / 0.9).abs() < 1e-12, "{ap}");
    }

    #[test]
    fn tp_errors_by_hand() {
        let mut p = bx(1.0, 0.0, 0.9);
        p.size = [2.0, 2.0, 2.0];
        p.yaw = 0.5;
        p.velocity = [3.0, 4.0];
        p.class = AgentClass::Truck;
        let mut t = bx(0.0, 0.0, 1.0);
        t.size = [1.0, 2.0, 2.0];
        let m = detection_map(&[DetectionFrame { predictions: vec![p], truths: vec![t] }], &DISTANCE_THRESHOLDS);
        assert!((m.mate - 1.0).abs() < 1e-12);
        assert!((m.mase - 0.5).abs() < 1e-12);
        assert!((m.maoe - 0.5).abs() < 1e-12);
        assert!((m.mave - 5.0).abs() < 1e-12);
        assert_eq!(m.maae, 1.0);
        assert_eq!(m.ap, vec![0.0, 1.0, 1.0, 1.0]);
    }

    /// Independent reference: every prediction scans all truths, the PR
    /// envelope is an O(n²) maximum, and sampling walks the raw curve.
    fn oracle_ap(frames: &[DetectionFrame], threshold: f64) -> f64 {
        let mut preds: Vec<(f64, usize, usize)> = Vec::new();
        for (f, fr) in frames.iter().enumerate() {
            for (i, p) in fr.predictions.iter().enumerate() {
                preds.push((p.score, f, i));
            }
        }
        preds.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then((a.1, a.2).cmp(&(b.1, b.2))));
        let total: usize = frames.iter().map(|f| f.truths.len()).sum();
        if total == 0 || preds.is_empty() {
            return 0.0;
        }
        let mut used = std::collections::HashSet::new();
        let mut curve = Vec::new();
        let mut hits = 0.0;
        for (k, &(_, f, i)) in preds.iter().enumerate() {
            let p = frames[f].predictions[i].center;
            let cand = frames[f]
                .truths
                .iter()
                .enumerate()
                .filter(|(j, t)| !used.contains(&(f, *j)) && dist(p, t.center) <= threshold)
                .min_by(|a, b| dist(p, a.1.center).partial_cmp(&dist(p, b.1.center)).unwrap().then(a.0.cmp(&b.0)));
            if let Some((j, _)) = cand {
                used.insert((f, j));
                hits += 1.0;
            }
            curve.push((hits / total as f64, hits / (k + 1) as f64));
        }
        let env: Vec<(f64, f64)> = (0..curve.len())
            .map(|k| (curve[k].0, curve[k..].iter().map(|c| c.1).fold(0.0, f64::max)))
            .collect();
        let mut acc = 0.0;
        for s in 11..=100 {
            let r = s as f64 / 100.0;
            let v = if r > env.last().unwrap().0 {
                0.0
            } else if r <= env[0].0 {
                env[0].1
            } else {
                let k = env.iter().position(|e| e.0 >= r).unwrap();
                let (a, b) = (env[k - 1], env[k]);
                if b.0 == a.0 { b.1 } else { a.1 + (b.1 - a.1) * (r - a.0) / (b.0 - a.0) }
            };
            acc += (v - 0.1).max(0.0);
        }
        acc / 90.0 / 0.9
    }

    #[test]
    fn matches_reference_on_random_small_scenes() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for _ in 0..200 {
            let frames: Vec<DetectionFrame> = (0..rng.random_range(1..3))
                .map(|_| {
                    let truths: Vec<DetectionBox> = (0..rng.random_range(0..=5))
                        .map(|_| bx(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), 1.0))
                        .collect();
                    let predictions = (0..rng.random_range(0..=5))
                        .map(|_| {
                            let s = (rng.random_range(0..4) as f64) / 4.0;
                            bx(rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0), s)
                        })
                        .collect();
                    DetectionFrame { predictions, truths }
                })
                .collect();
            let m = detection_map(&frames, &DISTANCE_THRESHOLDS);
            for (k, &d) in DISTANCE_THRESHOLDS.iter().enumerate() {
                assert!((m.ap[k] - oracle_ap(&frames, d)).abs() < 1e-9);
            }
        }
    }
}
