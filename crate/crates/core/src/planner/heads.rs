//! Multi-modal trajectory heads. Every mode is the running sum of predicted
//! per-step displacements, so trajectories start at the anchor and stay
//! continuous.

use ndarray::Array2;
use rand::Rng;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::fusion::network::{Linear, Mlp};
use crate::model::{Point2, Trajectory, TrajectorySet};

/// Meters per unit of raw displacement output.
pub const DISPLACEMENT_SCALE: f64 = 4.0;

#[derive(Clone, Copy, Debug)]
pub struct TrajectoryHead {
    pub displacement: Mlp,
    pub score: Linear,
    pub modes: usize,
    pub horizon: usize,
}

impl TrajectoryHead {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, modes: usize, horizon: usize, rng: &mut R) -> Self {
        TrajectoryHead {
            displacement: Mlp::new(store, &format!("{name}.displacement"), [dim, (dim / 2).max(1), modes * horizon * 2], 0.1, rng),
            score: Linear::new(store, &format!("{name}.score"), dim, modes, 0.1, rng),
            modes,
            horizon,
        }
    }

    pub fn width(&self) -> usize {
        self.modes * self.horizon * 2
    }

    /// Absolute trajectory points (`N × modes·horizon·2`, mode-major, then
    /// step, then x/y) and mode logits (`N × modes`) for each feature row.
    pub fn apply(&self, tape: &mut Tape, features: Var, origins: &[Point2]) -> (Var, Var) {
        let raw = self.displacement.apply(tape, features);
        let running = cumulative_sum_matrix(self.modes, self.horizon);
        let running = tape.constant(running);
        let summed = tape.matmul(raw, running);
        let width = self.width();
        let base = Array2::from_shape_fn((origins.len(), width), |(i, j)| origins[i][j % 2]);
        let base = tape.constant(base);
        let points = tape.add(summed, base);
        let logits = self.score.apply(tape, features);
        (points, logits)
    }
}

/// Right-multiplying by this matrix turns per-step displacements into
/// scaled running sums within each mode and coordinate.
pub fn cumulative_sum_matrix(modes: usize, horizon: usize) -> Array2<f64> {
    let w = modes * horizon * 2;
    let mut m = Array2::zeros((w, w));
    for mode in 0..modes {
        for c in 0..2 {
            for from in 0..horizon {
                for to in from..horizon {
                    m[[(mode * horizon + from) * 2 + c, (mode * horizon + to) * 2 + c]] = DISPLACEMENT_SCALE;
                }
            }
        }
    }
    m
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// Splits one output row into trajectories, scored by softmax of `logits`.
pub fn trajectories_from_row(points: &[f64], logits: &[f64], modes: usize, horizon: usize) -> TrajectorySet {
    let probs = softmax(logits);
    TrajectorySet {
        modes: (0..modes)
            .map(|m| Trajectory {
                points: (0..horizon)
                    .map(|t| [points[(m * horizon + t) * 2], points[(m * horizon + t) * 2 + 1]])
                    .collect(),
                score: probs[m],
            })
            .collect(),
    }
}

/// Value-level trajectory set from raw per-step displacements
/// (`modes·horizon·2`, unscaled) and mode logits.
pub fn trajectories_from_displacements(raw: &[f64], logits: &[f64], origin: Point2, modes: usize, horizon: usize) -> TrajectorySet {
    let mut points = vec![0.0; modes * horizon * 2];
    for m in 0..modes {
        let mut acc = origin;
        for t in 0..horizon {
            for c in 0..2 {
                let k = (m * horizon + t) * 2 + c;
                acc[c] += DISPLACEMENT_SCALE * raw[k];
                points[k] = acc[c];
            }
        }
    }
    trajectories_from_row(&points, logits, modes, horizon)
}

/// Runs `head` on a single instance feature anchored at `origin`.
pub fn trajectory_head(feature: &[f64], origin: Point2, head: &TrajectoryHead, store: &ParamStore) -> TrajectorySet {
    let mut tape = Tape::new(store);
    let f = tape.constant(Array2::from_shape_vec((1, feature.len()), feature.to_vec()).expect("row vector"));
    let (points, logits) = head.apply(&mut tape, f, &[origin]);
    let p = tape.value(points).row(0).to_vec();
    let l = tape.value(logits).row(0).to_vec();
    trajectories_from_row(&p, &l, head.modes, head.horizon)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{MOTION_STEPS, PLAN_STEPS};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_displacements_stay_at_origin() {
        let set = trajectories_from_displacements(&vec![0.0; 6 * 12 * 2], &[0.0; 6], [3.0, -1.0], 6, 12);
        assert_eq!(set.modes.len(), 6);
        for m in &set.modes {
            assert_eq!(m.points.len(), 12);
            assert!(m.points.iter().all(|p| *p == [3.0, -1.0]));
            assert!((m.score - 1.0 / 6.0).abs() < 1e-12);
        }
    }

    #[test]
    fn tape_head_matches_value_cumsum() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut store = ParamStore::new();
        let head = TrajectoryHead::new(&mut store, "h", 8, 3, PLAN_STEPS, &mut rng);
        let feature: Vec<f64> = (0..8).map(|i| (i as f64 * 0.7).sin()).collect();
        let got = trajectory_head(&feature, [1.0, 2.0], &head, &store);

        let mut tape = Tape::new(&store);
        let f = tape.constant(Array2::from_shape_vec((1, 8), feature.clone()).unwrap());
        let raw = head.displacement.apply(&mut tape, f);
        let logits = head.score.apply(&mut tape, f);
        let want = trajectories_from_displacements(
            &tape.value(raw).row(0).to_vec(),
            &tape.value(logits).row(0).to_vec(),
            [1.0, 2.0],
            3,
            PLAN_STEPS,
        );
        for (a, b) in got.modes.iter().zip(&want.modes) {
            assert!((a.score - b.score).abs() < 1e-12);
            for (p, q) in a.points.iter().zip(&b.points) {
                assert!((p[0] - q[0]).abs() < 1e-9 && (p[1] - q[1]).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn translating_origin_translates_every_mode() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut store = ParamStore::new();
        let head = TrajectoryHead::new(&mut store, "h", 8, 6, MOTION_STEPS, &mut rng);
        let feature: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
        let base = trajectory_head(&feature, [0.0, 0.0], &head, &store);
        for _ in 0..10 {
            let d = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
            let moved = trajectory_head(&feature, d, &head, &store);
            for (a, b) in base.modes.iter().zip(&moved.modes) {
                assert_eq!(a.score, b.score);
                for (p, q) in a.points.iter().zip(&b.points) {
                    assert!((p[0] + d[0] - q[0]).abs() < 1e-9 && (p[1] + d[1] - q[1]).abs() < 1e-9);
                }
            }
        }
    }
}
