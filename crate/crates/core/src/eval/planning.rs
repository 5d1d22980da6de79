//! Planning metrics: L2 at horizons, collision rate and temporal plan
//! consistency.

use serde::{Deserialize, Serialize};

use crate::geometry::{boxes_overlap, OrientedBox2D};
use crate::model::{GtAgent, Point2, Pose2D, TIMESTEP};
use crate::world::EGO_SIZE;

use super::EvalError;

pub const SHORT_HORIZONS: [f64; 3] = [1.0, 2.0, 3.0];
pub const LONG_HORIZONS: [f64; 3] = [4.0, 5.0, 6.0];

/// Index of the plan point reached at `seconds` (points start one step ahead).
pub fn horizon_index(seconds: f64) -> usize {
    ((seconds / TIMESTEP).round() as usize).saturating_sub(1)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HorizonValues {
    pub horizons: Vec<f64>,
    pub values: Vec<f64>,
    pub average: f64,
}

impl HorizonValues {
    fn new(horizons: &[f64], values: Vec<f64>) -> Self {
        let average = if values.is_empty() { 0.0 } else { values.iter().sum::<f64>() / values.len() as f64 };
        HorizonValues {
            horizons: horizons.to_vec(),
            values,
            average,
        }
    }
}

/// Displacement between plan and ground truth at each horizon's exact index.
pub fn l2_at_horizons(plan: &[Point2], gt: &[Point2], horizons: &[f64]) -> Result<HorizonValues, EvalError> {
    let mut values = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let k = horizon_index(h);
        let (Some(p), Some(g)) = (plan.get(k), gt.get(k)) else {
            return Err(EvalError::HorizonBeyondPlan {
                horizon: h,
                points: plan.len().min(gt.len()),
            });
        };
        values.push((p[0] - g[0]).hypot(p[1] - g[1]));
    }
    Ok(HorizonValues::new(horizons, values))
}

/// Ego footprint, meters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EgoFootprint {
    pub length: f64,
    pub width: f64,
}

impl Default for EgoFootprint {
    fn default() -> Self {
        EgoFootprint {
            length: EGO_SIZE[2],
            width: EGO_SIZE[0],
        }
    }
}

/// One agent's box at every future step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentBoxes {
    pub boxes: Vec<OrientedBox2D>,
}

impl AgentBoxes {
    pub fn from_gt(g: &GtAgent) -> Self {
        AgentBoxes {
            boxes: g
                .future
                .iter()
                .zip(&g.future_yaw)
                .map(|(&c, &yaw)| OrientedBox2D::new(c, g.anchor.w, g.anchor.l, yaw))
                .collect(),
        }
    }
}

/// What the planning metrics need from one frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningRecord {
    pub plan: Vec<Point2>,
    /// Previous frame's plan and the transform from its ego frame to this one.
    pub previous: Option<(Vec<Point2>, Pose2D)>,
    pub gt_future: Vec<Point2>,
    pub agents: Vec<AgentBoxes>,
}

/// Ego boxes along a plan, heading along the direction of travel (kept from
/// the previous step while nearly stationary).
pub fn ego_boxes(plan: &[Point2], ego: EgoFootprint) -> Vec<OrientedBox2D> {
    let mut prev = [0.0, 0.0];
    let mut yaw = 0.0;
    plan.iter()
        .map(|&p| {
            let d = [p[0] - prev[0], p[1] - prev[1]];
            if d[0].hypot(d[1]) > 1e-3 {
                yaw = d[1].atan2(d[0]);
            }
            prev = p;
            OrientedBox2D::new(p, ego.width, ego.length, yaw)
        })
        .collect()
}

/// First plan index at which the ego box overlaps any agent box.
pub fn first_collision(record: &PlanningRecord, ego: EgoFootprint) -> Option<usize> {
    ego_boxes(&record.plan, ego).iter().enumerate().find_map(|(t, eb)| {
        record
            .agents
            .iter()
            .any(|a| a.boxes.get(t).is_some_and(|ab| boxes_overlap(eb, ab)))
            .then_some(t)
    })
}

/// Percentage of frames with a collision at or before each horizon.
pub fn collision_rate(records: &[PlanningRecord], horizons: &[f64], ego: EgoFootprint) -> HorizonValues {
    let firsts: Vec<Option<usize>> = records.iter().map(|r| first_collision(r, ego)).collect();
    let values = horizons
        .iter()
        .map(|&h| {
            if records.is_empty() {
                return 0.0;
            }
            let k = horizon_index(h);
            let hits = firsts.iter().filter(|f| f.is_some_and(|t| t <= k)).count();
            100.0 * hits as f64 / records.len() as f64
        })
        .collect();
    HorizonValues::new(horizons, values)
}

/// Mean displacement, up to each horizon, between the current plan and the
/// previous plan advanced by one step and moved into the current frame by
/// `previous_to_current`.
pub fn tpc(current: &[Point2], previous: &[Point2], previous_to_current: &Pose2D, horizons: &[f64]) -> Result<HorizonValues, EvalError> {
    let mut values = Vec::with_capacity(horizons.len());
    for &h in horizons {
        let k_max = horizon_index(h);
        if k_max >= current.len() || k_max + 1 >= previous.len() {
            return Err(EvalError::HorizonBeyondPlan {
                horizon: h,
                points: current.len().min(previous.len().saturating_sub(1)),
            });
        }
        let total: f64 = (0..=k_max)
            .map(|k| {
                let p = previous_to_current.transform_point(previous[k + 1]);
                (current[k][0] - p[0]).hypot(current[k][1] - p[1])
            })
            .sum();
        values.push(total / (k_max + 1) as f64);
    }
    Ok(HorizonValues::new(horizons, values))
}

/// Frame-averaged TPC over records with a previous plan; `None` when no
/// record has one.
pub fn mean_tpc(records: &[PlanningRecord], horizons: &[f64]) -> Result<Option<HorizonValues>, EvalError> {
    let mut sums = vec![0.0; horizons.len()];
    let mut n = 0usize;
    for r in records {
        let Some((prev, pose)) = &r.previous else { continue };
        let v = tpc(&r.plan, prev, pose, horizons)?;
        for (s, x) in sums.iter_mut().zip(&v.values) {
            *s += x;
        }
        n += 1;
    }
    if n == 0 {
        return Ok(None);
    }
    Ok(Some(HorizonValues::new(horizons, sums.into_iter().map(|s| s / n as f64).collect())))
}

/// Frame-averaged L2.
pub fn mean_l2(records: &[PlanningRecord], horizons: &[f64]) -> Result<HorizonValues, EvalError> {
    let mut sums = vec![0.0; horizons.len()];
    for r in records {
        let v = l2_at_horizons(&r.plan, &r.gt_future, horizons)?;
        for (s, x) in sums.iter_mut().zip(&v.values) {
            *s += x;
        }
    }
    let n = records.len().max(1) as f64;
    Ok(HorizonValues::new(horizons, sums.into_iter().map(|s| s / n).collect()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::OrientedBox2D;

    fn straight(n: usize, step: f64) -> Vec<Point2> {
        (1..=n).map(|k| [k as f64 * step, 0.0]).collect()
    }

    #[test]
    fn l2_examples() {
        let gt = straight(12, 2.0);
        let v = l2_at_horizons(&gt, &gt, &SHORT_HORIZONS).unwrap();
        assert_eq!(v.values, vec![0.0; 3]);
        let off: Vec<Point2> = gt.iter().map(|p| [p[0], p[1] + 0.5]).collect();
        assert_eq!(l2_at_horizons(&off, &gt, &SHORT_HORIZONS).unwrap().values, vec![0.5; 3]);
        // Error 0.1 per step: steps 2, 4, 6 sit at 1, 2, 3 s.
        let grow: Vec<Point2> = gt.iter().enumerate().map(|(i, p)| [p[0], p[1] + 0.1 * (i + 1) as f64]).collect();
        let v = l2_at_horizons(&grow, &gt, &SHORT_HORIZONS).unwrap();
        for (a, b) in v.values.iter().zip([0.2, 0.4, 0.6]) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!((v.average - 0.4).abs() < 1e-12);
        assert!(l2_at_horizons(&gt[..5], &gt, &SHORT_HORIZONS).is_err());
        assert!(l2_at_horizons(&gt, &gt, &LONG_HORIZONS).is_ok());
    }

    fn parked_at(x: f64, steps: usize) -> AgentBoxes {
        AgentBoxes {
            boxes: vec![OrientedBox2D::new([x, 0.0], 1.8, 4.5, 0.0); steps],
        }
    }

    #[test]
    fn collision_examples() {
        assert_eq!(collision_rate(&[], &SHORT_HORIZONS, EgoFootprint::default()).values, vec![0.0; 3]);
        // 2 m per step: the box at x = 9 is first hit at step index 2 (x = 6,
        // reaching 8.04 against the agent's rear at 6.75).
        let rec = PlanningRecord {
            plan: straight(12, 2.0),
            previous: None,
            gt_future: straight(12, 2.0),
            agents: vec![parked_at(9.0, 24)],
        };
        assert_eq!(first_collision(&rec, EgoFootprint::default()), Some(2));
        let v = collision_rate(std::slice::from_ref(&rec), &[1.0, 1.5, 3.0], EgoFootprint::default());
        assert_eq!(v.values, vec![0.0, 100.0, 100.0]);
        let clear = PlanningRecord {
            agents: vec![parked_at(-30.0, 24)],
            ..rec.clone()
        };
        let v = collision_rate(&[rec, clear], &SHORT_HORIZONS, EgoFootprint::default());
        assert_eq!(v.values, vec![0.0, 50.0, 50.0]);
    }

    #[test]
    fn grazing_pass_agrees_with_sampling() {
        let ego = EgoFootprint::default();
        for lateral in [1.70, 1.76, 1.78, 1.80, 1.9] {
            let agent = OrientedBox2D::new([10.0, lateral], 1.8, 4.5, 0.0);
            let rec = PlanningRecord {
                plan: straight(12, 2.5),
                previous: None,
                gt_future: straight(12, 2.5),
                agents: vec![AgentBoxes { boxes: vec![agent; 12] }],
            };
            let hit = first_collision(&rec, ego).is_some();
            let sampled = ego_boxes(&rec.plan, ego).iter().any(|eb| {
                let n = 200;
                (0..=n).any(|i| {
                    (0..=n).any(|j| {
                        let l = [(i as f64 / n as f64 - 0.5) * ego.length, (j as f64 / n as f64 - 0.5) * ego.width];
                        let p = [eb.center[0] + l[0], eb.center[1] + l[1]];
                        agent.contains(p)
                    })
                })
            });
            assert_eq!(hit, sampled, "lateral {lateral}");
        }
    }

    #[test]
    fn tpc_examples() {
        let still = vec![[0.0, 0.0]; 12];
        let v = tpc(&still, &still, &Pose2D::identity(), &SHORT_HORIZONS).unwrap();
        assert_eq!(v.values, vec![0.0; 3]);
        let prev = straight(12, 1.0);
        let cur: Vec<Point2> = (0..12).map(|k| [prev.get(k + 1).map_or(0.0, |p| p[0]) + 0.3, 0.4]).collect();
        let v = tpc(&cur, &prev, &Pose2D::identity(), &SHORT_HORIZONS).unwrap();
        for x in v.values {
            assert!((x - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn tpc_moving_ego_by_hand() {
        // Previous frame: ego at the origin heading +x. Current frame: ego
        // moved to (2, 1) and turned by 0.3 rad.
        let prev_pose = Pose2D::new(0.0, 0.0, 0.0);
        let cur_pose = Pose2D::new(2.0, 1.0, 0.3);
        let rel = cur_pose.relative_to(&prev_pose);
        let prev: Vec<Point2> = (1..=12).map(|k| [2.0 * k as f64, 0.1 * k as f64]).collect();
        let cur: Vec<Point2> = (1..=12).map(|k| [2.1 * k as f64, -0.2 * k as f64]).collect();
        let v = tpc(&cur, &prev, &rel, &[1.0]).unwrap();
        // Hand transform: world → current frame is R(−0.3)(p − (2, 1)).
        let (s, c) = (0.3f64).sin_cos();
        let mut want = 0.0;
        for k in 0..2 {
            let [x, y] = prev[k + 1];
            let (dx, dy) = (x - 2.0, y - 1.0);
            let q = [c * dx + s * dy, -s * dx + c * dy];
            want += (cur[k][0] - q[0]).hypot(cur[k][1] - q[1]);
        }
        assert!((v.values[0] - want / 2.0).abs() < 1e-9);
    }
}
