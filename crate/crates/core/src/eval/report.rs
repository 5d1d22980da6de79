//! Runs a predictor over a suite and assembles every metric into one report
//! plus a per-frame series.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::model::{Frame, Pose2D, Trajectory, TrajectorySet};
use crate::planner::{run_frame, PipelineOutput, PlannerModel, PlannerState};

use super::detection::{detection_map, nds, DetectionBox, DetectionFrame, DetectionMetrics, DISTANCE_THRESHOLDS};
use super::motion::{motion_metrics, MotionFrame, MotionMetrics, MotionPrediction, MotionTruth};
use super::planning::{
    collision_rate, first_collision, horizon_index, l2_at_horizons, mean_l2, mean_tpc, tpc, AgentBoxes, EgoFootprint,
    HorizonValues, PlanningRecord, LONG_HORIZONS, SHORT_HORIZONS,
};
use super::EvalError;

/// Detections at or above this score count for motion metrics.
pub const MOTION_SCORE_THRESHOLD: f64 = 0.5;

/// Source of per-frame outputs.
#[derive(Clone, Copy, Debug)]
pub enum Predictor<'a> {
    Model { model: &'a PlannerModel, radar_enabled: bool },
    /// Ground-truth passthrough: validates the metrics, not a model.
    Oracle,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PlanningMetrics {
    pub l2: HorizonValues,
    pub l2_long: HorizonValues,
    pub collision: HorizonValues,
    pub collision_long: HorizonValues,
    /// Short horizons only: a 6 s plan has no overlap with its predecessor
    /// at the longest horizon. `None` when no frame has a previous plan.
    pub tpc: Option<HorizonValues>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub scenes: usize,
    pub frames: usize,
    pub planning: PlanningMetrics,
    pub motion: MotionMetrics,
    pub detection: DetectionMetrics,
    pub nds: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameRow {
    pub scene: u64,
    pub frame: usize,
    pub l2_1s: f64,
    pub l2_2s: f64,
    pub l2_3s: f64,
    /// Average over 1–3 s; empty on a scene's first frame.
    pub tpc: Option<f64>,
    pub collision_3s: bool,
    pub confident_detections: usize,
    pub ground_truth_agents: usize,
    /// Radar points the predictor consumed: 0 with radar disabled.
    pub radar_points: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct FrameSeries {
    pub rows: Vec<FrameRow>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOutput {
    pub report: EvalReport,
    pub series: FrameSeries,
}

struct FrameEval {
    planning: PlanningRecord,
    motion: MotionFrame,
    detection: DetectionFrame,
}

fn detection_box_gt(frame: &Frame, g: &crate::model::GtAgent) -> DetectionBox {
    let a = &g.anchor;
    DetectionBox {
        center: a.center_xy(),
        size: [a.w, a.h, a.l],
        yaw: a.yaw(),
        velocity: [a.vx + frame.ego_velocity[0], a.vy + frame.ego_velocity[1]],
        class: g.class,
        score: 1.0,
    }
}

fn oracle_output(frame: &Frame) -> PipelineOutput {
    use crate::model::AgentInstance;
    let plan = Trajectory {
        points: frame.gt_ego_future.clone(),
        score: 1.0,
    };
    let one = |t: Trajectory| TrajectorySet { modes: vec![t] };
    PipelineOutput {
        detections: frame
            .gt_agents
            .iter()
            .map(|g| {
                let mut class_scores = vec![0.0; crate::model::AgentClass::COUNT];
                class_scores[g.class.index()] = 1.0;
                AgentInstance {
                    anchor: g.anchor,
                    feature: Vec::new(),
                    class_scores,
                    instance_id: g.id,
                }
            })
            .collect(),
        map: Vec::new(),
        agent_futures: frame
            .gt_agents
            .iter()
            .map(|g| {
                one(Trajectory {
                    points: g.future.clone(),
                    score: 1.0,
                })
            })
            .collect(),
        ego_modes: vec![one(plan.clone()); 3],
        command: frame.command,
        ego_plan: plan,
    }
}

fn frame_eval(frame: &Frame, out: &PipelineOutput, previous: Option<(Vec<crate::model::Point2>, Pose2D)>) -> FrameEval {
    let predictions: Vec<DetectionBox> = out
        .detections
        .iter()
        .map(|d| {
            let a = &d.anchor;
            DetectionBox {
                center: a.center_xy(),
                size: [a.w, a.h, a.l],
                yaw: a.yaw(),
                velocity: [a.vx + frame.ego_velocity[0], a.vy + frame.ego_velocity[1]],
                class: d.class(),
                score: d.score(),
            }
        })
        .collect();
    let truths = frame.gt_agents.iter().map(|g| detection_box_gt(frame, g)).collect();
    let motion = MotionFrame {
        predictions: out
            .detections
            .iter()
            .zip(&out.agent_futures)
            .filter(|(d, _)| d.score() >= MOTION_SCORE_THRESHOLD)
            .map(|(d, f)| MotionPrediction {
                center: d.anchor.center_xy(),
                score: d.score(),
                futures: f.clone(),
            })
            .collect(),
        truths: frame
            .gt_agents
            .iter()
            .map(|g| MotionTruth {
                center: g.anchor.center_xy(),
                future: g.future.clone(),
            })
            .collect(),
    };
    FrameEval {
        planning: PlanningRecord {
            plan: out.ego_plan.points.clone(),
            previous,
            gt_future: frame.gt_ego_future.clone(),
            agents: frame.gt_agents.iter().map(AgentBoxes::from_gt).collect(),
        },
        motion,
        detection: DetectionFrame { predictions, truths },
    }
}

fn run_scene(frames: &[Frame], predictor: Predictor) -> Result<Vec<(FrameEval, FrameRow)>, EvalError> {
    let mut state = PlannerState::new();
    let mut prev: Option<(Vec<crate::model::Point2>, Pose2D)> = None;
    let mut out = Vec::with_capacity(frames.len());
    for frame in frames {
        let result = match predictor {
            Predictor::Model { model, radar_enabled } => {
                let (o, next) = run_frame(frame, &state, model, radar_enabled)?;
                state = next;
                o
            }
            Predictor::Oracle => oracle_output(frame),
        };
        let previous = prev.as_ref().map(|(plan, pose)| (plan.clone(), frame.ego_pose.relative_to(pose)));
        let ev = frame_eval(frame, &result, previous);
        let l2 = l2_at_horizons(&ev.planning.plan, &ev.planning.gt_future, &SHORT_HORIZONS)?;
        let t = match &ev.planning.previous {
            Some((p, pose)) => Some(tpc(&ev.planning.plan, p, pose, &SHORT_HORIZONS)?.average),
            None => None,
        };
        let row = FrameRow {
            scene: frame.scene_id,
            frame: frame.index,
            l2_1s: l2.values[0],
            l2_2s: l2.values[1],
            l2_3s: l2.values[2],
            tpc: t,
            collision_3s: first_collision(&ev.planning, EgoFootprint::default()).is_some_and(|k| k <= horizon_index(3.0)),
            confident_detections: ev.motion.predictions.len(),
            ground_truth_agents: frame.gt_agents.len(),
            radar_points: match predictor {
                Predictor::Model { radar_enabled: true, .. } => frame.radar_points.len(),
                _ => 0,
            },
        };
        prev = Some((result.ego_plan.points.clone(), frame.ego_pose));
        out.push((ev, row));
    }
    Ok(out)
}

/// Evaluates every scene (in parallel; merged in scene order).
pub fn evaluate_suite(scenes: &[Vec<Frame>], predictor: Predictor) -> Result<EvalOutput, EvalError> {
    let per_scene: Vec<Vec<(FrameEval, FrameRow)>> = scenes
        .par_iter()
        .map(|frames| run_scene(frames, predictor))
        .collect::<Result<_, _>>()?;
    let mut planning = Vec::new();
    let mut motion = Vec::new();
    let mut detection = Vec::new();
    let mut rows = Vec::new();
    for (ev, row) in per_scene.into_iter().flatten() {
        planning.push(ev.planning);
        motion.push(ev.motion);
        detection.push(ev.detection);
        rows.push(row);
    }
    let ego = EgoFootprint::default();
    let det: DetectionMetrics = detection_map(&detection, &DISTANCE_THRESHOLDS);
    let report = EvalReport {
        scenes: scenes.len(),
        frames: rows.len(),
        planning: PlanningMetrics {
            l2: mean_l2(&planning, &SHORT_HORIZONS)?,
            l2_long: mean_l2(&planning, &LONG_HORIZONS)?,
            collision: collision_rate(&planning, &SHORT_HORIZONS, ego),
            collision_long: collision_rate(&planning, &LONG_HORIZONS, ego),
            tpc: mean_tpc(&planning, &SHORT_HORIZONS)?,
        },
        motion: motion_metrics(&motion)?,
        nds: nds(det.map, det.tp_errors()),
        detection: det,
    };
    Ok(EvalOutput {
        report,
        series: FrameSeries { rows },
    })
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Human-readable summary.
    pub fn to_text(&self) -> String {
        fn hv(v: &HorizonValues, unit: &str) -> String {
            let parts: Vec<String> = v.horizons.iter().zip(&v.values).map(|(h, x)| format!("{h}s {x:.3}{unit}")).collect();
            format!("{} | avg {:.3}{unit}", parts.join("  "), v.average)
        }
        let p = &self.planning;
        let m = &self.motion;
        let d = &self.detection;
        let mut s = String::new();
        let _ = writeln!(s, "scenes {}  frames {}", self.scenes, self.frames);
        let _ = writeln!(s, "planning");
        let _ = writeln!(s, "  L2         {}", hv(&p.l2, " m"));
        let _ = writeln!(s, "  L2 long    {}", hv(&p.l2_long, " m"));
        let _ = writeln!(s, "  collision  {}", hv(&p.collision, " %"));
        let _ = writeln!(s, "  coll. long {}", hv(&p.collision_long, " %"));
        match &p.tpc {
            Some(t) => {
                let _ = writeln!(s, "  TPC        {}", hv(t, " m"));
            }
            None => {
                let _ = writeln!(s, "  TPC        n/a");
            }
        }
        let _ = writeln!(s, "motion");
        let _ = writeln!(
            s,
            "  minADE {:.3} m  minFDE {:.3} m  MR {:.3}  EPA {:.3}  (matched {}, hits {}, FP {}, GT {})",
            m.min_ade, m.min_fde, m.miss_rate, m.epa, m.matched, m.hits, m.false_positives, m.ground_truth
        );
        let _ = writeln!(s, "detection");
        let _ = writeln!(
            s,
            "  mAP {:.4}  mATE {:.3}  mASE {:.3}  mAOE {:.3}  mAVE {:.3}  mAAE {:.3}  (TP {})",
            d.map, d.mate, d.mase, d.maoe, d.mave, d.maae, d.true_positives
        );
        let _ = writeln!(s, "  NDS {:.4}", self.nds);
        s
    }
}

impl FrameSeries {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.rows {
            w.serialize(r).expect("row serializes");
        }
        String::from_utf8(w.into_inner().expect("in-memory writer")).expect("utf-8 csv")
    }
}
