//! One frame of the end-to-end pipeline: encode radar, fuse into the camera
//! cells, pool the ego query, decode agents and polylines, predict motion
//! and plans, re-score, and update the instance memory.

use std::collections::VecDeque;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Var};
use crate::fusion::aggregate::{euclidean3, nearest_keys, residual_attention};
use crate::fusion::attention::AttentionSpec;
use crate::fusion::decoder::{decoder_layer_tape, AgentQueries, LayerOutput, MapQueries};
use crate::fusion::encoder::encode_radar_tape;
use crate::fusion::frustum::{camera_context, ego_query_init_tape, frustum_cross_attention_tape};
use crate::losses::sigmoid;
use crate::model::{
    AgentInstance, Anchor, DrivingCommand, Frame, MapPolyline, Pose2D, Trajectory, TrajectorySet,
};
use crate::world::EGO_SIZE;

use super::heads::trajectories_from_row;
use super::params::PlannerModel;
use super::rescore::{rescore_trajectories, select_plan, RescoreParams};
use super::PlannerError;

/// A detection remembered for later frames, in the ego frame it was seen in.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryInstance {
    pub anchor: Anchor,
    pub feature: Vec<f64>,
    pub score: f64,
    pub instance_id: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MemoryFrame {
    pub ego_pose: Pose2D,
    pub instances: Vec<MemoryInstance>,
}

/// Streaming state carried between frames of one scene.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PlannerState {
    /// Oldest first.
    pub queue: VecDeque<MemoryFrame>,
    /// Previous frame's selected plan and the ego pose it was made at.
    pub previous_plan: Option<(Pose2D, Trajectory)>,
    pub next_instance_id: u64,
}

impl PlannerState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a frame, evicting the oldest beyond `capacity`.
    pub fn remember(&mut self, frame: MemoryFrame, capacity: usize) {
        self.queue.push_back(frame);
        while self.queue.len() > capacity {
            self.queue.pop_front();
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PipelineOutput {
    pub detections: Vec<AgentInstance>,
    pub map: Vec<MapPolyline>,
    /// One set per detection, in detection order.
    pub agent_futures: Vec<TrajectorySet>,
    /// Re-scored ego modes per command, indexed by [`DrivingCommand::index`].
    pub ego_modes: Vec<TrajectorySet>,
    pub command: DrivingCommand,
    pub ego_plan: Trajectory,
}

/// Everything the pipeline puts on a tape for one frame.
pub struct Forward {
    pub layers: Vec<LayerOutput>,
    pub agents: AgentQueries,
    pub maps: MapQueries,
    pub instance_ids: Vec<u64>,
    pub fresh_ids: u64,
    pub motion_points: Var,
    pub motion_logits: Var,
    pub plan_points: Var,
    pub plan_logits: Var,
}

pub fn ego_anchor() -> Anchor {
    Anchor::from_pose([0.0, 0.0, 0.5 * EGO_SIZE[1]], EGO_SIZE, 0.0, [0.0; 3])
}

/// Initial agent queries: remembered instances from the latest memory frame
/// (pose-compensated into the current frame) replace the leading anchors.
fn initial_agents(tape: &mut Tape, model: &PlannerModel, frame: &Frame, state: &PlannerState) -> (AgentQueries, Vec<u64>, u64) {
    let n = model.cfg.num_agent_anchors;
    let c = model.cfg.embed_dim;
    let mut anchors = model.agent_anchors.clone();
    let mut features = Array2::zeros((n, c));
    let mut ids = Vec::with_capacity(n);
    if let Some(mem) = state.queue.back() {
        let rel = frame.ego_pose.relative_to(&mem.ego_pose);
        for (slot, inst) in mem.instances.iter().take(model.cfg.num_temporal.min(n)).enumerate() {
            anchors[slot] = inst.anchor.transformed(&rel);
            for (j, &v) in inst.feature.iter().enumerate().take(c) {
                features[[slot, j]] = v;
            }
            ids.push(inst.instance_id);
        }
    }
    let fresh = (n - ids.len()) as u64;
    ids.extend((0..fresh).map(|k| state.next_instance_id + k));
    let features = tape.constant(features);
    (AgentQueries { features, anchors }, ids, fresh)
}

/// Builds the whole frame on `tape`. With `radar_enabled = false` the radar
/// points are ignored, which is the same computation as an empty sweep.
pub fn forward(tape: &mut Tape, model: &PlannerModel, frame: &Frame, state: &PlannerState, radar_enabled: bool) -> Result<Forward, PlannerError> {
    let cfg = &model.cfg;
    let net = &model.net;
    let points = if radar_enabled { &frame.radar_points[..] } else { &[] };
    let radar = encode_radar_tape(tape, net, points, cfg.r_max)?;
    let camera = camera_context(tape, net, &frame.cameras)?;
    let camera = frustum_cross_attention_tape(tape, net, camera, radar.as_ref(), cfg);
    let pooled = ego_query_init_tape(tape, &camera)?;
    let mut ego = net.ego_init.apply(tape, pooled);

    let (mut agents, instance_ids, fresh_ids) = initial_agents(tape, model, frame, state);
    let mut maps = MapQueries {
        features: tape.constant(Array2::zeros((cfg.num_map_anchors, cfg.embed_dim))),
        polylines: model.map_anchors.clone(),
    };
    let mut layers = Vec::with_capacity(net.layers.len());
    for layer in &net.layers {
        let (a, e, m, out) = decoder_layer_tape(tape, layer, net, agents, Some((ego, ego_anchor())), maps, radar.as_ref(), &camera, cfg);
        agents = a;
        ego = e.expect("ego query passes through every layer");
        maps = m;
        layers.push(out);
    }

    // Ego-agent interaction over the nearest refined agents.
    let centers: Vec<_> = agents.anchors.iter().map(|a| a.center()).collect();
    let origin = ego_anchor().center();
    let nb = vec![nearest_keys(&centers, cfg.topk_radar, cfg.r_max, |p| euclidean3(origin, *p))];
    let spec = AttentionSpec {
        alpha: cfg.alpha,
        r_max: cfg.r_max,
        heads: cfg.num_heads,
    };
    let ego = residual_attention(tape, ego, None, agents.features, nb, spec, Some(&model.heads.ego_interaction));

    let origins: Vec<_> = agents.anchors.iter().map(|a| a.center_xy()).collect();
    let (motion_points, motion_logits) = model.heads.motion.apply(tape, agents.features, &origins);
    let (plan_points, plan_logits) = model.heads.plan.apply(tape, ego, &[[0.0, 0.0]]);

    Ok(Forward {
        layers,
        agents,
        maps,
        instance_ids,
        fresh_ids,
        motion_points,
        motion_logits,
        plan_points,
        plan_logits,
    })
}

/// Per-command ego mode sets before re-scoring.
pub fn ego_mode_sets(tape: &Tape, fwd: &Forward, model: &PlannerModel) -> Vec<TrajectorySet> {
    let per = model.cfg.ego_modes_per_command;
    let h = model.heads.plan.horizon;
    let points = tape.value(fwd.plan_points).row(0).to_vec();
    let logits = tape.value(fwd.plan_logits).row(0).to_vec();
    DrivingCommand::ALL
        .iter()
        .map(|cmd| {
            let c = cmd.index();
            trajectories_from_row(&points[c * per * h * 2..(c + 1) * per * h * 2], &logits[c * per..(c + 1) * per], per, h)
        })
        .collect()
}

/// Reads the tape into plain outputs.
pub fn decode(tape: &Tape, fwd: &Forward, model: &PlannerModel, command: DrivingCommand) -> Result<PipelineOutput, PlannerError> {
    let last = fwd.layers.last().ok_or_else(|| PlannerError::InvalidConfig("no decoder layers".into()))?;
    let agent_features = tape.value(fwd.agents.features);
    let agent_logits = tape.value(last.agent_logits);
    let detections: Vec<AgentInstance> = fwd
        .agents
        .anchors
        .iter()
        .enumerate()
        .map(|(i, a)| AgentInstance {
            anchor: *a,
            feature: agent_features.row(i).to_vec(),
            class_scores: agent_logits.row(i).iter().map(|&l| sigmoid(l)).collect(),
            instance_id: fwd.instance_ids[i],
        })
        .collect();
    let map_features = tape.value(fwd.maps.features);
    let map_logits = tape.value(last.map_logits);
    let map = fwd
        .maps
        .polylines
        .iter()
        .enumerate()
        .map(|(i, wp)| MapPolyline {
            waypoints: wp.clone(),
            feature: map_features.row(i).to_vec(),
            class_scores: map_logits.row(i).iter().map(|&l| sigmoid(l)).collect(),
        })
        .collect();

    let head = &model.heads.motion;
    let mp = tape.value(fwd.motion_points);
    let ml = tape.value(fwd.motion_logits);
    let agent_futures: Vec<TrajectorySet> = (0..detections.len())
        .map(|i| trajectories_from_row(&mp.row(i).to_vec(), &ml.row(i).to_vec(), head.modes, head.horizon))
        .collect();

    let confident: Vec<TrajectorySet> = detections
        .iter()
        .zip(&agent_futures)
        .filter(|(d, _)| d.score() >= model.cfg.rescore_threshold)
        .map(|(_, f)| f.clone())
        .collect();
    let params = RescoreParams {
        lambda: model.cfg.rescore_lambda,
        safe_radius: model.cfg.rescore_safe_radius,
    };
    let ego_modes: Vec<TrajectorySet> = ego_mode_sets(tape, fwd, model)
        .iter()
        .map(|set| rescore_trajectories(set, &confident, params))
        .collect();
    let ego_plan = select_plan(&ego_modes, command)?;
    Ok(PipelineOutput {
        detections,
        map,
        agent_futures,
        ego_modes,
        command,
        ego_plan,
    })
}

/// Memory and previous-plan update after a frame.
pub fn advance_state(state: &PlannerState, out: &PipelineOutput, fresh_ids: u64, frame: &Frame, model: &PlannerModel) -> PlannerState {
    let mut order: Vec<usize> = (0..out.detections.len()).collect();
    order.sort_by(|&a, &b| out.detections[b].score().total_cmp(&out.detections[a].score()).then(a.cmp(&b)));
    let instances = order
        .into_iter()
        .take(model.cfg.num_temporal)
        .map(|i| {
            let d = &out.detections[i];
            MemoryInstance {
                anchor: d.anchor,
                feature: d.feature.clone(),
                score: d.score(),
                instance_id: d.instance_id,
            }
        })
        .collect();
    let mut next = state.clone();
    next.remember(
        MemoryFrame {
            ego_pose: frame.ego_pose,
            instances,
        },
        model.cfg.memory_frames,
    );
    next.previous_plan = Some((frame.ego_pose, out.ego_plan.clone()));
    next.next_instance_id = state.next_instance_id + fresh_ids;
    next
}

/// Runs one frame. A pure function of its inputs.
pub fn run_frame(frame: &Frame, state: &PlannerState, model: &PlannerModel, radar_enabled: bool) -> Result<(PipelineOutput, PlannerState), PlannerError> {
    let mut tape = Tape::new(&model.store);
    let fwd = forward(&mut tape, model, frame, state, radar_enabled)?;
    let out = decode(&tape, &fwd, model, frame.command)?;
    let next = advance_state(state, &out, fwd.fresh_ids, frame, model);
    Ok((out, next))
}

/// Runs every frame of a sequence in order from an empty state.
pub fn run_sequence(frames: &[Frame], model: &PlannerModel, radar_enabled: bool) -> Result<Vec<PipelineOutput>, PlannerError> {
    let mut state = PlannerState::new();
    let mut outs = Vec::with_capacity(frames.len());
    for f in frames {
        let (out, next) = run_frame(f, &state, model, radar_enabled)?;
        outs.push(out);
        state = next;
    }
    Ok(outs)
}
