//! Toy training with Adam. Each step takes the full batch of every frame of
//! a few whole scenes; scenes of a step run in parallel and their gradients
//! are summed in a fixed order, so results do not depend on the thread count.

use std::ops::AddAssign;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Gradients, Tape, Var};
use crate::geometry::resample_polyline;
use crate::losses::{ade, detection_loss_with_grad, focal_loss, focal_loss_grad, map_loss_with_grad, MatchResult};
use crate::model::{argmax, Frame, Point2, ANCHOR_DIM};
use crate::world::derive_seed;

use super::heads::softmax;
use super::params::PlannerModel;
use super::pipeline::{advance_state, decode, forward, Forward, PlannerState};
use super::PlannerError;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossWeights {
    pub detection: f64,
    pub map: f64,
    pub motion: f64,
    pub planning: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            detection: 1.0,
            map: 0.5,
            motion: 0.5,
            planning: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub radar_enabled: bool,
    pub weights: LossWeights,
    /// Whole scenes per optimizer step; every frame of a scene is in the batch.
    pub scenes_per_step: usize,
    /// Seeds the scene order of every epoch.
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 20,
            learning_rate: 3e-3,
            radar_enabled: true,
            weights: LossWeights::default(),
            scenes_per_step: 2,
            seed: 0,
        }
    }
}

/// Weighted loss terms, summed or averaged over frames.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub detection: f64,
    pub map: f64,
    pub motion: f64,
    pub planning: f64,
    pub total: f64,
}

impl AddAssign for LossBreakdown {
    fn add_assign(&mut self, o: Self) {
        self.detection += o.detection;
        self.map += o.map;
        self.motion += o.motion;
        self.planning += o.planning;
        self.total += o.total;
    }
}

impl LossBreakdown {
    fn scaled(self, s: f64) -> Self {
        LossBreakdown {
            detection: self.detection * s,
            map: self.map * s,
            motion: self.motion * s,
            planning: self.planning * s,
            total: self.total * s,
        }
    }

    pub fn is_finite(&self) -> bool {
        [self.detection, self.map, self.motion, self.planning, self.total].iter().all(|v| v.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: LossBreakdown,
}

/// Loss of a multi-modal prediction: L1 on the mode closest (ADE) to the
/// ground truth plus focal loss on the mode distribution. Returns the loss
/// and gradients with respect to the mode points and logits.
struct ModeLoss {
    loss: f64,
    points: Vec<f64>,
    logits: Vec<f64>,
}

fn mode_loss(points: &[f64], logits: &[f64], gt: &[Point2], horizon: usize, gamma: f64, focal_weight: f64) -> Result<ModeLoss, PlannerError> {
    let modes = logits.len();
    let traj = |m: usize| -> Vec<Point2> {
        (0..horizon)
            .map(|t| [points[(m * horizon + t) * 2], points[(m * horizon + t) * 2 + 1]])
            .collect()
    };
    let ades: Vec<f64> = (0..modes).map(|m| ade(&traj(m), gt).map(|v| -v)).collect::<Result<_, _>>()?;
    let pos = argmax(&ades).expect("at least one mode");
    let mut gpoints = vec![0.0; points.len()];
    let norm = 1.0 / (2 * horizon) as f64;
    let mut l1 = 0.0;
    for t in 0..horizon {
        for c in 0..2 {
            let k = (pos * horizon + t) * 2 + c;
            let d = points[k] - gt[t][c];
            l1 += d.abs() * norm;
            gpoints[k] = d.signum() * norm * (d != 0.0) as u8 as f64;
        }
    }
    let probs = softmax(logits);
    let focal = focal_loss(&probs, pos, gamma, focal_weight)?;
    let gp = focal_loss_grad(&probs, pos, gamma, focal_weight)?;
    let dot: f64 = gp.iter().zip(&probs).map(|(g, p)| g * p).sum();
    let glogits = probs.iter().zip(&gp).map(|(p, g)| p * (g - dot)).collect();
    Ok(ModeLoss {
        loss: l1 + focal,
        points: gpoints,
        logits: glogits,
    })
}

/// Loss of one decoded frame and the seeds that backpropagate it.
pub fn frame_loss(tape: &Tape, fwd: &Forward, frame: &Frame, model: &PlannerModel, w: &LossWeights) -> Result<(LossBreakdown, Vec<(Var, Array2<f64>)>), PlannerError> {
    let lc = &model.loss;
    let mut seeds = Vec::new();
    let mut out = LossBreakdown::default();

    let gt_classes: Vec<usize> = frame.gt_agents.iter().map(|g| g.class.index()).collect();
    let gt_boxes: Vec<[f64; ANCHOR_DIM]> = frame.gt_agents.iter().map(|g| g.anchor.encode()).collect();
    let map_classes: Vec<usize> = frame.gt_map.iter().map(|g| g.class.index()).collect();
    let map_points = frame
        .gt_map
        .iter()
        .map(|g| resample_polyline(&g.waypoints, model.cfg.map_waypoints))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| PlannerError::InvalidInput(e.to_string()))?;

    let mut last_match: Option<MatchResult> = None;
    for layer in &fwd.layers {
        let det = detection_loss_with_grad(tape.value(layer.agent_logits), tape.value(layer.agent_boxes), &gt_classes, &gt_boxes, lc)?;
        out.detection += w.detection * det.loss.total;
        seeds.push((layer.agent_logits, det.logits * w.detection));
        seeds.push((layer.agent_boxes, det.values * w.detection));
        last_match = Some(det.loss.matching);

        let map = map_loss_with_grad(tape.value(layer.map_logits), tape.value(layer.map_points), &map_classes, &map_points, lc)?;
        out.map += w.map * map.loss.total;
        seeds.push((layer.map_logits, map.logits * w.map));
        seeds.push((layer.map_points, map.values * w.map));
    }

    // Motion on the final layer's matches.
    if let Some(matching) = last_match.filter(|m| !m.pairs.is_empty()) {
        let head = &model.heads.motion;
        let mp = tape.value(fwd.motion_points);
        let ml = tape.value(fwd.motion_logits);
        let mut gp = Array2::zeros(mp.raw_dim());
        let mut gl = Array2::zeros(ml.raw_dim());
        let s = w.motion / matching.pairs.len() as f64;
        for &(i, j) in &matching.pairs {
            let m = mode_loss(&mp.row(i).to_vec(), &ml.row(i).to_vec(), &frame.gt_agents[j].future, head.horizon, lc.gamma, lc.focal_weight)?;
            out.motion += s * m.loss;
            for (k, g) in m.points.iter().enumerate() {
                gp[[i, k]] = s * g;
            }
            for (k, g) in m.logits.iter().enumerate() {
                gl[[i, k]] = s * g;
            }
        }
        seeds.push((fwd.motion_points, gp));
        seeds.push((fwd.motion_logits, gl));
    }

    // Planning on the commanded group of ego modes.
    let head = &model.heads.plan;
    let per = model.cfg.ego_modes_per_command;
    let h = head.horizon;
    let c = frame.command.index();
    let pts = tape.value(fwd.plan_points).row(0).to_vec();
    let lg = tape.value(fwd.plan_logits).row(0).to_vec();
    let span = c * per * h * 2..(c + 1) * per * h * 2;
    let m = mode_loss(&pts[span.clone()], &lg[c * per..(c + 1) * per], &frame.gt_ego_future, h, lc.gamma, lc.focal_weight)?;
    out.planning += w.planning * m.loss;
    let mut gp = Array2::zeros((1, pts.len()));
    for (k, g) in span.zip(&m.points) {
        gp[[0, k]] = w.planning * g;
    }
    let mut gl = Array2::zeros((1, lg.len()));
    for (k, g) in m.logits.iter().enumerate() {
        gl[[0, c * per + k]] = w.planning * g;
    }
    seeds.push((fwd.plan_points, gp));
    seeds.push((fwd.plan_logits, gl));

    out.total = out.detection + out.map + out.motion + out.planning;
    Ok((out, seeds))
}

/// Summed loss and gradients over one scene, frames in order with the
/// streaming state produced by the current parameters.
pub fn scene_gradients(model: &PlannerModel, frames: &[Frame], radar_enabled: bool, w: &LossWeights) -> Result<(LossBreakdown, Gradients), PlannerError> {
    let mut state = PlannerState::new();
    let mut total = LossBreakdown::default();
    let mut grads = Gradients::zeros(model.store.len());
    for frame in frames {
        let mut tape = Tape::new(&model.store);
        let fwd = forward(&mut tape, model, frame, &state, radar_enabled)?;
        let (loss, seeds) = frame_loss(&tape, &fwd, frame, model, w)?;
        grads.accumulate(&tape.backward(&seeds));
        total += loss;
        let out = decode(&tape, &fwd, model, frame.command)?;
        state = advance_state(&state, &out, fwd.fresh_ids, frame, model);
    }
    Ok((total, grads))
}

/// Mean per-frame loss and gradient over the given scenes.
pub fn batch_gradients(model: &PlannerModel, scenes: &[&[Frame]], radar_enabled: bool, w: &LossWeights) -> Result<(LossBreakdown, Gradients, usize), PlannerError> {
    let parts: Vec<(LossBreakdown, Gradients)> = scenes
        .par_iter()
        .map(|frames| scene_gradients(model, frames, radar_enabled, w))
        .collect::<Result<_, _>>()?;
    let frames: usize = scenes.iter().map(|s| s.len()).sum();
    if frames == 0 {
        return Err(PlannerError::InvalidInput("no training frames".into()));
    }
    let mut loss = LossBreakdown::default();
    let mut grads = Gradients::zeros(model.store.len());
    for (l, g) in parts {
        loss += l;
        grads.accumulate(&g);
    }
    let s = 1.0 / frames as f64;
    grads.scale(s);
    Ok((loss.scaled(s), grads, frames))
}

/// Mean per-frame loss over all scenes without computing gradients.
pub fn evaluate_loss(model: &PlannerModel, scenes: &[Vec<Frame>], radar_enabled: bool, w: &LossWeights) -> Result<LossBreakdown, PlannerError> {
    let parts: Vec<LossBreakdown> = scenes
        .par_iter()
        .map(|frames| {
            let mut state = PlannerState::new();
            let mut total = LossBreakdown::default();
            for frame in frames {
                let mut tape = Tape::new(&model.store);
                let fwd = forward(&mut tape, model, frame, &state, radar_enabled)?;
                total += frame_loss(&tape, &fwd, frame, model, w)?.0;
                let out = decode(&tape, &fwd, model, frame.command)?;
                state = advance_state(&state, &out, fwd.fresh_ids, frame, model);
            }
            Ok(total)
        })
        .collect::<Result<_, PlannerError>>()?;
    let frames: usize = scenes.iter().map(Vec::len).sum();
    if frames == 0 {
        return Err(PlannerError::InvalidInput("no training frames".into()));
    }
    let mut loss = LossBreakdown::default();
    for l in parts {
        loss += l;
    }
    Ok(loss.scaled(1.0 / frames as f64))
}

/// Trains in place. Record 0 is the loss of the initial parameters over the
/// whole training set; record `e ≥ 1` is the frame-weighted mean of the
/// batch losses seen during epoch `e`.
pub fn train(
    model: &mut PlannerModel,
    scenes: &[Vec<Frame>],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<Vec<EpochRecord>, PlannerError> {
    if cfg.scenes_per_step == 0 {
        return Err(PlannerError::InvalidInput("scenes_per_step must be positive".into()));
    }
    let initial = evaluate_loss(model, scenes, cfg.radar_enabled, &cfg.weights)?;
    if !initial.is_finite() {
        return Err(PlannerError::Diverged {
            epoch: 0,
            detail: format!("{initial:?}"),
        });
    }
    let first = EpochRecord { epoch: 0, loss: initial };
    on_epoch(&first);
    let mut records = vec![first];
    let mut adam = Adam::new(&model.store, cfg.learning_rate);
    for epoch in 1..=cfg.epochs {
        let mut order: Vec<usize> = (0..scenes.len()).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, &[epoch as u64])));
        let mut sum = LossBreakdown::default();
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.scenes_per_step) {
            let batch: Vec<&[Frame]> = chunk.iter().map(|&i| scenes[i].as_slice()).collect();
            let (loss, grads, frames) = batch_gradients(model, &batch, cfg.radar_enabled, &cfg.weights)?;
            if !loss.is_finite() || !grads.is_finite() {
                return Err(PlannerError::Diverged {
                    epoch,
                    detail: format!("{loss:?}"),
                });
            }
            adam.step(&mut model.store, &grads);
            sum += loss.scaled(frames as f64);
            seen += frames;
        }
        let rec = EpochRecord {
            epoch,
            loss: sum.scaled(1.0 / seen.max(1) as f64),
        };
        on_epoch(&rec);
        records.push(rec);
    }
    Ok(records)
}
