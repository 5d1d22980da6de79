//! End-to-end pipeline contracts on generated scenes.

use radarfuse::losses::LossConfig;
use radarfuse::model::{Frame, FusionConfig};
use radarfuse::planner::{run_frame, run_sequence, PlannerModel, PlannerState};
use radarfuse::world::{generate_scene, ScenarioConfig};

fn scene(seed: u64, seconds: f64) -> Vec<Frame> {
    let mut cfg = ScenarioConfig::new(seed);
    cfg.scene_duration = seconds;
    generate_scene(&cfg).unwrap().frames
}

fn toy(frames: &[Frame], seed: u64) -> PlannerModel {
    let refs: Vec<&Frame> = frames.iter().collect();
    PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &refs, seed).unwrap()
}

#[test]
fn default_preset_output_shapes() {
    let frames = scene(1, 1.0);
    let refs: Vec<&Frame> = frames.iter().collect();
    let cfg = FusionConfig::default();
    let model = PlannerModel::init(&cfg, &LossConfig::default(), &refs, 0).unwrap();
    let (out, state) = run_frame(&frames[0], &PlannerState::new(), &model, true).unwrap();
    assert!(out.detections.len() <= 900);
    assert!(out.map.len() <= 100);
    assert_eq!(out.agent_futures.len(), out.detections.len());
    assert!(out.agent_futures.iter().all(|f| f.modes.len() == cfg.agent_modes && f.modes.iter().all(|m| m.points.len() == 24)));
    assert_eq!(out.ego_modes.len(), 3);
    assert!(out.ego_modes.iter().all(|s| s.modes.len() == 6 && s.modes.iter().all(|m| m.points.len() == 12)));
    assert_eq!(out.ego_plan.points.len(), 12);
    assert!(out.detections.iter().all(|d| d.class_scores.iter().all(|s| (0.0..=1.0).contains(s))));
    assert_eq!(state.queue.len(), 1);
}

#[test]
fn radar_off_equals_no_radar_points() {
    let frames = scene(2, 3.0);
    let model = toy(&frames, 4);
    let stripped: Vec<Frame> = frames
        .iter()
        .map(|f| Frame {
            radar_points: Vec::new(),
            ..f.clone()
        })
        .collect();
    let off = run_sequence(&frames, &model, false).unwrap();
    let empty = run_sequence(&stripped, &model, true).unwrap();
    assert_eq!(off, empty);
    let on = run_sequence(&frames, &model, true).unwrap();
    assert_ne!(on, off, "radar should change the outputs");
}

#[test]
fn run_frame_is_pure() {
    let frames = scene(3, 2.0);
    let model = toy(&frames, 1);
    let mut state = PlannerState::new();
    for f in &frames {
        let a = run_frame(f, &state, &model, true).unwrap();
        let b = run_frame(f, &state, &model, true).unwrap();
        assert_eq!(a, b);
        state = a.1;
    }
}

#[test]
fn memory_queue_is_bounded_and_evicts_oldest() {
    let frames = scene(5, 4.0);
    let model = toy(&frames, 2);
    let mut state = PlannerState::new();
    for (k, f) in frames.iter().enumerate() {
        state = run_frame(f, &state, &model, true).unwrap().1;
        assert_eq!(state.queue.len(), (k + 1).min(3));
        let newest = state.queue.back().unwrap();
        assert_eq!(newest.ego_pose, f.ego_pose);
        if k >= 2 {
            assert_eq!(state.queue.front().unwrap().ego_pose, frames[k - 2].ego_pose);
        }
    }
}
