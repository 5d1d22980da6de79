//! Runs the full per-frame pipeline over a scene: detection with temporal
//! memory, map queries, agent motion, and command-conditioned ego plans
//! re-scored against predicted agent futures.
//!
//! cargo run --release --example plan_sequence

use radarfuse::losses::LossConfig;
use radarfuse::model::{Frame, FusionConfig};
use radarfuse::planner::{run_frame, PlannerModel, PlannerState};
use radarfuse::world::{generate_scene, ScenarioConfig};

fn main() {
    let mut cfg = ScenarioConfig::new(3);
    cfg.scene_duration = 4.0;
    let scene = generate_scene(&cfg).unwrap();
    let frames: Vec<&Frame> = scene.frames.iter().collect();
    // Untrained: the outputs have the right shapes, not the right values.
    let model = PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &frames, 0).unwrap();

    let mut state = PlannerState::new();
    for frame in &scene.frames {
        let (out, next) = run_frame(frame, &state, &model, true).unwrap();
        state = next;
        let confident = out.detections.iter().filter(|d| d.score() > 0.5).count();
        let end = out.ego_plan.points.last().unwrap();
        println!(
            "frame {:>2}: {} detections ({confident} confident), {} polylines, {} agent futures, command {:?}, plan ends at ({:+.1}, {:+.1}), memory {} frames",
            frame.index,
            out.detections.len(),
            out.map.len(),
            out.agent_futures.len(),
            out.command,
            end[0],
            end[1],
            state.queue.len()
        );
    }
}
