//! Procedural scene generation from a TOML scenario, with frame validation.
//!
//! cargo run --example generate_scenes [path/to/scenario.toml]

use radarfuse::model::validate_frame;
use radarfuse::world::{generate_suite, ScenarioConfig};

fn main() {
    let path = std::env::args()
        .nth(1)
        .unwrap_or_else(|| concat!(env!("CARGO_MANIFEST_DIR"), "/examples/scenario.toml").to_string());
    let cfg = ScenarioConfig::load(std::path::Path::new(&path)).unwrap_or_else(|e| {
        eprintln!("{e}");
        std::process::exit(2);
    });
    let scenes = generate_suite(&cfg).unwrap();
    println!("{} scenes × {} frames from {path}", scenes.len(), cfg.num_frames());
    for s in &scenes {
        let f = &s.frames[0];
        let bad: usize = s.frames.iter().map(|f| validate_frame(f).len()).sum();
        println!(
            "scene {}: {} agents, {} polylines, {} radar points, command {:?}, {} violations",
            s.id,
            f.gt_agents.len(),
            f.gt_map.len(),
            f.radar_points.len(),
            f.command,
            bad
        );
    }
}
