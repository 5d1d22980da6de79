//! Trains the toy planner on a handful of scenes and saves its parameters.
//!
//! cargo run --release --example train_toy [epochs] [out.json]

use radarfuse::losses::LossConfig;
use radarfuse::model::{Frame, FusionConfig};
use radarfuse::planner::{train, PlannerModel, TrainConfig};
use radarfuse::world::{generate_suite, ScenarioConfig};

fn main() {
    let epochs = std::env::args().nth(1).map_or(5, |s| s.parse().expect("epochs"));
    let out = std::env::args().nth(2);
    let mut cfg = ScenarioConfig::new(1);
    cfg.scenes = 6;
    let scenes: Vec<Vec<Frame>> = generate_suite(&cfg).unwrap().into_iter().map(|s| s.frames).collect();
    let frames: Vec<&Frame> = scenes.iter().flatten().collect();

    let mut model = PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &frames, 0).unwrap();
    println!("{} parameters, {} training frames", model.parameter_count(), frames.len());
    let tc = TrainConfig {
        epochs,
        ..TrainConfig::default()
    };
    train(&mut model, &scenes, &tc, |r| {
        let l = &r.loss;
        println!(
            "epoch {:>2}: total {:7.3}  detection {:6.3}  map {:6.3}  motion {:6.3}  planning {:6.3}",
            r.epoch, l.total, l.detection, l.map, l.motion, l.planning
        );
    })
    .unwrap();
    println!("parameter hash {}", model.content_hash());
    if let Some(path) = out {
        model.save(std::path::Path::new(&path)).unwrap();
        println!("saved {path}");
    }
}
