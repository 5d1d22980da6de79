//! Radar on/off ablation: trains the toy planner with and without radar on
//! the same scenes and seed, then compares held-out velocity error and
//! temporal planning consistency. Both suites are dense, mostly moving
//! junction traffic, where Doppler is informative. About four minutes on
//! one core at the default 30 epochs.
//!
//! cargo run --release --example radar_ablation [epochs] [seed]

use radarfuse::eval::{evaluate_suite, Predictor};
use radarfuse::losses::LossConfig;
use radarfuse::model::{Frame, FusionConfig};
use radarfuse::planner::{train, PlannerModel, TrainConfig};
use radarfuse::world::{generate_suite, MapTemplate, ScenarioConfig};

fn suite(seed: u64, n: usize) -> Vec<Vec<Frame>> {
    let mut cfg = ScenarioConfig::new(seed);
    cfg.scenes = n;
    cfg.num_agents = 14;
    cfg.parked_fraction = 0.1;
    cfg.map_template = MapTemplate::TJunction;
    generate_suite(&cfg).unwrap().into_iter().map(|s| s.frames).collect()
}

fn main() {
    let epochs = std::env::args().nth(1).map_or(30, |s| s.parse().expect("epochs"));
    let seed = std::env::args().nth(2).map_or(0, |s| s.parse().expect("seed"));
    let training = suite(1, 20);
    let held_out = suite(1000, 20);
    let frames: Vec<&Frame> = training.iter().flatten().collect();
    for radar in [true, false] {
        let mut model = PlannerModel::init(&FusionConfig::toy(), &LossConfig::default(), &frames, seed).unwrap();
        let tc = TrainConfig {
            epochs,
            radar_enabled: radar,
            seed,
            ..TrainConfig::default()
        };
        let log = train(&mut model, &training, &tc, |_| {}).unwrap();
        let r = evaluate_suite(&held_out, Predictor::Model { model: &model, radar_enabled: radar })
            .unwrap()
            .report;
        println!(
            "radar {:<3}  train loss {:6.2} -> {:6.2}  mAVE {:.3}  TPC {:.3}  L2 {:.3}  NDS {:.3}",
            if radar { "on" } else { "off" },
            log[0].loss.total,
            log.last().unwrap().loss.total,
            r.detection.mave,
            r.planning.tpc.map_or(f64::NAN, |t| t.average),
            r.planning.l2.average,
            r.nds
        );
    }
}
