//! The radar sensor model: Doppler as relative radial velocity, ego-motion
//! compensation, and multi-sweep accumulation into the current ego frame.
//!
//! cargo run --example radar_sweeps

use radarfuse::world::{compensate_doppler, doppler_radial_velocity, generate_scene, ScenarioConfig};

fn main() {
    // A target 20 m ahead, moving away at 3 m/s, while ego drives at 10 m/s.
    let (target, target_vel, ego_vel, sensor) = ([20.0, 0.0, 0.5], [3.0, 0.0, 0.0], [10.0, 0.0, 0.0], [0.0; 3]);
    let raw = doppler_radial_velocity(target, target_vel, ego_vel, sensor).unwrap();
    let over_ground = compensate_doppler(raw, target, ego_vel, sensor).unwrap();
    println!("raw Doppler {raw:+.2} m/s, compensated {over_ground:+.2} m/s");
    let wall = doppler_radial_velocity([20.0, 5.0, 0.5], [0.0; 3], ego_vel, sensor).unwrap();
    println!(
        "static wall: raw {wall:+.2} m/s, compensated {:+.2} m/s",
        compensate_doppler(wall, [20.0, 5.0, 0.5], ego_vel, sensor).unwrap()
    );

    let mut cfg = ScenarioConfig::new(7);
    cfg.scene_duration = 2.0;
    let scene = generate_scene(&cfg).unwrap();
    let frame = &scene.frames.last().unwrap();
    println!(
        "\nframe {} at t = {:.1} s: {} returns from {} sweeps, ego speed {:.1} m/s",
        frame.index,
        frame.timestamp,
        frame.radar_points.len(),
        cfg.radar.num_sweeps,
        frame.ego_velocity[0].hypot(frame.ego_velocity[1])
    );
    let mut by_age = std::collections::BTreeMap::new();
    for p in &frame.radar_points {
        *by_age.entry(format!("{:.3}", p.sweep_offset)).or_insert(0usize) += 1;
    }
    for (age, n) in by_age {
        println!("  sweep age {age} s: {n} points");
    }
    let moving = frame.radar_points.iter().filter(|p| p.doppler > -0.5 * frame.ego_velocity[0]).count();
    println!("  {moving} returns are not explained by ego motion alone");
}
