//! Radar sensor model: Doppler, sampling on visible surfaces, occlusion,
//! noise, dropout and multi-sweep accumulation.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::geometry::{segment_hits_box, OrientedBox2D};
use crate::model::{wrap_angle, AgentClass, Point2, Point3, Pose2D, RadarPoint};

use super::config::{RadarSensorConfig, WeatherConfig};
use super::WorldError;

/// Relative radial velocity `(v_point − v_ego) · û`, positive when receding.
pub fn doppler_radial_velocity(
    point_pos: Point3,
    point_vel: Point3,
    ego_vel: Point3,
    sensor_pos: Point3,
) -> Result<f64, WorldError> {
    let u = unit(point_pos, sensor_pos)?;
    Ok((0..3).map(|i| (point_vel[i] - ego_vel[i]) * u[i]).sum())
}

/// Removes the ego contribution from a raw Doppler reading, leaving the
/// target's own radial velocity over ground.
pub fn compensate_doppler(raw: f64, point_pos: Point3, ego_vel: Point3, sensor_pos: Point3) -> Result<f64, WorldError> {
    let u = unit(point_pos, sensor_pos)?;
    Ok(raw + (0..3).map(|i| ego_vel[i] * u[i]).sum::<f64>())
}

fn unit(p: Point3, s: Point3) -> Result<Point3, WorldError> {
    let d = [p[0] - s[0], p[1] - s[1], p[2] - s[2]];
    let n = (d[0] * d[0] + d[1] * d[1] + d[2] * d[2]).sqrt();
    if n < 1e-9 {
        return Err(WorldError::CoincidentPoint);
    }
    Ok([d[0] / n, d[1] / n, d[2] / n])
}

/// Nominal radar cross section per class.
pub fn class_rcs(class: AgentClass) -> f64 {
    match class {
        AgentClass::Car => 10.0,
        AgentClass::Truck => 20.0,
        AgentClass::Cyclist => 2.0,
    }
}

pub const STATIC_RCS: f64 = 5.0;

/// A moving rigid box seen by the sensor, in world coordinates.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RadarTarget {
    pub footprint: OrientedBox2D,
    pub velocity: Point2,
    pub class: AgentClass,
}

/// Everything one sweep observes.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepScene<'a> {
    /// World pose of the ego vehicle at sweep time.
    pub ego_pose: Pose2D,
    /// World-frame ego velocity.
    pub ego_velocity: Point2,
    pub targets: &'a [RadarTarget],
    /// Road-side structure (world frame) that returns static echoes.
    pub static_lines: &'a [Vec<Point2>],
}

/// World position and heading of the sensor.
pub fn sensor_pose(ego_pose: &Pose2D, sensor: &RadarSensorConfig) -> Pose2D {
    ego_pose.compose(&Pose2D::new(sensor.mount[0], sensor.mount[1], sensor.mount[2]))
}

/// Points on the edges of `bx` that face `from`, stratified by length.
pub fn facing_edge_samples<R: Rng>(bx: &OrientedBox2D, from: Point2, count: usize, rng: &mut R) -> Vec<Point2> {
    let c = bx.corners();
    let mut edges = Vec::new();
    for k in 0..4 {
        let (a, b) = (c[k], c[(k + 1) % 4]);
        let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
        let normal = [mid[0] - bx.center[0], mid[1] - bx.center[1]];
        let to_sensor = [from[0] - mid[0], from[1] - mid[1]];
        if normal[0] * to_sensor[0] + normal[1] * to_sensor[1] > 0.0 {
            edges.push((a, b, (b[0] - a[0]).hypot(b[1] - a[1])));
        }
    }
    let total: f64 = edges.iter().map(|e| e.2).sum();
    if total <= 0.0 {
        return Vec::new();
    }
    (0..count)
        .map(|i| {
            let mut s = total * (i as f64 + rng.random::<f64>()) / count as f64;
            for &(a, b, len) in &edges {
                if s <= len {
                    let t = s / len;
                    return [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
                }
                s -= len;
            }
            let (_, b, _) = edges[edges.len() - 1];
            b
        })
        .collect()
}

/// Whether the line of sight from `sensor` to `p` passes through any box
/// other than `skip`.
pub fn occluded(sensor: Point2, p: Point2, targets: &[RadarTarget], skip: Option<usize>) -> bool {
    targets
        .iter()
        .enumerate()
        .any(|(i, t)| Some(i) != skip && segment_hits_box(sensor, p, &t.footprint))
}

fn in_fov(sensor: &Pose2D, p: Point2, sensor_cfg: &RadarSensorConfig) -> bool {
    let d = [p[0] - sensor.translation[0], p[1] - sensor.translation[1]];
    let r = d[0].hypot(d[1]);
    if r > sensor_cfg.max_range || r < 1e-6 {
        return false;
    }
    let az = wrap_angle(d[1].atan2(d[0]) - sensor.yaw);
    az.abs() <= 0.5 * sensor_cfg.azimuth_fov
}

/// One radar sweep, returned in the ego frame at sweep time with zero
/// sweep offset.
pub fn simulate_sweep(scene: &SweepScene, sensor_cfg: &RadarSensorConfig, weather: &WeatherConfig, seed: u64) -> Vec<RadarPoint> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, weather.position_noise.max(0.0)).expect("valid sigma");
    let rcs_noise = Normal::new(0.0, sensor_cfg.rcs_noise.max(0.0)).expect("valid sigma");
    let sensor = sensor_pose(&scene.ego_pose, sensor_cfg);
    let s_xy = sensor.translation;
    let to_ego = scene.ego_pose.inverse();
    let ego_v = [scene.ego_velocity[0], scene.ego_velocity[1], 0.0];
    let mut out = Vec::new();

    let mut emit = |rng: &mut ChaCha8Rng, p: Point2, vel: Point2, rcs: f64, skip: Option<usize>| {
        if !in_fov(&sensor, p, sensor_cfg) || occluded(s_xy, p, scene.targets, skip) {
            return;
        }
        // Draw every random number before the dropout decision so the
        // stream does not depend on which returns survive.
        let dx = noise.sample(rng);
        let dy = noise.sample(rng);
        let drcs = rcs_noise.sample(rng);
        let keep = rng.random::<f64>() >= weather.dropout;
        if !keep {
            return;
        }
        let doppler = doppler_radial_velocity([p[0], p[1], 0.0], [vel[0], vel[1], 0.0], ego_v, [s_xy[0], s_xy[1], 0.0])
            .expect("in-range returns are away from the sensor");
        let noisy = [p[0] + dx, p[1] + dy];
        let [x, y] = to_ego.transform_point(noisy);
        out.push(RadarPoint {
            position: [x, y, 0.0],
            rcs: rcs + drcs,
            doppler,
            sweep_offset: 0.0,
        });
    };

    for (i, t) in scene.targets.iter().enumerate() {
        let d = (t.footprint.center[0] - s_xy[0]).hypot(t.footprint.center[1] - s_xy[1]);
        let reach = t.footprint.half_length.hypot(t.footprint.half_width);
        if d - reach > sensor_cfg.max_range {
            continue;
        }
        let samples = facing_edge_samples(&t.footprint, s_xy, sensor_cfg.points_per_agent, &mut rng);
        for p in samples {
            emit(&mut rng, p, t.velocity, class_rcs(t.class), Some(i));
        }
    }
    for line in scene.static_lines {
        for w in line.windows(2) {
            let (a, b) = (w[0], w[1]);
            let mid = [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])];
            if (mid[0] - s_xy[0]).hypot(mid[1] - s_xy[1]) > sensor_cfg.max_range + 2.0 {
                continue;
            }
            let len = (b[0] - a[0]).hypot(b[1] - a[1]);
            let u: f64 = rng.random();
            let pos: f64 = rng.random();
            if u < len / sensor_cfg.static_spacing {
                let p = [a[0] + pos * (b[0] - a[0]), a[1] + pos * (b[1] - a[1])];
                emit(&mut rng, p, [0.0, 0.0], STATIC_RCS, None);
            }
        }
    }
    out
}

/// One sweep with its capture time.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimedSweep {
    pub timestamp: f64,
    pub points: Vec<RadarPoint>,
}

/// Moves every sweep into the ego frame of the last one. `ego_poses[i]` is
/// the world pose at which sweep `i` was captured; the last sweep is the
/// current one. Doppler is kept as measured.
pub fn accumulate_sweeps(sweeps: &[TimedSweep], ego_poses: &[Pose2D]) -> Result<Vec<RadarPoint>, WorldError> {
    if sweeps.len() != ego_poses.len() {
        return Err(WorldError::LengthMismatch(sweeps.len(), ego_poses.len()));
    }
    let (Some(last), Some(current)) = (sweeps.last(), ego_poses.last()) else {
        return Ok(Vec::new());
    };
    let to_current = current.inverse();
    let mut out = Vec::new();
    for (sweep, pose) in sweeps.iter().zip(ego_poses) {
        let rel = to_current.compose(pose);
        let dt = last.timestamp - sweep.timestamp;
        out.extend(sweep.points.iter().map(|p| {
            let [x, y] = rel.transform_point([p.position[0], p.position[1]]);
            RadarPoint {
                position: [x, y, p.position[2]],
                sweep_offset: p.sweep_offset + dt,
                ..*p
            }
        }));
    }
    Ok(out)
}
