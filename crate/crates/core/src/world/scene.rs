//! Scene generation: ego route, constant-turn-rate agents, road map, and
//! per-frame sensor data with ground truth.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::geometry::{boxes_overlap, resample_polyline, CameraModel, OrientedBox2D};
use crate::model::{
    AgentClass, Anchor, CameraView, DrivingCommand, Frame, GtAgent, GtPolyline, MapClass, Point2, Pose2D,
    MAX_WAYPOINTS, MOTION_STEPS, PERCEPTION_RANGE, PLAN_STEPS, TIMESTEP,
};

use super::camera::{camera_rig, render_camera_features};
use super::config::ScenarioConfig;
use super::radar::{accumulate_sweeps, simulate_sweep, RadarTarget, SweepScene, TimedSweep};
use super::route::{Route, LANE_WIDTH};
use super::{derive_seed, WorldError};

/// Ego footprint (width, length) and height, meters.
pub const EGO_SIZE: [f64; 3] = [1.73, 1.5, 4.08];
/// Arc length of the road pieces that become map polylines.
const MAP_PIECE_LENGTH: f64 = 25.0;
const ROAD_STEP: f64 = 1.0;

/// Constant turn rate and velocity motion from `t = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentTrack {
    pub id: u64,
    pub class: AgentClass,
    /// (w, h, l)
    pub size: [f64; 3],
    pub position: Point2,
    pub yaw: f64,
    pub speed: f64,
    pub yaw_rate: f64,
}

/// World-frame kinematic state.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AgentState {
    pub position: Point2,
    pub yaw: f64,
    pub velocity: Point2,
}

impl AgentTrack {
    pub fn state_at(&self, t: f64) -> AgentState {
        let (v, w) = (self.speed, self.yaw_rate);
        let yaw = self.yaw + w * t;
        let position = if w.abs() < 1e-9 {
            [self.position[0] + v * t * self.yaw.cos(), self.position[1] + v * t * self.yaw.sin()]
        } else {
            [
                self.position[0] + v / w * (yaw.sin() - self.yaw.sin()),
                self.position[1] + v / w * (self.yaw.cos() - yaw.cos()),
            ]
        };
        AgentState {
            position,
            yaw,
            velocity: [v * yaw.cos(), v * yaw.sin()],
        }
    }

    pub fn footprint_at(&self, t: f64) -> OrientedBox2D {
        let s = self.state_at(t);
        OrientedBox2D::new(s.position, self.size[0], self.size[2], s.yaw)
    }
}

/// The analytic world behind one scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct World {
    pub route: Route,
    pub ego_speed: f64,
    pub agents: Vec<AgentTrack>,
    /// Dense road lines in world coordinates.
    pub road: Vec<(MapClass, Vec<Point2>)>,
}

impl World {
    pub fn sample(cfg: &ScenarioConfig, seed: u64) -> World {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let route = Route::sample(cfg.map_template, &mut rng);
        let [lo, hi] = cfg.ego_speed_range;
        let ego_speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
        let duration = cfg.scene_duration;
        let horizon = duration + MOTION_STEPS as f64 * TIMESTEP;
        let road = route.road_lines(-PERCEPTION_RANGE - 20.0, ego_speed * horizon + PERCEPTION_RANGE + 20.0, ROAD_STEP);
        let mut agents: Vec<AgentTrack> = Vec::with_capacity(cfg.num_agents);
        let ego_box = OrientedBox2D::new([0.0, 0.0], EGO_SIZE[0] + 2.0, EGO_SIZE[2] + 6.0, 0.0);
        let mut attempts = 0;
        while agents.len() < cfg.num_agents && attempts < 200 * cfg.num_agents.max(1) {
            attempts += 1;
            let track = sample_agent(cfg, &route, ego_speed, agents.len() as u64 + 1, &mut rng);
            let fp = track.footprint_at(0.0);
            let grown = OrientedBox2D {
                half_width: fp.half_width + 0.5,
                half_length: fp.half_length + 1.0,
                ..fp
            };
            let clash = boxes_overlap(&grown, &ego_box) || agents.iter().any(|o| boxes_overlap(&grown, &o.footprint_at(0.0)));
            if !clash {
                agents.push(track);
            }
        }
        World {
            route,
            ego_speed,
            agents,
            road,
        }
    }

    pub fn ego_pose(&self, t: f64) -> Pose2D {
        self.route.pose_at(self.ego_speed * t)
    }

    /// World-frame ego velocity.
    pub fn ego_velocity(&self, t: f64) -> Point2 {
        let yaw = self.ego_pose(t).yaw;
        [self.ego_speed * yaw.cos(), self.ego_speed * yaw.sin()]
    }

    pub fn targets_at(&self, t: f64) -> Vec<RadarTarget> {
        self.agents
            .iter()
            .map(|a| RadarTarget {
                footprint: a.footprint_at(t),
                velocity: a.state_at(t).velocity,
                class: a.class,
            })
            .collect()
    }

    pub fn static_lines(&self) -> Vec<Vec<Point2>> {
        self.road
            .iter()
            .filter(|(c, _)| *c == MapClass::Boundary)
            .map(|(_, l)| l.clone())
            .collect()
    }
}

fn sample_class<R: Rng>(rng: &mut R) -> AgentClass {
    let u: f64 = rng.random();
    if u < 0.6 {
        AgentClass::Car
    } else if u < 0.8 {
        AgentClass::Truck
    } else {
        AgentClass::Cyclist
    }
}

fn sample_agent<R: Rng>(cfg: &ScenarioConfig, route: &Route, ego_speed: f64, id: u64, rng: &mut R) -> AgentTrack {
    let class = sample_class(rng);
    let nominal = class.nominal_size();
    let scale = rng.random_range(0.9..1.1);
    let size = [nominal[0] * scale, nominal[1] * scale, nominal[2] * scale];
    let s = rng.random_range(-25.0..60.0);
    let pose = route.pose_at(s);
    let [lo, hi] = cfg.agent_speed_range;
    let mut speed = if hi > lo { rng.random_range(lo..hi) } else { lo };
    let parked = rng.random::<f64>() < cfg.parked_fraction;
    let (lateral, mut yaw) = if parked {
        speed = 0.0;
        let lat = if rng.random_bool(0.5) { -3.2 } else { LANE_WIDTH + 3.5 };
        (lat, pose.yaw + rng.random_range(-0.1..0.1))
    } else if class == AgentClass::Cyclist {
        speed = speed.min(6.0);
        (-1.3, pose.yaw)
    } else if rng.random_bool(0.5) {
        // Same lane: leaders never slower than ego, followers never faster.
        speed = if s > 0.0 { speed.max(1.05 * ego_speed) } else { speed.min(0.9 * ego_speed) };
        (0.0, pose.yaw)
    } else {
        let oncoming = rng.random_bool(0.5);
        (LANE_WIDTH, if oncoming { pose.yaw + std::f64::consts::PI } else { pose.yaw })
    };
    let position = pose.transform_point([0.0, lateral]);
    let mut yaw_rate = 0.0;
    if speed > 0.0 {
        let k = route.curvature_at(s);
        let forward = (yaw - pose.yaw).cos() > 0.0;
        yaw_rate = if forward { k * speed } else { -k * speed };
        yaw_rate += rng.random_range(-0.02..0.02);
    }
    yaw = crate::model::wrap_angle(yaw);
    AgentTrack {
        id,
        class,
        size,
        position,
        yaw,
        speed,
        yaw_rate,
    }
}

/// A generated scene: its world and frames.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Scene {
    pub id: u64,
    pub seed: u64,
    pub world: World,
    pub frames: Vec<Frame>,
}

/// Ground-truth view of the world from the ego pose at time `t`.
pub fn ground_truth_agents(world: &World, t: f64) -> Vec<GtAgent> {
    let ego = world.ego_pose(t);
    let to_ego = ego.inverse();
    let ev = world.ego_velocity(t);
    world
        .agents
        .iter()
        .filter_map(|a| {
            let st = a.state_at(t);
            let [x, y] = to_ego.transform_point(st.position);
            if x.hypot(y) > PERCEPTION_RANGE {
                return None;
            }
            let [vx, vy] = to_ego.rotate([st.velocity[0] - ev[0], st.velocity[1] - ev[1]]);
            let future: Vec<Point2> = (1..=MOTION_STEPS)
                .map(|k| to_ego.transform_point(a.state_at(t + k as f64 * TIMESTEP).position))
                .collect();
            let future_yaw = (1..=MOTION_STEPS)
                .map(|k| crate::model::wrap_angle(a.state_at(t + k as f64 * TIMESTEP).yaw - ego.yaw))
                .collect();
            Some(GtAgent {
                id: a.id,
                class: a.class,
                anchor: Anchor::from_pose([x, y, 0.5 * a.size[1]], a.size, st.yaw - ego.yaw, [vx, vy, 0.0]),
                future,
                future_yaw,
            })
        })
        .collect()
}

/// Road pieces within perception range, as polylines of `MAX_WAYPOINTS`
/// evenly spaced waypoints in the ego frame.
pub fn ground_truth_map(world: &World, ego: &Pose2D) -> Vec<GtPolyline> {
    let to_ego = ego.inverse();
    let mut out = Vec::new();
    for (class, line) in &world.road {
        let local: Vec<Point2> = line.iter().map(|p| to_ego.transform_point(*p)).collect();
        let mut run: Vec<Point2> = Vec::new();
        let mut flush = |run: &mut Vec<Point2>| {
            if run.len() >= 3 {
                if let Ok(wp) = resample_polyline(run, MAX_WAYPOINTS) {
                    out.push(GtPolyline {
                        class: *class,
                        waypoints: wp,
                    });
                }
            }
            run.clear();
        };
        for p in local {
            if p[0].hypot(p[1]) <= PERCEPTION_RANGE {
                run.push(p);
                if (run.len() - 1) as f64 * ROAD_STEP >= MAP_PIECE_LENGTH {
                    let last = *run.last().expect("non-empty");
                    flush(&mut run);
                    run.push(last);
                }
            } else {
                flush(&mut run);
            }
        }
        flush(&mut run);
    }
    out
}

/// Ego future over the planning horizon in the current ego frame.
pub fn ego_future(world: &World, t: f64) -> (Vec<Point2>, Vec<f64>) {
    let ego = world.ego_pose(t);
    let to_ego = ego.inverse();
    (1..=PLAN_STEPS)
        .map(|k| {
            let p = world.ego_pose(t + k as f64 * TIMESTEP);
            (to_ego.transform_point(p.translation), crate::model::wrap_angle(p.yaw - ego.yaw))
        })
        .unzip()
}

/// Radar returns of frame `index` accumulated over the configured sweeps.
pub fn frame_radar(world: &World, cfg: &ScenarioConfig, t: f64, seed: u64) -> Result<Vec<crate::model::RadarPoint>, WorldError> {
    let lines = world.static_lines();
    let n = cfg.radar.num_sweeps;
    let mut sweeps = Vec::with_capacity(n);
    let mut poses = Vec::with_capacity(n);
    for k in (0..n).rev() {
        let ts = t - k as f64 * cfg.radar.sweep_interval;
        let targets = world.targets_at(ts);
        let scene = SweepScene {
            ego_pose: world.ego_pose(ts),
            ego_velocity: world.ego_velocity(ts),
            targets: &targets,
            static_lines: &lines,
        };
        let points = simulate_sweep(&scene, &cfg.radar, &cfg.weather, derive_seed(seed, &[k as u64]));
        sweeps.push(TimedSweep { timestamp: ts, points });
        poses.push(scene.ego_pose);
    }
    let mut points = accumulate_sweeps(&sweeps, &poses)?;
    points.retain(|p| p.position[0].hypot(p.position[1]) <= PERCEPTION_RANGE);
    Ok(points)
}

pub fn build_frame(world: &World, cfg: &ScenarioConfig, cams: &[CameraModel], scene_id: u64, seed: u64, index: usize) -> Result<Frame, WorldError> {
    let t = index as f64 / cfg.frame_rate;
    let ego_pose = world.ego_pose(t);
    let gt_agents = ground_truth_agents(world, t);
    let (gt_ego_future, gt_ego_future_yaw) = ego_future(world, t);
    let command = DrivingCommand::from_route_end(*gt_ego_future.last().expect("planning horizon is non-empty"));
    let radar_points = frame_radar(world, cfg, t, derive_seed(seed, &[1, index as u64]))?;
    let grids = render_camera_features(&gt_agents, cams, &cfg.camera, derive_seed(seed, &[2, index as u64]));
    Ok(Frame {
        scene_id,
        index,
        timestamp: t,
        ego_pose,
        ego_velocity: [world.ego_speed, 0.0],
        radar_points,
        cameras: cams
            .iter()
            .cloned()
            .zip(grids)
            .map(|(camera, grid)| CameraView { camera, grid })
            .collect(),
        gt_agents,
        gt_map: ground_truth_map(world, &ego_pose),
        gt_ego_future,
        gt_ego_future_yaw,
        command,
    })
}

/// Seed of scene `index` of a configuration.
pub fn scene_seed(cfg: &ScenarioConfig, index: usize) -> u64 {
    derive_seed(cfg.seed, &[index as u64])
}

/// Generates scene `index` of the configuration.
pub fn generate_scene_at(cfg: &ScenarioConfig, index: usize) -> Result<Scene, WorldError> {
    cfg.validate()?;
    let seed = scene_seed(cfg, index);
    let world = World::sample(cfg, seed);
    let cams = camera_rig(&cfg.camera);
    let frames = (0..cfg.num_frames())
        .map(|f| build_frame(&world, cfg, &cams, index as u64, seed, f))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Scene {
        id: index as u64,
        seed,
        world,
        frames,
    })
}

/// The first scene of the configuration.
pub fn generate_scene(cfg: &ScenarioConfig) -> Result<Scene, WorldError> {
    generate_scene_at(cfg, 0)
}

/// All `cfg.scenes` scenes, generated in parallel, ordered by id.
pub fn generate_suite(cfg: &ScenarioConfig) -> Result<Vec<Scene>, WorldError> {
    use rayon::prelude::*;
    cfg.validate()?;
    (0..cfg.scenes).into_par_iter().map(|i| generate_scene_at(cfg, i)).collect()
}
