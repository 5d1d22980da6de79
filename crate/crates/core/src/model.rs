//! Shared domain types, configuration and BEV pose arithmetic.
//!
//! Conventions: the ego frame has x forward, y left and yaw measured
//! counter-clockwise from +x. Trajectories are sampled at a fixed 0.5 s step,
//! the first point lying one step in the future.

use serde::{Deserialize, Serialize};

use crate::geometry::{CameraModel, FeatureGrid};

/// Trajectory timestep in seconds (2 Hz).
pub const TIMESTEP: f64 = 0.5;
/// Ego planning horizon: 6 s.
pub const PLAN_STEPS: usize = 12;
/// Agent motion horizon: 12 s.
pub const MOTION_STEPS: usize = 24;
/// BEV perception range in meters.
pub const PERCEPTION_RANGE: f64 = 50.0;
/// Number of parameters in an agent anchor box.
pub const ANCHOR_DIM: usize = 11;
/// Maximum number of waypoints per map polyline.
pub const MAX_WAYPOINTS: usize = 20;
/// Minimum separation between consecutive waypoints.
pub const MIN_WAYPOINT_SEPARATION: f64 = 1e-9;

pub type Point2 = [f64; 2];
pub type Point3 = [f64; 3];

/// Rigid BEV transform: rotate by `yaw`, then translate.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pose2D {
    pub translation: Point2,
    pub yaw: f64,
}

impl Default for Pose2D {
    fn default() -> Self {
        Self::identity()
    }
}

impl Pose2D {
    pub const fn identity() -> Self {
        Self {
            translation: [0.0, 0.0],
            yaw: 0.0,
        }
    }

    pub const fn new(x: f64, y: f64, yaw: f64) -> Self {
        Self {
            translation: [x, y],
            yaw,
        }
    }

    pub fn rotate(&self, v: Point2) -> Point2 {
        let (s, c) = self.yaw.sin_cos();
        [c * v[0] - s * v[1], s * v[0] + c * v[1]]
    }

    pub fn transform_point(&self, p: Point2) -> Point2 {
        let r = self.rotate(p);
        [r[0] + self.translation[0], r[1] + self.translation[1]]
    }

    /// `self ∘ other`: applying the result equals applying `other` first.
    pub fn compose(&self, other: &Pose2D) -> Pose2D {
        let t = self.transform_point(other.translation);
        Pose2D {
            translation: t,
            yaw: wrap_angle(self.yaw + other.yaw),
        }
    }

    pub fn inverse(&self) -> Pose2D {
        let (s, c) = self.yaw.sin_cos();
        let [x, y] = self.translation;
        Pose2D {
            translation: [-(c * x + s * y), s * x - c * y],
            yaw: wrap_angle(-self.yaw),
        }
    }

    /// Transform taking coordinates in `other`'s frame into `self`'s frame,
    /// with both poses expressed in a common parent frame.
    pub fn relative_to(&self, other: &Pose2D) -> Pose2D {
        self.inverse().compose(other)
    }
}

pub fn compose_pose(a: &Pose2D, b: &Pose2D) -> Pose2D {
    a.compose(b)
}

/// Points that can be moved by a BEV pose. The z coordinate of 3D points is
/// left untouched.
pub trait BevPoint: Copy {
    fn transformed(self, pose: &Pose2D) -> Self;
}

impl BevPoint for Point2 {
    fn transformed(self, pose: &Pose2D) -> Self {
        pose.transform_point(self)
    }
}

impl BevPoint for Point3 {
    fn transformed(self, pose: &Pose2D) -> Self {
        let [x, y] = pose.transform_point([self[0], self[1]]);
        [x, y, self[2]]
    }
}

pub fn transform_points<P: BevPoint>(points: &[P], pose: &Pose2D) -> Vec<P> {
    points.iter().map(|p| p.transformed(pose)).collect()
}

/// Wraps an angle into (-π, π].
pub fn wrap_angle(a: f64) -> f64 {
    use std::f64::consts::{PI, TAU};
    let mut r = a.rem_euclid(TAU);
    if r > PI {
        r -= TAU;
    }
    r
}

/// One radar return in the current ego frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarPoint {
    pub position: Point3,
    pub rcs: f64,
    /// Radial velocity in m/s, positive when receding from the sensor.
    pub doppler: f64,
    /// Age of the sweep this point came from, in seconds.
    pub sweep_offset: f64,
}

impl RadarPoint {
    pub fn is_finite(&self) -> bool {
        self.position.iter().all(|v| v.is_finite())
            && self.rcs.is_finite()
            && self.doppler.is_finite()
            && self.sweep_offset.is_finite()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AgentClass {
    Car,
    Truck,
    Cyclist,
}

impl AgentClass {
    pub const ALL: [AgentClass; 3] = [AgentClass::Car, AgentClass::Truck, AgentClass::Cyclist];
    pub const COUNT: usize = 3;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Nominal (width, height, length) in meters.
    pub fn nominal_size(self) -> [f64; 3] {
        match self {
            AgentClass::Car => [1.9, 1.6, 4.5],
            AgentClass::Truck => [2.5, 3.2, 8.0],
            AgentClass::Cyclist => [0.7, 1.7, 1.8],
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapClass {
    Divider,
    Boundary,
}

impl MapClass {
    pub const ALL: [MapClass; 2] = [MapClass::Divider, MapClass::Boundary];
    pub const COUNT: usize = 2;

    pub fn index(self) -> usize {
        self as usize
    }
}

/// 11-parameter box: center, size (w, h, l), yaw as (sin, cos) and velocity.
///
/// Velocity is expressed in the ego frame at the current timestamp and is
/// relative to the ego vehicle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Anchor {
    pub x: f64,
    pub y: f64,
    pub z: f64,
    pub w: f64,
    pub h: f64,
    pub l: f64,
    pub sin_yaw: f64,
    pub cos_yaw: f64,
    pub vx: f64,
    pub vy: f64,
    pub vz: f64,
}

impl Anchor {
    pub fn from_pose(center: Point3, size: [f64; 3], yaw: f64, velocity: Point3) -> Self {
        Anchor {
            x: center[0],
            y: center[1],
            z: center[2],
            w: size[0],
            h: size[1],
            l: size[2],
            sin_yaw: yaw.sin(),
            cos_yaw: yaw.cos(),
            vx: velocity[0],
            vy: velocity[1],
            vz: velocity[2],
        }
    }

    pub fn to_array(&self) -> [f64; ANCHOR_DIM] {
        [
            self.x,
            self.y,
            self.z,
            self.w,
            self.h,
            self.l,
            self.sin_yaw,
            self.cos_yaw,
            self.vx,
            self.vy,
            self.vz,
        ]
    }

    pub fn from_array(a: [f64; ANCHOR_DIM]) -> Self {
        Anchor {
            x: a[0],
            y: a[1],
            z: a[2],
            w: a[3],
            h: a[4],
            l: a[5],
            sin_yaw: a[6],
            cos_yaw: a[7],
            vx: a[8],
            vy: a[9],
            vz: a[10],
        }
    }

    /// Regression space: sizes are replaced by their logarithms.
    pub fn encode(&self) -> [f64; ANCHOR_DIM] {
        let mut a = self.to_array();
        a[3] = self.w.ln();
        a[4] = self.h.ln();
        a[5] = self.l.ln();
        a
    }

    /// Inverse of [`Anchor::encode`]; the yaw pair is renormalized.
    pub fn decode(e: [f64; ANCHOR_DIM]) -> Self {
        let mut a = e;
        a[3] = e[3].exp();
        a[4] = e[4].exp();
        a[5] = e[5].exp();
        Anchor::from_array(a).normalized()
    }

    pub fn normalized(mut self) -> Self {
        let n = self.sin_yaw.hypot(self.cos_yaw);
        if n > 1e-12 {
            self.sin_yaw /= n;
            self.cos_yaw /= n;
        } else {
            self.sin_yaw = 0.0;
            self.cos_yaw = 1.0;
        }
        self
    }

    pub fn yaw(&self) -> f64 {
        self.sin_yaw.atan2(self.cos_yaw)
    }

    pub fn center_xy(&self) -> Point2 {
        [self.x, self.y]
    }

    pub fn center(&self) -> Point3 {
        [self.x, self.y, self.z]
    }

    /// Moves the box into the frame described by `pose` (rotating yaw and
    /// velocity along with the center).
    pub fn transformed(&self, pose: &Pose2D) -> Anchor {
        let [x, y] = pose.transform_point([self.x, self.y]);
        let [vx, vy] = pose.rotate([self.vx, self.vy]);
        let yaw = self.yaw() + pose.yaw;
        Anchor {
            x,
            y,
            vx,
            vy,
            sin_yaw: yaw.sin(),
            cos_yaw: yaw.cos(),
            ..*self
        }
    }
}

/// Detection / motion query.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AgentInstance {
    pub anchor: Anchor,
    pub feature: Vec<f64>,
    pub class_scores: Vec<f64>,
    pub instance_id: u64,
}

impl AgentInstance {
    pub fn score(&self) -> f64 {
        self.class_scores.iter().copied().fold(0.0, f64::max)
    }

    pub fn class(&self) -> AgentClass {
        let idx = argmax(&self.class_scores).unwrap_or(0);
        AgentClass::from_index(idx).unwrap_or(AgentClass::Car)
    }
}

/// Map query: an ordered list of BEV waypoints.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapPolyline {
    pub waypoints: Vec<Point2>,
    pub feature: Vec<f64>,
    pub class_scores: Vec<f64>,
}

impl MapPolyline {
    pub fn score(&self) -> f64 {
        self.class_scores.iter().copied().fold(0.0, f64::max)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub points: Vec<Point2>,
    pub score: f64,
}

/// All modes predicted for one instance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySet {
    pub modes: Vec<Trajectory>,
}

impl TrajectorySet {
    pub fn best(&self) -> Option<&Trajectory> {
        let scores: Vec<f64> = self.modes.iter().map(|m| m.score).collect();
        argmax(&scores).map(|i| &self.modes[i])
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DrivingCommand {
    TurnLeft,
    TurnRight,
    GoStraight,
}

impl DrivingCommand {
    pub const ALL: [DrivingCommand; 3] = [
        DrivingCommand::TurnLeft,
        DrivingCommand::TurnRight,
        DrivingCommand::GoStraight,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Lateral offset of the route end point (ego frame) beyond which the
    /// command becomes a turn.
    pub const TURN_THRESHOLD: f64 = 2.0;

    pub fn from_route_end(end: Point2) -> Self {
        if end[1] > Self::TURN_THRESHOLD {
            DrivingCommand::TurnLeft
        } else if end[1] < -Self::TURN_THRESHOLD {
            DrivingCommand::TurnRight
        } else {
            DrivingCommand::GoStraight
        }
    }
}

/// Model hyper-parameters shared by fusion and planning.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FusionConfig {
    /// Distance-penalty weight of the range-adaptive attention.
    pub alpha: f64,
    /// Distance normalization range in meters.
    pub r_max: f64,
    pub embed_dim: usize,
    pub num_heads: usize,
    pub num_agent_anchors: usize,
    pub num_map_anchors: usize,
    pub num_decoder_layers: usize,
    pub topk_radar: usize,
    /// Top detections carried to the next frame as temporal queries.
    pub num_temporal: usize,
    /// Frames kept in the instance memory queue.
    pub memory_frames: usize,
    pub ego_modes_per_command: usize,
    pub agent_modes: usize,
    /// Pixel radius within which image cells attend to projected radar.
    pub frustum_radius_px: f64,
    /// Waypoints per map anchor.
    pub map_waypoints: usize,
    /// Score needed for a detection to take part in plan re-scoring.
    pub rescore_threshold: f64,
    pub rescore_lambda: f64,
    pub rescore_safe_radius: f64,
}

impl Default for FusionConfig {
    fn default() -> Self {
        FusionConfig {
            alpha: 1.0,
            r_max: PERCEPTION_RANGE,
            embed_dim: 64,
            num_heads: 4,
            num_agent_anchors: 900,
            num_map_anchors: 100,
            num_decoder_layers: 6,
            topk_radar: 32,
            num_temporal: 64,
            memory_frames: 3,
            ego_modes_per_command: 6,
            agent_modes: 6,
            frustum_radius_px: 24.0,
            map_waypoints: MAX_WAYPOINTS,
            rescore_threshold: 0.5,
            rescore_lambda: 1.0,
            rescore_safe_radius: 3.0,
        }
    }
}

impl FusionConfig {
    /// Small preset used for training on a desk: same structure, fewer
    /// queries and layers.
    pub fn toy() -> Self {
        FusionConfig {
            embed_dim: 32,
            num_agent_anchors: 64,
            num_map_anchors: 16,
            num_decoder_layers: 2,
            topk_radar: 16,
            num_temporal: 16,
            ..FusionConfig::default()
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        let mut problems = Vec::new();
        if !(self.r_max > 0.0) {
            problems.push("r_max must be > 0".to_string());
        }
        if !(self.alpha >= 0.0) {
            problems.push("alpha must be >= 0".to_string());
        }
        if self.num_decoder_layers < 1 {
            problems.push("num_decoder_layers must be >= 1".to_string());
        }
        if self.embed_dim == 0 || self.num_heads == 0 || self.embed_dim % self.num_heads != 0 {
            problems.push("embed_dim must be a positive multiple of num_heads".to_string());
        }
        if self.num_agent_anchors == 0 || self.num_map_anchors == 0 {
            problems.push("anchor counts must be positive".to_string());
        }
        if self.topk_radar == 0 {
            problems.push("topk_radar must be positive".to_string());
        }
        if self.num_temporal > self.num_agent_anchors {
            problems.push("num_temporal must not exceed num_agent_anchors".to_string());
        }
        if !(2..=MAX_WAYPOINTS).contains(&self.map_waypoints) {
            problems.push(format!("map_waypoints must lie in [2, {MAX_WAYPOINTS}]"));
        }
        if self.ego_modes_per_command == 0 || self.agent_modes == 0 {
            problems.push("mode counts must be positive".to_string());
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(problems.join("; "))
        }
    }
}

/// Ground-truth agent annotation in the current ego frame.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtAgent {
    pub id: u64,
    pub class: AgentClass,
    pub anchor: Anchor,
    /// Future centers over the motion horizon.
    pub future: Vec<Point2>,
    /// Future headings aligned with `future`.
    pub future_yaw: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GtPolyline {
    pub class: MapClass,
    pub waypoints: Vec<Point2>,
}

/// One camera and its feature map.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraView {
    pub camera: CameraModel,
    pub grid: FeatureGrid,
}

/// One timestep of a scene.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Frame {
    pub scene_id: u64,
    pub index: usize,
    pub timestamp: f64,
    /// Ego pose in the world frame.
    pub ego_pose: Pose2D,
    /// Ego velocity in the ego frame.
    pub ego_velocity: Point2,
    pub radar_points: Vec<RadarPoint>,
    pub cameras: Vec<CameraView>,
    pub gt_agents: Vec<GtAgent>,
    pub gt_map: Vec<GtPolyline>,
    /// Ego future over the planning horizon, current ego frame.
    pub gt_ego_future: Vec<Point2>,
    pub gt_ego_future_yaw: Vec<f64>,
    pub command: DrivingCommand,
}

/// A violated invariant found by [`validate_frame`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub rule: String,
    pub detail: String,
}

fn violation(rule: &str, detail: String) -> Violation {
    Violation {
        rule: rule.to_string(),
        detail,
    }
}

pub fn validate_anchor(anchor: &Anchor, what: &str, out: &mut Vec<Violation>) {
    if !anchor.to_array().iter().all(|v| v.is_finite()) {
        out.push(violation("anchor_finite", format!("{what}: non-finite anchor")));
        return;
    }
    if !(anchor.w > 0.0 && anchor.h > 0.0 && anchor.l > 0.0) {
        out.push(violation(
            "anchor_dimensions",
            format!(
                "{what}: w, h, l must be > 0 (got {}, {}, {})",
                anchor.w, anchor.h, anchor.l
            ),
        ));
    }
    let n = anchor.sin_yaw * anchor.sin_yaw + anchor.cos_yaw * anchor.cos_yaw;
    if (n - 1.0).abs() > 1e-6 {
        out.push(violation(
            "anchor_yaw_unit",
            format!("{what}: sin²+cos² = {n}"),
        ));
    }
}

pub fn validate_waypoints(waypoints: &[Point2], what: &str, out: &mut Vec<Violation>) {
    if waypoints.len() < 2 || waypoints.len() > MAX_WAYPOINTS {
        out.push(violation(
            "polyline_waypoint_count",
            format!(
                "{what}: {} waypoints, expected 2..={MAX_WAYPOINTS}",
                waypoints.len()
            ),
        ));
    }
    for (i, w) in waypoints.windows(2).enumerate() {
        let d = (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]);
        if !(d > MIN_WAYPOINT_SEPARATION) {
            out.push(violation(
                "polyline_coincident_waypoints",
                format!("{what}: waypoints {i} and {} coincide", i + 1),
            ));
        }
    }
}

/// Lists every invariant the frame violates; empty when valid.
pub fn validate_frame(frame: &Frame) -> Vec<Violation> {
    let mut out = Vec::new();
    if !frame.timestamp.is_finite() {
        out.push(violation("timestamp_finite", "timestamp is not finite".into()));
    }
    for (i, p) in frame.radar_points.iter().enumerate() {
        if !p.is_finite() {
            out.push(violation("radar_finite", format!("radar point {i} not finite")));
            continue;
        }
        if p.sweep_offset < 0.0 {
            out.push(violation(
                "radar_sweep_offset",
                format!("radar point {i}: sweep_offset {} < 0", p.sweep_offset),
            ));
        }
        if p.position[0].hypot(p.position[1]) > PERCEPTION_RANGE + 1e-9 {
            out.push(violation(
                "radar_range",
                format!("radar point {i} beyond {PERCEPTION_RANGE} m"),
            ));
        }
    }
    for agent in &frame.gt_agents {
        validate_anchor(&agent.anchor, &format!("agent {}", agent.id), &mut out);
        if agent.future.len() != MOTION_STEPS || agent.future_yaw.len() != MOTION_STEPS {
            out.push(violation(
                "agent_future_horizon",
                format!(
                    "agent {}: future has {} points, expected {MOTION_STEPS}",
                    agent.id,
                    agent.future.len()
                ),
            ));
        }
    }
    for (i, poly) in frame.gt_map.iter().enumerate() {
        validate_waypoints(&poly.waypoints, &format!("polyline {i}"), &mut out);
    }
    if frame.gt_ego_future.len() != PLAN_STEPS {
        out.push(violation(
            "ego_future_horizon",
            format!(
                "ego future has {} points, expected {PLAN_STEPS}",
                frame.gt_ego_future.len()
            ),
        ));
    }
    for (i, view) in frame.cameras.iter().enumerate() {
        if let Err(e) = view.camera.validate() {
            out.push(violation("camera_model", format!("camera {i}: {e}")));
        }
        if view.grid.data.len() != view.grid.rows * view.grid.cols * view.grid.channels {
            out.push(violation(
                "camera_grid_shape",
                format!("camera {i}: grid data length does not match its shape"),
            ));
        }
    }
    out
}

/// Checks that timestamps strictly increase across a scene.
pub fn validate_sequence(frames: &[Frame]) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, w) in frames.windows(2).enumerate() {
        if !(w[1].timestamp > w[0].timestamp) {
            out.push(violation(
                "timestamps_increasing",
                format!("frame {} does not follow frame {i} in time", i + 1),
            ));
        }
    }
    for f in frames {
        out.extend(validate_frame(f));
    }
    out
}

pub fn argmax(values: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &v) in values.iter().enumerate() {
        match best {
            Some((_, b)) if !(v > b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map(|(i, _)| i)
}

pub fn dist2(a: Point2, b: Point2) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}
