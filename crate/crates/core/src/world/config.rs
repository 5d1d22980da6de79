//! Scenario configuration, loaded from TOML.
//!
//! ```toml
//! seed = 7
//! scenes = 4
//! num_agents = 12
//! scene_duration = 8.0
//! map_template = "t_junction"   # straight | t_junction | curve
//! frame_rate = 2.0
//! agent_speed_range = [3.0, 12.0]
//! ego_speed_range = [5.0, 10.0]
//!
//! [weather]
//! position_noise = 0.1
//! dropout = 0.05
//!
//! [radar]
//! max_range = 50.0
//! num_sweeps = 4
//!
//! [camera]
//! count = 4
//! ```
//!
//! Every section and key except the top-level `seed` has a default.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::WorldError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapTemplate {
    Straight,
    TJunction,
    Curve,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WeatherConfig {
    /// Standard deviation of radar position noise, meters.
    pub position_noise: f64,
    /// Probability that a return is dropped.
    pub dropout: f64,
}

impl Default for WeatherConfig {
    fn default() -> Self {
        WeatherConfig {
            position_noise: 0.1,
            dropout: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RadarSensorConfig {
    /// Mount position and heading on the ego vehicle.
    pub mount: [f64; 3],
    pub max_range: f64,
    /// Total azimuth field of view, radians, centered on the mount heading.
    pub azimuth_fov: f64,
    /// Expected returns per visible agent and sweep.
    pub points_per_agent: usize,
    pub num_sweeps: usize,
    /// Time between consecutive sweeps, seconds.
    pub sweep_interval: f64,
    /// Mean spacing of returns from road boundaries, meters.
    pub static_spacing: f64,
    pub rcs_noise: f64,
}

impl Default for RadarSensorConfig {
    fn default() -> Self {
        RadarSensorConfig {
            mount: [0.0, 0.0, 0.0],
            max_range: 50.0,
            azimuth_fov: 2.0 * PI,
            points_per_agent: 8,
            num_sweeps: 4,
            sweep_interval: 0.075,
            static_spacing: 4.0,
            rcs_noise: 1.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CameraRigConfig {
    /// Cameras evenly spaced in yaw around the vehicle.
    pub count: usize,
    pub width: u32,
    pub height: u32,
    /// Horizontal field of view, degrees.
    pub hfov_deg: f64,
    pub mount_height: f64,
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub channels: usize,
    /// Standard deviation of the feature noise.
    pub noise: f64,
}

impl Default for CameraRigConfig {
    fn default() -> Self {
        CameraRigConfig {
            count: 4,
            width: 320,
            height: 160,
            hfov_deg: 100.0,
            mount_height: 1.5,
            grid_rows: 8,
            grid_cols: 16,
            channels: super::camera::CAMERA_CHANNELS,
            noise: 0.1,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub seed: u64,
    #[serde(default = "default_scenes")]
    pub scenes: usize,
    #[serde(default = "default_agents")]
    pub num_agents: usize,
    #[serde(default = "default_duration")]
    pub scene_duration: f64,
    #[serde(default = "default_template")]
    pub map_template: MapTemplate,
    #[serde(default = "default_frame_rate")]
    pub frame_rate: f64,
    #[serde(default = "default_agent_speed")]
    pub agent_speed_range: [f64; 2],
    #[serde(default = "default_ego_speed")]
    pub ego_speed_range: [f64; 2],
    /// Fraction of agents parked beside the road.
    #[serde(default = "default_parked")]
    pub parked_fraction: f64,
    #[serde(default)]
    pub weather: WeatherConfig,
    #[serde(default)]
    pub radar: RadarSensorConfig,
    #[serde(default)]
    pub camera: CameraRigConfig,
}

fn default_scenes() -> usize {
    1
}
fn default_agents() -> usize {
    10
}
fn default_duration() -> f64 {
    8.0
}
fn default_template() -> MapTemplate {
    MapTemplate::Straight
}
fn default_frame_rate() -> f64 {
    2.0
}
fn default_agent_speed() -> [f64; 2] {
    [3.0, 12.0]
}
fn default_ego_speed() -> [f64; 2] {
    [5.0, 10.0]
}
fn default_parked() -> f64 {
    0.3
}

impl ScenarioConfig {
    pub fn new(seed: u64) -> Self {
        ScenarioConfig {
            seed,
            scenes: default_scenes(),
            num_agents: default_agents(),
            scene_duration: default_duration(),
            map_template: default_template(),
            frame_rate: default_frame_rate(),
            agent_speed_range: default_agent_speed(),
            ego_speed_range: default_ego_speed(),
            parked_fraction: default_parked(),
            weather: WeatherConfig::default(),
            radar: RadarSensorConfig::default(),
            camera: CameraRigConfig::default(),
        }
    }

    pub fn from_toml_str(text: &str) -> Result<Self, WorldError> {
        let cfg: ScenarioConfig = toml::from_str(text).map_err(|e| WorldError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, WorldError> {
        let text = std::fs::read_to_string(path).map_err(|e| WorldError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("scenario config is always representable")
    }

    /// Frames per scene.
    pub fn num_frames(&self) -> usize {
        (self.scene_duration * self.frame_rate).floor() as usize
    }

    /// Checks every field and lists all violations at once.
    pub fn validate(&self) -> Result<(), WorldError> {
        let mut v = Vec::new();
        let range_ok = |r: [f64; 2]| r[0].is_finite() && r[1].is_finite() && 0.0 <= r[0] && r[0] <= r[1];
        if self.scenes == 0 {
            v.push("scenes must be >= 1".to_string());
        }
        if !(self.frame_rate > 0.0 && self.frame_rate.is_finite()) {
            v.push("frame_rate must be > 0".into());
        }
        if !(self.scene_duration > 0.0 && self.scene_duration.is_finite()) {
            v.push("scene_duration must be > 0".into());
        } else if self.frame_rate > 0.0 && self.num_frames() == 0 {
            v.push("scene_duration * frame_rate must give at least one frame".into());
        }
        if !range_ok(self.agent_speed_range) {
            v.push("agent_speed_range must be [lo, hi] with 0 <= lo <= hi".into());
        }
        if !range_ok(self.ego_speed_range) {
            v.push("ego_speed_range must be [lo, hi] with 0 <= lo <= hi".into());
        }
        if !(0.0..=1.0).contains(&self.parked_fraction) {
            v.push("parked_fraction must lie in [0, 1]".into());
        }
        if !(0.0..1.0).contains(&self.weather.dropout) {
            v.push("weather.dropout must lie in [0, 1)".into());
        }
        if !(self.weather.position_noise >= 0.0) {
            v.push("weather.position_noise must be >= 0".into());
        }
        let r = &self.radar;
        if !(r.max_range > 0.0) {
            v.push("radar.max_range must be > 0".into());
        }
        if r.num_sweeps < 1 {
            v.push("radar.num_sweeps must be >= 1".into());
        }
        if !(r.azimuth_fov > 0.0) {
            v.push("radar.azimuth_fov must be > 0".into());
        }
        if !(r.sweep_interval >= 0.0) || r.sweep_interval * r.num_sweeps.saturating_sub(1) as f64 * self.frame_rate >= 1.0 {
            v.push("radar sweeps of one frame must not reach back to the previous frame".into());
        }
        if !(r.static_spacing > 0.0) {
            v.push("radar.static_spacing must be > 0".into());
        }
        if !(r.rcs_noise >= 0.0) {
            v.push("radar.rcs_noise must be >= 0".into());
        }
        let c = &self.camera;
        if c.width == 0 || c.height == 0 || c.grid_rows == 0 || c.grid_cols == 0 {
            v.push("camera image and grid sizes must be positive".into());
        }
        if c.channels < super::camera::CAMERA_CHANNELS {
            v.push(format!("camera.channels must be >= {}", super::camera::CAMERA_CHANNELS));
        }
        if !(c.hfov_deg > 0.0 && c.hfov_deg < 180.0) {
            v.push("camera.hfov_deg must lie in (0, 180)".into());
        }
        if !(c.noise >= 0.0) {
            v.push("camera.noise must be >= 0".into());
        }
        if v.is_empty() {
            Ok(())
        } else {
            Err(WorldError::InvalidConfig(v))
        }
    }
}
