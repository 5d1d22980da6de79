//! Procedural driving scenes and their simulated sensors.

pub mod camera;
pub mod config;
pub mod radar;
pub mod route;
pub mod scene;

use thiserror::Error;

pub use camera::{camera_rig, render_camera_features, CAMERA_CHANNELS};
pub use config::{CameraRigConfig, MapTemplate, RadarSensorConfig, ScenarioConfig, WeatherConfig};
pub use radar::{accumulate_sweeps, compensate_doppler, doppler_radial_velocity, simulate_sweep, TimedSweep};
pub use scene::{generate_scene, generate_scene_at, generate_suite, AgentTrack, Scene, World, EGO_SIZE};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum WorldError {
    #[error("invalid scenario config: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),
    #[error("cannot parse scenario config: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("point coincides with the sensor")]
    CoincidentPoint,
    #[error("{0} sweeps but {1} poses")]
    LengthMismatch(usize, usize),
}

/// Mixes a base seed with tags into an independent stream seed.
pub fn derive_seed(base: u64, tags: &[u64]) -> u64 {
    fn splitmix(mut z: u64) -> u64 {
        z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
        z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
        z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
        z ^ (z >> 31)
    }
    tags.iter().fold(splitmix(base), |h, &t| splitmix(h ^ splitmix(t)))
}
