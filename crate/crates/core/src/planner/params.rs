//! The learnable planner: fusion network, planning heads, initial anchors,
//! and their JSON serialization.

use std::path::Path;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::{ParamStore, TensorRecord};
use crate::fusion::network::CrossAttention;
use crate::fusion::FusionNetwork;
use crate::geometry::resample_polyline;
use crate::losses::LossConfig;
use crate::model::{Anchor, DrivingCommand, Frame, FusionConfig, Point2, AgentClass, MOTION_STEPS, PERCEPTION_RANGE, PLAN_STEPS};
use crate::world::{derive_seed, CAMERA_CHANNELS};

use super::heads::TrajectoryHead;
use super::kmeans::{kmeans, kmeans_anchors};
use super::PlannerError;

const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct PlanningHeads {
    /// Ego query attending to the refined agents.
    pub ego_interaction: CrossAttention,
    pub motion: TrajectoryHead,
    /// All commands' ego modes in one head, command-major.
    pub plan: TrajectoryHead,
}

#[derive(Clone, Debug)]
pub struct PlannerModel {
    pub cfg: FusionConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub store: ParamStore,
    pub net: FusionNetwork,
    pub heads: PlanningHeads,
    pub agent_anchors: Vec<Anchor>,
    pub map_anchors: Vec<Vec<Point2>>,
}

/// On-disk form of a [`PlannerModel`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamFile {
    pub format: u32,
    pub config: FusionConfig,
    pub loss: LossConfig,
    pub seed: u64,
    pub camera_channels: usize,
    pub agent_anchors: Vec<Anchor>,
    pub map_anchors: Vec<Vec<Point2>>,
    pub tensors: Vec<TensorRecord>,
}

fn build(cfg: &FusionConfig, camera_channels: usize, seed: u64) -> (ParamStore, FusionNetwork, PlanningHeads) {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[7]));
    let mut store = ParamStore::new();
    let net = FusionNetwork::build(&mut store, cfg, camera_channels, &mut rng);
    let c = cfg.embed_dim;
    let heads = PlanningHeads {
        ego_interaction: CrossAttention::new(&mut store, "ego_interaction", c, &mut rng),
        motion: TrajectoryHead::new(&mut store, "motion", c, cfg.agent_modes, MOTION_STEPS, &mut rng),
        plan: TrajectoryHead::new(
            &mut store,
            "plan",
            c,
            cfg.ego_modes_per_command * DrivingCommand::ALL.len(),
            PLAN_STEPS,
            &mut rng,
        ),
    };
    (store, net, heads)
}

/// Uniformly scattered car-sized anchors, used when there are too few
/// training boxes to cluster.
fn scattered_anchors(k: usize, rng: &mut ChaCha8Rng) -> Vec<Anchor> {
    let size = AgentClass::Car.nominal_size();
    (0..k)
        .map(|_| {
            let r = PERCEPTION_RANGE * rng.random_range(0.0f64..1.0).sqrt();
            let phi = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            let yaw = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            Anchor::from_pose([r * phi.cos(), r * phi.sin(), 0.5 * size[1]], size, yaw, [0.0; 3])
        })
        .collect()
}

fn scattered_polylines(k: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<Point2>> {
    (0..k)
        .map(|_| {
            let c = [rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0)];
            let h = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
            (0..n)
                .map(|i| {
                    let s = 20.0 * (i as f64 / (n - 1) as f64 - 0.5);
                    [c[0] + s * h.cos(), c[1] + s * h.sin()]
                })
                .collect()
        })
        .collect()
}

impl PlannerModel {
    /// Fresh parameters. Agent anchors cluster the ground-truth boxes of
    /// `training` and map anchors its polylines; either falls back to seeded
    /// scattered anchors when there are fewer samples than anchors.
    pub fn init(cfg: &FusionConfig, loss: &LossConfig, training: &[&Frame], seed: u64) -> Result<Self, PlannerError> {
        cfg.validate().map_err(PlannerError::InvalidConfig)?;
        let channels = training
            .first()
            .and_then(|f| f.cameras.first())
            .map_or(CAMERA_CHANNELS, |c| c.grid.channels);
        let (store, net, heads) = build(cfg, channels, seed);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, &[8]));

        let boxes: Vec<Anchor> = training.iter().flat_map(|f| f.gt_agents.iter().map(|g| g.anchor)).collect();
        let agent_anchors = if boxes.len() >= cfg.num_agent_anchors {
            kmeans_anchors(&boxes, cfg.num_agent_anchors, derive_seed(seed, &[9]))?
        } else {
            scattered_anchors(cfg.num_agent_anchors, &mut rng)
        };

        let mut lines = Vec::new();
        for f in training {
            for g in &f.gt_map {
                let wp = resample_polyline(&g.waypoints, cfg.map_waypoints).map_err(|e| PlannerError::InvalidInput(e.to_string()))?;
                lines.push(wp.iter().flat_map(|p| [p[0], p[1]]).collect::<Vec<f64>>());
            }
        }
        let map_anchors = if lines.len() >= cfg.num_map_anchors {
            kmeans(&lines, cfg.num_map_anchors, derive_seed(seed, &[10]))?
                .centroids
                .into_iter()
                .map(|c| c.chunks(2).map(|p| [p[0], p[1]]).collect())
                .collect()
        } else {
            scattered_polylines(cfg.num_map_anchors, cfg.map_waypoints, &mut rng)
        };

        Ok(PlannerModel {
            cfg: cfg.clone(),
            loss: loss.clone(),
            seed,
            store,
            net,
            heads,
            agent_anchors,
            map_anchors,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.store.scalar_count()
    }

    pub fn to_file(&self) -> ParamFile {
        ParamFile {
            format: FORMAT_VERSION,
            config: self.cfg.clone(),
            loss: self.loss.clone(),
            seed: self.seed,
            camera_channels: self.net.camera_channels,
            agent_anchors: self.agent_anchors.clone(),
            map_anchors: self.map_anchors.clone(),
            tensors: self.store.to_records(),
        }
    }

    pub fn from_file(file: ParamFile) -> Result<Self, PlannerError> {
        if file.format != FORMAT_VERSION {
            return Err(PlannerError::Mismatch(format!("parameter format {} (expected {FORMAT_VERSION})", file.format)));
        }
        file.config.validate().map_err(PlannerError::InvalidConfig)?;
        let cfg = file.config;
        let (mut store, net, heads) = build(&cfg, file.camera_channels, file.seed);
        if file.tensors.len() != store.len() {
            return Err(PlannerError::Mismatch(format!(
                "{} tensors in file, configuration needs {}",
                file.tensors.len(),
                store.len()
            )));
        }
        for t in file.tensors {
            let id = store
                .id(&t.name)
                .ok_or_else(|| PlannerError::Mismatch(format!("unknown tensor {}", t.name)))?;
            let want = store.get(id).dim();
            if (t.rows, t.cols) != want || t.data.len() != t.rows * t.cols {
                return Err(PlannerError::Mismatch(format!(
                    "tensor {} is {}x{}, configuration needs {}x{}",
                    t.name, t.rows, t.cols, want.0, want.1
                )));
            }
            *store.get_mut(id) = Array2::from_shape_vec((t.rows, t.cols), t.data).expect("checked shape");
        }
        if file.agent_anchors.len() != cfg.num_agent_anchors || file.map_anchors.len() != cfg.num_map_anchors {
            return Err(PlannerError::Mismatch(format!(
                "{}/{} anchors in file, configuration needs {}/{}",
                file.agent_anchors.len(),
                file.map_anchors.len(),
                cfg.num_agent_anchors,
                cfg.num_map_anchors
            )));
        }
        if let Some(bad) = file.map_anchors.iter().find(|m| m.len() != cfg.map_waypoints) {
            return Err(PlannerError::Mismatch(format!(
                "map anchor with {} waypoints, configuration needs {}",
                bad.len(),
                cfg.map_waypoints
            )));
        }
        Ok(PlannerModel {
            cfg,
            loss: file.loss,
            seed: file.seed,
            store,
            net,
            heads,
            agent_anchors: file.agent_anchors,
            map_anchors: file.map_anchors,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.to_file()).expect("parameters serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PlannerError> {
        let file: ParamFile = serde_json::from_str(text).map_err(|e| PlannerError::Parse(e.to_string()))?;
        Self::from_file(file)
    }

    pub fn save(&self, path: &Path) -> Result<(), PlannerError> {
        std::fs::write(path, self.to_json()).map_err(|e| PlannerError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, PlannerError> {
        let text = std::fs::read_to_string(path).map_err(|e| PlannerError::io(path, e))?;
        Self::from_json(&text)
    }

    /// SHA-256 of the serialized parameters, hex encoded.
    pub fn content_hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_json().as_bytes()))
    }
}
