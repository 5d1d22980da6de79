//! Anchor initialization, the end-to-end pipeline, multi-modal heads,
//! proximity re-scoring and the toy training loop.

pub mod heads;
pub mod kmeans;
pub mod params;
pub mod pipeline;
pub mod rescore;
pub mod train;

use std::path::Path;

use thiserror::Error;

use crate::fusion::FusionError;
use crate::losses::LossError;

pub use heads::{trajectory_head, TrajectoryHead};
pub use kmeans::{kmeans, kmeans_anchors, KMeans};
pub use params::{ParamFile, PlannerModel};
pub use pipeline::{run_frame, run_sequence, MemoryFrame, MemoryInstance, PipelineOutput, PlannerState};
pub use rescore::{rescore_trajectories, select_plan, RescoreParams};
pub use train::{train, EpochRecord, LossBreakdown, LossWeights, TrainConfig};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlannerError {
    #[error("{have} samples, need at least {need}")]
    NotEnoughSamples { have: usize, need: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("parameter mismatch: {0}")]
    Mismatch(String),
    #[error("cannot parse parameters: {0}")]
    Parse(String),
    #[error("{path}: {message}")]
    Io { path: String, message: String },
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error(transparent)]
    Fusion(#[from] FusionError),
    #[error(transparent)]
    Loss(#[from] LossError),
}

impl PlannerError {
    pub fn io(path: &Path, e: std::io::Error) -> Self {
        PlannerError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }
}
