//! Planning, motion and detection metrics, and the report built from them.

pub mod detection;
pub mod motion;
pub mod planning;
pub mod report;

use thiserror::Error;

use crate::losses::LossError;
use crate::planner::PlannerError;

pub use detection::{detection_map, nds, DetectionBox, DetectionFrame, DetectionMetrics, DISTANCE_THRESHOLDS};
pub use motion::{motion_metrics, MotionFrame, MotionMetrics, MotionPrediction, MotionTruth};
pub use planning::{
    collision_rate, l2_at_horizons, tpc, EgoFootprint, HorizonValues, PlanningRecord, LONG_HORIZONS, SHORT_HORIZONS,
};
pub use report::{evaluate_suite, EvalOutput, EvalReport, FrameSeries, Predictor};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("horizon {horizon} s needs more than the {points} available points")]
    HorizonBeyondPlan { horizon: f64, points: usize },
    #[error("{0}")]
    Empty(String),
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error(transparent)]
    Planner(#[from] PlannerError),
}
