//! Sparse camera-radar fusion: radar encoding, range-adaptive attention,
//! query aggregation, frustum fusion and the decoder block.

pub mod aggregate;
pub mod attention;
pub mod decoder;
pub mod encoder;
pub mod frustum;
pub mod gradcheck;
pub mod network;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Point3;

pub use aggregate::{aggregate_agent_queries, aggregate_map_queries, Aggregation};
pub use attention::{
    attention_weights, range_adaptive_attention, range_adaptive_attention_grad, scaled_dot_product_attention,
    AttentionGrads, AttentionInputs, AttentionSpec, KeyRef,
};
pub use decoder::{decoder_layer, DecodedLayer};
pub use encoder::encode_radar_points;
pub use frustum::{ego_query_init, frustum_cross_attention};
pub use gradcheck::{attention_gradcheck, finite_difference_gradcheck, AttentionGradcheck};
pub use network::FusionNetwork;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FusionError {
    #[error("attention needs at least one key")]
    EmptyKeys,
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("all camera grids are empty")]
    EmptyGrids,
}

/// An encoded radar return.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RadarFeature {
    pub feature: Vec<f64>,
    /// Ego-frame position after sweep compensation.
    pub position: Point3,
}
