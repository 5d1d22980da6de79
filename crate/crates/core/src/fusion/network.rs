//! Parameter layout of the fusion network.

use rand::Rng;

use crate::autodiff::{ParamId, ParamStore, Tape, Var};
use crate::model::{FusionConfig, ANCHOR_DIM};

use super::attention::{AttentionSpec, KeyRef};

/// Inputs lifted from each radar point before encoding.
pub const RADAR_INPUT_DIM: usize = 8;
/// Keypoints sampled per agent box: center plus the six face centers.
pub const AGENT_KEYPOINTS: usize = 7;
/// Waypoints sampled per map polyline for perspective aggregation.
pub const MAP_KEYPOINTS: usize = 5;

/// Output scaling of the anchor refinement head, in encoded anchor units.
pub const ANCHOR_DELTA_SCALE: [f64; ANCHOR_DIM] = [4.0, 4.0, 0.5, 0.3, 0.3, 0.3, 0.5, 0.5, 5.0, 5.0, 0.5];
/// Initial classifier bias, sigmoid(-2.2) ≈ 0.1.
pub const CLASS_PRIOR_LOGIT: f64 = -2.2;
/// Output scaling of the waypoint refinement head, meters.
pub const WAYPOINT_DELTA_SCALE: f64 = 2.0;

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
}

impl Linear {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, inputs: usize, outputs: usize, gain: f64, rng: &mut R) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), inputs, outputs, gain, rng);
        let bias = store.add(format!("{name}.bias"), ndarray::Array2::zeros((1, outputs)));
        Linear { weight, bias }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        tape.linear(x, self.weight, self.bias)
    }
}

/// Two affine maps with a ReLU in between.
#[derive(Clone, Copy, Debug)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dims: [usize; 3], gain: f64, rng: &mut R) -> Self {
        Mlp {
            hidden: Linear::new(store, &format!("{name}.0"), dims[0], dims[1], 1.0, rng),
            output: Linear::new(store, &format!("{name}.1"), dims[1], dims[2], gain, rng),
        }
    }

    pub fn apply(&self, tape: &mut Tape, x: Var) -> Var {
        let h = self.hidden.apply(tape, x);
        let h = tape.relu(h);
        self.output.apply(tape, h)
    }
}

/// Projected multi-head attention with an output projection.
#[derive(Clone, Copy, Debug)]
pub struct CrossAttention {
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub output: Linear,
}

impl CrossAttention {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, rng: &mut R) -> Self {
        CrossAttention {
            query: Linear::new(store, &format!("{name}.query"), dim, dim, 1.0, rng),
            key: Linear::new(store, &format!("{name}.key"), dim, dim, 1.0, rng),
            value: Linear::new(store, &format!("{name}.value"), dim, dim, 1.0, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, 0.5, rng),
        }
    }

    pub fn apply(
        &self,
        tape: &mut Tape,
        queries: Var,
        keys: Var,
        values: Var,
        neighbors: Vec<Vec<KeyRef>>,
        spec: AttentionSpec,
    ) -> Var {
        let q = self.query.apply(tape, queries);
        let k = self.key.apply(tape, keys);
        let v = self.value.apply(tape, values);
        let a = tape.attention(q, k, v, neighbors, spec);
        self.output.apply(tape, a)
    }
}

/// Keypoint weighting and output projection of perspective aggregation.
#[derive(Clone, Copy, Debug)]
pub struct DeformableAggregation {
    pub keypoint_logits: Linear,
    pub output: Linear,
}

impl DeformableAggregation {
    pub fn new<R: Rng>(store: &mut ParamStore, name: &str, dim: usize, keypoints: usize, rng: &mut R) -> Self {
        DeformableAggregation {
            keypoint_logits: Linear::new(store, &format!("{name}.keypoint_logits"), dim, keypoints, 0.1, rng),
            output: Linear::new(store, &format!("{name}.output"), dim, dim, 0.5, rng),
        }
    }
}

#[derive(Clone, Debug)]
pub struct DecoderLayerParams {
    pub agent_radar: CrossAttention,
    pub map_radar: CrossAttention,
    pub agent_deform: DeformableAggregation,
    pub map_deform: DeformableAggregation,
    pub agent_self: CrossAttention,
    pub map_self: CrossAttention,
    pub agent_ffn: Mlp,
    pub map_ffn: Mlp,
    pub agent_refine: Linear,
    pub agent_class: Linear,
    pub map_refine: Linear,
    pub map_class: Linear,
}

/// Every learnable block of the fusion network.
#[derive(Clone, Debug)]
pub struct FusionNetwork {
    pub embed_dim: usize,
    pub camera_channels: usize,
    pub encoder: Mlp,
    pub camera_proj: Linear,
    pub frustum: CrossAttention,
    pub ego_init: Linear,
    pub agent_pos: Mlp,
    pub map_pos: Mlp,
    pub layers: Vec<DecoderLayerParams>,
}

impl FusionNetwork {
    pub fn build<R: Rng>(store: &mut ParamStore, cfg: &FusionConfig, camera_channels: usize, rng: &mut R) -> Self {
        let c = cfg.embed_dim;
        let np = cfg.map_waypoints;
        let encoder = Mlp::new(store, "encoder", [RADAR_INPUT_DIM, c, c], 1.0, rng);
        let camera_proj = Linear::new(store, "camera_proj", camera_channels, c, 1.0, rng);
        let frustum = CrossAttention::new(store, "frustum", c, rng);
        let ego_init = Linear::new(store, "ego_init", c, c, 1.0, rng);
        let agent_pos = Mlp::new(store, "agent_pos", [ANCHOR_DIM, c, c], 1.0, rng);
        let map_pos = Mlp::new(store, "map_pos", [2 * np, c, c], 1.0, rng);
        let layers = (0..cfg.num_decoder_layers)
            .map(|i| {
                let p = format!("decoder.{i}");
                let layer = DecoderLayerParams {
                    agent_radar: CrossAttention::new(store, &format!("{p}.agent_radar"), c, rng),
                    map_radar: CrossAttention::new(store, &format!("{p}.map_radar"), c, rng),
                    agent_deform: DeformableAggregation::new(store, &format!("{p}.agent_deform"), c, AGENT_KEYPOINTS, rng),
                    map_deform: DeformableAggregation::new(store, &format!("{p}.map_deform"), c, MAP_KEYPOINTS, rng),
                    agent_self: CrossAttention::new(store, &format!("{p}.agent_self"), c, rng),
                    map_self: CrossAttention::new(store, &format!("{p}.map_self"), c, rng),
                    agent_ffn: Mlp::new(store, &format!("{p}.agent_ffn"), [c, 2 * c, c], 0.5, rng),
                    map_ffn: Mlp::new(store, &format!("{p}.map_ffn"), [c, 2 * c, c], 0.5, rng),
                    agent_refine: Linear::new(store, &format!("{p}.agent_refine"), c, ANCHOR_DIM, 0.1, rng),
                    agent_class: Linear::new(store, &format!("{p}.agent_class"), c, crate::model::AgentClass::COUNT, 0.1, rng),
                    map_refine: Linear::new(store, &format!("{p}.map_refine"), c, 2 * np, 0.1, rng),
                    map_class: Linear::new(store, &format!("{p}.map_class"), c, crate::model::MapClass::COUNT, 0.1, rng),
                };
                // Start classifiers at a low foreground prior.
                store.get_mut(layer.agent_class.bias).fill(CLASS_PRIOR_LOGIT);
                store.get_mut(layer.map_class.bias).fill(CLASS_PRIOR_LOGIT);
                layer
            })
            .collect();
        FusionNetwork {
            embed_dim: c,
            camera_channels,
            encoder,
            camera_proj,
            frustum,
            ego_init,
            agent_pos,
            map_pos,
            layers,
        }
    }
}
