//! One decoder block: radar aggregation, perspective aggregation at box
//! keypoints, self-attention, feed-forward and anchor refinement.

use ndarray::Array2;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::model::{
    AgentInstance, Anchor, CameraView, FusionConfig, MapPolyline, Point2, Point3, ANCHOR_DIM,
};

use super::aggregate::{agent_neighbors, map_neighbors, residual_attention};
use super::attention::{AttentionSpec, KeyRef};
use super::encoder::RadarContext;
use super::frustum::{camera_context, CameraContext};
use super::network::{
    DeformableAggregation, DecoderLayerParams, FusionNetwork, Mlp, AGENT_KEYPOINTS, ANCHOR_DELTA_SCALE,
    MAP_KEYPOINTS, WAYPOINT_DELTA_SCALE,
};
use super::{FusionError, RadarFeature};

const VELOCITY_NORM: f64 = 10.0;
const LOG_SIZE_RANGE: (f64, f64) = (-1.6, 3.0);

/// Agent queries on a tape. Anchors are plain values: refinement deltas are
/// applied to them but gradients do not flow back through earlier anchors.
#[derive(Clone, Debug)]
pub struct AgentQueries {
    pub features: Var,
    pub anchors: Vec<Anchor>,
}

#[derive(Clone, Debug)]
pub struct MapQueries {
    pub features: Var,
    pub polylines: Vec<Vec<Point2>>,
}

/// Per-layer predictions used for supervision.
#[derive(Clone, Copy, Debug)]
pub struct LayerOutput {
    /// Refined anchors in encoded form, `N × 11`.
    pub agent_boxes: Var,
    pub agent_logits: Var,
    /// Refined waypoints, `N_m × 2·N_p`, interleaved x/y.
    pub map_points: Var,
    pub map_logits: Var,
}

/// Normalized anchor parameters fed to the positional embedding.
pub fn anchor_embedding_input(a: &Anchor, r_max: f64) -> [f64; ANCHOR_DIM] {
    let mut e = a.encode();
    e[0] /= r_max;
    e[1] /= r_max;
    e[8] /= VELOCITY_NORM;
    e[9] /= VELOCITY_NORM;
    e[10] /= VELOCITY_NORM;
    e
}

pub fn agent_position_embedding(tape: &mut Tape, pos: &Mlp, anchors: &[Anchor], r_max: f64) -> Var {
    let m = Array2::from_shape_fn((anchors.len(), ANCHOR_DIM), |(i, j)| anchor_embedding_input(&anchors[i], r_max)[j]);
    let x = tape.constant(m);
    pos.apply(tape, x)
}

pub fn map_position_embedding(tape: &mut Tape, pos: &Mlp, polylines: &[Vec<Point2>], r_max: f64) -> Var {
    let np = polylines.first().map_or(0, |p| p.len());
    let m = Array2::from_shape_fn((polylines.len(), 2 * np), |(i, j)| polylines[i][j / 2][j % 2] / r_max);
    let x = tape.constant(m);
    pos.apply(tape, x)
}

/// Center plus the six face centers of a box, in the ego frame.
pub fn box_keypoints(a: &Anchor) -> [Point3; AGENT_KEYPOINTS] {
    let (s, c) = (a.sin_yaw, a.cos_yaw);
    let local = [
        [0.0, 0.0, 0.0],
        [0.5 * a.l, 0.0, 0.0],
        [-0.5 * a.l, 0.0, 0.0],
        [0.0, 0.5 * a.w, 0.0],
        [0.0, -0.5 * a.w, 0.0],
        [0.0, 0.0, 0.5 * a.h],
        [0.0, 0.0, -0.5 * a.h],
    ];
    local.map(|[lx, ly, lz]| [a.x + c * lx - s * ly, a.y + s * lx + c * ly, a.z + lz])
}

/// Evenly spaced waypoints of a polyline, on the ground plane.
pub fn polyline_keypoints(wp: &[Point2]) -> [Point3; MAP_KEYPOINTS] {
    std::array::from_fn(|k| {
        let idx = if MAP_KEYPOINTS == 1 { 0 } else { k * (wp.len() - 1) / (MAP_KEYPOINTS - 1) };
        [wp[idx][0], wp[idx][1], 0.0]
    })
}

fn perspective_aggregation(
    tape: &mut Tape,
    params: &DeformableAggregation,
    features: Var,
    query_embed: Var,
    keypoints: &[Vec<Point3>],
    camera: &CameraContext,
) -> Var {
    let n = keypoints.len();
    let k = keypoints.first().map_or(0, |k| k.len());
    let q = tape.add(features, query_embed);
    let logits = params.keypoint_logits.apply(tape, q);
    let weights = tape.softmax_rows(logits);
    let mut agg: Option<Var> = None;
    for kp in 0..k {
        let entries: Vec<Vec<(usize, f64)>> = (0..n).map(|i| camera.sample_entries(keypoints[i][kp])).collect();
        let sampled = tape.mix(camera.cells, entries);
        let w = tape.cols(weights, kp, 1);
        let weighted = tape.mul_rows(sampled, w);
        agg = Some(match agg {
            Some(a) => tape.add(a, weighted),
            None => weighted,
        });
    }
    let Some(agg) = agg else { return features };
    let out = params.output.apply(tape, agg);
    let sum = tape.add(features, out);
    tape.norm_rows(sum)
}

fn self_attention(tape: &mut Tape, params: &super::network::CrossAttention, features: Var, embed: Var, heads: usize) -> Var {
    let n = tape.shape(features).0;
    let q = tape.add(features, embed);
    let neighbors: Vec<Vec<KeyRef>> = (0..n)
        .map(|_| (0..n).map(|j| KeyRef { index: j, distance: 0.0 }).collect())
        .collect();
    let spec = AttentionSpec {
        alpha: 0.0,
        r_max: 1.0,
        heads,
    };
    let qp = params.query.apply(tape, q);
    let kp = params.key.apply(tape, q);
    let vp = params.value.apply(tape, features);
    let a = tape.attention(qp, kp, vp, neighbors, spec);
    let out = params.output.apply(tape, a);
    let sum = tape.add(features, out);
    tape.norm_rows(sum)
}

fn feed_forward(tape: &mut Tape, ffn: &Mlp, features: Var) -> Var {
    let out = ffn.apply(tape, features);
    let sum = tape.add(features, out);
    tape.norm_rows(sum)
}

/// Decodes refined anchor values, keeping log-sizes in a sane range.
pub fn decode_anchor_row(row: &[f64]) -> Anchor {
    let mut e = [0.0; ANCHOR_DIM];
    e.copy_from_slice(row);
    for v in &mut e[3..6] {
        *v = v.clamp(LOG_SIZE_RANGE.0, LOG_SIZE_RANGE.1);
    }
    Anchor::decode(e)
}

/// Runs one decoder block on the tape. `ego` (a `1 × C` feature with its
/// fixed anchor) joins the agent set for every stage except refinement.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer_tape(
    tape: &mut Tape,
    layer: &DecoderLayerParams,
    net: &FusionNetwork,
    agents: AgentQueries,
    ego: Option<(Var, Anchor)>,
    maps: MapQueries,
    radar: Option<&RadarContext>,
    camera: &CameraContext,
    cfg: &FusionConfig,
) -> (AgentQueries, Option<Var>, MapQueries, LayerOutput) {
    let n_agents = agents.anchors.len();
    let mut all_anchors = agents.anchors.clone();
    let mut features = agents.features;
    if let Some((ef, ea)) = ego {
        all_anchors.push(ea);
        features = tape.concat_rows(&[features, ef]);
    }
    let mut map_features = maps.features;

    let agent_pe = agent_position_embedding(tape, &net.agent_pos, &all_anchors, cfg.r_max);
    let map_pe = map_position_embedding(tape, &net.map_pos, &maps.polylines, cfg.r_max);
    let radar_spec = AttentionSpec {
        alpha: cfg.alpha,
        r_max: cfg.r_max,
        heads: cfg.num_heads,
    };

    // Radar aggregation. Every residual sub-layer ends in a row
    // normalization so feature scale cannot compound across layers.
    if let Some(r) = radar {
        let centers: Vec<Point3> = all_anchors.iter().map(|a| a.center()).collect();
        let nb = agent_neighbors(&centers, &r.positions, cfg);
        let f = residual_attention(tape, features, Some(agent_pe), r.features, nb, radar_spec, Some(&layer.agent_radar));
        features = tape.norm_rows(f);
        let nb = map_neighbors(&maps.polylines, &r.positions, cfg);
        let m = residual_attention(tape, map_features, Some(map_pe), r.features, nb, radar_spec, Some(&layer.map_radar));
        map_features = tape.norm_rows(m);
    }

    // Perspective aggregation at fixed keypoints.
    let agent_kp: Vec<Vec<Point3>> = all_anchors.iter().map(|a| box_keypoints(a).to_vec()).collect();
    features = perspective_aggregation(tape, &layer.agent_deform, features, agent_pe, &agent_kp, camera);
    let map_kp: Vec<Vec<Point3>> = maps.polylines.iter().map(|p| polyline_keypoints(p).to_vec()).collect();
    map_features = perspective_aggregation(tape, &layer.map_deform, map_features, map_pe, &map_kp, camera);

    features = self_attention(tape, &layer.agent_self, features, agent_pe, cfg.num_heads);
    map_features = self_attention(tape, &layer.map_self, map_features, map_pe, cfg.num_heads);

    features = feed_forward(tape, &layer.agent_ffn, features);
    map_features = feed_forward(tape, &layer.map_ffn, map_features);

    let (agent_features, ego_out) = if ego.is_some() {
        let a = tape.rows(features, 0, n_agents);
        let e = tape.rows(features, n_agents, 1);
        (a, Some(e))
    } else {
        (features, None)
    };

    // Refinement.
    let delta = layer.agent_refine.apply(tape, agent_features);
    let delta = tape.scale_cols(delta, ANCHOR_DELTA_SCALE.to_vec());
    let base = Array2::from_shape_fn((n_agents, ANCHOR_DIM), |(i, j)| agents.anchors[i].encode()[j]);
    let base = tape.constant(base);
    let agent_boxes = tape.add(base, delta);
    let agent_logits = layer.agent_class.apply(tape, agent_features);

    let np = maps.polylines.first().map_or(0, |p| p.len());
    let mdelta = layer.map_refine.apply(tape, map_features);
    let mdelta = tape.scale(mdelta, WAYPOINT_DELTA_SCALE);
    let mbase = Array2::from_shape_fn((maps.polylines.len(), 2 * np), |(i, j)| maps.polylines[i][j / 2][j % 2]);
    let mbase = tape.constant(mbase);
    let map_points = tape.add(mbase, mdelta);
    let map_logits = layer.map_class.apply(tape, map_features);

    let new_anchors = tape
        .value(agent_boxes)
        .rows()
        .into_iter()
        .map(|r| decode_anchor_row(r.as_slice().expect("contiguous row")))
        .collect();
    let new_polylines = tape
        .value(map_points)
        .rows()
        .into_iter()
        .map(|r| (0..np).map(|k| [r[2 * k], r[2 * k + 1]]).collect())
        .collect();

    (
        AgentQueries {
            features: agent_features,
            anchors: new_anchors,
        },
        ego_out,
        MapQueries {
            features: map_features,
            polylines: new_polylines,
        },
        LayerOutput {
            agent_boxes,
            agent_logits,
            map_points,
            map_logits,
        },
    )
}

/// Refined agents and polylines after one decoder layer.
#[derive(Clone, Debug, PartialEq)]
pub struct DecodedLayer {
    pub agents: Vec<AgentInstance>,
    pub maps: Vec<MapPolyline>,
}

fn rows_to_matrix(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>, FusionError> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(FusionError::Shape(format!("feature {i} has dimension {}, expected {dim}", r.len())));
        }
        m.row_mut(i).assign(&ndarray::ArrayView1::from(*r));
    }
    Ok(m)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Value-level wrapper around [`decoder_layer_tape`] for layer `index`.
#[allow(clippy::too_many_arguments)]
pub fn decoder_layer(
    agents: &[AgentInstance],
    maps: &[MapPolyline],
    radar: &[RadarFeature],
    views: &[CameraView],
    net: &FusionNetwork,
    store: &ParamStore,
    index: usize,
    cfg: &FusionConfig,
) -> Result<DecodedLayer, FusionError> {
    let layer = net.layers.get(index).ok_or_else(|| FusionError::Shape(format!("no decoder layer {index}")))?;
    let c = net.embed_dim;
    let np = maps.first().map_or(cfg.map_waypoints, |m| m.waypoints.len());
    if maps.iter().any(|m| m.waypoints.len() != np) || np != cfg.map_waypoints {
        return Err(FusionError::Shape(format!("map polylines must have {} waypoints", cfg.map_waypoints)));
    }
    let mut tape = Tape::new(store);
    let camera = camera_context(&mut tape, net, views)?;
    let af: Vec<&[f64]> = agents.iter().map(|a| a.feature.as_slice()).collect();
    let mf: Vec<&[f64]> = maps.iter().map(|m| m.feature.as_slice()).collect();
    let agent_q = AgentQueries {
        features: tape.constant(rows_to_matrix(&af, c)?),
        anchors: agents.iter().map(|a| a.anchor).collect(),
    };
    let map_q = MapQueries {
        features: tape.constant(rows_to_matrix(&mf, c)?),
        polylines: maps.iter().map(|m| m.waypoints.clone()).collect(),
    };
    let radar_ctx = if radar.is_empty() {
        None
    } else {
        let rf: Vec<&[f64]> = radar.iter().map(|r| r.feature.as_slice()).collect();
        Some(RadarContext {
            features: tape.constant(rows_to_matrix(&rf, c)?),
            positions: radar.iter().map(|r| r.position).collect(),
        })
    };
    let (aq, _, mq, out) = decoder_layer_tape(&mut tape, layer, net, agent_q, None, map_q, radar_ctx.as_ref(), &camera, cfg);
    let af = tape.value(aq.features);
    let al = tape.value(out.agent_logits);
    let mfv = tape.value(mq.features);
    let ml = tape.value(out.map_logits);
    Ok(DecodedLayer {
        agents: agents
            .iter()
            .enumerate()
            .map(|(i, a)| AgentInstance {
                anchor: aq.anchors[i],
                feature: af.row(i).to_vec(),
                class_scores: al.row(i).iter().map(|&x| sigmoid(x)).collect(),
                instance_id: a.instance_id,
            })
            .collect(),
        maps: mq
            .polylines
            .iter()
            .enumerate()
            .map(|(i, wp)| MapPolyline {
                waypoints: wp.clone(),
                feature: mfv.row(i).to_vec(),
                class_scores: ml.row(i).iter().map(|&x| sigmoid(x)).collect(),
            })
            .collect(),
    })
}
