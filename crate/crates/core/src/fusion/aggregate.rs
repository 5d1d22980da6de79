//! Radar-to-query aggregation for box and polyline queries.

use std::cmp::Ordering;

use ndarray::Array2;

use crate::autodiff::{Tape, Var};
use crate::geometry::point_polyline_distance;
use crate::model::{AgentInstance, FusionConfig, MapPolyline, Point2, Point3};

use super::attention::{AttentionSpec, KeyRef};
use super::network::CrossAttention;
use super::{FusionError, RadarFeature};

/// Orders candidate keys by distance, then by key position, so the selected
/// neighborhood and its summation order do not depend on input order.
fn order_keys(a: &(f64, usize), b: &(f64, usize), positions: &[Point3]) -> Ordering {
    a.0.total_cmp(&b.0).then_with(|| {
        let (pa, pb) = (positions[a.1], positions[b.1]);
        pa[0].total_cmp(&pb[0])
            .then(pa[1].total_cmp(&pb[1]))
            .then(pa[2].total_cmp(&pb[2]))
    })
}

/// The `k` nearest keys within `max_distance`, using `distance(key)`.
pub fn nearest_keys(
    positions: &[Point3],
    k: usize,
    max_distance: f64,
    distance: impl Fn(&Point3) -> f64,
) -> Vec<KeyRef> {
    let mut cand: Vec<(f64, usize)> = positions
        .iter()
        .enumerate()
        .map(|(i, p)| (distance(p), i))
        .filter(|(d, _)| *d <= max_distance)
        .collect();
    if cand.len() > k {
        cand.select_nth_unstable_by(k - 1, |a, b| order_keys(a, b, positions));
        cand.truncate(k);
    }
    cand.sort_by(|a, b| order_keys(a, b, positions));
    cand.into_iter()
        .map(|(distance, index)| KeyRef { index, distance })
        .collect()
}

pub fn euclidean3(a: Point3, b: Point3) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

/// Top-k radar neighbors of each box center by Euclidean distance.
pub fn agent_neighbors(centers: &[Point3], radar: &[Point3], cfg: &FusionConfig) -> Vec<Vec<KeyRef>> {
    centers
        .iter()
        .map(|&c| nearest_keys(radar, cfg.topk_radar, cfg.r_max, |p| euclidean3(c, *p)))
        .collect()
}

/// Top-k radar neighbors of each polyline by BEV point-to-polyline distance.
pub fn map_neighbors(polylines: &[Vec<Point2>], radar: &[Point3], cfg: &FusionConfig) -> Vec<Vec<KeyRef>> {
    polylines
        .iter()
        .map(|wp| {
            nearest_keys(radar, cfg.topk_radar, cfg.r_max, |p| {
                point_polyline_distance([p[0], p[1]], wp).map_or(f64::INFINITY, |r| r.distance)
            })
        })
        .collect()
}

/// Adds attention over `keys` to the rows of `features` that have at least
/// one neighbor; other rows pass through untouched.
#[allow(clippy::too_many_arguments)]
pub fn residual_attention(
    tape: &mut Tape,
    features: Var,
    query_embed: Option<Var>,
    keys: Var,
    neighbors: Vec<Vec<KeyRef>>,
    spec: AttentionSpec,
    projection: Option<&CrossAttention>,
) -> Var {
    let active: Vec<usize> = (0..neighbors.len()).filter(|&i| !neighbors[i].is_empty()).collect();
    if active.is_empty() {
        return features;
    }
    let query_src = match query_embed {
        Some(pe) => tape.add(features, pe),
        None => features,
    };
    let gathered = tape.mix(query_src, active.iter().map(|&i| vec![(i, 1.0)]).collect());
    let active_neighbors: Vec<Vec<KeyRef>> = active.iter().map(|&i| neighbors[i].clone()).collect();
    let update = match projection {
        Some(p) => p.apply(tape, gathered, keys, keys, active_neighbors, spec),
        None => tape.attention(gathered, keys, keys, active_neighbors, spec),
    };
    let mut scatter = vec![Vec::new(); neighbors.len()];
    for (slot, &i) in active.iter().enumerate() {
        scatter[i] = vec![(slot, 1.0)];
    }
    let full = tape.mix(update, scatter);
    tape.add(features, full)
}

/// Result of a parameter-free aggregation: updated features and the
/// head-averaged attention weights per radar index.
#[derive(Clone, Debug, PartialEq)]
pub struct Aggregation {
    pub features: Vec<Vec<f64>>,
    pub weights: Vec<Vec<(usize, f64)>>,
}

fn feature_matrix(rows: &[&[f64]], dim: usize) -> Result<Array2<f64>, FusionError> {
    let mut m = Array2::zeros((rows.len(), dim));
    for (i, r) in rows.iter().enumerate() {
        if r.len() != dim {
            return Err(FusionError::Shape(format!("feature {i} has dimension {}, expected {dim}", r.len())));
        }
        for (j, &v) in r.iter().enumerate() {
            m[[i, j]] = v;
        }
    }
    Ok(m)
}

fn aggregate(
    query_features: &[&[f64]],
    radar: &[RadarFeature],
    neighbors: Vec<Vec<KeyRef>>,
    cfg: &FusionConfig,
) -> Result<Aggregation, FusionError> {
    let dim = query_features.first().map_or(0, |f| f.len());
    let queries = feature_matrix(query_features, dim)?;
    if radar.is_empty() {
        return Ok(Aggregation {
            features: query_features.iter().map(|f| f.to_vec()).collect(),
            weights: vec![Vec::new(); query_features.len()],
        });
    }
    let radar_rows: Vec<&[f64]> = radar.iter().map(|r| r.feature.as_slice()).collect();
    let keys = feature_matrix(&radar_rows, dim)?;
    let heads = if dim % cfg.num_heads == 0 { cfg.num_heads } else { 1 };
    let spec = AttentionSpec {
        alpha: cfg.alpha,
        r_max: cfg.r_max,
        heads,
    };
    let (_, w) = super::attention::attend(&queries, &keys, &keys, &neighbors, spec);
    let weights = neighbors
        .iter()
        .zip(&w)
        .map(|(nb, wr)| {
            let n = nb.len();
            nb.iter()
                .enumerate()
                .map(|(j, kr)| (kr.index, (0..heads).map(|h| wr[h * n + j]).sum::<f64>() / heads as f64))
                .collect()
        })
        .collect();

    let store = crate::autodiff::ParamStore::new();
    let mut tape = Tape::new(&store);
    let q = tape.constant(queries);
    let k = tape.constant(keys);
    let out = residual_attention(&mut tape, q, None, k, neighbors, spec, None);
    let features = tape.value(out).rows().into_iter().map(|r| r.to_vec()).collect();
    Ok(Aggregation { features, weights })
}

/// Residually adds range-adaptive attention over the nearest radar features
/// to every agent feature (identity projections).
pub fn aggregate_agent_queries(
    agents: &[AgentInstance],
    radar: &[RadarFeature],
    cfg: &FusionConfig,
) -> Result<Aggregation, FusionError> {
    let centers: Vec<Point3> = agents.iter().map(|a| a.anchor.center()).collect();
    let positions: Vec<Point3> = radar.iter().map(|r| r.position).collect();
    let neighbors = agent_neighbors(&centers, &positions, cfg);
    let feats: Vec<&[f64]> = agents.iter().map(|a| a.feature.as_slice()).collect();
    aggregate(&feats, radar, neighbors, cfg)
}

/// Polyline counterpart of [`aggregate_agent_queries`]: the distance penalty
/// uses the minimum BEV distance between radar point and polyline.
pub fn aggregate_map_queries(
    maps: &[MapPolyline],
    radar: &[RadarFeature],
    cfg: &FusionConfig,
) -> Result<Aggregation, FusionError> {
    let polylines: Vec<Vec<Point2>> = maps.iter().map(|m| m.waypoints.clone()).collect();
    for (i, p) in polylines.iter().enumerate() {
        if p.len() < 2 {
            return Err(FusionError::Shape(format!("polyline {i} has {} waypoints", p.len())));
        }
    }
    let positions: Vec<Point3> = radar.iter().map(|r| r.position).collect();
    let neighbors = map_neighbors(&polylines, &positions, cfg);
    let feats: Vec<&[f64]> = maps.iter().map(|m| m.feature.as_slice()).collect();
    aggregate(&feats, radar, neighbors, cfg)
}
