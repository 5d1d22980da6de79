//! Per-point radar encoder.
//!
//! Each return is lifted to `(x, y, z, rcs, doppler, sweep_offset)` plus the
//! Doppler velocity resolved along the BEV line of sight, then passed through
//! a two-layer feed-forward network.

use ndarray::Array2;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::model::{Point3, RadarPoint};

use super::network::{FusionNetwork, RADAR_INPUT_DIM};
use super::{FusionError, RadarFeature};

const RCS_SCALE: f64 = 10.0;
const VELOCITY_SCALE: f64 = 10.0;

pub fn radar_inputs(points: &[RadarPoint], r_max: f64) -> Result<Array2<f64>, FusionError> {
    let mut out = Array2::zeros((points.len(), RADAR_INPUT_DIM));
    for (i, p) in points.iter().enumerate() {
        if !p.is_finite() {
            return Err(FusionError::NonFinite(format!("radar point {i}")));
        }
        let [x, y, z] = p.position;
        let r = x.hypot(y);
        let (ux, uy) = if r > 1e-9 { (x / r, y / r) } else { (0.0, 0.0) };
        let row = [
            x / r_max,
            y / r_max,
            z,
            p.rcs / RCS_SCALE,
            p.doppler / VELOCITY_SCALE,
            p.sweep_offset,
            p.doppler * ux / VELOCITY_SCALE,
            p.doppler * uy / VELOCITY_SCALE,
        ];
        for (o, v) in out.row_mut(i).iter_mut().zip(row) {
            *o = v;
        }
    }
    Ok(out)
}

/// Encoded radar returns living on a tape.
#[derive(Clone, Debug)]
pub struct RadarContext {
    pub features: Var,
    pub positions: Vec<Point3>,
}

/// Encodes radar on the tape; `None` when there are no returns.
pub fn encode_radar_tape(
    tape: &mut Tape,
    net: &FusionNetwork,
    points: &[RadarPoint],
    r_max: f64,
) -> Result<Option<RadarContext>, FusionError> {
    if points.is_empty() {
        return Ok(None);
    }
    let inputs = tape.constant(radar_inputs(points, r_max)?);
    let features = net.encoder.apply(tape, inputs);
    Ok(Some(RadarContext {
        features,
        positions: points.iter().map(|p| p.position).collect(),
    }))
}

pub fn encode_radar_points(
    points: &[RadarPoint],
    net: &FusionNetwork,
    store: &ParamStore,
    r_max: f64,
) -> Result<Vec<RadarFeature>, FusionError> {
    let mut tape = Tape::new(store);
    let Some(ctx) = encode_radar_tape(&mut tape, net, points, r_max)? else {
        return Ok(Vec::new());
    };
    let values = tape.value(ctx.features);
    Ok(values
        .rows()
        .into_iter()
        .zip(ctx.positions)
        .map(|(row, position)| RadarFeature {
            feature: row.to_vec(),
            position,
        })
        .collect())
}
