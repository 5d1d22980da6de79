//! Central-difference gradient verification.

use ndarray::Array2;

use super::attention::{attend, range_adaptive_attention_grad, AttentionInputs, AttentionSpec, KeyRef};
use super::FusionError;

/// Fourth-order central difference of `f` at `x`.
///
/// The five-point stencil keeps truncation error at O(eps⁴), which lets
/// `eps` stay large enough for round-off to be negligible.
pub fn numeric_gradient<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, FusionError> {
    if !(eps > 0.0) {
        return Err(FusionError::InvalidConfig("eps must be > 0".into()));
    }
    let f0 = f(x);
    if !f0.is_finite() {
        return Err(FusionError::NonFinite("f(x)".into()));
    }
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let mut at = |delta: f64| {
            xp[i] = x[i] + delta;
            let v = f(&xp);
            xp[i] = x[i];
            v
        };
        let (p1, m1, p2, m2) = (at(eps), at(-eps), at(2.0 * eps), at(-2.0 * eps));
        let gi = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        if !gi.is_finite() {
            return Err(FusionError::NonFinite(format!("difference at coordinate {i}")));
        }
        g.push(gi);
    }
    Ok(g)
}

/// Two-point central difference. For `f` linear in `x` it is exact up to
/// round-off at any step, so a large `eps` can be used.
pub fn central_difference<F: Fn(&[f64]) -> f64>(f: F, x: &[f64], eps: f64) -> Result<Vec<f64>, FusionError> {
    if !(eps > 0.0) {
        return Err(FusionError::InvalidConfig("eps must be > 0".into()));
    }
    let mut xp = x.to_vec();
    let mut g = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        xp[i] = x[i] + eps;
        let p = f(&xp);
        xp[i] = x[i] - eps;
        let m = f(&xp);
        xp[i] = x[i];
        let gi = (p - m) / (2.0 * eps);
        if !gi.is_finite() {
            return Err(FusionError::NonFinite(format!("difference at coordinate {i}")));
        }
        g.push(gi);
    }
    Ok(g)
}

/// max_i |analytic_i − fd_i| / max(1e-8, |fd_i|).
pub fn max_relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, n)| (a - n).abs() / n.abs().max(1e-8))
        .fold(0.0, f64::max)
}

/// Compares `analytic` with the central-difference gradient of `f` at `x`
/// and returns the maximum relative error.
pub fn finite_difference_gradcheck<F: Fn(&[f64]) -> f64>(
    f: F,
    x: &[f64],
    analytic: &[f64],
    eps: f64,
) -> Result<f64, FusionError> {
    if analytic.len() != x.len() {
        return Err(FusionError::Shape(format!(
            "{} analytic entries for {} coordinates",
            analytic.len(),
            x.len()
        )));
    }
    let fd = numeric_gradient(f, x, eps)?;
    Ok(max_relative_error(analytic, &fd))
}

/// Maximum relative gradient error per input block.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionGradcheck {
    pub queries: f64,
    pub keys: f64,
    pub values: f64,
    pub alpha: f64,
}

impl AttentionGradcheck {
    pub fn max(&self) -> f64 {
        self.queries.max(self.keys).max(self.values).max(self.alpha)
    }
}

fn weighted_sum(out: &Array2<f64>, grad_out: &Array2<f64>) -> f64 {
    out.iter().zip(grad_out.iter()).map(|(a, b)| a * b).sum()
}

fn with_flat(m: &Array2<f64>, x: &[f64]) -> Array2<f64> {
    Array2::from_shape_vec(m.raw_dim(), x.to_vec()).expect("same element count")
}

/// Checks the analytic gradient of `Σ grad_out ⊙ attention(inputs)` with
/// respect to queries, keys, values and α.
///
/// Each query row only influences its own output row, so query coordinates
/// are differenced against that row alone, with the five-point stencil.
pub fn attention_gradcheck(
    inputs: &AttentionInputs,
    alpha: f64,
    r_max: f64,
    grad_out: &Array2<f64>,
    eps: f64,
) -> Result<AttentionGradcheck, FusionError> {
    let analytic = range_adaptive_attention_grad(inputs, alpha, r_max, grad_out)?;
    let neighbors = inputs.dense_neighbors();
    let spec = AttentionSpec::single_head(alpha, r_max);
    let (q, k, v) = (&inputs.queries, &inputs.keys, &inputs.values);

    let mut queries = 0.0f64;
    for i in 0..q.nrows() {
        let row_nb: Vec<Vec<KeyRef>> = vec![neighbors[i].clone()];
        let go = grad_out.row(i).to_owned().insert_axis(ndarray::Axis(0));
        let x: Vec<f64> = q.row(i).to_vec();
        let f = |xq: &[f64]| {
            let qi = Array2::from_shape_vec((1, xq.len()), xq.to_vec()).expect("row");
            weighted_sum(&attend(&qi, k, v, &row_nb, spec).0, &go)
        };
        let a: Vec<f64> = analytic.queries.row(i).to_vec();
        queries = queries.max(finite_difference_gradcheck(f, &x, &a, eps)?);
    }

    // Keys dominate the cost; the two-point stencil at `eps` ≈ 1e-4 balances
    // truncation against round-off well enough.
    let kx: Vec<f64> = k.iter().copied().collect();
    let fd = central_difference(
        |x: &[f64]| weighted_sum(&attend(q, &with_flat(k, x), v, &neighbors, spec).0, grad_out),
        &kx,
        eps,
    )?;
    let keys = max_relative_error(&analytic.keys.iter().copied().collect::<Vec<_>>(), &fd);
    // The output is linear in the values, so a unit step loses nothing.
    let vx: Vec<f64> = v.iter().copied().collect();
    let fd = central_difference(
        |x: &[f64]| weighted_sum(&attend(q, k, &with_flat(v, x), &neighbors, spec).0, grad_out),
        &vx,
        1.0,
    )?;
    let values = max_relative_error(&analytic.values.iter().copied().collect::<Vec<_>>(), &fd);
    let alpha_err = finite_difference_gradcheck(
        |x: &[f64]| {
            let s = AttentionSpec::single_head(x[0], r_max);
            weighted_sum(&attend(q, k, v, &neighbors, s).0, grad_out)
        },
        &[alpha],
        &[analytic.alpha],
        eps,
    )?;
    Ok(AttentionGradcheck {
        queries,
        keys,
        values,
        alpha: alpha_err,
    })
}
