//! Range-adaptive attention: scaled dot-product attention whose logits are
//! penalized by the normalized distance between query and key positions,
//!
//! `softmax(q·kᵀ/√d − α·‖p_q − p_k‖/r_max) · v`.
//!
//! The kernel works on per-query key lists so the same code serves dense
//! attention, top-k radar neighborhoods and masked image cells. With several
//! heads the penalty is applied identically in every head.

use ndarray::{Array2, ArrayView1};

use super::FusionError;

/// One key visible to a query, with the distance used by the penalty.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeyRef {
    pub index: usize,
    pub distance: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AttentionSpec {
    pub alpha: f64,
    pub r_max: f64,
    pub heads: usize,
}

impl AttentionSpec {
    pub fn single_head(alpha: f64, r_max: f64) -> Self {
        AttentionSpec {
            alpha,
            r_max,
            heads: 1,
        }
    }
}

/// Dense inputs for the single-head form.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionInputs {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub query_positions: Array2<f64>,
    pub key_positions: Array2<f64>,
}

impl AttentionInputs {
    pub fn check(&self) -> Result<(), FusionError> {
        let nq = self.queries.nrows();
        let nk = self.keys.nrows();
        let d = self.queries.ncols();
        if nk == 0 {
            return Err(FusionError::EmptyKeys);
        }
        let ok = d > 0
            && self.keys.ncols() == d
            && self.values.nrows() == nk
            && self.query_positions.nrows() == nq
            && self.key_positions.nrows() == nk
            && self.query_positions.ncols() == self.key_positions.ncols();
        if ok {
            Ok(())
        } else {
            Err(FusionError::Shape(format!(
                "q {:?}, k {:?}, v {:?}, p_q {:?}, p_k {:?}",
                self.queries.dim(),
                self.keys.dim(),
                self.values.dim(),
                self.query_positions.dim(),
                self.key_positions.dim()
            )))
        }
    }

    /// Every key for every query, with Euclidean position distances.
    pub fn dense_neighbors(&self) -> Vec<Vec<KeyRef>> {
        dense_neighbors(&self.query_positions, &self.key_positions)
    }
}

pub fn dense_neighbors(query_positions: &Array2<f64>, key_positions: &Array2<f64>) -> Vec<Vec<KeyRef>> {
    query_positions
        .rows()
        .into_iter()
        .map(|pq| {
            key_positions
                .rows()
                .into_iter()
                .enumerate()
                .map(|(index, pk)| KeyRef {
                    index,
                    distance: euclidean(pq, pk),
                })
                .collect()
        })
        .collect()
}

fn euclidean(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Dot product with four independent accumulators so the loop vectorizes.
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0; 4];
    let (ca, cb) = (a.chunks_exact(4), b.chunks_exact(4));
    let tail: f64 = ca.remainder().iter().zip(cb.remainder()).map(|(x, y)| x * y).sum();
    for (x, y) in ca.zip(cb) {
        for l in 0..4 {
            acc[l] += x[l] * y[l];
        }
    }
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

/// Attention weights of every query, laid out as `heads × neighbors`.
pub type AttentionWeights = Vec<Vec<f64>>;

pub fn attend(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    neighbors: &[Vec<KeyRef>],
    spec: AttentionSpec,
) -> (Array2<f64>, AttentionWeights) {
    let d = q.ncols();
    let dv = v.ncols();
    let heads = spec.heads.max(1);
    let dh = d / heads;
    let dvh = dv / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    // Flat row-major views keep the inner loops free of index arithmetic.
    let (q, k, v) = (q.as_standard_layout(), k.as_standard_layout(), v.as_standard_layout());
    let (qf, kf, vf) = (q.as_slice().expect("standard"), k.as_slice().expect("standard"), v.as_slice().expect("standard"));
    let mut out = vec![0.0; q.nrows() * dv];
    let mut weights = Vec::with_capacity(q.nrows());
    let mut logits = Vec::new();
    for (i, keys) in neighbors.iter().enumerate() {
        let n = keys.len();
        let mut w_row = vec![0.0; heads * n];
        if n == 0 {
            weights.push(w_row);
            continue;
        }
        for h in 0..heads {
            let qh = &qf[i * d + h * dh..i * d + (h + 1) * dh];
            logits.clear();
            for kr in keys {
                let kh = &kf[kr.index * d + h * dh..kr.index * d + (h + 1) * dh];
                let s = dot(qh, kh);
                logits.push(s * scale - spec.alpha * kr.distance / spec.r_max);
            }
            let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut z = 0.0;
            for l in logits.iter_mut() {
                *l = (*l - m).exp();
                z += *l;
            }
            let oh = &mut out[i * dv + h * dvh..i * dv + (h + 1) * dvh];
            for (j, kr) in keys.iter().enumerate() {
                let w = logits[j] / z;
                w_row[h * n + j] = w;
                let vh = &vf[kr.index * dv + h * dvh..kr.index * dv + (h + 1) * dvh];
                for (o, x) in oh.iter_mut().zip(vh) {
                    *o += w * x;
                }
            }
        }
        weights.push(w_row);
    }
    let out = Array2::from_shape_vec((q.nrows(), dv), out).expect("sized above");
    (out, weights)
}

/// Gradients of a scalar loss through [`attend`].
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionGrads {
    pub queries: Array2<f64>,
    pub keys: Array2<f64>,
    pub values: Array2<f64>,
    pub alpha: f64,
}

#[allow(clippy::too_many_arguments)]
pub fn attend_backward(
    q: &Array2<f64>,
    k: &Array2<f64>,
    v: &Array2<f64>,
    neighbors: &[Vec<KeyRef>],
    spec: AttentionSpec,
    weights: &AttentionWeights,
    grad_out: &Array2<f64>,
) -> AttentionGrads {
    let d = q.ncols();
    let dv = v.ncols();
    let heads = spec.heads.max(1);
    let dh = d / heads;
    let dvh = dv / heads;
    let scale = 1.0 / (dh as f64).sqrt();
    let mut gq = Array2::zeros(q.raw_dim());
    let mut gk = Array2::zeros(k.raw_dim());
    let mut gv = Array2::zeros(v.raw_dim());
    let mut galpha = 0.0;
    let mut dw = Vec::new();
    for (i, keys) in neighbors.iter().enumerate() {
        let n = keys.len();
        if n == 0 {
            continue;
        }
        let go = grad_out.row(i);
        let w_row = &weights[i];
        for h in 0..heads {
            let (qs, vs) = (h * dh, h * dvh);
            dw.clear();
            for (j, kr) in keys.iter().enumerate() {
                let w = w_row[h * n + j];
                let vj = v.row(kr.index);
                let mut s = 0.0;
                for c in vs..vs + dvh {
                    s += go[c] * vj[c];
                    gv[[kr.index, c]] += w * go[c];
                }
                dw.push(s);
            }
            let mean: f64 = (0..n).map(|j| w_row[h * n + j] * dw[j]).sum();
            for (j, kr) in keys.iter().enumerate() {
                let dlogit = w_row[h * n + j] * (dw[j] - mean);
                if dlogit == 0.0 {
                    continue;
                }
                galpha -= dlogit * kr.distance / spec.r_max;
                let g = dlogit * scale;
                for c in qs..qs + dh {
                    gq[[i, c]] += g * k[[kr.index, c]];
                    gk[[kr.index, c]] += g * q[[i, c]];
                }
            }
        }
    }
    AttentionGrads {
        queries: gq,
        keys: gk,
        values: gv,
        alpha: galpha,
    }
}

/// Single-head range-adaptive attention over all keys.
pub fn range_adaptive_attention(
    inputs: &AttentionInputs,
    alpha: f64,
    r_max: f64,
) -> Result<Array2<f64>, FusionError> {
    check_spec(alpha, r_max)?;
    inputs.check()?;
    let (out, _) = attend(
        &inputs.queries,
        &inputs.keys,
        &inputs.values,
        &inputs.dense_neighbors(),
        AttentionSpec::single_head(alpha, r_max),
    );
    Ok(out)
}

/// The `N_q × N_k` attention weight matrix of [`range_adaptive_attention`].
pub fn attention_weights(
    inputs: &AttentionInputs,
    alpha: f64,
    r_max: f64,
) -> Result<Array2<f64>, FusionError> {
    check_spec(alpha, r_max)?;
    inputs.check()?;
    let (_, w) = attend(
        &inputs.queries,
        &inputs.keys,
        &inputs.values,
        &inputs.dense_neighbors(),
        AttentionSpec::single_head(alpha, r_max),
    );
    let nk = inputs.keys.nrows();
    let mut m = Array2::zeros((inputs.queries.nrows(), nk));
    for (i, row) in w.iter().enumerate() {
        for (j, &x) in row.iter().enumerate() {
            m[[i, j]] = x;
        }
    }
    Ok(m)
}

/// Analytic gradient of `Σ grad_out ⊙ attention(inputs)` with respect to
/// queries, keys, values and α.
pub fn range_adaptive_attention_grad(
    inputs: &AttentionInputs,
    alpha: f64,
    r_max: f64,
    grad_out: &Array2<f64>,
) -> Result<AttentionGrads, FusionError> {
    check_spec(alpha, r_max)?;
    inputs.check()?;
    let neighbors = inputs.dense_neighbors();
    let spec = AttentionSpec::single_head(alpha, r_max);
    let (_, w) = attend(&inputs.queries, &inputs.keys, &inputs.values, &neighbors, spec);
    Ok(attend_backward(
        &inputs.queries,
        &inputs.keys,
        &inputs.values,
        &neighbors,
        spec,
        &w,
        grad_out,
    ))
}

/// Plain scaled dot-product attention, kept independent of [`attend`].
pub fn scaled_dot_product_attention(q: &Array2<f64>, k: &Array2<f64>, v: &Array2<f64>) -> Array2<f64> {
    let scale = 1.0 / (q.ncols() as f64).sqrt();
    let mut scores = q.dot(&k.t()) * scale;
    for mut row in scores.rows_mut() {
        let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        row.mapv_inplace(|x| (x - m).exp());
        let z = row.sum();
        row /= z;
    }
    scores.dot(v)
}

fn check_spec(alpha: f64, r_max: f64) -> Result<(), FusionError> {
    if !(r_max > 0.0) {
        return Err(FusionError::InvalidConfig("r_max must be > 0".into()));
    }
    if !(alpha >= 0.0) {
        return Err(FusionError::InvalidConfig("alpha must be >= 0".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Array2<f64> {
        Array2::from_shape_fn((r, c), |_| rng.random_range(-s..s))
    }

    fn random_inputs(rng: &mut ChaCha8Rng, nq: usize, nk: usize, d: usize) -> AttentionInputs {
        AttentionInputs {
            queries: random(rng, nq, d, 1.0),
            keys: random(rng, nk, d, 1.0),
            values: random(rng, nk, d, 1.0),
            query_positions: random(rng, nq, 3, 30.0),
            key_positions: random(rng, nk, 3, 30.0),
        }
    }

    #[test]
    fn single_key_returns_its_value() {
        let inputs = AttentionInputs {
            queries: array![[0.3, -1.0]],
            keys: array![[2.0, 1.0]],
            values: array![[4.0, -7.0]],
            query_positions: array![[0.0, 0.0, 0.0]],
            key_positions: array![[5.0, 0.0, 0.0]],
        };
        assert_eq!(range_adaptive_attention(&inputs, 1.0, 50.0).unwrap(), array![[4.0, -7.0]]);
    }

    #[test]
    fn symmetric_keys_average_values() {
        let inputs = AttentionInputs {
            queries: array![[1.0, 0.0]],
            keys: array![[0.5, 0.5], [0.5, 0.5]],
            values: array![[2.0, 0.0], [0.0, 4.0]],
            query_positions: array![[0.0, 0.0, 0.0]],
            key_positions: array![[3.0, 0.0, 0.0], [0.0, 3.0, 0.0]],
        };
        let out = range_adaptive_attention(&inputs, 1.0, 10.0).unwrap();
        assert!((out[[0, 0]] - 1.0).abs() < 1e-12 && (out[[0, 1]] - 2.0).abs() < 1e-12);
    }

    #[test]
    fn distance_penalty_closed_form() {
        let inputs = AttentionInputs {
            queries: array![[0.0, 0.0]],
            keys: array![[1.0, 2.0], [3.0, -1.0]],
            values: array![[1.0, 0.0], [0.0, 1.0]],
            query_positions: array![[0.0, 0.0, 0.0]],
            key_positions: array![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]],
        };
        let w = attention_weights(&inputs, 1.0, 1.0).unwrap();
        let e = (-1.0f64).exp();
        assert!((w[[0, 0]] - 1.0 / (1.0 + e)).abs() < 1e-12);
        assert!((w[[0, 1]] - e / (1.0 + e)).abs() < 1e-12);
        assert!((w[[0, 0]] - 0.7311).abs() < 1e-4);
    }

    #[test]
    fn empty_keys_is_an_error() {
        let inputs = AttentionInputs {
            queries: array![[0.0, 0.0]],
            keys: Array2::zeros((0, 2)),
            values: Array2::zeros((0, 2)),
            query_positions: array![[0.0, 0.0, 0.0]],
            key_positions: Array2::zeros((0, 3)),
        };
        assert!(matches!(range_adaptive_attention(&inputs, 1.0, 1.0), Err(FusionError::EmptyKeys)));
        let bad = AttentionInputs { keys: array![[1.0, 0.0]], ..inputs };
        assert!(matches!(range_adaptive_attention(&bad, 1.0, 0.0), Err(FusionError::InvalidConfig(_))));
    }

    #[test]
    fn rows_sum_to_one_and_alpha_zero_is_sdpa() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let nq = rng.random_range(1..20);
            let nk = rng.random_range(1..20);
            let d = rng.random_range(1..16);
            let inputs = random_inputs(&mut rng, nq, nk, d);
            let w = attention_weights(&inputs, 2.5, 50.0).unwrap();
            for row in w.rows() {
                assert!((row.sum() - 1.0).abs() < 1e-9);
                assert!(row.iter().all(|&x| x >= 0.0));
            }
            let ours = range_adaptive_attention(&inputs, 0.0, 50.0).unwrap();
            let sdpa = scaled_dot_product_attention(&inputs.queries, &inputs.keys, &inputs.values);
            assert!((ours - sdpa).iter().all(|x| x.abs() < 1e-9));
        }
    }

    #[test]
    fn farther_key_loses_weight_as_alpha_grows() {
        let inputs = AttentionInputs {
            queries: array![[0.0, 0.0]],
            keys: array![[1.0, 0.0], [0.0, 1.0]],
            values: array![[1.0, 0.0], [0.0, 1.0]],
            query_positions: array![[0.0, 0.0, 0.0]],
            key_positions: array![[2.0, 0.0, 0.0], [9.0, 0.0, 0.0]],
        };
        let mut last = f64::INFINITY;
        for alpha in [0.0, 0.5, 1.0, 2.0, 4.0, 8.0] {
            let w = attention_weights(&inputs, alpha, 10.0).unwrap()[[0, 1]];
            assert!(w < last);
            last = w;
        }
    }

    #[test]
    fn scaling_distances_and_range_is_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let inputs = random_inputs(&mut rng, 6, 9, 8);
        let w0 = attention_weights(&inputs, 1.5, 40.0).unwrap();
        let scaled = AttentionInputs {
            query_positions: &inputs.query_positions * 3.0,
            key_positions: &inputs.key_positions * 3.0,
            ..inputs.clone()
        };
        let w1 = attention_weights(&scaled, 1.5, 120.0).unwrap();
        assert!((w0 - w1).iter().all(|x| x.abs() < 1e-12));
    }

    #[test]
    fn multi_head_splits_channels() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = random(&mut rng, 3, 8, 1.0);
        let k = random(&mut rng, 5, 8, 1.0);
        let v = random(&mut rng, 5, 8, 1.0);
        let pq = random(&mut rng, 3, 3, 10.0);
        let pk = random(&mut rng, 5, 3, 10.0);
        let nb = dense_neighbors(&pq, &pk);
        let spec = AttentionSpec { alpha: 1.0, r_max: 10.0, heads: 2 };
        let (out, _) = attend(&q, &k, &v, &nb, spec);
        for h in 0..2 {
            let cols = ndarray::s![.., h * 4..(h + 1) * 4];
            let single = AttentionInputs {
                queries: q.slice(cols).to_owned(),
                keys: k.slice(cols).to_owned(),
                values: v.slice(cols).to_owned(),
                query_positions: pq.clone(),
                key_positions: pk.clone(),
            };
            let expect = range_adaptive_attention(&single, 1.0, 10.0).unwrap();
            assert!((&out.slice(cols) - &expect).iter().all(|x| x.abs() < 1e-12));
        }
    }
}
