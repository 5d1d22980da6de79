//! Minimal reverse-mode differentiation over dense matrices.
//!
//! Only the operations used by the fusion model's forward pass are provided.
//! A [`Tape`] records values as they are computed; [`Tape::backward`] takes
//! gradient seeds for any set of output nodes and returns gradients for the
//! parameters read during the forward pass.

use std::collections::BTreeMap;

use ndarray::{s, Array2, Axis};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::fusion::attention::{attend, attend_backward, AttentionSpec, AttentionWeights, KeyRef};

const NORM_EPS: f64 = 1e-5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// Named parameter tensors, kept in insertion order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Array2<f64>>,
    index: BTreeMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        self.index.insert(name.clone(), self.values.len());
        self.names.push(name);
        self.values.push(value);
        ParamId(self.values.len() - 1)
    }

    /// Uniform Glorot initialization.
    pub fn add_glorot<R: Rng>(&mut self, name: impl Into<String>, rows: usize, cols: usize, gain: f64, rng: &mut R) -> ParamId {
        let limit = gain * (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.add(name, value)
    }

    pub fn get(&self, id: ParamId) -> &Array2<f64> {
        &self.values[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.values[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn scalar_count(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.names.iter().map(String::as_str).zip(self.values.iter())
    }

    pub fn to_records(&self) -> Vec<TensorRecord> {
        self.iter()
            .map(|(name, v)| TensorRecord {
                name: name.to_string(),
                rows: v.nrows(),
                cols: v.ncols(),
                data: v.iter().copied().collect(),
            })
            .collect()
    }
}

/// Serialized form of one parameter tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorRecord {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

/// Per-parameter gradients, aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    pub grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn zeros(n: usize) -> Self {
        Gradients {
            grads: vec![None; n],
        }
    }

    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.grads.iter_mut().zip(&other.grads) {
            if let Some(b) = b {
                match a {
                    Some(a) => *a += b,
                    None => *a = Some(b.clone()),
                }
            }
        }
    }

    pub fn scale(&mut self, s: f64) {
        for g in self.grads.iter_mut().flatten() {
            g.mapv_inplace(|x| x * s);
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&Array2<f64>> {
        self.grads[id.0].as_ref()
    }

    pub fn is_finite(&self) -> bool {
        self.grads.iter().flatten().all(|g| g.iter().all(|x| x.is_finite()))
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

struct AttentionNode {
    q: Var,
    k: Var,
    v: Var,
    neighbors: Vec<Vec<KeyRef>>,
    spec: AttentionSpec,
    weights: AttentionWeights,
}

enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Relu(Var),
    Scale(Var, f64),
    ScaleCols(Var, Vec<f64>),
    MulRows(Var, Var),
    ConcatRows(Vec<Var>),
    Rows(Var, usize),
    Cols(Var, usize),
    Mix(Var, Vec<Vec<(usize, f64)>>),
    SoftmaxRows(Var),
    /// Normalized rows and their inverse standard deviations.
    NormRows(Var, Vec<f64>),
    Attention(Box<AttentionNode>),
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

pub struct Tape<'p> {
    store: &'p ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

impl<'p> Tape<'p> {
    pub fn new(store: &'p ParamStore) -> Self {
        Tape {
            store,
            nodes: Vec::new(),
            param_vars: vec![None; store.len()],
        }
    }

    pub fn store(&self) -> &'p ParamStore {
        self.store
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = match op {
            Op::Param(_) => true,
            _ => inputs.iter().any(|v| self.nodes[v.0].needs_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, &[])
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        let v = self.push(self.store.get(id).clone(), Op::Param(id), &[]);
        self.param_vars[id.0] = Some(v);
        v
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b), &[a, b])
    }

    /// Adds a `1 × m` row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let value = self.value(a) + self.value(row);
        self.push(value, Op::AddRow(a, row), &[a, row])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        self.push(value, Op::Relu(a), &[a])
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        self.push(value, Op::Scale(a, s), &[a])
    }

    pub fn scale_cols(&mut self, a: Var, factors: Vec<f64>) -> Var {
        let f = ndarray::Array1::from(factors.clone());
        let value = self.value(a) * &f;
        self.push(value, Op::ScaleCols(a, factors), &[a])
    }

    /// Multiplies row `i` of `a` by `w[i, 0]`.
    pub fn mul_rows(&mut self, a: Var, w: Var) -> Var {
        let value = self.value(a) * self.value(w);
        self.push(value, Op::MulRows(a, w), &[a, w])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("column counts must agree");
        self.push(value, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn rows(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![start..start + len, ..]).to_owned();
        self.push(value, Op::Rows(a, start), &[a])
    }

    pub fn cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        self.push(value, Op::Cols(a, start), &[a])
    }

    /// Output row `i` is `Σ w · src[j]` over the `(j, w)` pairs of `mix[i]`.
    pub fn mix(&mut self, src: Var, mix: Vec<Vec<(usize, f64)>>) -> Var {
        let s = self.value(src);
        let mut value = Array2::zeros((mix.len(), s.ncols()));
        for (i, entries) in mix.iter().enumerate() {
            let mut row = value.row_mut(i);
            for &(j, w) in entries {
                row.scaled_add(w, &s.row(j));
            }
        }
        self.push(value, Op::Mix(src, mix), &[src])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let m = row.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
            row.mapv_inplace(|x| (x - m).exp());
            let z = row.sum();
            row /= z;
        }
        self.push(value, Op::SoftmaxRows(a), &[a])
    }

    /// Zero-mean, unit-variance rows (layer normalization without gain or
    /// bias); an all-zero row stays zero.
    pub fn norm_rows(&mut self, a: Var) -> Var {
        let mut value = self.value(a).clone();
        let n = value.ncols() as f64;
        let mut inv = Vec::with_capacity(value.nrows());
        for mut row in value.rows_mut() {
            let mean = row.sum() / n;
            row.mapv_inplace(|x| x - mean);
            let var = row.iter().map(|x| x * x).sum::<f64>() / n;
            let r = 1.0 / (var + NORM_EPS).sqrt();
            row *= r;
            inv.push(r);
        }
        self.push(value, Op::NormRows(a, inv), &[a])
    }

    pub fn attention(&mut self, q: Var, k: Var, v: Var, neighbors: Vec<Vec<KeyRef>>, spec: AttentionSpec) -> Var {
        let (value, weights) = attend(self.value(q), self.value(k), self.value(v), &neighbors, spec);
        let node = AttentionNode {
            q,
            k,
            v,
            neighbors,
            spec,
            weights,
        };
        self.push(value, Op::Attention(Box::new(node)), &[q, k, v])
    }

    /// Affine map `x · W + b`.
    pub fn linear(&mut self, x: Var, weight: ParamId, bias: ParamId) -> Var {
        let w = self.param(weight);
        let b = self.param(bias);
        let xw = self.matmul(x, w);
        self.add_row(xw, b)
    }

    /// Back-propagates the given seeds and returns parameter gradients.
    pub fn backward(&self, seeds: &[(Var, Array2<f64>)]) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        for (v, g) in seeds {
            assert_eq!(g.dim(), self.shape(*v), "seed shape mismatch");
            accumulate(&mut grads[v.0], g.clone());
        }
        let mut out = Gradients::zeros(self.store.len());
        for idx in (0..self.nodes.len()).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => accumulate(&mut out.grads[id.0], g),
                Op::MatMul(a, b) => {
                    if self.nodes[a.0].needs_grad {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads[a.0], ga);
                    }
                    if self.nodes[b.0].needs_grad {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads[b.0], gb);
                    }
                }
                Op::Add(a, b) => {
                    self.send(&mut grads, *b, || g.clone());
                    self.send(&mut grads, *a, || g);
                }
                Op::AddRow(a, row) => {
                    self.send(&mut grads, *row, || g.sum_axis(Axis(0)).insert_axis(Axis(0)));
                    self.send(&mut grads, *a, || g);
                }
                Op::Relu(a) => {
                    let x = self.value(*a);
                    self.send(&mut grads, *a, || {
                        let mut g = g;
                        g.zip_mut_with(x, |gi, &xi| {
                            if xi <= 0.0 {
                                *gi = 0.0
                            }
                        });
                        g
                    });
                }
                Op::Scale(a, s) => self.send(&mut grads, *a, || g * *s),
                Op::ScaleCols(a, f) => {
                    let f = ndarray::Array1::from(f.clone());
                    self.send(&mut grads, *a, || g * &f)
                }
                Op::MulRows(a, w) => {
                    let av = self.value(*a);
                    let wv = self.value(*w);
                    self.send(&mut grads, *w, || (&g * av).sum_axis(Axis(1)).insert_axis(Axis(1)));
                    self.send(&mut grads, *a, || &g * wv);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for p in parts {
                        let n = self.shape(*p).0;
                        let gp = g.slice(s![start..start + n, ..]).to_owned();
                        self.send(&mut grads, *p, || gp);
                        start += n;
                    }
                }
                Op::Rows(a, start) => {
                    let (r, c) = self.shape(*a);
                    self.send(&mut grads, *a, || {
                        let mut full = Array2::zeros((r, c));
                        full.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                        full
                    });
                }
                Op::Cols(a, start) => {
                    let (r, c) = self.shape(*a);
                    self.send(&mut grads, *a, || {
                        let mut full = Array2::zeros((r, c));
                        full.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                        full
                    });
                }
                Op::Mix(src, mix) => {
                    let (r, c) = self.shape(*src);
                    self.send(&mut grads, *src, || {
                        let mut full = Array2::zeros((r, c));
                        for (i, entries) in mix.iter().enumerate() {
                            for &(j, w) in entries {
                                full.row_mut(j).scaled_add(w, &g.row(i));
                            }
                        }
                        full
                    });
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    self.send(&mut grads, *a, || {
                        let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                        y * &(&g - &dot)
                    });
                }
                Op::NormRows(a, inv) => {
                    let y = &node.value;
                    self.send(&mut grads, *a, || {
                        let n = y.ncols() as f64;
                        let mean_g = g.sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                        let mean_gy = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1)) / n;
                        let mut dx = &g - &mean_g - &(y * &mean_gy);
                        for (mut row, r) in dx.rows_mut().into_iter().zip(inv) {
                            row *= *r;
                        }
                        dx
                    });
                }
                Op::Attention(att) => {
                    let ag = attend_backward(
                        self.value(att.q),
                        self.value(att.k),
                        self.value(att.v),
                        &att.neighbors,
                        att.spec,
                        &att.weights,
                        &g,
                    );
                    self.send(&mut grads, att.q, || ag.queries);
                    self.send(&mut grads, att.k, || ag.keys);
                    self.send(&mut grads, att.v, || ag.values);
                }
            }
        }
        out
    }

    fn send(&self, grads: &mut [Option<Array2<f64>>], to: Var, g: impl FnOnce() -> Array2<f64>) {
        if self.nodes[to.0].needs_grad {
            accumulate(&mut grads[to.0], g());
        }
    }
}

fn accumulate(slot: &mut Option<Array2<f64>>, g: Array2<f64>) {
    match slot {
        Some(acc) => *acc += &g,
        None => *slot = Some(g),
    }
}

/// Adam with bias correction.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: i32,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros: Vec<_> = store.iter().map(|(_, v)| Array2::zeros(v.raw_dim())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step(&mut self, store: &mut ParamStore, grads: &Gradients) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (i, g) in grads.grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let (b1, b2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
            let m = &mut self.m[i];
            let v = &mut self.v[i];
            ndarray::Zip::from(m).and(v).and(store.get_mut(ParamId(i))).and(g).for_each(|m, v, p, &g| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
    }
}
