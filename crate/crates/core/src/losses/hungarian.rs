//! Minimum-cost bipartite assignment (shortest augmenting paths with
//! potentials, O(n²m)).

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::LossError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    /// (prediction, ground truth), sorted by prediction index.
    pub pairs: Vec<(usize, usize)>,
    pub total_cost: f64,
}

/// Optimal one-to-one assignment of rows to columns; `min(rows, cols)`
/// pairs are returned. The total is summed in prediction order.
pub fn hungarian_match(cost: &Array2<f64>) -> Result<MatchResult, LossError> {
    if let Some(((i, j), _)) = cost.indexed_iter().find(|(_, v)| !v.is_finite()) {
        return Err(LossError::NonFinite(format!("cost[{i}, {j}]")));
    }
    let (n, m) = cost.dim();
    if n == 0 || m == 0 {
        return Ok(MatchResult {
            pairs: Vec::new(),
            total_cost: 0.0,
        });
    }
    let mut pairs = if n <= m {
        assign(n, m, |i, j| cost[[i, j]])
    } else {
        assign(m, n, |i, j| cost[[j, i]]).into_iter().map(|(g, p)| (p, g)).collect()
    };
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[[i, j]]).sum();
    Ok(MatchResult { pairs, total_cost })
}

/// Requires `n ≤ m`; returns (row, col) for every row.
fn assign(n: usize, m: usize, c: impl Fn(usize, usize) -> f64) -> Vec<(usize, usize)> {
    // 1-based rows/cols; column 0 is a virtual source.
    let mut u = vec![0.0; n + 1];
    let mut v = vec![0.0; m + 1];
    let mut owner = vec![0usize; m + 1];
    let mut way = vec![0usize; m + 1];
    for i in 1..=n {
        owner[0] = i;
        let mut j0 = 0;
        let mut minv = vec![f64::INFINITY; m + 1];
        let mut used = vec![false; m + 1];
        loop {
            used[j0] = true;
            let i0 = owner[j0];
            let mut delta = f64::INFINITY;
            let mut j1 = 0;
            for j in 1..=m {
                if used[j] {
                    continue;
                }
                let cur = c(i0 - 1, j - 1) - u[i0] - v[j];
                if cur < minv[j] {
                    minv[j] = cur;
                    way[j] = j0;
                }
                if minv[j] < delta {
                    delta = minv[j];
                    j1 = j;
                }
            }
            for j in 0..=m {
                if used[j] {
                    u[owner[j]] += delta;
                    v[j] -= delta;
                } else {
                    minv[j] -= delta;
                }
            }
            j0 = j1;
            if owner[j0] == 0 {
                break;
            }
        }
        loop {
            let j1 = way[j0];
            owner[j0] = owner[j1];
            j0 = j1;
            if j0 == 0 {
                break;
            }
        }
    }
    (1..=m).filter(|&j| owner[j] != 0).map(|j| (owner[j] - 1, j - 1)).collect()
}

/// Exhaustive minimum over all injective assignments; exponential, for
/// verification on small matrices.
pub fn brute_force_match(cost: &Array2<f64>) -> MatchResult {
    let (n, m) = cost.dim();
    let transpose = n > m;
    let (rows, cols) = if transpose { (m, n) } else { (n, m) };
    let at = |i: usize, j: usize| if transpose { cost[[j, i]] } else { cost[[i, j]] };
    let mut best: Option<(f64, Vec<usize>)> = None;
    let mut current = Vec::with_capacity(rows);
    let mut used = vec![false; cols];
    fn rec(
        depth: usize,
        rows: usize,
        cols: usize,
        current: &mut Vec<usize>,
        used: &mut [bool],
        at: &dyn Fn(usize, usize) -> f64,
        best: &mut Option<(f64, Vec<usize>)>,
    ) {
        if depth == rows {
            let total: f64 = current.iter().enumerate().map(|(i, &j)| at(i, j)).sum();
            if best.as_ref().is_none_or(|(b, _)| total < *b) {
                *best = Some((total, current.clone()));
            }
            return;
        }
        for j in 0..cols {
            if !used[j] {
                used[j] = true;
                current.push(j);
                rec(depth + 1, rows, cols, current, used, at, best);
                current.pop();
                used[j] = false;
            }
        }
    }
    rec(0, rows, cols, &mut current, &mut used, &at, &mut best);
    let Some((_, assignment)) = best else {
        return MatchResult {
            pairs: Vec::new(),
            total_cost: 0.0,
        };
    };
    let mut pairs: Vec<(usize, usize)> = assignment
        .into_iter()
        .enumerate()
        .map(|(i, j)| if transpose { (j, i) } else { (i, j) })
        .collect();
    pairs.sort_unstable();
    let total_cost = pairs.iter().map(|&(i, j)| cost[[i, j]]).sum();
    MatchResult { pairs, total_cost }
}
