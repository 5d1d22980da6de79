//! Lloyd's k-means for anchor initialization.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::model::{Anchor, ANCHOR_DIM};

use super::PlannerError;

pub const MAX_ITERATIONS: usize = 100;

#[derive(Clone, Debug, PartialEq)]
pub struct KMeans {
    pub centroids: Vec<Vec<f64>>,
    pub assignment: Vec<usize>,
    /// Sum of squared distances to the assigned centroid.
    pub inertia: f64,
    pub iterations: usize,
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::INFINITY);
    for (j, c) in centroids.iter().enumerate() {
        let d = sq_dist(p, c);
        if d < best.1 {
            best = (j, d);
        }
    }
    best
}

/// Clusters `points` into `k` groups. Initial centroids are `k` distinct
/// input points drawn with `seed`; a cluster that empties is re-seeded with
/// the point farthest from its current centroid.
pub fn kmeans(points: &[Vec<f64>], k: usize, seed: u64) -> Result<KMeans, PlannerError> {
    if k == 0 {
        return Err(PlannerError::InvalidInput("k must be at least 1".into()));
    }
    if points.len() < k {
        return Err(PlannerError::NotEnoughSamples {
            have: points.len(),
            need: k,
        });
    }
    let dim = points[0].len();
    if let Some(bad) = points.iter().find(|p| p.len() != dim) {
        return Err(PlannerError::InvalidInput(format!("point of dimension {} among dimension {dim}", bad.len())));
    }
    if points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(PlannerError::InvalidInput("non-finite coordinate".into()));
    }

    let mut order: Vec<usize> = (0..points.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut centroids: Vec<Vec<f64>> = order[..k].iter().map(|&i| points[i].clone()).collect();
    let mut assignment = vec![usize::MAX; points.len()];
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let mut changed = false;
        let mut dists = vec![0.0; points.len()];
        for (i, p) in points.iter().enumerate() {
            let (j, d) = nearest(p, &centroids);
            dists[i] = d;
            if assignment[i] != j {
                assignment[i] = j;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (p, &j) in points.iter().zip(&assignment) {
            counts[j] += 1;
            for (s, v) in sums[j].iter_mut().zip(p) {
                *s += v;
            }
        }
        for j in 0..k {
            if counts[j] > 0 {
                centroids[j] = sums[j].iter().map(|s| s / counts[j] as f64).collect();
                continue;
            }
            // Farthest point from its own centroid; taking it moves it here.
            let far = (0..points.len())
                .filter(|&i| counts[assignment[i]] > 1)
                .max_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(b.cmp(&a)));
            if let Some(i) = far {
                counts[assignment[i]] -= 1;
                assignment[i] = j;
                counts[j] = 1;
                dists[i] = 0.0;
                centroids[j] = points[i].clone();
            }
        }
    }
    let inertia = points.iter().zip(&assignment).map(|(p, &j)| sq_dist(p, &centroids[j])).sum();
    Ok(KMeans {
        centroids,
        assignment,
        inertia,
        iterations,
    })
}

/// K anchors clustered from training boxes, with headings renormalized.
pub fn kmeans_anchors(boxes: &[Anchor], k: usize, seed: u64) -> Result<Vec<Anchor>, PlannerError> {
    let points: Vec<Vec<f64>> = boxes.iter().map(|b| b.to_array().to_vec()).collect();
    let km = kmeans(&points, k, seed)?;
    Ok(km
        .centroids
        .into_iter()
        .map(|c| {
            let mut a = [0.0; ANCHOR_DIM];
            a.copy_from_slice(&c);
            Anchor::from_array(a).normalized()
        })
        .collect())
}
