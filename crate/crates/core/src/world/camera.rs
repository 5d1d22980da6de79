//! Synthetic camera features standing in for an image backbone.
//!
//! Each cell carries seeded Gaussian noise; cells whose center pixel falls
//! inside the silhouette of an agent box additionally carry objectness,
//! class, depth, relative heading and height channels of the nearest such
//! agent. Nothing in the grid encodes velocity.

use std::f64::consts::PI;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::geometry::{CameraModel, FeatureGrid, NEAR_PLANE};
use crate::model::{Anchor, GtAgent, Point2, Point3};

use super::config::CameraRigConfig;

/// objectness, 3 × class, depth, sin/cos relative heading, height.
pub const CAMERA_CHANNELS: usize = 8;
const DEPTH_SCALE: f64 = 50.0;
const HEIGHT_SCALE: f64 = 4.0;

/// Cameras evenly spaced in yaw, starting with the forward camera.
pub fn camera_rig(cfg: &CameraRigConfig) -> Vec<CameraModel> {
    (0..cfg.count)
        .map(|i| {
            let yaw = 2.0 * PI * i as f64 / cfg.count as f64;
            CameraModel::mounted([0.0, 0.0, cfg.mount_height], yaw, cfg.hfov_deg.to_radians(), cfg.width, cfg.height)
        })
        .collect()
}

/// Heading of a camera's optical axis in the ego frame.
pub fn camera_yaw(cam: &CameraModel) -> f64 {
    // The third rotation row is the optical axis expressed in ego axes.
    cam.rotation[2][1].atan2(cam.rotation[2][0])
}

pub fn box_corners_3d(a: &Anchor) -> [Point3; 8] {
    let (s, c) = (a.sin_yaw, a.cos_yaw);
    let mut out = [[0.0; 3]; 8];
    for (k, o) in out.iter_mut().enumerate() {
        let lx = if k & 1 == 0 { 0.5 } else { -0.5 } * a.l;
        let ly = if k & 2 == 0 { 0.5 } else { -0.5 } * a.w;
        let lz = if k & 4 == 0 { 0.5 } else { -0.5 } * a.h;
        *o = [a.x + c * lx - s * ly, a.y + s * lx + c * ly, a.z + lz];
    }
    out
}

fn cross(o: Point2, a: Point2, b: Point2) -> f64 {
    (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
}

/// Counter-clockwise convex hull (monotone chain).
pub fn convex_hull(points: &[Point2]) -> Vec<Point2> {
    let mut p = points.to_vec();
    p.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    p.dedup();
    if p.len() < 3 {
        return p;
    }
    let mut lower: Vec<Point2> = Vec::with_capacity(p.len());
    for &q in &p {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], q) <= 0.0 {
            lower.pop();
        }
        lower.push(q);
    }
    let mut upper: Vec<Point2> = Vec::with_capacity(p.len());
    for &q in p.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], q) <= 0.0 {
            upper.pop();
        }
        upper.push(q);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

fn inside_convex(hull: &[Point2], q: Point2) -> bool {
    hull.len() >= 3 && (0..hull.len()).all(|i| cross(hull[i], hull[(i + 1) % hull.len()], q) >= 0.0)
}

/// Silhouette of a box in a camera, or `None` unless every corner lies in
/// front of the near plane.
pub fn box_silhouette(a: &Anchor, cam: &CameraModel) -> Option<Vec<Point2>> {
    let mut px = Vec::with_capacity(8);
    for c in box_corners_3d(a) {
        let (u, v) = cam.project_unbounded(cam.ego_to_camera(c))?;
        px.push([u, v]);
    }
    Some(convex_hull(&px))
}

/// For every cell (row-major), the index of the nearest agent whose
/// silhouette contains the cell center.
pub fn covered_cells(agents: &[GtAgent], cam: &CameraModel, rows: usize, cols: usize) -> Vec<Option<usize>> {
    let shapes: Vec<(usize, f64, Vec<Point2>)> = agents
        .iter()
        .enumerate()
        .filter_map(|(i, g)| {
            let hull = box_silhouette(&g.anchor, cam)?;
            Some((i, cam.ego_to_camera(g.anchor.center())[2], hull))
        })
        .collect();
    let mut out = vec![None; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            let u = (c as f64 + 0.5) * cam.width as f64 / cols as f64;
            let v = (r as f64 + 0.5) * cam.height as f64 / rows as f64;
            let mut best: Option<(usize, f64)> = None;
            for (i, depth, hull) in &shapes {
                if inside_convex(hull, [u, v]) && best.is_none_or(|(_, d)| *depth < d) {
                    best = Some((*i, *depth));
                }
            }
            out[r * cols + c] = best.map(|b| b.0);
        }
    }
    out
}

/// One noisy feature grid per camera.
pub fn render_camera_features(agents: &[GtAgent], cams: &[CameraModel], rig: &CameraRigConfig, seed: u64) -> Vec<FeatureGrid> {
    cams.iter()
        .enumerate()
        .map(|(ci, cam)| {
            let mut rng = ChaCha8Rng::seed_from_u64(super::derive_seed(seed, &[ci as u64]));
            let normal = Normal::new(0.0, rig.noise).expect("valid sigma");
            let mut grid = FeatureGrid::zeros(rig.grid_rows, rig.grid_cols, rig.channels);
            for v in grid.data.iter_mut() {
                *v = normal.sample(&mut rng) as f32;
            }
            let cover = covered_cells(agents, cam, rig.grid_rows, rig.grid_cols);
            let cam_yaw = camera_yaw(cam);
            for (cell, who) in cover.iter().enumerate() {
                let Some(i) = *who else { continue };
                let a = &agents[i].anchor;
                let depth = cam.ego_to_camera(a.center())[2];
                let rel = a.yaw() - cam_yaw;
                let mut signal = [0.0; CAMERA_CHANNELS];
                signal[0] = 1.0;
                signal[1 + agents[i].class.index()] = 1.0;
                signal[4] = depth / DEPTH_SCALE;
                signal[5] = rel.sin();
                signal[6] = rel.cos();
                signal[7] = a.h / HEIGHT_SCALE;
                let (r, c) = (cell / rig.grid_cols, cell % rig.grid_cols);
                for (g, s) in grid.cell_mut(r, c).iter_mut().zip(signal) {
                    *g += s as f32;
                }
            }
            grid
        })
        .collect()
}

/// Entry distance of the ray `origin + t·dir` (t > near) into a 3D box.
pub fn ray_hits_box(origin: Point3, dir: Point3, a: &Anchor) -> Option<f64> {
    let (s, c) = (a.sin_yaw, a.cos_yaw);
    let o = [origin[0] - a.x, origin[1] - a.y, origin[2] - a.z];
    let lo = [c * o[0] + s * o[1], -s * o[0] + c * o[1], o[2]];
    let ld = [c * dir[0] + s * dir[1], -s * dir[0] + c * dir[1], dir[2]];
    let half = [0.5 * a.l, 0.5 * a.w, 0.5 * a.h];
    let (mut t0, mut t1) = (f64::NEG_INFINITY, f64::INFINITY);
    for k in 0..3 {
        if ld[k].abs() < 1e-15 {
            if lo[k].abs() > half[k] {
                return None;
            }
        } else {
            let mut ta = (-half[k] - lo[k]) / ld[k];
            let mut tb = (half[k] - lo[k]) / ld[k];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
        }
    }
    (t0 <= t1 && t1 > NEAR_PLANE).then_some(t0)
}
