//! Polyline projection, camera frustum projection, bilinear sampling and
//! oriented-box overlap.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Anchor, Point2, Point3, MIN_WAYPOINT_SEPARATION};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("zero-length segment")]
    DegenerateSegment,
    #[error("polyline needs at least 2 waypoints, got {0}")]
    InvalidPolyline(usize),
    #[error("feature grid is empty")]
    EmptyGrid,
    #[error("input point set is empty")]
    EmptyInput,
}

fn sub(a: Point2, b: Point2) -> Point2 {
    [a[0] - b[0], a[1] - b[1]]
}

fn dot(a: Point2, b: Point2) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Clamped projection parameter of `p` onto segment `a → b`.
pub fn segment_projection_param(p: Point2, a: Point2, b: Point2) -> Result<f64, GeometryError> {
    let ab = sub(b, a);
    let len2 = dot(ab, ab);
    if len2 <= MIN_WAYPOINT_SEPARATION * MIN_WAYPOINT_SEPARATION {
        return Err(GeometryError::DegenerateSegment);
    }
    Ok((dot(sub(p, a), ab) / len2).clamp(0.0, 1.0))
}

/// Closest point of a polyline to a query point.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PolylineProjection {
    pub distance: f64,
    pub segment: usize,
    pub t: f64,
}

/// Minimum distance from `p` to the segments of `waypoints`; ties go to the
/// lowest segment index.
pub fn point_polyline_distance(
    p: Point2,
    waypoints: &[Point2],
) -> Result<PolylineProjection, GeometryError> {
    if waypoints.len() < 2 {
        return Err(GeometryError::InvalidPolyline(waypoints.len()));
    }
    // Compared squared; one square root at the end.
    let mut best: Option<PolylineProjection> = None;
    for (i, seg) in waypoints.windows(2).enumerate() {
        let (a, b) = (seg[0], seg[1]);
        let t = segment_projection_param(p, a, b)?;
        let foot = [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])];
        let d2 = (p[0] - foot[0]).powi(2) + (p[1] - foot[1]).powi(2);
        if best.is_none_or(|b| d2 < b.distance) {
            best = Some(PolylineProjection {
                distance: d2,
                segment: i,
                t,
            });
        }
    }
    let mut best = best.expect("at least one segment");
    best.distance = best.distance.sqrt();
    Ok(best)
}

/// Symmetric mean of the directed waypoint-to-polyline distances.
pub fn polyline_chamfer(a: &[Point2], b: &[Point2]) -> Result<f64, GeometryError> {
    if a.is_empty() || b.is_empty() {
        return Err(GeometryError::EmptyInput);
    }
    Ok(0.5 * (directed_chamfer(a, b)? + directed_chamfer(b, a)?))
}

fn directed_chamfer(from: &[Point2], to: &[Point2]) -> Result<f64, GeometryError> {
    let mut total = 0.0;
    for &p in from {
        total += if to.len() == 1 {
            (p[0] - to[0][0]).hypot(p[1] - to[0][1])
        } else {
            point_polyline_distance(p, to)?.distance
        };
    }
    Ok(total / from.len() as f64)
}

/// `n` points spaced evenly by arc length along `waypoints` (n ≥ 2).
pub fn resample_polyline(waypoints: &[Point2], n: usize) -> Result<Vec<Point2>, GeometryError> {
    if waypoints.len() < 2 {
        return Err(GeometryError::InvalidPolyline(waypoints.len()));
    }
    let mut cum = Vec::with_capacity(waypoints.len());
    cum.push(0.0);
    for w in waypoints.windows(2) {
        let last = *cum.last().expect("non-empty");
        cum.push(last + (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]));
    }
    let total = *cum.last().expect("non-empty");
    if total <= MIN_WAYPOINT_SEPARATION {
        return Err(GeometryError::DegenerateSegment);
    }
    let mut out = Vec::with_capacity(n);
    let mut seg = 0;
    for k in 0..n {
        let s = total * k as f64 / (n - 1).max(1) as f64;
        while seg + 2 < cum.len() && cum[seg + 1] < s {
            seg += 1;
        }
        let len = cum[seg + 1] - cum[seg];
        let t = if len > 0.0 { ((s - cum[seg]) / len).clamp(0.0, 1.0) } else { 0.0 };
        let (a, b) = (waypoints[seg], waypoints[seg + 1]);
        out.push([a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]);
    }
    Ok(out)
}

/// Pinhole camera. The extrinsic maps ego coordinates into the camera frame
/// (x right, y down, z along the optical axis).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub rotation: [[f64; 3]; 3],
    pub translation: Point3,
    pub width: u32,
    pub height: u32,
}

/// Depth below which a point counts as outside the frustum.
pub const NEAR_PLANE: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Projection {
    Visible { u: f64, v: f64, depth: f64 },
    OutsideFrustum,
}

impl Projection {
    pub fn pixel(&self) -> Option<(f64, f64, f64)> {
        match *self {
            Projection::Visible { u, v, depth } => Some((u, v, depth)),
            Projection::OutsideFrustum => None,
        }
    }
}

impl CameraModel {
    /// Camera at `position` (ego frame) looking horizontally along `yaw`.
    pub fn mounted(position: Point3, yaw: f64, hfov: f64, width: u32, height: u32) -> Self {
        let (s, c) = yaw.sin_cos();
        let rotation = [[s, -c, 0.0], [0.0, 0.0, -1.0], [c, s, 0.0]];
        let mut translation = [0.0; 3];
        for (r, t) in rotation.iter().zip(translation.iter_mut()) {
            *t = -(r[0] * position[0] + r[1] * position[1] + r[2] * position[2]);
        }
        let fx = 0.5 * width as f64 / (0.5 * hfov).tan();
        CameraModel {
            fx,
            fy: fx,
            cx: 0.5 * width as f64,
            cy: 0.5 * height as f64,
            rotation,
            translation,
            width,
            height,
        }
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.fx > 0.0 && self.fy > 0.0) {
            return Err("focal lengths must be positive".into());
        }
        if self.width == 0 || self.height == 0 {
            return Err("image size must be positive".into());
        }
        Ok(())
    }

    pub fn ego_to_camera(&self, p: Point3) -> Point3 {
        let mut out = self.translation;
        for (o, r) in out.iter_mut().zip(self.rotation.iter()) {
            *o += r[0] * p[0] + r[1] * p[1] + r[2] * p[2];
        }
        out
    }

    pub fn camera_to_ego(&self, p: Point3) -> Point3 {
        let d = [
            p[0] - self.translation[0],
            p[1] - self.translation[1],
            p[2] - self.translation[2],
        ];
        let r = &self.rotation;
        [
            r[0][0] * d[0] + r[1][0] * d[1] + r[2][0] * d[2],
            r[0][1] * d[0] + r[1][1] * d[1] + r[2][1] * d[2],
            r[0][2] * d[0] + r[1][2] * d[1] + r[2][2] * d[2],
        ]
    }

    /// Projects a point already expressed in the camera frame.
    pub fn project_camera_point(&self, p: Point3) -> Projection {
        let depth = p[2];
        if depth <= NEAR_PLANE {
            return Projection::OutsideFrustum;
        }
        let u = self.cx + self.fx * p[0] / depth;
        let v = self.cy + self.fy * p[1] / depth;
        if u < 0.0 || v < 0.0 || u >= self.width as f64 || v >= self.height as f64 {
            return Projection::OutsideFrustum;
        }
        Projection::Visible { u, v, depth }
    }

    /// Pinhole projection ignoring image bounds; `None` behind the near plane.
    pub fn project_unbounded(&self, p_cam: Point3) -> Option<(f64, f64)> {
        (p_cam[2] > NEAR_PLANE).then(|| {
            (
                self.cx + self.fx * p_cam[0] / p_cam[2],
                self.cy + self.fy * p_cam[1] / p_cam[2],
            )
        })
    }

    pub fn unproject(&self, u: f64, v: f64, depth: f64) -> Point3 {
        [
            (u - self.cx) * depth / self.fx,
            (v - self.cy) * depth / self.fy,
            depth,
        ]
    }

    /// Camera-frame direction of the ray through pixel `(u, v)`.
    pub fn pixel_ray(&self, u: f64, v: f64) -> Point3 {
        self.unproject(u, v, 1.0)
    }

    /// Camera center in the ego frame.
    pub fn center_ego(&self) -> Point3 {
        self.camera_to_ego([0.0, 0.0, 0.0])
    }
}

pub fn project_to_camera(point: Point3, cam: &CameraModel) -> Projection {
    cam.project_camera_point(cam.ego_to_camera(point))
}

/// Dense `rows × cols` grid of `channels`-dim embeddings, row-major.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FeatureGrid {
    pub rows: usize,
    pub cols: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

impl FeatureGrid {
    pub fn zeros(rows: usize, cols: usize, channels: usize) -> Self {
        FeatureGrid {
            rows,
            cols,
            channels,
            data: vec![0.0; rows * cols * channels],
        }
    }

    pub fn cells(&self) -> usize {
        self.rows * self.cols
    }

    pub fn is_empty(&self) -> bool {
        self.cells() == 0 || self.channels == 0
    }

    pub fn cell(&self, row: usize, col: usize) -> &[f32] {
        let start = (row * self.cols + col) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn cell_mut(&mut self, row: usize, col: usize) -> &mut [f32] {
        let start = (row * self.cols + col) * self.channels;
        &mut self.data[start..start + self.channels]
    }

    /// Continuous grid coordinates `(x, y)` of an image pixel; integer values
    /// land on cell centers.
    pub fn pixel_to_grid(&self, cam: &CameraModel, u: f64, v: f64) -> (f64, f64) {
        (
            u * self.cols as f64 / cam.width as f64 - 0.5,
            v * self.rows as f64 / cam.height as f64 - 0.5,
        )
    }

    /// Pixel position of the center of cell `(row, col)`.
    pub fn cell_center_pixel(&self, cam: &CameraModel, row: usize, col: usize) -> (f64, f64) {
        (
            (col as f64 + 0.5) * cam.width as f64 / self.cols as f64,
            (row as f64 + 0.5) * cam.height as f64 / self.rows as f64,
        )
    }
}

/// The four (cell index, weight) pairs of a bilinear lookup at grid
/// coordinates `(x, y)`, clamped to the grid (border replication).
pub fn bilinear_weights(rows: usize, cols: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let xc = x.clamp(0.0, (cols - 1) as f64);
    let yc = y.clamp(0.0, (rows - 1) as f64);
    let x0 = (xc.floor() as usize).min(cols - 1);
    let y0 = (yc.floor() as usize).min(rows - 1);
    let x1 = (x0 + 1).min(cols - 1);
    let y1 = (y0 + 1).min(rows - 1);
    let fx = xc - x0 as f64;
    let fy = yc - y0 as f64;
    [
        (y0 * cols + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * cols + x1, fx * (1.0 - fy)),
        (y1 * cols + x0, (1.0 - fx) * fy),
        (y1 * cols + x1, fx * fy),
    ]
}

pub fn bilinear_sample(grid: &FeatureGrid, xy: (f64, f64)) -> Result<Vec<f64>, GeometryError> {
    if grid.is_empty() {
        return Err(GeometryError::EmptyGrid);
    }
    let mut out = vec![0.0; grid.channels];
    for (idx, w) in bilinear_weights(grid.rows, grid.cols, xy.0, xy.1) {
        let cell = &grid.data[idx * grid.channels..(idx + 1) * grid.channels];
        for (o, &c) in out.iter_mut().zip(cell) {
            *o += w * c as f64;
        }
    }
    Ok(out)
}

/// BEV rectangle. Length runs along the heading, width across it.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OrientedBox2D {
    pub center: Point2,
    pub half_width: f64,
    pub half_length: f64,
    pub yaw: f64,
}

impl OrientedBox2D {
    pub fn new(center: Point2, width: f64, length: f64, yaw: f64) -> Self {
        OrientedBox2D {
            center,
            half_width: 0.5 * width,
            half_length: 0.5 * length,
            yaw,
        }
    }

    pub fn from_anchor(a: &Anchor) -> Self {
        OrientedBox2D::new([a.x, a.y], a.w, a.l, a.yaw())
    }

    fn axes(&self) -> [Point2; 2] {
        let (s, c) = self.yaw.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn corners(&self) -> [Point2; 4] {
        let [ax, ay] = self.axes();
        let (l, w) = (self.half_length, self.half_width);
        let at = |a: f64, b: f64| {
            [
                self.center[0] + a * ax[0] + b * ay[0],
                self.center[1] + a * ax[1] + b * ay[1],
            ]
        };
        [at(l, w), at(-l, w), at(-l, -w), at(l, -w)]
    }

    /// Position of `p` in box coordinates (along, across).
    pub fn to_local(&self, p: Point2) -> Point2 {
        let [ax, ay] = self.axes();
        let d = sub(p, self.center);
        [dot(d, ax), dot(d, ay)]
    }

    pub fn contains(&self, p: Point2) -> bool {
        let [a, b] = self.to_local(p);
        a.abs() <= self.half_length && b.abs() <= self.half_width
    }

    fn interval(&self, axis: Point2) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for c in self.corners() {
            let d = dot(c, axis);
            lo = lo.min(d);
            hi = hi.max(d);
        }
        (lo, hi)
    }
}

/// Separating-axis test over the four edge normals; touching boxes overlap.
pub fn boxes_overlap(a: &OrientedBox2D, b: &OrientedBox2D) -> bool {
    for axis in a.axes().into_iter().chain(b.axes()) {
        let (a0, a1) = a.interval(axis);
        let (b0, b1) = b.interval(axis);
        if a1 < b0 || b1 < a0 {
            return false;
        }
    }
    true
}

/// Whether segment `p → q` passes through the interior of `bx` (slab test).
pub fn segment_hits_box(p: Point2, q: Point2, bx: &OrientedBox2D) -> bool {
    let lp = bx.to_local(p);
    let lq = bx.to_local(q);
    let d = sub(lq, lp);
    let half = [bx.half_length, bx.half_width];
    let (mut t0, mut t1) = (0.0f64, 1.0f64);
    for k in 0..2 {
        if d[k].abs() < 1e-15 {
            if lp[k].abs() >= half[k] {
                return false;
            }
        } else {
            let mut ta = (-half[k] - lp[k]) / d[k];
            let mut tb = (half[k] - lp[k]) / d[k];
            if ta > tb {
                std::mem::swap(&mut ta, &mut tb);
            }
            t0 = t0.max(ta);
            t1 = t1.min(tb);
            if t0 >= t1 {
                return false;
            }
        }
    }
    true
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn resample_walks_arc_length_around_corners() {
        let l = [[0.0, 0.0], [2.0, 0.0], [2.0, 2.0]];
        let r = resample_polyline(&l, 5).unwrap();
        assert_eq!(r, vec![[0.0, 0.0], [1.0, 0.0], [2.0, 0.0], [2.0, 1.0], [2.0, 2.0]]);
        assert!(matches!(resample_polyline(&l[..1], 5), Err(GeometryError::InvalidPolyline(1))));
        assert!(matches!(resample_polyline(&[[1.0, 1.0], [1.0, 1.0]], 3), Err(GeometryError::DegenerateSegment)));
    }

    #[test]
    fn projection_param_examples() {
        assert_eq!(segment_projection_param([0.5, 1.0], [0.0, 0.0], [1.0, 0.0]).unwrap(), 0.5);
        assert_eq!(segment_projection_param([2.0, 0.0], [0.0, 0.0], [1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(segment_projection_param([0.25, 3.0], [0.0, 0.0], [1.0, 0.0]).unwrap(), 0.25);
        assert_eq!(
            segment_projection_param([0.0, 0.0], [1.0, 1.0], [1.0, 1.0]),
            Err(GeometryError::DegenerateSegment)
        );
    }

    #[test]
    fn projection_param_perpendicular() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let a = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let b = [rng.random_range(-5.0..5.0), rng.random_range(-5.0..5.0)];
            let t = segment_projection_param(p, a, b).unwrap();
            assert!((0.0..=1.0).contains(&t));
            if t > 0.0 && t < 1.0 {
                let ab = sub(b, a);
                let foot = [a[0] + t * ab[0], a[1] + t * ab[1]];
                assert!(dot(sub(p, foot), ab).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn polyline_distance_examples() {
        let r = point_polyline_distance([0.5, 1.0], &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!((r.distance, r.segment, r.t), (1.0, 0, 0.5));
        let on = point_polyline_distance([0.3, 0.0], &[[0.0, 0.0], [1.0, 0.0]]).unwrap();
        assert_eq!(on.distance, 0.0);
        assert_eq!(
            point_polyline_distance([0.0, 0.0], &[[1.0, 1.0]]),
            Err(GeometryError::InvalidPolyline(1))
        );
    }

    #[test]
    fn polyline_distance_ties_go_to_first_segment() {
        // The shared vertex (1,0) is equally close via segment 0 (t=1) and 1 (t=0).
        let r = point_polyline_distance([2.0, -1.0], &[[0.0, 0.0], [1.0, 0.0], [1.0, 1.0]]).unwrap();
        assert_eq!(r.segment, 0);
        assert_eq!(r.t, 1.0);
    }

    #[test]
    fn chamfer_examples() {
        let a = vec![[0.0, 0.0], [5.0, 0.0]];
        assert_eq!(polyline_chamfer(&a, &a).unwrap(), 0.0);
        let b = vec![[0.0, 1.0], [5.0, 1.0]];
        assert!((polyline_chamfer(&a, &b).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(polyline_chamfer(&[], &b), Err(GeometryError::EmptyInput));
    }

    #[test]
    fn camera_examples() {
        let mut cam = CameraModel::mounted([0.0; 3], 0.0, 1.2, 640, 480);
        cam.fx = 500.0;
        cam.fy = 500.0;
        cam.cx = 320.0;
        cam.cy = 240.0;
        assert_eq!(
            cam.project_camera_point([0.0, 0.0, 10.0]),
            Projection::Visible { u: 320.0, v: 240.0, depth: 10.0 }
        );
        assert_eq!(cam.project_camera_point([0.0, 0.0, -5.0]), Projection::OutsideFrustum);
        assert_eq!(
            cam.project_camera_point([1.0, 2.0, 10.0]),
            Projection::Visible { u: 370.0, v: 340.0, depth: 10.0 }
        );
        // Forward-looking camera sees a point ahead of the ego vehicle.
        let ahead = project_to_camera([10.0, 0.0, 0.0], &cam).pixel().unwrap();
        assert!((ahead.0 - 320.0).abs() < 1e-9 && (ahead.2 - 10.0).abs() < 1e-9);
        assert_eq!(project_to_camera([-10.0, 0.0, 0.0], &cam), Projection::OutsideFrustum);
    }

    #[test]
    fn camera_roundtrip() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cam = CameraModel::mounted([1.0, 0.2, 1.5], 0.6, 1.2, 320, 160);
        for _ in 0..500 {
            let p = [
                rng.random_range(-3.0..3.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(0.5..40.0),
            ];
            if let Some((u, v, d)) = cam.project_camera_point(p).pixel() {
                let q = cam.unproject(u, v, d);
                for k in 0..3 {
                    assert!((p[k] - q[k]).abs() < 1e-9);
                }
            }
            let e = cam.camera_to_ego(p);
            let back = cam.ego_to_camera(e);
            for k in 0..3 {
                assert!((p[k] - back[k]).abs() < 1e-9);
            }
        }
    }

    fn grid_2x2() -> FeatureGrid {
        FeatureGrid {
            rows: 2,
            cols: 2,
            channels: 1,
            data: vec![1.0, 2.0, 3.0, 4.0],
        }
    }

    #[test]
    fn bilinear_examples() {
        let g = grid_2x2();
        assert_eq!(bilinear_sample(&g, (1.0, 0.0)).unwrap(), vec![2.0]);
        assert_eq!(bilinear_sample(&g, (0.5, 0.5)).unwrap(), vec![2.5]);
        let s = bilinear_sample(&g, (0.25, 0.75)).unwrap()[0];
        let expect = 0.1875 * 1.0 + 0.0625 * 2.0 + 0.5625 * 3.0 + 0.1875 * 4.0;
        assert!((s - expect).abs() < 1e-12);
        // Border replication outside the grid.
        assert_eq!(bilinear_sample(&g, (-3.0, 5.0)).unwrap(), vec![3.0]);
        assert_eq!(
            bilinear_sample(&FeatureGrid::zeros(0, 0, 4), (0.0, 0.0)),
            Err(GeometryError::EmptyGrid)
        );
    }

    #[test]
    fn overlap_examples() {
        let a = OrientedBox2D::new([0.0, 0.0], 2.0, 2.0, 0.3);
        assert!(boxes_overlap(&a, &a));
        let far = OrientedBox2D::new([100.0, 0.0], 2.0, 2.0, 0.0);
        assert!(!boxes_overlap(&a, &far));
    }

    #[test]
    fn segment_box_hits() {
        let b = OrientedBox2D::new([5.0, 0.0], 2.0, 4.0, 0.0);
        assert!(segment_hits_box([0.0, 0.0], [10.0, 0.0], &b));
        assert!(!segment_hits_box([0.0, 0.0], [2.0, 0.0], &b));
        assert!(!segment_hits_box([0.0, 3.0], [10.0, 3.0], &b));
    }
}
