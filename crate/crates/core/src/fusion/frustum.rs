//! Frustum fusion: radar features projected into each camera enrich the
//! image cells around their projection, and the ego query is initialized by
//! average pooling the enriched cells.

use ndarray::Array2;

use crate::autodiff::{ParamStore, Tape, Var};
use crate::geometry::{bilinear_weights, project_to_camera, CameraModel};
use crate::model::{CameraView, FusionConfig, Point3};

use super::attention::{AttentionSpec, KeyRef};
use super::encoder::RadarContext;
use super::network::FusionNetwork;
use super::{aggregate::residual_attention, FusionError, RadarFeature};

/// Where one camera's cells live inside the stacked cell matrix.
#[derive(Clone, Debug)]
pub struct ViewLayout {
    pub camera: CameraModel,
    pub rows: usize,
    pub cols: usize,
    pub offset: usize,
}

/// All camera cells, projected into model space and stacked row-wise.
#[derive(Clone, Debug)]
pub struct CameraContext {
    pub cells: Var,
    pub views: Vec<ViewLayout>,
}

impl CameraContext {
    pub fn total_cells(&self) -> usize {
        self.views.iter().map(|v| v.rows * v.cols).sum()
    }

    /// Bilinear lookup entries (stacked cell index, weight) for a 3D ego-frame
    /// point, averaged over the cameras that see it.
    pub fn sample_entries(&self, point: Point3) -> Vec<(usize, f64)> {
        let mut entries = Vec::new();
        let mut seen = 0usize;
        for view in &self.views {
            let Some((u, v, _)) = project_to_camera(point, &view.camera).pixel() else {
                continue;
            };
            let gx = u * view.cols as f64 / view.camera.width as f64 - 0.5;
            let gy = v * view.rows as f64 / view.camera.height as f64 - 0.5;
            for (idx, w) in bilinear_weights(view.rows, view.cols, gx, gy) {
                entries.push((view.offset + idx, w));
            }
            seen += 1;
        }
        if seen > 1 {
            let s = 1.0 / seen as f64;
            for e in entries.iter_mut() {
                e.1 *= s;
            }
        }
        entries
    }
}

/// Stacks the raw camera grids and projects them to the embedding width.
pub fn camera_context(tape: &mut Tape, net: &FusionNetwork, views: &[CameraView]) -> Result<CameraContext, FusionError> {
    let mut layouts = Vec::with_capacity(views.len());
    let total: usize = views.iter().map(|v| v.grid.cells()).sum();
    let mut raw = Array2::zeros((total, net.camera_channels));
    let mut offset = 0;
    for (i, view) in views.iter().enumerate() {
        let g = &view.grid;
        if g.channels != net.camera_channels {
            return Err(FusionError::Shape(format!(
                "camera {i} grid has {} channels, parameters expect {}",
                g.channels, net.camera_channels
            )));
        }
        for cell in 0..g.cells() {
            for c in 0..g.channels {
                raw[[offset + cell, c]] = g.data[cell * g.channels + c] as f64;
            }
        }
        layouts.push(ViewLayout {
            camera: view.camera.clone(),
            rows: g.rows,
            cols: g.cols,
            offset,
        });
        offset += g.cells();
    }
    let raw = tape.constant(raw);
    let cells = net.camera_proj.apply(tape, raw);
    Ok(CameraContext { cells, views: layouts })
}

/// For every stacked cell, the radar returns whose projection falls within
/// `radius` pixels of the cell center, with pixel distances.
pub fn frustum_neighbors(views: &[ViewLayout], radar: &[Point3], radius: f64) -> Vec<Vec<KeyRef>> {
    let total: usize = views.iter().map(|v| v.rows * v.cols).sum();
    let mut out: Vec<Vec<KeyRef>> = vec![Vec::new(); total];
    for view in views {
        let cw = view.camera.width as f64 / view.cols as f64;
        let ch = view.camera.height as f64 / view.rows as f64;
        for (ri, &p) in radar.iter().enumerate() {
            let Some((u, v, _)) = project_to_camera(p, &view.camera).pixel() else {
                continue;
            };
            let c0 = (((u - radius) / cw - 0.5).floor().max(0.0)) as usize;
            let c1 = ((((u + radius) / cw - 0.5).ceil()) as usize).min(view.cols - 1);
            let r0 = (((v - radius) / ch - 0.5).floor().max(0.0)) as usize;
            let r1 = ((((v + radius) / ch - 0.5).ceil()) as usize).min(view.rows - 1);
            for r in r0..=r1 {
                for c in c0..=c1 {
                    let cx = (c as f64 + 0.5) * cw;
                    let cy = (r as f64 + 0.5) * ch;
                    let d = (cx - u).hypot(cy - v);
                    if d <= radius {
                        out[view.offset + r * view.cols + c].push(KeyRef { index: ri, distance: d });
                    }
                }
            }
        }
    }
    for keys in out.iter_mut() {
        keys.sort_by(|a, b| {
            a.distance.total_cmp(&b.distance).then_with(|| {
                let (pa, pb) = (radar[a.index], radar[b.index]);
                pa[0].total_cmp(&pb[0]).then(pa[1].total_cmp(&pb[1])).then(pa[2].total_cmp(&pb[2]))
            })
        });
    }
    out
}

/// Cells near projected radar attend to those radar features; the distance
/// penalty uses pixel distance normalized by the radius.
pub fn frustum_cross_attention_tape(
    tape: &mut Tape,
    net: &FusionNetwork,
    camera: CameraContext,
    radar: Option<&RadarContext>,
    cfg: &FusionConfig,
) -> CameraContext {
    let Some(radar) = radar else { return camera };
    let neighbors = frustum_neighbors(&camera.views, &radar.positions, cfg.frustum_radius_px);
    let spec = AttentionSpec {
        alpha: cfg.alpha,
        r_max: cfg.frustum_radius_px,
        heads: cfg.num_heads,
    };
    let cells = residual_attention(tape, camera.cells, None, radar.features, neighbors, spec, Some(&net.frustum));
    CameraContext { cells, ..camera }
}

/// Mean over all cells of all cameras.
pub fn ego_query_init_tape(tape: &mut Tape, camera: &CameraContext) -> Result<Var, FusionError> {
    let n = camera.total_cells();
    if n == 0 {
        return Err(FusionError::EmptyGrids);
    }
    let w = 1.0 / n as f64;
    Ok(tape.mix(camera.cells, vec![(0..n).map(|i| (i, w)).collect()]))
}

/// Enriched model-space grids, one `cells × C` matrix per camera.
pub fn frustum_cross_attention(
    views: &[CameraView],
    radar: &[RadarFeature],
    net: &FusionNetwork,
    store: &ParamStore,
    cfg: &FusionConfig,
) -> Result<Vec<Array2<f64>>, FusionError> {
    let mut tape = Tape::new(store);
    let camera = camera_context(&mut tape, net, views)?;
    let radar_ctx = if radar.is_empty() {
        None
    } else {
        let mut m = Array2::zeros((radar.len(), net.embed_dim));
        for (i, r) in radar.iter().enumerate() {
            if r.feature.len() != net.embed_dim {
                return Err(FusionError::Shape(format!(
                    "radar feature {i} has dimension {}, expected {}",
                    r.feature.len(),
                    net.embed_dim
                )));
            }
            for (j, &v) in r.feature.iter().enumerate() {
                m[[i, j]] = v;
            }
        }
        Some(RadarContext {
            features: tape.constant(m),
            positions: radar.iter().map(|r| r.position).collect(),
        })
    };
    let enriched = frustum_cross_attention_tape(&mut tape, net, camera, radar_ctx.as_ref(), cfg);
    let all = tape.value(enriched.cells);
    Ok(enriched
        .views
        .iter()
        .map(|v| all.slice(ndarray::s![v.offset..v.offset + v.rows * v.cols, ..]).to_owned())
        .collect())
}

/// Average pooling of the enriched grids into a single query.
pub fn ego_query_init(grids: &[Array2<f64>]) -> Result<Vec<f64>, FusionError> {
    let n: usize = grids.iter().map(|g| g.nrows()).sum();
    let Some(dim) = grids.iter().find(|g| g.nrows() > 0).map(|g| g.ncols()) else {
        return Err(FusionError::EmptyGrids);
    };
    let mut out = vec![0.0; dim];
    for g in grids {
        for row in g.rows() {
            for (o, &v) in out.iter_mut().zip(row) {
                *o += v;
            }
        }
    }
    Ok(out.into_iter().map(|v| v / n as f64).collect())
}
