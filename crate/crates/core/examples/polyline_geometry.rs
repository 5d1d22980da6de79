//! BEV geometry used by the fusion layers: point-to-polyline distance,
//! oriented box overlap and pinhole projection.
//!
//! cargo run --example polyline_geometry

use radarfuse::geometry::{boxes_overlap, point_polyline_distance, project_to_camera, OrientedBox2D};
use radarfuse::world::{camera_rig, CameraRigConfig};

fn main() {
    let lane = [[0.0, 0.0], [10.0, 0.0], [20.0, 5.0], [30.0, 5.0]];
    for p in [[5.0, 2.0], [15.0, 0.0], [35.0, 5.0], [-3.0, -4.0]] {
        let d = point_polyline_distance(p, &lane).unwrap();
        println!("point {p:?}: {:.3} m from segment {} at t = {:.2}", d.distance, d.segment, d.t);
    }

    let car = OrientedBox2D::new([0.0, 0.0], 1.9, 4.6, 0.0);
    for (center, yaw) in [([3.0, 0.0], 0.0), ([0.0, 2.5], 0.3), ([3.3, 2.2], 0.785)] {
        let other = OrientedBox2D::new(center, 1.9, 4.6, yaw);
        println!("box at {center:?} yaw {yaw}: overlaps = {}", boxes_overlap(&car, &other));
    }

    let cams = camera_rig(&CameraRigConfig::default());
    for point in [[10.0, 1.0, 1.0], [10.0, 30.0, 1.0], [-8.0, 0.0, 0.5]] {
        let hits: Vec<String> = cams
            .iter()
            .enumerate()
            .filter_map(|(i, c)| project_to_camera(point, c).pixel().map(|(u, v, d)| format!("cam {i} ({u:.0}, {v:.0}) at {d:.1} m")))
            .collect();
        println!("{point:?} -> {}", if hits.is_empty() { "not visible".to_string() } else { hits.join(", ") });
    }
}
