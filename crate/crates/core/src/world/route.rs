//! Ego routes and the road geometry derived from them.

use std::f64::consts::FRAC_PI_2;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::model::{MapClass, Point2, Pose2D};

use super::config::MapTemplate;

/// Straight lead-in, a constant-curvature arc, then a straight exit.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Route {
    pub lead_in: f64,
    /// Signed curvature of the arc, 1/m (positive turns left).
    pub curvature: f64,
    /// Heading change over the arc, radians (non-negative).
    pub turn_angle: f64,
}

/// Lateral offsets (left positive) of the road lines relative to the ego lane
/// center: right edge, lane divider, left edge.
pub const ROAD_LINES: [(f64, MapClass); 3] = [
    (-1.75, MapClass::Boundary),
    (1.75, MapClass::Divider),
    (5.25, MapClass::Boundary),
];
pub const LANE_WIDTH: f64 = 3.5;

impl Route {
    pub fn straight() -> Self {
        Route {
            lead_in: 0.0,
            curvature: 0.0,
            turn_angle: 0.0,
        }
    }

    pub fn sample<R: Rng>(template: MapTemplate, rng: &mut R) -> Self {
        let side = if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        match template {
            MapTemplate::Straight => Route::straight(),
            MapTemplate::Curve => Route {
                lead_in: rng.random_range(0.0..20.0),
                curvature: side / rng.random_range(40.0..80.0),
                turn_angle: rng.random_range(0.25 * std::f64::consts::PI..FRAC_PI_2),
            },
            MapTemplate::TJunction => Route {
                lead_in: rng.random_range(15.0..35.0),
                curvature: side / 12.0,
                turn_angle: FRAC_PI_2,
            },
        }
    }

    fn arc_length(&self) -> f64 {
        if self.curvature == 0.0 {
            0.0
        } else {
            self.turn_angle / self.curvature.abs()
        }
    }

    /// Pose of the lane center at arc length `s` (extends straight before 0).
    pub fn pose_at(&self, s: f64) -> Pose2D {
        if s <= self.lead_in || self.curvature == 0.0 {
            return Pose2D::new(s, 0.0, 0.0);
        }
        let k = self.curvature;
        let along = (s - self.lead_in).min(self.arc_length());
        let phi = k * along;
        let x = self.lead_in + phi.sin() / k;
        let y = (1.0 - phi.cos()) / k;
        let rest = s - self.lead_in - along;
        Pose2D::new(x + rest * phi.cos(), y + rest * phi.sin(), phi)
    }

    pub fn curvature_at(&self, s: f64) -> f64 {
        if s > self.lead_in && s < self.lead_in + self.arc_length() {
            self.curvature
        } else {
            0.0
        }
    }

    /// World point at arc length `s` and lateral offset `lateral`.
    pub fn offset_point(&self, s: f64, lateral: f64) -> Point2 {
        self.pose_at(s).transform_point([0.0, lateral])
    }

    /// Dense road lines sampled every `step` meters over `[s0, s1]`.
    pub fn road_lines(&self, s0: f64, s1: f64, step: f64) -> Vec<(MapClass, Vec<Point2>)> {
        let n = ((s1 - s0) / step).ceil() as usize + 1;
        ROAD_LINES
            .iter()
            .map(|&(lat, class)| (class, (0..n).map(|i| self.offset_point(s0 + i as f64 * step, lat)).collect()))
            .collect()
    }
}
