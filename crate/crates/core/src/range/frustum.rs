//! Conservative image-frustum / cube overlap tests used to select the
//! distance fields relevant to a treetop leaf.

use nalgebra::{Point3, Vector3};

use super::{ProjectionModel, RangeImage};

/// Axis-aligned cube given by min corner and edge length.
#[derive(Debug, Clone, Copy)]
pub struct Cube {
    pub min: Point3<f64>,
    pub edge: f64,
}

impl Cube {
    pub fn corners(&self) -> [Point3<f64>; 8] {
        std::array::from_fn(|i| {
            Point3::new(
                self.min.x + ((i >> 2) & 1) as f64 * self.edge,
                self.min.y + ((i >> 1) & 1) as f64 * self.edge,
                self.min.z + (i & 1) as f64 * self.edge,
            )
        })
    }

    pub fn contains(&self, p: &Point3<f64>) -> bool {
        (0..3).all(|k| p[k] >= self.min[k] && p[k] <= self.min[k] + self.edge)
    }

    /// Squared distance from a point to this cube.
    pub fn distance_sq(&self, p: &Point3<f64>) -> f64 {
        let mut d2 = 0.0;
        for k in 0..3 {
            let lo = self.min[k];
            let hi = self.min[k] + self.edge;
            let c = p[k].clamp(lo, hi);
            d2 += (p[k] - c) * (p[k] - c);
        }
        d2
    }
}

/// Conservative test: never `false` when a valid-pixel ray segment (sensor
/// origin to stored depth plus `slack`) can intersect the cube; spurious
/// `true` is allowed. Equirectangular images use a bounding-ball test.
pub fn frustum_overlaps(img: &RangeImage, cube: &Cube, slack: f64) -> bool {
    debug_assert!(cube.edge > 0.0);
    let Some(max_depth) = img.max_valid_depth() else {
        return false; // no returns, nothing can vote
    };
    let reach = max_depth + slack.max(0.0);

    match img.model {
        ProjectionModel::Equirectangular => cube.distance_sq(&img.pose.origin) <= reach * reach,
        ProjectionModel::Pinhole { fx, fy, cx, cy } => {
            if cube.contains(&img.pose.origin) {
                return true;
            }
            // Box corners in the sensor frame; reject when all of them lie
            // outside one frustum plane.
            let corners: Vec<Vector3<f64>> = cube
                .corners()
                .iter()
                .map(|c| img.pose.world_to_sensor(c))
                .collect();

            // Apex half-space and far plane (z-depth convention).
            if corners.iter().all(|c| c.z < 0.0) {
                return false;
            }
            if corners.iter().all(|c| c.z > reach) {
                return false;
            }

            // Side planes through the image rectangle corners.
            let dir = |u: f64, v: f64| Vector3::new((u - cx) / fx, (v - cy) / fy, 1.0);
            let (w, h) = (img.width as f64, img.height as f64);
            let d00 = dir(0.0, 0.0);
            let dw0 = dir(w, 0.0);
            let dwh = dir(w, h);
            let d0h = dir(0.0, h);
            let center = (d00 + dw0 + dwh + d0h) * 0.25;
            for (a, b) in [(d00, d0h), (d0h, dwh), (dwh, dw0), (dw0, d00)] {
                let mut n = a.cross(&b);
                if n.dot(&center) < 0.0 {
                    n = -n;
                }
                if corners.iter().all(|c| n.dot(c) < 0.0) {
                    return false;
                }
            }
            true
        }
    }
}
