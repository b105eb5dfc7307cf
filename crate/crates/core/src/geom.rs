//! Poses, the root cube frame, and cell geometry.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::error::{Error, Result};

/// Rigid pose of a range sensor: `rotation` maps sensor coordinates to world
/// coordinates, `origin` is the sensor center in world coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPose {
    pub origin: Point3<f64>,
    pub rotation: Matrix3<f64>,
}

impl SensorPose {
    pub fn new(origin: Point3<f64>, rotation: Matrix3<f64>) -> Result<Self> {
        let res = rotation.transpose() * rotation - Matrix3::identity();
        if res.amax() > 1e-9 {
            return Err(Error::Contract(format!(
                "sensor rotation is not orthonormal (max residual {:.3e})",
                res.amax()
            )));
        }
        if (rotation.determinant() - 1.0).abs() > 1e-9 {
            return Err(Error::Contract(
                "sensor rotation must have determinant +1".into(),
            ));
        }
        Ok(SensorPose { origin, rotation })
    }

    pub fn identity() -> Self {
        SensorPose {
            origin: Point3::origin(),
            rotation: Matrix3::identity(),
        }
    }

    /// Pose looking from `eye` toward `target`, sensor +z forward.
    pub fn look_at(eye: Point3<f64>, target: Point3<f64>) -> Self {
        let forward = (target - eye).normalize();
        // Pick an up vector that is not parallel to the view direction.
        let up_hint = if forward.z.abs() > 0.999 {
            Vector3::new(0.0, 1.0, 0.0)
        } else {
            Vector3::new(0.0, 0.0, 1.0)
        };
        let right = forward.cross(&up_hint).normalize();
        let down = forward.cross(&right); // completes a right-handed frame with +z forward
        let rotation = Matrix3::from_columns(&[right, down, forward]);
        SensorPose {
            origin: eye,
            rotation,
        }
    }

    #[inline]
    pub fn world_to_sensor(&self, p: &Point3<f64>) -> Vector3<f64> {
        self.rotation.transpose() * (p - self.origin)
    }

    #[inline]
    pub fn sensor_to_world(&self, v: &Vector3<f64>) -> Point3<f64> {
        self.origin + self.rotation * v
    }
}

/// The root cube of the octree: spans `center ± r_root` along every axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RootFrame {
    pub center: Point3<f64>,
    pub r_root: f64,
}

impl RootFrame {
    pub fn new(center: Point3<f64>, r_root: f64) -> Result<Self> {
        if !(r_root > 0.0 && r_root.is_finite()) {
            return Err(Error::Contract("root radius must be positive".into()));
        }
        Ok(RootFrame { center, r_root })
    }

    #[inline]
    pub fn min_corner(&self) -> Point3<f64> {
        self.center - Vector3::repeat(self.r_root)
    }

    #[inline]
    pub fn contains(&self, p: &Point3<f64>) -> bool {
        let d = p - self.center;
        d.x.abs() <= self.r_root && d.y.abs() <= self.r_root && d.z.abs() <= self.r_root
    }

    /// Half edge length of a cell at `depth`.
    #[inline]
    pub fn cell_radius(&self, depth: u8) -> f64 {
        self.r_root / (1u64 << depth) as f64
    }

    /// Edge length of a cell at `depth`.
    #[inline]
    pub fn cell_edge(&self, depth: u8) -> f64 {
        2.0 * self.cell_radius(depth)
    }

    /// Integer cell coordinates of the cell containing `p` at `depth`,
    /// clamped so points on the max faces still map to a valid cell.
    pub fn cell_of_point(&self, p: &Point3<f64>, depth: u8) -> [u32; 3] {
        let n = 1u64 << depth;
        let edge = self.cell_edge(depth);
        let min = self.min_corner();
        let mut out = [0u32; 3];
        for (k, (pc, mc)) in [(p.x, min.x), (p.y, min.y), (p.z, min.z)].iter().enumerate() {
            let i = ((pc - mc) / edge).floor() as i64;
            out[k] = i.clamp(0, n as i64 - 1) as u32;
        }
        out
    }

    /// Center of the cell `(x, y, z)` at `depth`.
    pub fn cell_center(&self, depth: u8, xyz: [u32; 3]) -> Point3<f64> {
        let edge = self.cell_edge(depth);
        let min = self.min_corner();
        Point3::new(
            min.x + (xyz[0] as f64 + 0.5) * edge,
            min.y + (xyz[1] as f64 + 0.5) * edge,
            min.z + (xyz[2] as f64 + 0.5) * edge,
        )
    }

    /// Min corner of the cell `(x, y, z)` at `depth`.
    pub fn cell_min(&self, depth: u8, xyz: [u32; 3]) -> Point3<f64> {
        let edge = self.cell_edge(depth);
        let min = self.min_corner();
        Point3::new(
            min.x + xyz[0] as f64 * edge,
            min.y + xyz[1] as f64 * edge,
            min.z + xyz[2] as f64 * edge,
        )
    }

    /// Octree depth whose cell radius brackets the sample radius:
    /// `0.75 * r_x <= cell_radius(d) < 1.5 * r_x`, clamped to `[0, 30]`.
    /// When rounding makes two depths plausible the coarser one wins.
    pub fn depth_for_radius(&self, r_x: f64) -> u8 {
        debug_assert!(r_x > 0.0 && r_x.is_finite());
        let upper = 1.5 * r_x;
        // Smallest d with cell_radius(d) < 1.5 * r_x.
        let mut d = if self.r_root < upper {
            0i32
        } else {
            (self.r_root / upper).log2().floor() as i32
        };
        d = d.clamp(0, 30);
        while d < 30 && self.cell_radius(d as u8) >= upper {
            d += 1;
        }
        while d > 0 && self.cell_radius((d - 1) as u8) < upper {
            d -= 1;
        }
        d as u8
    }
}
