//! Range images: posed depth maps (pinhole) and 360-degree scans
//! (equirectangular), plus their distance-field queries.

pub mod frustum;
pub mod lidar;
pub mod pyramid;
pub mod radii;
pub mod rimg;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geom::SensorPose;

pub use frustum::frustum_overlaps;
pub use lidar::{lidar_to_range_image, read_ascii_ply_points, LidarConversion, LIDAR_VOTE_WEIGHT};
pub use pyramid::{build_pyramid, build_pyramid_from, DepthPyramid, PyramidProjection};
pub use radii::estimate_sample_radii;
pub use rimg::{load_range_image, save_range_image};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProjectionModel {
    Pinhole { fx: f64, fy: f64, cx: f64, cy: f64 },
    Equirectangular,
}

impl ProjectionModel {
    pub fn tag(&self) -> u8 {
        match self {
            ProjectionModel::Pinhole { .. } => 0,
            ProjectionModel::Equirectangular => 1,
        }
    }

    /// World-space unit direction through the center of pixel `(x, y)` of a
    /// `width x height` image with this model.
    pub fn direction(
        &self,
        pose: &SensorPose,
        width: u32,
        height: u32,
        x: u32,
        y: u32,
    ) -> Vector3<f64> {
        let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
        let dir_sensor = match *self {
            ProjectionModel::Pinhole { fx, fy, cx, cy } => {
                Vector3::new((u - cx) / fx, (v - cy) / fy, 1.0).normalize()
            }
            ProjectionModel::Equirectangular => {
                let theta = (u / width as f64) * std::f64::consts::TAU - std::f64::consts::PI;
                let phi = (v / height as f64) * std::f64::consts::PI;
                Vector3::new(phi.sin() * theta.cos(), phi.sin() * theta.sin(), phi.cos())
            }
        };
        pose.rotation * dir_sensor
    }

    /// World point of pixel `(x, y)` at a stored depth (z for pinhole, ray
    /// length for equirectangular).
    pub fn unproject(
        &self,
        pose: &SensorPose,
        width: u32,
        height: u32,
        x: u32,
        y: u32,
        depth: f64,
    ) -> Point3<f64> {
        match *self {
            ProjectionModel::Pinhole { fx, fy, cx, cy } => {
                let (u, v) = (x as f64 + 0.5, y as f64 + 0.5);
                let q = Vector3::new((u - cx) / fx * depth, (v - cy) / fy * depth, depth);
                pose.sensor_to_world(&q)
            }
            ProjectionModel::Equirectangular => {
                pose.origin + self.direction(pose, width, height, x, y) * depth
            }
        }
    }

    /// Continuous level-0 pixel coordinates of a world point plus its
    /// distance in this model's depth convention. `None` behind a pinhole
    /// camera, outside the pinhole image, or at the sensor origin.
    pub fn project(
        &self,
        pose: &SensorPose,
        width: u32,
        height: u32,
        p: &Point3<f64>,
    ) -> Option<(f64, f64, f64)> {
        let q = pose.world_to_sensor(p);
        match *self {
            ProjectionModel::Pinhole { fx, fy, cx, cy } => {
                if q.z <= 0.0 {
                    return None;
                }
                let u = fx * q.x / q.z + cx;
                let v = fy * q.y / q.z + cy;
                if u < 0.0 || u >= width as f64 || v < 0.0 || v >= height as f64 {
                    return None;
                }
                Some((u, v, q.z))
            }
            ProjectionModel::Equirectangular => {
                let r = q.norm();
                if r == 0.0 {
                    return None;
                }
                let theta = q.y.atan2(q.x);
                let phi = (q.z / r).clamp(-1.0, 1.0).acos();
                let mut u =
                    (theta + std::f64::consts::PI) / std::f64::consts::TAU * width as f64;
                let v = (phi / std::f64::consts::PI * height as f64).min(height as f64 - 0.5);
                if u >= width as f64 {
                    u -= width as f64;
                }
                Some((u, v, r))
            }
        }
    }
}

/// A posed sensor with per-pixel depths. Depth stores the z coordinate in the
/// sensor frame for pinhole images and the ray length for equirectangular
/// ones; `NaN` marks pixels without a return.
#[derive(Debug, Clone)]
pub struct RangeImage {
    pub pose: SensorPose,
    pub model: ProjectionModel,
    pub width: u32,
    pub height: u32,
    pub depth: Vec<f32>,
    pub vote_weight: u32,
}

impl RangeImage {
    pub fn new(
        pose: SensorPose,
        model: ProjectionModel,
        width: u32,
        height: u32,
        depth: Vec<f32>,
        vote_weight: u32,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Contract("range image must not be empty".into()));
        }
        if depth.len() != (width as usize) * (height as usize) {
            return Err(Error::Contract(format!(
                "depth grid has {} entries, expected {}",
                depth.len(),
                width as usize * height as usize
            )));
        }
        if vote_weight == 0 {
            return Err(Error::Contract("vote_weight must be >= 1".into()));
        }
        if let ProjectionModel::Pinhole { fx, fy, .. } = model {
            if !(fx > 0.0 && fy > 0.0) {
                return Err(Error::Contract("pinhole focals must be positive".into()));
            }
        }
        for (i, d) in depth.iter().enumerate() {
            if !d.is_nan() && !(d.is_finite() && *d > 0.0) {
                return Err(Error::Contract(format!(
                    "depth at pixel ({}, {}) is {}; depths must be positive and finite",
                    i % width as usize,
                    i / width as usize,
                    d
                )));
            }
        }
        Ok(RangeImage {
            pose,
            model,
            width,
            height,
            depth,
            vote_weight,
        })
    }

    /// Image filled with `NaN` (no returns).
    pub fn empty(
        pose: SensorPose,
        model: ProjectionModel,
        width: u32,
        height: u32,
        vote_weight: u32,
    ) -> Result<Self> {
        RangeImage::new(
            pose,
            model,
            width,
            height,
            vec![f32::NAN; width as usize * height as usize],
            vote_weight,
        )
    }

    #[inline]
    pub fn idx(&self, x: u32, y: u32) -> usize {
        y as usize * self.width as usize + x as usize
    }

    #[inline]
    pub fn depth_at(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.depth[self.idx(x, y)];
        if d.is_nan() {
            None
        } else {
            Some(d as f64)
        }
    }

    pub fn valid_count(&self) -> u64 {
        self.depth.iter().filter(|d| !d.is_nan()).count() as u64
    }

    pub fn max_valid_depth(&self) -> Option<f64> {
        self.depth
            .iter()
            .filter(|d| !d.is_nan())
            .map(|d| *d as f64)
            .fold(None, |acc, d| Some(acc.map_or(d, |a: f64| a.max(d))))
    }

    /// World-space unit direction through the center of pixel `(x, y)`.
    pub fn pixel_direction(&self, x: u32, y: u32) -> Vector3<f64> {
        self.model
            .direction(&self.pose, self.width, self.height, x, y)
    }

    /// World point of pixel `(x, y)` at the given stored depth.
    pub fn unproject(&self, x: u32, y: u32, depth: f64) -> Point3<f64> {
        self.model
            .unproject(&self.pose, self.width, self.height, x, y, depth)
    }

    /// Continuous level-0 pixel coordinates of a world point together with
    /// its distance in this image's depth convention. `None` behind a pinhole
    /// camera, outside the pinhole image, or at the sensor origin.
    pub fn project_point(&self, p: &Point3<f64>) -> Option<(f64, f64, f64)> {
        self.model.project(&self.pose, self.width, self.height, p)
    }

    /// Half of the 3D footprint of one pixel at `depth`; the radius fallback
    /// for samples without valid neighbors.
    pub fn half_pixel_footprint(&self, depth: f64) -> f64 {
        match self.model {
            ProjectionModel::Pinhole { fx, fy, .. } => 0.5 * depth * 0.5 * (1.0 / fx + 1.0 / fy),
            ProjectionModel::Equirectangular => {
                0.5 * depth * std::f64::consts::TAU / self.width as f64
            }
        }
    }
}
