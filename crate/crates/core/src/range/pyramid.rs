//! Depth-map mipmap pyramids with per-level sample radii, and the
//! footprint-matched projection used by histogram voting.

use nalgebra::Point3;

use crate::geom::SensorPose;
use crate::instrument::PyramidResidency;

use super::{estimate_sample_radii, ProjectionModel, RangeImage};

#[derive(Debug)]
pub struct PyramidLevel {
    pub width: u32,
    pub height: u32,
    /// Stored depths, `NaN` = absent.
    pub depth: Vec<f32>,
    /// Sample radii, `NaN` = absent; doubles per level with the footprint.
    pub radius: Vec<f64>,
}

impl PyramidLevel {
    #[inline]
    fn at(&self, x: u32, y: u32) -> Option<f64> {
        let d = self.depth[y as usize * self.width as usize + x as usize];
        if d.is_nan() {
            None
        } else {
            Some(d as f64)
        }
    }
}

/// Mipmap pyramid of one range image. Level 0 is the full resolution; each
/// coarser level halves both dimensions (ceiling division).
pub struct DepthPyramid {
    pub pose: SensorPose,
    pub model: ProjectionModel,
    pub vote_weight: u32,
    pub levels: Vec<PyramidLevel>,
    _residency: PyramidResidency,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PyramidProjection {
    pub level: usize,
    pub pixel: (u32, u32),
    /// Depth stored at the chosen level's pixel, if any.
    pub depth: Option<f64>,
    /// Sample radius stored at the chosen level's pixel: the footprint of
    /// the material points summarized by this texel.
    pub sample_radius: Option<f64>,
    /// Distance from the sensor to the query point, in the image's depth
    /// convention (z for pinhole, ray length for equirectangular).
    pub distance: f64,
}

fn level_count(width: u32, height: u32) -> usize {
    1 + (width.max(height) as f64).log2().floor() as usize
}

/// Mean of the valid values among `vals`; `None` if all are absent.
fn mean_valid(vals: &[Option<f64>]) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for v in vals.iter().flatten() {
        sum += v;
        n += 1;
    }
    if n == 0 {
        None
    } else {
        Some(sum / n as f64)
    }
}

pub fn build_pyramid(img: &RangeImage) -> DepthPyramid {
    let radii0 = estimate_sample_radii(img);
    build_levels(
        img.pose,
        img.model,
        img.vote_weight,
        img.width,
        img.height,
        img.depth.clone(),
        radii0,
    )
}

/// Consuming variant: the image's depth grid becomes pyramid level 0, so the
/// pyramid is the only resident copy of the distance field.
pub fn build_pyramid_from(img: RangeImage) -> DepthPyramid {
    let radii0 = estimate_sample_radii(&img);
    let RangeImage {
        pose,
        model,
        width,
        height,
        depth,
        vote_weight,
    } = img;
    build_levels(pose, model, vote_weight, width, height, depth, radii0)
}

fn build_levels(
    pose: SensorPose,
    model: ProjectionModel,
    vote_weight: u32,
    width: u32,
    height: u32,
    depth0: Vec<f32>,
    radii0: Vec<f64>,
) -> DepthPyramid {
    let residency = PyramidResidency::new();
    let mut levels = vec![PyramidLevel {
        width,
        height,
        depth: depth0,
        radius: radii0,
    }];

    let total = level_count(width, height);
    while levels.len() < total {
        let prev = levels.last().unwrap();
        let (pw, ph) = (prev.width, prev.height);
        let w = pw.div_ceil(2);
        let h = ph.div_ceil(2);
        let mut depth = vec![f32::NAN; w as usize * h as usize];
        let mut radius = vec![f64::NAN; w as usize * h as usize];
        for y in 0..h {
            for x in 0..w {
                let mut ds = [None; 4];
                let mut rs = [None; 4];
                let mut k = 0;
                for (dx, dy) in [(0u32, 0u32), (1, 0), (0, 1), (1, 1)] {
                    let (cx, cy) = (2 * x + dx, 2 * y + dy);
                    if cx < pw && cy < ph {
                        ds[k] = prev.at(cx, cy);
                        let r = prev.radius[cy as usize * pw as usize + cx as usize];
                        rs[k] = if r.is_nan() { None } else { Some(r) };
                        k += 1;
                    }
                }
                let idx = y as usize * w as usize + x as usize;
                if let Some(d) = mean_valid(&ds[..k]) {
                    depth[idx] = d as f32;
                }
                if let Some(r) = mean_valid(&rs[..k]) {
                    radius[idx] = 2.0 * r;
                }
            }
        }
        levels.push(PyramidLevel {
            width: w,
            height: h,
            depth,
            radius,
        });
    }

    DepthPyramid {
        pose,
        model,
        vote_weight,
        levels,
        _residency: residency,
    }
}

impl DepthPyramid {
    pub fn base_width(&self) -> u32 {
        self.levels[0].width
    }

    pub fn base_height(&self) -> u32 {
        self.levels[0].height
    }

    /// Project a ball of the given `radius` around `center`; picks the mipmap
    /// level whose texel footprint matches the ball's projected diameter.
    /// The level depends only on that diameter, never on octree bookkeeping.
    pub fn project(&self, center: &Point3<f64>, radius: f64) -> Option<PyramidProjection> {
        debug_assert!(radius > 0.0);
        let (w0, h0) = (self.base_width(), self.base_height());
        let (u, v, distance) = self.model.project(&self.pose, w0, h0, center)?;

        let diameter_px = match self.model {
            ProjectionModel::Pinhole { fx, fy, .. } => radius * (fx + fy) / distance,
            ProjectionModel::Equirectangular => {
                let ang = 2.0 * (radius / distance).clamp(0.0, 1.0).asin();
                ang * w0 as f64 / std::f64::consts::TAU
            }
        };
        let level = if diameter_px <= 1.0 {
            0
        } else {
            (diameter_px.log2().round() as usize).min(self.levels.len() - 1)
        };

        let px0 = u.floor() as u32;
        let py0 = v.floor() as u32;
        let lv = &self.levels[level];
        let px = (px0 >> level).min(lv.width - 1);
        let py = (py0 >> level).min(lv.height - 1);
        let r = lv.radius[py as usize * lv.width as usize + px as usize];
        Some(PyramidProjection {
            level,
            pixel: (px, py),
            depth: lv.at(px, py),
            sample_radius: if r.is_nan() { None } else { Some(r) },
            distance,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::SensorPose;

    fn pinhole_image(w: u32, h: u32, f: f64, depths: Vec<f32>) -> RangeImage {
        RangeImage::new(
            SensorPose::identity(),
            ProjectionModel::Pinhole {
                fx: f,
                fy: f,
                cx: w as f64 / 2.0,
                cy: h as f64 / 2.0,
            },
            w,
            h,
            depths,
            1,
        )
        .unwrap()
    }

    #[test]
    fn constant_image_collapses_to_constant_levels() {
        let img = pinhole_image(4, 4, 10.0, vec![2.0; 16]);
        let pyr = build_pyramid(&img);
        assert_eq!(pyr.levels.len(), 3);
        assert_eq!(
            (pyr.levels[1].width, pyr.levels[1].height),
            (2, 2)
        );
        assert_eq!(
            (pyr.levels[2].width, pyr.levels[2].height),
            (1, 1)
        );
        for lv in &pyr.levels {
            for d in &lv.depth {
                assert_eq!(*d, 2.0);
            }
        }
    }

    #[test]
    fn single_valid_pixel_propagates() {
        let mut depths = vec![f32::NAN; 4];
        depths[0] = 5.0;
        let img = pinhole_image(2, 2, 10.0, depths);
        let pyr = build_pyramid(&img);
        assert_eq!(pyr.levels.len(), 2);
        assert_eq!(pyr.levels[1].at(0, 0), Some(5.0));
    }

    #[test]
    fn mean_of_two_valid_children() {
        let depths = vec![1.0, f32::NAN, 3.0, f32::NAN];
        let img = pinhole_image(2, 2, 10.0, depths);
        let pyr = build_pyramid(&img);
        assert_eq!(pyr.levels[1].at(0, 0), Some(2.0));
    }

    #[test]
    fn validity_propagates_iff_any_child_valid() {
        let mut depths = vec![f32::NAN; 16];
        depths[5] = 1.5; // pixel (1, 1)
        let img = pinhole_image(4, 4, 10.0, depths);
        let pyr = build_pyramid(&img);
        for (lv_i, lv) in pyr.levels.iter().enumerate().skip(1) {
            let prev = &pyr.levels[lv_i - 1];
            for y in 0..lv.height {
                for x in 0..lv.width {
                    let mut any_child = false;
                    for (dx, dy) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                        let (cx, cy) = (2 * x + dx, 2 * y + dy);
                        if cx < prev.width && cy < prev.height && prev.at(cx, cy).is_some() {
                            any_child = true;
                        }
                    }
                    assert_eq!(lv.at(x, y).is_some(), any_child);
                }
            }
        }
    }

    #[test]
    fn level_from_projected_diameter() {
        // On the optical axis at depth z a ball of radius r projects to a
        // diameter of 2 r f / z pixels.
        let f = 64.0;
        let img = pinhole_image(128, 128, f, vec![4.0; 128 * 128]);
        let pyr = build_pyramid(&img);
        let z = 4.0;
        // diameter 1 px -> level 0
        let r1 = z / (2.0 * f);
        let p = pyr
            .project(&Point3::new(0.0, 0.0, z), r1)
            .unwrap();
        assert_eq!(p.level, 0);
        assert!((p.distance - z).abs() < 1e-12);
        // diameter 4 px -> level 2
        let r4 = 4.0 * z / (2.0 * f);
        let p = pyr.project(&Point3::new(0.0, 0.0, z), r4).unwrap();
        assert_eq!(p.level, 2);
    }

    #[test]
    fn behind_camera_is_absent() {
        let img = pinhole_image(8, 8, 10.0, vec![1.0; 64]);
        let pyr = build_pyramid(&img);
        assert!(pyr.project(&Point3::new(0.0, 0.0, -1.0), 0.1).is_none());
    }

    #[test]
    fn radii_double_per_level() {
        let img = pinhole_image(4, 4, 10.0, vec![2.0; 16]);
        let pyr = build_pyramid(&img);
        let r0 = pyr.levels[0].radius[5];
        let r1 = pyr.levels[1].radius[0];
        assert!(r1 > 1.5 * r0 && r1 < 2.5 * r0);
    }
}
