//! Conversion of terrestrial LIDAR point clouds into equirectangular range
//! images, plus a minimal ASCII PLY point reader.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::SensorPose;

use super::{ProjectionModel, RangeImage};

/// Default histogram vote weight for noise-free terrestrial LIDAR input.
pub const LIDAR_VOTE_WEIGHT: u32 = 5;

#[derive(Debug)]
pub struct LidarConversion {
    pub image: RangeImage,
    /// Points coincident with the sensor origin, skipped.
    pub skipped_at_origin: u64,
}

/// Bin every point into the equirectangular pixel of its direction from the
/// sensor origin; conflicting points keep the minimum distance (nearest
/// surface wins).
pub fn lidar_to_range_image(
    points: &[Point3<f64>],
    origin: SensorPose,
    width: u32,
    height: u32,
) -> Result<LidarConversion> {
    if width != 2 * height {
        return Err(Error::Contract(format!(
            "equirectangular image must cover the full sphere: width {width} != 2 * height {height}"
        )));
    }
    let mut image = RangeImage::empty(
        origin,
        ProjectionModel::Equirectangular,
        width,
        height,
        LIDAR_VOTE_WEIGHT,
    )?;
    let mut skipped = 0u64;
    for p in points {
        match image.project_point(p) {
            None => skipped += 1,
            Some((u, v, dist)) => {
                let x = (u.floor() as i64).clamp(0, width as i64 - 1) as u32;
                let y = (v.floor() as i64).clamp(0, height as i64 - 1) as u32;
                let idx = image.idx(x, y);
                let cur = image.depth[idx];
                if cur.is_nan() || (dist as f32) < cur {
                    image.depth[idx] = dist as f32;
                }
            }
        }
    }
    Ok(LidarConversion {
        image,
        skipped_at_origin: skipped,
    })
}

/// Read vertex positions from an ASCII PLY file (one `x y z` triple per
/// vertex; extra properties are ignored).
pub fn read_ascii_ply_points(path: impl AsRef<Path>) -> Result<Vec<Point3<f64>>> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let reader = BufReader::new(file);
    let mut lines = reader.lines();
    let mut offset = 0u64;

    let mut next_line = |offset: &mut u64| -> Result<Option<String>> {
        match lines.next() {
            None => Ok(None),
            Some(Err(e)) => Err(Error::io(&path, e)),
            Some(Ok(l)) => {
                *offset += l.len() as u64 + 1;
                Ok(Some(l))
            }
        }
    };

    let header_err = |offset: u64, what: &str| Error::parse(&path, offset, what);

    match next_line(&mut offset)? {
        Some(l) if l.trim() == "ply" => {}
        _ => return Err(header_err(0, "missing 'ply' magic line")),
    }

    let mut vertex_count: Option<usize> = None;
    let mut xyz_cols: [Option<usize>; 3] = [None; 3];
    let mut property_index = 0usize;
    let mut in_vertex_element = false;
    loop {
        let line_start = offset;
        let line = next_line(&mut offset)?
            .ok_or_else(|| header_err(line_start, "unexpected end of header"))?;
        let line = line.trim().to_string();
        if line == "end_header" {
            break;
        }
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("format") => {
                if tok.next() != Some("ascii") {
                    return Err(header_err(line_start, "only ascii PLY is supported"));
                }
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let kind = tok.next().unwrap_or("");
                in_vertex_element = kind == "vertex";
                if in_vertex_element {
                    let n: usize = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| header_err(line_start, "bad vertex count"))?;
                    vertex_count = Some(n);
                    property_index = 0;
                }
            }
            Some("property") => {
                if in_vertex_element {
                    let _ty = tok.next();
                    if let Some(name) = tok.next() {
                        match name {
                            "x" => xyz_cols[0] = Some(property_index),
                            "y" => xyz_cols[1] = Some(property_index),
                            "z" => xyz_cols[2] = Some(property_index),
                            _ => {}
                        }
                    }
                    property_index += 1;
                }
            }
            _ => {}
        }
    }

    let count = vertex_count.ok_or_else(|| header_err(0, "missing 'element vertex'"))?;
    let cols = match xyz_cols {
        [Some(a), Some(b), Some(c)] => [a, b, c],
        _ => return Err(header_err(0, "vertex element lacks x/y/z properties")),
    };

    let mut points = Vec::with_capacity(count);
    for _ in 0..count {
        let line_start = offset;
        let line = next_line(&mut offset)?
            .ok_or_else(|| header_err(line_start, "truncated vertex list"))?;
        let fields: Vec<&str> = line.split_whitespace().collect();
        let mut xyz = [0f64; 3];
        for (k, col) in cols.iter().enumerate() {
            xyz[k] = fields
                .get(*col)
                .and_then(|s| s.parse().ok())
                .ok_or_else(|| header_err(line_start, "bad vertex coordinate"))?;
        }
        points.push(Point3::new(xyz[0], xyz[1], xyz[2]));
    }
    Ok(points)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn single_point_lands_in_nearest_pixel() {
        // Brute force: search every pixel for the one whose center direction
        // is closest to the point's direction, then check the conversion
        // filled exactly that one. The probe direction sits strictly inside
        // a pixel so the nearest center is unambiguous.
        let probe = RangeImage::empty(
            SensorPose::identity(),
            ProjectionModel::Equirectangular,
            16,
            8,
            1,
        )
        .unwrap();
        let dir = probe.pixel_direction(5, 3);
        let points = [Point3::from(dir * 2.0)];
        let conv = lidar_to_range_image(&points, SensorPose::identity(), 16, 8).unwrap();
        assert_eq!(conv.image.valid_count(), 1);
        assert_eq!(conv.skipped_at_origin, 0);

        let img = &conv.image;
        let mut best = (0u32, 0u32);
        let mut best_dot = f64::NEG_INFINITY;
        for y in 0..8 {
            for x in 0..16 {
                let d = img.pixel_direction(x, y).dot(&dir);
                if d > best_dot {
                    best_dot = d;
                    best = (x, y);
                }
            }
        }
        assert_eq!(best, (5, 3));
        let got = img.depth_at(best.0, best.1).unwrap();
        assert!((got - 2.0).abs() < 1e-6);
    }

    #[test]
    fn empty_cloud_gives_empty_image() {
        let conv = lidar_to_range_image(&[], SensorPose::identity(), 8, 4).unwrap();
        assert_eq!(conv.image.valid_count(), 0);
    }

    #[test]
    fn nearest_point_wins_pixel_conflicts() {
        let points = [Point3::new(3.0, 0.0, 0.0), Point3::new(2.0, 0.0, 0.0)];
        let conv = lidar_to_range_image(&points, SensorPose::identity(), 8, 4).unwrap();
        assert_eq!(conv.image.valid_count(), 1);
        let max = conv.image.max_valid_depth().unwrap();
        assert_eq!(max, 2.0);
    }

    #[test]
    fn origin_points_are_counted_not_fatal() {
        let points = [Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)];
        let conv = lidar_to_range_image(&points, SensorPose::identity(), 8, 4).unwrap();
        assert_eq!(conv.skipped_at_origin, 1);
        assert_eq!(conv.image.valid_count(), 1);
        assert_eq!(conv.image.vote_weight, LIDAR_VOTE_WEIGHT);
    }

    #[test]
    fn ascii_ply_reader_parses_vertices() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.ply");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "ply").unwrap();
        writeln!(f, "format ascii 1.0").unwrap();
        writeln!(f, "comment test cloud").unwrap();
        writeln!(f, "element vertex 2").unwrap();
        writeln!(f, "property float x").unwrap();
        writeln!(f, "property float y").unwrap();
        writeln!(f, "property float z").unwrap();
        writeln!(f, "end_header").unwrap();
        writeln!(f, "1 2 3").unwrap();
        writeln!(f, "-0.5 0.25 9").unwrap();
        drop(f);
        let pts = read_ascii_ply_points(&path).unwrap();
        assert_eq!(pts.len(), 2);
        assert_eq!(pts[1], Point3::new(-0.5, 0.25, 9.0));
    }
}
