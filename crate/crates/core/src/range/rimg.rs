//! The RIMG binary range-image format (little-endian).
//!
//! Layout: magic `RIMG`; `u32` version = 1; `u8` model tag (0 pinhole,
//! 1 equirectangular); `u32` width, height; `f64` fx, fy, cx, cy (ignored for
//! equirectangular); `f64[12]` pose (origin xyz + row-major rotation);
//! `u32` vote_weight; then `width * height` `f32` depths with `NaN` = absent.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{Matrix3, Point3};

use crate::error::{Error, Result};
use crate::geom::SensorPose;

use super::{ProjectionModel, RangeImage};

pub const RIMG_MAGIC: &[u8; 4] = b"RIMG";
pub const RIMG_VERSION: u32 = 1;

const OFF_TAG: u64 = 8;
const OFF_WIDTH: u64 = 9;
const OFF_FOCALS: u64 = 17;
const OFF_POSE: u64 = 49;
const OFF_VOTE: u64 = 145;
const OFF_DEPTHS: u64 = 149;

pub fn save_range_image(path: impl AsRef<Path>, img: &RangeImage) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);

    w.write_all(RIMG_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(RIMG_VERSION).map_err(io)?;
    w.write_u8(img.model.tag()).map_err(io)?;
    w.write_u32::<LittleEndian>(img.width).map_err(io)?;
    w.write_u32::<LittleEndian>(img.height).map_err(io)?;
    let (fx, fy, cx, cy) = match img.model {
        ProjectionModel::Pinhole { fx, fy, cx, cy } => (fx, fy, cx, cy),
        ProjectionModel::Equirectangular => (0.0, 0.0, 0.0, 0.0),
    };
    for v in [fx, fy, cx, cy] {
        w.write_f64::<LittleEndian>(v).map_err(io)?;
    }
    for v in [img.pose.origin.x, img.pose.origin.y, img.pose.origin.z] {
        w.write_f64::<LittleEndian>(v).map_err(io)?;
    }
    for r in 0..3 {
        for c in 0..3 {
            w.write_f64::<LittleEndian>(img.pose.rotation[(r, c)])
                .map_err(io)?;
        }
    }
    w.write_u32::<LittleEndian>(img.vote_weight).map_err(io)?;
    for d in &img.depth {
        // Raw bits so depths round-trip exactly, NaN payloads included.
        w.write_u32::<LittleEndian>(d.to_bits()).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_range_image(path: impl AsRef<Path>) -> Result<RangeImage> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(&path, e);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != RIMG_MAGIC {
        return Err(Error::parse(&path, 0, "bad magic, expected RIMG"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != RIMG_VERSION {
        return Err(Error::parse(&path, 4, format!("unsupported version {version}")));
    }
    let tag = r.read_u8().map_err(io)?;
    let width = r.read_u32::<LittleEndian>().map_err(io)?;
    let height = r.read_u32::<LittleEndian>().map_err(io)?;
    if width == 0 || height == 0 {
        return Err(Error::parse(&path, OFF_WIDTH, "zero image dimension"));
    }
    let fx = r.read_f64::<LittleEndian>().map_err(io)?;
    let fy = r.read_f64::<LittleEndian>().map_err(io)?;
    let cx = r.read_f64::<LittleEndian>().map_err(io)?;
    let cy = r.read_f64::<LittleEndian>().map_err(io)?;
    let model = match tag {
        0 => {
            if !(fx > 0.0 && fy > 0.0 && fx.is_finite() && fy.is_finite()) {
                return Err(Error::parse(&path, OFF_FOCALS, "pinhole focals must be positive"));
            }
            ProjectionModel::Pinhole { fx, fy, cx, cy }
        }
        1 => ProjectionModel::Equirectangular,
        t => {
            return Err(Error::parse(&path, OFF_TAG, format!("unknown projection tag {t}")));
        }
    };
    let ox = r.read_f64::<LittleEndian>().map_err(io)?;
    let oy = r.read_f64::<LittleEndian>().map_err(io)?;
    let oz = r.read_f64::<LittleEndian>().map_err(io)?;
    let mut rot = Matrix3::zeros();
    for row in 0..3 {
        for col in 0..3 {
            rot[(row, col)] = r.read_f64::<LittleEndian>().map_err(io)?;
        }
    }
    let pose = SensorPose::new(Point3::new(ox, oy, oz), rot)
        .map_err(|e| Error::parse(&path, OFF_POSE, e.to_string()))?;
    let vote_weight = r.read_u32::<LittleEndian>().map_err(io)?;
    if vote_weight == 0 {
        return Err(Error::parse(&path, OFF_VOTE, "vote_weight must be >= 1"));
    }

    let count = width as usize * height as usize;
    let mut depth = Vec::with_capacity(count);
    for i in 0..count {
        let bits = r.read_u32::<LittleEndian>().map_err(io)?;
        let d = f32::from_bits(bits);
        if !d.is_nan() && !(d.is_finite() && d > 0.0) {
            let offset = OFF_DEPTHS + 4 * i as u64;
            return Err(Error::parse(
                &path,
                offset,
                format!(
                    "depth {} at pixel ({}, {}) must be positive and finite",
                    d,
                    i % width as usize,
                    i / width as usize
                ),
            ));
        }
        depth.push(d);
    }

    RangeImage::new(pose, model, width, height, depth, vote_weight)
}
