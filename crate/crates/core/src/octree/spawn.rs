//! Turn one range image into a sorted, pre-merged run of octree cell records.

use std::path::Path;

use crate::error::Result;
use crate::geom::RootFrame;
use crate::instrument::RecordResidency;
use crate::morton::MortonCode;
use crate::par;
use crate::range::RangeImage;
use crate::record::{CubeRecord, RecordWriter};

#[derive(Debug, Clone, Copy, Default)]
pub struct SpawnStats {
    /// Samples that produced a record contribution.
    pub samples: u64,
    /// Records actually written (after pre-merging equal codes).
    pub records: u64,
    /// Samples outside the root cube, skipped.
    pub skipped_outside: u64,
}

/// Spawn one cell per valid sample at the depth bracketing its radius, sort
/// by key, merge duplicates, and write a single run file.
pub fn spawn_cubes(
    img: &RangeImage,
    radii: &[f64],
    frame: &RootFrame,
    out: impl AsRef<Path>,
) -> Result<SpawnStats> {
    assert_eq!(radii.len(), img.depth.len());
    let mut stats = SpawnStats::default();

    let mut seeds: Vec<(MortonCode, u32, f64)> = Vec::new();
    for y in 0..img.height {
        for x in 0..img.width {
            let idx = img.idx(x, y);
            let Some(depth) = img.depth_at(x, y) else {
                continue;
            };
            let r_x = radii[idx];
            if r_x.is_nan() || r_x <= 0.0 {
                continue;
            }
            let p = img.unproject(x, y, depth);
            if !frame.contains(&p) {
                stats.skipped_outside += 1;
                continue;
            }
            let d = frame.depth_for_radius(r_x);
            let xyz = frame.cell_of_point(&p, d);
            seeds.push((MortonCode::encode(d, xyz[0], xyz[1], xyz[2]), idx as u32, r_x));
        }
    }
    let _residency = RecordResidency::new(seeds.len() as u64);
    stats.samples = seeds.len() as u64;

    // Pixel index breaks ties so equal-code r_sum accumulation order is fixed.
    par::sort_by(&mut seeds, |a, b| (a.0, a.1).cmp(&(b.0, b.1)));

    let mut writer = RecordWriter::create(out.as_ref(), *frame)?;
    let mut pending: Option<CubeRecord> = None;
    for (code, _, r_x) in seeds {
        match pending.as_mut() {
            Some(rec) if rec.code == code => {
                rec.n += 1;
                rec.r_sum += r_x as f32;
            }
            _ => {
                if let Some(rec) = pending.take() {
                    writer.push(&rec)?;
                }
                pending = Some(CubeRecord::seed(code, r_x as f32));
            }
        }
    }
    if let Some(rec) = pending {
        writer.push(&rec)?;
    }
    stats.records = writer.finish()?;
    Ok(stats)
}
