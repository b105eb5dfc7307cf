//! Histogram voting: every relevant distance field adds its vote to the
//! 8-bin histogram of every cell of a treetop leaf, one image resident at a
//! time.

use std::fs::OpenOptions;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::Point3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geom::RootFrame;
use crate::instrument::RecordResidency;
use crate::morton::MortonCode;
use crate::octree::treetop::{Treetop, TreetopLeaf};
use crate::par;
use crate::range::frustum::Cube;
use crate::range::{build_pyramid_from, frustum_overlaps, load_range_image, DepthPyramid};
use crate::record::{CubeRecord, OctreeFile, HISTOGRAM_BINS};

/// Width multipliers of the near-surface band (`delta`) and the occluded
/// band (`eta`) relative to the cell density radius.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct VoteParams {
    pub delta_mult: f64,
    pub eta_mult: f64,
}

impl Default for VoteParams {
    fn default() -> Self {
        VoteParams {
            delta_mult: 6.0,
            eta_mult: 18.0,
        }
    }
}

/// Centers of the 8 equal-width histogram bins over [-1, 1].
pub fn bin_center(bin: usize) -> f64 {
    debug_assert!(bin < HISTOGRAM_BINS);
    -1.0 + 0.25 * bin as f64 + 0.125
}

/// The voting rule on raw projection results. `depth` is the stored depth at
/// the projected pixel (absent when the field has no ray there), `distance`
/// the sensor distance in the matching convention.
pub fn histogram_vote(
    depth: Option<f64>,
    distance: f64,
    r_c: f64,
    weight: u32,
    params: &VoteParams,
) -> Option<(usize, u32)> {
    let depth = depth?;
    let delta = params.delta_mult * r_c;
    let eta = params.eta_mult * r_c;
    let a = depth - distance;
    if a < -eta {
        // Deeper behind the surface than the occluded band: this field does
        // not observe the cell at all.
        return None;
    }
    let t = (a / delta).clamp(-1.0, 1.0);
    let bin = (((t + 1.0) * 0.5) * 8.0).floor() as i64;
    Some((bin.clamp(0, 7) as usize, weight))
}

/// Project one cell into a pyramid and compute its vote. The cell's density
/// radius drives the footprint-matched level choice; the band widths follow
/// the material points actually seen there: the texel's stored radius with
/// the per-level footprint doubling undone, i.e. the mean radius of the
/// underlying samples. Cells created without samples therefore do not
/// inflate the occluded band and deep-occluded votes stay rejected. When the
/// texel carries no radius the cell density is the fallback.
pub fn add_to_voxel_histograms(
    pyr: &DepthPyramid,
    center: &Point3<f64>,
    r_c: f64,
    params: &VoteParams,
) -> Option<(usize, u32)> {
    debug_assert!(r_c > 0.0);
    let proj = pyr.project(center, r_c)?;
    let band_radius = proj
        .sample_radius
        .map(|r| r / (1u64 << proj.level) as f64)
        .unwrap_or(r_c);
    histogram_vote(proj.depth, proj.distance, band_radius, pyr.vote_weight, params)
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LeafVoteRecord {
    pub leaf: String,
    pub images: Vec<String>,
}

#[derive(Debug, Default, Clone)]
pub struct VoteStats {
    pub leaves_voted: u64,
    pub leaves_skipped: u64,
    pub votes: u64,
}

fn leaf_cube(frame: &RootFrame, code: MortonCode) -> Cube {
    let (x, y, z) = code.decode();
    Cube {
        min: frame.cell_min(code.depth(), [x, y, z]),
        edge: frame.cell_edge(code.depth()),
    }
}

/// Vote all images into one leaf's records. At most one pyramid and one leaf
/// range are resident at any time.
pub fn vote_leaf(
    file: &mut OctreeFile,
    leaf: &TreetopLeaf,
    images: &[PathBuf],
    params: &VoteParams,
) -> Result<LeafVoteRecord> {
    let frame = file.frame();
    let mut records: Vec<CubeRecord> = Vec::new();
    file.read_range(leaf.first, leaf.last, &mut records)
        .map_err(|e| {
            Error::Consistency(format!("loading leaf {}: {e}", leaf.code))
        })?;
    let _residency = RecordResidency::new(records.len() as u64);

    // Frustum slack from the coarsest cell density so votes just behind the
    // surface near leaf borders are not missed.
    let eta_slack = params.eta_mult
        * records
            .iter()
            .map(|r| r.r_c(&frame))
            .fold(0.0f64, f64::max);
    let cube = leaf_cube(&frame, leaf.code);

    let centers: Vec<(Point3<f64>, f64)> = records
        .iter()
        .map(|r| {
            let (x, y, z) = r.code.decode();
            (frame.cell_center(r.code.depth(), [x, y, z]), r.r_c(&frame))
        })
        .collect();

    let mut voted = Vec::new();
    let votes = AtomicU64::new(0);
    for path in images {
        let pyr = {
            let img = load_range_image(path)?;
            if !frustum_overlaps(&img, &cube, eta_slack) {
                continue;
            }
            build_pyramid_from(img)
        };
        par::for_each_mut(&mut records, |i, rec| {
            let (center, r_c) = centers[i];
            if let Some((bin, w)) = add_to_voxel_histograms(&pyr, &center, r_c, params) {
                rec.histogram[bin] += w;
                votes.fetch_add(1, Ordering::Relaxed);
            }
        });
        voted.push(path.display().to_string());
    }

    file.write_range(leaf.first, &records)?;
    let _ = votes.load(Ordering::Relaxed);
    Ok(LeafVoteRecord {
        leaf: leaf.code.to_string(),
        images: voted,
    })
}

/// Vote every leaf of the treetop, appending one manifest line per finished
/// leaf so an interrupted run resumes where it stopped.
pub fn vote_stage(
    octree_path: impl AsRef<Path>,
    treetop: &Treetop,
    images: &[PathBuf],
    params: &VoteParams,
    manifest_path: impl AsRef<Path>,
) -> Result<VoteStats> {
    let manifest_path = manifest_path.as_ref();
    let mut done: std::collections::HashSet<String> = std::collections::HashSet::new();
    if manifest_path.exists() {
        let f = std::fs::File::open(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(manifest_path, e))?;
            if line.trim().is_empty() {
                continue;
            }
            let rec: LeafVoteRecord = serde_json::from_str(&line).map_err(|e| {
                Error::parse(manifest_path, 0, format!("bad manifest line: {e}"))
            })?;
            done.insert(rec.leaf);
        }
    }

    let mut manifest = OpenOptions::new()
        .create(true)
        .append(true)
        .open(manifest_path)
        .map_err(|e| Error::io(manifest_path, e))?;

    let mut file = OctreeFile::open_rw(octree_path.as_ref())?;
    let mut stats = VoteStats::default();
    for leaf in treetop.leaves() {
        if done.contains(&leaf.code.to_string()) {
            stats.leaves_skipped += 1;
            continue;
        }
        let rec = vote_leaf(&mut file, &leaf, images, params)?;
        let line = serde_json::to_string(&rec)
            .map_err(|e| Error::Consistency(format!("manifest serialization: {e}")))?;
        writeln!(manifest, "{line}").map_err(|e| Error::io(manifest_path, e))?;
        manifest.flush().map_err(|e| Error::io(manifest_path, e))?;
        stats.leaves_voted += 1;
    }
    Ok(stats)
}
