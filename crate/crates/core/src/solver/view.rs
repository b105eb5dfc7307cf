//! Per-level views of the octree: the group's cells restricted to one depth
//! (ancestors substituted for finer leaves, histograms aggregated) plus the
//! frozen face-neighbor halo, with face-area adjacency derived from code
//! arithmetic under the 2:1 guarantee.

use std::collections::HashMap;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::RootFrame;
use crate::instrument::RecordResidency;
use crate::morton::{MortonCode, Face, FACES};
use crate::record::{CubeRecord, OctreeFile, HISTOGRAM_BINS};

#[derive(Debug, Clone)]
pub struct LevelCell {
    pub code: MortonCode,
    pub center: Point3<f64>,
    pub edge: f64,
    pub hist: [u64; HISTOGRAM_BINS],
    pub u: f64,
    pub v: [f64; 3],
    pub frozen: bool,
    /// Record range this cell covers in the octree file.
    pub first_record: u64,
    pub last_record: u64,
}

#[derive(Debug)]
pub struct LevelView {
    pub level: u8,
    pub frame: RootFrame,
    /// Interior cells first (Z-order), halo cells after.
    pub cells: Vec<LevelCell>,
    pub n_interior: usize,
    /// Adjacency entries `(cell index, shared face area)` for cell `i`,
    /// face `f` live at `adj[adj_off[i * 6 + f] .. adj_off[i * 6 + f + 1]]`.
    /// Rows exist for interior cells only; an empty row means the root
    /// boundary (treated as reflection).
    pub adj_off: Vec<u32>,
    pub adj: Vec<(u32, f64)>,
    _residency: RecordResidency,
}

impl LevelView {
    pub fn neighbors(&self, cell: usize, face: Face) -> &[(u32, f64)] {
        let f = face_index(face);
        let a = self.adj_off[cell * 6 + f] as usize;
        let b = self.adj_off[cell * 6 + f + 1] as usize;
        &self.adj[a..b]
    }
}

pub(crate) fn face_index(face: Face) -> usize {
    match face {
        Face::XNeg => 0,
        Face::XPos => 1,
        Face::YNeg => 2,
        Face::YPos => 3,
        Face::ZNeg => 4,
        Face::ZPos => 5,
    }
}

fn cell_geometry(frame: &RootFrame, code: MortonCode) -> (Point3<f64>, f64) {
    let (x, y, z) = code.decode();
    (
        frame.cell_center(code.depth(), [x, y, z]),
        frame.cell_edge(code.depth()),
    )
}

/// The 4 children of `m` touching the face of `m` seen from direction
/// `face` (i.e. the face shared with the cell that asked).
fn face_children(m: MortonCode, face: Face) -> [MortonCode; 4] {
    // The asking cell looks along `face`; the shared face of `m` is on the
    // opposite side, so we keep children whose bit on this axis is 0 for a
    // positive direction of travel (they hug the low face), 1 otherwise.
    let axis_bit = match face.axis() {
        0 => 2, // octant bit 2 = x
        1 => 1,
        _ => 0,
    };
    let want = if face.sign() > 0 { 0 } else { 1 };
    let mut out = [m; 4];
    let mut k = 0;
    for oct in 0..8u8 {
        if ((oct >> axis_bit) & 1) as u8 == want {
            out[k] = m.child(oct);
            k += 1;
        }
    }
    debug_assert_eq!(k, 4);
    out
}

struct HaloLoader<'a> {
    file: &'a mut OctreeFile,
    level: u8,
    with_hist: bool,
}

impl HaloLoader<'_> {
    /// Restricted-tiling cell covering the region of `x`: the original leaf
    /// containing `x`'s min corner, capped at the view level.
    fn restricted_covering(&mut self, x: MortonCode) -> Result<MortonCode> {
        let (_, rec) = self.file.covering_leaf(x.path_bits())?;
        Ok(if rec.code.depth() <= self.level {
            rec.code
        } else {
            rec.code.ancestor_at(self.level)
        })
    }

    /// Record range [first, last) of the subtree of `code`.
    fn subtree_range(&mut self, code: MortonCode) -> Result<(u64, u64)> {
        let (first_idx, first_rec) = self.file.covering_leaf(code.path_bits())?;
        if !(code.contains(&first_rec.code) || first_rec.code.contains(&code)) {
            return Err(Error::Consistency(format!(
                "halo cell {code} not covered by the octree"
            )));
        }
        // The covering leaf of the min corner is the first record inside.
        let last;
        if let Some(end) = code.subtree_end() {
            let mut lo = first_idx;
            let mut hi = self.file.len();
            // Last record with path < end.
            while hi - lo > 1 {
                let mid = lo + (hi - lo) / 2;
                let rec = self.file.read(mid)?;
                if rec.code.path_bits() < end {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            last = lo + 1;
        } else {
            last = self.file.len();
        }
        Ok((first_idx, last))
    }

    fn load_cell(&mut self, frame: &RootFrame, code: MortonCode) -> Result<LevelCell> {
        let (first, last) = self.subtree_range(code)?;
        let head = self.file.read(first)?;
        let mut hist = [0u64; HISTOGRAM_BINS];
        if self.with_hist {
            let mut buf: Vec<CubeRecord> = Vec::new();
            // Bounded chunks keep halo aggregation within the memory budget.
            let mut at = first;
            while at < last {
                let hi = (at + 4096).min(last);
                self.file.read_range(at, hi, &mut buf)?;
                for r in &buf {
                    for (b, h) in hist.iter_mut().enumerate() {
                        *h += r.histogram[b] as u64;
                    }
                }
                at = hi;
            }
        }
        let (center, edge) = cell_geometry(frame, code);
        Ok(LevelCell {
            code,
            center,
            edge,
            hist,
            u: head.u as f64,
            v: [head.v[0] as f64, head.v[1] as f64, head.v[2] as f64],
            frozen: true,
            first_record: first,
            last_record: last,
        })
    }
}

/// Build the level-`level` view of records `[first, last)`.
/// `with_halo_hist` additionally aggregates halo histograms (needed only for
/// the coarsest-level initialization).
pub fn build_level_view(
    file: &mut OctreeFile,
    first: u64,
    last: u64,
    level: u8,
    with_halo_hist: bool,
) -> Result<LevelView> {
    let frame = file.frame();

    // Interior cells: stream the range, collapsing consecutive records that
    // share a depth-`level` ancestor.
    let mut cells: Vec<LevelCell> = Vec::new();
    {
        let mut buf: Vec<CubeRecord> = Vec::new();
        let mut at = first;
        while at < last {
            let hi = (at + 4096).min(last);
            file.read_range(at, hi, &mut buf)?;
            for (k, rec) in buf.iter().enumerate() {
                let idx = at + k as u64;
                let cell_code = if rec.code.depth() <= level {
                    rec.code
                } else {
                    rec.code.ancestor_at(level)
                };
                match cells.last_mut() {
                    Some(c) if c.code == cell_code => {
                        for (b, h) in c.hist.iter_mut().enumerate() {
                            *h += rec.histogram[b] as u64;
                        }
                        c.last_record = idx + 1;
                    }
                    _ => {
                        let (center, edge) = cell_geometry(&frame, cell_code);
                        cells.push(LevelCell {
                            code: cell_code,
                            center,
                            edge,
                            hist: std::array::from_fn(|b| rec.histogram[b] as u64),
                            u: rec.u as f64,
                            v: [rec.v[0] as f64, rec.v[1] as f64, rec.v[2] as f64],
                            frozen: false,
                            first_record: idx,
                            last_record: idx + 1,
                        });
                    }
                }
            }
            at = hi;
        }
    }
    let n_interior = cells.len();
    let mut residency = RecordResidency::new(cells.len() as u64);

    let mut index: HashMap<MortonCode, u32> = cells
        .iter()
        .enumerate()
        .map(|(i, c)| (c.code, i as u32))
        .collect();

    let mut loader = HaloLoader {
        file,
        level,
        with_hist: with_halo_hist,
    };

    // The covering cell equal to `x` or one of its ancestors, from the view
    // or (as a new frozen halo cell) from the file. `None` when `x` is split.
    let mut lookup = |x: MortonCode,
                      cells: &mut Vec<LevelCell>,
                      index: &mut HashMap<MortonCode, u32>|
     -> Result<Option<u32>> {
        let mut walk = x;
        loop {
            if let Some(&j) = index.get(&walk) {
                return Ok(Some(j));
            }
            match walk.parent() {
                Some(p) => walk = p,
                None => break,
            }
        }
        let covering = loader.restricted_covering(x)?;
        if covering.contains(&x) {
            let cell = loader.load_cell(&frame, covering)?;
            let j = cells.len() as u32;
            cells.push(cell);
            index.insert(covering, j);
            Ok(Some(j))
        } else {
            Ok(None)
        }
    };

    let mut adj_off: Vec<u32> = Vec::with_capacity(n_interior * 6 + 1);
    let mut adj: Vec<(u32, f64)> = Vec::new();
    adj_off.push(0);
    for i in 0..n_interior {
        let code = cells[i].code;
        let edge = cells[i].edge;
        for face in FACES {
            match code.face_neighbor(face) {
                None => {} // root boundary: reflection
                Some(m) => {
                    if let Some(j) = lookup(m, &mut cells, &mut index)? {
                        let depth_j = cells[j as usize].code.depth();
                        if depth_j + 1 < code.depth() {
                            return Err(Error::Consistency(format!(
                                "2:1 balance violated between {code} and {}",
                                cells[j as usize].code
                            )));
                        }
                        adj.push((j, edge * edge));
                    } else {
                        // Neighbor region is finer: exactly the 4 face
                        // children by the 2:1 guarantee.
                        let quarter = (edge / 2.0) * (edge / 2.0);
                        for c in face_children(m, face) {
                            match lookup(c, &mut cells, &mut index)? {
                                Some(j) => {
                                    if cells[j as usize].code != c {
                                        return Err(Error::Consistency(format!(
                                            "expected face child {c} to be a cell"
                                        )));
                                    }
                                    adj.push((j, quarter));
                                }
                                None => {
                                    return Err(Error::Consistency(format!(
                                        "2:1 balance violated: {c} is split further"
                                    )));
                                }
                            }
                        }
                    }
                }
            }
            adj_off.push(adj.len() as u32);
        }
    }
    residency.resize(cells.len() as u64);

    Ok(LevelView {
        level,
        frame,
        cells,
        n_interior,
        adj_off,
        adj,
        _residency: residency,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::octree::build_treetop;
    use crate::oracle;
    use crate::record::RecordWriter;
    use nalgebra::Point3;
    use std::path::Path;

    fn frame() -> RootFrame {
        RootFrame::new(Point3::origin(), 1.0).unwrap()
    }

    fn write_tiling(path: &Path, codes: &[MortonCode]) {
        let mut w = RecordWriter::create(path, frame()).unwrap();
        for (i, c) in codes.iter().enumerate() {
            let mut rec = CubeRecord::filler(*c);
            rec.u = i as f32 * 0.001;
            rec.histogram[i % 8] = 1 + (i as u32 % 3);
            w.push(&rec).unwrap();
        }
        w.finish().unwrap();
    }

    #[test]
    fn single_group_has_no_halo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let leaves = oracle::balanced_completion(&[MortonCode::encode(3, 1, 2, 3)]);
        write_tiling(&path, &leaves);
        let mut file = OctreeFile::open(&path).unwrap();
        let n = file.len();
        let view = build_level_view(&mut file, 0, n, 3, false).unwrap();
        assert_eq!(view.n_interior, view.cells.len());
        // Restricted to level 3: every leaf is included as itself or its
        // level-3 ancestor, and cells tile the root cube.
        let codes: Vec<MortonCode> = view.cells.iter().map(|c| c.code).collect();
        oracle::assert_complete(&codes);
    }

    #[test]
    fn restriction_aggregates_histograms() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let leaves = oracle::balanced_completion(&[MortonCode::encode(3, 1, 2, 3)]);
        write_tiling(&path, &leaves);
        let mut file = OctreeFile::open(&path).unwrap();
        let n = file.len();
        let total_votes: u64 = {
            let view = build_level_view(&mut file, 0, n, 0, false).unwrap();
            assert_eq!(view.cells.len(), 1);
            view.cells[0].hist.iter().sum()
        };
        let mut by_leaf = 0u64;
        let view3 = build_level_view(&mut file, 0, n, 30, false).unwrap();
        for c in &view3.cells {
            by_leaf += c.hist.iter().sum::<u64>();
        }
        assert_eq!(total_votes, by_leaf);
    }

    #[test]
    fn split_range_gets_frozen_halo() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        // Uniform depth-2 tiling: 64 cells; treetop below the limit splits.
        let mut codes = Vec::new();
        for x in 0..4u32 {
            for y in 0..4u32 {
                for z in 0..4u32 {
                    codes.push(MortonCode::encode(2, x, y, z));
                }
            }
        }
        codes.sort();
        write_tiling(&path, &codes);
        let top = build_treetop(&path, 16).unwrap();
        let leaves = top.leaves();
        assert!(leaves.len() >= 8);
        let mut file = OctreeFile::open(&path).unwrap();
        let leaf = leaves[0];
        let view = build_level_view(&mut file, leaf.first, leaf.last, 2, false).unwrap();
        assert!(view.n_interior < view.cells.len(), "expected halo cells");
        for c in &view.cells[view.n_interior..] {
            assert!(c.frozen);
        }
        // Every interior cell on the group boundary sees at least one frozen
        // neighbor; interior-of-group cells see none.
        let mut frozen_links = 0;
        for i in 0..view.n_interior {
            for face in FACES {
                for &(j, _) in view.neighbors(i, face) {
                    if view.cells[j as usize].frozen {
                        frozen_links += 1;
                    }
                }
            }
        }
        assert!(frozen_links > 0);
    }

    #[test]
    fn adjacency_is_symmetric_with_matching_areas() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let leaves = oracle::balanced_completion(&[
            MortonCode::encode(4, 3, 9, 2),
            MortonCode::encode(3, 1, 1, 1),
            MortonCode::encode(5, 30, 0, 12),
        ]);
        write_tiling(&path, &leaves);
        let mut file = OctreeFile::open(&path).unwrap();
        let n = file.len();
        let view = build_level_view(&mut file, 0, n, 30, false).unwrap();
        // Gather all (i, j, area) links and check the reverse exists with the
        // same area (both cells interior here: single group).
        let mut links: HashMap<(u32, u32), f64> = HashMap::new();
        for i in 0..view.n_interior {
            for face in FACES {
                for &(j, area) in view.neighbors(i, face) {
                    links.insert((i as u32, j), area);
                }
            }
        }
        for (&(i, j), &area) in &links {
            let back = links.get(&(j, i));
            assert!(back.is_some(), "missing reverse link {j} -> {i}");
            assert!((back.unwrap() - area).abs() < 1e-15);
        }
        // Brute-force geometric check: the shared face area of two adjacent
        // cells is the squared edge of the finer one.
        for (&(i, j), &area) in &links {
            let a = &view.cells[i as usize];
            let b = &view.cells[j as usize];
            let expect = a.edge.min(b.edge).powi(2);
            assert!((area - expect).abs() < 1e-12);
        }
    }
}
