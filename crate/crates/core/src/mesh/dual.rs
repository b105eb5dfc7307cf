//! Dual cells of the balanced tiling: one per interior lattice vertex, its
//! corners being the (up to) 8 cells around the vertex. Coarse cells repeat
//! where the resolution changes. Each dual cell is owned by exactly one
//! treetop leaf: the one holding the corner cell with the smallest key.

use std::collections::{HashMap, HashSet};

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::RootFrame;
use crate::instrument::RecordResidency;
use crate::morton::{MortonCode, MAX_DEPTH};
use crate::octree::treetop::Treetop;
use crate::record::{CubeRecord, OctreeFile};

use super::tables::CORNER_OFFSETS;

#[derive(Debug, Clone, Copy)]
pub struct MeshCell {
    pub code: MortonCode,
    pub center: Point3<f64>,
    pub u: f64,
    /// Index of the cell's first record in the octree file (global identity
    /// used for ownership decisions).
    pub first_record: u64,
}

/// Dual cell: view-cell indices of the 8 corners in marching-cubes corner
/// order (repeats where a coarse cell covers several octants).
#[derive(Debug, Clone, Copy)]
pub struct DualCell {
    pub corners: [u32; 8],
}

/// Cells of one leaf range restricted to a level, plus file-backed lookup of
/// cells outside the range (the halo needed by straddling dual cells).
pub struct MeshView<'a> {
    file: &'a mut OctreeFile,
    pub frame: RootFrame,
    pub level: u8,
    pub cells: Vec<MeshCell>,
    pub n_interior: usize,
    index: HashMap<MortonCode, u32>,
    _residency: RecordResidency,
}

impl<'a> MeshView<'a> {
    /// Build the view of records `[first, last)` restricted to `level`.
    pub fn build(
        file: &'a mut OctreeFile,
        first: u64,
        last: u64,
        level: u8,
    ) -> Result<MeshView<'a>> {
        let frame = file.frame();
        let mut cells: Vec<MeshCell> = Vec::new();
        let mut buf: Vec<CubeRecord> = Vec::new();
        let mut at = first;
        while at < last {
            let hi = (at + 4096).min(last);
            file.read_range(at, hi, &mut buf)?;
            for (k, rec) in buf.iter().enumerate() {
                let idx = at + k as u64;
                let code = if rec.code.depth() <= level {
                    rec.code
                } else {
                    rec.code.ancestor_at(level)
                };
                match cells.last() {
                    Some(c) if c.code == code => {}
                    _ => {
                        let (x, y, z) = code.decode();
                        cells.push(MeshCell {
                            code,
                            center: frame.cell_center(code.depth(), [x, y, z]),
                            u: rec.u as f64,
                            first_record: idx,
                        });
                    }
                }
            }
            at = hi;
        }
        let n_interior = cells.len();
        let residency = RecordResidency::new(cells.len() as u64);
        let index = cells
            .iter()
            .enumerate()
            .map(|(i, c)| (c.code, i as u32))
            .collect();
        Ok(MeshView {
            file,
            frame,
            level,
            cells,
            n_interior,
            index,
            _residency: residency,
        })
    }

    /// View-cell index of the restricted cell containing the finest-lattice
    /// cell `(x, y, z)`; loads a halo cell from the file when outside the
    /// range.
    pub fn lookup(&mut self, x: u32, y: u32, z: u32) -> Result<u32> {
        let fine = MortonCode::finest(x, y, z);
        let mut walk = fine.ancestor_at(self.level);
        loop {
            if let Some(&i) = self.index.get(&walk) {
                return Ok(i);
            }
            match walk.parent() {
                Some(p) => walk = p,
                None => break,
            }
        }
        // Halo: resolve from the file.
        let (_, rec) = self.file.covering_leaf(fine.path_bits())?;
        let code = if rec.code.depth() <= self.level {
            rec.code
        } else {
            rec.code.ancestor_at(self.level)
        };
        if !code.contains(&fine) {
            return Err(Error::Consistency(format!(
                "octree does not cover lattice cell ({x}, {y}, {z})"
            )));
        }
        let (first_record, head) = self.file.covering_leaf(code.path_bits())?;
        let (cx, cy, cz) = code.decode();
        let cell = MeshCell {
            code,
            center: self.frame.cell_center(code.depth(), [cx, cy, cz]),
            u: head.u as f64,
            first_record,
        };
        let idx = self.cells.len() as u32;
        self.cells.push(cell);
        self.index.insert(code, idx);
        Ok(idx)
    }
}

/// True when lattice point `(vx, vy, vz)` is a geometric corner of `code`.
fn vertex_is_corner_of(code: MortonCode, vx: u64, vy: u64, vz: u64) -> bool {
    let (x, y, z) = code.decode();
    let shift = (MAX_DEPTH - code.depth()) as u32;
    let on = |c: u32, v: u64| v == (c as u64) << shift || v == ((c + 1) as u64) << shift;
    on(x, vx) && on(y, vy) && on(z, vz)
}

/// Enumerate the dual cells owned by treetop leaf `leaf_idx` within `view`
/// (which must be the view of exactly that leaf's record range).
pub fn leaf_dual_cells(
    view: &mut MeshView,
    treetop: &Treetop,
    leaf_idx: usize,
) -> Result<Vec<DualCell>> {
    let leaves = treetop.leaves();
    let n_lattice = 1u64 << MAX_DEPTH;
    let mut seen: HashSet<(u32, u32, u32)> = HashSet::new();
    let mut out = Vec::new();

    let leaf_of_record = |record: u64| -> usize {
        leaves.partition_point(|l| l.last <= record)
    };

    for ci in 0..view.n_interior {
        let code = view.cells[ci].code;
        let (x, y, z) = code.decode();
        let shift = (MAX_DEPTH - code.depth()) as u32;
        for (ox, oy, oz) in CORNER_OFFSETS {
            let vx = ((x + ox) as u64) << shift;
            let vy = ((y + oy) as u64) << shift;
            let vz = ((z + oz) as u64) << shift;
            if vx == 0
                || vy == 0
                || vz == 0
                || vx == n_lattice
                || vy == n_lattice
                || vz == n_lattice
            {
                continue; // dual cells stop at the root boundary
            }
            let key = (vx as u32, vy as u32, vz as u32);
            if !seen.insert(key) {
                continue;
            }
            let mut corners = [0u32; 8];
            // Ownership goes to the smallest-code corner cell that has this
            // lattice vertex as one of its geometric corners (for coarse
            // corners the vertex may only be a T-junction on a face; such a
            // cell's leaf never visits the vertex). The finest incident cell
            // always qualifies, so an owner always exists.
            let mut min_code: Option<(MortonCode, u64)> = None;
            for (k, (cx, cy, cz)) in CORNER_OFFSETS.iter().enumerate() {
                let idx = view.lookup(
                    (vx as u32) - 1 + cx,
                    (vy as u32) - 1 + cy,
                    (vz as u32) - 1 + cz,
                )?;
                corners[k] = idx;
                let cell = &view.cells[idx as usize];
                if !vertex_is_corner_of(cell.code, vx, vy, vz) {
                    continue;
                }
                match min_code {
                    Some((c, _)) if c <= cell.code => {}
                    _ => min_code = Some((cell.code, cell.first_record)),
                }
            }
            let (_, owner_record) =
                min_code.expect("the finest incident cell has the vertex as corner");
            if leaf_of_record(owner_record) != leaf_idx {
                continue;
            }
            out.push(DualCell { corners });
        }
    }
    Ok(out)
}
