//! Marching cubes over dual cells with exact shared-vertex identity across
//! parts: interpolation operands are ordered by corner cell key, so any leaf
//! that computes a vertex computes the same bits.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::morton::MortonCode;

use super::dual::{DualCell, MeshView};
use super::tables::{CASE_LOOPS, EDGE_ENDPOINTS};
use super::triangulate::dp_triangulate;
use super::MeshPart;

/// Extract the `u = 0` isosurface of the dual cells owned by one leaf.
/// Corners with `u >= 0` classify as exterior.
pub fn extract_part(
    view: &MeshView,
    dual_cells: &[DualCell],
    leaf: MortonCode,
) -> Result<MeshPart> {
    let cells = &view.cells;
    let mut key_to_vertex: HashMap<(MortonCode, MortonCode), u32> = HashMap::new();
    let mut positions: Vec<[f64; 3]> = Vec::new();
    // Chord -> (first incident dual cell, seen from a second one). Collapsed
    // dual cells can emit a chord twice, so incidence is tracked per cell.
    let mut chords: HashMap<(u32, u32), (u32, bool)> = HashMap::new();
    let mut triangles: Vec<[u32; 3]> = Vec::new();

    let mut ids: Vec<u32> = Vec::with_capacity(7);
    let mut pts: Vec<[f64; 3]> = Vec::with_capacity(7);

    for (dc_index, dc) in dual_cells.iter().enumerate() {
        let mut u = [0f64; 8];
        for (k, &ci) in dc.corners.iter().enumerate() {
            let val = cells[ci as usize].u;
            if val.is_nan() {
                return Err(Error::Consistency(format!(
                    "NaN indicator at cell {}",
                    cells[ci as usize].code
                )));
            }
            u[k] = val;
        }
        let mut case = 0usize;
        for (k, &val) in u.iter().enumerate() {
            if val < 0.0 {
                case |= 1 << k;
            }
        }
        if case == 0 || case == 255 {
            continue;
        }

        for lp in &CASE_LOOPS[case] {
            ids.clear();
            pts.clear();
            for &e in lp {
                let [a, b] = EDGE_ENDPOINTS[e as usize];
                let (ca, cb) = (dc.corners[a], dc.corners[b]);
                let (ua, ub) = (u[a], u[b]);
                debug_assert_ne!(ca, cb, "crossing edge between distinct cells");
                // Canonical operand order: smaller cell key first.
                let (lo, hi, ulo, uhi) =
                    if cells[ca as usize].code <= cells[cb as usize].code {
                        (ca, cb, ua, ub)
                    } else {
                        (cb, ca, ub, ua)
                    };
                let key = (cells[lo as usize].code, cells[hi as usize].code);
                let id = match key_to_vertex.get(&key) {
                    Some(&id) => id,
                    None => {
                        let t = ulo / (ulo - uhi);
                        let pl = cells[lo as usize].center;
                        let ph = cells[hi as usize].center;
                        let p = [
                            pl.x + t * (ph.x - pl.x),
                            pl.y + t * (ph.y - pl.y),
                            pl.z + t * (ph.z - pl.z),
                        ];
                        let id = positions.len() as u32;
                        positions.push(p);
                        key_to_vertex.insert(key, id);
                        id
                    }
                };
                ids.push(id);
                pts.push(positions[id as usize]);
            }
            for k in 0..ids.len() {
                let a = ids[k];
                let b = ids[(k + 1) % ids.len()];
                if a != b {
                    let entry = chords
                        .entry((a.min(b), a.max(b)))
                        .or_insert((dc_index as u32, false));
                    if entry.0 != dc_index as u32 {
                        entry.1 = true;
                    }
                }
            }
            for t in dp_triangulate(&pts) {
                triangles.push([
                    ids[t[0] as usize],
                    ids[t[1] as usize],
                    ids[t[2] as usize],
                ]);
            }
        }
    }

    // Border vertices: endpoints of chords seen by only one of the two dual
    // cells sharing the face (the other one belongs to a different leaf).
    let mut border_raw = vec![false; positions.len()];
    for (&(a, b), &(_, both_sides)) in &chords {
        if !both_sides {
            border_raw[a as usize] = true;
            border_raw[b as usize] = true;
        }
    }

    // Weld coincident positions bit-exactly and drop collapsed triangles.
    let mut weld: HashMap<[u64; 3], u32> = HashMap::new();
    let mut remap = vec![0u32; positions.len()];
    let mut vertices: Vec<[f64; 3]> = Vec::new();
    let mut border: Vec<bool> = Vec::new();
    for (i, p) in positions.iter().enumerate() {
        let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
        let id = *weld.entry(key).or_insert_with(|| {
            vertices.push(*p);
            border.push(false);
            (vertices.len() - 1) as u32
        });
        remap[i] = id;
        if border_raw[i] {
            border[id as usize] = true;
        }
    }
    let triangles: Vec<[u32; 3]> = triangles
        .into_iter()
        .map(|t| [remap[t[0] as usize], remap[t[1] as usize], remap[t[2] as usize]])
        .filter(|t| t[0] != t[1] && t[1] != t[2] && t[0] != t[2])
        .collect();

    Ok(MeshPart {
        leaf,
        vertices,
        border,
        triangles,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RootFrame;
    use crate::mesh::dual::leaf_dual_cells;
    use crate::octree::build_treetop;
    use crate::record::{CubeRecord, OctreeFile, RecordWriter};
    use nalgebra::Point3;
    use std::path::Path;

    fn write_uniform_with_u(
        path: &Path,
        depth: u8,
        u_of: impl Fn(&Point3<f64>) -> f64,
    ) -> RootFrame {
        let frame = RootFrame::new(Point3::origin(), 1.0).unwrap();
        let m = 1u32 << depth;
        let mut codes = Vec::new();
        for x in 0..m {
            for y in 0..m {
                for z in 0..m {
                    codes.push(MortonCode::encode(depth, x, y, z));
                }
            }
        }
        codes.sort();
        let mut w = RecordWriter::create(path, frame).unwrap();
        for c in &codes {
            let (x, y, z) = c.decode();
            let center = frame.cell_center(depth, [x, y, z]);
            let mut rec = CubeRecord::filler(*c);
            rec.u = u_of(&center) as f32;
            w.push(&rec).unwrap();
        }
        w.finish().unwrap();
        frame
    }

    fn extract_whole(path: &Path, depth: u8) -> MeshPart {
        let top = build_treetop(path, 1 << 24).unwrap();
        let mut file = OctreeFile::open(path).unwrap();
        let n = file.len();
        let mut view = MeshView::build(&mut file, 0, n, depth).unwrap();
        let cells = leaf_dual_cells(&mut view, &top, 0).unwrap();
        extract_part(&view, &cells, MortonCode::ROOT).unwrap()
    }

    #[test]
    fn all_positive_field_is_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        write_uniform_with_u(&path, 3, |_| 1.0);
        let part = extract_whole(&path, 3);
        assert!(part.triangles.is_empty());
        assert!(part.vertices.is_empty());
    }

    #[test]
    fn single_negative_corner_cuts_one_triangle() {
        // u = -1 at exactly one cell center, +1 elsewhere: within the dual
        // cell the crossing sits at the parametric midpoint of the three
        // incident dual edges.
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let frame = write_uniform_with_u(&path, 2, |c| {
            if c.x < -0.7 && c.y < -0.7 && c.z < -0.7 {
                -1.0
            } else {
                1.0
            }
        });
        let part = extract_whole(&path, 2);
        assert_eq!(part.triangles.len(), 1);
        assert_eq!(part.vertices.len(), 3);
        // Midpoints: the negative cell center is at (-0.875)^3 with edge 0.5.
        let neg = frame.cell_center(2, [0, 0, 0]);
        for v in &part.vertices {
            let d = ((v[0] - neg.x).powi(2) + (v[1] - neg.y).powi(2) + (v[2] - neg.z).powi(2))
                .sqrt();
            // t = 0.5 along an axis-aligned dual edge of length 0.5.
            assert!((d - 0.25).abs() < 1e-12, "vertex {v:?}");
        }
    }

    #[test]
    fn sphere_field_extracts_closed_surface() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let r = 0.6;
        write_uniform_with_u(&path, 4, |c| {
            (c.coords.norm() - r).clamp(-1.0, 1.0)
        });
        let part = extract_whole(&path, 4);
        assert!(!part.triangles.is_empty());
        let mesh = crate::mesh::TriangleMesh {
            vertices: part.vertices.clone(),
            triangles: part.triangles.clone(),
        };
        assert_eq!(mesh.boundary_edge_count(), 0, "closed 2-manifold");
        assert_eq!(mesh.euler_characteristic(), 2);
        assert_eq!(mesh.connected_component_count(), 1);
        // Interpolated vertices sit near the sphere.
        for v in &part.vertices {
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((d - r).abs() < 0.1);
        }
        // A single-leaf extraction has no borders.
        assert_eq!(part.border_vertex_count(), 0);
    }
}
