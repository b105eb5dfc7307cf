//! Quadric edge-collapse decimation with hard border locks: an edge is
//! illegal if either endpoint is border-flagged or the collapse would flip
//! an incident triangle normal by more than 90 degrees.

use std::cmp::Ordering;
use std::collections::{BinaryHeap, HashSet};

use super::MeshPart;

/// Plane-distance quadric, 10 unique coefficients of the symmetric 4x4 form.
#[derive(Debug, Clone, Copy, Default)]
struct Quadric {
    m: [f64; 10], // [a2, ab, ac, ad, b2, bc, bd, c2, cd, d2]
}

impl Quadric {
    fn from_plane(a: f64, b: f64, c: f64, d: f64) -> Quadric {
        Quadric {
            m: [
                a * a,
                a * b,
                a * c,
                a * d,
                b * b,
                b * c,
                b * d,
                c * c,
                c * d,
                d * d,
            ],
        }
    }

    fn add(&mut self, o: &Quadric) {
        for (x, y) in self.m.iter_mut().zip(o.m.iter()) {
            *x += *y;
        }
    }

    fn error(&self, p: &[f64; 3]) -> f64 {
        let (x, y, z) = (p[0], p[1], p[2]);
        let m = &self.m;
        m[0] * x * x
            + 2.0 * m[1] * x * y
            + 2.0 * m[2] * x * z
            + 2.0 * m[3] * x
            + m[4] * y * y
            + 2.0 * m[5] * y * z
            + 2.0 * m[6] * y
            + m[7] * z * z
            + 2.0 * m[8] * z
            + m[9]
    }
}

fn tri_normal(v: &[[f64; 3]], t: &[u32; 3]) -> [f64; 3] {
    let a = v[t[0] as usize];
    let b = v[t[1] as usize];
    let c = v[t[2] as usize];
    let ab = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
    let ac = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
    [
        ab[1] * ac[2] - ab[2] * ac[1],
        ab[2] * ac[0] - ab[0] * ac[2],
        ab[0] * ac[1] - ab[1] * ac[0],
    ]
}

fn dot3(a: &[f64; 3], b: &[f64; 3]) -> [f64; 1] {
    [a[0] * b[0] + a[1] * b[1] + a[2] * b[2]]
}

struct HeapEntry {
    cost: f64,
    a: u32,
    b: u32,
    stamp: u64,
}

impl PartialEq for HeapEntry {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for HeapEntry {}
impl PartialOrd for HeapEntry {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for HeapEntry {
    fn cmp(&self, other: &Self) -> Ordering {
        // Min-heap on (cost, a, b) via reversed ordering.
        other
            .cost
            .total_cmp(&self.cost)
            .then_with(|| other.a.cmp(&self.a))
            .then_with(|| other.b.cmp(&self.b))
    }
}

/// Collapse interior edges in quadric-error order until `target_faces` is
/// reached or no legal collapse remains. Border vertices never move and
/// border edges are never collapsed, so part borders are bit-identical
/// before and after.
pub fn decimate(part: &MeshPart, target_faces: usize) -> MeshPart {
    if part.triangles.len() <= target_faces {
        return part.clone();
    }
    let mut verts = part.vertices.clone();
    let border = part.border.clone();
    let mut tris: Vec<[u32; 3]> = part.triangles.clone();
    let mut tri_alive = vec![true; tris.len()];
    let mut vert_tris: Vec<Vec<u32>> = vec![Vec::new(); verts.len()];
    for (ti, t) in tris.iter().enumerate() {
        for &v in t {
            vert_tris[v as usize].push(ti as u32);
        }
    }

    // Vertex quadrics from incident triangle planes.
    let mut quadrics: Vec<Quadric> = vec![Quadric::default(); verts.len()];
    for t in &tris {
        let n = tri_normal(&verts, t);
        let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
        if len < 1e-30 {
            continue;
        }
        let a = n[0] / len;
        let b = n[1] / len;
        let c = n[2] / len;
        let p = verts[t[0] as usize];
        let d = -(a * p[0] + b * p[1] + c * p[2]);
        let q = Quadric::from_plane(a, b, c, d);
        for &v in t {
            quadrics[v as usize].add(&q);
        }
    }

    let mut stamp = vec![0u64; verts.len()];
    let mut heap: BinaryHeap<HeapEntry> = BinaryHeap::new();

    // Subset placement: collapse onto the cheaper endpoint. Vertices never
    // leave the original surface, which also keeps the flip check stable.
    let collapse_target = |qa: &Quadric, qb: &Quadric, pa: &[f64; 3], pb: &[f64; 3]| {
        let mut q = *qa;
        q.add(qb);
        let ea = q.error(pa);
        let eb = q.error(pb);
        if eb < ea {
            (*pb, eb)
        } else {
            (*pa, ea)
        }
    };

    let push_edge = |heap: &mut BinaryHeap<HeapEntry>,
                         a: u32,
                         b: u32,
                         quadrics: &[Quadric],
                         verts: &[[f64; 3]],
                         stamp: &[u64]| {
        let (a, b) = (a.min(b), a.max(b));
        if border[a as usize] || border[b as usize] {
            return;
        }
        let (_, cost) = collapse_target(
            &quadrics[a as usize],
            &quadrics[b as usize],
            &verts[a as usize],
            &verts[b as usize],
        );
        heap.push(HeapEntry {
            cost,
            a,
            b,
            stamp: stamp[a as usize] + stamp[b as usize],
        });
    };

    let mut edges: HashSet<(u32, u32)> = HashSet::new();
    for t in &tris {
        for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
            edges.insert((a.min(b), a.max(b)));
        }
    }
    {
        let mut sorted: Vec<(u32, u32)> = edges.iter().copied().collect();
        sorted.sort_unstable();
        for (a, b) in sorted {
            push_edge(&mut heap, a, b, &quadrics, &verts, &stamp);
        }
    }

    let mut faces = tris.len();
    while faces > target_faces {
        let Some(entry) = heap.pop() else { break };
        let (a, b) = (entry.a, entry.b);
        if entry.stamp != stamp[a as usize] + stamp[b as usize] {
            // Stale: costs changed since it was pushed; refresh if the edge
            // still exists.
            let still_edge = vert_tris[a as usize].iter().any(|&ti| {
                tri_alive[ti as usize] && tris[ti as usize].contains(&b)
            });
            if still_edge {
                push_edge(&mut heap, a, b, &quadrics, &verts, &stamp);
            }
            continue;
        }
        // The edge may have disappeared through neighboring collapses.
        let still_edge = vert_tris[a as usize]
            .iter()
            .any(|&ti| tri_alive[ti as usize] && tris[ti as usize].contains(&b));
        if !still_edge {
            continue;
        }

        let (target, _) = collapse_target(
            &quadrics[a as usize],
            &quadrics[b as usize],
            &verts[a as usize],
            &verts[b as usize],
        );

        // Normal-flip rejection: any surviving triangle of a or b whose
        // normal turns by more than 90 degrees vetoes the collapse.
        let corner_after = |v: u32, target: &[f64; 3]| -> [f64; 3] {
            if v == a || v == b {
                *target
            } else {
                verts[v as usize]
            }
        };
        let mut flips = false;
        'check: for &v in &[a, b] {
            for &ti in &vert_tris[v as usize] {
                let ti = ti as usize;
                if !tri_alive[ti] {
                    continue;
                }
                let t = tris[ti];
                if t.contains(&a) && t.contains(&b) {
                    continue; // dies with the collapse
                }
                let before = tri_normal(&verts, &t);
                let pa = corner_after(t[0], &target);
                let pb = corner_after(t[1], &target);
                let pc = corner_after(t[2], &target);
                let ab = [pb[0] - pa[0], pb[1] - pa[1], pb[2] - pa[2]];
                let ac = [pc[0] - pa[0], pc[1] - pa[1], pc[2] - pa[2]];
                let after = [
                    ab[1] * ac[2] - ab[2] * ac[1],
                    ab[2] * ac[0] - ab[0] * ac[2],
                    ab[0] * ac[1] - ab[1] * ac[0],
                ];
                if dot3(&before, &after)[0] < 0.0 {
                    flips = true;
                    break 'check;
                }
            }
        }
        if flips {
            continue;
        }

        // Commit: b merges into a at the target position.
        verts[a as usize] = target;
        let qb = quadrics[b as usize];
        quadrics[a as usize].add(&qb);
        stamp[a as usize] += 1;
        stamp[b as usize] += 1;

        let b_tris = std::mem::take(&mut vert_tris[b as usize]);
        for &ti in &b_tris {
            let ti_us = ti as usize;
            if !tri_alive[ti_us] {
                continue;
            }
            if tris[ti_us].contains(&a) {
                tri_alive[ti_us] = false;
                faces -= 1;
                continue;
            }
            for x in tris[ti_us].iter_mut() {
                if *x == b {
                    *x = a;
                }
            }
            vert_tris[a as usize].push(ti);
        }

        // Refresh costs of edges around a.
        let mut nbrs: Vec<u32> = Vec::new();
        for &ti in &vert_tris[a as usize] {
            if tri_alive[ti as usize] {
                for &v in &tris[ti as usize] {
                    if v != a {
                        nbrs.push(v);
                    }
                }
            }
        }
        nbrs.sort_unstable();
        nbrs.dedup();
        for v in nbrs {
            push_edge(&mut heap, a, v, &quadrics, &verts, &stamp);
        }
    }

    // Compact the result.
    let mut remap = vec![u32::MAX; verts.len()];
    let mut out = MeshPart {
        leaf: part.leaf,
        vertices: Vec::new(),
        border: Vec::new(),
        triangles: Vec::new(),
    };
    for (ti, t) in tris.iter().enumerate() {
        if !tri_alive[ti] {
            continue;
        }
        let mut tri = [0u32; 3];
        for (k, &v) in t.iter().enumerate() {
            if remap[v as usize] == u32::MAX {
                remap[v as usize] = out.vertices.len() as u32;
                out.vertices.push(verts[v as usize]);
                out.border.push(border[v as usize]);
            }
            tri[k] = remap[v as usize];
        }
        out.triangles.push(tri);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::morton::MortonCode;

    /// Icosphere by subdividing an icosahedron onto the unit sphere.
    fn icosphere(subdivisions: usize) -> MeshPart {
        let phi = (1.0 + 5f64.sqrt()) / 2.0;
        let mut verts: Vec<[f64; 3]> = vec![
            [-1.0, phi, 0.0],
            [1.0, phi, 0.0],
            [-1.0, -phi, 0.0],
            [1.0, -phi, 0.0],
            [0.0, -1.0, phi],
            [0.0, 1.0, phi],
            [0.0, -1.0, -phi],
            [0.0, 1.0, -phi],
            [phi, 0.0, -1.0],
            [phi, 0.0, 1.0],
            [-phi, 0.0, -1.0],
            [-phi, 0.0, 1.0],
        ];
        for v in verts.iter_mut() {
            let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            *v = [v[0] / n, v[1] / n, v[2] / n];
        }
        let mut tris: Vec<[u32; 3]> = vec![
            [0, 11, 5],
            [0, 5, 1],
            [0, 1, 7],
            [0, 7, 10],
            [0, 10, 11],
            [1, 5, 9],
            [5, 11, 4],
            [11, 10, 2],
            [10, 7, 6],
            [7, 1, 8],
            [3, 9, 4],
            [3, 4, 2],
            [3, 2, 6],
            [3, 6, 8],
            [3, 8, 9],
            [4, 9, 5],
            [2, 4, 11],
            [6, 2, 10],
            [8, 6, 7],
            [9, 8, 1],
        ];
        for _ in 0..subdivisions {
            let mut next = Vec::new();
            let mut midpoint: std::collections::HashMap<(u32, u32), u32> =
                std::collections::HashMap::new();
            let mut mid = |a: u32, b: u32, verts: &mut Vec<[f64; 3]>| -> u32 {
                let key = (a.min(b), a.max(b));
                *midpoint.entry(key).or_insert_with(|| {
                    let pa = verts[a as usize];
                    let pb = verts[b as usize];
                    let mut m = [
                        0.5 * (pa[0] + pb[0]),
                        0.5 * (pa[1] + pb[1]),
                        0.5 * (pa[2] + pb[2]),
                    ];
                    let n = (m[0] * m[0] + m[1] * m[1] + m[2] * m[2]).sqrt();
                    m = [m[0] / n, m[1] / n, m[2] / n];
                    verts.push(m);
                    (verts.len() - 1) as u32
                })
            };
            for t in &tris {
                let ab = mid(t[0], t[1], &mut verts);
                let bc = mid(t[1], t[2], &mut verts);
                let ca = mid(t[2], t[0], &mut verts);
                next.push([t[0], ab, ca]);
                next.push([t[1], bc, ab]);
                next.push([t[2], ca, bc]);
                next.push([ab, bc, ca]);
            }
            tris = next;
        }
        MeshPart {
            leaf: MortonCode::ROOT,
            border: vec![false; verts.len()],
            vertices: verts,
            triangles: tris,
        }
    }

    #[test]
    fn target_above_current_is_identity() {
        let part = icosphere(1);
        let out = decimate(&part, 10_000);
        assert_eq!(out.triangles.len(), part.triangles.len());
        assert_eq!(out.vertices.len(), part.vertices.len());
    }

    #[test]
    fn closed_icosphere_decimates_to_target_near_surface() {
        let part = icosphere(2); // 320 faces
        assert_eq!(part.triangles.len(), 320);
        let out = decimate(&part, 20);
        assert_eq!(out.triangles.len(), 20);
        // Every remaining vertex stays within 5% of the unit sphere.
        for v in &out.vertices {
            let d = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
            assert!((d - 1.0).abs() <= 0.05, "vertex drifted to radius {d}");
        }
        let mesh = crate::mesh::TriangleMesh {
            vertices: out.vertices.clone(),
            triangles: out.triangles.clone(),
        };
        assert_eq!(mesh.boundary_edge_count(), 0, "stays closed");
    }

    #[test]
    fn fully_bordered_part_never_changes() {
        let mut part = icosphere(1);
        part.border = vec![true; part.vertices.len()];
        let out = decimate(&part, 4);
        assert_eq!(out.triangles.len(), part.triangles.len());
    }

    #[test]
    fn border_vertices_are_bit_identical_after_decimation() {
        // Mark a band of vertices as border; their positions and count must
        // survive exactly.
        let mut part = icosphere(2);
        for (i, v) in part.vertices.iter().enumerate() {
            if v[2].abs() < 0.2 {
                part.border[i] = true;
            }
        }
        let before: std::collections::BTreeSet<[u64; 3]> = part
            .vertices
            .iter()
            .zip(part.border.iter())
            .filter(|(_, b)| **b)
            .map(|(v, _)| [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()])
            .collect();
        let out = decimate(&part, 60);
        let after: std::collections::BTreeSet<[u64; 3]> = out
            .vertices
            .iter()
            .zip(out.border.iter())
            .filter(|(_, b)| **b)
            .map(|(v, _)| [v[0].to_bits(), v[1].to_bits(), v[2].to_bits()])
            .collect();
        assert_eq!(before, after);
        assert!(out.triangles.len() < part.triangles.len());
    }
}
