//! Isosurface extraction per treetop leaf, border-locked decimation, and
//! seam-exact concatenation of the parts.

pub mod decimate;
pub mod dual;
pub mod extract;
pub mod io;
pub mod merge;
pub mod tables;
pub mod triangulate;

use std::collections::HashMap;

use crate::morton::MortonCode;

pub use decimate::decimate;
pub use dual::{DualCell, MeshView};
pub use extract::extract_part;
pub use merge::{merge_parts, SeamReport};
pub use triangulate::dp_triangulate;

/// Per-leaf triangle soup with border-locked vertices.
#[derive(Debug, Clone)]
pub struct MeshPart {
    pub leaf: MortonCode,
    pub vertices: Vec<[f64; 3]>,
    pub border: Vec<bool>,
    pub triangles: Vec<[u32; 3]>,
}

impl MeshPart {
    pub fn border_vertex_count(&self) -> usize {
        self.border.iter().filter(|b| **b).count()
    }

    /// Undirected edges incident to exactly one triangle of this part.
    pub fn boundary_edges(&self) -> Vec<(u32, u32)> {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        let mut out: Vec<(u32, u32)> = counts
            .into_iter()
            .filter_map(|(e, c)| (c == 1).then_some(e))
            .collect();
        out.sort_unstable();
        out
    }
}

/// Indexed triangle mesh with exact-bit vertex identity.
#[derive(Debug, Clone, Default)]
pub struct TriangleMesh {
    pub vertices: Vec<[f64; 3]>,
    pub triangles: Vec<[u32; 3]>,
}

impl TriangleMesh {
    fn edge_counts(&self) -> HashMap<(u32, u32), u32> {
        let mut counts: HashMap<(u32, u32), u32> = HashMap::new();
        for t in &self.triangles {
            for (a, b) in [(t[0], t[1]), (t[1], t[2]), (t[2], t[0])] {
                let key = (a.min(b), a.max(b));
                *counts.entry(key).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn boundary_edge_count(&self) -> usize {
        self.edge_counts().values().filter(|&&c| c == 1).count()
    }

    pub fn edge_count(&self) -> usize {
        self.edge_counts().len()
    }

    /// Vertices referenced by at least one triangle.
    pub fn used_vertex_count(&self) -> usize {
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        used.iter().filter(|u| **u).count()
    }

    pub fn euler_characteristic(&self) -> i64 {
        self.used_vertex_count() as i64 - self.edge_count() as i64 + self.triangles.len() as i64
    }

    pub fn connected_component_count(&self) -> usize {
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0]);
            let b = find(&mut parent, t[1]);
            let c = find(&mut parent, t[2]);
            parent[b as usize] = a;
            parent[c as usize] = a;
        }
        let mut roots = std::collections::HashSet::new();
        let mut used = vec![false; self.vertices.len()];
        for t in &self.triangles {
            for &i in t {
                used[i as usize] = true;
            }
        }
        for (i, u) in used.iter().enumerate() {
            if *u {
                roots.insert(find(&mut parent, i as u32));
            }
        }
        roots.len()
    }

    /// Keep only the component with the most triangles, reindexed.
    pub fn largest_component(&self) -> TriangleMesh {
        if self.triangles.is_empty() {
            return TriangleMesh::default();
        }
        let mut parent: Vec<u32> = (0..self.vertices.len() as u32).collect();
        fn find(parent: &mut [u32], mut x: u32) -> u32 {
            while parent[x as usize] != x {
                parent[x as usize] = parent[parent[x as usize] as usize];
                x = parent[x as usize];
            }
            x
        }
        for t in &self.triangles {
            let a = find(&mut parent, t[0]);
            let b = find(&mut parent, t[1]);
            let c = find(&mut parent, t[2]);
            parent[b as usize] = a;
            parent[c as usize] = a;
        }
        let mut per_root: HashMap<u32, usize> = HashMap::new();
        for t in &self.triangles {
            *per_root.entry(find(&mut parent, t[0])).or_insert(0) += 1;
        }
        let best = per_root
            .iter()
            .max_by_key(|(root, count)| (**count, std::cmp::Reverse(**root)))
            .map(|(r, _)| *r)
            .unwrap();
        let mut remap: HashMap<u32, u32> = HashMap::new();
        let mut out = TriangleMesh::default();
        for t in &self.triangles {
            if find(&mut parent, t[0]) != best {
                continue;
            }
            let mut tri = [0u32; 3];
            for (k, &v) in t.iter().enumerate() {
                let next = remap.len() as u32;
                let idx = *remap.entry(v).or_insert_with(|| {
                    out.vertices.push(self.vertices[v as usize]);
                    next
                });
                tri[k] = idx;
            }
            out.triangles.push(tri);
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tetrahedron() -> TriangleMesh {
        TriangleMesh {
            vertices: vec![
                [0.0, 0.0, 0.0],
                [1.0, 0.0, 0.0],
                [0.0, 1.0, 0.0],
                [0.0, 0.0, 1.0],
            ],
            triangles: vec![[0, 2, 1], [0, 1, 3], [1, 2, 3], [0, 3, 2]],
        }
    }

    #[test]
    fn tetrahedron_topology() {
        let m = tetrahedron();
        assert_eq!(m.boundary_edge_count(), 0);
        assert_eq!(m.euler_characteristic(), 2);
        assert_eq!(m.connected_component_count(), 1);
    }

    #[test]
    fn largest_component_filters_loose_triangle() {
        let mut m = tetrahedron();
        let base = m.vertices.len() as u32;
        m.vertices.extend([
            [10.0, 0.0, 0.0],
            [11.0, 0.0, 0.0],
            [10.0, 1.0, 0.0],
        ]);
        m.triangles.push([base, base + 1, base + 2]);
        assert_eq!(m.connected_component_count(), 2);
        let filtered = m.largest_component();
        assert_eq!(filtered.triangles.len(), 4);
        assert_eq!(filtered.euler_characteristic(), 2);
    }
}
