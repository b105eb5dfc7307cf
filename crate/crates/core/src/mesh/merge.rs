//! Concatenate per-leaf mesh parts into one indexed mesh, deduplicating
//! vertices by exact bit equality and checking that every part border edge is
//! matched by exactly one neighboring part.

use std::collections::HashMap;

use crate::error::{Error, Result};

use super::{MeshPart, TriangleMesh};

#[derive(Debug, Default, Clone, serde::Serialize)]
pub struct SeamReport {
    pub parts: usize,
    pub matched_border_edges: usize,
    pub unmatched_border_edges: usize,
    pub shared_vertices: usize,
}

/// Merge parts extracted from the same solved field. Fails when a border
/// edge has no bit-identical counterpart in exactly one neighboring part.
pub fn merge_parts(parts: &[MeshPart]) -> Result<(TriangleMesh, SeamReport)> {
    let mut mesh = TriangleMesh::default();
    let mut weld: HashMap<[u64; 3], u32> = HashMap::new();
    let mut vertex_parts: Vec<u32> = Vec::new(); // parts referencing each vertex
    let mut report = SeamReport {
        parts: parts.len(),
        ..Default::default()
    };

    // (global edge) -> number of parts having it as a border edge.
    let mut border_edge_parts: HashMap<(u32, u32), u32> = HashMap::new();

    for part in parts {
        let mut remap = vec![0u32; part.vertices.len()];
        for (i, p) in part.vertices.iter().enumerate() {
            let key = [p[0].to_bits(), p[1].to_bits(), p[2].to_bits()];
            let id = *weld.entry(key).or_insert_with(|| {
                mesh.vertices.push(*p);
                vertex_parts.push(0);
                (mesh.vertices.len() - 1) as u32
            });
            remap[i] = id;
        }
        let mut seen = std::collections::HashSet::new();
        for id in &remap {
            if seen.insert(*id) {
                vertex_parts[*id as usize] += 1;
            }
        }
        for t in &part.triangles {
            mesh.triangles.push([
                remap[t[0] as usize],
                remap[t[1] as usize],
                remap[t[2] as usize],
            ]);
        }
        for (a, b) in part.boundary_edges() {
            let (ga, gb) = (remap[a as usize], remap[b as usize]);
            let key = (ga.min(gb), ga.max(gb));
            *border_edge_parts.entry(key).or_insert(0) += 1;
        }
    }

    report.shared_vertices = vertex_parts.iter().filter(|&&c| c > 1).count();

    for (&(a, b), &count) in &border_edge_parts {
        if count == 2 {
            report.matched_border_edges += 1;
        } else {
            report.unmatched_border_edges += 1;
            if parts.len() > 1 {
                let pa = mesh.vertices[a as usize];
                let pb = mesh.vertices[b as usize];
                return Err(Error::Consistency(format!(
                    "border edge ({:.6}, {:.6}, {:.6}) -- ({:.6}, {:.6}, {:.6}) matched by {} parts instead of 2 \
                     (either a seam bug or the surface leaves the reconstruction cube; \
                     the latter happens when inputs barely cover the scene bounds)",
                    pa[0], pa[1], pa[2], pb[0], pb[1], pb[2], count
                )));
            }
        }
    }
    if parts.len() == 1 && report.unmatched_border_edges > 0 {
        return Err(Error::Consistency(format!(
            "single part has {} open border edges",
            report.unmatched_border_edges
        )));
    }
    Ok((mesh, report))
}
