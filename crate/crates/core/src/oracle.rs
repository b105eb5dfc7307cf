//! Slow, independent reference implementations and predicate checkers.
//!
//! Everything here is written from the definitions, deliberately sharing no
//! code with the production paths it is used to check. Tests and the
//! acceptance suite compare against these; nothing in the pipeline calls
//! them.

use std::collections::{BTreeSet, HashSet};

use crate::morton::{MortonCode, FACES, MAX_DEPTH};

/// Keep-finest antichain: drop every code that has a descendant in the set.
pub fn keep_finest(codes: &[MortonCode]) -> Vec<MortonCode> {
    let mut sorted = codes.to_vec();
    sorted.sort();
    sorted.dedup();
    let mut out: Vec<MortonCode> = Vec::new();
    for c in sorted {
        while let Some(last) = out.last() {
            if last.is_ancestor_of(&c) {
                out.pop();
            } else {
                break;
            }
        }
        out.push(c);
    }
    out
}

/// Minimal complete tiling containing every seed of an antichain.
pub fn minimal_completion(antichain: &[MortonCode]) -> Vec<MortonCode> {
    fn rec(cell: MortonCode, seeds: &[MortonCode], out: &mut Vec<MortonCode>) {
        if seeds.is_empty() {
            out.push(cell);
            return;
        }
        if seeds.len() == 1 && seeds[0] == cell {
            out.push(cell);
            return;
        }
        debug_assert!(
            seeds.iter().all(|s| cell.is_ancestor_of(s)),
            "seeds must be strictly inside the split cell"
        );
        for oct in 0..8 {
            let child = cell.child(oct);
            let lo = seeds.partition_point(|s| s.path_bits() < child.path_bits());
            let hi = match child.subtree_end() {
                None => seeds.len(),
                Some(end) => seeds.partition_point(|s| s.path_bits() < end),
            };
            rec(child, &seeds[lo..hi], out);
        }
    }
    let mut out = Vec::new();
    rec(MortonCode::ROOT, antichain, &mut out);
    out
}

/// Reference 2:1 balancing: complete, then repeatedly split any leaf that is
/// more than one level coarser than a face-adjacent leaf, until stable.
pub fn balanced_completion(codes: &[MortonCode]) -> Vec<MortonCode> {
    let antichain = keep_finest(codes);
    let mut leaves: BTreeSet<MortonCode> = minimal_completion(&antichain).into_iter().collect();
    loop {
        let set: HashSet<MortonCode> = leaves.iter().copied().collect();
        let mut to_split: BTreeSet<MortonCode> = BTreeSet::new();
        for leaf in &leaves {
            let d = leaf.depth();
            if d < 2 {
                continue;
            }
            for face in FACES {
                let Some(m) = leaf.face_neighbor(face) else {
                    continue;
                };
                // The region behind this face must not be covered by a leaf
                // more than one level coarser.
                for k in 0..=(d - 2) {
                    let anc = m.ancestor_at(k);
                    if set.contains(&anc) {
                        to_split.insert(anc);
                    }
                }
            }
        }
        if to_split.is_empty() {
            break;
        }
        for s in to_split {
            leaves.remove(&s);
            for oct in 0..8 {
                leaves.insert(s.child(oct));
            }
        }
    }
    leaves.into_iter().collect()
}

/// Exact-arithmetic completeness: the leaves tile the root cube exactly.
pub fn check_complete(leaves: &[MortonCode]) -> bool {
    let mut sorted = leaves.to_vec();
    sorted.sort();
    if sorted.windows(2).any(|w| w[0].contains(&w[1])) {
        return false; // overlap
    }
    let total: u128 = sorted
        .iter()
        .map(|c| 1u128 << (3 * (MAX_DEPTH - c.depth()) as u32))
        .sum();
    total == 1u128 << (3 * MAX_DEPTH as u32)
}

pub fn assert_complete(leaves: &[MortonCode]) {
    assert!(check_complete(leaves), "leaves do not tile the root cube");
}

/// Face 2:1 predicate via exhaustive face-pair scan: no leaf may be
/// face-adjacent to a leaf more than one level coarser.
pub fn check_two_to_one(leaves: &[MortonCode]) -> bool {
    let set: HashSet<MortonCode> = leaves.iter().copied().collect();
    for leaf in leaves {
        let d = leaf.depth();
        if d < 2 {
            continue;
        }
        for face in FACES {
            let Some(m) = leaf.face_neighbor(face) else {
                continue;
            };
            for k in 0..=(d - 2) {
                if set.contains(&m.ancestor_at(k)) {
                    return false;
                }
            }
        }
    }
    true
}

pub fn assert_two_to_one(leaves: &[MortonCode]) {
    assert!(check_two_to_one(leaves), "2:1 face balance violated");
}

/// Line-by-line transliteration of the histogram voting rule, kept as the
/// conformance oracle for the production implementation.
///
/// Inputs are the raw quantities after projection: stored depth (`None` when
/// the field has no ray there), distance from the sensor in the matching
/// convention, the voxel density radius, and the per-image vote weight.
pub fn histogram_vote_reference(
    depth: Option<f64>,
    distance: f64,
    r_c: f64,
    vote_weight: u32,
    delta_mult: f64,
    eta_mult: f64,
) -> Option<(usize, u32)> {
    let depth = depth?;
    let r_x = r_c;
    let delta_x = delta_mult * r_x;
    let eta_x = eta_mult * r_x;
    let a = depth - distance;
    if a < -eta_x {
        return None;
    }
    let depthmap_vote = vote_weight;
    let a = (a / delta_x).clamp(-1.0, 1.0);
    let bin = (((a + 1.0) / 2.0) * 8.0).floor() as i64;
    let bin = bin.min(7).max(0) as usize;
    Some((bin, depthmap_vote))
}

/// Dense grid search for the data proximal map: minimizes
/// `(u - u_tilde)^2 / 2 + tau_lambda * sum_b hist[b] * |u - c_b|`
/// over `u in [-1, 1]` with the given step.
pub fn prox_grid_search(u_tilde: f64, tau_lambda: f64, hist: &[u32; 8], step: f64) -> f64 {
    let centers: Vec<f64> = (0..8).map(|b| -1.0 + 0.25 * b as f64 + 0.125).collect();
    let objective = |u: f64| -> f64 {
        let mut f = 0.5 * (u - u_tilde) * (u - u_tilde);
        for (b, &w) in hist.iter().enumerate() {
            f += tau_lambda * w as f64 * (u - centers[b]).abs();
        }
        f
    };
    let n = (2.0 / step).round() as usize;
    let mut best_u = -1.0;
    let mut best_f = objective(-1.0);
    for i in 1..=n {
        let u = -1.0 + i as f64 * step;
        let f = objective(u.min(1.0));
        if f < best_f {
            best_f = f;
            best_u = u.min(1.0);
        }
    }
    best_u
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn keep_finest_drops_refined_ancestors() {
        let a = MortonCode::encode(1, 0, 0, 0);
        let b = a.child(3);
        let c = MortonCode::encode(1, 1, 1, 1);
        let out = keep_finest(&[a, b, c]);
        assert_eq!(out, vec![b, c]);
    }

    #[test]
    fn minimal_completion_of_root_is_root() {
        assert_eq!(
            minimal_completion(&[MortonCode::ROOT]),
            vec![MortonCode::ROOT]
        );
        assert_eq!(minimal_completion(&[]), vec![MortonCode::ROOT]);
    }

    #[test]
    fn completion_tiles_exactly() {
        let seeds = vec![MortonCode::encode(3, 1, 2, 3), MortonCode::encode(2, 3, 3, 3)];
        let leaves = minimal_completion(&keep_finest(&seeds));
        assert_complete(&leaves);
        for s in &seeds {
            assert!(leaves.contains(s));
        }
    }

    #[test]
    fn balanced_completion_satisfies_predicates() {
        let seeds = vec![
            MortonCode::encode(5, 0, 0, 0),
            MortonCode::encode(2, 3, 2, 1),
        ];
        let leaves = balanced_completion(&seeds);
        assert_complete(&leaves);
        assert_two_to_one(&leaves);
    }
}
