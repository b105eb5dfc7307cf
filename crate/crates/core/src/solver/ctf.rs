//! Coarse-to-fine driver: group treetop leaves per level, solve each group
//! with frozen borders, and write results back level by level. Groups at one
//! level read the previous level's state everywhere (results are committed
//! only after all groups of the level have been solved), so halo values are
//! always the parents' values regardless of group order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::morton::{MortonCode, MAX_DEPTH};
use crate::octree::treetop::Treetop;
use crate::record::{CubeRecord, OctreeFile, RecordReader, HISTOGRAM_BINS};
use crate::voting::bin_center;

use super::ops::assemble_operators;
use super::pd::{primal_dual_iterate, PdParams, PdState};
use super::view::build_level_view;

#[derive(Debug, Clone)]
pub struct SolveParams {
    pub pd: PdParams,
    pub iters: usize,
    /// Cell budget per leaf group (the treetop leaf limit).
    pub group_cell_limit: u64,
    /// Coarsest solve level = shallowest level with at least this many cells.
    pub coarsest_min_cells: u64,
    pub power_iters: usize,
    pub trace_every: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            pd: PdParams::default(),
            iters: 200,
            group_cell_limit: 1 << 24,
            coarsest_min_cells: 64,
            power_iters: 50,
            trace_every: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct EnergyRow {
    pub level: u8,
    pub iteration: usize,
    pub energy: f64,
}

#[derive(Debug, Default)]
pub struct SolveStats {
    pub levels: Vec<u8>,
    pub groups_solved: u64,
    pub trace: Vec<EnergyRow>,
}

/// Per-leaf, per-level restriction statistics gathered in one streaming pass.
struct LeafLevelInfo {
    counts: [u64; 31],
    first_cell: [MortonCode; 31],
    last_cell: [MortonCode; 31],
}

fn leaf_level_stats(path: &Path, treetop: &Treetop) -> Result<(Vec<LeafLevelInfo>, u8)> {
    let leaves = treetop.leaves();
    let mut out: Vec<LeafLevelInfo> = Vec::with_capacity(leaves.len());
    let mut reader = RecordReader::open(path)?;
    let mut max_depth = 0u8;
    let mut index = 0u64;
    for leaf in &leaves {
        let mut info = LeafLevelInfo {
            counts: [0; 31],
            first_cell: [MortonCode::ROOT; 31],
            last_cell: [MortonCode::ROOT; 31],
        };
        debug_assert_eq!(index, leaf.first);
        let mut first_in_leaf = true;
        while index < leaf.last {
            let rec = reader
                .next()?
                .ok_or_else(|| Error::Consistency("octree shorter than treetop".into()))?;
            max_depth = max_depth.max(rec.code.depth());
            for level in 0..=MAX_DEPTH {
                let cell = rec.code.ancestor_at(level);
                if first_in_leaf || info.last_cell[level as usize] != cell {
                    info.counts[level as usize] += 1;
                    if first_in_leaf {
                        info.first_cell[level as usize] = cell;
                    }
                }
                info.last_cell[level as usize] = cell;
            }
            first_in_leaf = false;
            index += 1;
        }
        out.push(info);
    }
    Ok((out, max_depth))
}

/// Consecutive leaf runs that must solve together at `level` because they
/// share a restricted cell, greedily packed under the cell budget.
fn level_groups(
    infos: &[LeafLevelInfo],
    treetop: &Treetop,
    level: u8,
    budget: u64,
) -> Vec<(u64, u64)> {
    let leaves = treetop.leaves();
    let l = level as usize;
    // Units: maximal chains of leaves linked by a shared boundary cell.
    let mut units: Vec<(usize, usize, u64)> = Vec::new(); // [leaf_lo, leaf_hi), cells
    let mut i = 0;
    while i < leaves.len() {
        let mut j = i;
        let mut cells = infos[i].counts[l];
        while j + 1 < leaves.len()
            && infos[j].counts[l] > 0
            && infos[j + 1].counts[l] > 0
            && infos[j].last_cell[l] == infos[j + 1].first_cell[l]
        {
            j += 1;
            cells += infos[j].counts[l] - 1; // shared cell counted once
        }
        units.push((i, j + 1, cells));
        i = j + 1;
    }
    // Greedy packing.
    let mut groups = Vec::new();
    let mut k = 0;
    while k < units.len() {
        let (lo, mut hi, mut cells) = units[k];
        let mut next = k + 1;
        while next < units.len() && cells + units[next].2 <= budget {
            cells += units[next].2;
            hi = units[next].1;
            next += 1;
        }
        groups.push((leaves[lo].first, leaves[hi - 1].last));
        k = next;
    }
    groups
}

/// Aggregate depth-`level` histograms in one Z-order streaming pass.
pub fn restrict_histograms(
    path: impl AsRef<Path>,
    level: u8,
) -> Result<Vec<(MortonCode, [u64; HISTOGRAM_BINS])>> {
    let mut reader = RecordReader::open(path.as_ref())?;
    let mut out: Vec<(MortonCode, [u64; HISTOGRAM_BINS])> = Vec::new();
    while let Some(rec) = reader.next()? {
        let cell = rec.code.ancestor_at(level);
        match out.last_mut() {
            Some((c, hist)) if *c == cell => {
                for (b, h) in hist.iter_mut().enumerate() {
                    *h += rec.histogram[b] as u64;
                }
            }
            _ => {
                out.push((cell, std::array::from_fn(|b| rec.histogram[b] as u64)));
            }
        }
    }
    Ok(out)
}

const RESULT_ENTRY_BYTES: usize = 8 + 8 + 4 + 12;

fn write_result_entry(
    w: &mut BufWriter<File>,
    path: &Path,
    first: u64,
    last: u64,
    u: f32,
    v: [f32; 3],
) -> Result<()> {
    let io = |e| Error::io(path, e);
    w.write_u64::<LittleEndian>(first).map_err(io)?;
    w.write_u64::<LittleEndian>(last).map_err(io)?;
    w.write_u32::<LittleEndian>(u.to_bits()).map_err(io)?;
    for c in v {
        w.write_u32::<LittleEndian>(c.to_bits()).map_err(io)?;
    }
    Ok(())
}

/// Copy solved per-cell values down to every covered record (the coarse-to-
/// fine prolongation: children start from their parent cell's values).
fn apply_results(file: &mut OctreeFile, results_path: &Path) -> Result<()> {
    let f = File::open(results_path).map_err(|e| Error::io(results_path, e))?;
    let total = f
        .metadata()
        .map_err(|e| Error::io(results_path, e))?
        .len()
        / RESULT_ENTRY_BYTES as u64;
    let mut r = BufReader::new(f);
    let io = |e| Error::io(results_path, e);
    let mut buf: Vec<CubeRecord> = Vec::new();
    for _ in 0..total {
        let first = r.read_u64::<LittleEndian>().map_err(io)?;
        let last = r.read_u64::<LittleEndian>().map_err(io)?;
        let u = f32::from_bits(r.read_u32::<LittleEndian>().map_err(io)?);
        let mut v = [0f32; 3];
        for c in v.iter_mut() {
            *c = f32::from_bits(r.read_u32::<LittleEndian>().map_err(io)?);
        }
        let mut at = first;
        while at < last {
            let hi = (at + 4096).min(last);
            file.read_range(at, hi, &mut buf)?;
            for rec in buf.iter_mut() {
                rec.u = u;
                rec.v = v;
            }
            file.write_range(at, &buf)?;
            at = hi;
        }
    }
    let mut probe = [0u8; 1];
    if r.read(&mut probe).map_err(io)? != 0 {
        return Err(Error::Consistency("trailing bytes in results file".into()));
    }
    Ok(())
}

/// Expose the prolongation for direct use in tests and tools.
pub fn prolong_cell(file: &mut OctreeFile, first: u64, last: u64, u: f32, v: [f32; 3]) -> Result<()> {
    let mut buf: Vec<CubeRecord> = Vec::new();
    let mut at = first;
    while at < last {
        let hi = (at + 4096).min(last);
        file.read_range(at, hi, &mut buf)?;
        for rec in buf.iter_mut() {
            rec.u = u;
            rec.v = v;
        }
        file.write_range(at, &buf)?;
        at = hi;
    }
    Ok(())
}

fn hist_mean(hist: &[u64; HISTOGRAM_BINS]) -> f64 {
    let total: u64 = hist.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let mut s = 0.0;
    for (b, &w) in hist.iter().enumerate() {
        s += w as f64 * bin_center(b);
    }
    s / total as f64
}

/// Minimize the functional over the whole octree, coarse to fine.
/// `on_level` runs after each level's results are committed.
pub fn solve_coarse_to_fine(
    octree_path: impl AsRef<Path>,
    treetop: &Treetop,
    params: &SolveParams,
    work_dir: impl AsRef<Path>,
    mut on_level: impl FnMut(u8) -> Result<()>,
) -> Result<SolveStats> {
    let octree_path = octree_path.as_ref();
    let work_dir = work_dir.as_ref();
    std::fs::create_dir_all(work_dir).map_err(|e| Error::io(work_dir, e))?;
    let mut stats = SolveStats::default();

    let (infos, max_depth) = leaf_level_stats(octree_path, treetop)?;
    if treetop.total_records == 0 {
        return Ok(stats);
    }
    let global_count = |level: u8| -> u64 {
        let l = level as usize;
        let mut total = 0;
        for (k, info) in infos.iter().enumerate() {
            total += info.counts[l];
            if k > 0
                && infos[k - 1].counts[l] > 0
                && info.counts[l] > 0
                && infos[k - 1].last_cell[l] == info.first_cell[l]
            {
                total -= 1;
            }
        }
        total
    };

    let mut coarsest = max_depth;
    for level in 0..=max_depth {
        if global_count(level) >= params.coarsest_min_cells {
            coarsest = level;
            break;
        }
    }

    let mut prev_count = 0u64;
    for level in coarsest..=max_depth {
        let count = global_count(level);
        if level > coarsest && count == prev_count {
            continue; // restriction identical to the previous level
        }
        prev_count = count;

        let groups = level_groups(&infos, treetop, level, params.group_cell_limit);
        let results_path: PathBuf = work_dir.join(format!("level_{level}.solve"));
        let mut trace_acc: BTreeMap<usize, f64> = BTreeMap::new();
        {
            let out = File::create(&results_path).map_err(|e| Error::io(&results_path, e))?;
            let mut results = BufWriter::new(out);
            let mut file = OctreeFile::open(octree_path)?;
            for &(gfirst, glast) in &groups {
                if gfirst == glast {
                    continue;
                }
                let is_coarsest = level == coarsest;
                let mut view = build_level_view(&mut file, gfirst, glast, level, is_coarsest)?;
                if is_coarsest {
                    for cell in view.cells.iter_mut() {
                        cell.u = hist_mean(&cell.hist);
                        cell.v = [0.0; 3];
                    }
                }
                let ops = assemble_operators(&view, params.power_iters);
                let mut state = PdState::from_view(&view);
                let step = 1.0 / ops.l_norm;
                primal_dual_iterate(
                    &view,
                    &ops,
                    &mut state,
                    &params.pd,
                    step,
                    step,
                    params.iters,
                    params.trace_every,
                    |iter, e| {
                        *trace_acc.entry(iter).or_insert(0.0) += e;
                    },
                )?;
                for (i, cell) in view.cells[..view.n_interior].iter().enumerate() {
                    write_result_entry(
                        &mut results,
                        &results_path,
                        cell.first_record,
                        cell.last_record,
                        state.u[i] as f32,
                        [
                            state.v[i * 3] as f32,
                            state.v[i * 3 + 1] as f32,
                            state.v[i * 3 + 2] as f32,
                        ],
                    )?;
                }
                stats.groups_solved += 1;
            }
            results.flush().map_err(|e| Error::io(&results_path, e))?;
        }

        let mut file = OctreeFile::open_rw(octree_path)?;
        apply_results(&mut file, &results_path)?;
        let _ = std::fs::remove_file(&results_path);

        for (iteration, energy) in trace_acc {
            stats.trace.push(EnergyRow {
                level,
                iteration,
                energy,
            });
        }
        stats.levels.push(level);
        on_level(level)?;
    }
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geom::RootFrame;
    use crate::octree::build_treetop;
    use crate::oracle;
    use crate::record::RecordWriter;
    use nalgebra::Point3;
    use rand::{Rng, SeedableRng};

    fn frame() -> RootFrame {
        RootFrame::new(Point3::origin(), 1.0).unwrap()
    }

    #[test]
    fn restrict_matches_random_access_oracle() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(23);
        let leaves = oracle::balanced_completion(&[
            MortonCode::encode(4, 1, 2, 3),
            MortonCode::encode(3, 7, 7, 7),
        ]);
        let mut w = RecordWriter::create(&path, frame()).unwrap();
        for c in &leaves {
            let mut rec = CubeRecord::filler(*c);
            for h in rec.histogram.iter_mut() {
                *h = rng.gen_range(0..5);
            }
            w.push(&rec).unwrap();
        }
        w.finish().unwrap();

        for level in [0u8, 1, 2, 3] {
            let got = restrict_histograms(&path, level).unwrap();
            // Random-access oracle: group by ancestor in a map.
            let mut expect: std::collections::BTreeMap<MortonCode, [u64; 8]> =
                std::collections::BTreeMap::new();
            let mut r = RecordReader::open(&path).unwrap();
            while let Some(rec) = r.next().unwrap() {
                let anc = rec.code.ancestor_at(level);
                let e = expect.entry(anc).or_insert([0; 8]);
                for b in 0..8 {
                    e[b] += rec.histogram[b] as u64;
                }
            }
            let expect: Vec<(MortonCode, [u64; 8])> = expect.into_iter().collect();
            assert_eq!(got, expect, "level {level}");
        }
    }

    #[test]
    fn prolong_copies_parent_values_to_children() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let leaves = oracle::minimal_completion(&[MortonCode::encode(2, 1, 1, 1)]);
        let mut w = RecordWriter::create(&path, frame()).unwrap();
        for c in &leaves {
            w.push(&CubeRecord::filler(*c)).unwrap();
        }
        w.finish().unwrap();
        let mut file = OctreeFile::open_rw(&path).unwrap();
        let n = file.len();
        prolong_cell(&mut file, 0, n, 0.5, [0.1, 0.2, 0.3]).unwrap();
        let mut r = RecordReader::open(&path).unwrap();
        while let Some(rec) = r.next().unwrap() {
            assert_eq!(rec.u, 0.5);
            assert_eq!(rec.v, [0.1, 0.2, 0.3]);
        }
    }

    #[test]
    fn empty_histograms_solve_to_zero_field() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("o.octr");
        let leaves = oracle::balanced_completion(&[MortonCode::encode(3, 3, 3, 3)]);
        let mut w = RecordWriter::create(&path, frame()).unwrap();
        for c in &leaves {
            w.push(&CubeRecord::filler(*c)).unwrap();
        }
        w.finish().unwrap();
        let top = build_treetop(&path, 1 << 20).unwrap();
        let params = SolveParams {
            iters: 20,
            ..Default::default()
        };
        solve_coarse_to_fine(&path, &top, &params, dir.path().join("work"), |_| Ok(()))
            .unwrap();
        let mut r = RecordReader::open(&path).unwrap();
        while let Some(rec) = r.next().unwrap() {
            assert_eq!(rec.u, 0.0);
        }
    }

    #[test]
    fn split_solve_tracks_monolithic_solve() {
        // A slab field solved as one group versus many groups: signs agree on
        // the overwhelming majority of cells and the mean difference is tiny.
        let dir = tempfile::tempdir().unwrap();
        let depth = 3u8;
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
        let write = |path: &Path| {
            let mut w = RecordWriter::create(path, frame()).unwrap();
            for c in &codes {
                let mut rec = CubeRecord::filler(*c);
                let (x, _, _) = c.decode();
                rec.n = 1;
                rec.r_sum = 0.06;
                if x < m / 2 {
                    rec.histogram[0] = 10;
                } else {
                    rec.histogram[7] = 10;
                }
                w.push(&rec).unwrap();
            }
            w.finish().unwrap();
        };
        let mono = dir.path().join("mono.octr");
        let split = dir.path().join("split.octr");
        write(&mono);
        write(&split);

        let params = SolveParams {
            iters: 150,
            ..Default::default()
        };
        let top_mono = build_treetop(&mono, 1 << 20).unwrap();
        assert_eq!(top_mono.leaves().len(), 1);
        solve_coarse_to_fine(&mono, &top_mono, &params, dir.path().join("w1"), |_| Ok(()))
            .unwrap();

        let top_split = build_treetop(&split, 64).unwrap();
        assert!(top_split.leaves().len() >= 8);
        solve_coarse_to_fine(&split, &top_split, &params, dir.path().join("w2"), |_| {
            Ok(())
        })
        .unwrap();

        let read_u = |path: &Path| -> Vec<f64> {
            let mut r = RecordReader::open(path).unwrap();
            let mut out = Vec::new();
            while let Some(rec) = r.next().unwrap() {
                out.push(rec.u as f64);
            }
            out
        };
        let a = read_u(&mono);
        let b = read_u(&split);
        assert_eq!(a.len(), b.len());
        let mut mean_abs = 0.0;
        let mut sign_agree = 0usize;
        let mut decided = 0usize;
        for (x, y) in a.iter().zip(b.iter()) {
            mean_abs += (x - y).abs();
            if x.abs() > 0.05 || y.abs() > 0.05 {
                decided += 1;
                if (x >= &0.0) == (y >= &0.0) {
                    sign_agree += 1;
                }
            }
        }
        mean_abs /= a.len() as f64;
        assert!(mean_abs <= 0.05, "mean |du| = {mean_abs}");
        assert!(
            sign_agree as f64 >= 0.99 * decided as f64,
            "{sign_agree}/{decided} signs agree"
        );
    }

    #[test]
    fn identical_runs_are_bit_identical() {
        let dir = tempfile::tempdir().unwrap();
        let make = |path: &Path| {
            let leaves = oracle::balanced_completion(&[MortonCode::encode(3, 1, 5, 2)]);
            let mut w = RecordWriter::create(path, frame()).unwrap();
            for (i, c) in leaves.iter().enumerate() {
                let mut rec = CubeRecord::filler(*c);
                rec.histogram[i % 8] = (i % 7) as u32;
                w.push(&rec).unwrap();
            }
            w.finish().unwrap();
        };
        let a = dir.path().join("a.octr");
        let b = dir.path().join("b.octr");
        make(&a);
        make(&b);
        let params = SolveParams {
            iters: 60,
            ..Default::default()
        };
        let ta = build_treetop(&a, 32).unwrap();
        let tb = build_treetop(&b, 32).unwrap();
        solve_coarse_to_fine(&a, &ta, &params, dir.path().join("wa"), |_| Ok(())).unwrap();
        solve_coarse_to_fine(&b, &tb, &params, dir.path().join("wb"), |_| Ok(())).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }
}
