//! Out-of-core completion and 2:1 balancing of the linear octree.
//!
//! The file is kept a complete tiling at all times. A streaming completion
//! pass drops refined ancestors (keep-finest) and fills gaps with empty
//! cells. Balancing then sweeps depth bands from fine to coarse: every cell
//! of the current depth `d` demands the parent-level cell behind each of its
//! six faces (depth `d - 1`); demands are merged in with `external_merge` and
//! a completion pass splits whatever they land inside. Cells created by a
//! band are strictly shallower than the band itself, so a single descending
//! sweep reaches the fixpoint: any leaf of the final tiling was present when
//! its own band ran and has therefore forced all face neighbors to within
//! one level of itself.

use std::collections::HashSet;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::instrument::RecordResidency;
use crate::morton::{MortonCode, FACES, MAX_DEPTH};
use crate::record::{CubeRecord, RecordReader, RecordWriter};

use super::merge::external_merge;

#[derive(Debug, Clone, Copy, Default)]
pub struct BalanceStats {
    pub records_in: u64,
    pub records_out: u64,
    /// Number of depth bands that actually produced demands.
    pub band_passes: u32,
}

pub(crate) struct PeekReader {
    reader: RecordReader,
    peeked: Option<CubeRecord>,
}

impl PeekReader {
    pub(crate) fn open(path: &Path) -> Result<Self> {
        Ok(PeekReader {
            reader: RecordReader::open(path)?,
            peeked: None,
        })
    }

    pub(crate) fn frame(&self) -> crate::geom::RootFrame {
        self.reader.frame()
    }

    pub(crate) fn peek(&mut self) -> Result<Option<&CubeRecord>> {
        if self.peeked.is_none() {
            self.peeked = self.reader.next()?;
        }
        Ok(self.peeked.as_ref())
    }

    pub(crate) fn take(&mut self) -> Result<Option<CubeRecord>> {
        if self.peeked.is_none() {
            self.peeked = self.reader.next()?;
        }
        Ok(self.peeked.take())
    }
}

/// Streaming keep-finest + completion. Records that have finer records inside
/// them are dropped (their region is refined; replacement cells carry no
/// samples), and every gap is tiled with the coarsest possible empty cells.
fn complete_cell(
    cell: MortonCode,
    pk: &mut PeekReader,
    w: &mut RecordWriter,
    counts: &mut [u64; 31],
) -> Result<()> {
    let next_inside = match pk.peek()? {
        None => false,
        Some(r) => cell.contains(&r.code),
    };
    if !next_inside {
        w.push(&CubeRecord::filler(cell))?;
        counts[cell.depth() as usize] += 1;
        return Ok(());
    }
    if pk.peek()?.map(|r| r.code == cell).unwrap_or(false) {
        let rec = pk.take()?.unwrap();
        let splits = match pk.peek()? {
            Some(r2) => cell.is_ancestor_of(&r2.code),
            None => false,
        };
        if !splits {
            w.push(&rec)?;
            counts[cell.depth() as usize] += 1;
            return Ok(());
        }
        // A finer record follows inside this cell: the record is refined
        // away and its subtree is re-tiled below.
    }
    if cell.depth() == MAX_DEPTH {
        return Err(Error::Consistency(
            "records below the maximum octree depth".into(),
        ));
    }
    for oct in 0..8 {
        complete_cell(cell.child(oct), pk, w, counts)?;
    }
    Ok(())
}

fn complete_pass(input: &Path, output: &Path) -> Result<(u64, [u64; 31])> {
    let mut pk = PeekReader::open(input)?;
    let mut w = RecordWriter::create(output, pk.frame())?;
    let mut counts = [0u64; 31];
    complete_cell(MortonCode::ROOT, &mut pk, &mut w, &mut counts)?;
    if pk.peek()?.is_some() {
        return Err(Error::Consistency(format!(
            "input {} is not sorted by cube key",
            input.display()
        )));
    }
    let written = w.finish()?;
    Ok((written, counts))
}

/// Drop demands already satisfied by the (complete) tiling: a demand is
/// needed only when the leaf covering its min corner is coarser than the
/// demand. One streaming co-scan of the sorted demand list and the file.
fn filter_needed(input: &Path, demands: &[MortonCode]) -> Result<Vec<MortonCode>> {
    let mut reader = RecordReader::open(input)?;
    let mut prev: Option<CubeRecord> = None;
    let mut upcoming = reader.next()?;
    let mut needed = Vec::new();
    for &d in demands {
        while let Some(rec) = &upcoming {
            if rec.code.path_bits() <= d.path_bits() {
                prev = upcoming.take();
                upcoming = reader.next()?;
            } else {
                break;
            }
        }
        let covering = prev
            .as_ref()
            .ok_or_else(|| Error::Consistency("demand precedes every record".into()))?;
        if covering.code.depth() < d.depth() {
            needed.push(d);
        }
    }
    Ok(needed)
}

/// Collect the parent-level face-neighbor demands of every record at depth
/// `band`, keep only the unsatisfied ones, and spill them as sorted runs
/// whenever `budget` demands are buffered.
fn demand_pass(
    input: &Path,
    band: u8,
    tmp_dir: &Path,
    budget: u64,
    run_seq: &mut u64,
) -> Result<Vec<PathBuf>> {
    let mut reader = RecordReader::open(input)?;
    let frame = reader.frame();
    let mut demands: HashSet<MortonCode> = HashSet::new();
    let mut residency = RecordResidency::new(0);
    let mut runs = Vec::new();

    let mut flush =
        |demands: &mut HashSet<MortonCode>, runs: &mut Vec<PathBuf>| -> Result<()> {
            if demands.is_empty() {
                return Ok(());
            }
            let mut codes: Vec<MortonCode> = demands.drain().collect();
            codes.sort();
            let codes = filter_needed(input, &codes)?;
            if codes.is_empty() {
                return Ok(());
            }
            let path = tmp_dir.join(format!("demand_{run_seq}.octr"));
            *run_seq += 1;
            let mut w = RecordWriter::create(&path, frame)?;
            for c in codes {
                w.push(&CubeRecord::filler(c))?;
            }
            w.finish()?;
            runs.push(path);
            Ok(())
        };

    while let Some(rec) = reader.next()? {
        if rec.code.depth() != band {
            continue;
        }
        for face in FACES {
            let Some(m) = rec.code.face_neighbor(face) else {
                continue;
            };
            let demand = m.parent().expect("band >= 2 has a parent");
            demands.insert(demand);
        }
        residency.resize(demands.len() as u64);
        if demands.len() as u64 >= budget {
            flush(&mut demands, &mut runs)?;
            residency.resize(0);
        }
    }
    flush(&mut demands, &mut runs)?;
    Ok(runs)
}

/// Balance and complete a sorted, deduplicated linear octree file.
/// Peak resident records stay within `budget` plus merge cursors.
pub fn balance(
    input: impl AsRef<Path>,
    output: impl AsRef<Path>,
    budget: u64,
    tmp_dir: impl AsRef<Path>,
) -> Result<BalanceStats> {
    let input = input.as_ref();
    let output = output.as_ref();
    let tmp_dir = tmp_dir.as_ref();
    std::fs::create_dir_all(tmp_dir).map_err(|e| Error::io(tmp_dir, e))?;

    let mut stats = BalanceStats {
        records_in: RecordReader::open(input)?.count(),
        ..Default::default()
    };

    let mut seq = 0u64;
    let mut cur = tmp_dir.join("balance_complete_0.octr");
    let (_, mut counts) = complete_pass(input, &cur)?;

    for band in (2..=MAX_DEPTH).rev() {
        if counts[band as usize] == 0 {
            continue;
        }
        let runs = demand_pass(&cur, band, tmp_dir, budget, &mut seq)?;
        if runs.is_empty() {
            continue;
        }
        let merged = tmp_dir.join(format!("balance_merged_{band}.octr"));
        let mut inputs = vec![cur.clone()];
        inputs.extend(runs.iter().cloned());
        external_merge(&inputs, &merged, budget)?;
        for r in &runs {
            let _ = std::fs::remove_file(r);
        }
        let next = tmp_dir.join(format!("balance_complete_{band}.octr"));
        let (_, new_counts) = complete_pass(&merged, &next)?;
        let _ = std::fs::remove_file(&merged);
        let _ = std::fs::remove_file(&cur);
        counts = new_counts;
        cur = next;
        stats.band_passes += 1;
    }

    if std::fs::rename(&cur, output).is_err() {
        std::fs::copy(&cur, output).map_err(|e| Error::io(output, e))?;
        let _ = std::fs::remove_file(&cur);
    }
    stats.records_out = RecordReader::open(output)?.count();
    Ok(stats)
}
