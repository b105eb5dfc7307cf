//! Treetop construction: a shallow rooted subtree whose leaves each cover a
//! bounded, consecutive range of the balanced linear octree. Built in one
//! streaming pass (equivalently: per-part treetops merged incrementally); a
//! node stays a leaf iff its subtree holds fewer than the configured number
//! of records.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::morton::MortonCode;
use crate::record::RecordReader;

use super::balance::PeekReader;

pub const TTOP_MAGIC: &[u8; 4] = b"TTOP";
pub const TTOP_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TreetopLeaf {
    pub code: MortonCode,
    /// Half-open record range [first, last) in the balanced octree file.
    pub first: u64,
    pub last: u64,
}

impl TreetopLeaf {
    pub fn cube_count(&self) -> u64 {
        self.last - self.first
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TreetopNode {
    Internal(MortonCode),
    Leaf(TreetopLeaf),
}

#[derive(Debug, Clone)]
pub struct Treetop {
    /// Nodes in preorder; leaves appear in Z-order.
    pub nodes: Vec<TreetopNode>,
    pub n_limit: u64,
    pub total_records: u64,
}

impl Treetop {
    pub fn leaves(&self) -> Vec<TreetopLeaf> {
        self.nodes
            .iter()
            .filter_map(|n| match n {
                TreetopNode::Leaf(l) => Some(*l),
                TreetopNode::Internal(_) => None,
            })
            .collect()
    }

    /// Leaf whose record range contains `record_index`.
    pub fn leaf_of_record(&self, record_index: u64) -> Option<TreetopLeaf> {
        self.nodes.iter().find_map(|n| match n {
            TreetopNode::Leaf(l) if l.first <= record_index && record_index < l.last => Some(*l),
            _ => None,
        })
    }
}

struct Builder {
    pk: PeekReader,
    index: u64,
    n_limit: u64,
}

impl Builder {
    /// Consume all records under `cell`; return the node list for this
    /// subtree (collapsed to a single leaf when the count stays under the
    /// limit).
    fn build(&mut self, cell: MortonCode) -> Result<Vec<TreetopNode>> {
        let first = self.index;
        if self.pk.peek()?.map(|r| r.code == cell).unwrap_or(false) {
            self.pk.take()?;
            self.index += 1;
            if let Some(r) = self.pk.peek()? {
                if cell.is_ancestor_of(&r.code) {
                    return Err(Error::Consistency(format!(
                        "octree is not a proper tiling: {} has descendants",
                        cell
                    )));
                }
            }
            return Ok(vec![TreetopNode::Leaf(TreetopLeaf {
                code: cell,
                first,
                last: self.index,
            })]);
        }
        let mut children: Vec<TreetopNode> = Vec::new();
        for oct in 0..8 {
            let child = cell.child(oct);
            let inside = match self.pk.peek()? {
                None => false,
                Some(r) => child.contains(&r.code),
            };
            if inside {
                children.extend(self.build(child)?);
            }
        }
        let last = self.index;
        if last - first < self.n_limit {
            Ok(vec![TreetopNode::Leaf(TreetopLeaf {
                code: cell,
                first,
                last,
            })])
        } else {
            let mut nodes = vec![TreetopNode::Internal(cell)];
            nodes.extend(children);
            Ok(nodes)
        }
    }
}

/// Build the treetop of a balanced octree file.
pub fn build_treetop(octree: impl AsRef<Path>, n_limit: u64) -> Result<Treetop> {
    if n_limit < 8 {
        return Err(Error::Contract("treetop leaf limit must be >= 8".into()));
    }
    let path = octree.as_ref();
    let total_records = RecordReader::open(path)?.count();
    let mut b = Builder {
        pk: PeekReader::open(path)?,
        index: 0,
        n_limit,
    };
    let nodes = if total_records == 0 {
        vec![TreetopNode::Leaf(TreetopLeaf {
            code: MortonCode::ROOT,
            first: 0,
            last: 0,
        })]
    } else {
        b.build(MortonCode::ROOT)?
    };
    if b.pk.peek()?.is_some() {
        return Err(Error::Consistency(
            "records outside the root subtree".into(),
        ));
    }
    Ok(Treetop {
        nodes,
        n_limit,
        total_records,
    })
}

pub fn save_treetop(path: impl AsRef<Path>, top: &Treetop) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(TTOP_MAGIC).map_err(io)?;
    w.write_u32::<LittleEndian>(TTOP_VERSION).map_err(io)?;
    w.write_u64::<LittleEndian>(top.nodes.len() as u64).map_err(io)?;
    w.write_u64::<LittleEndian>(top.n_limit).map_err(io)?;
    w.write_u64::<LittleEndian>(top.total_records).map_err(io)?;
    for node in &top.nodes {
        let (kind, code, range) = match node {
            TreetopNode::Internal(c) => (0u8, c, None),
            TreetopNode::Leaf(l) => (1u8, &l.code, Some((l.first, l.last))),
        };
        w.write_u8(kind).map_err(io)?;
        w.write_u8(code.depth()).map_err(io)?;
        let path_bits = code.path_bits();
        for i in 0..12 {
            w.write_u8((path_bits >> (88 - 8 * i)) as u8).map_err(io)?;
        }
        if let Some((first, last)) = range {
            w.write_u64::<LittleEndian>(first).map_err(io)?;
            w.write_u64::<LittleEndian>(last).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_treetop(path: impl AsRef<Path>) -> Result<Treetop> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(&path, e);
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != TTOP_MAGIC {
        return Err(Error::parse(&path, 0, "bad magic, expected TTOP"));
    }
    let version = r.read_u32::<LittleEndian>().map_err(io)?;
    if version != TTOP_VERSION {
        return Err(Error::parse(&path, 4, format!("unsupported version {version}")));
    }
    let node_count = r.read_u64::<LittleEndian>().map_err(io)?;
    let n_limit = r.read_u64::<LittleEndian>().map_err(io)?;
    let total_records = r.read_u64::<LittleEndian>().map_err(io)?;
    let mut nodes = Vec::with_capacity(node_count as usize);
    for i in 0..node_count {
        let kind = r.read_u8().map_err(io)?;
        let depth = r.read_u8().map_err(io)?;
        let mut bits = 0u128;
        for b in 0..12 {
            bits |= (r.read_u8().map_err(io)? as u128) << (88 - 8 * b);
        }
        let code = MortonCode::from_raw(bits, depth)
            .ok_or_else(|| Error::parse(&path, 28 + i, "invalid treetop code"))?;
        match kind {
            0 => nodes.push(TreetopNode::Internal(code)),
            1 => {
                let first = r.read_u64::<LittleEndian>().map_err(io)?;
                let last = r.read_u64::<LittleEndian>().map_err(io)?;
                nodes.push(TreetopNode::Leaf(TreetopLeaf { code, first, last }));
            }
            k => return Err(Error::parse(&path, 28 + i, format!("bad node kind {k}"))),
        }
    }
    Ok(Treetop {
        nodes,
        n_limit,
        total_records,
    })
}
