//! Octree cell records and the OCTR on-disk format.
//!
//! Record layout (little-endian, 72 bytes):
//! `u8 depth; u8[3] pad; u32 n; u8[12] path; f32 r_sum; u32[8] histogram; f32 u; f32[3] v`.
//! The 96-bit path is stored in big-endian bit order so a bytewise comparison
//! of the path field equals the key order on paths.
//!
//! File header (48 bytes): magic `OCTR`, `u32` version, `u64` record count,
//! `f64[4]` root frame (center xyz, r_root).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geom::RootFrame;
use crate::morton::MortonCode;

pub const RECORD_BYTES: usize = 72;
pub const HEADER_BYTES: u64 = 48;
pub const OCTR_MAGIC: &[u8; 4] = b"OCTR";
pub const OCTR_VERSION: u32 = 1;
pub const HISTOGRAM_BINS: usize = 8;

/// One octree cell: Z-curve code, sample statistics, histogram, solver state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CubeRecord {
    pub code: MortonCode,
    pub n: u32,
    pub r_sum: f32,
    pub histogram: [u32; HISTOGRAM_BINS],
    pub u: f32,
    pub v: [f32; 3],
}

impl CubeRecord {
    pub fn seed(code: MortonCode, r_x: f32) -> Self {
        CubeRecord {
            code,
            n: 1,
            r_sum: r_x,
            histogram: [0; HISTOGRAM_BINS],
            u: 0.0,
            v: [0.0; 3],
        }
    }

    /// A cell created by completion or balancing: carries no samples.
    pub fn filler(code: MortonCode) -> Self {
        CubeRecord {
            code,
            n: 0,
            r_sum: 0.0,
            histogram: [0; HISTOGRAM_BINS],
            u: 0.0,
            v: [0.0; 3],
        }
    }

    /// Density radius: mean contributing sample radius, or the cell's own
    /// radius for cells that carry no samples.
    pub fn r_c(&self, frame: &RootFrame) -> f64 {
        if self.n > 0 {
            self.r_sum as f64 / self.n as f64
        } else {
            frame.cell_radius(self.code.depth())
        }
    }

    /// Fold another record with the same code into this one.
    pub fn merge_from(&mut self, other: &CubeRecord) {
        debug_assert_eq!(self.code, other.code);
        self.n += other.n;
        self.r_sum += other.r_sum;
        for (a, b) in self.histogram.iter_mut().zip(other.histogram.iter()) {
            *a += *b;
        }
    }

    pub fn write_to(&self, buf: &mut [u8; RECORD_BYTES]) {
        buf[0] = self.code.depth();
        buf[1] = 0;
        buf[2] = 0;
        buf[3] = 0;
        buf[4..8].copy_from_slice(&self.n.to_le_bytes());
        let path = self.code.path_bits();
        for i in 0..12 {
            buf[8 + i] = (path >> (88 - 8 * i)) as u8;
        }
        buf[20..24].copy_from_slice(&self.r_sum.to_le_bytes());
        for (i, h) in self.histogram.iter().enumerate() {
            buf[24 + 4 * i..28 + 4 * i].copy_from_slice(&h.to_le_bytes());
        }
        buf[56..60].copy_from_slice(&self.u.to_le_bytes());
        for (i, c) in self.v.iter().enumerate() {
            buf[60 + 4 * i..64 + 4 * i].copy_from_slice(&c.to_le_bytes());
        }
    }

    pub fn read_from(buf: &[u8; RECORD_BYTES], path: &Path, offset: u64) -> Result<Self> {
        let depth = buf[0];
        let mut bits = 0u128;
        for i in 0..12 {
            bits |= (buf[8 + i] as u128) << (88 - 8 * i);
        }
        let code = MortonCode::from_raw(bits, depth).ok_or_else(|| {
            Error::parse(
                path,
                offset,
                format!("invalid morton code (depth {depth})"),
            )
        })?;
        let n = u32::from_le_bytes(buf[4..8].try_into().unwrap());
        let r_sum = f32::from_le_bytes(buf[20..24].try_into().unwrap());
        let mut histogram = [0u32; HISTOGRAM_BINS];
        for (i, h) in histogram.iter_mut().enumerate() {
            *h = u32::from_le_bytes(buf[24 + 4 * i..28 + 4 * i].try_into().unwrap());
        }
        let u = f32::from_le_bytes(buf[56..60].try_into().unwrap());
        let mut v = [0f32; 3];
        for (i, c) in v.iter_mut().enumerate() {
            *c = f32::from_le_bytes(buf[60 + 4 * i..64 + 4 * i].try_into().unwrap());
        }
        if n == 0 && r_sum != 0.0 {
            return Err(Error::parse(path, offset, "r_sum nonzero on empty cell"));
        }
        Ok(CubeRecord {
            code,
            n,
            r_sum,
            histogram,
            u,
            v,
        })
    }
}

fn write_header<W: Write>(w: &mut W, count: u64, frame: &RootFrame) -> std::io::Result<()> {
    w.write_all(OCTR_MAGIC)?;
    w.write_u32::<LittleEndian>(OCTR_VERSION)?;
    w.write_u64::<LittleEndian>(count)?;
    w.write_f64::<LittleEndian>(frame.center.x)?;
    w.write_f64::<LittleEndian>(frame.center.y)?;
    w.write_f64::<LittleEndian>(frame.center.z)?;
    w.write_f64::<LittleEndian>(frame.r_root)?;
    Ok(())
}

fn read_header<R: Read>(r: &mut R, path: &Path) -> Result<(u64, RootFrame)> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)
        .map_err(|e| Error::io(path, e))?;
    if &magic != OCTR_MAGIC {
        return Err(Error::parse(path, 0, "bad magic, expected OCTR"));
    }
    let version = r
        .read_u32::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    if version != OCTR_VERSION {
        return Err(Error::parse(path, 4, format!("unsupported version {version}")));
    }
    let count = r
        .read_u64::<LittleEndian>()
        .map_err(|e| Error::io(path, e))?;
    let cx = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let cy = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let cz = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let rr = r.read_f64::<LittleEndian>().map_err(|e| Error::io(path, e))?;
    let frame = RootFrame::new(Point3::new(cx, cy, cz), rr)
        .map_err(|_| Error::parse(path, 16, "invalid root frame"))?;
    Ok((count, frame))
}

/// Streaming writer; the record count is patched into the header on `finish`.
pub struct RecordWriter {
    path: PathBuf,
    out: BufWriter<File>,
    count: u64,
    frame: RootFrame,
}

impl RecordWriter {
    pub fn create(path: impl Into<PathBuf>, frame: RootFrame) -> Result<Self> {
        let path = path.into();
        let file = File::create(&path).map_err(|e| Error::io(&path, e))?;
        let mut out = BufWriter::new(file);
        write_header(&mut out, 0, &frame).map_err(|e| Error::io(&path, e))?;
        Ok(RecordWriter {
            path,
            out,
            count: 0,
            frame,
        })
    }

    pub fn push(&mut self, rec: &CubeRecord) -> Result<()> {
        let mut buf = [0u8; RECORD_BYTES];
        rec.write_to(&mut buf);
        self.out
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn finish(mut self) -> Result<u64> {
        self.out.flush().map_err(|e| Error::io(&self.path, e))?;
        let mut file = self.out.into_inner().map_err(|e| {
            Error::io(&self.path, std::io::Error::other(e.to_string()))
        })?;
        file.seek(SeekFrom::Start(0))
            .map_err(|e| Error::io(&self.path, e))?;
        write_header(&mut file, self.count, &self.frame).map_err(|e| Error::io(&self.path, e))?;
        file.sync_all().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.count)
    }
}

/// Streaming reader over one OCTR file.
pub struct RecordReader {
    path: PathBuf,
    input: BufReader<File>,
    count: u64,
    read_so_far: u64,
    frame: RootFrame,
}

impl RecordReader {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut input = BufReader::with_capacity(1 << 16, file);
        let (count, frame) = read_header(&mut input, &path)?;
        Ok(RecordReader {
            path,
            input,
            count,
            read_so_far: 0,
            frame,
        })
    }

    pub fn count(&self) -> u64 {
        self.count
    }

    pub fn frame(&self) -> RootFrame {
        self.frame
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    /// Byte offset of the next record, for error reporting.
    pub fn next_offset(&self) -> u64 {
        HEADER_BYTES + self.read_so_far * RECORD_BYTES as u64
    }

    pub fn next(&mut self) -> Result<Option<CubeRecord>> {
        if self.read_so_far >= self.count {
            return Ok(None);
        }
        let offset = self.next_offset();
        let mut buf = [0u8; RECORD_BYTES];
        self.input
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        self.read_so_far += 1;
        Ok(Some(CubeRecord::read_from(&buf, &self.path, offset)?))
    }
}

/// Random access and covering-leaf queries over a closed, sorted OCTR file.
pub struct OctreeFile {
    path: PathBuf,
    file: File,
    count: u64,
    frame: RootFrame,
}

impl OctreeFile {
    pub fn open(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
        let mut head = BufReader::new(&file);
        let (count, frame) = read_header(&mut head, &path)?;
        drop(head);
        let mut file = file;
        file.seek(SeekFrom::Start(HEADER_BYTES))
            .map_err(|e| Error::io(&path, e))?;
        Ok(OctreeFile {
            path,
            file,
            count,
            frame,
        })
    }

    /// Open for in-place updates of solver fields (u, v, histogram).
    pub fn open_rw(path: impl Into<PathBuf>) -> Result<Self> {
        let path = path.into();
        let file = File::options()
            .read(true)
            .write(true)
            .open(&path)
            .map_err(|e| Error::io(&path, e))?;
        let mut head = BufReader::new(&file);
        let (count, frame) = read_header(&mut head, &path)?;
        drop(head);
        Ok(OctreeFile {
            path,
            file,
            count,
            frame,
        })
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn frame(&self) -> RootFrame {
        self.frame
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn read(&mut self, index: u64) -> Result<CubeRecord> {
        debug_assert!(index < self.count);
        let offset = HEADER_BYTES + index * RECORD_BYTES as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = [0u8; RECORD_BYTES];
        self.file
            .read_exact(&mut buf)
            .map_err(|e| Error::io(&self.path, e))?;
        CubeRecord::read_from(&buf, &self.path, offset)
    }

    pub fn write(&mut self, index: u64, rec: &CubeRecord) -> Result<()> {
        debug_assert!(index < self.count);
        let offset = HEADER_BYTES + index * RECORD_BYTES as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut buf = [0u8; RECORD_BYTES];
        rec.write_to(&mut buf);
        self.file
            .write_all(&buf)
            .map_err(|e| Error::io(&self.path, e))
    }

    /// Read records `[first, last)` into `out` (cleared first).
    pub fn read_range(&mut self, first: u64, last: u64, out: &mut Vec<CubeRecord>) -> Result<()> {
        out.clear();
        debug_assert!(first <= last && last <= self.count);
        let offset = HEADER_BYTES + first * RECORD_BYTES as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut reader = BufReader::with_capacity(1 << 16, &self.file);
        let mut buf = [0u8; RECORD_BYTES];
        for i in first..last {
            reader
                .read_exact(&mut buf)
                .map_err(|e| Error::io(&self.path, e))?;
            out.push(CubeRecord::read_from(
                &buf,
                &self.path,
                HEADER_BYTES + i * RECORD_BYTES as u64,
            )?);
        }
        Ok(())
    }

    /// Write `records` back to consecutive slots starting at `first`.
    pub fn write_range(&mut self, first: u64, records: &[CubeRecord]) -> Result<()> {
        debug_assert!(first + records.len() as u64 <= self.count);
        let offset = HEADER_BYTES + first * RECORD_BYTES as u64;
        self.file
            .seek(SeekFrom::Start(offset))
            .map_err(|e| Error::io(&self.path, e))?;
        let mut writer = BufWriter::with_capacity(1 << 16, &self.file);
        let mut buf = [0u8; RECORD_BYTES];
        for rec in records {
            rec.write_to(&mut buf);
            writer
                .write_all(&buf)
                .map_err(|e| Error::io(&self.path, e))?;
        }
        writer.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(())
    }

    /// Index of the leaf record whose cell contains the depth-30 cell with
    /// path `finest_key`. Relies on the file being a sorted complete tiling.
    pub fn covering_leaf(&mut self, finest_key: u128) -> Result<(u64, CubeRecord)> {
        if self.count == 0 {
            return Err(Error::Consistency(
                "covering-leaf query on an empty octree".into(),
            ));
        }
        // Last record with path <= finest_key.
        let mut lo = 0u64;
        let mut hi = self.count; // exclusive
        while hi - lo > 1 {
            let mid = lo + (hi - lo) / 2;
            let rec = self.read(mid)?;
            if rec.code.path_bits() <= finest_key {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let rec = self.read(lo)?;
        Ok((lo, rec))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::Point3;

    fn frame() -> RootFrame {
        RootFrame::new(Point3::new(0.5, -1.0, 2.0), 4.0).unwrap()
    }

    #[test]
    fn record_roundtrip_is_bit_exact() {
        let rec = CubeRecord {
            code: MortonCode::encode(5, 3, 17, 30),
            n: 7,
            r_sum: 0.125,
            histogram: [1, 2, 3, 4, 5, 6, 7, 8],
            u: -0.5,
            v: [0.25, -0.75, 1.5],
        };
        let mut buf = [0u8; RECORD_BYTES];
        rec.write_to(&mut buf);
        let back = CubeRecord::read_from(&buf, Path::new("mem"), 0).unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn path_bytes_compare_like_keys() {
        // Byte-wise comparison of the stored path field must equal path order.
        let a = CubeRecord::filler(MortonCode::encode(2, 1, 0, 3));
        let b = CubeRecord::filler(MortonCode::encode(4, 9, 2, 14));
        let mut ba = [0u8; RECORD_BYTES];
        let mut bb = [0u8; RECORD_BYTES];
        a.write_to(&mut ba);
        b.write_to(&mut bb);
        let cmp_bytes = ba[8..20].cmp(&bb[8..20]);
        let cmp_path = a.code.path_bits().cmp(&b.code.path_bits());
        assert_eq!(cmp_bytes, cmp_path);
    }

    #[test]
    fn file_roundtrip_and_random_access() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.octr");
        let mut w = RecordWriter::create(&path, frame()).unwrap();
        let codes = [
            MortonCode::encode(1, 0, 0, 0),
            MortonCode::encode(2, 1, 1, 1),
            MortonCode::encode(3, 7, 0, 5),
        ];
        for c in codes {
            w.push(&CubeRecord::seed(c, 0.5)).unwrap();
        }
        assert_eq!(w.finish().unwrap(), 3);

        let mut r = RecordReader::open(&path).unwrap();
        assert_eq!(r.count(), 3);
        assert_eq!(r.frame(), frame());
        let mut seen = Vec::new();
        while let Some(rec) = r.next().unwrap() {
            seen.push(rec.code);
        }
        assert_eq!(seen, codes);

        let mut f = OctreeFile::open(&path).unwrap();
        assert_eq!(f.read(1).unwrap().code, codes[1]);
    }

    #[test]
    fn covering_leaf_finds_container() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.octr");
        let mut w = RecordWriter::create(&path, frame()).unwrap();
        // A tiny complete tiling: children of root, one of them refined.
        let mut leaves = Vec::new();
        for oct in 0..8u8 {
            let c = MortonCode::ROOT.child(oct);
            if oct == 2 {
                for o2 in 0..8u8 {
                    leaves.push(c.child(o2));
                }
            } else {
                leaves.push(c);
            }
        }
        leaves.sort();
        for c in &leaves {
            w.push(&CubeRecord::filler(*c)).unwrap();
        }
        w.finish().unwrap();

        let mut f = OctreeFile::open(&path).unwrap();
        for (i, leaf) in leaves.iter().enumerate() {
            // Query with the key of the leaf's first finest descendant.
            let (idx, rec) = f.covering_leaf(leaf.path_bits()).unwrap();
            assert_eq!(idx, i as u64);
            assert_eq!(rec.code, *leaf);
        }
    }
}
