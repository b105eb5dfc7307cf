//! Mesh file formats: MESHPART intermediates, binary little-endian PLY, and
//! ASCII OBJ.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};

use crate::error::{Error, Result};
use crate::morton::MortonCode;

use super::{MeshPart, TriangleMesh};

pub const MESHPART_MAGIC: &[u8; 8] = b"MESHPART";

pub fn save_part(path: impl AsRef<Path>, part: &MeshPart) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    w.write_all(MESHPART_MAGIC).map_err(io)?;
    w.write_u8(part.leaf.depth()).map_err(io)?;
    let bits = part.leaf.path_bits();
    for i in 0..12 {
        w.write_u8((bits >> (88 - 8 * i)) as u8).map_err(io)?;
    }
    w.write_u64::<LittleEndian>(part.vertices.len() as u64)
        .map_err(io)?;
    w.write_u64::<LittleEndian>(part.triangles.len() as u64)
        .map_err(io)?;
    for v in &part.vertices {
        for c in v {
            w.write_f64::<LittleEndian>(*c).map_err(io)?;
        }
    }
    for b in &part.border {
        w.write_u8(*b as u8).map_err(io)?;
    }
    for t in &part.triangles {
        for i in t {
            w.write_u32::<LittleEndian>(*i).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_part(path: impl AsRef<Path>) -> Result<MeshPart> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(&path, e);
    let mut magic = [0u8; 8];
    r.read_exact(&mut magic).map_err(io)?;
    if &magic != MESHPART_MAGIC {
        return Err(Error::parse(&path, 0, "bad magic, expected MESHPART"));
    }
    let depth = r.read_u8().map_err(io)?;
    let mut bits = 0u128;
    for i in 0..12 {
        bits |= (r.read_u8().map_err(io)? as u128) << (88 - 8 * i);
    }
    let leaf = MortonCode::from_raw(bits, depth)
        .ok_or_else(|| Error::parse(&path, 8, "invalid leaf code"))?;
    let nv = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let nt = r.read_u64::<LittleEndian>().map_err(io)? as usize;
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut v = [0f64; 3];
        for c in v.iter_mut() {
            *c = r.read_f64::<LittleEndian>().map_err(io)?;
        }
        vertices.push(v);
    }
    let mut border = Vec::with_capacity(nv);
    for _ in 0..nv {
        border.push(r.read_u8().map_err(io)? != 0);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let mut t = [0u32; 3];
        for i in t.iter_mut() {
            *i = r.read_u32::<LittleEndian>().map_err(io)?;
        }
        triangles.push(t);
    }
    Ok(MeshPart {
        leaf,
        vertices,
        border,
        triangles,
    })
}

/// Binary little-endian PLY: vertices as float32 x/y/z, faces as uchar count
/// plus int32 indices.
pub fn save_ply(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    write!(
        w,
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.triangles.len()
    )
    .map_err(io)?;
    for v in &mesh.vertices {
        for c in v {
            w.write_f32::<LittleEndian>(*c as f32).map_err(io)?;
        }
    }
    for t in &mesh.triangles {
        w.write_u8(3).map_err(io)?;
        for i in t {
            w.write_i32::<LittleEndian>(*i as i32).map_err(io)?;
        }
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_ply(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut r = BufReader::new(file);
    let io = |e| Error::io(&path, e);

    let mut header = Vec::new();
    loop {
        let mut line = Vec::new();
        let mut byte = [0u8; 1];
        loop {
            r.read_exact(&mut byte).map_err(io)?;
            if byte[0] == b'\n' {
                break;
            }
            line.push(byte[0]);
        }
        let line = String::from_utf8_lossy(&line).trim().to_string();
        let done = line == "end_header";
        header.push(line);
        if done {
            break;
        }
    }
    if header.first().map(String::as_str) != Some("ply") {
        return Err(Error::parse(&path, 0, "missing ply magic"));
    }
    if !header
        .iter()
        .any(|l| l.starts_with("format binary_little_endian"))
    {
        return Err(Error::parse(&path, 0, "only binary little-endian PLY supported"));
    }
    let count_of = |kind: &str| -> Result<usize> {
        header
            .iter()
            .find_map(|l| {
                l.strip_prefix(&format!("element {kind} "))
                    .and_then(|s| s.trim().parse().ok())
            })
            .ok_or_else(|| Error::parse(&path, 0, format!("missing element {kind}")))
    };
    let nv = count_of("vertex")?;
    let nf = count_of("face")?;
    let mut mesh = TriangleMesh::default();
    for _ in 0..nv {
        let x = r.read_f32::<LittleEndian>().map_err(io)?;
        let y = r.read_f32::<LittleEndian>().map_err(io)?;
        let z = r.read_f32::<LittleEndian>().map_err(io)?;
        mesh.vertices.push([x as f64, y as f64, z as f64]);
    }
    for _ in 0..nf {
        let k = r.read_u8().map_err(io)?;
        if k != 3 {
            return Err(Error::parse(&path, 0, "non-triangle face in PLY"));
        }
        let a = r.read_i32::<LittleEndian>().map_err(io)? as u32;
        let b = r.read_i32::<LittleEndian>().map_err(io)? as u32;
        let c = r.read_i32::<LittleEndian>().map_err(io)? as u32;
        mesh.triangles.push([a, b, c]);
    }
    Ok(mesh)
}

pub fn save_obj(path: impl AsRef<Path>, mesh: &TriangleMesh) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let io = |e| Error::io(path, e);
    for v in &mesh.vertices {
        writeln!(w, "v {} {} {}", v[0], v[1], v[2]).map_err(io)?;
    }
    for t in &mesh.triangles {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

pub fn load_obj(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path: PathBuf = path.as_ref().into();
    let file = File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut mesh = TriangleMesh::default();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(&path, e))?;
        let mut tok = line.split_whitespace();
        match tok.next() {
            Some("v") => {
                let mut v = [0f64; 3];
                for c in v.iter_mut() {
                    *c = tok
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::parse(&path, 0, "bad vertex line"))?;
                }
                mesh.vertices.push(v);
            }
            Some("f") => {
                let mut t = [0u32; 3];
                for i in t.iter_mut() {
                    let field = tok
                        .next()
                        .ok_or_else(|| Error::parse(&path, 0, "bad face line"))?;
                    let idx: i64 = field
                        .split('/')
                        .next()
                        .and_then(|s| s.parse().ok())
                        .ok_or_else(|| Error::parse(&path, 0, "bad face index"))?;
                    *i = (idx - 1) as u32;
                }
                mesh.triangles.push(t);
            }
            _ => {}
        }
    }
    Ok(mesh)
}

/// Load a mesh by extension (`.ply` binary LE or `.obj`).
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriangleMesh> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("ply") => load_ply(path),
        Some("obj") => load_obj(path),
        _ => Err(Error::Config(format!(
            "unknown mesh format {}; use .ply or .obj",
            path.display()
        ))),
    }
}
