//! OBJ and binary STL reading and writing.
//!
//! OBJ output uses shortest round-trip float formatting, so a save/load cycle
//! reproduces coordinates bit-exactly. STL stores `f32`; vertices are welded
//! by exact bit pattern on load. Face order is preserved in both formats.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{TriMesh, Vec3};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Stl,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
        {
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            Some(e) if e == "stl" => Ok(MeshFormat::Stl),
            _ => Err(Error::InvalidParameter(format!(
                "cannot infer mesh format from {}",
                path.display()
            ))),
        }
    }
}

/// Loads a mesh and rejects it unless it passes [`TriMesh::validate`].
pub fn load_mesh(path: impl AsRef<Path>) -> Result<TriMesh> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::path_io(path, e))?;
    let name = path.display().to_string();
    let mesh = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => {
            let text =
                String::from_utf8(bytes).map_err(|_| Error::parse(&name, 0, "not valid UTF-8"))?;
            parse_obj(&text, &name)?
        }
        MeshFormat::Stl => parse_stl(&bytes, &name)?,
    };
    mesh.validate().into_result()?;
    Ok(mesh)
}

pub fn save_mesh(mesh: &TriMesh, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let bytes = match MeshFormat::from_path(path)? {
        MeshFormat::Obj => write_obj(mesh).into_bytes(),
        MeshFormat::Stl => write_stl(mesh),
    };
    fs::write(path, bytes).map_err(|e| Error::path_io(path, e))
}

pub fn parse_obj(text: &str, source_name: &str) -> Result<TriMesh> {
    let mut vertices = Vec::new();
    let mut faces = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        let mut tokens = line.split_whitespace();
        match tokens.next() {
            Some("v") => {
                let coords: Vec<f64> = tokens
                    .take(3)
                    .map(|t| t.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| {
                        Error::parse(source_name, lineno + 1, format!("bad vertex: {e}"))
                    })?;
                if coords.len() != 3 {
                    return Err(Error::parse(
                        source_name,
                        lineno + 1,
                        "vertex needs 3 coordinates",
                    ));
                }
                vertices.push(Vec3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let refs: Vec<&str> = tokens.collect();
                if refs.len() != 3 {
                    return Err(Error::parse(
                        source_name,
                        lineno + 1,
                        format!("face with {} vertices: triangles only", refs.len()),
                    ));
                }
                let mut face = [0u32; 3];
                for (slot, r) in face.iter_mut().zip(&refs) {
                    let first = r.split('/').next().unwrap_or("");
                    let idx: i64 = first.parse().map_err(|_| {
                        Error::parse(source_name, lineno + 1, format!("bad face index {r:?}"))
                    })?;
                    let resolved = if idx > 0 {
                        idx - 1
                    } else if idx < 0 {
                        vertices.len() as i64 + idx
                    } else {
                        -1
                    };
                    if resolved < 0 || resolved >= vertices.len() as i64 {
                        return Err(Error::parse(
                            source_name,
                            lineno + 1,
                            format!("face index {idx} out of range"),
                        ));
                    }
                    *slot = resolved as u32;
                }
                faces.push(face);
            }
            _ => {}
        }
    }
    TriMesh::new(vertices, faces)
}

pub fn write_obj(mesh: &TriMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        let _ = writeln!(out, "v {} {} {}", v.x, v.y, v.z);
    }
    for f in mesh.faces() {
        let _ = writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1);
    }
    out
}

pub fn parse_stl(bytes: &[u8], source_name: &str) -> Result<TriMesh> {
    if bytes.len() < 84 {
        return Err(Error::parse(
            source_name,
            0,
            "binary STL shorter than its header",
        ));
    }
    let count = u32::from_le_bytes(bytes[80..84].try_into().unwrap()) as usize;
    if bytes.len() != 84 + 50 * count {
        return Err(Error::parse(
            source_name,
            0,
            format!(
                "expected {} bytes for {count} facets, found {}",
                84 + 50 * count,
                bytes.len()
            ),
        ));
    }
    let mut index: HashMap<[u32; 3], u32> = HashMap::new();
    let mut vertices = Vec::new();
    let mut faces = Vec::with_capacity(count);
    for t in 0..count {
        let rec = &bytes[84 + 50 * t..84 + 50 * (t + 1)];
        let mut face = [0u32; 3];
        for (k, slot) in face.iter_mut().enumerate() {
            let off = 12 + 12 * k;
            let bits: [u32; 3] = std::array::from_fn(|c| {
                u32::from_le_bytes(rec[off + 4 * c..off + 4 * c + 4].try_into().unwrap())
            });
            *slot = *index.entry(bits).or_insert_with(|| {
                vertices.push(Vec3::new(
                    f32::from_bits(bits[0]) as f64,
                    f32::from_bits(bits[1]) as f64,
                    f32::from_bits(bits[2]) as f64,
                ));
                (vertices.len() - 1) as u32
            });
        }
        faces.push(face);
    }
    TriMesh::new(vertices, faces)
}

pub fn write_stl(mesh: &TriMesh) -> Vec<u8> {
    let mut out = Vec::with_capacity(84 + 50 * mesh.face_count());
    let mut header = [0u8; 80];
    let tag = b"asmfield binary STL";
    header[..tag.len()].copy_from_slice(tag);
    out.extend_from_slice(&header);
    out.extend_from_slice(&(mesh.face_count() as u32).to_le_bytes());
    for fi in 0..mesh.face_count() {
        let n = mesh.normal(fi);
        for c in n.iter() {
            out.extend_from_slice(&(*c as f32).to_le_bytes());
        }
        for v in mesh.triangle(fi) {
            for c in v.iter() {
                out.extend_from_slice(&(*c as f32).to_le_bytes());
            }
        }
        out.extend_from_slice(&0u16.to_le_bytes());
    }
    out
}
