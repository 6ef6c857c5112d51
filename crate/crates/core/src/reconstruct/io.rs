use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use super::ReconstructError;
use crate::model::TriMesh;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    /// Binary STL, f32 coordinates.
    Stl,
    /// Wavefront OBJ, shortest round-trip decimal f64.
    Obj,
    /// Binary little-endian PLY, f64 vertices, u32 indices.
    Ply,
}

impl MeshFormat {
    pub fn extension(self) -> &'static str {
        match self {
            Self::Stl => "stl",
            Self::Obj => "obj",
            Self::Ply => "ply",
        }
    }

    pub fn from_name(name: &str) -> Result<Self, ReconstructError> {
        match name.to_ascii_lowercase().as_str() {
            "stl" => Ok(Self::Stl),
            "obj" => Ok(Self::Obj),
            "ply" => Ok(Self::Ply),
            other => Err(ReconstructError::UnknownFormat(other.to_string())),
        }
    }

    pub fn from_path(path: &Path) -> Result<Self, ReconstructError> {
        Self::from_name(path.extension().and_then(|e| e.to_str()).unwrap_or(""))
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReconstructError + '_ {
    move |source| ReconstructError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

fn encode(m: &TriMesh, format: MeshFormat) -> Vec<u8> {
    let mut out = Vec::new();
    match format {
        MeshFormat::Stl => {
            out.extend_from_slice(&[0u8; 80]);
            out.extend_from_slice(&(m.triangles().len() as u32).to_le_bytes());
            for t in 0..m.triangles().len() {
                let [a, b, c] = m.corners(t);
                let u = [b[0] - a[0], b[1] - a[1], b[2] - a[2]];
                let v = [c[0] - a[0], c[1] - a[1], c[2] - a[2]];
                let n = [u[1] * v[2] - u[2] * v[1], u[2] * v[0] - u[0] * v[2], u[0] * v[1] - u[1] * v[0]];
                let len = (n[0] * n[0] + n[1] * n[1] + n[2] * n[2]).sqrt();
                let n = if len > 0.0 { n.map(|x| x / len) } else { [0.0; 3] };
                for p in [n, a, b, c] {
                    for x in p {
                        out.extend_from_slice(&(x as f32).to_le_bytes());
                    }
                }
                out.extend_from_slice(&[0, 0]);
            }
        }
        MeshFormat::Obj => {
            let mut s = String::new();
            for v in m.vertices() {
                s.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
            }
            for t in m.triangles() {
                s.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
            }
            out = s.into_bytes();
        }
        MeshFormat::Ply => {
            let header = format!(
                "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar uint vertex_indices\nend_header\n",
                m.vertices().len(),
                m.triangles().len()
            );
            out.extend_from_slice(header.as_bytes());
            for v in m.vertices() {
                for x in v {
                    out.extend_from_slice(&x.to_le_bytes());
                }
            }
            for t in m.triangles() {
                out.push(3);
                for i in t {
                    out.extend_from_slice(&i.to_le_bytes());
                }
            }
        }
    }
    out
}

pub fn export_mesh(m: &TriMesh, format: MeshFormat, path: &Path) -> Result<(), ReconstructError> {
    if m.is_empty() {
        return Err(ReconstructError::EmptyMesh);
    }
    let file = fs::File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode(m, format)).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos + n)?;
        self.pos += n;
        Some(s)
    }

    fn array<const N: usize>(&mut self) -> Option<[u8; N]> {
        self.take(N).map(|s| s.try_into().expect("length checked"))
    }
}

fn decode_stl(bytes: &[u8]) -> Result<TriMesh, String> {
    let mut r = Reader { bytes, pos: 80 };
    let n = u32::from_le_bytes(r.array().ok_or("truncated header")?) as usize;
    if bytes.len() != 84 + 50 * n {
        return Err(format!("expected {} bytes for {n} triangles, found {}", 84 + 50 * n, bytes.len()));
    }
    let mut index: std::collections::HashMap<[u32; 3], u32> = std::collections::HashMap::new();
    let (mut verts, mut tris) = (Vec::new(), Vec::with_capacity(n));
    for _ in 0..n {
        r.take(12);
        let mut tri = [0u32; 3];
        for slot in &mut tri {
            let p: [u32; 3] = std::array::from_fn(|_| u32::from_le_bytes(r.array().expect("size checked")));
            *slot = *index.entry(p).or_insert_with(|| {
                verts.push(p.map(|b| f32::from_bits(b) as f64));
                (verts.len() - 1) as u32
            });
        }
        r.take(2);
        tris.push(tri);
    }
    TriMesh::new(verts, tris).map_err(|e| e.to_string())
}

fn decode_obj(bytes: &[u8]) -> Result<TriMesh, String> {
    let text = std::str::from_utf8(bytes).map_err(|e| e.to_string())?;
    let (mut verts, mut tris) = (Vec::new(), Vec::new());
    for (no, line) in text.lines().enumerate() {
        let mut it = line.split_whitespace();
        let bad = |what: &str| format!("line {}: {what}", no + 1);
        match it.next() {
            Some("v") => {
                let v: Vec<f64> = it.map(str::parse).collect::<Result<_, _>>().map_err(|_| bad("bad vertex"))?;
                if v.len() < 3 {
                    return Err(bad("vertex needs 3 coordinates"));
                }
                verts.push([v[0], v[1], v[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = it
                    .map(|t| t.split('/').next().unwrap_or("").parse::<u32>())
                    .collect::<Result<_, _>>()
                    .map_err(|_| bad("bad face"))?;
                if idx.len() != 3 || idx.contains(&0) {
                    return Err(bad("only 1-based triangles are supported"));
                }
                tris.push([idx[0] - 1, idx[1] - 1, idx[2] - 1]);
            }
            _ => {}
        }
    }
    TriMesh::new(verts, tris).map_err(|e| e.to_string())
}

fn decode_ply(bytes: &[u8]) -> Result<TriMesh, String> {
    let end = b"end_header\n";
    let hdr_len = bytes
        .windows(end.len())
        .position(|w| w == end)
        .ok_or("missing end_header")?
        + end.len();
    let header = std::str::from_utf8(&bytes[..hdr_len]).map_err(|e| e.to_string())?;
    let expected_props = [
        "property double x",
        "property double y",
        "property double z",
        "property list uchar uint vertex_indices",
    ];
    if !header.contains("format binary_little_endian 1.0") || expected_props.iter().any(|p| !header.contains(p)) {
        return Err("only the layout written by export_mesh is supported".into());
    }
    let count = |name: &str| -> Result<usize, String> {
        header
            .lines()
            .find_map(|l| l.strip_prefix(&format!("element {name} ")))
            .ok_or(format!("missing element {name}"))?
            .trim()
            .parse()
            .map_err(|_| format!("bad {name} count"))
    };
    let (nv, nf) = (count("vertex")?, count("face")?);
    let mut r = Reader { bytes, pos: hdr_len };
    let truncated = || "truncated body".to_string();
    let mut verts = Vec::with_capacity(nv);
    for _ in 0..nv {
        let mut p = [0.0; 3];
        for x in &mut p {
            *x = f64::from_le_bytes(r.array().ok_or_else(truncated)?);
        }
        verts.push(p);
    }
    let mut tris = Vec::with_capacity(nf);
    for _ in 0..nf {
        if r.take(1).ok_or_else(truncated)? != [3] {
            return Err("only triangle faces are supported".into());
        }
        let mut t = [0u32; 3];
        for i in &mut t {
            *i = u32::from_le_bytes(r.array().ok_or_else(truncated)?);
        }
        tris.push(t);
    }
    TriMesh::new(verts, tris).map_err(|e| e.to_string())
}

pub fn import_mesh(path: &Path, format: MeshFormat) -> Result<TriMesh, ReconstructError> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    let decoded = match format {
        MeshFormat::Stl => decode_stl(&bytes),
        MeshFormat::Obj => decode_obj(&bytes),
        MeshFormat::Ply => decode_ply(&bytes),
    };
    decoded.map_err(|reason| ReconstructError::MalformedFile {
        path: path.to_path_buf(),
        reason,
    })
}
