//! PLY reader/writer (ASCII and binary little-endian).
//!
//! Meshes are stored as the usual `vertex`/`face` elements. Point clouds are
//! stored as vertices with a `weight` scalar property (float32 in binary
//! files) and optional `nx ny nz` normals.

use std::io::Write;
use std::path::Path;

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};
use crate::geometry::{TriangleMesh, WeightedPointCloud};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PlyFormat {
    Ascii,
    BinaryLittleEndian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ScalarType {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl ScalarType {
    fn parse(tok: &str) -> Option<Self> {
        Some(match tok {
            "char" | "int8" => Self::I8,
            "uchar" | "uint8" => Self::U8,
            "short" | "int16" => Self::I16,
            "ushort" | "uint16" => Self::U16,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::I8 | Self::U8 => 1,
            Self::I16 | Self::U16 => 2,
            Self::I32 | Self::U32 | Self::F32 => 4,
            Self::F64 => 8,
        }
    }
}

#[derive(Debug, Clone)]
enum PropKind {
    Scalar(ScalarType),
    List { count: ScalarType, item: ScalarType },
}

#[derive(Debug, Clone)]
struct PropertyDef {
    name: String,
    kind: PropKind,
}

#[derive(Debug, Clone)]
struct ElementDef {
    name: String,
    count: usize,
    properties: Vec<PropertyDef>,
}

/// One parsed property value.
#[derive(Debug, Clone)]
enum Value {
    Scalar(f64),
    List(Vec<f64>),
}

/// Element data: per-property columns, row-major access by index.
struct ElementData {
    def: ElementDef,
    rows: Vec<Vec<Value>>,
}

impl ElementData {
    fn column(&self, name: &str) -> Option<usize> {
        self.def.properties.iter().position(|p| p.name == name)
    }

    fn scalar(&self, row: usize, col: usize) -> f64 {
        match &self.rows[row][col] {
            Value::Scalar(v) => *v,
            Value::List(_) => f64::NAN,
        }
    }
}

struct PlyFile {
    elements: Vec<ElementData>,
}

impl PlyFile {
    fn element(&self, name: &str) -> Option<&ElementData> {
        self.elements.iter().find(|e| e.def.name == name)
    }
}

fn parse_err(path: &Path, location: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        location: location.into(),
        message: message.into(),
    }
}

fn read_ply(path: &Path) -> Result<PlyFile> {
    let bytes = std::fs::read(path)?;
    // header is ASCII lines terminated by "end_header"
    let mut line_start = 0usize;
    let mut lines: Vec<(usize, String)> = Vec::new();
    let mut data_start = None;
    let mut line_no = 0usize;
    for (i, &b) in bytes.iter().enumerate() {
        if b == b'\n' {
            line_no += 1;
            let raw = &bytes[line_start..i];
            let text = String::from_utf8_lossy(raw).trim_end_matches('\r').trim().to_string();
            let done = text == "end_header";
            lines.push((line_no, text));
            line_start = i + 1;
            if done {
                data_start = Some(i + 1);
                break;
            }
        }
    }
    let data_start =
        data_start.ok_or_else(|| parse_err(path, "header", "missing end_header"))?;

    let mut it = lines.iter();
    match it.next() {
        Some((_, magic)) if magic == "ply" => {}
        _ => return Err(parse_err(path, "line 1", "not a PLY file (missing 'ply' magic)")),
    }
    let mut format = None;
    let mut elements: Vec<ElementDef> = Vec::new();
    for (ln, line) in it {
        let loc = format!("line {ln}");
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("format") => {
                format = Some(match parts.next() {
                    Some("ascii") => PlyFormat::Ascii,
                    Some("binary_little_endian") => PlyFormat::BinaryLittleEndian,
                    Some(other) => {
                        return Err(parse_err(path, loc, format!("unsupported format '{other}'")))
                    }
                    None => return Err(parse_err(path, loc, "missing format name")),
                });
            }
            Some("comment") | Some("obj_info") => {}
            Some("element") => {
                let name = parts
                    .next()
                    .ok_or_else(|| parse_err(path, loc.clone(), "element needs a name"))?;
                let count: usize = parts
                    .next()
                    .and_then(|t| t.parse().ok())
                    .ok_or_else(|| parse_err(path, loc.clone(), "element needs a count"))?;
                elements.push(ElementDef {
                    name: name.to_string(),
                    count,
                    properties: Vec::new(),
                });
            }
            Some("property") => {
                let elem = elements
                    .last_mut()
                    .ok_or_else(|| parse_err(path, loc.clone(), "property before any element"))?;
                let t1 = parts
                    .next()
                    .ok_or_else(|| parse_err(path, loc.clone(), "property needs a type"))?;
                if t1 == "list" {
                    let count_t = parts
                        .next()
                        .and_then(ScalarType::parse)
                        .ok_or_else(|| parse_err(path, loc.clone(), "bad list count type"))?;
                    let item_t = parts
                        .next()
                        .and_then(ScalarType::parse)
                        .ok_or_else(|| parse_err(path, loc.clone(), "bad list item type"))?;
                    let name = parts
                        .next()
                        .ok_or_else(|| parse_err(path, loc.clone(), "list property needs a name"))?;
                    elem.properties.push(PropertyDef {
                        name: name.to_string(),
                        kind: PropKind::List {
                            count: count_t,
                            item: item_t,
                        },
                    });
                } else {
                    let st = ScalarType::parse(t1)
                        .ok_or_else(|| parse_err(path, loc.clone(), format!("bad type '{t1}'")))?;
                    let name = parts
                        .next()
                        .ok_or_else(|| parse_err(path, loc.clone(), "property needs a name"))?;
                    elem.properties.push(PropertyDef {
                        name: name.to_string(),
                        kind: PropKind::Scalar(st),
                    });
                }
            }
            Some("end_header") => break,
            Some(other) => {
                return Err(parse_err(path, loc, format!("unknown header keyword '{other}'")))
            }
            None => {}
        }
    }
    let format = format.ok_or_else(|| parse_err(path, "header", "missing format line"))?;

    match format {
        PlyFormat::Ascii => read_ascii_body(path, &bytes[data_start..], elements),
        PlyFormat::BinaryLittleEndian => read_binary_body(path, &bytes[data_start..], elements),
    }
}

fn read_ascii_body(path: &Path, body: &[u8], elements: Vec<ElementDef>) -> Result<PlyFile> {
    let text = String::from_utf8_lossy(body);
    let mut tokens = text.split_whitespace();
    let mut out = Vec::new();
    for def in elements {
        let mut rows = Vec::with_capacity(def.count);
        for row in 0..def.count {
            let mut values = Vec::with_capacity(def.properties.len());
            for prop in &def.properties {
                let loc = format!("element {} row {row}", def.name);
                match &prop.kind {
                    PropKind::Scalar(_) => {
                        let tok = tokens
                            .next()
                            .ok_or_else(|| parse_err(path, loc.clone(), "unexpected end of data"))?;
                        let v: f64 = tok
                            .parse()
                            .map_err(|_| parse_err(path, loc.clone(), format!("bad value '{tok}'")))?;
                        values.push(Value::Scalar(v));
                    }
                    PropKind::List { .. } => {
                        let tok = tokens
                            .next()
                            .ok_or_else(|| parse_err(path, loc.clone(), "unexpected end of data"))?;
                        let n: usize = tok
                            .parse()
                            .map_err(|_| parse_err(path, loc.clone(), format!("bad list count '{tok}'")))?;
                        let mut list = Vec::with_capacity(n);
                        for _ in 0..n {
                            let tok = tokens.next().ok_or_else(|| {
                                parse_err(path, loc.clone(), "unexpected end of data")
                            })?;
                            list.push(tok.parse().map_err(|_| {
                                parse_err(path, loc.clone(), format!("bad list value '{tok}'"))
                            })?);
                        }
                        values.push(Value::List(list));
                    }
                }
            }
            rows.push(values);
        }
        out.push(ElementData { def, rows });
    }
    Ok(PlyFile { elements: out })
}

fn read_binary_body(path: &Path, body: &[u8], elements: Vec<ElementDef>) -> Result<PlyFile> {
    let mut off = 0usize;
    let read_scalar = |st: ScalarType, off: &mut usize| -> Result<f64> {
        let size = st.size();
        if *off + size > body.len() {
            return Err(parse_err(
                path,
                format!("offset {}", *off),
                "unexpected end of binary data",
            ));
        }
        let b = &body[*off..*off + size];
        *off += size;
        Ok(match st {
            ScalarType::I8 => b[0] as i8 as f64,
            ScalarType::U8 => b[0] as f64,
            ScalarType::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            ScalarType::I32 => i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::U32 => u32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F32 => f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
            ScalarType::F64 => f64::from_le_bytes([
                b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7],
            ]),
        })
    };

    let mut out = Vec::new();
    for def in elements {
        let mut rows = Vec::with_capacity(def.count);
        for _ in 0..def.count {
            let mut values = Vec::with_capacity(def.properties.len());
            for prop in &def.properties {
                match &prop.kind {
                    PropKind::Scalar(st) => values.push(Value::Scalar(read_scalar(*st, &mut off)?)),
                    PropKind::List { count, item } => {
                        let n = read_scalar(*count, &mut off)? as usize;
                        let mut list = Vec::with_capacity(n);
                        for _ in 0..n {
                            list.push(read_scalar(*item, &mut off)?);
                        }
                        values.push(Value::List(list));
                    }
                }
            }
            rows.push(values);
        }
        out.push(ElementData { def, rows });
    }
    Ok(PlyFile { elements: out })
}

/// Read a triangle mesh from a PLY file.
pub fn read_mesh_ply(path: &Path) -> Result<TriangleMesh> {
    let ply = read_ply(path)?;
    let vx = ply
        .element("vertex")
        .ok_or_else(|| parse_err(path, "header", "missing 'vertex' element"))?;
    let (cx, cy, cz) = vertex_xyz_columns(path, vx)?;
    let vertices: Vec<Point3<f64>> = (0..vx.def.count)
        .map(|i| Point3::new(vx.scalar(i, cx), vx.scalar(i, cy), vx.scalar(i, cz)))
        .collect();

    let fc = ply
        .element("face")
        .ok_or_else(|| parse_err(path, "header", "missing 'face' element"))?;
    let col = fc
        .column("vertex_indices")
        .or_else(|| fc.column("vertex_index"))
        .ok_or_else(|| parse_err(path, "header", "face element has no index list"))?;
    let mut faces = Vec::new();
    for (row, values) in fc.rows.iter().enumerate() {
        let list = match &values[col] {
            Value::List(l) => l,
            Value::Scalar(_) => {
                return Err(parse_err(path, format!("face {row}"), "expected index list"))
            }
        };
        if list.len() < 3 {
            return Err(parse_err(path, format!("face {row}"), "face needs 3+ indices"));
        }
        let idx: Vec<usize> = list.iter().map(|v| *v as usize).collect();
        for k in 1..idx.len() - 1 {
            faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    TriangleMesh::new(vertices, faces)
}

/// Read a weighted point cloud from a PLY file. Missing weights default to
/// uniform; weights are renormalized so they sum to one even after float32
/// rounding. Normals are picked up from `nx ny nz` when present.
pub fn read_cloud_ply(path: &Path) -> Result<WeightedPointCloud> {
    let ply = read_ply(path)?;
    let vx = ply
        .element("vertex")
        .ok_or_else(|| parse_err(path, "header", "missing 'vertex' element"))?;
    let (cx, cy, cz) = vertex_xyz_columns(path, vx)?;
    let n = vx.def.count;
    if n == 0 {
        return Err(parse_err(path, "header", "empty vertex element"));
    }
    let points: Vec<Point3<f64>> = (0..n)
        .map(|i| Point3::new(vx.scalar(i, cx), vx.scalar(i, cy), vx.scalar(i, cz)))
        .collect();
    let mut weights = match vx.column("weight") {
        Some(cw) => (0..n).map(|i| vx.scalar(i, cw)).collect::<Vec<_>>(),
        None => vec![1.0 / n as f64; n],
    };
    let sum: f64 = weights.iter().sum();
    if sum <= 0.0 {
        return Err(parse_err(path, "vertex data", "weights sum to zero"));
    }
    for w in &mut weights {
        *w /= sum;
    }
    let normals = match (vx.column("nx"), vx.column("ny"), vx.column("nz")) {
        (Some(a), Some(b), Some(c)) => Some(
            (0..n)
                .map(|i| {
                    let v = Vector3::new(vx.scalar(i, a), vx.scalar(i, b), vx.scalar(i, c));
                    let norm = v.norm();
                    if norm > 0.0 { v / norm } else { Vector3::z() }
                })
                .collect(),
        ),
        _ => None,
    };
    WeightedPointCloud::new(points, weights, normals)
}

fn vertex_xyz_columns(path: &Path, vx: &ElementData) -> Result<(usize, usize, usize)> {
    let cx = vx.column("x");
    let cy = vx.column("y");
    let cz = vx.column("z");
    match (cx, cy, cz) {
        (Some(a), Some(b), Some(c)) => Ok((a, b, c)),
        _ => Err(parse_err(path, "header", "vertex element lacks x/y/z")),
    }
}

/// Write a mesh as PLY.
pub fn write_mesh_ply(mesh: &TriangleMesh, path: &Path, format: PlyFormat) -> Result<()> {
    let mut out = Vec::new();
    write!(
        out,
        "ply\nformat {} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        format_name(format),
        mesh.vertex_count(),
        mesh.face_count()
    )?;
    match format {
        PlyFormat::Ascii => {
            for v in &mesh.vertices {
                writeln!(out, "{} {} {}", fmt(v.x), fmt(v.y), fmt(v.z))?;
            }
            for f in &mesh.faces {
                writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for v in &mesh.vertices {
                out.extend_from_slice(&v.x.to_le_bytes());
                out.extend_from_slice(&v.y.to_le_bytes());
                out.extend_from_slice(&v.z.to_le_bytes());
            }
            for f in &mesh.faces {
                out.push(3u8);
                for &i in f {
                    out.extend_from_slice(&(i as i32).to_le_bytes());
                }
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Write a weighted cloud as PLY with a per-vertex `weight` scalar (float32
/// little-endian in binary files) and optional normals.
pub fn write_cloud_ply(
    cloud: &WeightedPointCloud,
    path: &Path,
    format: PlyFormat,
) -> Result<()> {
    let mut out = Vec::new();
    let normal_props = if cloud.has_normals() {
        "property double nx\nproperty double ny\nproperty double nz\n"
    } else {
        ""
    };
    write!(
        out,
        "ply\nformat {} 1.0\nelement vertex {}\nproperty double x\nproperty double y\nproperty double z\n{}property float weight\nend_header\n",
        format_name(format),
        cloud.len(),
        normal_props,
    )?;
    let normals = cloud.normals();
    match format {
        PlyFormat::Ascii => {
            for i in 0..cloud.len() {
                let p = cloud.points()[i];
                write!(out, "{} {} {}", fmt(p.x), fmt(p.y), fmt(p.z))?;
                if let Some(ns) = normals {
                    write!(out, " {} {} {}", fmt(ns[i].x), fmt(ns[i].y), fmt(ns[i].z))?;
                }
                writeln!(out, " {}", fmt(cloud.weights()[i]))?;
            }
        }
        PlyFormat::BinaryLittleEndian => {
            for i in 0..cloud.len() {
                let p = cloud.points()[i];
                out.extend_from_slice(&p.x.to_le_bytes());
                out.extend_from_slice(&p.y.to_le_bytes());
                out.extend_from_slice(&p.z.to_le_bytes());
                if let Some(ns) = normals {
                    out.extend_from_slice(&ns[i].x.to_le_bytes());
                    out.extend_from_slice(&ns[i].y.to_le_bytes());
                    out.extend_from_slice(&ns[i].z.to_le_bytes());
                }
                out.extend_from_slice(&(cloud.weights()[i] as f32).to_le_bytes());
            }
        }
    }
    std::fs::write(path, out)?;
    Ok(())
}

fn format_name(f: PlyFormat) -> &'static str {
    match f {
        PlyFormat::Ascii => "ascii",
        PlyFormat::BinaryLittleEndian => "binary_little_endian",
    }
}

fn fmt(v: f64) -> String {
    // shortest representation that round-trips
    format!("{v}")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mesh_to_weighted_cloud, synth_shape, SynthShape};
    use approx::assert_relative_eq;

    fn cube_ascii() -> &'static str {
        "ply\nformat ascii 1.0\ncomment cube\nelement vertex 8\nproperty float x\nproperty float y\nproperty float z\nelement face 12\nproperty list uchar int vertex_indices\nend_header\n\
         0 0 0\n1 0 0\n1 1 0\n0 1 0\n0 0 1\n1 0 1\n1 1 1\n0 1 1\n\
         3 0 2 1\n3 0 3 2\n3 4 5 6\n3 4 6 7\n3 0 1 5\n3 0 5 4\n3 2 3 7\n3 2 7 6\n3 1 2 6\n3 1 6 5\n3 3 0 4\n3 3 4 7\n"
    }

    #[test]
    fn ascii_cube_reads() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cube.ply");
        std::fs::write(&path, cube_ascii()).unwrap();
        let mesh = read_mesh_ply(&path).unwrap();
        assert_eq!(mesh.vertex_count(), 8);
        assert_eq!(mesh.face_count(), 12);
        let cloud = mesh_to_weighted_cloud(&mesh).unwrap();
        assert_eq!(cloud.len(), 12);
        for w in cloud.weights() {
            assert_relative_eq!(*w, 1.0 / 12.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn mesh_round_trip_binary() {
        let mesh = synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0, 0.7, 0.5] }, 80).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        write_mesh_ply(&mesh, &path, PlyFormat::BinaryLittleEndian).unwrap();
        let back = read_mesh_ply(&path).unwrap();
        assert_eq!(back.vertex_count(), mesh.vertex_count());
        assert_eq!(back.face_count(), mesh.face_count());
        for (a, b) in mesh.vertices.iter().zip(back.vertices.iter()) {
            assert_relative_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn cloud_round_trip_both_formats() {
        let mesh = synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0; 3] }, 80).unwrap();
        let cloud = mesh_to_weighted_cloud(&mesh).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for format in [PlyFormat::Ascii, PlyFormat::BinaryLittleEndian] {
            let path = dir.path().join("c.ply");
            write_cloud_ply(&cloud, &path, format).unwrap();
            let back = read_cloud_ply(&path).unwrap();
            assert_eq!(back.len(), cloud.len());
            assert!(back.has_normals());
            let sum: f64 = back.weights().iter().sum();
            assert_relative_eq!(sum, 1.0, epsilon = 1e-12);
            for (a, b) in cloud.points().iter().zip(back.points().iter()) {
                assert_relative_eq!(a, b, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn truncated_binary_reports_offset() {
        let mesh = synth_shape(&SynthShape::Ellipsoid { semi_axes: [1.0; 3] }, 80).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ply");
        write_mesh_ply(&mesh, &path, PlyFormat::BinaryLittleEndian).unwrap();
        let bytes = std::fs::read(&path).unwrap();
        std::fs::write(&path, &bytes[..bytes.len() - 10]).unwrap();
        let err = read_mesh_ply(&path).unwrap_err();
        assert!(err.to_string().contains("offset"), "{err}");
    }
}
