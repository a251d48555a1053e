//! ASCII Wavefront OBJ reader (vertices and faces only).

use std::path::Path;

use nalgebra::Point3;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

/// Parse an ASCII OBJ file into a triangle mesh. Polygonal faces are fan
/// triangulated; vertex indices may be negative (relative). Texture/normal
/// references after `/` are ignored.
pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    let text = std::fs::read_to_string(path)?;
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut faces: Vec<[usize; 3]> = Vec::new();
    let display = path.display().to_string();
    let parse_err = |line_no: usize, msg: String| Error::Parse {
        path: display.clone(),
        location: format!("line {line_no}"),
        message: msg,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let mut coords = [0.0f64; 3];
                for c in &mut coords {
                    let tok = parts
                        .next()
                        .ok_or_else(|| parse_err(line_no, "vertex needs 3 coordinates".into()))?;
                    *c = tok
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad coordinate '{tok}'")))?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idxs = Vec::new();
                for tok in parts {
                    let first = tok.split('/').next().unwrap_or("");
                    let v: i64 = first
                        .parse()
                        .map_err(|_| parse_err(line_no, format!("bad face index '{tok}'")))?;
                    let resolved = if v > 0 {
                        (v - 1) as usize
                    } else if v < 0 {
                        let n = vertices.len() as i64 + v;
                        if n < 0 {
                            return Err(parse_err(line_no, format!("index {v} out of range")));
                        }
                        n as usize
                    } else {
                        return Err(parse_err(line_no, "face index 0 is invalid".into()));
                    };
                    if resolved >= vertices.len() {
                        return Err(parse_err(
                            line_no,
                            format!(
                                "index {} out of range (have {} vertices)",
                                v,
                                vertices.len()
                            ),
                        ));
                    }
                    idxs.push(resolved);
                }
                if idxs.len() < 3 {
                    return Err(parse_err(line_no, "face needs at least 3 vertices".into()));
                }
                for k in 1..idxs.len() - 1 {
                    faces.push([idxs[0], idxs[k], idxs[k + 1]]);
                }
            }
            _ => {} // normals, texcoords, groups, materials: ignored
        }
    }
    TriangleMesh::new(vertices, faces)
}
