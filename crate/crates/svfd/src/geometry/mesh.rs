//! Triangle surface meshes.

use nalgebra::{Point3, Vector3};

use crate::error::{Error, Result};

/// A triangulated surface: vertex positions plus vertex-index triples.
#[derive(Debug, Clone)]
pub struct TriangleMesh {
    pub vertices: Vec<Point3<f64>>,
    pub faces: Vec<[usize; 3]>,
}

impl TriangleMesh {
    /// Build a mesh, validating that all face indices are in range and that
    /// no face repeats a vertex index.
    pub fn new(vertices: Vec<Point3<f64>>, faces: Vec<[usize; 3]>) -> Result<Self> {
        let n = vertices.len();
        for (fi, f) in faces.iter().enumerate() {
            for &v in f {
                if v >= n {
                    return Err(Error::invalid(format!(
                        "face {fi}: index {v} out of range (mesh has {n} vertices)"
                    )));
                }
            }
            if f[0] == f[1] || f[1] == f[2] || f[0] == f[2] {
                return Err(Error::invalid(format!(
                    "face {fi}: repeated vertex index {:?}",
                    f
                )));
            }
        }
        Ok(Self { vertices, faces })
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn face_count(&self) -> usize {
        self.faces.len()
    }

    /// Centroid of face `f`.
    pub fn face_centroid(&self, f: usize) -> Point3<f64> {
        let [a, b, c] = self.faces[f];
        let s = self.vertices[a].coords + self.vertices[b].coords + self.vertices[c].coords;
        Point3::from(s / 3.0)
    }

    /// Area and unit normal of face `f`; the normal follows the vertex
    /// winding (counter-clockwise seen from outside). Degenerate faces get a
    /// zero normal.
    pub fn face_area_normal(&self, f: usize) -> (f64, Vector3<f64>) {
        let [a, b, c] = self.faces[f];
        let e1 = self.vertices[b] - self.vertices[a];
        let e2 = self.vertices[c] - self.vertices[a];
        let cross = e1.cross(&e2);
        let norm = cross.norm();
        let area = 0.5 * norm;
        if norm > 0.0 {
            (area, cross / norm)
        } else {
            (0.0, Vector3::zeros())
        }
    }

    pub fn total_area(&self) -> f64 {
        (0..self.faces.len())
            .map(|f| self.face_area_normal(f).0)
            .sum()
    }

    /// Axis-aligned bounding box as (min, max) corners.
    pub fn bounding_box(&self) -> Option<(Point3<f64>, Point3<f64>)> {
        bounding_box(self.vertices.iter().map(|p| *p))
    }
}

/// Bounding box of a point sequence.
pub fn bounding_box(points: impl IntoIterator<Item = Point3<f64>>) -> Option<(Point3<f64>, Point3<f64>)> {
    let mut it = points.into_iter();
    let first = it.next()?;
    let (mut lo, mut hi) = (first, first);
    for p in it {
        for k in 0..3 {
            lo[k] = lo[k].min(p[k]);
            hi[k] = hi[k].max(p[k]);
        }
    }
    Some((lo, hi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn tri() -> TriangleMesh {
        TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap()
    }

    #[test]
    fn face_normal_follows_winding() {
        let m = tri();
        let (area, n) = m.face_area_normal(0);
        assert_relative_eq!(area, 0.5, epsilon = 1e-15);
        assert_relative_eq!(n, Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn out_of_range_index_rejected() {
        let err = TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 99]]).unwrap_err();
        assert!(err.to_string().contains("out of range"));
    }

    #[test]
    fn repeated_index_rejected() {
        assert!(TriangleMesh::new(vec![Point3::origin(); 3], vec![[0, 1, 1]]).is_err());
    }

    #[test]
    fn normals_invariant_under_uniform_scaling() {
        let m = tri();
        let scaled = TriangleMesh::new(
            m.vertices.iter().map(|p| Point3::from(p.coords * 7.5)).collect(),
            m.faces.clone(),
        )
        .unwrap();
        let (_, n0) = m.face_area_normal(0);
        let (_, n1) = scaled.face_area_normal(0);
        assert_relative_eq!(n0, n1, epsilon = 1e-12);
        assert_relative_eq!(n1.norm(), 1.0, epsilon = 1e-12);
    }
}
