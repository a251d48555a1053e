//! Scaled-Jacobian mesh quality gate for generated shapes.

use crate::geometry::TriangleMesh;

/// Per-mesh quality summary. The gate passes when every face has a strictly
/// positive scaled Jacobian and the bottom-decile average exceeds 0.1.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct QualityReport {
    pub min_scaled_jacobian: f64,
    pub bottom_decile_mean: f64,
    pub pass: bool,
}

/// Scaled Jacobian of a triangle: the cross-product magnitude of two edges
/// (twice the area) divided by the product of the two longest edge lengths.
pub fn scaled_jacobian(mesh: &TriangleMesh, face: usize) -> f64 {
    let [a, b, c] = mesh.faces[face];
    let e1 = mesh.vertices[b] - mesh.vertices[a];
    let e2 = mesh.vertices[c] - mesh.vertices[a];
    let e3 = mesh.vertices[c] - mesh.vertices[b];
    let cross = e1.cross(&e2).norm();
    let mut lengths = [e1.norm(), e2.norm(), e3.norm()];
    lengths.sort_by(|x, y| x.partial_cmp(y).unwrap());
    let denom = lengths[1] * lengths[2];
    if denom > 0.0 {
        cross / denom
    } else {
        0.0
    }
}

/// Evaluate the quality gate over all faces.
pub fn mesh_quality(mesh: &TriangleMesh) -> QualityReport {
    let values: Vec<f64> = (0..mesh.face_count())
        .map(|f| scaled_jacobian(mesh, f))
        .collect();
    if values.is_empty() {
        return QualityReport {
            min_scaled_jacobian: 0.0,
            bottom_decile_mean: 0.0,
            pass: false,
        };
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let mut sorted = values;
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let decile = (sorted.len() / 10).max(1);
    let bottom_decile_mean = sorted[..decile].iter().sum::<f64>() / decile as f64;
    QualityReport {
        min_scaled_jacobian: min,
        bottom_decile_mean,
        pass: min > 0.0 && bottom_decile_mean > 0.1,
    }
}
