//! Weighted point clouds and the unit-cube embedding.

use nalgebra::{Point3, Vector3};
use ndarray::Array2;
use rand::Rng;

use super::mesh::{bounding_box, TriangleMesh};
use crate::error::{Error, Result};

/// Fraction of the total area below which a face is treated as degenerate and
/// dropped when building a cloud from a mesh.
const DEGENERATE_AREA_FRACTION: f64 = 1e-14;

/// A shape represented as points with normalized area weights and optional
/// outward unit normals.
#[derive(Debug, Clone)]
pub struct WeightedPointCloud {
    points: Vec<Point3<f64>>,
    weights: Vec<f64>,
    normals: Option<Vec<Vector3<f64>>>,
}

impl WeightedPointCloud {
    /// Build a cloud, validating the type invariants: weights non-negative
    /// and summing to one within 1e-9, normals (when present) unit length
    /// within 1e-6 and matching the point count.
    pub fn new(
        points: Vec<Point3<f64>>,
        weights: Vec<f64>,
        normals: Option<Vec<Vector3<f64>>>,
    ) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::invalid("point cloud is empty"));
        }
        if weights.len() != points.len() {
            return Err(Error::invalid(format!(
                "weight count {} does not match point count {}",
                weights.len(),
                points.len()
            )));
        }
        if weights.iter().any(|w| *w < 0.0 || !w.is_finite()) {
            return Err(Error::invalid("weights must be finite and non-negative"));
        }
        let sum: f64 = weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!(
                "weights sum to {sum}, expected 1 within 1e-9"
            )));
        }
        if let Some(ns) = &normals {
            if ns.len() != points.len() {
                return Err(Error::invalid(format!(
                    "normal count {} does not match point count {}",
                    ns.len(),
                    points.len()
                )));
            }
            for (i, n) in ns.iter().enumerate() {
                if (n.norm() - 1.0).abs() > 1e-6 {
                    return Err(Error::invalid(format!(
                        "normal {i} has norm {}, expected 1 within 1e-6",
                        n.norm()
                    )));
                }
            }
        }
        Ok(Self {
            points,
            weights,
            normals,
        })
    }

    /// Cloud with uniform weights `1/M`.
    pub fn uniform(points: Vec<Point3<f64>>, normals: Option<Vec<Vector3<f64>>>) -> Result<Self> {
        let m = points.len();
        if m == 0 {
            return Err(Error::invalid("point cloud is empty"));
        }
        let w = 1.0 / m as f64;
        Self::new(points, vec![w; m], normals)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3<f64>] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn normals(&self) -> Option<&[Vector3<f64>]> {
        self.normals.as_deref()
    }

    pub fn has_normals(&self) -> bool {
        self.normals.is_some()
    }

    /// Points as an `M x 3` array for batched numerics.
    pub fn points_matrix(&self) -> Array2<f64> {
        let mut a = Array2::zeros((self.points.len(), 3));
        for (i, p) in self.points.iter().enumerate() {
            a[[i, 0]] = p.x;
            a[[i, 1]] = p.y;
            a[[i, 2]] = p.z;
        }
        a
    }

    /// Rebuild a cloud from an `M x 3` state array, keeping weights (and
    /// normals, when `keep_normals` is set) of `self`.
    pub fn with_points_matrix(&self, m: &Array2<f64>, keep_normals: bool) -> Result<Self> {
        if m.nrows() != self.len() || m.ncols() != 3 {
            return Err(Error::invalid("state array shape does not match cloud"));
        }
        let points = m
            .rows()
            .into_iter()
            .map(|r| Point3::new(r[0], r[1], r[2]))
            .collect();
        Self::new(
            points,
            self.weights.clone(),
            if keep_normals { self.normals.clone() } else { None },
        )
    }

    /// Extract the sub-cloud at `indices`, renormalizing weights to sum to
    /// one so the invariants keep holding for sub-clouds.
    pub fn select(&self, indices: &[usize]) -> Result<Self> {
        if indices.iter().any(|&i| i >= self.len()) {
            return Err(Error::invalid("selection index out of range"));
        }
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let mut weights: Vec<f64> = indices.iter().map(|&i| self.weights[i]).collect();
        let sum: f64 = weights.iter().sum();
        if sum <= 0.0 {
            // all-zero selection: fall back to uniform
            let w = 1.0 / indices.len() as f64;
            weights = vec![w; indices.len()];
        } else {
            for w in &mut weights {
                *w /= sum;
            }
        }
        let normals = self
            .normals
            .as_ref()
            .map(|ns| indices.iter().map(|&i| ns[i]).collect());
        Self::new(points, weights, normals)
    }

    /// Largest pairwise distance in the cloud.
    pub fn diameter(&self) -> f64 {
        let mut best = 0.0f64;
        for i in 0..self.points.len() {
            for j in (i + 1)..self.points.len() {
                let d = (self.points[i] - self.points[j]).norm();
                best = best.max(d);
            }
        }
        best
    }

    /// Barycenter (unweighted mean of positions).
    pub fn barycenter(&self) -> Point3<f64> {
        let mut s = Vector3::zeros();
        for p in &self.points {
            s += p.coords;
        }
        Point3::from(s / self.points.len() as f64)
    }
}

/// One point per mesh face at its centroid; the weight is the normalized face
/// area and the normal follows the vertex winding. Faces with area below
/// `1e-14` of the total are dropped with a warning.
pub fn mesh_to_weighted_cloud(mesh: &TriangleMesh) -> Result<WeightedPointCloud> {
    if mesh.face_count() == 0 {
        return Err(Error::invalid("mesh has no faces"));
    }
    let total: f64 = mesh.total_area();
    if total <= 0.0 {
        return Err(Error::invalid("all mesh faces are degenerate (zero total area)"));
    }
    let mut points = Vec::with_capacity(mesh.face_count());
    let mut weights = Vec::with_capacity(mesh.face_count());
    let mut normals = Vec::with_capacity(mesh.face_count());
    let mut dropped = 0usize;
    for f in 0..mesh.face_count() {
        let (area, normal) = mesh.face_area_normal(f);
        if area < DEGENERATE_AREA_FRACTION * total {
            dropped += 1;
            continue;
        }
        points.push(mesh.face_centroid(f));
        weights.push(area);
        normals.push(normal);
    }
    if dropped > 0 {
        log::warn!("dropped {dropped} degenerate faces while building point cloud");
    }
    if points.is_empty() {
        return Err(Error::invalid("all mesh faces are degenerate (zero total area)"));
    }
    let kept_total: f64 = weights.iter().sum();
    for w in &mut weights {
        *w /= kept_total;
    }
    WeightedPointCloud::new(points, weights, Some(normals))
}

/// Affine map embedding geometry into the unit cube: `y = x * scale + offset`
/// componentwise.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct UnitCubeTransform {
    pub scale: [f64; 3],
    pub offset: [f64; 3],
}

impl UnitCubeTransform {
    pub fn identity() -> Self {
        Self {
            scale: [1.0; 3],
            offset: [0.0; 3],
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            p.x * self.scale[0] + self.offset[0],
            p.y * self.scale[1] + self.offset[1],
            p.z * self.scale[2] + self.offset[2],
        )
    }

    pub fn invert(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::new(
            (p.x - self.offset[0]) / self.scale[0],
            (p.y - self.offset[1]) / self.scale[1],
            (p.z - self.offset[2]) / self.scale[2],
        )
    }

    /// Transform a whole cloud. Normals are mapped by the inverse-transpose
    /// of the (diagonal) linear part and renormalized, so anisotropic scaling
    /// keeps them perpendicular to the surface.
    pub fn apply_cloud(&self, cloud: &WeightedPointCloud) -> Result<WeightedPointCloud> {
        let points = cloud.points().iter().map(|p| self.apply(p)).collect();
        let normals = cloud.normals().map(|ns| {
            ns.iter()
                .map(|n| {
                    let m = Vector3::new(
                        n.x / self.scale[0],
                        n.y / self.scale[1],
                        n.z / self.scale[2],
                    );
                    let norm = m.norm();
                    if norm > 0.0 { m / norm } else { *n }
                })
                .collect()
        });
        WeightedPointCloud::new(points, cloud.weights().to_vec(), normals)
    }

    /// Undo the transform on a whole cloud.
    pub fn invert_cloud(&self, cloud: &WeightedPointCloud) -> Result<WeightedPointCloud> {
        let points = cloud.points().iter().map(|p| self.invert(p)).collect();
        let normals = cloud.normals().map(|ns| {
            ns.iter()
                .map(|n| {
                    let m = Vector3::new(
                        n.x * self.scale[0],
                        n.y * self.scale[1],
                        n.z * self.scale[2],
                    );
                    let norm = m.norm();
                    if norm > 0.0 { m / norm } else { *n }
                })
                .collect()
        });
        WeightedPointCloud::new(points, cloud.weights().to_vec(), normals)
    }

    /// Rescale a distance expressed in unit-cube coordinates back to physical
    /// units along the least-distorted axis assumption: distances are mapped
    /// with the inverse mean scale. Exact only for isotropic transforms; for
    /// anisotropic ones callers should transform points and re-measure.
    pub fn mean_physical_factor(&self) -> f64 {
        3.0 / (self.scale[0] + self.scale[1] + self.scale[2])
    }
}

/// Map the joint axis-aligned bounding box of `clouds` onto `[0, 1]^3`,
/// applying the same transform to every cloud so the cohort shares one
/// coordinate system.
pub fn normalize_to_unit_cube(
    clouds: &[WeightedPointCloud],
) -> Result<(Vec<WeightedPointCloud>, UnitCubeTransform)> {
    if clouds.is_empty() {
        return Err(Error::invalid("no clouds to normalize"));
    }
    let (lo, hi) = bounding_box(
        clouds
            .iter()
            .flat_map(|c| c.points().iter().copied()),
    )
    .ok_or_else(|| Error::invalid("no points to normalize"))?;
    let extent = hi - lo;
    let max_extent = extent.iter().fold(0.0f64, |a, &b| a.max(b));
    let mut scale = [0.0; 3];
    let mut offset = [0.0; 3];
    for k in 0..3 {
        if extent[k] <= 1e-12 * max_extent.max(1e-300) || extent[k] == 0.0 {
            return Err(Error::invalid(format!(
                "degenerate extent {} on axis {k}",
                extent[k]
            )));
        }
        scale[k] = 1.0 / extent[k];
        offset[k] = -lo[k] * scale[k];
    }
    let t = UnitCubeTransform { scale, offset };
    let out = clouds
        .iter()
        .map(|c| t.apply_cloud(c))
        .collect::<Result<Vec<_>>>()?;
    Ok((out, t))
}

/// Draw `m` distinct indices uniformly without replacement (partial
/// Fisher-Yates), deterministic given the generator state.
pub fn subsample(cloud: &WeightedPointCloud, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    sample_without_replacement(cloud.len(), m, rng)
}

/// `m` distinct indices from `0..n`, uniform without replacement.
pub fn sample_without_replacement(n: usize, m: usize, rng: &mut impl Rng) -> Result<Vec<usize>> {
    if m > n {
        return Err(Error::invalid(format!(
            "cannot sample {m} points from a cloud of {n}"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n);
        idx.swap(i, j);
    }
    idx.truncate(m);
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::mesh::TriangleMesh;
    use approx::assert_relative_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn single_triangle_cloud() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2]],
        )
        .unwrap();
        let c = mesh_to_weighted_cloud(&m).unwrap();
        assert_eq!(c.len(), 1);
        assert_relative_eq!(c.points()[0], Point3::new(1.0 / 3.0, 1.0 / 3.0, 0.0), epsilon = 1e-15);
        assert_relative_eq!(c.weights()[0], 1.0, epsilon = 1e-15);
        assert_relative_eq!(c.normals().unwrap()[0], Vector3::new(0.0, 0.0, 1.0), epsilon = 1e-15);
    }

    #[test]
    fn congruent_triangles_half_weight() {
        let m = TriangleMesh::new(
            vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
                Point3::new(1.0, 1.0, 0.0),
            ],
            vec![[0, 1, 2], [1, 3, 2]],
        )
        .unwrap();
        let c = mesh_to_weighted_cloud(&m).unwrap();
        assert_relative_eq!(c.weights()[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(c.weights()[1], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn cloud_invariants_hold_for_random_meshes() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let nv = rng.gen_range(3..30);
            let vertices: Vec<Point3<f64>> = (0..nv)
                .map(|_| Point3::new(rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()))
                .collect();
            let nf = rng.gen_range(1..40);
            let mut faces = Vec::new();
            for _ in 0..nf {
                let a = rng.gen_range(0..nv);
                let mut b = rng.gen_range(0..nv);
                while b == a {
                    b = rng.gen_range(0..nv);
                }
                let mut c = rng.gen_range(0..nv);
                while c == a || c == b {
                    c = rng.gen_range(0..nv);
                }
                faces.push([a, b, c]);
            }
            if nv < 3 {
                continue;
            }
            let mesh = TriangleMesh::new(vertices, faces).unwrap();
            if mesh.total_area() <= 0.0 {
                continue;
            }
            let cloud = mesh_to_weighted_cloud(&mesh).unwrap();
            let sum: f64 = cloud.weights().iter().sum();
            assert!((sum - 1.0).abs() < 1e-9);
            assert!(cloud.weights().iter().all(|w| *w >= 0.0));
            for n in cloud.normals().unwrap() {
                assert!((n.norm() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn normalize_joint_box() {
        let c = WeightedPointCloud::uniform(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(2.0, 4.0, 1.0)],
            None,
        )
        .unwrap();
        let (_, t) = normalize_to_unit_cube(std::slice::from_ref(&c)).unwrap();
        assert_relative_eq!(t.scale[0], 0.5, epsilon = 1e-15);
        assert_relative_eq!(t.scale[1], 0.25, epsilon = 1e-15);
        assert_relative_eq!(t.scale[2], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn normalize_identity_when_already_unit() {
        let c = WeightedPointCloud::uniform(
            vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0)],
            None,
        )
        .unwrap();
        let (_, t) = normalize_to_unit_cube(std::slice::from_ref(&c)).unwrap();
        assert_eq!(t, UnitCubeTransform::identity());
    }

    #[test]
    fn normalize_rejects_flat_box() {
        let c = WeightedPointCloud::uniform(vec![Point3::new(1.0, 2.0, 3.0); 4], None).unwrap();
        let err = normalize_to_unit_cube(std::slice::from_ref(&c)).unwrap_err();
        assert!(err.to_string().contains("degenerate extent"));
    }

    #[test]
    fn transform_round_trip() {
        let t = UnitCubeTransform {
            scale: [0.5, 0.25, 3.0],
            offset: [0.1, -0.7, 2.0],
        };
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let p = Point3::new(
                rng.gen::<f64>() * 10.0 - 5.0,
                rng.gen::<f64>() * 10.0 - 5.0,
                rng.gen::<f64>() * 10.0 - 5.0,
            );
            let q = t.invert(&t.apply(&p));
            assert_relative_eq!(p, q, epsilon = 1e-12);
        }
    }

    #[test]
    fn subsample_is_deterministic_and_distinct() {
        let cloud = WeightedPointCloud::uniform(
            (0..100).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            None,
        )
        .unwrap();
        let a = subsample(&cloud, 40, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        let b = subsample(&cloud, 40, &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
        assert_eq!(a, b);
        let mut seen = a.clone();
        seen.sort_unstable();
        seen.dedup();
        assert_eq!(seen.len(), 40);
    }

    #[test]
    fn subsample_full_is_permutation() {
        let cloud = WeightedPointCloud::uniform(
            (0..10).map(|i| Point3::new(i as f64, 0.0, 0.0)).collect(),
            None,
        )
        .unwrap();
        let mut idx = subsample(&cloud, 10, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
        idx.sort_unstable();
        assert_eq!(idx, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn subsample_too_many_errors() {
        let cloud = WeightedPointCloud::uniform(vec![Point3::origin(); 3], None).unwrap();
        assert!(subsample(&cloud, 4, &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }
}
