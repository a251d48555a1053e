//! Chamfer-family discrepancy measures and local distance diagnostics.
//!
//! Gradients treat the nearest-neighbor assignment as piecewise constant
//! (standard subgradient with frozen argmin indices).

use nalgebra::{Point3, Vector3};

use super::nn::{nearest_neighbors, NearestResult};
use crate::error::{Error, Result};
use crate::geometry::WeightedPointCloud;

/// Symmetric mean of squared nearest-neighbor distances:
/// `(1/M) sum_i min_j |y_i - y'_j|^2 + (1/M') sum_j min_i |y_i - y'_j|^2`.
pub fn chamfer(a: &WeightedPointCloud, b: &WeightedPointCloud) -> Result<f64> {
    let fwd = nearest_neighbors(a.points(), b.points())?;
    let bwd = nearest_neighbors(b.points(), a.points())?;
    Ok(mean_sq(&fwd) + mean_sq(&bwd))
}

fn mean_sq(nn: &[NearestResult]) -> f64 {
    nn.iter().map(|r| r.squared_distance).sum::<f64>() / nn.len() as f64
}

/// Weight-aware Chamfer distance: `sum_i w_i min_j |.|^2 + sum_j w'_j min_i |.|^2`.
///
/// With normalized weights the per-cloud mean is already encoded in the
/// weights, so there is no additional `1/M` prefactor and the uniform-weight
/// case reduces exactly to [`chamfer`].
pub fn chamfer_weighted(a: &WeightedPointCloud, b: &WeightedPointCloud) -> Result<f64> {
    let fwd = nearest_neighbors(a.points(), b.points())?;
    let bwd = nearest_neighbors(b.points(), a.points())?;
    let f: f64 = fwd
        .iter()
        .zip(a.weights())
        .map(|(r, w)| w * r.squared_distance)
        .sum();
    let g: f64 = bwd
        .iter()
        .zip(b.weights())
        .map(|(r, w)| w * r.squared_distance)
        .sum();
    Ok(f + g)
}

/// Chamfer distance plus a penalty on the misalignment of normals at matched
/// pairs, scaled by `w_n`:
/// `CD + (w_n/2M) sum_i (1 - n_i . n_{c'_i})^2 + (w_n/2M') sum_j (1 - n_j . n_{c_j})^2`.
pub fn chamfer_normals(a: &WeightedPointCloud, b: &WeightedPointCloud, w_n: f64) -> Result<f64> {
    let (na, nb) = both_normals(a, b)?;
    let fwd = nearest_neighbors(a.points(), b.points())?;
    let bwd = nearest_neighbors(b.points(), a.points())?;
    let cd = mean_sq(&fwd) + mean_sq(&bwd);
    let pen_f: f64 = fwd
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = 1.0 - na[i].dot(&nb[r.index]);
            d * d
        })
        .sum::<f64>()
        / (2.0 * a.len() as f64);
    let pen_b: f64 = bwd
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let d = 1.0 - nb[j].dot(&na[r.index]);
            d * d
        })
        .sum::<f64>()
        / (2.0 * b.len() as f64);
    Ok(cd + w_n * (pen_f + pen_b))
}

/// Point-to-plane Chamfer distance: residuals to the Euclidean nearest
/// neighbor are projected onto the querying point's own normal, so tangential
/// sliding along the local surface plane is free.
pub fn chamfer_point_to_plane(a: &WeightedPointCloud, b: &WeightedPointCloud) -> Result<f64> {
    let (na, nb) = both_normals(a, b)?;
    let fwd = nearest_neighbors(a.points(), b.points())?;
    let bwd = nearest_neighbors(b.points(), a.points())?;
    let f: f64 = fwd
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let resid = (a.points()[i] - b.points()[r.index]).dot(&na[i]);
            resid * resid
        })
        .sum::<f64>()
        / a.len() as f64;
    let g: f64 = bwd
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let resid = (a.points()[r.index] - b.points()[j]).dot(&nb[j]);
            resid * resid
        })
        .sum::<f64>()
        / b.len() as f64;
    Ok(f + g)
}

/// Weighted point-to-plane Chamfer distance, analogous to
/// [`chamfer_weighted`].
pub fn chamfer_point_to_plane_weighted(
    a: &WeightedPointCloud,
    b: &WeightedPointCloud,
) -> Result<f64> {
    let (na, nb) = both_normals(a, b)?;
    let fwd = nearest_neighbors(a.points(), b.points())?;
    let bwd = nearest_neighbors(b.points(), a.points())?;
    let f: f64 = fwd
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let resid = (a.points()[i] - b.points()[r.index]).dot(&na[i]);
            a.weights()[i] * resid * resid
        })
        .sum();
    let g: f64 = bwd
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let resid = (a.points()[r.index] - b.points()[j]).dot(&nb[j]);
            b.weights()[j] * resid * resid
        })
        .sum();
    Ok(f + g)
}

fn both_normals<'a>(
    a: &'a WeightedPointCloud,
    b: &'a WeightedPointCloud,
) -> Result<(&'a [Vector3<f64>], &'a [Vector3<f64>])> {
    match (a.normals(), b.normals()) {
        (Some(na), Some(nb)) => Ok((na, nb)),
        _ => Err(Error::invalid(
            "normal-aware measure requires normals on both clouds",
        )),
    }
}

/// Forward and backward local distances: Euclidean (not squared) distance of
/// each point to the closest point of the other cloud. `fld[j]` is measured
/// from `mapped` into `target`, `bld[j]` the other way around.
pub fn local_distances(
    mapped: &WeightedPointCloud,
    target: &WeightedPointCloud,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let fwd = nearest_neighbors(mapped.points(), target.points())?;
    let bwd = nearest_neighbors(target.points(), mapped.points())?;
    Ok((
        fwd.iter().map(|r| r.squared_distance.sqrt()).collect(),
        bwd.iter().map(|r| r.squared_distance.sqrt()).collect(),
    ))
}

/// Mean and max of a local-distance vector.
pub fn summary(values: &[f64]) -> (f64, f64) {
    let mean = values.iter().sum::<f64>() / values.len().max(1) as f64;
    let max = values.iter().fold(0.0f64, |a, &b| a.max(b));
    (mean, max)
}

/// Discrepancy value plus its subgradient with respect to the first cloud's
/// positions, holding the second cloud fixed.
#[derive(Debug, Clone)]
pub struct ValueGrad {
    pub value: f64,
    pub grad: Vec<Vector3<f64>>,
    /// Per first-cloud-point squared nearest distance (the forward half of
    /// CD from that side), when the measure decomposes per point.
    pub forward_pointwise: Option<Vec<f64>>,
    /// Per second-cloud-point squared nearest distance into the first cloud.
    pub backward_pointwise: Option<Vec<f64>>,
}

/// Chamfer value and subgradient w.r.t. the first cloud's points.
pub fn chamfer_grad(
    points: &[Point3<f64>],
    target: &WeightedPointCloud,
) -> Result<ValueGrad> {
    let fwd = nearest_neighbors(points, target.points())?;
    let bwd = nearest_neighbors(target.points(), points)?;
    let m = points.len() as f64;
    let mp = target.len() as f64;
    let mut grad = vec![Vector3::zeros(); points.len()];
    for (i, r) in fwd.iter().enumerate() {
        grad[i] += (points[i] - target.points()[r.index]) * (2.0 / m);
    }
    for (j, r) in bwd.iter().enumerate() {
        grad[r.index] += (points[r.index] - target.points()[j]) * (2.0 / mp);
    }
    Ok(ValueGrad {
        value: mean_sq(&fwd) + mean_sq(&bwd),
        grad,
        forward_pointwise: Some(fwd.iter().map(|r| r.squared_distance).collect()),
        backward_pointwise: Some(bwd.iter().map(|r| r.squared_distance).collect()),
    })
}

/// Weighted-chamfer value and subgradient w.r.t. the first cloud's points.
pub fn chamfer_weighted_grad(
    points: &[Point3<f64>],
    weights: &[f64],
    target: &WeightedPointCloud,
) -> Result<ValueGrad> {
    let fwd = nearest_neighbors(points, target.points())?;
    let bwd = nearest_neighbors(target.points(), points)?;
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); points.len()];
    for (i, r) in fwd.iter().enumerate() {
        value += weights[i] * r.squared_distance;
        grad[i] += (points[i] - target.points()[r.index]) * (2.0 * weights[i]);
    }
    for (j, r) in bwd.iter().enumerate() {
        value += target.weights()[j] * r.squared_distance;
        grad[r.index] += (points[r.index] - target.points()[j]) * (2.0 * target.weights()[j]);
    }
    Ok(ValueGrad {
        value,
        grad,
        forward_pointwise: Some(fwd.iter().map(|r| r.squared_distance).collect()),
        backward_pointwise: Some(bwd.iter().map(|r| r.squared_distance).collect()),
    })
}

/// Normals-penalized chamfer and subgradient w.r.t. the first cloud's points.
/// The carried normals are treated as constants, so the penalty term shifts
/// the value but injects no position gradient beyond the frozen-argmin CD
/// part.
pub fn chamfer_normals_grad(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    target: &WeightedPointCloud,
    w_n: f64,
) -> Result<ValueGrad> {
    let tn = target
        .normals()
        .ok_or_else(|| Error::invalid("normal-aware measure requires normals on both clouds"))?;
    let mut out = chamfer_grad(points, target)?;
    let fwd = nearest_neighbors(points, target.points())?;
    let bwd = nearest_neighbors(target.points(), points)?;
    let pen_f: f64 = fwd
        .iter()
        .enumerate()
        .map(|(i, r)| {
            let d = 1.0 - normals[i].dot(&tn[r.index]);
            d * d
        })
        .sum::<f64>()
        / (2.0 * points.len() as f64);
    let pen_b: f64 = bwd
        .iter()
        .enumerate()
        .map(|(j, r)| {
            let d = 1.0 - tn[j].dot(&normals[r.index]);
            d * d
        })
        .sum::<f64>()
        / (2.0 * target.len() as f64);
    out.value += w_n * (pen_f + pen_b);
    Ok(out)
}

/// Point-to-plane chamfer (optionally weight-aware) and subgradient w.r.t.
/// the first cloud's points, with the carried normals as constants.
pub fn chamfer_point_to_plane_grad(
    points: &[Point3<f64>],
    normals: &[Vector3<f64>],
    weights: Option<&[f64]>,
    target: &WeightedPointCloud,
) -> Result<ValueGrad> {
    let tn = target
        .normals()
        .ok_or_else(|| Error::invalid("normal-aware measure requires normals on both clouds"))?;
    let fwd = nearest_neighbors(points, target.points())?;
    let bwd = nearest_neighbors(target.points(), points)?;
    let m = points.len() as f64;
    let mp = target.len() as f64;
    let mut value = 0.0;
    let mut grad = vec![Vector3::zeros(); points.len()];
    for (i, r) in fwd.iter().enumerate() {
        let w = weights.map_or(1.0 / m, |w| w[i]);
        let resid = (points[i] - target.points()[r.index]).dot(&normals[i]);
        value += w * resid * resid;
        grad[i] += normals[i] * (2.0 * w * resid);
    }
    for (j, r) in bwd.iter().enumerate() {
        let w = weights.map_or(1.0 / mp, |_| target.weights()[j]);
        let resid = (points[r.index] - target.points()[j]).dot(&tn[j]);
        value += w * resid * resid;
        grad[r.index] += tn[j] * (2.0 * w * resid);
    }
    Ok(ValueGrad {
        value,
        grad,
        forward_pointwise: Some(fwd.iter().map(|r| r.squared_distance).collect()),
        backward_pointwise: Some(bwd.iter().map(|r| r.squared_distance).collect()),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::WeightedPointCloud;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(points: Vec<Point3<f64>>) -> WeightedPointCloud {
        WeightedPointCloud::uniform(points, None).unwrap()
    }

    fn cloud_n(points: Vec<Point3<f64>>, normals: Vec<Vector3<f64>>) -> WeightedPointCloud {
        WeightedPointCloud::uniform(points, Some(normals)).unwrap()
    }

    fn random_cloud(rng: &mut ChaCha8Rng, n: usize) -> WeightedPointCloud {
        cloud(
            (0..n)
                .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect(),
        )
    }

    #[test]
    fn chamfer_identity_is_zero() {
        let a = cloud(vec![Point3::new(0.1, 0.2, 0.3), Point3::new(1.0, -1.0, 0.0)]);
        assert_eq!(chamfer(&a, &a).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_hand_computed() {
        let a = cloud(vec![Point3::new(0.0, 0.0, 0.0)]);
        let b = cloud(vec![Point3::new(1.0, 0.0, 0.0)]);
        assert_relative_eq!(chamfer(&a, &b).unwrap(), 2.0, epsilon = 1e-15);

        let a = cloud(vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)]);
        let b = cloud(vec![Point3::new(0.0, 0.0, 0.0)]);
        assert_relative_eq!(chamfer(&a, &b).unwrap(), 0.5, epsilon = 1e-15);
    }

    #[test]
    fn chamfer_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..30 {
            let a = { let n = rng.gen_range(1..40); random_cloud(&mut rng, n) };
            let b = { let n = rng.gen_range(1..40); random_cloud(&mut rng, n) };
            assert_eq!(chamfer(&a, &b).unwrap(), chamfer(&b, &a).unwrap());
        }
    }

    #[test]
    fn weighted_reduces_to_chamfer_for_uniform_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..30 {
            let a = { let n = rng.gen_range(1..200); random_cloud(&mut rng, n) };
            let b = { let n = rng.gen_range(1..200); random_cloud(&mut rng, n) };
            let cd = chamfer(&a, &b).unwrap();
            let cdw = chamfer_weighted(&a, &b).unwrap();
            assert_relative_eq!(cd, cdw, epsilon = 1e-12, max_relative = 1e-12);
        }
    }

    #[test]
    fn weighted_hand_computed() {
        let a = WeightedPointCloud::new(vec![Point3::new(0.0, 0.0, 0.0)], vec![1.0], None).unwrap();
        let b = WeightedPointCloud::new(
            vec![Point3::new(1.0, 0.0, 0.0), Point3::new(3.0, 0.0, 0.0)],
            vec![0.75, 0.25],
            None,
        )
        .unwrap();
        // forward: 1 * 1; backward: 0.75 * 1 + 0.25 * 9 = 3
        assert_relative_eq!(chamfer_weighted(&a, &b).unwrap(), 4.0, epsilon = 1e-15);
    }

    #[test]
    fn normals_penalty_hand_computed() {
        let a = cloud_n(vec![Point3::origin()], vec![Vector3::new(0.0, 0.0, 1.0)]);
        let b = cloud_n(vec![Point3::origin()], vec![Vector3::new(0.0, 0.0, -1.0)]);
        let v = chamfer_normals(&a, &b, 1e-2).unwrap();
        assert_relative_eq!(v, 0.04, epsilon = 1e-15);
        // zero weight degenerates to plain chamfer
        assert_relative_eq!(chamfer_normals(&a, &b, 0.0).unwrap(), 0.0, epsilon = 1e-15);
    }

    #[test]
    fn point_to_plane_tangential_offsets_free() {
        let n = Vector3::new(0.0, 0.0, 1.0);
        let a = cloud_n(vec![Point3::new(0.0, 0.0, 0.0)], vec![n]);
        let b = cloud_n(vec![Point3::new(1.0, 0.0, 0.0)], vec![n]);
        assert_relative_eq!(chamfer_point_to_plane(&a, &b).unwrap(), 0.0, epsilon = 1e-15);

        let n = Vector3::new(1.0, 0.0, 0.0);
        let a = cloud_n(vec![Point3::new(0.0, 0.0, 0.0)], vec![n]);
        let b = cloud_n(vec![Point3::new(1.0, 0.0, 0.0)], vec![n]);
        assert_relative_eq!(chamfer_point_to_plane(&a, &b).unwrap(), 2.0, epsilon = 1e-15);
    }

    #[test]
    fn missing_normals_is_an_error() {
        let a = cloud(vec![Point3::origin()]);
        let b = cloud(vec![Point3::origin()]);
        assert!(chamfer_normals(&a, &b, 1e-2).is_err());
        assert!(chamfer_point_to_plane(&a, &b).is_err());
    }

    #[test]
    fn local_distances_three_four_five() {
        let a = cloud(vec![Point3::new(0.0, 0.0, 0.0)]);
        let b = cloud(vec![Point3::new(0.0, 3.0, 4.0)]);
        let (fld, bld) = local_distances(&a, &b).unwrap();
        assert_relative_eq!(fld[0], 5.0, epsilon = 1e-15);
        assert_relative_eq!(bld[0], 5.0, epsilon = 1e-15);
    }

    /// Central finite differences on random clouds validate the frozen-argmin
    /// gradient contract.
    #[test]
    fn chamfer_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let h = 1e-6;
        for _ in 0..10 {
            let target = random_cloud(&mut rng, 12);
            let points: Vec<Point3<f64>> = (0..9)
                .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
                .collect();
            let vg = chamfer_grad(&points, &target).unwrap();
            for i in 0..points.len() {
                for axis in 0..3 {
                    let mut plus = points.clone();
                    let mut minus = points.clone();
                    plus[i][axis] += h;
                    minus[i][axis] -= h;
                    let vp = chamfer_grad(&plus, &target).unwrap().value;
                    let vm = chamfer_grad(&minus, &target).unwrap().value;
                    let fd = (vp - vm) / (2.0 * h);
                    let an = vg.grad[i][axis];
                    let denom = an.abs().max(fd.abs()).max(1e-3);
                    assert!(
                        ((fd - an) / denom).abs() < 1e-6,
                        "point {i} axis {axis}: fd {fd} vs analytic {an}"
                    );
                }
            }
        }
    }
}
