//! Thin-plate-spline deformation fitted to point correspondences.
//!
//! The map is a pure radial-basis span `g(x) = sum_j g_j k(|x - x_j|)` with
//! kernel `k(r) = r^2 log r` (`k(0) = 0` by continuous extension). Fitting
//! minimizes the squared correspondence residuals plus `w_H` times the
//! squared Frobenius norms of the Hessian of `g` at the centers; both terms
//! are quadratic in the coefficients and solved as one regularized
//! least-squares system per output coordinate.

use nalgebra::{DMatrix, DVector, Matrix3, Point3, Vector3};

use super::correspond::CorrespondenceSet;
use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

/// A fitted thin-plate-spline map.
#[derive(Debug, Clone)]
pub struct TpsMap {
    pub centers: Vec<Point3<f64>>,
    pub coefficients: Vec<Vector3<f64>>,
    pub smoothing: f64,
}

fn kernel(r: f64) -> f64 {
    if r > 0.0 {
        r * r * r.ln()
    } else {
        0.0
    }
}

/// Hessian of `x -> k(|x - center|)` evaluated at displacement `d`:
/// `(2/r^2) d d^T + (2 ln r + 1) I` for `r > 0`. The self-term (`r = 0`) is
/// taken as zero, matching the kernel's continuous extension (the raw limit
/// diverges, so the center's own contribution is excluded from the penalty).
fn kernel_hessian(d: &Vector3<f64>) -> Matrix3<f64> {
    let r2 = d.norm_squared();
    if r2 <= 0.0 {
        return Matrix3::zeros();
    }
    let r = r2.sqrt();
    (2.0 / r2) * (d * d.transpose()) + Matrix3::identity() * (2.0 * r.ln() + 1.0)
}

/// Fit the map sending `corr.source` to `corr.target` with bending penalty
/// `w_h`. Errors on duplicate centers; rank-deficient systems are reported
/// with a condition estimate.
pub fn tps_fit(corr: &CorrespondenceSet, w_h: f64) -> Result<TpsMap> {
    let centers = &corr.source;
    let n = centers.len();
    if n < 4 {
        return Err(Error::invalid("thin-plate fit needs at least 4 centers"));
    }
    if w_h < 0.0 {
        return Err(Error::invalid("smoothing weight must be non-negative"));
    }
    for i in 0..n {
        for j in (i + 1)..n {
            if (centers[i] - centers[j]).norm_squared() == 0.0 {
                return Err(Error::invalid(format!(
                    "duplicate centers at indices {i} and {j}"
                )));
            }
        }
    }

    let mut k = DMatrix::<f64>::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            k[(i, j)] = kernel((centers[i] - centers[j]).norm());
        }
    }

    // system matrix: K for pure interpolation, K^T K + w_H P for the
    // penalized least squares (K is symmetric)
    let system = if w_h == 0.0 {
        k.clone()
    } else {
        // stack the per-center Hessian operators: row block j holds the 9
        // Hessian entries of center l's kernel at x_j
        let mut t = DMatrix::<f64>::zeros(9 * n, n);
        for j in 0..n {
            for l in 0..n {
                if l == j {
                    continue;
                }
                let h = kernel_hessian(&(centers[j] - centers[l]));
                for r in 0..3 {
                    for c in 0..3 {
                        t[(9 * j + 3 * r + c, l)] = h[(r, c)];
                    }
                }
            }
        }
        let penalty = t.transpose() * &t;
        &k * &k + penalty * w_h
    };

    let mut coefficients = vec![Vector3::zeros(); n];
    let decomposition = system.clone().cholesky();
    for axis in 0..3 {
        let rhs_values = DVector::from_iterator(n, corr.target.iter().map(|p| p[axis]));
        let rhs = if w_h == 0.0 {
            rhs_values
        } else {
            &k * rhs_values
        };
        let solution = match &decomposition {
            Some(chol) => chol.solve(&rhs),
            None => {
                // K itself is symmetric indefinite; fall back to LU before
                // declaring the system rank-deficient
                match system.clone().lu().solve(&rhs) {
                    Some(s) => s,
                    None => {
                        let svd = nalgebra::SVD::new(system.clone(), false, false);
                        let max = svd.singular_values.max();
                        let min = svd.singular_values.min();
                        return Err(Error::numerical(format!(
                            "thin-plate system is rank-deficient (condition estimate {:.3e})",
                            max / min.max(f64::MIN_POSITIVE)
                        )));
                    }
                }
            }
        };
        for (i, c) in coefficients.iter_mut().enumerate() {
            c[axis] = solution[i];
        }
    }
    Ok(TpsMap {
        centers: centers.clone(),
        coefficients,
        smoothing: w_h,
    })
}

/// Evaluate the radial-basis span at each point.
pub fn tps_apply(map: &TpsMap, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
    points
        .iter()
        .map(|p| {
            let mut out = Vector3::zeros();
            for (center, coeff) in map.centers.iter().zip(&map.coefficients) {
                out += coeff * kernel((p - center).norm());
            }
            Point3::from(out)
        })
        .collect()
}

/// Deform every vertex of a mesh through the map, keeping the faces.
pub fn tps_apply_mesh(map: &TpsMap, mesh: &TriangleMesh) -> Result<TriangleMesh> {
    let vertices = tps_apply(map, &mesh.vertices);
    TriangleMesh::new(vertices, mesh.faces.clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_corr(rng: &mut ChaCha8Rng, n: usize) -> CorrespondenceSet {
        let source: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        let target: Vec<Point3<f64>> = (0..n)
            .map(|_| Point3::new(rng.gen(), rng.gen(), rng.gen()))
            .collect();
        CorrespondenceSet {
            source,
            target,
            portions: vec!["p".to_string(); n],
        }
    }

    fn max_residual(map: &TpsMap, corr: &CorrespondenceSet) -> f64 {
        let mapped = tps_apply(map, &corr.source);
        mapped
            .iter()
            .zip(&corr.target)
            .map(|(m, t)| (m - t).norm())
            .fold(0.0, f64::max)
    }

    #[test]
    fn interpolates_exactly_without_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let corr = random_corr(&mut rng, 20);
        let map = tps_fit(&corr, 0.0).unwrap();
        assert!(
            max_residual(&map, &corr) < 1e-8,
            "residual {}",
            max_residual(&map, &corr)
        );
    }

    #[test]
    fn identity_correspondences_reproduced() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut corr = random_corr(&mut rng, 15);
        corr.target = corr.source.clone();
        let map = tps_fit(&corr, 0.0).unwrap();
        assert!(max_residual(&map, &corr) < 1e-8);
    }

    #[test]
    fn residual_monotone_in_smoothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let corr = random_corr(&mut rng, 24);
        let mut prev = -1.0;
        for w_h in [0.0, 1e-6, 1e-4, 1e-2] {
            let map = tps_fit(&corr, w_h).unwrap();
            let mean: f64 = {
                let mapped = tps_apply(&map, &corr.source);
                mapped
                    .iter()
                    .zip(&corr.target)
                    .map(|(m, t)| (m - t).norm())
                    .sum::<f64>()
                    / corr.len() as f64
            };
            assert!(
                mean >= prev - 1e-10,
                "residual decreased: {prev} -> {mean} at w_h {w_h}"
            );
            prev = mean;
        }
    }

    #[test]
    fn span_is_linear_in_coefficients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let corr = random_corr(&mut rng, 10);
        let map = tps_fit(&corr, 0.0).unwrap();
        let doubled = TpsMap {
            centers: map.centers.clone(),
            coefficients: map.coefficients.iter().map(|c| c * 2.0).collect(),
            smoothing: 0.0,
        };
        let probe = vec![Point3::new(0.4, 0.2, 0.9)];
        let a = tps_apply(&map, &probe)[0];
        let b = tps_apply(&doubled, &probe)[0];
        approx::assert_relative_eq!(b.coords, a.coords * 2.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_coefficients_give_zero_output() {
        let map = TpsMap {
            centers: vec![Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0)],
            coefficients: vec![Vector3::zeros(); 2],
            smoothing: 0.0,
        };
        let out = tps_apply(&map, &[Point3::new(0.3, 0.4, 0.5)]);
        assert_eq!(out[0], Point3::origin());
    }

    #[test]
    fn duplicate_centers_rejected() {
        let corr = CorrespondenceSet {
            source: vec![
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(0.0, 0.0, 0.0),
                Point3::new(1.0, 0.0, 0.0),
                Point3::new(0.0, 1.0, 0.0),
            ],
            target: vec![Point3::origin(); 4],
            portions: vec!["p".to_string(); 4],
        };
        let err = tps_fit(&corr, 0.0).unwrap_err();
        assert!(err.to_string().contains("duplicate centers"));
    }

    #[test]
    fn kernel_vanishes_at_origin() {
        assert_eq!(kernel(0.0), 0.0);
        assert!((kernel(1.0)).abs() < 1e-15); // 1^2 ln 1 = 0
    }
}
