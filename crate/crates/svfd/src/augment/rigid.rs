//! Rigid pre-alignment: the three-step ad-hoc procedure and rigid coherent
//! point drift.

use nalgebra::{Matrix3, Point3, Vector3};

use crate::distances::chamfer;
use crate::error::{Error, Result};
use crate::geometry::WeightedPointCloud;

/// Similarity transform `x -> s R x + t` with a proper rotation.
#[derive(Debug, Clone, Copy)]
pub struct RigidTransform {
    pub rotation: Matrix3<f64>,
    pub translation: Vector3<f64>,
    pub scale: f64,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
            scale: 1.0,
        }
    }

    pub fn apply(&self, p: &Point3<f64>) -> Point3<f64> {
        Point3::from(self.scale * (self.rotation * p.coords) + self.translation)
    }

    pub fn apply_vector(&self, v: &Vector3<f64>) -> Vector3<f64> {
        self.rotation * v
    }

    pub fn apply_points(&self, points: &[Point3<f64>]) -> Vec<Point3<f64>> {
        points.iter().map(|p| self.apply(p)).collect()
    }

    pub fn apply_cloud(&self, cloud: &WeightedPointCloud) -> Result<WeightedPointCloud> {
        let points = self.apply_points(cloud.points());
        let normals = cloud
            .normals()
            .map(|ns| ns.iter().map(|n| self.rotation * n).collect());
        WeightedPointCloud::new(points, cloud.weights().to_vec(), normals)
    }

    /// `outer` after `self`: the transform mapping `x` to
    /// `outer(self(x))`.
    pub fn then(&self, outer: &RigidTransform) -> Self {
        Self {
            rotation: outer.rotation * self.rotation,
            translation: outer.scale * (outer.rotation * self.translation) + outer.translation,
            scale: outer.scale * self.scale,
        }
    }

    /// Check orthonormality, orientation, and positive scale.
    pub fn validate(&self) -> Result<()> {
        let rtr = self.rotation.transpose() * self.rotation;
        let err = (rtr - Matrix3::identity()).norm();
        if err > 1e-9 {
            return Err(Error::numerical(format!(
                "rotation is not orthonormal (|R^T R - I| = {err})"
            )));
        }
        if self.rotation.determinant() < 0.0 {
            return Err(Error::numerical("rotation is a reflection"));
        }
        if self.scale <= 0.0 {
            return Err(Error::invalid("scale must be positive"));
        }
        Ok(())
    }

    fn translation_by(delta: Vector3<f64>) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: delta,
            scale: 1.0,
        }
    }

    /// Isotropic scaling about a fixed point.
    fn scaling_about(center: Point3<f64>, s: f64) -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: center.coords * (1.0 - s),
            scale: s,
        }
    }

    /// Rotation by `angle` around `axis` through `pivot`.
    fn rotation_about(pivot: Point3<f64>, axis: Vector3<f64>, angle: f64) -> Self {
        let r = rotation_matrix(axis, angle);
        Self {
            rotation: r,
            translation: pivot.coords - r * pivot.coords,
            scale: 1.0,
        }
    }
}

/// Rodrigues rotation matrix for a unit axis.
pub fn rotation_matrix(axis: Vector3<f64>, angle: f64) -> Matrix3<f64> {
    let a = axis.normalize();
    let k = Matrix3::new(0.0, -a.z, a.y, a.z, 0.0, -a.x, -a.y, a.x, 0.0);
    Matrix3::identity() + k * angle.sin() + k * k * (1.0 - angle.cos())
}

/// Inlet center and outlet normal anchoring the ad-hoc alignment.
#[derive(Debug, Clone, Copy)]
pub struct RigidAnchors {
    pub inlet_center: Point3<f64>,
    pub outlet_normal: Vector3<f64>,
}

/// Three-step alignment of `source` onto `target`: barycenter translation
/// plus diameter-matching isotropic rescale, inlet-center translation, then
/// rotation about the target outlet normal through the inlet center by the
/// chamfer-minimizing angle (360-sample grid, golden-section refined to 1e-4
/// rad).
pub fn adhoc_rigid_align(
    source: &WeightedPointCloud,
    target: &WeightedPointCloud,
    source_anchors: &RigidAnchors,
    target_anchors: &RigidAnchors,
) -> Result<RigidTransform> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("cannot align empty clouds"));
    }
    let src_diam = source.diameter();
    let tgt_diam = target.diameter();
    if src_diam <= 0.0 || tgt_diam <= 0.0 {
        return Err(Error::invalid("cannot align clouds with zero extent"));
    }

    // 1. barycenter translation + diameter-matching rescale
    let shift = target.barycenter() - source.barycenter();
    let step1 = RigidTransform::translation_by(shift)
        .then(&RigidTransform::scaling_about(target.barycenter(), tgt_diam / src_diam));

    // 2. inlet centers coincide
    let moved_inlet = step1.apply(&source_anchors.inlet_center);
    let step2 = step1.then(&RigidTransform::translation_by(
        target_anchors.inlet_center - moved_inlet,
    ));

    // 3. rotation around the outlet normal through the inlet center
    let axis = target_anchors.outlet_normal;
    if axis.norm() <= 0.0 {
        return Err(Error::invalid("outlet normal must be non-zero"));
    }
    let pivot = target_anchors.inlet_center;
    let staged = step2.apply_cloud(source)?;
    let score = |angle: f64| -> Result<f64> {
        let rot = RigidTransform::rotation_about(pivot, axis, angle);
        chamfer(&rot.apply_cloud(&staged)?, target)
    };

    let samples = 360;
    let mut best_angle = 0.0;
    let mut best_value = f64::INFINITY;
    for i in 0..samples {
        let angle = 2.0 * std::f64::consts::PI * i as f64 / samples as f64;
        let v = score(angle)?;
        if v < best_value {
            best_value = v;
            best_angle = angle;
        }
    }
    // refine well past the 1e-4 rad requirement so exact alignments come
    // back as the identity to within 1e-6 in position
    let width = 2.0 * std::f64::consts::PI / samples as f64;
    let angle = golden_section(best_angle - width, best_angle + width, 1e-8, |a| score(a))?;

    let aligned = step2.then(&RigidTransform::rotation_about(pivot, axis, angle));
    aligned.validate()?;
    Ok(aligned)
}

fn golden_section(
    mut lo: f64,
    mut hi: f64,
    tol: f64,
    mut f: impl FnMut(f64) -> Result<f64>,
) -> Result<f64> {
    let phi = (5.0f64.sqrt() - 1.0) / 2.0;
    let mut c = hi - phi * (hi - lo);
    let mut d = lo + phi * (hi - lo);
    let mut fc = f(c)?;
    let mut fd = f(d)?;
    while (hi - lo).abs() > tol {
        if fc < fd {
            hi = d;
            d = c;
            fd = fc;
            c = hi - phi * (hi - lo);
            fc = f(c)?;
        } else {
            lo = c;
            c = d;
            fc = fd;
            d = lo + phi * (hi - lo);
            fd = f(d)?;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Result of a coherent-point-drift run, with the `sigma^2` trace for
/// convergence diagnostics.
#[derive(Debug, Clone)]
pub struct CpdOutput {
    pub transform: RigidTransform,
    pub sigma2_trace: Vec<f64>,
    pub iterations: usize,
}

const CPD_MAX_ITERS: usize = 150;
const CPD_CONVERGENCE: f64 = 1e-10;
const CPD_COLLAPSE: f64 = 1e-12;

/// Rigid coherent point drift: EM over an isotropic Gaussian mixture with a
/// uniform outlier component of weight `outlier_w`, refining `init`.
/// Converges when the `sigma^2` change drops below 1e-10; errors when the
/// variance collapses without converging.
pub fn cpd_rigid(
    source: &WeightedPointCloud,
    target: &WeightedPointCloud,
    init: &RigidTransform,
    outlier_w: f64,
) -> Result<CpdOutput> {
    if source.is_empty() || target.is_empty() {
        return Err(Error::invalid("cannot register empty clouds"));
    }
    if !(0.0..1.0).contains(&outlier_w) {
        return Err(Error::invalid("outlier weight must lie in [0, 1)"));
    }
    let y0 = init.apply_points(source.points());
    let x = target.points();
    let m = y0.len();
    let n = x.len();

    let mut scale = 1.0f64;
    let mut rot = Matrix3::<f64>::identity();
    let mut trans = Vector3::<f64>::zeros();
    let mut sigma2 = {
        let mut acc = 0.0;
        for xn in x {
            for ym in &y0 {
                acc += (xn - ym).norm_squared();
            }
        }
        acc / (3 * m * n) as f64
    };
    if sigma2 <= 0.0 {
        // identical singleton clouds; nothing to estimate
        return Ok(CpdOutput {
            transform: *init,
            sigma2_trace: vec![0.0],
            iterations: 0,
        });
    }

    let mut trace = Vec::new();
    let mut iterations = 0;
    for iter in 0..CPD_MAX_ITERS {
        iterations = iter + 1;
        // E-step: soft assignments with the uniform outlier term
        let transformed: Vec<Point3<f64>> = y0
            .iter()
            .map(|p| Point3::from(scale * (rot * p.coords) + trans))
            .collect();
        let c = (2.0 * std::f64::consts::PI * sigma2).powf(1.5) * outlier_w
            / (1.0 - outlier_w)
            * m as f64
            / n as f64;
        // p[m] holds row sums over n; accumulate the moments directly
        let mut np = 0.0f64;
        let mut mu_x = Vector3::zeros();
        let mut mu_y = Vector3::zeros();
        let mut weights_col = vec![0.0f64; n]; // sum over m of p_mn per target point
        let mut weights_row = vec![0.0f64; m];
        let mut probs = vec![0.0f64; m];
        for (j, xn) in x.iter().enumerate() {
            let mut denom = c;
            for (i, ym) in transformed.iter().enumerate() {
                let e = (-(xn - ym).norm_squared() / (2.0 * sigma2)).exp();
                probs[i] = e;
                denom += e;
            }
            if denom <= 0.0 {
                continue;
            }
            for i in 0..m {
                let p = probs[i] / denom;
                if p > 0.0 {
                    np += p;
                    weights_col[j] += p;
                    weights_row[i] += p;
                    mu_x += x[j].coords * p;
                    mu_y += y0[i].coords * p;
                }
            }
        }
        if np <= 0.0 {
            return Err(Error::numerical("cpd assignments vanished"));
        }
        mu_x /= np;
        mu_y /= np;

        // M-step: closed-form similarity update via the weighted
        // cross-covariance
        let mut a = Matrix3::<f64>::zeros();
        for (j, xn) in x.iter().enumerate() {
            if weights_col[j] == 0.0 {
                continue;
            }
            // recompute the row of assignments for the cross terms
            let mut denom = c;
            let mut row = vec![0.0f64; m];
            for (i, ym) in transformed.iter().enumerate() {
                let e = (-(xn - ym).norm_squared() / (2.0 * sigma2)).exp();
                row[i] = e;
                denom += e;
            }
            let xc = xn.coords - mu_x;
            for i in 0..m {
                let p = row[i] / denom;
                if p > 0.0 {
                    let yc = y0[i].coords - mu_y;
                    a += p * xc * yc.transpose();
                }
            }
        }
        let svd = nalgebra::SVD::new(a, true, true);
        let (u, vt) = (svd.u.unwrap(), svd.v_t.unwrap());
        let det = (u * vt).determinant();
        let cmat = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, det.signum()));
        rot = u * cmat * vt;

        let mut y_sq = 0.0;
        for i in 0..m {
            y_sq += weights_row[i] * (y0[i].coords - mu_y).norm_squared();
        }
        let trace_ar = (a.transpose() * rot).trace();
        if y_sq <= 0.0 {
            return Err(Error::numerical("cpd source variance collapsed"));
        }
        scale = trace_ar / y_sq;
        if scale <= 0.0 {
            return Err(Error::numerical("cpd produced a non-positive scale"));
        }
        trans = mu_x - scale * (rot * mu_y);

        let mut x_sq = 0.0;
        for j in 0..n {
            x_sq += weights_col[j] * (x[j].coords - mu_x).norm_squared();
        }
        let sigma2_new = ((x_sq - scale * trace_ar) / (3.0 * np)).max(0.0);
        trace.push(sigma2_new);
        let delta = (sigma2 - sigma2_new).abs();
        sigma2 = sigma2_new.max(f64::MIN_POSITIVE);
        if delta < CPD_CONVERGENCE {
            break;
        }
        if sigma2_new < CPD_COLLAPSE {
            // an exact noise-free fit drives the variance to zero, which is
            // success; the degenerate failure mode collapses the scale too
            if scale > 1e-6 {
                break;
            }
            return Err(Error::numerical(format!(
                "cpd variance collapsed to {sigma2_new} with scale {scale} (degenerate fit)"
            )));
        }
    }

    let refined = RigidTransform {
        rotation: rot,
        translation: trans,
        scale,
    };
    refined.validate()?;
    Ok(CpdOutput {
        transform: init.then(&refined),
        sigma2_trace: trace,
        iterations,
    })
}
