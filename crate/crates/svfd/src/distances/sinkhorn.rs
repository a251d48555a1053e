//! Debiased Sinkhorn divergence with quadratic ground cost.
//!
//! Entropic optimal transport is solved in the log domain with geometric
//! epsilon scaling: iterations start at the squared diameter of the joint
//! cloud and anneal down to the target temperature. The divergence subtracts
//! the self-transport terms, so identical clouds score zero.

use nalgebra::{Point3, Vector3};
use ndarray::Array2;

use crate::error::{Error, Result};
use crate::geometry::WeightedPointCloud;

#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct SinkhornConfig {
    /// Target temperature.
    pub epsilon: f64,
    /// Geometric annealing factor in (0, 1).
    pub scaling: f64,
    /// Iteration budget per temperature level.
    pub max_iters: usize,
    /// Convergence threshold on the sup-norm change of the dual potentials.
    pub tolerance: f64,
}

impl Default for SinkhornConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-4,
            scaling: 0.9,
            max_iters: 500,
            tolerance: 1e-9,
        }
    }
}

impl SinkhornConfig {
    fn validate(&self) -> Result<()> {
        if self.epsilon <= 0.0 {
            return Err(Error::invalid("sinkhorn epsilon must be positive"));
        }
        if !(0.0 < self.scaling && self.scaling < 1.0) {
            return Err(Error::invalid("sinkhorn scaling must lie in (0, 1)"));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::invalid("sinkhorn tolerance must be positive"));
        }
        Ok(())
    }
}

/// Debiased divergence `OT_e(a, b) - (OT_e(a, a) + OT_e(b, b)) / 2`.
pub fn sinkhorn_divergence(
    a: &WeightedPointCloud,
    b: &WeightedPointCloud,
    cfg: &SinkhornConfig,
) -> Result<f64> {
    Ok(divergence_parts(a.points(), a.weights(), b, cfg)?.0)
}

/// Divergence plus its gradient with respect to the first cloud's positions,
/// with the dual potentials detached (exact at convergence).
pub fn sinkhorn_divergence_grad(
    points: &[Point3<f64>],
    weights: &[f64],
    b: &WeightedPointCloud,
    cfg: &SinkhornConfig,
) -> Result<(f64, Vec<Vector3<f64>>)> {
    let (value, cross, self_a) = divergence_parts(points, weights, b, cfg)?;
    let mut grad = vec![Vector3::zeros(); points.len()];
    // d/dx_i of <pi, C>: transport mass times the cost gradient 2 (x_i - y_j);
    // the self term sees x on both margins, which doubles its contribution and
    // cancels the 1/2 debiasing factor.
    for i in 0..points.len() {
        let mut g = Vector3::zeros();
        for (j, y) in b.points().iter().enumerate() {
            g += (points[i] - y) * (2.0 * cross[[i, j]]);
        }
        for (k, x) in points.iter().enumerate() {
            g -= (points[i] - Point3::from(x.coords)) * (2.0 * self_a[[i, k]]);
        }
        grad[i] = g;
    }
    Ok((value, grad))
}

/// Shared core: returns (divergence, cross plan, self plan of the first cloud).
fn divergence_parts(
    points_a: &[Point3<f64>],
    weights_a: &[f64],
    b: &WeightedPointCloud,
    cfg: &SinkhornConfig,
) -> Result<(f64, Array2<f64>, Array2<f64>)> {
    cfg.validate()?;
    if points_a.is_empty() || b.is_empty() {
        return Err(Error::invalid("sinkhorn divergence of an empty cloud"));
    }
    let diam2 = joint_diameter_sq(points_a, b.points());
    let schedule = epsilon_schedule(diam2, cfg);

    let c_ab = cost_matrix(points_a, b.points());
    let c_aa = cost_matrix(points_a, points_a);
    let c_bb = cost_matrix(b.points(), b.points());
    let log_a: Vec<f64> = weights_a.iter().map(|w| w.ln()).collect();
    let log_b: Vec<f64> = b.weights().iter().map(|w| w.ln()).collect();

    let (f, g) = solve_asymmetric(&c_ab, &log_a, &log_b, &schedule, cfg)?;
    let p = solve_symmetric(&c_aa, &log_a, &schedule, cfg)?;
    let q = solve_symmetric(&c_bb, &log_b, &schedule, cfg)?;

    let ot_ab: f64 = dualsum(&f, weights_a) + dualsum(&g, b.weights());
    let ot_aa: f64 = 2.0 * dualsum(&p, weights_a);
    let ot_bb: f64 = 2.0 * dualsum(&q, b.weights());
    let value = ot_ab - 0.5 * (ot_aa + ot_bb);

    let eps = cfg.epsilon;
    let plan = |c: &Array2<f64>, f: &[f64], g: &[f64], la: &[f64], lb: &[f64]| {
        let mut p = Array2::zeros(c.dim());
        for i in 0..c.nrows() {
            for j in 0..c.ncols() {
                p[[i, j]] = ((f[i] + g[j] - c[[i, j]]) / eps + la[i] + lb[j]).exp();
            }
        }
        p
    };
    let cross = plan(&c_ab, &f, &g, &log_a, &log_b);
    let self_a = plan(&c_aa, &p, &p, &log_a, &log_a);
    Ok((value, cross, self_a))
}

fn dualsum(potential: &[f64], weights: &[f64]) -> f64 {
    potential
        .iter()
        .zip(weights)
        .map(|(p, w)| if *w > 0.0 { p * w } else { 0.0 })
        .sum()
}

fn cost_matrix(a: &[Point3<f64>], b: &[Point3<f64>]) -> Array2<f64> {
    let mut c = Array2::zeros((a.len(), b.len()));
    for (i, x) in a.iter().enumerate() {
        for (j, y) in b.iter().enumerate() {
            c[[i, j]] = (x - y).norm_squared();
        }
    }
    c
}

fn joint_diameter_sq(a: &[Point3<f64>], b: &[Point3<f64>]) -> f64 {
    let all: Vec<&Point3<f64>> = a.iter().chain(b.iter()).collect();
    let mut best = 0.0f64;
    for i in 0..all.len() {
        for j in (i + 1)..all.len() {
            best = best.max((all[i] - all[j]).norm_squared());
        }
    }
    best
}

fn epsilon_schedule(diam2: f64, cfg: &SinkhornConfig) -> Vec<f64> {
    let mut schedule = Vec::new();
    let mut eps = diam2;
    while eps > cfg.epsilon {
        schedule.push(eps);
        eps *= cfg.scaling;
    }
    schedule.push(cfg.epsilon);
    schedule
}

/// Alternating log-domain updates of the two dual potentials.
fn solve_asymmetric(
    cost: &Array2<f64>,
    log_a: &[f64],
    log_b: &[f64],
    schedule: &[f64],
    cfg: &SinkhornConfig,
) -> Result<(Vec<f64>, Vec<f64>)> {
    let (m, n) = cost.dim();
    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    for (level, &eps) in schedule.iter().enumerate() {
        let is_target = level + 1 == schedule.len();
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..cfg.max_iters {
            let mut delta = 0.0f64;
            for i in 0..m {
                let new = -eps
                    * logsumexp((0..n).map(|j| (g[j] - cost[[i, j]]) / eps + log_b[j]));
                delta = delta.max((new - f[i]).abs());
                f[i] = new;
            }
            for j in 0..n {
                let new = -eps
                    * logsumexp((0..m).map(|i| (f[i] - cost[[i, j]]) / eps + log_a[i]));
                delta = delta.max((new - g[j]).abs());
                g[j] = new;
            }
            residual = delta;
            if delta < cfg.tolerance {
                converged = true;
                break;
            }
        }
        if is_target && !converged {
            return Err(Error::numerical(format!(
                "sinkhorn did not converge within {} iterations at epsilon {eps}: residual {residual}",
                cfg.max_iters
            )));
        }
    }
    Ok((f, g))
}

/// Symmetric fixed point for the self-transport potential, with averaging for
/// stability.
fn solve_symmetric(
    cost: &Array2<f64>,
    log_a: &[f64],
    schedule: &[f64],
    cfg: &SinkhornConfig,
) -> Result<Vec<f64>> {
    let m = cost.nrows();
    let mut p = vec![0.0; m];
    for (level, &eps) in schedule.iter().enumerate() {
        let is_target = level + 1 == schedule.len();
        let mut residual = f64::INFINITY;
        let mut converged = false;
        for _ in 0..cfg.max_iters {
            let mut delta = 0.0f64;
            let snapshot = p.clone();
            for i in 0..m {
                let lse = -eps
                    * logsumexp(
                        (0..m).map(|k| (snapshot[k] - cost[[i, k]]) / eps + log_a[k]),
                    );
                let new = 0.5 * (snapshot[i] + lse);
                delta = delta.max((new - p[i]).abs());
                p[i] = new;
            }
            residual = delta;
            if delta < cfg.tolerance {
                converged = true;
                break;
            }
        }
        if is_target && !converged {
            return Err(Error::numerical(format!(
                "symmetric sinkhorn did not converge within {} iterations at epsilon {eps}: residual {residual}",
                cfg.max_iters
            )));
        }
    }
    Ok(p)
}

fn logsumexp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let sum: f64 = values.map(|v| (v - max).exp()).sum();
    max + sum.ln()
}
