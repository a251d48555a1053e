//! The bidirectional training loss and its gradients.
//!
//! Per shape, the source sub-cloud is mapped forward onto the template
//! sub-cloud and the template sub-cloud backward onto the source; the chosen
//! attachment measure scores both directions. Regularizers: squared norms of
//! the active codes and of the network parameters, plus the kinetic energy of
//! both trajectories.

use nalgebra::{Point3, Vector3};
use ndarray::Array2;

use crate::distances::{
    chamfer_grad, chamfer_normals_grad, chamfer_point_to_plane_grad, chamfer_weighted_grad,
    sinkhorn_divergence_grad, Measure, SinkhornConfig, ValueGrad,
};
use crate::error::{Error, Result};
use crate::flow::{
    backprop_backward_modified, backprop_forward, integrate_backward_modified, integrate_forward,
    NetField,
};
use crate::geometry::WeightedPointCloud;
use crate::network::{reshape_code, GradientBundle, ShapeCode, VelocityNet};

/// Loss components of one batch; `total` is their sum.
#[derive(Debug, Clone, Copy, Default)]
pub struct LossTerms {
    pub total: f64,
    pub direct: f64,
    pub inverse: f64,
    pub code_reg: f64,
    pub theta_reg: f64,
    pub kinetic: f64,
}

/// Pointwise losses cached for adaptive sampling. `None` when the attachment
/// measure only yields a cumulative value (Sinkhorn divergence).
#[derive(Debug, Clone, Default)]
pub struct LossCache {
    /// Per batch shape: squared nearest distances of the mapped source
    /// sample, aligned to the sampled source indices.
    pub direct: Vec<Option<Vec<f64>>>,
    /// Per batch shape: squared nearest distances of the inverse-mapped
    /// template sample, aligned to the sampled template indices.
    pub inverse: Vec<Option<Vec<f64>>>,
}

/// Everything produced by one shape's forward/backward evaluation.
pub struct ShapeEval {
    pub bundle: GradientBundle,
    pub direct_value: f64,
    pub inverse_value: f64,
    pub kinetic: f64,
    pub direct_pointwise: Option<Vec<f64>>,
    pub inverse_pointwise: Option<Vec<f64>>,
}

/// Scoring configuration shared by training and inference.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub measure: Measure,
    pub steps: usize,
    pub w_code: f64,
    pub w_theta: f64,
    pub w_velocity: f64,
    pub w_normals: f64,
    pub sinkhorn: SinkhornConfig,
}

/// Evaluate one shape against the template sub-cloud, backpropagating into a
/// fresh gradient bundle. `batch_size` scales the per-shape attachment and
/// kinetic terms so the batch mean matches the loss definition.
pub fn eval_shape(
    net: &VelocityNet,
    code: &ShapeCode,
    source_sub: &WeightedPointCloud,
    template_sub: &WeightedPointCloud,
    cfg: &LossConfig,
    batch_size: usize,
) -> Result<ShapeEval> {
    let grid = reshape_code(code, net.arch.g_z)?;
    let field = NetField { net, grid: &grid };
    let inv_b = 1.0 / batch_size as f64;

    let fwd = integrate_forward(&field, &source_sub.points_matrix().view(), cfg.steps)?;
    let bwd = integrate_backward_modified(&field, &template_sub.points_matrix().view(), cfg.steps)?;

    let direct = attachment_grad(
        cfg.measure,
        fwd.mapped(),
        source_sub.weights(),
        source_sub.normals(),
        template_sub,
        cfg,
    )?;
    let inverse = attachment_grad(
        cfg.measure,
        bwd.inverse_mapped(),
        template_sub.weights(),
        template_sub.normals(),
        source_sub,
        cfg,
    )?;

    let mut bundle = GradientBundle::zeros(net);
    let ke_coeff = cfg.w_velocity * inv_b;
    backprop_forward(
        net,
        &grid,
        &fwd,
        grad_matrix(&direct.grad, inv_b),
        ke_coeff,
        &mut bundle,
    )?;
    backprop_backward_modified(
        net,
        &grid,
        &bwd,
        grad_matrix(&inverse.grad, inv_b),
        ke_coeff,
        &mut bundle,
    )?;
    // code regularizer: w_z |z|^2, summed over active codes (not batch-averaged)
    bundle.code.scaled_add(2.0 * cfg.w_code, &code.values);

    Ok(ShapeEval {
        bundle,
        direct_value: direct.value,
        inverse_value: inverse.value,
        kinetic: fwd.kinetic_energy + bwd.kinetic_energy,
        direct_pointwise: direct.forward_pointwise,
        inverse_pointwise: inverse.forward_pointwise,
    })
}

fn grad_matrix(grad: &[Vector3<f64>], scale: f64) -> Array2<f64> {
    let mut out = Array2::zeros((grad.len(), 3));
    for (i, g) in grad.iter().enumerate() {
        out[[i, 0]] = g.x * scale;
        out[[i, 1]] = g.y * scale;
        out[[i, 2]] = g.z * scale;
    }
    out
}

/// Attachment value and gradient w.r.t. the mapped points, dispatching on the
/// measure. The mapped cloud carries the weights and (untransported) normals
/// of the sub-cloud it was integrated from.
pub fn attachment_grad(
    measure: Measure,
    mapped: &Array2<f64>,
    weights: &[f64],
    normals: Option<&[Vector3<f64>]>,
    target: &WeightedPointCloud,
    cfg: &LossConfig,
) -> Result<ValueGrad> {
    let points: Vec<Point3<f64>> = mapped
        .rows()
        .into_iter()
        .map(|r| Point3::new(r[0], r[1], r[2]))
        .collect();
    let need_normals = || {
        normals.ok_or_else(|| {
            Error::invalid(format!(
                "measure {measure} requires normals on the mapped cloud"
            ))
        })
    };
    match measure {
        Measure::Cd => chamfer_grad(&points, target),
        Measure::Cdw => chamfer_weighted_grad(&points, weights, target),
        Measure::Ncd => chamfer_normals_grad(&points, need_normals()?, target, cfg.w_normals),
        Measure::Pcd => chamfer_point_to_plane_grad(&points, need_normals()?, None, target),
        Measure::Pcdw => {
            chamfer_point_to_plane_grad(&points, need_normals()?, Some(weights), target)
        }
        Measure::Sd => {
            let (value, grad) = sinkhorn_divergence_grad(&points, weights, target, &cfg.sinkhorn)?;
            Ok(ValueGrad {
                value,
                grad,
                forward_pointwise: None,
                backward_pointwise: None,
            })
        }
    }
}

/// Squared parameter norm and its gradient added into `bundle`; returns the
/// weighted value.
pub fn theta_regularizer(net: &VelocityNet, w_theta: f64, bundle: &mut GradientBundle) -> f64 {
    if w_theta == 0.0 {
        return 0.0;
    }
    let mut sq = 0.0;
    for ((gw, gb), layer) in bundle
        .fa
        .iter_mut()
        .chain(bundle.df.iter_mut())
        .chain(std::iter::once(&mut bundle.head))
        .zip(net.layers())
    {
        sq += layer.weight.iter().map(|v| v * v).sum::<f64>();
        sq += layer.bias.iter().map(|v| v * v).sum::<f64>();
        gw.scaled_add(2.0 * w_theta, &layer.weight);
        gb.scaled_add(2.0 * w_theta, &layer.bias);
    }
    w_theta * sq
}
