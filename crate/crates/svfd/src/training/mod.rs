//! Joint optimization of the velocity field and the shape codes, plus
//! test-time latent-code inference.
//!
//! Each epoch shuffles the shapes into batches, samples sub-clouds (uniformly
//! on the first epoch, afterwards oversampling the points with the highest
//! cached loss), maps sources forward and the template backward, and takes
//! one Adam step on the network and on every active code. At inference the
//! network is frozen and a fresh code is fitted with Adam, then polished with
//! L-BFGS.

pub mod adam;
pub mod lbfgs;
pub mod loss;
pub mod sampling;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use ndarray::Array1;

use crate::distances::{local_distances, summary, Measure, SinkhornConfig};
use crate::error::{Error, Result};
use crate::flow::{integrate_backward_modified, integrate_forward, NetField};
use crate::geometry::WeightedPointCloud;
use crate::network::{
    init_params, reshape_code, standard_normal, Arch, GradientBundle, ShapeCode, VelocityNet,
};

pub use adam::{adam_step, adam_step_net, AdamState};
pub use lbfgs::{lbfgs_step, LbfgsState, LbfgsStep};
pub use loss::{eval_shape, theta_regularizer, LossCache, LossConfig, LossTerms, ShapeEval};
pub use sampling::adaptive_sample;

/// Training hyperparameters. Defaults follow the calibrated values: 500
/// epochs, batches of 8, sub-clouds of 2000 points, 10 integration steps,
/// adaptive fraction 0.15, learning rate 1e-3 for both parameter groups,
/// code penalty 1e-3, velocity penalty 1e-4, and plain chamfer attachment.
#[derive(Debug, Clone, Copy, serde::Serialize, serde::Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub sample_points: usize,
    pub steps: usize,
    pub adaptive_fraction: f64,
    pub lr_theta: f64,
    pub lr_code: f64,
    pub w_code: f64,
    pub w_theta: f64,
    pub w_velocity: f64,
    pub w_normals: f64,
    pub attachment: Measure,
    pub arch: Arch,
    pub seed: u64,
    pub sinkhorn: SinkhornConfig,
    /// Adam epochs when fitting a held-out code.
    pub infer_adam_epochs: usize,
    /// L-BFGS polish epochs after Adam.
    pub infer_lbfgs_epochs: usize,
    /// Inference code learning rate as a multiple of `lr_code`.
    pub infer_lr_factor: f64,
    pub lbfgs_history: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 500,
            batch_size: 8,
            sample_points: 2000,
            steps: 10,
            adaptive_fraction: 0.15,
            lr_theta: 1e-3,
            lr_code: 1e-3,
            w_code: 1e-3,
            w_theta: 0.0,
            w_velocity: 1e-4,
            w_normals: 1e-2,
            attachment: Measure::Cd,
            arch: Arch::default(),
            seed: 0,
            sinkhorn: SinkhornConfig::default(),
            infer_adam_epochs: 100,
            infer_lbfgs_epochs: 10,
            infer_lr_factor: 50.0,
            lbfgs_history: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.epochs == 0 || self.batch_size == 0 || self.sample_points == 0 || self.steps == 0 {
            return Err(Error::invalid(
                "epochs, batch size, sample points, and steps must be positive",
            ));
        }
        if !(0.0..1.0).contains(&self.adaptive_fraction) {
            return Err(Error::invalid("adaptive fraction must lie in [0, 1)"));
        }
        if self.lr_theta <= 0.0 || self.lr_code <= 0.0 || self.infer_lr_factor <= 0.0 {
            return Err(Error::invalid("learning rates must be positive"));
        }
        if self.w_code < 0.0 || self.w_theta < 0.0 || self.w_velocity < 0.0 || self.w_normals < 0.0
        {
            return Err(Error::invalid("loss weights must be non-negative"));
        }
        Ok(())
    }

    fn loss_config(&self, measure: Measure) -> LossConfig {
        LossConfig {
            measure,
            steps: self.steps,
            w_code: self.w_code,
            w_theta: self.w_theta,
            w_velocity: self.w_velocity,
            w_normals: self.w_normals,
            sinkhorn: self.sinkhorn,
        }
    }
}

/// Loss components of one epoch, for the history CSV.
#[derive(Debug, Clone, Copy)]
pub struct EpochStats {
    pub epoch: usize,
    pub total: f64,
    pub direct: f64,
    pub inverse: f64,
    pub code_reg: f64,
    pub theta_reg: f64,
    pub kinetic: f64,
}

/// Final state of a training run.
pub struct TrainOutput {
    pub net: VelocityNet,
    pub codes: Vec<ShapeCode>,
    pub history: Vec<EpochStats>,
}

/// A sampled source sub-cloud entering a batch, tagged with its shape index.
pub struct BatchShape {
    pub index: usize,
    pub sub: WeightedPointCloud,
}

struct BatchEvalOut {
    terms: LossTerms,
    cache: LossCache,
    theta: GradientBundle,
    code_grads: Vec<Array1<f64>>,
}

/// Mean bidirectional error over the batch plus the regularizers; pointwise
/// caches where the measure decomposes per point.
pub fn total_loss(
    batch: &[BatchShape],
    template_sub: &WeightedPointCloud,
    net: &VelocityNet,
    codes: &[ShapeCode],
    cfg: &TrainConfig,
) -> Result<(LossTerms, LossCache)> {
    let out = batch_eval(batch, template_sub, net, codes, &cfg.loss_config(cfg.attachment))?;
    Ok((out.terms, out.cache))
}

fn batch_eval(
    batch: &[BatchShape],
    template_sub: &WeightedPointCloud,
    net: &VelocityNet,
    codes: &[ShapeCode],
    lcfg: &LossConfig,
) -> Result<BatchEvalOut> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    let b = batch.len();
    let evals: Vec<Result<ShapeEval>> = batch
        .par_iter()
        .map(|shape| eval_shape(net, &codes[shape.index], &shape.sub, template_sub, lcfg, b))
        .collect();

    let mut theta = GradientBundle::zeros(net);
    let mut terms = LossTerms::default();
    let mut cache = LossCache::default();
    let mut code_grads = Vec::with_capacity(b);
    for (shape, eval) in batch.iter().zip(evals) {
        let eval = eval?;
        terms.direct += eval.direct_value / b as f64;
        terms.inverse += eval.inverse_value / b as f64;
        terms.kinetic += lcfg.w_velocity * eval.kinetic / b as f64;
        terms.code_reg += lcfg.w_code * codes[shape.index].norm_squared();
        cache.direct.push(eval.direct_pointwise);
        cache.inverse.push(eval.inverse_pointwise);
        code_grads.push(eval.bundle.code.clone());
        theta.merge(&eval.bundle);
    }
    terms.theta_reg = theta_regularizer(net, lcfg.w_theta, &mut theta);
    terms.total = terms.direct + terms.inverse + terms.code_reg + terms.theta_reg + terms.kinetic;
    Ok(BatchEvalOut {
        terms,
        cache,
        theta,
        code_grads,
    })
}

/// Split a shuffled index permutation into `floor(N/B)` batches with the
/// remainder spread one-per-batch over the leading ones, so every shape
/// appears exactly once per epoch and batch sizes never differ by more than
/// one.
fn partition_batches(n: usize, b: usize, rng: &mut impl Rng) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.gen_range(0..=i);
        order.swap(i, j);
    }
    if n <= b {
        return vec![order];
    }
    let n_batches = n / b;
    let base = n / n_batches;
    let extra = n % n_batches;
    let mut out = Vec::with_capacity(n_batches);
    let mut start = 0;
    for bi in 0..n_batches {
        let size = if bi < extra { base + 1 } else { base };
        out.push(order[start..start + size].to_vec());
        start += size;
    }
    debug_assert_eq!(start, n);
    out
}

/// Run the full training loop.
pub fn train(
    sources: &[WeightedPointCloud],
    template: &WeightedPointCloud,
    cfg: &TrainConfig,
) -> Result<TrainOutput> {
    train_with_callback(sources, template, cfg, |_, _, _| Ok(()))
}

/// Training loop with a per-epoch callback (used for checkpointing and
/// progress reporting).
pub fn train_with_callback(
    sources: &[WeightedPointCloud],
    template: &WeightedPointCloud,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats, &VelocityNet, &[ShapeCode]) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    if sources.is_empty() {
        return Err(Error::invalid("no source shapes to train on"));
    }
    let m = cfg.sample_points;
    if m > template.len() {
        return Err(Error::invalid(format!(
            "cannot sample {m} points from a template of {}",
            template.len()
        )));
    }
    for (i, s) in sources.iter().enumerate() {
        if m > s.len() {
            return Err(Error::invalid(format!(
                "cannot sample {m} points from source {i} of {}",
                s.len()
            )));
        }
    }
    if cfg.attachment.needs_normals()
        && (!template.has_normals() || sources.iter().any(|s| !s.has_normals()))
    {
        return Err(Error::invalid(format!(
            "measure {} requires normals on all clouds",
            cfg.attachment
        )));
    }

    let n_s = sources.len();
    let (mut net, mut codes) = init_params(cfg.arch, n_s, cfg.seed)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut theta_opt = AdamState::new(net.param_count());
    let mut code_opts: Vec<AdamState> = (0..n_s).map(|_| AdamState::new(cfg.arch.n_z)).collect();

    let pointwise = cfg.attachment.is_pointwise();
    let a = if pointwise { cfg.adaptive_fraction } else { 0.0 };
    let mut source_caches: Vec<Vec<(usize, f64)>> = vec![Vec::new(); n_s];
    let mut template_cache: Vec<(usize, f64)> = Vec::new();
    let lcfg = cfg.loss_config(cfg.attachment);

    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let batches = partition_batches(n_s, cfg.batch_size, &mut rng);
        let mut template_accum: Vec<(f64, usize)> = vec![(0.0, 0); template.len()];
        let mut stats = EpochStats {
            epoch,
            total: 0.0,
            direct: 0.0,
            inverse: 0.0,
            code_reg: 0.0,
            theta_reg: 0.0,
            kinetic: 0.0,
        };
        let n_batches = batches.len();
        for batch_indices in batches {
            let b = batch_indices.len();
            let template_idx =
                adaptive_sample(template.len(), &template_cache, m, a, &mut rng)?;
            let template_sub = template.select(&template_idx)?;
            let mut batch = Vec::with_capacity(b);
            for &si in &batch_indices {
                let src_idx = adaptive_sample(sources[si].len(), &source_caches[si], m, a, &mut rng)?;
                batch.push(BatchShape {
                    index: si,
                    sub: sources[si].select(&src_idx)?,
                });
                source_caches[si] = src_idx.into_iter().map(|i| (i, 0.0)).collect();
            }

            let out = batch_eval(&batch, &template_sub, &net, &codes, &lcfg)?;

            adam_step_net(&mut net, &out.theta, &mut theta_opt, cfg.lr_theta)?;
            for (shape, grad) in batch.iter().zip(&out.code_grads) {
                let code = &mut codes[shape.index];
                adam_step(
                    code.values.as_slice_mut().expect("codes are contiguous"),
                    grad.as_slice().expect("gradients are contiguous"),
                    &mut code_opts[shape.index],
                    cfg.lr_code,
                )?;
            }

            if pointwise {
                for (bi, shape) in batch.iter().enumerate() {
                    if let Some(fwd) = &out.cache.direct[bi] {
                        for (slot, &loss) in source_caches[shape.index].iter_mut().zip(fwd) {
                            slot.1 = loss;
                        }
                    }
                    if let Some(inv) = &out.cache.inverse[bi] {
                        for (&ti, &loss) in template_idx.iter().zip(inv) {
                            template_accum[ti].0 += loss;
                            template_accum[ti].1 += 1;
                        }
                    }
                }
            }

            let frac = b as f64 / n_s as f64;
            stats.direct += out.terms.direct * frac;
            stats.inverse += out.terms.inverse * frac;
            stats.kinetic += out.terms.kinetic * frac;
            stats.code_reg += out.terms.code_reg;
            stats.theta_reg += out.terms.theta_reg / n_batches as f64;
        }
        if pointwise {
            template_cache = template_accum
                .iter()
                .enumerate()
                .filter(|(_, (_, count))| *count > 0)
                .map(|(i, (sum, count))| (i, sum / *count as f64))
                .collect();
        }
        stats.total =
            stats.direct + stats.inverse + stats.code_reg + stats.theta_reg + stats.kinetic;
        on_epoch(&stats, &net, &codes)?;
        history.push(stats);
    }

    Ok(TrainOutput { net, codes, history })
}

/// Summary of the local distances of one map direction.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MapDiagnostics {
    pub fld_mean: f64,
    pub fld_max: f64,
    pub bld_mean: f64,
    pub bld_max: f64,
}

/// Full-cloud local distances of both map directions for one shape/code pair:
/// the direct map (source onto template) and the inverse map (template onto
/// source).
pub fn registration_diagnostics(
    net: &VelocityNet,
    code: &ShapeCode,
    source: &WeightedPointCloud,
    template: &WeightedPointCloud,
    steps: usize,
) -> Result<(MapDiagnostics, MapDiagnostics)> {
    let grid = reshape_code(code, net.arch.g_z)?;
    let field = NetField { net, grid: &grid };
    let fwd = integrate_forward(&field, &source.points_matrix().view(), steps)?;
    let mapped = source.with_points_matrix(fwd.mapped(), false)?;
    let (fld, bld) = local_distances(&mapped, template)?;
    let (fm, fx) = summary(&fld);
    let (bm, bx) = summary(&bld);
    let direct = MapDiagnostics {
        fld_mean: fm,
        fld_max: fx,
        bld_mean: bm,
        bld_max: bx,
    };

    let bwd = integrate_backward_modified(&field, &template.points_matrix().view(), steps)?;
    let inv_mapped = template.with_points_matrix(bwd.inverse_mapped(), false)?;
    let (fld, bld) = local_distances(&inv_mapped, source)?;
    let (fm, fx) = summary(&fld);
    let (bm, bx) = summary(&bld);
    let inverse = MapDiagnostics {
        fld_mean: fm,
        fld_max: fx,
        bld_mean: bm,
        bld_max: bx,
    };
    Ok((direct, inverse))
}

/// Diagnostics and loss traces of a latent-code fit.
#[derive(Debug, Clone)]
pub struct InferenceReport {
    pub direct: MapDiagnostics,
    pub inverse: MapDiagnostics,
    pub adam_loss: Vec<f64>,
    pub lbfgs_loss: Vec<f64>,
    /// Measure actually optimized (NCD falls back to plain chamfer).
    pub measure: Measure,
}

/// Fit the latent code of an unseen shape against a frozen network: 100 Adam
/// epochs at `infer_lr_factor` times the training code rate, then L-BFGS
/// polish. Only the code changes; the network is untouched.
pub fn infer_code(
    new_shape: &WeightedPointCloud,
    template: &WeightedPointCloud,
    net: &VelocityNet,
    cfg: &TrainConfig,
) -> Result<(ShapeCode, InferenceReport)> {
    cfg.validate()?;
    // memory-heavy normal bookkeeping is dropped at test time
    let measure = if cfg.attachment == Measure::Ncd {
        Measure::Cd
    } else {
        cfg.attachment
    };
    if measure.needs_normals() && (!new_shape.has_normals() || !template.has_normals()) {
        return Err(Error::invalid(format!(
            "measure {measure} requires normals on both clouds"
        )));
    }
    let lcfg = cfg.loss_config(measure);
    let m = cfg
        .sample_points
        .min(new_shape.len())
        .min(template.len());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x1f));
    let code_std = (2.0 / cfg.arch.n_z as f64).sqrt();
    let mut code = ShapeCode::new(Array1::from_iter(
        (0..cfg.arch.n_z).map(|_| code_std * standard_normal(&mut rng)),
    ));

    let pointwise = measure.is_pointwise();
    let a = if pointwise { cfg.adaptive_fraction } else { 0.0 };
    let mut shape_cache: Vec<(usize, f64)> = Vec::new();
    let mut template_cache: Vec<(usize, f64)> = Vec::new();

    let mut adam = AdamState::new(cfg.arch.n_z);
    let lr = cfg.infer_lr_factor * cfg.lr_code;
    let mut adam_loss = Vec::with_capacity(cfg.infer_adam_epochs);
    for _ in 0..cfg.infer_adam_epochs {
        let shape_idx = adaptive_sample(new_shape.len(), &shape_cache, m, a, &mut rng)?;
        let template_idx = adaptive_sample(template.len(), &template_cache, m, a, &mut rng)?;
        let shape_sub = new_shape.select(&shape_idx)?;
        let template_sub = template.select(&template_idx)?;
        let eval = eval_shape(net, &code, &shape_sub, &template_sub, &lcfg, 1)?;
        adam_loss.push(
            eval.direct_value
                + eval.inverse_value
                + lcfg.w_code * code.norm_squared()
                + lcfg.w_velocity * eval.kinetic,
        );
        adam_step(
            code.values.as_slice_mut().expect("codes are contiguous"),
            eval.bundle.code.as_slice().expect("gradients are contiguous"),
            &mut adam,
            lr,
        )?;
        if pointwise {
            shape_cache = match &eval.direct_pointwise {
                Some(fwd) => shape_idx.iter().copied().zip(fwd.iter().copied()).collect(),
                None => Vec::new(),
            };
            template_cache = match &eval.inverse_pointwise {
                Some(inv) => template_idx.iter().copied().zip(inv.iter().copied()).collect(),
                None => Vec::new(),
            };
        }
    }

    let mut lbfgs = LbfgsState::new(cfg.lbfgs_history);
    let mut lbfgs_loss = Vec::with_capacity(cfg.infer_lbfgs_epochs);
    for _ in 0..cfg.infer_lbfgs_epochs {
        // fixed sub-clouds within one polish epoch so the closure is
        // re-evaluable during the line search
        let shape_idx = adaptive_sample(new_shape.len(), &shape_cache, m, a, &mut rng)?;
        let template_idx = adaptive_sample(template.len(), &template_cache, m, a, &mut rng)?;
        let shape_sub = new_shape.select(&shape_idx)?;
        let template_sub = template.select(&template_idx)?;
        let mut closure = |z: &Array1<f64>| -> Result<(f64, Array1<f64>)> {
            let candidate = ShapeCode::new(z.clone());
            let eval = eval_shape(net, &candidate, &shape_sub, &template_sub, &lcfg, 1)?;
            let value = eval.direct_value
                + eval.inverse_value
                + lcfg.w_code * candidate.norm_squared()
                + lcfg.w_velocity * eval.kinetic;
            Ok((value, eval.bundle.code))
        };
        let step = lbfgs_step(&mut code.values, &mut closure, &mut lbfgs)?;
        lbfgs_loss.push(step.loss_after);
    }

    let (direct, inverse) = registration_diagnostics(net, &code, new_shape, template, cfg.steps)?;
    Ok((
        code,
        InferenceReport {
            direct,
            inverse,
            adam_loss,
            lbfgs_loss,
            measure,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{mesh_to_weighted_cloud, synth_shape, SynthShape};
    use nalgebra::Point3;

    fn tiny_arch() -> Arch {
        Arch {
            w_fa: 8,
            l_fa: 2,
            w_df: 16,
            l_df: 3,
            n_e: 2,
            negative_slope: 0.2,
            g_z: 2,
            n_z: 16,
        }
    }

    fn sphere_cloud(n_faces: usize, radius: f64) -> WeightedPointCloud {
        let mesh = synth_shape(
            &SynthShape::Ellipsoid {
                semi_axes: [radius; 3],
            },
            n_faces,
        )
        .unwrap();
        mesh_to_weighted_cloud(&mesh).unwrap()
    }

    #[test]
    fn batch_partition_covers_every_shape_once() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for n in 1..40usize {
            for b in 1..10usize {
                let batches = partition_batches(n, b, &mut rng);
                let mut seen: Vec<usize> = batches.iter().flatten().copied().collect();
                seen.sort_unstable();
                assert_eq!(seen, (0..n).collect::<Vec<_>>(), "n={n} b={b}");
                if n >= b && n % b <= n / b {
                    // the remainder fits one-per-batch
                    for batch in &batches {
                        assert!(batch.len() >= b && batch.len() <= b + 1, "n={n} b={b}");
                    }
                }
            }
        }
    }

    #[test]
    fn identical_source_and_template_with_zero_net_scores_zero() {
        let cloud = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch: tiny_arch(),
            sample_points: cloud.len(),
            w_code: 0.0,
            w_velocity: 0.0,
            ..TrainConfig::default()
        };
        let net = VelocityNet::zeros(cfg.arch).unwrap();
        let codes = vec![ShapeCode::zeros(16)];
        let batch = vec![BatchShape {
            index: 0,
            sub: cloud.clone(),
        }];
        let (terms, cache) = total_loss(&batch, &cloud, &net, &codes, &cfg).unwrap();
        assert_eq!(terms.total, 0.0);
        assert!(cache.direct[0].is_some());
    }

    #[test]
    fn code_regularizer_hand_computed() {
        let arch = Arch {
            n_z: 256,
            ..tiny_arch()
        };
        let cloud = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch,
            sample_points: cloud.len(),
            w_velocity: 0.0,
            w_code: 1e-3,
            ..TrainConfig::default()
        };
        let net = VelocityNet::zeros(arch).unwrap();
        let codes = vec![ShapeCode::new(Array1::ones(256))];
        let batch = vec![BatchShape {
            index: 0,
            sub: cloud.clone(),
        }];
        let (terms, _) = total_loss(&batch, &cloud, &net, &codes, &cfg).unwrap();
        assert!((terms.code_reg - 0.256).abs() < 1e-12);
    }

    #[test]
    fn sinkhorn_attachment_has_no_pointwise_cache() {
        let cloud = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch: tiny_arch(),
            attachment: Measure::Sd,
            sample_points: 20,
            ..TrainConfig::default()
        };
        let net = VelocityNet::zeros(cfg.arch).unwrap();
        let codes = vec![ShapeCode::zeros(16)];
        let sub = cloud.select(&(0..20).collect::<Vec<_>>()).unwrap();
        let batch = vec![BatchShape { index: 0, sub: sub.clone() }];
        let (_, cache) = total_loss(&batch, &sub, &net, &codes, &cfg).unwrap();
        assert!(cache.direct[0].is_none());
        assert!(cache.inverse[0].is_none());
    }

    #[test]
    fn one_train_step_moves_both_parameter_groups() {
        let source = sphere_cloud(80, 0.8);
        let template = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch: tiny_arch(),
            epochs: 1,
            sample_points: 60,
            seed: 3,
            ..TrainConfig::default()
        };
        let (net0, codes0) = init_params(cfg.arch, 1, cfg.seed).unwrap();
        let out = train(&[source], &template, &cfg).unwrap();
        assert_ne!(out.net.params_digest(), net0.params_digest());
        assert_ne!(out.codes[0], codes0[0]);
    }

    #[test]
    fn deterministic_with_fixed_seed() {
        let source = sphere_cloud(80, 0.8);
        let template = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch: tiny_arch(),
            epochs: 3,
            sample_points: 50,
            adaptive_fraction: 0.0,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train(&[source.clone()], &template, &cfg).unwrap();
        let b = train(&[source], &template, &cfg).unwrap();
        assert_eq!(a.net.params_digest(), b.net.params_digest());
        assert_eq!(a.codes[0], b.codes[0]);
        for (x, y) in a.history.iter().zip(&b.history) {
            assert_eq!(x.total, y.total);
        }
    }

    #[test]
    fn self_registration_reaches_tiny_error() {
        // one source identical to the template: the identity map is reachable
        // and a short run must get close to it (1e-3 of the diameter needs
        // on the order of 1500 epochs at a fixed Adam rate; 100 epochs land
        // around 1.4% and the threshold leaves seed margin)
        let arch = Arch {
            w_fa: 8,
            l_fa: 1,
            w_df: 8,
            l_df: 2,
            n_e: 1,
            negative_slope: 0.2,
            g_z: 2,
            n_z: 8,
        };
        let cloud = sphere_cloud(320, 1.0);
        let cfg = TrainConfig {
            arch,
            epochs: 100,
            sample_points: cloud.len(),
            lr_theta: 3e-2,
            lr_code: 3e-2,
            seed: 1,
            ..TrainConfig::default()
        };
        let out = train(&[cloud.clone()], &cloud, &cfg).unwrap();
        let (direct, _) =
            registration_diagnostics(&out.net, &out.codes[0], &cloud, &cloud, cfg.steps).unwrap();
        let diameter = cloud.diameter();
        assert!(
            direct.fld_max < 0.025 * diameter,
            "max FLD {} vs diameter {diameter}",
            direct.fld_max
        );
    }

    #[test]
    fn inference_freezes_network() {
        let source = sphere_cloud(80, 0.9);
        let template = sphere_cloud(80, 1.0);
        let cfg = TrainConfig {
            arch: tiny_arch(),
            epochs: 5,
            sample_points: 50,
            infer_adam_epochs: 5,
            infer_lbfgs_epochs: 2,
            seed: 2,
            ..TrainConfig::default()
        };
        let out = train(&[source.clone()], &template, &cfg).unwrap();
        let digest_before = out.net.params_digest();
        let (_, report) = infer_code(&source, &template, &out.net, &cfg).unwrap();
        assert_eq!(out.net.params_digest(), digest_before);
        assert_eq!(report.adam_loss.len(), 5);
        assert_eq!(report.lbfgs_loss.len(), 2);
    }

    #[test]
    fn zero_capacity_net_leaves_inference_at_start() {
        let source = sphere_cloud(80, 0.9);
        let template = sphere_cloud(80, 1.0);
        let base = TrainConfig {
            arch: tiny_arch(),
            sample_points: 50,
            infer_adam_epochs: 10,
            infer_lbfgs_epochs: 2,
            w_code: 0.0,
            seed: 5,
            ..TrainConfig::default()
        };
        let net = VelocityNet::zeros(base.arch).unwrap();
        // the field is zero regardless of the code, so optimization cannot
        // move it: the fitted code equals its initialization and the final
        // diagnostics match a run with no optimization at all
        let (code, report) = infer_code(&source, &template, &net, &base).unwrap();
        let untouched = TrainConfig {
            infer_adam_epochs: 0,
            infer_lbfgs_epochs: 0,
            ..base
        };
        let (code0, report0) = infer_code(&source, &template, &net, &untouched).unwrap();
        assert_eq!(code, code0);
        assert_eq!(report.direct.fld_max, report0.direct.fld_max);
        assert_eq!(report.inverse.fld_max, report0.inverse.fld_max);
    }

    #[test]
    fn ncd_falls_back_to_cd_at_inference() {
        let points = vec![
            Point3::new(0.0, 0.0, 0.0),
            Point3::new(1.0, 0.0, 0.0),
            Point3::new(0.0, 1.0, 0.0),
        ];
        // clouds without normals: NCD would fail, the fallback must not
        let cloud = WeightedPointCloud::uniform(points, None).unwrap();
        let cfg = TrainConfig {
            arch: tiny_arch(),
            attachment: Measure::Ncd,
            sample_points: 3,
            infer_adam_epochs: 1,
            infer_lbfgs_epochs: 0,
            seed: 0,
            ..TrainConfig::default()
        };
        let net = VelocityNet::zeros(cfg.arch).unwrap();
        let (_, report) = infer_code(&cloud, &cloud, &net, &cfg).unwrap();
        assert_eq!(report.measure, Measure::Cd);
    }
}
