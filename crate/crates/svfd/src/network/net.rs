//! The velocity-field network and its reverse-mode gradients.
//!
//! The field is evaluated as `v = DF(FPE(FA(x ++ zbar(x))) ++ zbar(x))`: a
//! shallow feature-augmentation stack, a Fourier positional encoder, and a
//! deeper flow stack with a linear head, every hidden layer leaky-ReLU
//! activated. `zbar(x)` is the trilinear interpolation of the shape code grid
//! at `x`, so the latent conditioning varies over the domain.

use nalgebra::{Point3, Vector3};
use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use super::code::ShapeCodeGrid;
use super::fpe::{fpe_batch, fpe_lipschitz_factor, fpe_vjp};
use crate::error::{Error, Result};

/// Architecture hyperparameters of the velocity network.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Arch {
    /// Width of the feature-augmentation layers.
    pub w_fa: usize,
    /// Number of (activated) feature-augmentation layers.
    pub l_fa: usize,
    /// Width of the flow layers.
    pub w_df: usize,
    /// Number of flow weight layers, counting the final linear head.
    pub l_df: usize,
    /// Frequency levels of the positional encoder.
    pub n_e: usize,
    /// Negative slope of the leaky-ReLU activations.
    pub negative_slope: f64,
    /// Code grid resolution per axis.
    pub g_z: usize,
    /// Latent code dimension.
    pub n_z: usize,
}

impl Default for Arch {
    fn default() -> Self {
        Self {
            w_fa: 64,
            l_fa: 3,
            w_df: 256,
            l_df: 5,
            n_e: 3,
            negative_slope: 0.2,
            g_z: 2,
            n_z: 256,
        }
    }
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        if self.l_fa < 1 || self.l_df < 2 {
            return Err(Error::invalid(
                "architecture needs at least 1 augmentation layer and 2 flow layers",
            ));
        }
        if self.w_fa == 0 || self.w_df == 0 {
            return Err(Error::invalid("layer widths must be positive"));
        }
        if self.g_z < 2 {
            return Err(Error::invalid("code grid needs g_z >= 2"));
        }
        let nodes = self.g_z.pow(3);
        if self.n_z == 0 || self.n_z % nodes != 0 {
            return Err(Error::invalid(format!(
                "code dimension {} is not divisible by g_z^3 = {nodes}",
                self.n_z
            )));
        }
        if !(0.0..1.0).contains(&self.negative_slope) {
            return Err(Error::invalid("negative slope must lie in [0, 1)"));
        }
        Ok(())
    }

    /// Channels of the position-aware code.
    pub fn code_channels(&self) -> usize {
        self.n_z / self.g_z.pow(3)
    }

    /// Input width of the augmentation stack: point plus position-aware code.
    pub fn fa_input(&self) -> usize {
        3 + self.code_channels()
    }

    /// Output width of the positional encoder.
    pub fn fpe_output(&self) -> usize {
        (2 * self.n_e + 1) * self.w_fa
    }

    /// Input width of the flow stack: encoded features plus the code again.
    pub fn df_input(&self) -> usize {
        self.fpe_output() + self.code_channels()
    }
}

/// One fully connected layer; `weight` is `(out, in)`.
#[derive(Debug, Clone)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros(out: usize, input: usize) -> Self {
        Self {
            weight: Array2::zeros((out, input)),
            bias: Array1::zeros(out),
        }
    }

    /// `x (M, in) -> x W^T + b (M, out)`.
    fn forward(&self, x: &ArrayView2<f64>) -> Array2<f64> {
        let mut y = x.dot(&self.weight.t());
        y += &self.bias;
        y
    }
}

/// The velocity-field model: augmentation layers, encoder, flow layers, and
/// the linear head producing a 3-vector.
#[derive(Debug, Clone)]
pub struct VelocityNet {
    pub arch: Arch,
    /// `l_fa` activated layers.
    pub fa_layers: Vec<DenseLayer>,
    /// `l_df - 1` activated layers.
    pub df_layers: Vec<DenseLayer>,
    /// Final linear layer to the 3 velocity components.
    pub df_head: DenseLayer,
}

impl VelocityNet {
    /// All parameters zero; the field is identically zero.
    pub fn zeros(arch: Arch) -> Result<Self> {
        arch.validate()?;
        let mut fa_layers = Vec::with_capacity(arch.l_fa);
        let mut input = arch.fa_input();
        for _ in 0..arch.l_fa {
            fa_layers.push(DenseLayer::zeros(arch.w_fa, input));
            input = arch.w_fa;
        }
        let mut df_layers = Vec::with_capacity(arch.l_df - 1);
        let mut input = arch.df_input();
        for _ in 0..arch.l_df - 1 {
            df_layers.push(DenseLayer::zeros(arch.w_df, input));
            input = arch.w_df;
        }
        let df_head = DenseLayer::zeros(3, input);
        Ok(Self {
            arch,
            fa_layers,
            df_layers,
            df_head,
        })
    }

    /// Exact number of trainable network parameters (codes excluded). The
    /// default architecture counts 331,907.
    pub fn param_count(&self) -> usize {
        self.layers()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Layers in canonical order: augmentation stack, flow stack, head. The
    /// same order fixes the checkpoint and optimizer-state layout.
    pub fn layers(&self) -> impl Iterator<Item = &DenseLayer> {
        self.fa_layers
            .iter()
            .chain(self.df_layers.iter())
            .chain(std::iter::once(&self.df_head))
    }

    pub fn layers_mut(&mut self) -> Vec<&mut DenseLayer> {
        let mut v: Vec<&mut DenseLayer> = self.fa_layers.iter_mut().collect();
        v.extend(self.df_layers.iter_mut());
        v.push(&mut self.df_head);
        v
    }

    /// Named layers in canonical order, for the checkpoint tensor directory.
    pub fn layer_names(&self) -> Vec<String> {
        let mut names: Vec<String> = (0..self.fa_layers.len()).map(|i| format!("fa.{i}")).collect();
        names.extend((0..self.df_layers.len()).map(|i| format!("df.{i}")));
        names.push("df_head".to_string());
        names
    }

    /// FNV-1a digest over the exact parameter bits; changes iff any
    /// parameter changes.
    pub fn params_digest(&self) -> u64 {
        let mut hash: u64 = 0xcbf29ce484222325;
        let mut eat = |v: f64| {
            for b in v.to_le_bytes() {
                hash ^= b as u64;
                hash = hash.wrapping_mul(0x100000001b3);
            }
        };
        for layer in self.layers() {
            layer.weight.iter().for_each(|&v| eat(v));
            layer.bias.iter().for_each(|&v| eat(v));
        }
        hash
    }

    fn check_grid(&self, grid: &ShapeCodeGrid) -> Result<()> {
        if grid.g() != self.arch.g_z || grid.channels() != self.arch.code_channels() {
            return Err(Error::invalid(format!(
                "code grid ({} nodes, {} channels) does not match architecture ({}, {})",
                grid.g(),
                grid.channels(),
                self.arch.g_z,
                self.arch.code_channels()
            )));
        }
        Ok(())
    }

    /// Evaluate the field on a batch of points (`M x 3` rows).
    pub fn velocity_batch(
        &self,
        points: &ArrayView2<f64>,
        grid: &ShapeCodeGrid,
    ) -> Result<Array2<f64>> {
        Ok(self.velocity_batch_cached(points, grid)?.0)
    }

    /// Evaluate the field at one point.
    pub fn velocity(&self, x: &Point3<f64>, grid: &ShapeCodeGrid) -> Result<Vector3<f64>> {
        let mut points = Array2::zeros((1, 3));
        points[[0, 0]] = x.x;
        points[[0, 1]] = x.y;
        points[[0, 2]] = x.z;
        let v = self.velocity_batch(&points.view(), grid)?;
        Ok(Vector3::new(v[[0, 0]], v[[0, 1]], v[[0, 2]]))
    }

    /// Forward pass that also returns the per-layer activations needed for
    /// the reverse sweep.
    pub fn velocity_batch_cached(
        &self,
        points: &ArrayView2<f64>,
        grid: &ShapeCodeGrid,
    ) -> Result<(Array2<f64>, EvalCache)> {
        self.check_grid(grid)?;
        if points.ncols() != 3 {
            return Err(Error::invalid("points must be an M x 3 array"));
        }
        let slope = self.arch.negative_slope;
        let m = points.nrows();

        let zbar = grid.interpolate_batch(points);
        let mut h = Array2::zeros((m, 3 + zbar.ncols()));
        h.slice_mut(ndarray::s![.., 0..3]).assign(points);
        h.slice_mut(ndarray::s![.., 3..]).assign(&zbar);

        let mut fa_post = Vec::with_capacity(self.fa_layers.len());
        for layer in &self.fa_layers {
            let mut a = layer.forward(&h.view());
            leaky_relu_inplace(&mut a, slope);
            fa_post.push(a.clone());
            h = a;
        }

        let encoded = fpe_batch(&h.view(), self.arch.n_e);
        let mut d = Array2::zeros((m, encoded.ncols() + zbar.ncols()));
        d.slice_mut(ndarray::s![.., 0..encoded.ncols()]).assign(&encoded);
        d.slice_mut(ndarray::s![.., encoded.ncols()..]).assign(&zbar);

        let mut df_post = Vec::with_capacity(self.df_layers.len());
        for layer in &self.df_layers {
            let mut a = layer.forward(&d.view());
            leaky_relu_inplace(&mut a, slope);
            df_post.push(a.clone());
            d = a;
        }
        let v = self.df_head.forward(&d.view());
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical("velocity evaluation produced non-finite values"));
        }
        Ok((
            v,
            EvalCache {
                points: points.to_owned(),
                zbar,
                fa_post,
                df_post,
            },
        ))
    }

    /// Reverse-mode sweep: given the cotangent of the velocities, accumulate
    /// parameter and code gradients into `grads` and return the gradient
    /// with respect to the input points.
    pub fn vjp(
        &self,
        grid: &ShapeCodeGrid,
        cache: &EvalCache,
        cotangent: &ArrayView2<f64>,
        grads: &mut GradientBundle,
    ) -> Array2<f64> {
        let slope = self.arch.negative_slope;
        let m = cache.points.nrows();
        let d_z = cache.zbar.ncols();

        // head
        let head_input = cache
            .df_post
            .last()
            .map(|a| a.view())
            .unwrap_or_else(|| unreachable!("l_df >= 2 guarantees a flow layer"));
        grads.head.0 += &cotangent.t().dot(&head_input);
        grads.head.1 += &cotangent.sum_axis(Axis(0));
        let mut g = cotangent.dot(&self.df_head.weight); // M x w_df

        // flow stack, reversed
        for (li, layer) in self.df_layers.iter().enumerate().rev() {
            let post = &cache.df_post[li];
            leaky_relu_backward_inplace(&mut g, post, slope);
            let input_owned;
            let input = if li == 0 {
                input_owned = self.df_input_matrix(cache);
                input_owned.view()
            } else {
                cache.df_post[li - 1].view()
            };
            grads.df[li].0 += &g.t().dot(&input);
            grads.df[li].1 += &g.sum_axis(Axis(0));
            g = g.dot(&layer.weight);
        }

        // split flow-input cotangent into the encoded part and the code part
        let fpe_w = self.arch.fpe_output();
        let g_encoded = g.slice(ndarray::s![.., 0..fpe_w]);
        let mut zbar_cot = g.slice(ndarray::s![.., fpe_w..]).to_owned();

        let fa_last = cache
            .fa_post
            .last()
            .map(|a| a.view())
            .unwrap_or_else(|| unreachable!("l_fa >= 1 guarantees an augmentation layer"));
        let mut g = fpe_vjp(&fa_last, &g_encoded, self.arch.n_e);

        // augmentation stack, reversed
        for (li, layer) in self.fa_layers.iter().enumerate().rev() {
            let post = &cache.fa_post[li];
            leaky_relu_backward_inplace(&mut g, post, slope);
            let input_owned;
            let input = if li == 0 {
                input_owned = self.fa_input_matrix(cache);
                input_owned.view()
            } else {
                cache.fa_post[li - 1].view()
            };
            grads.fa[li].0 += &g.t().dot(&input);
            grads.fa[li].1 += &g.sum_axis(Axis(0));
            g = g.dot(&layer.weight);
        }

        // augmentation input = (x, zbar): fold both cotangent paths
        let mut d_points = g.slice(ndarray::s![.., 0..3]).to_owned();
        zbar_cot += &g.slice(ndarray::s![.., 3..]);
        debug_assert_eq!(zbar_cot.ncols(), d_z);
        debug_assert_eq!(zbar_cot.nrows(), m);

        let d_x_interp =
            grid.interpolate_vjp(&cache.points.view(), &zbar_cot.view(), &mut grads.code);
        d_points += &d_x_interp;
        d_points
    }

    fn fa_input_matrix(&self, cache: &EvalCache) -> Array2<f64> {
        let m = cache.points.nrows();
        let mut h = Array2::zeros((m, 3 + cache.zbar.ncols()));
        h.slice_mut(ndarray::s![.., 0..3]).assign(&cache.points);
        h.slice_mut(ndarray::s![.., 3..]).assign(&cache.zbar);
        h
    }

    fn df_input_matrix(&self, cache: &EvalCache) -> Array2<f64> {
        let fa_last = cache.fa_post.last().unwrap();
        let encoded = fpe_batch(&fa_last.view(), self.arch.n_e);
        let m = cache.points.nrows();
        let mut d = Array2::zeros((m, encoded.ncols() + cache.zbar.ncols()));
        d.slice_mut(ndarray::s![.., 0..encoded.ncols()]).assign(&encoded);
        d.slice_mut(ndarray::s![.., encoded.ncols()..]).assign(&cache.zbar);
        d
    }

    /// Upper bound on the Lipschitz constant of `x -> v(x)` for fixed
    /// parameters: layer operator norms composed with the encoder frequency
    /// factor and the code-interpolation slope.
    pub fn lipschitz_bound(&self, grid: &ShapeCodeGrid) -> f64 {
        let code_max = grid
            .flatten()
            .values
            .iter()
            .fold(0.0f64, |a, &b| a.max(b.abs()));
        let d_z = self.arch.code_channels() as f64;
        let l_code = (3.0 * d_z).sqrt() * (grid.g() as f64 - 1.0) * 2.0 * code_max;
        let l_in = (1.0 + l_code * l_code).sqrt();
        let l_fa: f64 = self.fa_layers.iter().map(|l| operator_norm(&l.weight)).product();
        let f_e = fpe_lipschitz_factor(self.arch.n_e);
        let l_df_in = ((f_e * l_fa * l_in).powi(2) + l_code * l_code).sqrt();
        let l_df: f64 = self.df_layers.iter().map(|l| operator_norm(&l.weight)).product();
        l_df_in * l_df * operator_norm(&self.df_head.weight)
    }
}

/// Row-chunk size for parallel batch evaluation. Fixed (not derived from the
/// thread count) so results are bit-identical regardless of the parallel
/// split.
pub const EVAL_CHUNK: usize = 256;

impl VelocityNet {
    /// Chunk-parallel batched evaluation; identical output to
    /// [`VelocityNet::velocity_batch`].
    pub fn velocity_batch_par(
        &self,
        points: &ArrayView2<f64>,
        grid: &ShapeCodeGrid,
    ) -> Result<Array2<f64>> {
        use rayon::prelude::*;
        let m = points.nrows();
        if m <= EVAL_CHUNK {
            return self.velocity_batch(points, grid);
        }
        let ranges: Vec<(usize, usize)> = (0..m)
            .step_by(EVAL_CHUNK)
            .map(|s| (s, (s + EVAL_CHUNK).min(m)))
            .collect();
        let parts: Vec<Result<Array2<f64>>> = ranges
            .par_iter()
            .map(|&(s, e)| self.velocity_batch(&points.slice(ndarray::s![s..e, ..]), grid))
            .collect();
        let mut out = Array2::zeros((m, 3));
        for (&(s, e), part) in ranges.iter().zip(parts) {
            out.slice_mut(ndarray::s![s..e, ..]).assign(&part?);
        }
        Ok(out)
    }

    /// Chunk-parallel reverse sweep that recomputes the forward activations
    /// at `points` instead of keeping them, trading one extra forward pass
    /// per step for trajectory-length-independent memory. Per-chunk gradient
    /// bundles merge in chunk order, so the reduction is deterministic.
    pub fn vjp_recompute_par(
        &self,
        grid: &ShapeCodeGrid,
        points: &ArrayView2<f64>,
        cotangent: &ArrayView2<f64>,
        grads: &mut GradientBundle,
    ) -> Result<Array2<f64>> {
        use rayon::prelude::*;
        let m = points.nrows();
        let ranges: Vec<(usize, usize)> = (0..m.max(1))
            .step_by(EVAL_CHUNK)
            .map(|s| (s, (s + EVAL_CHUNK).min(m)))
            .collect();
        let parts: Vec<Result<(Array2<f64>, GradientBundle)>> = ranges
            .par_iter()
            .map(|&(s, e)| {
                let pts = points.slice(ndarray::s![s..e, ..]);
                let (_, cache) = self.velocity_batch_cached(&pts, grid)?;
                let mut local = GradientBundle::zeros(self);
                let dx = self.vjp(
                    grid,
                    &cache,
                    &cotangent.slice(ndarray::s![s..e, ..]),
                    &mut local,
                );
                Ok((dx, local))
            })
            .collect();
        let mut d_points = Array2::zeros((m, 3));
        for (&(s, e), part) in ranges.iter().zip(parts) {
            let (dx, local) = part?;
            d_points.slice_mut(ndarray::s![s..e, ..]).assign(&dx);
            grads.merge(&local);
        }
        Ok(d_points)
    }
}

/// Cached activations of one batched field evaluation.
#[derive(Debug, Clone)]
pub struct EvalCache {
    pub points: Array2<f64>,
    pub zbar: Array2<f64>,
    pub fa_post: Vec<Array2<f64>>,
    pub df_post: Vec<Array2<f64>>,
}

/// Gradients mirroring the network parameters and one shape code.
#[derive(Debug, Clone)]
pub struct GradientBundle {
    pub fa: Vec<(Array2<f64>, Array1<f64>)>,
    pub df: Vec<(Array2<f64>, Array1<f64>)>,
    pub head: (Array2<f64>, Array1<f64>),
    /// Gradient w.r.t. the flat code vector of the active shape.
    pub code: Array1<f64>,
}

impl GradientBundle {
    pub fn zeros(net: &VelocityNet) -> Self {
        let layer_zeros = |l: &DenseLayer| {
            (
                Array2::zeros(l.weight.dim()),
                Array1::zeros(l.bias.len()),
            )
        };
        Self {
            fa: net.fa_layers.iter().map(layer_zeros).collect(),
            df: net.df_layers.iter().map(layer_zeros).collect(),
            head: layer_zeros(&net.df_head),
            code: Array1::zeros(net.arch.n_z),
        }
    }

    /// Parameter gradients in the canonical layer order (codes excluded).
    pub fn theta_layers(&self) -> impl Iterator<Item = (&Array2<f64>, &Array1<f64>)> {
        self.fa
            .iter()
            .chain(self.df.iter())
            .map(|(w, b)| (w, b))
            .chain(std::iter::once((&self.head.0, &self.head.1)))
    }

    /// Merge another bundle (same shapes) into this one.
    pub fn merge(&mut self, other: &GradientBundle) {
        for (a, b) in self.fa.iter_mut().zip(&other.fa) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
        for (a, b) in self.df.iter_mut().zip(&other.df) {
            a.0 += &b.0;
            a.1 += &b.1;
        }
        self.head.0 += &other.head.0;
        self.head.1 += &other.head.1;
        self.code += &other.code;
    }

    pub fn scale(&mut self, factor: f64) {
        for (w, b) in self.fa.iter_mut().chain(self.df.iter_mut()) {
            *w *= factor;
            *b *= factor;
        }
        self.head.0 *= factor;
        self.head.1 *= factor;
        self.code *= factor;
    }

    pub fn is_finite(&self) -> bool {
        self.theta_layers()
            .all(|(w, b)| w.iter().all(|v| v.is_finite()) && b.iter().all(|v| v.is_finite()))
            && self.code.iter().all(|v| v.is_finite())
    }
}

fn leaky_relu_inplace(a: &mut Array2<f64>, slope: f64) {
    a.mapv_inplace(|v| if v >= 0.0 { v } else { slope * v });
}

/// Multiply the cotangent by the activation derivative, recovered from the
/// post-activation sign (positive slope keeps signs).
fn leaky_relu_backward_inplace(g: &mut Array2<f64>, post: &Array2<f64>, slope: f64) {
    ndarray::Zip::from(g).and(post).for_each(|gv, &pv| {
        if pv < 0.0 {
            *gv *= slope;
        }
    });
}

/// Largest singular value via power iteration on `W^T W`.
fn operator_norm(w: &Array2<f64>) -> f64 {
    let n = w.ncols();
    let mut v = Array1::from_elem(n, 1.0 / (n as f64).sqrt());
    let mut sigma = 0.0;
    for _ in 0..50 {
        let wv = w.dot(&v);
        sigma = wv.dot(&wv).sqrt();
        let wtwv = w.t().dot(&wv);
        let norm = wtwv.dot(&wtwv).sqrt();
        if norm <= 0.0 {
            return 0.0;
        }
        v = wtwv / norm;
    }
    sigma
}

/// Standard normal draw (Box-Muller), deterministic given the generator.
pub fn standard_normal(rng: &mut impl Rng) -> f64 {
    loop {
        let u1: f64 = rng.gen();
        if u1 > f64::MIN_POSITIVE {
            let u2: f64 = rng.gen();
            return (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos();
        }
    }
}
