//! Latent-space analytics and generative sampling.
//!
//! Trained shape codes span a low-dimensional space: new shapes are drawn
//! from a zero-mean Gaussian with the empirical code covariance (or by
//! linear interpolation between two codes) and realized by integrating the
//! template backward through the flow conditioned on the sampled code.

use nalgebra::{DMatrix, DVector};
use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::flow::{integrate_backward_modified, NetField};
use crate::geometry::WeightedPointCloud;
use crate::network::{reshape_code, standard_normal, ShapeCode, VelocityNet};

/// Training codes with their shape identifiers.
#[derive(Debug, Clone)]
pub struct CodeMatrix {
    pub ids: Vec<String>,
    pub codes: Vec<ShapeCode>,
}

impl CodeMatrix {
    pub fn new(ids: Vec<String>, codes: Vec<ShapeCode>) -> Result<Self> {
        if ids.len() != codes.len() {
            return Err(Error::invalid("one id per code required"));
        }
        if let Some(first) = codes.first() {
            if codes.iter().any(|c| c.len() != first.len()) {
                return Err(Error::invalid("codes must share one dimension"));
            }
        }
        let mut sorted = ids.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != ids.len() {
            return Err(Error::invalid("code ids must be unique"));
        }
        Ok(Self { ids, codes })
    }

    pub fn n_shapes(&self) -> usize {
        self.codes.len()
    }

    pub fn dim(&self) -> usize {
        self.codes.first().map_or(0, |c| c.len())
    }

    fn mean(&self) -> Vec<f64> {
        let d = self.dim();
        let mut mean = vec![0.0; d];
        for c in &self.codes {
            for (m, v) in mean.iter_mut().zip(c.values.iter()) {
                *m += v;
            }
        }
        for m in &mut mean {
            *m /= self.n_shapes() as f64;
        }
        mean
    }
}

/// Unbiased covariance of the codes: `1/(N-1) sum (z - mean)(z - mean)^T`.
pub fn empirical_covariance(codes: &CodeMatrix) -> Result<DMatrix<f64>> {
    let n = codes.n_shapes();
    if n < 2 {
        return Err(Error::invalid(
            "covariance needs at least 2 codes (unbiased divisor is N - 1)",
        ));
    }
    let d = codes.dim();
    let mean = codes.mean();
    let mut cov = DMatrix::<f64>::zeros(d, d);
    for c in &codes.codes {
        let centered = DVector::from_iterator(d, c.values.iter().zip(&mean).map(|(v, m)| v - m));
        cov.syger(1.0 / (n as f64 - 1.0), &centered, &centered, 1.0);
    }
    // syger fills one triangle; mirror it
    for r in 0..d {
        for c in (r + 1)..d {
            cov[(r, c)] = cov[(c, r)];
        }
    }
    Ok(cov)
}

/// Draw `n` codes from `N(0, cov)` through a symmetric eigendecomposition;
/// negative eigenvalues (numerical noise of a rank-deficient covariance) are
/// floored at zero. Deterministic given the seed.
pub fn sample_codes(cov: &DMatrix<f64>, n: usize, seed: u64) -> Result<Vec<ShapeCode>> {
    let d = cov.nrows();
    if cov.ncols() != d {
        return Err(Error::invalid("covariance must be square"));
    }
    let asym = (cov - cov.transpose()).norm();
    if asym > 1e-9 * cov.norm().max(1e-300) {
        return Err(Error::invalid("covariance must be symmetric"));
    }
    let eigen = cov.clone().symmetric_eigen();
    let min_eig = eigen.eigenvalues.min();
    if min_eig < -1e-8 * eigen.eigenvalues.amax().max(1e-300) {
        return Err(Error::numerical(format!(
            "covariance has a significantly negative eigenvalue ({min_eig})"
        )));
    }
    let scales: Vec<f64> = eigen
        .eigenvalues
        .iter()
        .map(|&l| l.max(0.0).sqrt())
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(n);
    for _ in 0..n {
        let white = DVector::from_iterator(d, (0..d).map(|_| standard_normal(&mut rng)));
        let mut sample = DVector::zeros(d);
        for (k, &s) in scales.iter().enumerate() {
            if s > 0.0 {
                sample += eigen.eigenvectors.column(k) * (s * white[k]);
            }
        }
        out.push(ShapeCode::new(Array1::from_iter(sample.iter().copied())));
    }
    Ok(out)
}

/// Linear interpolation `(1 - t) a + t b` in code space.
pub fn interpolate_codes(a: &ShapeCode, b: &ShapeCode, t: f64) -> Result<ShapeCode> {
    if a.len() != b.len() {
        return Err(Error::invalid("codes have different dimensions"));
    }
    Ok(ShapeCode::new(&a.values * (1.0 - t) + &b.values * t))
}

/// Projection of the centered codes onto the top principal components.
#[derive(Debug, Clone)]
pub struct PcaProjection {
    /// One row per shape, `dims` columns.
    pub projections: Vec<Vec<f64>>,
    /// Variance captured by each kept component, non-increasing.
    pub explained_variance: Vec<f64>,
    /// Code-space mean removed before projecting.
    pub mean: Vec<f64>,
    /// Principal axes, one unit row vector per kept component.
    pub components: Vec<Vec<f64>>,
}

impl PcaProjection {
    /// Project an arbitrary code onto the stored basis.
    pub fn project(&self, code: &ShapeCode) -> Result<Vec<f64>> {
        if code.len() != self.mean.len() {
            return Err(Error::invalid("code dimension does not match the PCA basis"));
        }
        Ok(self
            .components
            .iter()
            .map(|axis| {
                axis.iter()
                    .zip(code.values.iter().zip(&self.mean))
                    .map(|(a, (v, m))| a * (v - m))
                    .sum()
            })
            .collect())
    }
}

/// PCA via SVD of the centered code matrix. The sign convention fixes each
/// component so its largest-magnitude loading is positive.
pub fn pca_project(codes: &CodeMatrix, dims: usize) -> Result<PcaProjection> {
    let n = codes.n_shapes();
    if n < dims || dims == 0 {
        return Err(Error::invalid(format!(
            "cannot extract {dims} components from {n} codes"
        )));
    }
    let d = codes.dim();
    let mean = codes.mean();
    let mut centered = DMatrix::<f64>::zeros(n, d);
    for (i, c) in codes.codes.iter().enumerate() {
        for j in 0..d {
            centered[(i, j)] = c.values[j] - mean[j];
        }
    }
    let svd = nalgebra::SVD::new(centered.clone(), true, true);
    let u = svd.u.as_ref().unwrap();
    let vt = svd.v_t.as_ref().unwrap();
    let singular = &svd.singular_values;

    let mut projections = vec![vec![0.0; dims]; n];
    let mut explained = Vec::with_capacity(dims);
    let mut components = Vec::with_capacity(dims);
    for k in 0..dims {
        let sigma = if k < singular.len() { singular[k] } else { 0.0 };
        // flip so the largest-magnitude loading of the component is positive
        let loading = vt.row(k);
        let mut dominant = 0.0f64;
        for v in loading.iter() {
            if v.abs() > dominant.abs() {
                dominant = *v;
            }
        }
        let sign = if dominant < 0.0 { -1.0 } else { 1.0 };
        for i in 0..n {
            projections[i][k] = sign * u[(i, k)] * sigma;
        }
        explained.push(sigma * sigma / (n as f64 - 1.0).max(1.0));
        components.push(loading.iter().map(|v| sign * v).collect());
    }
    Ok(PcaProjection {
        projections,
        explained_variance: explained,
        mean,
        components,
    })
}

/// Realize a code as a shape: integrate the template backward through the
/// conditioned flow; weights (and normals, if any) are carried over from the
/// template.
pub fn generate_shape(
    code: &ShapeCode,
    template: &WeightedPointCloud,
    net: &VelocityNet,
    steps: usize,
) -> Result<WeightedPointCloud> {
    let grid = reshape_code(code, net.arch.g_z)?;
    let field = NetField { net, grid: &grid };
    let bwd = integrate_backward_modified(&field, &template.points_matrix().view(), steps)?;
    template.with_points_matrix(bwd.inverse_mapped(), true)
}
