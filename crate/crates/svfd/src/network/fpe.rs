//! Fourier positional encoding of feature vectors.
//!
//! Frequencies follow a base-2 ladder: block order is the identity features,
//! then `sin(2^k pi f)` and `cos(2^k pi f)` for `k = 0 .. N_e - 1`, applied
//! elementwise. Output width is `(2 N_e + 1)` times the input width.

use ndarray::{Array2, ArrayView2};

/// Encode a single feature vector.
pub fn fpe(features: &[f64], n_e: usize) -> Vec<f64> {
    let w = features.len();
    let mut out = Vec::with_capacity((2 * n_e + 1) * w);
    out.extend_from_slice(features);
    for k in 0..n_e {
        let freq = (1u64 << k) as f64 * std::f64::consts::PI;
        out.extend(features.iter().map(|f| (freq * f).sin()));
        out.extend(features.iter().map(|f| (freq * f).cos()));
    }
    out
}

/// Encode a batch, rows independent.
pub fn fpe_batch(features: &ArrayView2<f64>, n_e: usize) -> Array2<f64> {
    let (m, w) = features.dim();
    let mut out = Array2::zeros((m, (2 * n_e + 1) * w));
    for i in 0..m {
        for j in 0..w {
            out[[i, j]] = features[[i, j]];
        }
        for k in 0..n_e {
            let freq = (1u64 << k) as f64 * std::f64::consts::PI;
            let base = (1 + 2 * k) * w;
            for j in 0..w {
                let v = freq * features[[i, j]];
                out[[i, base + j]] = v.sin();
                out[[i, base + w + j]] = v.cos();
            }
        }
    }
    out
}

/// Reverse-mode product: cotangent of the encoded features back to the input
/// features.
pub fn fpe_vjp(
    features: &ArrayView2<f64>,
    cotangent: &ArrayView2<f64>,
    n_e: usize,
) -> Array2<f64> {
    let (m, w) = features.dim();
    let mut out = Array2::zeros((m, w));
    for i in 0..m {
        for j in 0..w {
            out[[i, j]] = cotangent[[i, j]];
        }
        for k in 0..n_e {
            let freq = (1u64 << k) as f64 * std::f64::consts::PI;
            let base = (1 + 2 * k) * w;
            for j in 0..w {
                let v = freq * features[[i, j]];
                out[[i, j]] += freq
                    * (cotangent[[i, base + j]] * v.cos() - cotangent[[i, base + w + j]] * v.sin());
            }
        }
    }
    out
}

/// Upper bound on the operator norm of the encoding's Jacobian, used when
/// bounding the Lipschitz constant of the velocity field.
pub fn fpe_lipschitz_factor(n_e: usize) -> f64 {
    let sum: f64 = (0..n_e)
        .map(|k| {
            let f = (1u64 << k) as f64 * std::f64::consts::PI;
            2.0 * f * f
        })
        .sum();
    (1.0 + sum).sqrt()
}
