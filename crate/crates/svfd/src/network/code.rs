//! Latent shape codes and their spatial grid reshaping.
//!
//! A code of dimension `N_z` is reinterpreted as a `g x g x g` grid of
//! `N_z / g^3` channel vectors. Flattening order is fixed so checkpoints are
//! portable: node index x varies fastest, then y, then z, with each node's
//! channels stored contiguously — the value at (ix, iy, iz, c) lives at
//! `((iz * g + iy) * g + ix) * channels + c`.

use ndarray::{Array1, Array2, ArrayView2};

use crate::error::{Error, Result};

/// Per-shape latent vector.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeCode {
    pub values: Array1<f64>,
}

impl ShapeCode {
    pub fn new(values: Array1<f64>) -> Self {
        Self { values }
    }

    pub fn zeros(n_z: usize) -> Self {
        Self {
            values: Array1::zeros(n_z),
        }
    }

    pub fn from_vec(values: Vec<f64>) -> Self {
        Self {
            values: Array1::from(values),
        }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn norm_squared(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum()
    }
}

/// Spatial reinterpretation of a shape code: grid nodes over the unit cube,
/// each holding a channel vector. The backing storage stays flat in the
/// documented order, so reshape and flatten are exact.
#[derive(Debug, Clone)]
pub struct ShapeCodeGrid {
    g: usize,
    channels: usize,
    values: Array1<f64>,
}

/// Reinterpret `z` as a `g_z^3` grid; errors when the dimension is not a
/// multiple of `g_z^3`.
pub fn reshape_code(z: &ShapeCode, g_z: usize) -> Result<ShapeCodeGrid> {
    ShapeCodeGrid::from_code(z, g_z)
}

impl ShapeCodeGrid {
    pub fn from_code(z: &ShapeCode, g_z: usize) -> Result<Self> {
        if g_z < 2 {
            return Err(Error::invalid("code grid needs g_z >= 2"));
        }
        let nodes = g_z * g_z * g_z;
        if z.len() == 0 || z.len() % nodes != 0 {
            return Err(Error::invalid(format!(
                "code dimension {} is not divisible by g_z^3 = {nodes}",
                z.len()
            )));
        }
        Ok(Self {
            g: g_z,
            channels: z.len() / nodes,
            values: z.values.clone(),
        })
    }

    /// Exact inverse of [`reshape_code`].
    pub fn flatten(&self) -> ShapeCode {
        ShapeCode::new(self.values.clone())
    }

    pub fn g(&self) -> usize {
        self.g
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn node_base(&self, ix: usize, iy: usize, iz: usize) -> usize {
        ((iz * self.g + iy) * self.g + ix) * self.channels
    }

    /// Channel vector stored at a grid node.
    pub fn node(&self, ix: usize, iy: usize, iz: usize) -> &[f64] {
        let base = self.node_base(ix, iy, iz);
        &self.values.as_slice().unwrap()[base..base + self.channels]
    }

    /// Trilinear interpolation at one point; coordinates outside `[0, 1]` are
    /// clamped so intermediate flow states may leave the unit cube.
    pub fn interpolate(&self, x: &[f64; 3]) -> Vec<f64> {
        let mut out = vec![0.0; self.channels];
        let (cell, t, _) = self.locate(x);
        for corner in 0..8 {
            let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
            let w = axis_weight(t[0], dx) * axis_weight(t[1], dy) * axis_weight(t[2], dz);
            let node = self.node(cell[0] + dx, cell[1] + dy, cell[2] + dz);
            for (o, v) in out.iter_mut().zip(node) {
                *o += w * v;
            }
        }
        out
    }

    /// Batched interpolation: rows of `points` map to rows of the output.
    pub fn interpolate_batch(&self, points: &ArrayView2<f64>) -> Array2<f64> {
        let mut out = Array2::zeros((points.nrows(), self.channels));
        for (i, row) in points.rows().into_iter().enumerate() {
            let vals = self.interpolate(&[row[0], row[1], row[2]]);
            for (c, v) in vals.iter().enumerate() {
                out[[i, c]] = *v;
            }
        }
        out
    }

    /// Reverse-mode product: given the cotangent of the interpolated values,
    /// accumulate gradients into the flat code layout and return the
    /// gradient with respect to the query points. Clamped axes propagate a
    /// zero position gradient.
    pub fn interpolate_vjp(
        &self,
        points: &ArrayView2<f64>,
        cotangent: &ArrayView2<f64>,
        d_code: &mut Array1<f64>,
    ) -> Array2<f64> {
        let mut d_points = Array2::zeros((points.nrows(), 3));
        let scale = (self.g - 1) as f64;
        for (i, row) in points.rows().into_iter().enumerate() {
            let x = [row[0], row[1], row[2]];
            let (cell, t, inside) = self.locate(&x);
            let cot = cotangent.row(i);
            for corner in 0..8 {
                let (dx, dy, dz) = (corner & 1, (corner >> 1) & 1, (corner >> 2) & 1);
                let wx = axis_weight(t[0], dx);
                let wy = axis_weight(t[1], dy);
                let wz = axis_weight(t[2], dz);
                let base = self.node_base(cell[0] + dx, cell[1] + dy, cell[2] + dz);
                let w = wx * wy * wz;
                let mut dot = 0.0;
                let node = &self.values.as_slice().unwrap()[base..base + self.channels];
                for c in 0..self.channels {
                    d_code[base + c] += w * cot[c];
                    dot += node[c] * cot[c];
                }
                let dwx = axis_weight_grad(dx) * wy * wz;
                let dwy = wx * axis_weight_grad(dy) * wz;
                let dwz = wx * wy * axis_weight_grad(dz);
                if inside[0] {
                    d_points[[i, 0]] += dwx * scale * dot;
                }
                if inside[1] {
                    d_points[[i, 1]] += dwy * scale * dot;
                }
                if inside[2] {
                    d_points[[i, 2]] += dwz * scale * dot;
                }
            }
        }
        d_points
    }

    /// Cell index, local coordinates, and whether each axis is strictly
    /// inside the (unclamped) unit interval.
    fn locate(&self, x: &[f64; 3]) -> ([usize; 3], [f64; 3], [bool; 3]) {
        let mut cell = [0usize; 3];
        let mut t = [0.0f64; 3];
        let mut inside = [false; 3];
        let scale = (self.g - 1) as f64;
        for k in 0..3 {
            inside[k] = (0.0..=1.0).contains(&x[k]);
            let u = x[k].clamp(0.0, 1.0);
            let s = u * scale;
            let i0 = (s.floor() as usize).min(self.g - 2);
            cell[k] = i0;
            t[k] = s - i0 as f64;
        }
        (cell, t, inside)
    }
}

fn axis_weight(t: f64, d: usize) -> f64 {
    if d == 1 {
        t
    } else {
        1.0 - t
    }
}

fn axis_weight_grad(d: usize) -> f64 {
    if d == 1 {
        1.0
    } else {
        -1.0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn smallest_grid_is_scalar_per_node() {
        let z = ShapeCode::new(Array1::from_iter((0..8).map(|i| i as f64)));
        let grid = reshape_code(&z, 2).unwrap();
        assert_eq!(grid.channels(), 1);
        assert_eq!(grid.node(1, 0, 0), &[1.0]);
        assert_eq!(grid.node(0, 1, 0), &[2.0]);
        assert_eq!(grid.node(0, 0, 1), &[4.0]);
    }

    #[test]
    fn default_grid_shape() {
        let z = ShapeCode::zeros(256);
        let grid = reshape_code(&z, 2).unwrap();
        assert_eq!(grid.g(), 2);
        assert_eq!(grid.channels(), 32);
    }

    #[test]
    fn reshape_round_trip_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let z = ShapeCode::new(Array1::from_iter((0..64).map(|_| rng.gen::<f64>())));
        let grid = reshape_code(&z, 2).unwrap();
        assert_eq!(grid.flatten(), z);
    }

    #[test]
    fn indivisible_dimension_rejected() {
        assert!(reshape_code(&ShapeCode::zeros(10), 2).is_err());
    }

    #[test]
    fn corners_reproduce_nodes() {
        let z = ShapeCode::new(Array1::from_iter((0..8).map(|i| i as f64)));
        let grid = reshape_code(&z, 2).unwrap();
        assert_relative_eq!(grid.interpolate(&[0.0, 0.0, 0.0])[0], 0.0);
        assert_relative_eq!(grid.interpolate(&[1.0, 0.0, 0.0])[0], 1.0);
        assert_relative_eq!(grid.interpolate(&[1.0, 1.0, 1.0])[0], 7.0);
    }

    #[test]
    fn center_is_mean_of_corners() {
        let z = ShapeCode::new(Array1::from_iter((0..8).map(|i| i as f64)));
        let grid = reshape_code(&z, 2).unwrap();
        assert_relative_eq!(grid.interpolate(&[0.5, 0.5, 0.5])[0], 3.5);
    }

    #[test]
    fn linear_fields_reproduced_exactly() {
        // grid values from f(x) = a . x + b are reproduced everywhere
        for g in [2usize, 3, 4] {
            let a = [1.3, -0.7, 2.1];
            let b = 0.4;
            let mut values = Vec::new();
            for iz in 0..g {
                for iy in 0..g {
                    for ix in 0..g {
                        let p = [
                            ix as f64 / (g - 1) as f64,
                            iy as f64 / (g - 1) as f64,
                            iz as f64 / (g - 1) as f64,
                        ];
                        values.push(a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + b);
                    }
                }
            }
            let grid = reshape_code(&ShapeCode::new(Array1::from(values)), g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(5);
            for _ in 0..100 {
                let p = [rng.gen::<f64>(), rng.gen::<f64>(), rng.gen::<f64>()];
                let want = a[0] * p[0] + a[1] * p[1] + a[2] * p[2] + b;
                assert_relative_eq!(grid.interpolate(&p)[0], want, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn out_of_range_clamped() {
        let z = ShapeCode::new(Array1::from_iter((0..8).map(|i| i as f64)));
        let grid = reshape_code(&z, 2).unwrap();
        assert_relative_eq!(grid.interpolate(&[-0.5, 0.0, 0.0])[0], 0.0);
        assert_relative_eq!(grid.interpolate(&[2.0, 1.0, 1.0])[0], 7.0);
    }

    #[test]
    fn vjp_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let n_z = 24; // g = 2, 3 channels
        let z = ShapeCode::new(Array1::from_iter((0..n_z).map(|_| rng.gen::<f64>())));
        let grid = reshape_code(&z, 2).unwrap();
        let points = array![[0.3, 0.6, 0.2], [0.9, 0.1, 0.5]];
        let cot = array![[1.0, -0.5, 2.0], [0.7, 0.3, -1.1]];
        let mut d_code = Array1::zeros(n_z);
        let d_points = grid.interpolate_vjp(&points.view(), &cot.view(), &mut d_code);

        let scalar = |grid: &ShapeCodeGrid, pts: &Array2<f64>| -> f64 {
            let out = grid.interpolate_batch(&pts.view());
            (&out * &cot).sum()
        };
        let h = 1e-6;
        // point gradient
        for i in 0..2 {
            for axis in 0..3 {
                let mut plus = points.clone();
                let mut minus = points.clone();
                plus[[i, axis]] += h;
                minus[[i, axis]] -= h;
                let fd = (scalar(&grid, &plus) - scalar(&grid, &minus)) / (2.0 * h);
                assert_relative_eq!(fd, d_points[[i, axis]], epsilon = 1e-8);
            }
        }
        // code gradient
        for e in (0..n_z).step_by(5) {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp.values[e] += h;
            zm.values[e] -= h;
            let gp = reshape_code(&zp, 2).unwrap();
            let gm = reshape_code(&zm, 2).unwrap();
            let fd = (scalar(&gp, &points) - scalar(&gm, &points)) / (2.0 * h);
            assert_relative_eq!(fd, d_code[e], epsilon = 1e-8);
        }
    }
}
