//! Random initialization of network parameters and shape codes.

use ndarray::Array1;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::code::ShapeCode;
use super::net::{standard_normal, Arch, VelocityNet};
use crate::error::Result;

/// Kaiming-normal weights (fan-in mode, leaky-ReLU gain), zero biases, and
/// one shape code per source drawn i.i.d. from `N(0, (2/N_z) I)`.
/// Deterministic given the seed.
pub fn init_params(arch: Arch, n_shapes: usize, seed: u64) -> Result<(VelocityNet, Vec<ShapeCode>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut net = VelocityNet::zeros(arch)?;
    let gain = (2.0 / (1.0 + arch.negative_slope * arch.negative_slope)).sqrt();
    for layer in net.layers_mut() {
        let std = gain / (layer.weight.ncols() as f64).sqrt();
        layer
            .weight
            .mapv_inplace(|_| std * standard_normal(&mut rng));
    }
    let code_std = (2.0 / arch.n_z as f64).sqrt();
    let codes = (0..n_shapes)
        .map(|_| {
            ShapeCode::new(Array1::from_iter(
                (0..arch.n_z).map(|_| code_std * standard_normal(&mut rng)),
            ))
        })
        .collect();
    Ok((net, codes))
}
