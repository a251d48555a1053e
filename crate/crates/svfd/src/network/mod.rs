//! The velocity-field model: latent code grids, the three-stage network, its
//! reverse-mode gradients, and the checkpoint container.

pub mod checkpoint;
pub mod code;
pub mod fpe;
pub mod init;
pub mod net;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use code::{reshape_code, ShapeCode, ShapeCodeGrid};
pub use fpe::{fpe, fpe_batch};
pub use init::init_params;
pub use net::{standard_normal, Arch, DenseLayer, EvalCache, GradientBundle, VelocityNet};
