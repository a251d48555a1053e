//! Diffeomorphic registration of 3D shapes represented as weighted point clouds.
//!
//! Shapes are registered to a common template by deforming the ambient space
//! with the unit-time flow of a stationary velocity field. The field is a
//! fully-connected network conditioned on per-shape latent codes that are
//! optimized jointly with the network weights (auto-decoder); at test time only
//! the code of a new shape is fitted. Backward integration of the same flow
//! yields the inverse map, and sampling the latent space generates synthetic
//! shapes from the template.
//!
//! Module map:
//! - [`geometry`]: meshes, weighted point clouds, unit-cube normalization,
//!   synthetic vessel shapes.
//! - [`io`]: OBJ/PLY readers and writers.
//! - [`distances`]: Chamfer-family discrepancies, Sinkhorn divergence, local
//!   distance diagnostics.
//! - [`network`]: the velocity-field model, latent code grids, reverse-mode
//!   gradients, checkpoint container.
//! - [`flow`]: forward/backward integration of the flow ODE and the kinetic
//!   energy regularizer.
//! - [`training`]: joint optimization loop, latent-code inference, Adam and
//!   L-BFGS optimizers, adaptive point sampling.
//! - [`latent`]: latent-space analytics and generative sampling.
//! - [`augment`]: rigid alignment (ad-hoc + CPD), correspondence sampling with
//!   rotation-minimizing frames, thin-plate-spline fitting, and the dataset
//!   augmentation pipeline with its mesh quality gate.

pub mod augment;
pub mod distances;
pub mod error;
pub mod flow;
pub mod geometry;
pub mod io;
pub mod latent;
pub mod network;
pub mod training;

pub use error::{Error, Result};
