//! Shape ingestion: meshes, weighted point clouds, unit-cube normalization,
//! and synthetic shape generation.

pub mod cloud;
pub mod mesh;
pub mod synth;
pub mod vessel;

pub use cloud::{
    mesh_to_weighted_cloud, normalize_to_unit_cube, sample_without_replacement, subsample,
    UnitCubeTransform, WeightedPointCloud,
};
pub use mesh::{bounding_box, TriangleMesh};
pub use synth::{sweep_vessel, synth_shape, synth_vessel_model, SynthShape};
pub use vessel::{VesselModel, VesselPortion};
