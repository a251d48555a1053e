//! Dataset augmentation: rigid alignment (ad-hoc + CPD), correspondence
//! sampling with rotation-minimizing frames, thin-plate-spline fitting, and
//! the quality-gated generation loop.

pub mod correspond;
pub mod frames;
pub mod hull;
pub mod pipeline;
pub mod quality;
pub mod rigid;
pub mod tps;

pub use correspond::{sample_correspondences, CorrespondenceSet};
pub use frames::{bishop_frames, Frame};
pub use hull::{convex_hull, ConvexHull};
pub use pipeline::{
    augment_dataset, deform_pair, model_anchors, AugmentConfig, AugmentInput, AugmentOutput,
    AugmentRecord,
};
pub use quality::{mesh_quality, scaled_jacobian, QualityReport};
pub use rigid::{adhoc_rigid_align, cpd_rigid, CpdOutput, RigidAnchors, RigidTransform};
pub use tps::{tps_apply, tps_apply_mesh, tps_fit, TpsMap};
