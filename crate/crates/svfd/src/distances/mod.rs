//! Data attachment measures between weighted point clouds and the local
//! distance diagnostics.

pub mod chamfer;
pub mod nn;
pub mod sinkhorn;

pub use chamfer::{
    chamfer, chamfer_grad, chamfer_normals, chamfer_normals_grad, chamfer_point_to_plane,
    chamfer_point_to_plane_grad, chamfer_point_to_plane_weighted, chamfer_weighted,
    chamfer_weighted_grad, local_distances, summary, ValueGrad,
};
pub use nn::{nearest_neighbors, NearestResult};
pub use sinkhorn::{sinkhorn_divergence, sinkhorn_divergence_grad, SinkhornConfig};

/// The data attachment measures selectable in losses and diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Measure {
    /// Chamfer distance.
    Cd,
    /// Weight-aware chamfer distance.
    Cdw,
    /// Point-to-plane chamfer distance.
    Pcd,
    /// Weight-aware point-to-plane chamfer distance.
    Pcdw,
    /// Chamfer distance with a normals-alignment penalty.
    Ncd,
    /// Debiased Sinkhorn divergence.
    Sd,
}

impl Measure {
    /// Whether the measure decomposes into per-point terms usable as an
    /// adaptive-sampling cache.
    pub fn is_pointwise(self) -> bool {
        !matches!(self, Measure::Sd)
    }

    /// Whether the measure needs normals on both clouds.
    pub fn needs_normals(self) -> bool {
        matches!(self, Measure::Pcd | Measure::Pcdw | Measure::Ncd)
    }
}

impl std::str::FromStr for Measure {
    type Err = crate::Error;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "cd" => Ok(Measure::Cd),
            "cdw" => Ok(Measure::Cdw),
            "pcd" => Ok(Measure::Pcd),
            "pcdw" => Ok(Measure::Pcdw),
            "ncd" => Ok(Measure::Ncd),
            "sd" => Ok(Measure::Sd),
            other => Err(crate::Error::invalid(format!(
                "unknown measure '{other}' (expected cd, cdw, pcd, pcdw, ncd, or sd)"
            ))),
        }
    }
}

impl std::fmt::Display for Measure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Measure::Cd => "cd",
            Measure::Cdw => "cdw",
            Measure::Pcd => "pcd",
            Measure::Pcdw => "pcdw",
            Measure::Ncd => "ncd",
            Measure::Sd => "sd",
        };
        f.write_str(s)
    }
}
