//! Mesh and point-cloud file formats.

pub mod obj;
pub mod ply;

use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::TriangleMesh;

pub use obj::read_obj;
pub use ply::{read_cloud_ply, read_mesh_ply, write_cloud_ply, write_mesh_ply, PlyFormat};

/// Mesh file formats supported by [`load_mesh`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Result<Self> {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(|e| e.to_ascii_lowercase())
            .as_deref()
        {
            Some("obj") => Ok(Self::Obj),
            Some("ply") => Ok(Self::Ply),
            other => Err(Error::invalid(format!(
                "cannot infer mesh format from extension {other:?} (use .obj or .ply)"
            ))),
        }
    }
}

/// Load a triangle mesh, validating all face indices.
pub fn load_mesh(path: &Path, format: MeshFormat) -> Result<TriangleMesh> {
    match format {
        MeshFormat::Obj => read_obj(path),
        MeshFormat::Ply => read_mesh_ply(path),
    }
}

/// Load a shape file as a weighted point cloud: meshes (OBJ, or PLY with a
/// face element) are converted via their face centroids and areas, and plain
/// PLY vertex clouds are read with their stored weights.
pub fn load_shape_cloud(path: &Path) -> Result<crate::geometry::WeightedPointCloud> {
    match MeshFormat::from_path(path)? {
        MeshFormat::Obj => crate::geometry::mesh_to_weighted_cloud(&read_obj(path)?),
        MeshFormat::Ply => match read_mesh_ply(path) {
            Ok(mesh) if mesh.face_count() > 0 => crate::geometry::mesh_to_weighted_cloud(&mesh),
            _ => read_cloud_ply(path),
        },
    }
}
