//! Voxel grids and closed triangle surfaces from label volumes.

mod grids;
mod io;
mod surface;

pub use grids::{derive_component_grids, ComponentGrids};
pub use io::{export_mesh, import_mesh, MeshFormat};
pub use surface::{laplacian_smooth, marching_cubes, mesh_stats, MeshStats};

use std::path::PathBuf;

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum ReconstructError {
    #[error("grid has no occupied voxels")]
    EmptyGrid,
    #[error("closed mesh encloses negative volume {volume_mm3} (inward winding)")]
    InconsistentWinding { volume_mm3: f64 },
    #[error("mesh has no triangles")]
    EmptyMesh,
    #[error("{path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: malformed mesh file: {reason}")]
    MalformedFile { path: PathBuf, reason: String },
    #[error("unknown mesh format {0:?} (expected stl, obj or ply)")]
    UnknownFormat(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}
