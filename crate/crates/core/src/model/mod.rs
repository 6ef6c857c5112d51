//! Shared data model for every stage of the workflow.
//!
//! Geometry conventions:
//! - 2D images are `Array2` indexed `[[y, x]]`; pixel `(x, y)` covers the
//!   continuous square `[x, x+1) × [y, y+1)`, so its center is `(x+0.5, y+0.5)`.
//! - Volumes are `Array3` indexed `[[z, y, x]]` with `z` the scan axis.
//! - In-plane pixels are isotropic (`pixel_size_mm`); the scan axis has its own
//!   spacing (`slice_spacing_mm`).

mod contour;
mod grid;
mod labels;
mod manifest;
mod mesh;
mod stack;

pub use contour::{boundary_loops, polygon_signed_area, rasterize_polygon, Contour};
pub use grid::VoxelGrid;
pub use labels::{class_mask_2d, Class, LabelVolume};
pub use manifest::ScanManifest;
pub use mesh::TriMesh;
pub use stack::ImageStack;

use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum ModelError {
    #[error("invalid manifest: {0}")]
    InvalidManifest(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid class code {0} (expected 0..=3)")]
    InvalidClass(u8),
    #[error("contour needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("contour has zero signed area")]
    ZeroArea,
    #[error("contour is self-intersecting")]
    SelfIntersecting,
    #[error("contour has non-finite coordinates")]
    NonFinite,
    #[error("triangle {triangle} references vertex {index} but mesh has {count} vertices")]
    IndexOutOfRange {
        triangle: usize,
        index: u32,
        count: usize,
    },
    #[error("invalid voxel grid: {0}")]
    InvalidGrid(String),
}
