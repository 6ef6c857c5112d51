//! Classical (non-learning) segmentation cascade.
//!
//! Per slice: the outer gland boundary and the inner boundary of the
//! peripheral zone come from active contours; the resection cavity comes from
//! morphological contrast enhancement, a morphological Chan-Vese evolution and
//! a flood fill from the urethral axis. The three regions are composed into a
//! 4-class label image with precedence resection > central > peripheral.

mod chanvese;
mod flood;
mod morphology;
mod pipeline;
mod snake;

pub use chanvese::{morph_chan_vese, morph_chan_vese_in, ChanVeseOutcome, ChanVeseParams};
pub use flood::flood_fill;
pub use morphology::{black_tophat, grey_dilate_disk, grey_erode_disk, morph_contrast_enhance, white_tophat};
pub use pipeline::{
    segment_frame, segment_stack, FrameDiagnostics, FramePrior, FrameSegmentation, SegmentConfig,
    SliceStatus, StackSegmentation,
};
pub use snake::{active_contour, EdgeField, Snake, SnakeOutcome, SnakeParams};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error, PartialEq)]
pub enum SegmentError {
    #[error("active contour needs at least 4 points, got {0}")]
    TooFewPoints(usize),
    #[error("active contour energy became non-finite")]
    NonFiniteEnergy,
    #[error("active contour collapsed to a point")]
    Collapsed,
    #[error("morphology radius must be at least 1")]
    BadRadius,
    #[error("Chan-Vese initial mask is empty or covers the whole domain")]
    DegenerateInit,
    #[error("no contrast between initial regions (inside {inside:.2}, outside {outside:.2})")]
    NoContrast { inside: f64, outside: f64 },
    #[error("flood-fill seed ({0}, {1}) lies outside the image")]
    SeedOutOfBounds(i64, i64),
    #[error("no object found: inside/outside contrast {0:.2} below threshold")]
    NoObject(f64),
    #[error("inner contour is not contained in the outer contour")]
    ContainmentViolation,
    #[error("invalid segmentation config: {0}")]
    InvalidConfig(String),
    #[error("{failed} of {total} slices failed to segment")]
    FatalSegmentation { failed: usize, total: usize },
    #[error("empty stack")]
    EmptyStack,
    #[error(transparent)]
    Model(#[from] ModelError),
}
