//! Capture simulation: scan-start detection, ROI cropping, stack assembly,
//! and the on-disk stack/label formats.

mod capture;
mod io;

pub use capture::{
    assemble_stack, detect_scan_start, frame_mean, simulate_capture, CaptureConfig, MachineProfile, SimulatedCapture,
};
pub use io::{read_frames, read_labels, read_stack, write_frames, write_labels, write_stack, MANIFEST_FILE};

use thiserror::Error;

use crate::model::ModelError;

#[derive(Debug, Error)]
pub enum IngestError {
    #[error("no frame has a mean gray value above {threshold}")]
    NoScanDetected { threshold: f64 },
    #[error("need {needed} frames from the scan start but only {available} are available")]
    InsufficientFrames { needed: usize, available: usize },
    #[error("ROI {roi:?} does not fit a {width}x{height} frame")]
    RoiOutOfBounds { roi: [usize; 4], width: usize, height: usize },
    #[error("empty frame sequence")]
    NoFrames,
    #[error("invalid capture config: {0}")]
    InvalidConfig(String),
    #[error("malformed manifest: {0}")]
    MalformedManifest(String),
    #[error("manifest declares {expected} slices but {found} were found")]
    SliceCountMismatch { expected: usize, found: usize },
    #[error("corrupt image {path}: {reason}")]
    CorruptImage { path: String, reason: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Model(#[from] ModelError),
}
