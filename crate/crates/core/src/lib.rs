//! Ultrasound phantom scan processing: capture simulation, classical
//! segmentation, segmentation scoring, per-frame surgical metrics, watertight
//! mesh reconstruction and resection-volume shape augmentation.

pub mod metrics;
pub mod augment;
pub mod config;
pub mod model;
pub mod eval;
pub mod ingest;
pub mod raster;
pub mod reconstruct;
pub mod run;
pub mod phantom;
pub mod segment;
