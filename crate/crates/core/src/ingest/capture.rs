use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::IngestError;
use crate::model::{ImageStack, ScanManifest};

/// Bundled capture defaults for a known ultrasound machine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum MachineProfile {
    #[serde(rename = "sonoscape-e1")]
    SonoscapeE1,
    #[serde(rename = "ge-logiq-p6")]
    GeLogiqP6,
}

impl MachineProfile {
    pub const ALL: [MachineProfile; 2] = [MachineProfile::SonoscapeE1, MachineProfile::GeLogiqP6];

    pub fn name(self) -> &'static str {
        match self {
            MachineProfile::SonoscapeE1 => "sonoscape-e1",
            MachineProfile::GeLogiqP6 => "ge-logiq-p6",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|p| p.name() == name)
    }

    /// Size `(width, height)` of the captured video frame.
    pub fn frame_size(self) -> (usize, usize) {
        match self {
            MachineProfile::SonoscapeE1 => (640, 480),
            MachineProfile::GeLogiqP6 => (720, 540),
        }
    }

    /// Capture defaults. The pixel size is left to the caller: neither
    /// machine's physical pixel pitch is known.
    pub fn capture_config(self, pixel_size_mm: f64) -> CaptureConfig {
        let (roi, retain_count, gray_threshold) = match self {
            MachineProfile::SonoscapeE1 => ([192, 112, 256, 256], 85, 4.0),
            MachineProfile::GeLogiqP6 => ([232, 142, 256, 256], 130, 3.5),
        };
        CaptureConfig {
            gray_threshold,
            roi,
            fps: 30.0,
            scan_length_mm: 60.0,
            retain_count,
            frame_stride: 1,
            pixel_size_mm,
            source_id: self.name().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CaptureConfig {
    /// Scan start = first frame whose mean gray value exceeds this.
    pub gray_threshold: f64,
    /// Crop rectangle `[x, y, w, h]` in frame pixels.
    pub roi: [usize; 4],
    pub fps: f64,
    pub scan_length_mm: f64,
    pub retain_count: usize,
    pub frame_stride: usize,
    pub pixel_size_mm: f64,
    #[serde(default)]
    pub source_id: String,
}

impl CaptureConfig {
    pub fn validate(&self) -> Result<(), IngestError> {
        let bad = |m: &str| Err(IngestError::InvalidConfig(m.to_string()));
        if !(self.gray_threshold > 0.0 && self.gray_threshold < 255.0) {
            return bad("gray_threshold must lie in (0, 255)");
        }
        if self.roi[2] == 0 || self.roi[3] == 0 {
            return bad("roi must have positive size");
        }
        if !(self.fps > 0.0) || !(self.scan_length_mm > 0.0) || !(self.pixel_size_mm > 0.0) {
            return bad("fps, scan_length_mm and pixel_size_mm must be > 0");
        }
        if self.retain_count == 0 || self.frame_stride == 0 {
            return bad("retain_count and frame_stride must be >= 1");
        }
        Ok(())
    }
}

pub fn frame_mean(frame: &Array2<u8>) -> f64 {
    if frame.is_empty() {
        return 0.0;
    }
    frame.iter().map(|&v| v as u64).sum::<u64>() as f64 / frame.len() as f64
}

/// Index of the first frame whose mean gray value exceeds the threshold.
pub fn detect_scan_start(frames: &[Array2<u8>], cfg: &CaptureConfig) -> Result<usize, IngestError> {
    if frames.is_empty() {
        return Err(IngestError::NoFrames);
    }
    let means: Vec<f64> = frames.par_iter().map(frame_mean).collect();
    means
        .iter()
        .position(|&m| m > cfg.gray_threshold)
        .ok_or(IngestError::NoScanDetected {
            threshold: cfg.gray_threshold,
        })
}

/// Crops `retain_count` frames `start, start + stride, …` to the ROI.
pub fn assemble_stack(frames: &[Array2<u8>], start: usize, cfg: &CaptureConfig) -> Result<ImageStack, IngestError> {
    cfg.validate()?;
    let needed = cfg.retain_count * cfg.frame_stride;
    if start + needed > frames.len() {
        return Err(IngestError::InsufficientFrames {
            needed,
            available: frames.len().saturating_sub(start),
        });
    }
    let [x, y, w, h] = cfg.roi;
    let mut slices = Vec::with_capacity(cfg.retain_count);
    for k in 0..cfg.retain_count {
        let f = &frames[start + k * cfg.frame_stride];
        let (fh, fw) = f.dim();
        if x + w > fw || y + h > fh {
            return Err(IngestError::RoiOutOfBounds {
                roi: cfg.roi,
                width: fw,
                height: fh,
            });
        }
        slices.push(f.slice(s![y..y + h, x..x + w]).to_owned());
    }
    let manifest = ScanManifest::new(
        cfg.retain_count,
        w,
        h,
        cfg.pixel_size_mm,
        cfg.scan_length_mm,
        cfg.source_id.clone(),
    )?;
    Ok(ImageStack::new(manifest, slices)?)
}

/// A synthetic video capture: dark frames before the probe sweep starts,
/// then every slice embedded at the ROI, each held for `frame_stride` frames.
#[derive(Debug, Clone)]
pub struct SimulatedCapture {
    pub frames: Vec<Array2<u8>>,
    /// Index of the first frame showing the scan.
    pub onset: usize,
}

pub fn simulate_capture(
    stack: &ImageStack,
    cfg: &CaptureConfig,
    frame_size: (usize, usize),
    lead_in: usize,
    seed: u64,
) -> Result<SimulatedCapture, IngestError> {
    cfg.validate()?;
    let (fw, fh) = frame_size;
    let [x, y, w, h] = cfg.roi;
    if x + w > fw || y + h > fh {
        return Err(IngestError::RoiOutOfBounds {
            roi: cfg.roi,
            width: fw,
            height: fh,
        });
    }
    let (sh, sw) = stack.manifest().slice_shape();
    if (sh, sw) != (h, w) {
        return Err(IngestError::InvalidConfig(format!(
            "roi {w}x{h} does not match slice size {sw}x{sh}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut frames = Vec::with_capacity(lead_in + stack.len() * cfg.frame_stride);
    for _ in 0..lead_in {
        frames.push(Array2::from_shape_simple_fn((fh, fw), || rng.random_range(0..=3u8)));
    }
    for slice in stack.slices() {
        let mut f = Array2::<u8>::zeros((fh, fw));
        f.slice_mut(s![y..y + h, x..x + w]).assign(slice);
        for _ in 0..cfg.frame_stride {
            frames.push(f.clone());
        }
    }
    Ok(SimulatedCapture { frames, onset: lead_in })
}
