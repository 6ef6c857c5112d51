//! The run configuration: one TOML file with a section per stage.
//!
//! ```toml
//! seed = 7
//!
//! [scan]                 # required
//! pixel_size_mm = 0.2    # required
//! slice_count = 85
//! width = 256
//! height = 256
//! scan_length_mm = 60.0
//!
//! [synth]
//! preset = "resected"    # or "unresected"
//! speckle_sigma = 0.05
//!
//! [segment]
//! gauss_sigma = 2.0
//! ```
//!
//! Every other section (`ingest`, `segment`, `eval`, `metrics`,
//! `reconstruct`, `augment`) is optional and falls back to defaults. All
//! randomness derives from the top-level `seed`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::augment::AugmentConfig;
use crate::ingest::{CaptureConfig, MachineProfile};
use crate::metrics::DEFAULT_HARMONICS;
use crate::model::ScanManifest;
use crate::phantom::PhantomSpec;
use crate::reconstruct::MeshFormat;
use crate::segment::SegmentConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("config: {0}")]
    Parse(String),
    #[error("config override {0:?} must look like section.key=value")]
    BadOverride(String),
    #[error("config field `{field}`: {reason}")]
    Invalid { field: String, reason: String },
}

fn invalid(field: &str, reason: impl ToString) -> ConfigError {
    ConfigError::Invalid {
        field: field.to_string(),
        reason: reason.to_string(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScanSection {
    pub pixel_size_mm: f64,
    #[serde(default = "ScanSection::default_slices")]
    pub slice_count: usize,
    #[serde(default = "ScanSection::default_side")]
    pub width: usize,
    #[serde(default = "ScanSection::default_side")]
    pub height: usize,
    #[serde(default = "ScanSection::default_length")]
    pub scan_length_mm: f64,
    #[serde(default = "ScanSection::default_source")]
    pub source_id: String,
}

impl ScanSection {
    fn default_slices() -> usize {
        85
    }
    fn default_side() -> usize {
        256
    }
    fn default_length() -> f64 {
        60.0
    }
    fn default_source() -> String {
        "synthetic".into()
    }

    pub fn with_pixel_size(pixel_size_mm: f64) -> Self {
        Self {
            pixel_size_mm,
            slice_count: Self::default_slices(),
            width: Self::default_side(),
            height: Self::default_side(),
            scan_length_mm: Self::default_length(),
            source_id: Self::default_source(),
        }
    }

    pub fn manifest(&self) -> Result<ScanManifest, ConfigError> {
        ScanManifest::new(
            self.slice_count,
            self.height,
            self.width,
            self.pixel_size_mm,
            self.scan_length_mm,
            self.source_id.clone(),
        )
        .map_err(|e| invalid("scan", e))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    #[default]
    Resected,
    Unresected,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSection {
    pub preset: Preset,
    /// Overrides the preset's speckle level.
    pub speckle_sigma: Option<f64>,
    /// Full phantom description; replaces the preset when given. Its seed is
    /// replaced by the top-level seed.
    pub phantom: Option<PhantomSpec>,
}

impl SynthSection {
    pub fn phantom_spec(&self, seed: u64) -> PhantomSpec {
        let mut spec = match (&self.phantom, self.preset) {
            (Some(p), _) => p.clone(),
            (None, Preset::Resected) => PhantomSpec::resected(seed),
            (None, Preset::Unresected) => PhantomSpec::unresected(seed),
        };
        spec.seed = seed;
        if let Some(s) = self.speckle_sigma {
            spec.speckle_sigma = s;
        }
        spec
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct IngestSection {
    /// Directory of captured frames (`*.png`, file-name order).
    pub frames_dir: Option<PathBuf>,
    pub profile: Option<MachineProfile>,
    pub gray_threshold: Option<f64>,
    /// `[x, y, w, h]`; `w, h` must equal the scan's width and height.
    pub roi: Option<[usize; 4]>,
    pub frame_stride: Option<usize>,
    pub fps: Option<f64>,
}

impl IngestSection {
    /// Profile defaults with the scan geometry and any overrides applied.
    pub fn capture_config(&self, scan: &ScanSection) -> Result<CaptureConfig, ConfigError> {
        let profile = self.profile.unwrap_or(MachineProfile::SonoscapeE1);
        let mut c = profile.capture_config(scan.pixel_size_mm);
        c.retain_count = scan.slice_count;
        c.scan_length_mm = scan.scan_length_mm;
        c.source_id = scan.source_id.clone();
        if let Some(t) = self.gray_threshold {
            c.gray_threshold = t;
        }
        if let Some(r) = self.roi {
            c.roi = r;
        }
        if let Some(s) = self.frame_stride {
            c.frame_stride = s;
        }
        if let Some(f) = self.fps {
            c.fps = f;
        }
        if c.roi[2] != scan.width || c.roi[3] != scan.height {
            return Err(invalid(
                "ingest.roi",
                format!("ROI size {}x{} differs from scan {}x{}", c.roi[2], c.roi[3], scan.width, scan.height),
            ));
        }
        c.validate().map_err(|e| invalid("ingest", e))?;
        Ok(c)
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    /// Reference label directory; the synthetic ground truth is used when absent.
    pub reference_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricsSection {
    pub harmonics: usize,
}

impl Default for MetricsSection {
    fn default() -> Self {
        Self {
            harmonics: DEFAULT_HARMONICS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReconstructSection {
    /// `stl`, `obj` or `ply`.
    pub format: String,
    pub smoothing_iterations: usize,
    pub smoothing_lambda: f64,
}

impl Default for ReconstructSection {
    fn default() -> Self {
        Self {
            format: "stl".into(),
            smoothing_iterations: 0,
            smoothing_lambda: 0.5,
        }
    }
}

impl ReconstructSection {
    pub fn mesh_format(&self) -> Result<MeshFormat, ConfigError> {
        MeshFormat::from_name(&self.format).map_err(|e| invalid("reconstruct.format", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub seed: u64,
    pub scan: ScanSection,
    #[serde(default)]
    pub synth: SynthSection,
    #[serde(default)]
    pub ingest: IngestSection,
    #[serde(default)]
    pub segment: SegmentConfig,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub metrics: MetricsSection,
    #[serde(default)]
    pub reconstruct: ReconstructSection,
    /// `augment.seed` is replaced by the top-level seed.
    #[serde(default)]
    pub augment: AugmentConfig,
}

impl RunConfig {
    /// Defaults with the given pixel size.
    pub fn with_pixel_size(pixel_size_mm: f64) -> Self {
        Self {
            seed: 0,
            scan: ScanSection::with_pixel_size(pixel_size_mm),
            synth: SynthSection::default(),
            ingest: IngestSection::default(),
            segment: SegmentConfig::default(),
            eval: EvalSection::default(),
            metrics: MetricsSection::default(),
            reconstruct: ReconstructSection::default(),
            augment: AugmentConfig::default(),
        }
    }

    /// Parses TOML text, applies `section.key=value` overrides (values in TOML
    /// syntax, bare words taken as strings) and validates.
    pub fn parse(text: &str, overrides: &[String]) -> Result<Self, ConfigError> {
        let mut doc: toml::Table = text.parse().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let mut cfg: RunConfig = doc.try_into().map_err(|e: toml::de::Error| ConfigError::Parse(e.to_string()))?;
        cfg.augment.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path, overrides: &[String]) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text, overrides)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if !(self.scan.pixel_size_mm.is_finite() && self.scan.pixel_size_mm > 0.0) {
            return Err(invalid("scan.pixel_size_mm", "must be a positive number of millimetres"));
        }
        self.scan.manifest()?;
        self.synth.phantom_spec(self.seed).validate().map_err(|e| invalid("synth", e))?;
        self.segment.validate().map_err(|e| invalid("segment", e))?;
        if self.metrics.harmonics == 0 {
            return Err(invalid("metrics.harmonics", "must be >= 1"));
        }
        self.reconstruct.mesh_format()?;
        if !(self.reconstruct.smoothing_lambda > 0.0 && self.reconstruct.smoothing_lambda <= 1.0) {
            return Err(invalid("reconstruct.smoothing_lambda", "must lie in (0, 1]"));
        }
        self.augment.validate().map_err(|e| invalid("augment", e))?;
        if self.ingest != IngestSection::default() {
            self.ingest.capture_config(&self.scan)?;
        }
        Ok(())
    }

    /// Canonical TOML of the resolved configuration.
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// SHA-256 of [`RunConfig::to_toml`], hex encoded.
    pub fn hash(&self) -> String {
        Sha256::digest(self.to_toml().as_bytes())
            .iter()
            .map(|b| format!("{b:02x}"))
            .collect()
    }
}

fn apply_override(doc: &mut toml::Table, spec: &str) -> Result<(), ConfigError> {
    let bad = || ConfigError::BadOverride(spec.to_string());
    let (path, raw) = spec.split_once('=').ok_or_else(bad)?;
    let keys: Vec<&str> = path.trim().split('.').collect();
    if keys.iter().any(|k| k.is_empty()) {
        return Err(bad());
    }
    let value = format!("v = {}", raw.trim())
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.trim().to_string()));
    let mut table = doc;
    for k in &keys[..keys.len() - 1] {
        let entry = table
            .entry(k.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry.as_table_mut().ok_or_else(bad)?;
    }
    table.insert(keys[keys.len() - 1].to_string(), value);
    Ok(())
}
