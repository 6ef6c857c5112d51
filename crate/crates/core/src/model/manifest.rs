use serde::{Deserialize, Serialize};

use super::ModelError;

/// Physical geometry of one scan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScanManifest {
    pub slice_count: usize,
    pub pixel_width: usize,
    pub pixel_height: usize,
    pub pixel_size_mm: f64,
    pub scan_length_mm: f64,
    pub slice_spacing_mm: f64,
    pub source_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dynamic_range_db: Option<f64>,
}

impl ScanManifest {
    /// Builds a manifest with `slice_spacing_mm = scan_length_mm / slice_count`.
    pub fn new(
        slice_count: usize,
        pixel_width: usize,
        pixel_height: usize,
        pixel_size_mm: f64,
        scan_length_mm: f64,
        source_id: impl Into<String>,
    ) -> Result<Self, ModelError> {
        let m = Self {
            slice_count,
            pixel_width,
            pixel_height,
            pixel_size_mm,
            scan_length_mm,
            slice_spacing_mm: scan_length_mm / slice_count.max(1) as f64,
            source_id: source_id.into(),
            dynamic_range_db: None,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |msg: &str| Err(ModelError::InvalidManifest(msg.to_string()));
        if self.slice_count == 0 {
            return bad("slice_count must be positive");
        }
        if self.pixel_width == 0 || self.pixel_height == 0 {
            return bad("pixel dimensions must be positive");
        }
        for (name, v) in [
            ("pixel_size_mm", self.pixel_size_mm),
            ("scan_length_mm", self.scan_length_mm),
            ("slice_spacing_mm", self.slice_spacing_mm),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(ModelError::InvalidManifest(format!(
                    "{name} must be a positive finite number, got {v}"
                )));
            }
        }
        let expected = self.scan_length_mm / self.slice_count as f64;
        if ((self.slice_spacing_mm - expected) / expected).abs() > 1e-9 {
            return Err(ModelError::InvalidManifest(format!(
                "slice_spacing_mm {} inconsistent with scan_length_mm / slice_count = {}",
                self.slice_spacing_mm, expected
            )));
        }
        Ok(())
    }

    /// Voxel spacing `(x, y, z)` in mm.
    pub fn voxel_spacing(&self) -> [f64; 3] {
        [self.pixel_size_mm, self.pixel_size_mm, self.slice_spacing_mm]
    }

    /// `(height, width)` of one slice.
    pub fn slice_shape(&self) -> (usize, usize) {
        (self.pixel_height, self.pixel_width)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("manifest serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        let m: Self = serde_json::from_str(text)
            .map_err(|e| ModelError::InvalidManifest(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn spacing_follows_scan_length() {
        let m = ScanManifest::new(85, 950, 600, 0.1, 60.0, "sonoscape-e1").unwrap();
        assert!((m.slice_spacing_mm - 60.0 / 85.0).abs() < 1e-12);
        assert!((m.slice_spacing_mm - 0.70588).abs() < 1e-5);
    }

    #[test]
    fn rejects_zero_dimensions() {
        assert!(ScanManifest::new(0, 10, 10, 0.1, 60.0, "x").is_err());
        assert!(ScanManifest::new(10, 0, 10, 0.1, 60.0, "x").is_err());
        assert!(ScanManifest::new(10, 10, 10, -0.1, 60.0, "x").is_err());
    }

    #[test]
    fn rejects_inconsistent_spacing() {
        let mut m = ScanManifest::new(10, 10, 10, 0.1, 60.0, "x").unwrap();
        m.slice_spacing_mm = 6.1;
        assert!(m.validate().is_err());
    }

    proptest! {
        #[test]
        fn json_round_trip_is_exact(
            n in 1usize..500, w in 1usize..2000, h in 1usize..2000,
            px in 1e-4f64..5.0, len in 1e-3f64..500.0,
            db in proptest::option::of(1.0f64..200.0),
        ) {
            let mut m = ScanManifest::new(n, w, h, px, len, "probe").unwrap();
            m.dynamic_range_db = db;
            let back = ScanManifest::from_json(&m.to_json()).unwrap();
            prop_assert_eq!(back.slice_spacing_mm.to_bits(), m.slice_spacing_mm.to_bits());
            prop_assert_eq!(back.pixel_size_mm.to_bits(), m.pixel_size_mm.to_bits());
            prop_assert_eq!(back, m);
        }
    }
}
