use ndarray::Array2;

use super::{ModelError, ScanManifest};

/// Ordered 8-bit grayscale slices plus their scan geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageStack {
    manifest: ScanManifest,
    slices: Vec<Array2<u8>>,
}

impl ImageStack {
    pub fn new(manifest: ScanManifest, slices: Vec<Array2<u8>>) -> Result<Self, ModelError> {
        manifest.validate()?;
        if slices.len() != manifest.slice_count {
            return Err(ModelError::DimensionMismatch(format!(
                "manifest declares {} slices, got {}",
                manifest.slice_count,
                slices.len()
            )));
        }
        let shape = manifest.slice_shape();
        if let Some((i, s)) = slices.iter().enumerate().find(|(_, s)| s.dim() != shape) {
            return Err(ModelError::DimensionMismatch(format!(
                "slice {i} is {:?}, manifest expects {:?}",
                s.dim(),
                shape
            )));
        }
        Ok(Self { manifest, slices })
    }

    pub fn manifest(&self) -> &ScanManifest {
        &self.manifest
    }

    pub fn slices(&self) -> &[Array2<u8>] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn into_parts(self) -> (ScanManifest, Vec<Array2<u8>>) {
        (self.manifest, self.slices)
    }
}
