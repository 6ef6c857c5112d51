use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use super::{ModelError, ScanManifest};

/// Tissue class. The numeric codes are the on-disk contract.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Class {
    Background = 0,
    Peripheral = 1,
    Central = 2,
    Resection = 3,
}

impl Class {
    pub const ALL: [Class; 4] = [
        Class::Background,
        Class::Peripheral,
        Class::Central,
        Class::Resection,
    ];
    pub const FOREGROUND: [Class; 3] = [Class::Peripheral, Class::Central, Class::Resection];

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(code: u8) -> Result<Self, ModelError> {
        match code {
            0 => Ok(Class::Background),
            1 => Ok(Class::Peripheral),
            2 => Ok(Class::Central),
            3 => Ok(Class::Resection),
            other => Err(ModelError::InvalidClass(other)),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Class::Background => "background",
            Class::Peripheral => "peripheral",
            Class::Central => "central",
            Class::Resection => "resection",
        }
    }
}

/// Per-voxel class codes, indexed `[[z, y, x]]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabelVolume {
    manifest: ScanManifest,
    labels: Array3<u8>,
}

impl LabelVolume {
    pub fn new(manifest: ScanManifest, labels: Array3<u8>) -> Result<Self, ModelError> {
        manifest.validate()?;
        let expected = (
            manifest.slice_count,
            manifest.pixel_height,
            manifest.pixel_width,
        );
        if labels.dim() != expected {
            return Err(ModelError::DimensionMismatch(format!(
                "labels are {:?}, manifest expects {:?}",
                labels.dim(),
                expected
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&c| c > 3) {
            return Err(ModelError::InvalidClass(bad));
        }
        Ok(Self { manifest, labels })
    }

    /// Stacks per-slice label images into a volume.
    pub fn from_slices(manifest: ScanManifest, slices: &[Array2<u8>]) -> Result<Self, ModelError> {
        let (h, w) = manifest.slice_shape();
        if slices.len() != manifest.slice_count {
            return Err(ModelError::DimensionMismatch(format!(
                "manifest declares {} slices, got {}",
                manifest.slice_count,
                slices.len()
            )));
        }
        let mut labels = Array3::zeros((slices.len(), h, w));
        for (k, s) in slices.iter().enumerate() {
            if s.dim() != (h, w) {
                return Err(ModelError::DimensionMismatch(format!(
                    "slice {k} is {:?}, manifest expects {:?}",
                    s.dim(),
                    (h, w)
                )));
            }
            labels.index_axis_mut(Axis(0), k).assign(s);
        }
        Self::new(manifest, labels)
    }

    pub fn manifest(&self) -> &ScanManifest {
        &self.manifest
    }

    pub fn labels(&self) -> &Array3<u8> {
        &self.labels
    }

    pub fn slice_count(&self) -> usize {
        self.labels.dim().0
    }

    pub fn slice(&self, k: usize) -> ArrayView2<'_, u8> {
        self.labels.index_axis(Axis(0), k)
    }

    /// Boolean mask of the voxels holding `class`.
    pub fn class_mask(&self, class: Class) -> Array3<bool> {
        let code = class.code();
        self.labels.mapv(|c| c == code)
    }

    pub fn slice_class_mask(&self, k: usize, class: Class) -> Array2<bool> {
        let code = class.code();
        self.slice(k).mapv(|c| c == code)
    }

    pub fn count(&self, class: Class) -> usize {
        let code = class.code();
        self.labels.iter().filter(|&&c| c == code).count()
    }
}

/// Mask of one class in a single 2D label image.
pub fn class_mask_2d(labels: ArrayView2<'_, u8>, class: Class) -> Array2<bool> {
    let code = class.code();
    labels.mapv(|c| c == code)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn manifest(n: usize, h: usize, w: usize) -> ScanManifest {
        ScanManifest::new(n, w, h, 0.2, n as f64, "test").unwrap()
    }

    #[test]
    fn uniform_volume_masks() {
        let vol = LabelVolume::new(manifest(3, 4, 5), Array3::from_elem((3, 4, 5), 2)).unwrap();
        assert!(vol.class_mask(Class::Central).iter().all(|&b| b));
        assert!(vol.class_mask(Class::Resection).iter().all(|&b| !b));
    }

    #[test]
    fn rejects_bad_codes_and_shapes() {
        assert_eq!(
            LabelVolume::new(manifest(1, 2, 2), Array3::from_elem((1, 2, 2), 4)),
            Err(ModelError::InvalidClass(4))
        );
        assert!(LabelVolume::new(manifest(1, 2, 2), Array3::zeros((1, 2, 3))).is_err());
        assert!(Class::from_code(7).is_err());
    }

    proptest! {
        #[test]
        fn class_masks_partition_volume(codes in proptest::collection::vec(0u8..4, 60)) {
            let labels = Array3::from_shape_vec((3, 4, 5), codes).unwrap();
            let vol = LabelVolume::new(manifest(3, 4, 5), labels).unwrap();
            let masks: Vec<_> = Class::ALL.iter().map(|&c| vol.class_mask(c)).collect();
            for idx in ndarray::indices((3, 4, 5)) {
                let hits = masks.iter().filter(|m| m[idx]).count();
                prop_assert_eq!(hits, 1);
            }
        }
    }
}
