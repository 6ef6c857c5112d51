use std::io::{Read, Write};

use ndarray::{Array3, Zip};

use super::ModelError;

/// Binary occupancy grid with physical spacing. Occupancy is indexed
/// `[[z, y, x]]`; `dims` is reported as `(nx, ny, nz)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VoxelGrid {
    spacing_mm: [f64; 3],
    occupancy: Array3<bool>,
}

/// File magic of the bit-packed grid format.
pub const GRID_MAGIC: &[u8; 4] = b"PVG1";

impl VoxelGrid {
    pub fn new(occupancy: Array3<bool>, spacing_mm: [f64; 3]) -> Result<Self, ModelError> {
        let (nz, ny, nx) = occupancy.dim();
        if nx == 0 || ny == 0 || nz == 0 {
            return Err(ModelError::InvalidGrid("dimensions must be positive".into()));
        }
        if spacing_mm.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(ModelError::InvalidGrid(format!(
                "spacing must be positive, got {spacing_mm:?}"
            )));
        }
        Ok(Self {
            spacing_mm,
            occupancy,
        })
    }

    pub fn empty(dims: [usize; 3], spacing_mm: [f64; 3]) -> Result<Self, ModelError> {
        Self::new(Array3::from_elem((dims[2], dims[1], dims[0]), false), spacing_mm)
    }

    /// `(nx, ny, nz)`.
    pub fn dims(&self) -> [usize; 3] {
        let (nz, ny, nx) = self.occupancy.dim();
        [nx, ny, nz]
    }

    pub fn spacing_mm(&self) -> [f64; 3] {
        self.spacing_mm
    }

    pub fn occupancy(&self) -> &Array3<bool> {
        &self.occupancy
    }

    pub fn occupancy_mut(&mut self) -> &mut Array3<bool> {
        &mut self.occupancy
    }

    pub fn into_occupancy(self) -> Array3<bool> {
        self.occupancy
    }

    pub fn count(&self) -> usize {
        self.occupancy.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.occupancy.iter().any(|&b| b)
    }

    pub fn voxel_volume_mm3(&self) -> f64 {
        self.spacing_mm.iter().product()
    }

    pub fn same_geometry(&self, other: &VoxelGrid) -> bool {
        self.occupancy.dim() == other.occupancy.dim() && self.spacing_mm == other.spacing_mm
    }

    fn check_geometry(&self, other: &VoxelGrid) -> Result<(), ModelError> {
        if self.same_geometry(other) {
            Ok(())
        } else {
            Err(ModelError::DimensionMismatch(format!(
                "grids {:?}@{:?} vs {:?}@{:?}",
                self.dims(),
                self.spacing_mm,
                other.dims(),
                other.spacing_mm
            )))
        }
    }

    fn zip_with(&self, other: &VoxelGrid, f: impl Fn(bool, bool) -> bool) -> Result<Self, ModelError> {
        self.check_geometry(other)?;
        let mut out = self.occupancy.clone();
        Zip::from(&mut out)
            .and(&other.occupancy)
            .for_each(|a, &b| *a = f(*a, b));
        Ok(Self {
            spacing_mm: self.spacing_mm,
            occupancy: out,
        })
    }

    pub fn and(&self, other: &VoxelGrid) -> Result<Self, ModelError> {
        self.zip_with(other, |a, b| a && b)
    }

    pub fn or(&self, other: &VoxelGrid) -> Result<Self, ModelError> {
        self.zip_with(other, |a, b| a || b)
    }

    /// `self AND NOT other`.
    pub fn subtract(&self, other: &VoxelGrid) -> Result<Self, ModelError> {
        self.zip_with(other, |a, b| a && !b)
    }

    pub fn is_subset_of(&self, other: &VoxelGrid) -> Result<bool, ModelError> {
        self.check_geometry(other)?;
        Ok(Zip::from(&self.occupancy)
            .and(&other.occupancy)
            .all(|&a, &b| !a || b))
    }

    /// Intersection over union of the occupied sets; 1.0 when both are empty.
    pub fn iou(&self, other: &VoxelGrid) -> Result<f64, ModelError> {
        self.check_geometry(other)?;
        let (mut inter, mut union) = (0usize, 0usize);
        Zip::from(&self.occupancy)
            .and(&other.occupancy)
            .for_each(|&a, &b| {
                inter += (a && b) as usize;
                union += (a || b) as usize;
            });
        Ok(if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        })
    }

    /// Serializes to the bit-packed grid format:
    ///
    /// ```text
    /// offset  size  field
    /// 0       4     magic "PVG1"
    /// 4       4     nx (u32 LE)
    /// 8       4     ny (u32 LE)
    /// 12      4     nz (u32 LE)
    /// 16      8     sx mm (f64 LE)
    /// 24      8     sy mm (f64 LE)
    /// 32      8     sz mm (f64 LE)
    /// 40      ⌈nx·ny·nz/8⌉  occupancy bits
    /// ```
    ///
    /// Voxel `(x, y, z)` has linear index `i = x + nx·(y + ny·z)` and is stored
    /// in bit `i % 8` (LSB first) of byte `40 + i / 8`. Unused trailing bits are 0.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let [nx, ny, nz] = self.dims();
        w.write_all(GRID_MAGIC)?;
        for d in [nx, ny, nz] {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for s in self.spacing_mm {
            w.write_all(&s.to_le_bytes())?;
        }
        let mut bytes = vec![0u8; (nx * ny * nz).div_ceil(8)];
        // standard layout of [[z, y, x]] iterates x fastest
        for (i, &b) in self.occupancy.iter().enumerate() {
            if b {
                bytes[i / 8] |= 1 << (i % 8);
            }
        }
        w.write_all(&bytes)
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, ModelError> {
        let io = |e: std::io::Error| ModelError::InvalidGrid(e.to_string());
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(io)?;
        if &magic != GRID_MAGIC {
            return Err(ModelError::InvalidGrid("bad magic".into()));
        }
        let mut dims = [0usize; 3];
        for d in &mut dims {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(io)?;
            *d = u32::from_le_bytes(b) as usize;
        }
        let mut spacing = [0f64; 3];
        for s in &mut spacing {
            let mut b = [0u8; 8];
            r.read_exact(&mut b).map_err(io)?;
            *s = f64::from_le_bytes(b);
        }
        let [nx, ny, nz] = dims;
        let n = nx
            .checked_mul(ny)
            .and_then(|v| v.checked_mul(nz))
            .ok_or_else(|| ModelError::InvalidGrid("dimensions overflow".into()))?;
        let mut bytes = vec![0u8; n.div_ceil(8)];
        r.read_exact(&mut bytes).map_err(io)?;
        let bits: Vec<bool> = (0..n).map(|i| bytes[i / 8] >> (i % 8) & 1 == 1).collect();
        let occ = Array3::from_shape_vec((nz, ny, nx), bits)
            .map_err(|e| ModelError::InvalidGrid(e.to_string()))?;
        Self::new(occ, spacing)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> std::io::Result<()> {
        let f = std::fs::File::create(path)?;
        let mut w = std::io::BufWriter::new(f);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self, ModelError> {
        let f = std::fs::File::open(path).map_err(|e| ModelError::InvalidGrid(e.to_string()))?;
        Self::read_from(std::io::BufReader::new(f))
    }
}
