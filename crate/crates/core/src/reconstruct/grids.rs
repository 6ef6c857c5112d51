use ndarray::{Array3, Axis, Zip};
use rayon::prelude::*;

use crate::model::{Class, LabelVolume, VoxelGrid};
use crate::raster::fill_holes;

/// Occupancy grids derived from one label volume, all with the manifest's
/// voxel spacing.
#[derive(Debug, Clone, PartialEq)]
pub struct ComponentGrids {
    /// Whole organ (any non-background class) with enclosed background filled per slice.
    pub filled: VoxelGrid,
    /// Resection class only.
    pub resection: VoxelGrid,
    /// Central zone before resection: central and resection classes.
    pub central_region: VoxelGrid,
    /// One grid per non-background class.
    pub classes: Vec<(Class, VoxelGrid)>,
}

impl ComponentGrids {
    pub fn class(&self, class: Class) -> Option<&VoxelGrid> {
        self.classes.iter().find(|(c, _)| *c == class).map(|(_, g)| g)
    }
}

pub fn derive_component_grids(vol: &LabelVolume) -> ComponentGrids {
    let spacing = vol.manifest().voxel_spacing();
    let labels = vol.labels();
    let grid = |occ: Array3<bool>| VoxelGrid::new(occ, spacing).expect("label volume has positive dims");
    let organ = labels.mapv(|v| v != Class::Background.code());
    let mut filled = organ.clone();
    let slices: Vec<_> = (0..organ.len_of(Axis(0)))
        .into_par_iter()
        .map(|k| fill_holes(organ.index_axis(Axis(0), k)))
        .collect();
    for (mut dst, src) in filled.axis_iter_mut(Axis(0)).zip(slices) {
        dst.assign(&src);
    }
    let class_grid = |c: Class| grid(labels.mapv(|v| v == c.code()));
    let mut central = Array3::from_elem(labels.dim(), false);
    Zip::from(&mut central)
        .and(labels)
        .for_each(|o, &v| *o = v == Class::Central.code() || v == Class::Resection.code());
    ComponentGrids {
        filled: grid(filled),
        resection: class_grid(Class::Resection),
        central_region: grid(central),
        classes: [Class::Peripheral, Class::Central, Class::Resection]
            .into_iter()
            .map(|c| (c, class_grid(c)))
            .collect(),
    }
}
