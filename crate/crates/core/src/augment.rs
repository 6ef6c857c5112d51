//! Procedural shape variants of the resection volume.
//!
//! A variant is built coarse to fine over a 2× voxel pyramid of the resection.
//! Each level starts from the original occupancy at that level, takes over the
//! voxels added or removed by the coarser level, then perturbs itself with
//! seeded value noise and a random dilation or erosion. The result is clipped
//! to the (optionally dilated) central region inside the filled organ.
//! Externally generated volumes can be used instead through the grid file
//! format and [`apply_variant`].

use std::fmt::Write as _;

use ndarray::{Array3, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{LabelVolume, ModelError, TriMesh, VoxelGrid};
use crate::raster::label_components_3d;
use crate::reconstruct::{derive_component_grids, marching_cubes, mesh_stats, ReconstructError};

#[derive(Debug, Error)]
pub enum AugmentError {
    #[error("invalid augment config: {0}")]
    InvalidConfig(String),
    #[error("resection grid is empty")]
    EmptyResection,
    #[error("resection is not contained in the filled volume")]
    NotContained,
    #[error("variant {variant} is empty after applying the allowed-region constraint")]
    ConstraintCollapse { variant: usize },
    #[error("no variants to report on")]
    NoVariants,
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reconstruct(#[from] ReconstructError),
}

/// Per-level vectors are ordered coarsest level first. A noise amplitude is
/// the largest boundary displacement in voxels of that level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AugmentConfig {
    pub scales: usize,
    /// Voxels per axis at the finest level when preparing inputs from labels.
    pub base_resolution: usize,
    pub noise_amplitude: Vec<f64>,
    /// Value-noise lattice spacing in voxels of the level being perturbed.
    pub noise_cell_voxels: usize,
    pub morph_jitter_radius: Vec<usize>,
    pub allowed_region_margin_mm: f64,
    pub variant_count: usize,
    pub seed: u64,
    pub iou_bounds: [f64; 2],
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            scales: 6,
            base_resolution: 128,
            noise_amplitude: vec![0.0, 0.5, 1.0, 1.0, 1.0, 1.0],
            noise_cell_voxels: 3,
            morph_jitter_radius: vec![0; 6],
            allowed_region_margin_mm: 0.0,
            variant_count: 20,
            seed: 0,
            iou_bounds: [0.60, 0.97],
        }
    }
}

impl AugmentConfig {
    /// Zero noise and zero jitter at every level.
    pub fn identity(scales: usize) -> Self {
        Self {
            scales,
            noise_amplitude: vec![0.0; scales],
            morph_jitter_radius: vec![0; scales],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), AugmentError> {
        let bad = |m: String| Err(AugmentError::InvalidConfig(m));
        if self.scales == 0 {
            return bad("scales must be >= 1".into());
        }
        if self.noise_amplitude.len() != self.scales || self.morph_jitter_radius.len() != self.scales {
            return bad(format!(
                "noise_amplitude and morph_jitter_radius need {} entries (one per scale)",
                self.scales
            ));
        }
        if self.noise_amplitude.iter().any(|a| !(a.is_finite() && *a >= 0.0)) {
            return bad("noise amplitudes must be finite and >= 0".into());
        }
        if self.noise_cell_voxels == 0 {
            return bad("noise_cell_voxels must be >= 1".into());
        }
        if self.base_resolution < 1 << (self.scales - 1) {
            return bad(format!("base_resolution must be >= 2^(scales-1) = {}", 1 << (self.scales - 1)));
        }
        if !(self.allowed_region_margin_mm.is_finite() && self.allowed_region_margin_mm >= 0.0) {
            return bad("allowed_region_margin_mm must be >= 0".into());
        }
        if self.variant_count == 0 {
            return bad("variant_count must be >= 1".into());
        }
        let [lo, hi] = self.iou_bounds;
        if !(0.0 < lo && lo < hi && hi <= 1.0) {
            return bad(format!("iou_bounds must satisfy 0 < lo < hi <= 1, got {:?}", self.iou_bounds));
        }
        Ok(())
    }
}

/// Inputs of the generator, all with identical geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentInputs {
    pub filled: VoxelGrid,
    pub resection: VoxelGrid,
    pub central_region: VoxelGrid,
}

/// Nearest-neighbour resampling to `dims` `(nx, ny, nz)` over the same extent.
pub fn resample_nearest(grid: &VoxelGrid, dims: [usize; 3]) -> Result<VoxelGrid, ModelError> {
    let src = grid.dims();
    let sp = grid.spacing_mm();
    let map = |axis: usize, i: usize| ((2 * i + 1) * src[axis] / (2 * dims[axis])).min(src[axis] - 1);
    let occ = grid.occupancy();
    let out = Array3::from_shape_fn((dims[2], dims[1], dims[0]), |(z, y, x)| {
        occ[[map(2, z), map(1, y), map(0, x)]]
    });
    let spacing = std::array::from_fn(|k| sp[k] * src[k] as f64 / dims[k] as f64);
    VoxelGrid::new(out, spacing)
}

/// Component grids of `vol` resampled to `base_resolution` voxels per axis.
pub fn prepare_inputs(vol: &LabelVolume, cfg: &AugmentConfig) -> Result<AugmentInputs, AugmentError> {
    cfg.validate()?;
    let g = derive_component_grids(vol);
    let dims = [cfg.base_resolution; 3];
    Ok(AugmentInputs {
        filled: resample_nearest(&g.filled, dims)?,
        resection: resample_nearest(&g.resection, dims)?,
        central_region: resample_nearest(&g.central_region, dims)?,
    })
}

fn downsample(a: &Array3<bool>) -> Array3<bool> {
    let (d, h, w) = a.dim();
    let half = |n: usize| n.div_ceil(2);
    Array3::from_shape_fn((half(d), half(h), half(w)), |(z, y, x)| {
        let (mut on, mut all) = (0, 0);
        for zz in 2 * z..(2 * z + 2).min(d) {
            for yy in 2 * y..(2 * y + 2).min(h) {
                for xx in 2 * x..(2 * x + 2).min(w) {
                    all += 1;
                    on += a[[zz, yy, xx]] as usize;
                }
            }
        }
        2 * on >= all
    })
}

fn upsample(a: &Array3<bool>, dim: (usize, usize, usize)) -> Array3<bool> {
    Array3::from_shape_fn(dim, |(z, y, x)| a[[z / 2, y / 2, x / 2]])
}

/// Chamfer distance (weights 1, √2, √3) from every voxel to the nearest
/// voxel where `target` holds; infinite when there is none.
fn chamfer_to(target: &Array3<bool>) -> Array3<f64> {
    let (d, h, w) = target.dim();
    let mut dist = target.mapv(|t| if t { 0.0 } else { f64::INFINITY });
    let mut forward = Vec::new();
    for dz in -1i64..=1 {
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                if (dz, dy, dx) < (0, 0, 0) {
                    let n = (dz * dz + dy * dy + dx * dx) as f64;
                    forward.push((dz, dy, dx, n.sqrt()));
                }
            }
        }
    }
    let (di, hi, wi) = (d as i64, h as i64, w as i64);
    let mut relax = |z: i64, y: i64, x: i64, sign: i64| {
        let mut best = dist[[z as usize, y as usize, x as usize]];
        for &(dz, dy, dx, c) in &forward {
            let (zz, yy, xx) = (z + sign * dz, y + sign * dy, x + sign * dx);
            if zz >= 0 && yy >= 0 && xx >= 0 && zz < di && yy < hi && xx < wi {
                best = best.min(dist[[zz as usize, yy as usize, xx as usize]] + c);
            }
        }
        dist[[z as usize, y as usize, x as usize]] = best;
    };
    for z in 0..di {
        for y in 0..hi {
            for x in 0..wi {
                relax(z, y, x, 1);
            }
        }
    }
    for z in (0..di).rev() {
        for y in (0..hi).rev() {
            for x in (0..wi).rev() {
                relax(z, y, x, -1);
            }
        }
    }
    dist
}

/// Negative inside, positive outside, with the boundary halfway between
/// neighbouring inside and outside voxels.
fn signed_distance(a: &Array3<bool>) -> Array3<f64> {
    let to_inside = chamfer_to(a);
    let to_outside = chamfer_to(&a.mapv(|b| !b));
    let mut s = to_inside;
    Zip::from(&mut s).and(&to_outside).and(a).for_each(|s, &o, &inside| {
        *s = if inside { 0.5 - o } else { *s - 0.5 };
    });
    s
}

/// Trilinearly interpolated uniform lattice noise in [-1, 1].
fn value_noise(dim: (usize, usize, usize), cell: usize, rng: &mut ChaCha8Rng) -> Array3<f64> {
    let (d, h, w) = dim;
    let lat = |n: usize| n / cell + 2;
    let lattice = Array3::from_shape_fn((lat(d), lat(h), lat(w)), |_| rng.random_range(-1.0..=1.0));
    let c = cell as f64;
    Array3::from_shape_fn(dim, |(z, y, x)| {
        let f = |i: usize| {
            let t = (i as f64 + 0.5) / c;
            (t.floor() as usize, t.fract())
        };
        let ((z0, tz), (y0, ty), (x0, tx)) = (f(z), f(y), f(x));
        let mut v = 0.0;
        for (dz, wz) in [(0, 1.0 - tz), (1, tz)] {
            for (dy, wy) in [(0, 1.0 - ty), (1, ty)] {
                for (dx, wx) in [(0, 1.0 - tx), (1, tx)] {
                    v += wz * wy * wx * lattice[[z0 + dz, y0 + dy, x0 + dx]];
                }
            }
        }
        v
    })
}

/// One step of 6-neighbour dilation (`grow`) or erosion.
fn morph_step(a: &Array3<bool>, grow: bool) -> Array3<bool> {
    let (d, h, w) = a.dim();
    Array3::from_shape_fn((d, h, w), |(z, y, x)| {
        let get = |dz: i64, dy: i64, dx: i64| {
            let (zz, yy, xx) = (z as i64 + dz, y as i64 + dy, x as i64 + dx);
            if zz < 0 || yy < 0 || xx < 0 || zz >= d as i64 || yy >= h as i64 || xx >= w as i64 {
                false
            } else {
                a[[zz as usize, yy as usize, xx as usize]]
            }
        };
        let nb = [get(-1, 0, 0), get(1, 0, 0), get(0, -1, 0), get(0, 1, 0), get(0, 0, -1), get(0, 0, 1)];
        if grow {
            a[[z, y, x]] || nb.iter().any(|&b| b)
        } else {
            a[[z, y, x]] && nb.iter().all(|&b| b)
        }
    })
}

fn perturb(a: Array3<bool>, amplitude: f64, jitter: usize, cell: usize, rng: &mut ChaCha8Rng) -> Array3<bool> {
    let mut a = a;
    if amplitude > 0.0 {
        // boundary moves by at most `amplitude` voxels of this level
        let noise = value_noise(a.dim(), cell, rng);
        let mut field = signed_distance(&a);
        field.zip_mut_with(&noise, |f, n| *f += amplitude * n);
        a = field.mapv(|v| v < 0.0);
    }
    if jitter > 0 {
        let r = rng.random_range(-(jitter as i64)..=jitter as i64);
        for _ in 0..r.unsigned_abs() {
            a = morph_step(&a, r > 0);
        }
    }
    a
}

/// Central region grown by `margin_mm` (ellipsoidal in voxel units).
fn dilate_mm(central: &VoxelGrid, margin_mm: f64) -> Array3<bool> {
    let occ = central.occupancy();
    if margin_mm <= 0.0 {
        return occ.clone();
    }
    let sp = central.spacing_mm();
    let reach = sp.map(|s| (margin_mm / s).floor() as i64);
    let mut offsets = Vec::new();
    for dz in -reach[2]..=reach[2] {
        for dy in -reach[1]..=reach[1] {
            for dx in -reach[0]..=reach[0] {
                let r2 = (dx as f64 * sp[0]).powi(2) + (dy as f64 * sp[1]).powi(2) + (dz as f64 * sp[2]).powi(2);
                if r2 <= margin_mm * margin_mm {
                    offsets.push((dz, dy, dx));
                }
            }
        }
    }
    let (d, h, w) = occ.dim();
    let flat: Vec<bool> = (0..d * h * w)
        .into_par_iter()
        .map(|i| {
            let (z, y, x) = ((i / (h * w)) as i64, ((i / w) % h) as i64, (i % w) as i64);
            occ[[z as usize, y as usize, x as usize]]
                || offsets.iter().any(|&(dz, dy, dx)| {
                    let (zz, yy, xx) = (z + dz, y + dy, x + dx);
                    zz >= 0 && yy >= 0 && xx >= 0 && zz < d as i64 && yy < h as i64 && xx < w as i64
                        && occ[[zz as usize, yy as usize, xx as usize]]
                })
        })
        .collect();
    Array3::from_shape_vec((d, h, w), flat).expect("sizes agree")
}

/// Occupied voxels on the urethral axis: the column through the in-plane
/// centroid of the central region.
fn axis_column(central: &Array3<bool>) -> Option<(usize, usize)> {
    let (mut sx, mut sy, mut n) = (0.0, 0.0, 0usize);
    for ((_, y, x), &o) in central.indexed_iter() {
        if o {
            sx += x as f64;
            sy += y as f64;
            n += 1;
        }
    }
    (n > 0).then(|| ((sy / n as f64).round() as usize, (sx / n as f64).round() as usize))
}

/// Keeps the largest 6-connected component touching the axis column, or the
/// largest overall when none does.
fn keep_axis_component(a: &Array3<bool>, axis: Option<(usize, usize)>) -> Array3<bool> {
    let (labels, sizes) = label_components_3d(a.view());
    let mut on_axis = vec![false; sizes.len()];
    if let Some((y, x)) = axis {
        for z in 0..a.dim().0 {
            on_axis[labels[[z, y, x]] as usize] = true;
        }
    }
    on_axis[0] = false;
    let any_axis = on_axis.iter().any(|&b| b);
    let best = (1..sizes.len())
        .filter(|&l| !any_axis || on_axis[l])
        .max_by(|&p, &q| sizes[p].cmp(&sizes[q]).then(q.cmp(&p)));
    match best {
        Some(b) => labels.mapv(|l| l as usize == b),
        None => Array3::from_elem(a.dim(), false),
    }
}

fn check_inputs(r: &VoxelGrid, f: &VoxelGrid, central: &VoxelGrid) -> Result<(), AugmentError> {
    if !r.same_geometry(f) || !r.same_geometry(central) {
        return Err(ModelError::DimensionMismatch("resection, filled and central grids differ".into()).into());
    }
    if r.is_empty() {
        return Err(AugmentError::EmptyResection);
    }
    if !r.is_subset_of(f)? {
        return Err(AugmentError::NotContained);
    }
    Ok(())
}

/// One resection variant, deterministic in `(cfg.seed, variant_index)`.
pub fn generate_resection_variant(
    r: &VoxelGrid,
    f: &VoxelGrid,
    central: &VoxelGrid,
    cfg: &AugmentConfig,
    variant_index: usize,
) -> Result<VoxelGrid, AugmentError> {
    cfg.validate()?;
    check_inputs(r, f, central)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(variant_index as u64 + 1);

    let mut pyramid = vec![r.occupancy().clone()];
    for _ in 1..cfg.scales {
        let next = downsample(pyramid.last().expect("nonempty"));
        pyramid.push(next);
    }
    let level_params = |level: usize| {
        let i = cfg.scales - 1 - level;
        (cfg.noise_amplitude[i], cfg.morph_jitter_radius[i])
    };
    let top = cfg.scales - 1;
    let (amp, jit) = level_params(top);
    let mut current = perturb(pyramid[top].clone(), amp, jit, cfg.noise_cell_voxels, &mut rng);
    for level in (0..top).rev() {
        let dim = pyramid[level].dim();
        let (up_var, up_orig) = (upsample(&current, dim), upsample(&pyramid[level + 1], dim));
        let mut next = pyramid[level].clone();
        Zip::from(&mut next)
            .and(&up_var)
            .and(&up_orig)
            .for_each(|n, &v, &o| {
                if v != o {
                    *n = v;
                }
            });
        let (amp, jit) = level_params(level);
        current = perturb(next, amp, jit, cfg.noise_cell_voxels, &mut rng);
    }

    let allowed = dilate_mm(central, cfg.allowed_region_margin_mm);
    Zip::from(&mut current)
        .and(&allowed)
        .and(f.occupancy())
        .for_each(|c, &a, &inside| *c = *c && a && inside);
    let kept = keep_axis_component(&current, axis_column(central.occupancy()));
    if !kept.iter().any(|&b| b) {
        return Err(AugmentError::ConstraintCollapse { variant: variant_index });
    }
    Ok(VoxelGrid::new(kept, r.spacing_mm())?)
}

#[derive(Debug, Clone, PartialEq)]
pub struct AppliedVariant {
    /// Filled volume minus the variant resection.
    pub grid: VoxelGrid,
    pub mesh: TriMesh,
}

pub fn apply_variant(f: &VoxelGrid, r_variant: &VoxelGrid) -> Result<AppliedVariant, AugmentError> {
    let grid = f.subtract(r_variant)?;
    let mesh = marching_cubes(&grid, 0.5)?;
    Ok(AppliedVariant { grid, mesh })
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedVariant {
    pub index: usize,
    pub resection: VoxelGrid,
    pub applied: AppliedVariant,
}

/// All `cfg.variant_count` variants, generated in parallel.
pub fn generate_variants(inputs: &AugmentInputs, cfg: &AugmentConfig) -> Result<Vec<AugmentedVariant>, AugmentError> {
    (0..cfg.variant_count)
        .into_par_iter()
        .map(|index| {
            let resection = generate_resection_variant(
                &inputs.resection,
                &inputs.filled,
                &inputs.central_region,
                cfg,
                index,
            )?;
            let applied = apply_variant(&inputs.filled, &resection)?;
            Ok(AugmentedVariant {
                index,
                resection,
                applied,
            })
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum BoundStatus {
    Within,
    BelowLow,
    AboveHigh,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DiversityReport {
    pub bounds: [f64; 2],
    pub iou_vs_original: Vec<f64>,
    pub status: Vec<BoundStatus>,
    /// Symmetric, 1.0 on the diagonal.
    pub pairwise_iou: Vec<Vec<f64>>,
    pub max_pairwise_iou: f64,
    pub watertight: Vec<bool>,
    pub mesh_volume_mm3: Vec<f64>,
}

impl DiversityReport {
    pub fn pairwise_distinct(&self) -> bool {
        self.iou_vs_original.len() < 2 || self.max_pairwise_iou < self.bounds[1]
    }

    pub fn passed(&self) -> bool {
        self.status.iter().all(|s| *s == BoundStatus::Within)
            && self.pairwise_distinct()
            && self.watertight.iter().all(|&w| w)
    }

    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "variants={}", self.iou_vs_original.len());
        let _ = writeln!(out, "iou_bounds.low={}", self.bounds[0]);
        let _ = writeln!(out, "iou_bounds.high={}", self.bounds[1]);
        let _ = writeln!(out, "pairwise_iou.max={:.6}", self.max_pairwise_iou);
        let _ = writeln!(out, "pairwise_distinct={}", self.pairwise_distinct());
        let _ = writeln!(out, "passed={}", self.passed());
        for (i, v) in self.iou_vs_original.iter().enumerate() {
            let status = match self.status[i] {
                BoundStatus::Within => "within",
                BoundStatus::BelowLow => "below_low",
                BoundStatus::AboveHigh => "above_high",
            };
            let _ = writeln!(out, "variant.{i:03}.iou_vs_original={v:.6}");
            let _ = writeln!(out, "variant.{i:03}.status={status}");
            let _ = writeln!(out, "variant.{i:03}.watertight={}", self.watertight[i]);
            let _ = writeln!(out, "variant.{i:03}.mesh_volume_mm3={:.6}", self.mesh_volume_mm3[i]);
        }
        out
    }
}

pub fn diversity_report(
    variants: &[AugmentedVariant],
    original: &VoxelGrid,
    cfg: &AugmentConfig,
) -> Result<DiversityReport, AugmentError> {
    if variants.is_empty() {
        return Err(AugmentError::NoVariants);
    }
    let [lo, hi] = cfg.iou_bounds;
    let iou_vs_original = variants
        .iter()
        .map(|v| v.resection.iou(original))
        .collect::<Result<Vec<_>, _>>()?;
    let status = iou_vs_original
        .iter()
        .map(|&v| {
            if v < lo {
                BoundStatus::BelowLow
            } else if v > hi {
                BoundStatus::AboveHigh
            } else {
                BoundStatus::Within
            }
        })
        .collect();
    let n = variants.len();
    let upper: Vec<(usize, usize, f64)> = (0..n)
        .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
        .collect::<Vec<_>>()
        .into_par_iter()
        .map(|(i, j)| variants[i].resection.iou(&variants[j].resection).map(|v| (i, j, v)))
        .collect::<Result<_, _>>()?;
    let mut pairwise = vec![vec![1.0; n]; n];
    let mut max_pairwise = f64::NEG_INFINITY;
    for (i, j, v) in upper {
        pairwise[i][j] = v;
        pairwise[j][i] = v;
        max_pairwise = max_pairwise.max(v);
    }
    let stats = variants
        .par_iter()
        .map(|v| mesh_stats(&v.applied.mesh))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(DiversityReport {
        bounds: cfg.iou_bounds,
        iou_vs_original,
        status,
        pairwise_iou: pairwise,
        max_pairwise_iou: if n > 1 { max_pairwise } else { f64::NAN },
        watertight: stats.iter().map(|s| s.watertight).collect(),
        mesh_volume_mm3: stats.iter().map(|s| s.volume_mm3).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{Class, ScanManifest};
    use crate::phantom::{synth_phantom, PhantomSpec};
    use proptest::prelude::*;
    use std::sync::OnceLock;

    fn inputs() -> &'static (LabelVolume, AugmentInputs) {
        static CELL: OnceLock<(LabelVolume, AugmentInputs)> = OnceLock::new();
        CELL.get_or_init(|| {
            let m = ScanManifest::new(40, 96, 96, 0.6, 60.0, "aug").unwrap();
            let (_, labels) = synth_phantom(&PhantomSpec::resected(2), &m).unwrap();
            let cfg = AugmentConfig {
                base_resolution: 64,
                ..AugmentConfig::default()
            };
            let inp = prepare_inputs(&labels, &cfg).unwrap();
            (labels, inp)
        })
    }

    fn small_cfg() -> AugmentConfig {
        AugmentConfig {
            base_resolution: 64,
            ..AugmentConfig::default()
        }
    }

    fn variant(cfg: &AugmentConfig, i: usize) -> Result<VoxelGrid, AugmentError> {
        let (_, inp) = inputs();
        generate_resection_variant(&inp.resection, &inp.filled, &inp.central_region, cfg, i)
    }

    #[test]
    fn zero_noise_is_identity() {
        let cfg = AugmentConfig::identity(6);
        assert_eq!(&variant(&cfg, 0).unwrap(), &inputs().1.resection);
        assert_eq!(&variant(&cfg, 5).unwrap(), &inputs().1.resection);
    }

    #[test]
    fn variants_are_deterministic_and_distinct() {
        let cfg = small_cfg();
        let a = variant(&cfg, 3).unwrap();
        assert_eq!(a, variant(&cfg, 3).unwrap());
        assert_ne!(a, variant(&cfg, 4).unwrap());
        let reseeded = AugmentConfig { seed: 9, ..small_cfg() };
        assert_ne!(a, variant(&reseeded, 3).unwrap());
    }

    #[test]
    fn variants_stay_in_allowed_region() {
        let (_, inp) = inputs();
        let jittery = AugmentConfig {
            morph_jitter_radius: vec![0, 1, 1, 1, 1, 1],
            ..small_cfg()
        };
        for i in 0..4 {
            let v = variant(&jittery, i).unwrap();
            assert!(v.is_subset_of(&inp.filled).unwrap());
            assert!(v.is_subset_of(&inp.central_region).unwrap());
        }
        let wide = AugmentConfig {
            allowed_region_margin_mm: 2.0,
            noise_amplitude: vec![0.0, 1.0, 2.0, 2.0, 2.0, 2.0],
            ..small_cfg()
        };
        let grown = VoxelGrid::new(dilate_mm(&inp.central_region, 2.0), inp.central_region.spacing_mm()).unwrap();
        let mut escaped = false;
        for i in 0..4 {
            let v = variant(&wide, i).unwrap();
            assert!(v.is_subset_of(&grown).unwrap());
            assert!(v.is_subset_of(&inp.filled).unwrap());
            escaped |= !v.is_subset_of(&inp.central_region).unwrap();
        }
        assert!(escaped, "a 2 mm margin should allow growth past the central zone");
    }

    #[test]
    fn degenerate_inputs_rejected() {
        let (_, inp) = inputs();
        let cfg = small_cfg();
        let empty = VoxelGrid::empty(inp.filled.dims(), inp.filled.spacing_mm()).unwrap();
        assert!(matches!(
            generate_resection_variant(&empty, &inp.filled, &inp.central_region, &cfg, 0),
            Err(AugmentError::EmptyResection)
        ));
        assert!(matches!(
            generate_resection_variant(&inp.filled, &inp.resection, &inp.central_region, &cfg, 0),
            Err(AugmentError::NotContained)
        ));
        assert!(matches!(
            generate_resection_variant(&inp.resection, &inp.filled, &empty, &cfg, 0),
            Err(AugmentError::ConstraintCollapse { variant: 0 })
        ));
        let bad = AugmentConfig { iou_bounds: [0.9, 0.5], ..small_cfg() };
        assert!(matches!(bad.validate(), Err(AugmentError::InvalidConfig(_))));
        let bad = AugmentConfig { scales: 4, ..small_cfg() };
        assert!(matches!(bad.validate(), Err(AugmentError::InvalidConfig(_))));
    }

    #[test]
    fn original_resection_reproduces_direct_reconstruction() {
        let (labels, inp) = inputs();
        let applied = apply_variant(&inp.filled, &inp.resection).unwrap();
        let direct = derive_component_grids(labels);
        let kept = direct.class(Class::Peripheral).unwrap().or(direct.class(Class::Central).unwrap()).unwrap();
        let kept = resample_nearest(&kept, [64; 3]).unwrap();
        assert_eq!(applied.grid.iou(&kept).unwrap(), 1.0);
        assert!(mesh_stats(&applied.mesh).unwrap().watertight);
    }

    #[test]
    fn empty_variant_keeps_filled_mesh() {
        let (_, inp) = inputs();
        let empty = VoxelGrid::empty(inp.filled.dims(), inp.filled.spacing_mm()).unwrap();
        let applied = apply_variant(&inp.filled, &empty).unwrap();
        let direct = mesh_stats(&marching_cubes(&inp.filled, 0.5).unwrap()).unwrap().volume_mm3;
        let got = mesh_stats(&applied.mesh).unwrap().volume_mm3;
        assert!((got - direct).abs() <= 1e-9 * direct);
    }

    #[test]
    fn diversity_flags() {
        let (_, inp) = inputs();
        let cfg = small_cfg();
        let same = AugmentedVariant {
            index: 0,
            resection: inp.resection.clone(),
            applied: apply_variant(&inp.filled, &inp.resection).unwrap(),
        };
        let r = diversity_report(std::slice::from_ref(&same), &inp.resection, &cfg).unwrap();
        assert_eq!(r.iou_vs_original, vec![1.0]);
        assert_eq!(r.status, vec![BoundStatus::AboveHigh]);
        assert!(!r.passed());
        assert!(r.to_kv().contains("variant.000.status=above_high"));
        assert!(matches!(diversity_report(&[], &inp.resection, &cfg), Err(AugmentError::NoVariants)));
        let two = diversity_report(&[same.clone(), same], &inp.resection, &cfg).unwrap();
        assert_eq!(two.max_pairwise_iou, 1.0);
        assert!(!two.pairwise_distinct());
    }

    #[test]
    fn resampling_keeps_extent() {
        let (_, inp) = inputs();
        let g = resample_nearest(&inp.filled, [32, 32, 16]).unwrap();
        let ext = |g: &VoxelGrid| std::array::from_fn::<f64, 3, _>(|k| g.dims()[k] as f64 * g.spacing_mm()[k]);
        let (a, b) = (ext(&g), ext(&inp.filled));
        for k in 0..3 {
            assert!((a[k] - b[k]).abs() < 1e-9);
        }
        assert_eq!(resample_nearest(&inp.filled, inp.filled.dims()).unwrap(), inp.filled);
    }

    fn grid_pair() -> impl Strategy<Value = (VoxelGrid, VoxelGrid)> {
        (1usize..9, 1usize..9, 1usize..9).prop_flat_map(|(a, b, c)| {
            let n = a * b * c;
            (prop::collection::vec(any::<bool>(), n), prop::collection::vec(any::<bool>(), n)).prop_map(move |(f, r)| {
                let g = |v: Vec<bool>| VoxelGrid::new(Array3::from_shape_vec((a, b, c), v).unwrap(), [1.0, 0.5, 2.0]).unwrap();
                (g(f), g(r))
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(50))]
        #[test]
        fn subtraction_count_identity((f, r) in grid_pair()) {
            let diff = f.subtract(&r).unwrap();
            prop_assert_eq!(diff.count(), f.count() - f.and(&r).unwrap().count());
            prop_assert!(diff.is_subset_of(&f).unwrap());
            if !diff.is_empty() {
                let applied = apply_variant(&f, &r).unwrap();
                prop_assert_eq!(applied.grid, diff);
                prop_assert!(mesh_stats(&applied.mesh).unwrap().watertight);
            }
        }
    }
}
