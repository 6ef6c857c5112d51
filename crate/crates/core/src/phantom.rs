//! Synthetic two-zone phantom stacks with exact ground-truth labels.

use std::f64::consts::PI;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Class, ImageStack, LabelVolume, ModelError, ScanManifest};

#[derive(Debug, Error)]
pub enum PhantomError {
    #[error("invalid phantom geometry: {0}")]
    GeometryInvalid(String),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Mean gray value per class.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Intensities {
    pub background: f64,
    pub peripheral: f64,
    pub central: f64,
    pub resection: f64,
}

impl Default for Intensities {
    fn default() -> Self {
        Self {
            background: 40.0,
            peripheral: 170.0,
            central: 100.0,
            resection: 15.0,
        }
    }
}

impl Intensities {
    fn of(&self, class: Class) -> f64 {
        match class {
            Class::Background => self.background,
            Class::Peripheral => self.peripheral,
            Class::Central => self.central,
            Class::Resection => self.resection,
        }
    }
}

/// A wedge where the cavity breaks through the central zone into the
/// peripheral one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PerforationPatch {
    /// Scan-axis range `[z0, z1)` in mm from the first slice edge.
    pub z_range_mm: [f64; 2],
    /// In-plane angular range `[start, end)` in degrees, counterclockwise in
    /// image coordinates (x right, y down); may wrap past 360.
    pub angle_range_deg: [f64; 2],
    /// How far past the central-zone boundary the cavity reaches.
    pub depth_mm: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ResectionSpec {
    /// `(z_mm, radius_mm)` control points, sorted by z; linear in between,
    /// zero outside.
    pub radius_profile: Vec<[f64; 2]>,
    /// Peak radial deviation of the cavity wall.
    pub jaggedness_mm: f64,
    #[serde(default)]
    pub perforations: Vec<PerforationPatch>,
}

impl ResectionSpec {
    pub fn radius_at(&self, z: f64) -> f64 {
        let p = &self.radius_profile;
        if p.is_empty() || z < p[0][0] || z > p[p.len() - 1][0] {
            return 0.0;
        }
        for w in p.windows(2) {
            let ([z0, r0], [z1, r1]) = (w[0], w[1]);
            if z >= z0 && z <= z1 {
                return if z1 > z0 { r0 + (r1 - r0) * (z - z0) / (z1 - z0) } else { r0.max(r1) };
            }
        }
        p[0][1]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    /// Outer (whole gland) ellipsoid semi-axes `(x, y, z)`.
    pub outer_radii_mm: [f64; 3],
    pub central_radii_mm: [f64; 3],
    /// Urethral channel along the scan axis, labelled resection.
    pub channel_radius_mm: f64,
    pub resection: Option<ResectionSpec>,
    pub intensities: Intensities,
    /// Log-normal speckle strength; 0 gives exact class intensities.
    pub speckle_sigma: f64,
    pub seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self::unresected(0)
    }
}

const JAGGED_HARMONICS: [f64; 3] = [3.0, 5.0, 8.0];

impl PhantomSpec {
    pub fn unresected(seed: u64) -> Self {
        Self {
            outer_radii_mm: [18.0, 15.0, 36.0],
            central_radii_mm: [11.0, 9.0, 33.0],
            channel_radius_mm: 1.0,
            resection: None,
            intensities: Intensities::default(),
            speckle_sigma: 0.05,
            seed,
        }
    }

    pub fn resected(seed: u64) -> Self {
        Self {
            resection: Some(ResectionSpec {
                radius_profile: vec![[8.0, 1.0], [16.0, 4.5], [30.0, 6.0], [44.0, 4.5], [52.0, 1.0]],
                jaggedness_mm: 0.6,
                perforations: vec![
                    PerforationPatch {
                        z_range_mm: [22.0, 34.0],
                        angle_range_deg: [80.0, 100.0],
                        depth_mm: 3.0,
                    },
                    PerforationPatch {
                        z_range_mm: [26.0, 32.0],
                        angle_range_deg: [350.0, 370.0],
                        depth_mm: 2.5,
                    },
                ],
            }),
            ..Self::unresected(seed)
        }
    }

    /// 85 slices of 256×256 px at 0.2 mm over a 60 mm sweep.
    pub fn default_manifest(source_id: &str) -> ScanManifest {
        ScanManifest::new(85, 256, 256, 0.2, 60.0, source_id).expect("static manifest is valid")
    }

    pub fn validate(&self) -> Result<(), PhantomError> {
        let bad = |m: String| Err(PhantomError::GeometryInvalid(m));
        let finite_pos = |v: &[f64]| v.iter().all(|x| x.is_finite() && *x > 0.0);
        if !finite_pos(&self.outer_radii_mm) || !finite_pos(&self.central_radii_mm) {
            return bad("ellipsoid radii must be positive".into());
        }
        if self.outer_radii_mm.iter().zip(&self.central_radii_mm).any(|(o, c)| c >= o) {
            return bad("central zone must lie strictly inside the outer zone".into());
        }
        if !(self.channel_radius_mm >= 0.0) || !(self.speckle_sigma >= 0.0) {
            return bad("channel radius and speckle sigma must be >= 0".into());
        }
        let i = &self.intensities;
        let vals = [i.background, i.peripheral, i.central, i.resection];
        for (a, va) in vals.iter().enumerate() {
            if !(0.0..=255.0).contains(va) {
                return bad(format!("intensity {va} outside [0, 255]"));
            }
            for vb in &vals[a + 1..] {
                if (va - vb).abs() < 20.0 {
                    return bad(format!("intensities {va} and {vb} closer than 20 gray levels"));
                }
            }
        }
        if let Some(r) = &self.resection {
            if r.radius_profile.windows(2).any(|w| w[1][0] < w[0][0]) {
                return bad("radius profile must be sorted by z".into());
            }
            if r.radius_profile.iter().any(|p| !p[0].is_finite() || !(p[1] >= 0.0)) {
                return bad("radius profile entries must be finite with radius >= 0".into());
            }
            if !(r.jaggedness_mm >= 0.0) {
                return bad("jaggedness must be >= 0".into());
            }
            for p in &r.perforations {
                if !(p.z_range_mm[1] > p.z_range_mm[0]) || !(p.angle_range_deg[1] > p.angle_range_deg[0]) {
                    return bad("perforation ranges must be increasing".into());
                }
                if !(p.depth_mm > 0.0) {
                    return bad("perforation depth must be > 0".into());
                }
            }
        }
        Ok(())
    }
}

/// Per-slice geometry in mm, centered on the organ axis.
struct SliceGeometry<'a> {
    spec: &'a PhantomSpec,
    /// Scaled in-plane semi-axes; `None` when the ellipsoid misses the slice.
    outer: Option<[f64; 2]>,
    central: Option<[f64; 2]>,
    cavity_radius: f64,
    z: f64,
    phases: [f64; 3],
}

fn ellipse_section(radii: [f64; 3], dz: f64) -> Option<[f64; 2]> {
    let t = 1.0 - (dz / radii[2]).powi(2);
    (t > 0.0).then(|| [radii[0] * t.sqrt(), radii[1] * t.sqrt()])
}

/// Polar radius of an axis-aligned ellipse at angle `theta`.
pub fn ellipse_radius(semi: [f64; 2], theta: f64) -> f64 {
    let [a, b] = semi;
    a * b / ((b * theta.cos()).hypot(a * theta.sin()))
}

fn angle_in(theta_deg: f64, range: [f64; 2]) -> bool {
    let span = range[1] - range[0];
    if span >= 360.0 {
        return true;
    }
    (theta_deg - range[0]).rem_euclid(360.0) < span
}

impl SliceGeometry<'_> {
    fn class_at(&self, dx: f64, dy: f64) -> Class {
        let Some(outer) = self.outer else {
            return Class::Background;
        };
        let inside = |s: [f64; 2]| (dx / s[0]).powi(2) + (dy / s[1]).powi(2) <= 1.0;
        if !inside(outer) {
            return Class::Background;
        }
        let rho = dx.hypot(dy);
        if rho <= self.spec.channel_radius_mm {
            return Class::Resection;
        }
        let in_central = self.central.is_some_and(inside);
        if let Some(res) = &self.spec.resection {
            let theta = dy.atan2(dx);
            if in_central && self.cavity_radius > 0.0 {
                let jag: f64 = JAGGED_HARMONICS
                    .iter()
                    .zip(&self.phases)
                    .map(|(h, p)| (h * theta + p + 0.15 * self.z).sin())
                    .sum::<f64>()
                    / JAGGED_HARMONICS.len() as f64;
                if rho <= (self.cavity_radius + res.jaggedness_mm * jag).max(0.0) {
                    return Class::Resection;
                }
            }
            if let Some(central) = self.central {
                let theta_deg = theta.to_degrees();
                for p in &res.perforations {
                    if self.z >= p.z_range_mm[0]
                        && self.z < p.z_range_mm[1]
                        && angle_in(theta_deg, p.angle_range_deg)
                        && rho <= ellipse_radius(central, theta) + p.depth_mm
                    {
                        return Class::Resection;
                    }
                }
            }
        }
        if in_central {
            Class::Central
        } else {
            Class::Peripheral
        }
    }
}

/// Renders the phantom into an image stack and its exact label volume.
pub fn synth_phantom(spec: &PhantomSpec, manifest: &ScanManifest) -> Result<(ImageStack, LabelVolume), PhantomError> {
    spec.validate()?;
    manifest.validate()?;
    let (h, w) = manifest.slice_shape();
    let px = manifest.pixel_size_mm;
    let (cx, cy, cz) = (w as f64 * px / 2.0, h as f64 * px / 2.0, manifest.scan_length_mm / 2.0);
    let mut phase_rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let phases: [f64; 3] = std::array::from_fn(|_| phase_rng.random::<f64>() * 2.0 * PI);

    let slices: Vec<(Array2<u8>, Array2<u8>)> = (0..manifest.slice_count)
        .into_par_iter()
        .map(|k| {
            let z = (k as f64 + 0.5) * manifest.slice_spacing_mm;
            let geo = SliceGeometry {
                spec,
                outer: ellipse_section(spec.outer_radii_mm, z - cz),
                central: ellipse_section(spec.central_radii_mm, z - cz),
                cavity_radius: spec.resection.as_ref().map_or(0.0, |r| r.radius_at(z)),
                z,
                phases,
            };
            let labels = Array2::from_shape_fn((h, w), |(y, x)| {
                geo.class_at((x as f64 + 0.5) * px - cx, (y as f64 + 0.5) * px - cy).code()
            });
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(k as u64 + 1);
            let image = labels.mapv(|c| {
                let mean = spec.intensities.of(Class::from_code(c).expect("valid code"));
                let v = if spec.speckle_sigma > 0.0 {
                    let n: f64 = rng.sample(StandardNormal);
                    mean * (spec.speckle_sigma * n).exp()
                } else {
                    mean
                };
                v.round().clamp(0.0, 255.0) as u8
            });
            (image, labels)
        })
        .collect();
    let (images, labels): (Vec<_>, Vec<_>) = slices.into_iter().unzip();
    let labels = LabelVolume::from_slices(manifest.clone(), &labels)?;
    Ok((ImageStack::new(manifest.clone(), images)?, labels))
}
