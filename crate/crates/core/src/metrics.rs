//! Per-frame surgical scores: circularity and smoothness of the resection
//! boundary, and how much of the resection breaks into the peripheral zone.

use std::f64::consts::PI;
use std::fmt::Write as _;

use ndarray::{ArrayView2, Zip};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::model::{boundary_loops, class_mask_2d, polygon_signed_area, Class, Contour, LabelVolume};
use crate::raster::{convex_hull, label_components_2d, rasterize_convex_inclusive};

#[derive(Debug, Error, PartialEq)]
pub enum MetricsError {
    #[error("contour has zero area or perimeter")]
    DegenerateContour,
    #[error("contour has {got} points, at least {need} required")]
    TooFewPoints { got: usize, need: usize },
    #[error("label volume has no slices")]
    EmptyStack,
}

/// Default number of Fourier harmonics kept by [`smoothness`].
pub const DEFAULT_HARMONICS: usize = 10;

/// Definitions echoed into reports; the scores are our formalization.
pub const DEFINITIONS: [(&str, &str); 3] = [
    ("circularity", "4*pi*area/perimeter^2 of the largest resection component's outer boundary"),
    (
        "smoothness",
        "perimeter of the boundary rebuilt from Fourier harmonics -K..K divided by the raw perimeter",
    ),
    (
        "perforation",
        "resection pixels outside the convex hull of the remaining central-zone pixels; sites are 4-connected components",
    ),
];

fn clamp_unit(v: f64) -> f64 {
    v.clamp(f64::MIN_POSITIVE, 1.0)
}

/// `4π·area / perimeter²`, clamped to (0, 1].
pub fn circularity(c: &Contour) -> Result<f64, MetricsError> {
    let (a, p) = (c.area(), c.perimeter());
    if !(a > 0.0 && p > 0.0) {
        return Err(MetricsError::DegenerateContour);
    }
    Ok(clamp_unit(4.0 * PI * a / (p * p)))
}

/// Closed polyline resampled to `n` points equally spaced in arc length.
fn resample(points: &[[f64; 2]], n: usize) -> Vec<[f64; 2]> {
    let m = points.len();
    let mut cum = vec![0.0];
    for i in 0..m {
        let (a, b) = (points[i], points[(i + 1) % m]);
        cum.push(cum[i] + (b[0] - a[0]).hypot(b[1] - a[1]));
    }
    let total = cum[m];
    let mut seg = 0;
    (0..n)
        .map(|k| {
            let s = total * k as f64 / n as f64;
            while seg + 1 < m && cum[seg + 1] <= s {
                seg += 1;
            }
            let len = cum[seg + 1] - cum[seg];
            let t = if len > 0.0 { (s - cum[seg]) / len } else { 0.0 };
            let (a, b) = (points[seg], points[(seg + 1) % m]);
            [a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])]
        })
        .collect()
}

fn closed_length(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let (a, b) = (points[i], points[(i + 1) % n]);
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

/// Perimeter of the contour rebuilt from Fourier descriptors `-k..=k`
/// over the raw perimeter, clamped to (0, 1].
pub fn smoothness(c: &Contour, k: usize) -> Result<f64, MetricsError> {
    let need = 2 * k + 1;
    if c.len() < need {
        return Err(MetricsError::TooFewPoints { got: c.len(), need });
    }
    let raw = c.perimeter();
    if !(raw > 0.0) {
        return Err(MetricsError::DegenerateContour);
    }
    let n = 512.max(4 * need);
    let pts = resample(c.points(), n);
    let w = -2.0 * PI / n as f64;
    let coeffs: Vec<(i64, f64, f64)> = (-(k as i64)..=k as i64)
        .map(|m| {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, p) in pts.iter().enumerate() {
                let (s, co) = (w * (m * j as i64) as f64).sin_cos();
                re += p[0] * co - p[1] * s;
                im += p[0] * s + p[1] * co;
            }
            (m, re / n as f64, im / n as f64)
        })
        .collect();
    let rebuilt: Vec<[f64; 2]> = (0..n)
        .map(|j| {
            let (mut x, mut y) = (0.0, 0.0);
            for &(m, re, im) in &coeffs {
                let (s, co) = (-w * (m * j as i64) as f64).sin_cos();
                x += re * co - im * s;
                y += re * s + im * co;
            }
            [x, y]
        })
        .collect();
    Ok(clamp_unit(closed_length(&rebuilt) / raw))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Perforation {
    pub area_mm2: f64,
    pub sites: usize,
}

/// Resection pixels lying outside the convex hull of the remaining
/// central-zone pixel centers. Frames without central-zone pixels report none.
pub fn perforation(mask: ArrayView2<'_, u8>, pixel_size_mm: f64) -> Perforation {
    let (h, w) = mask.dim();
    let centers: Vec<[f64; 2]> = mask
        .indexed_iter()
        .filter(|(_, &v)| v == Class::Central.code())
        .map(|((y, x), _)| [x as f64 + 0.5, y as f64 + 0.5])
        .collect();
    if centers.is_empty() {
        return Perforation { area_mm2: 0.0, sites: 0 };
    }
    let hull = rasterize_convex_inclusive(&convex_hull(&centers), h, w);
    let outside = Zip::from(&mask)
        .and(&hull)
        .map_collect(|&v, &in_hull| v == Class::Resection.code() && !in_hull);
    let (_, sizes) = label_components_2d(outside.view());
    let count: usize = sizes.iter().skip(1).sum();
    Perforation {
        area_mm2: count as f64 * pixel_size_mm * pixel_size_mm,
        sites: sizes.len() - 1,
    }
}

/// Outer boundary of the largest 4-connected resection component, if any.
pub fn resection_contour(mask: ArrayView2<'_, u8>) -> Option<Contour> {
    let res = class_mask_2d(mask, Class::Resection);
    let (labels, sizes) = label_components_2d(res.view());
    let (best, _) = sizes
        .iter()
        .enumerate()
        .skip(1)
        .max_by(|a, b| a.1.cmp(b.1).then(b.0.cmp(&a.0)))?;
    let comp = labels.mapv(|l| l as usize == best);
    boundary_loops(comp.view())
        .into_iter()
        .filter(|l| polygon_signed_area(l) > 0.0)
        .max_by(|a, b| polygon_signed_area(a).total_cmp(&polygon_signed_area(b)))
        .and_then(|l| Contour::new(l).ok())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameMetrics {
    pub slice: usize,
    pub circularity: f64,
    pub smoothness: f64,
    pub perforation_area_mm2: f64,
    pub perforation_sites: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
}

impl Aggregate {
    /// Sample standard deviation, 0 for fewer than two values.
    pub fn of(values: &[f64]) -> Option<Self> {
        let n = values.len();
        if n == 0 {
            return None;
        }
        // shifted by the first value so constant series give exactly zero spread
        let shift = values[0];
        let dmean = values.iter().map(|v| v - shift).sum::<f64>() / n as f64;
        let mean = shift + dmean;
        let std = if n < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - shift - dmean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        };
        Some(Self {
            mean,
            std,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsAggregates {
    pub circularity: Aggregate,
    pub smoothness: Aggregate,
    pub perforation_area_mm2: Aggregate,
    pub perforation_sites: Aggregate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub frame_count: usize,
    /// Frames without resection pixels, which have no entry in `per_frame`.
    pub skipped: usize,
    pub harmonics: usize,
    pub per_frame: Vec<FrameMetrics>,
    /// `None` when no frame has a resection.
    pub aggregates: Option<MetricsAggregates>,
}

impl MetricsReport {
    pub fn total_perforation_mm2(&self) -> f64 {
        self.per_frame.iter().map(|f| f.perforation_area_mm2).sum()
    }

    fn aggregate(per_frame: &[FrameMetrics]) -> Option<MetricsAggregates> {
        let col = |f: fn(&FrameMetrics) -> f64| per_frame.iter().map(f).collect::<Vec<_>>();
        Some(MetricsAggregates {
            circularity: Aggregate::of(&col(|f| f.circularity))?,
            smoothness: Aggregate::of(&col(|f| f.smoothness))?,
            perforation_area_mm2: Aggregate::of(&col(|f| f.perforation_area_mm2))?,
            perforation_sites: Aggregate::of(&col(|f| f.perforation_sites as f64))?,
        })
    }

    /// `key=value` lines: definitions, counts, aggregates, then one line per frame.
    pub fn to_kv(&self) -> String {
        let mut out = String::new();
        for (k, v) in DEFINITIONS {
            let _ = writeln!(out, "{k}.definition={v}");
        }
        let _ = writeln!(out, "harmonics={}", self.harmonics);
        let _ = writeln!(out, "frames={}", self.frame_count);
        let _ = writeln!(out, "frames.scored={}", self.per_frame.len());
        let _ = writeln!(out, "frames.skipped={}", self.skipped);
        let _ = writeln!(out, "perforation_area_mm2.total={:.6}", self.total_perforation_mm2());
        if let Some(a) = &self.aggregates {
            for (name, g) in [
                ("circularity", &a.circularity),
                ("smoothness", &a.smoothness),
                ("perforation_area_mm2", &a.perforation_area_mm2),
                ("perforation_sites", &a.perforation_sites),
            ] {
                let _ = writeln!(out, "{name}.mean={:.6}", g.mean);
                let _ = writeln!(out, "{name}.std={:.6}", g.std);
                let _ = writeln!(out, "{name}.min={:.6}", g.min);
                let _ = writeln!(out, "{name}.max={:.6}", g.max);
            }
        }
        for f in &self.per_frame {
            let _ = writeln!(
                out,
                "frame.{:04}={:.6},{:.6},{:.6},{}",
                f.slice, f.circularity, f.smoothness, f.perforation_area_mm2, f.perforation_sites
            );
        }
        out
    }

    /// Tab-separated per-frame series with a header row.
    pub fn series_tsv(&self) -> String {
        let mut out = String::from("slice\tcircularity\tsmoothness\tperforation_area_mm2\tperforation_sites\n");
        for f in &self.per_frame {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{}",
                f.slice, f.circularity, f.smoothness, f.perforation_area_mm2, f.perforation_sites
            );
        }
        out
    }
}

/// Scores every frame that contains resection pixels.
///
/// Boundaries too short for `harmonics` use as many harmonics as their
/// point count allows.
pub fn metrics_stack(vol: &LabelVolume, harmonics: usize) -> Result<MetricsReport, MetricsError> {
    let n = vol.slice_count();
    if n == 0 {
        return Err(MetricsError::EmptyStack);
    }
    let px = vol.manifest().pixel_size_mm;
    let scored: Vec<Option<Result<FrameMetrics, MetricsError>>> = (0..n)
        .into_par_iter()
        .map(|k| {
            let mask = vol.slice(k);
            let contour = resection_contour(mask)?;
            Some((|| {
                let k_eff = harmonics.min((contour.len() - 1) / 2);
                let p = perforation(mask, px);
                Ok(FrameMetrics {
                    slice: k,
                    circularity: circularity(&contour)?,
                    smoothness: smoothness(&contour, k_eff)?,
                    perforation_area_mm2: p.area_mm2,
                    perforation_sites: p.sites,
                })
            })())
        })
        .collect();
    let mut per_frame = Vec::new();
    for s in scored.into_iter().flatten() {
        per_frame.push(s?);
    }
    Ok(MetricsReport {
        frame_count: n,
        skipped: n - per_frame.len(),
        harmonics,
        aggregates: MetricsReport::aggregate(&per_frame),
        per_frame,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ScanManifest;
    use crate::phantom::{ellipse_radius, synth_phantom, PhantomSpec};
    use ndarray::{Array2, Array3};
    use proptest::prelude::*;

    fn star(n_spikes: usize, r: f64, amp: f64, rot: f64, scale: f64) -> Contour {
        let pts = (0..2 * n_spikes)
            .map(|i| {
                let t = rot + PI * i as f64 / n_spikes as f64;
                let rr = if i % 2 == 0 { r * (1.0 + amp) } else { r };
                [scale * rr * t.cos(), scale * rr * t.sin()]
            })
            .collect();
        Contour::new(pts).unwrap()
    }

    /// Independent Fourier-descriptor smoothness: densify each edge,
    /// plain DFT over the densified chain, rebuild at the same points.
    fn smoothness_oracle(pts: &[[f64; 2]], k: i64) -> f64 {
        let per_edge = 64;
        let mut dense = Vec::new();
        let total: f64 = closed_length(pts);
        let m = pts.len();
        // place samples proportionally to edge length
        let n = per_edge * m;
        for i in 0..n {
            let s = total * i as f64 / n as f64;
            let mut acc = 0.0;
            for e in 0..m {
                let (a, b) = (pts[e], pts[(e + 1) % m]);
                let len = (b[0] - a[0]).hypot(b[1] - a[1]);
                if s <= acc + len || e == m - 1 {
                    let t = ((s - acc) / len).clamp(0.0, 1.0);
                    dense.push((a[0] + t * (b[0] - a[0]), a[1] + t * (b[1] - a[1])));
                    break;
                }
                acc += len;
            }
        }
        let nn = dense.len() as f64;
        let coef = |h: i64| {
            dense.iter().enumerate().fold((0.0, 0.0), |(re, im), (j, &(x, y))| {
                let ang = -2.0 * PI * h as f64 * j as f64 / nn;
                (re + x * ang.cos() - y * ang.sin(), im + x * ang.sin() + y * ang.cos())
            })
        };
        let cs: Vec<(i64, (f64, f64))> = (-k..=k).map(|h| (h, coef(h))).collect();
        let rebuilt: Vec<[f64; 2]> = (0..dense.len())
            .map(|j| {
                cs.iter().fold([0.0, 0.0], |acc, &(h, (re, im))| {
                    let ang = 2.0 * PI * h as f64 * j as f64 / nn;
                    [acc[0] + (re * ang.cos() - im * ang.sin()) / nn, acc[1] + (re * ang.sin() + im * ang.cos()) / nn]
                })
            })
            .collect();
        (closed_length(&rebuilt) / total).min(1.0)
    }

    #[test]
    fn circle_and_square_circularity() {
        let c = Contour::circle(0.0, 0.0, 50.0, 256).unwrap();
        assert!((circularity(&c).unwrap() - 1.0).abs() <= 0.05);
        let sq = Contour::rectangle(0.0, 0.0, 10.0, 10.0).unwrap();
        assert!((circularity(&sq).unwrap() - PI / 4.0).abs() <= 0.01);
    }

    #[test]
    fn circle_is_smooth_and_star_is_not() {
        let c = Contour::circle(0.0, 0.0, 50.0, 256).unwrap();
        assert!((smoothness(&c, DEFAULT_HARMONICS).unwrap() - 1.0).abs() <= 0.02);
        let s = star(12, 40.0, 0.3, 0.0, 1.0);
        let got = smoothness(&s, DEFAULT_HARMONICS).unwrap();
        let oracle = smoothness_oracle(s.points(), DEFAULT_HARMONICS as i64);
        assert!(oracle < 0.8, "oracle {oracle}");
        assert!(got < 0.8, "smoothness {got}");
        assert!((got - oracle).abs() < 0.01, "{got} vs {oracle}");
    }

    #[test]
    fn short_contour_rejected() {
        let c = Contour::circle(0.0, 0.0, 5.0, 5).unwrap();
        assert_eq!(
            smoothness(&c, 10),
            Err(MetricsError::TooFewPoints { got: 5, need: 21 })
        );
    }

    fn frame_with_central_block() -> Array2<u8> {
        // peripheral ring around a 40x40 central block with a resection core
        let mut m = Array2::from_elem((80, 80), 1u8);
        m.slice_mut(ndarray::s![20..60, 20..60]).fill(2);
        m.slice_mut(ndarray::s![30..50, 30..50]).fill(3);
        m
    }

    #[test]
    fn resection_inside_central_zone_is_not_perforation() {
        let m = frame_with_central_block();
        assert_eq!(perforation(m.view(), 0.5), Perforation { area_mm2: 0.0, sites: 0 });
    }

    #[test]
    fn single_and_double_patches() {
        let mut m = frame_with_central_block();
        // 20 pixels: 4 rows x 5 columns just above the central block
        m.slice_mut(ndarray::s![16..20, 35..40]).fill(3);
        let px = 0.1f64.sqrt();
        let p = perforation(m.view(), px);
        assert!((p.area_mm2 - 2.0).abs() < 1e-12 && p.sites == 1, "{p:?}");
        // second 10-pixel patch on the other side
        m.slice_mut(ndarray::s![35..37, 60..65]).fill(3);
        let p = perforation(m.view(), 1.0);
        assert_eq!(p, Perforation { area_mm2: 30.0, sites: 2 });
    }

    #[test]
    fn identical_frames_have_zero_spread() {
        let mut m = frame_with_central_block();
        m.slice_mut(ndarray::s![16..20, 35..40]).fill(3);
        let slices = vec![m; 6];
        let vol = LabelVolume::from_slices(ScanManifest::new(6, 80, 80, 0.2, 6.0, "same").unwrap(), &slices).unwrap();
        let r = metrics_stack(&vol, DEFAULT_HARMONICS).unwrap();
        assert_eq!(r.per_frame.len(), 6);
        let a = r.aggregates.clone().unwrap();
        for g in [a.circularity, a.smoothness, a.perforation_area_mm2, a.perforation_sites] {
            assert_eq!(g.std, 0.0);
            assert_eq!(g.min, g.max);
        }
        assert!(r.to_kv().contains("frames.skipped=0"));
        assert_eq!(r.series_tsv().lines().count(), 7);
    }

    #[test]
    fn unresected_phantom_gives_empty_series() {
        let spec = PhantomSpec {
            channel_radius_mm: 0.0,
            ..PhantomSpec::unresected(0)
        };
        let m = ScanManifest::new(10, 128, 128, 0.4, 60.0, "u").unwrap();
        let (_, labels) = synth_phantom(&spec, &m).unwrap();
        let r = metrics_stack(&labels, DEFAULT_HARMONICS).unwrap();
        assert!(r.per_frame.is_empty());
        assert_eq!(r.skipped, 10);
        assert!(r.aggregates.is_none());
        let empty = LabelVolume::new(m, Array3::zeros((10, 128, 128))).unwrap();
        assert_eq!(metrics_stack(&empty, 10).unwrap().skipped, 10);
    }

    #[test]
    fn phantom_perforation_matches_patch_geometry() {
        let spec = PhantomSpec {
            speckle_sigma: 0.0,
            ..PhantomSpec::resected(0)
        };
        let m = PhantomSpec::default_manifest("perf");
        let (_, labels) = synth_phantom(&spec, &m).unwrap();
        let r = metrics_stack(&labels, DEFAULT_HARMONICS).unwrap();
        // analytic in-plane wedge areas between the central boundary and
        // the patch depth (capped by the outer boundary), summed over slices
        let res = spec.resection.as_ref().unwrap();
        let cz = m.scan_length_mm / 2.0;
        let section = |r: [f64; 3], dz: f64| {
            let t = 1.0 - (dz / r[2]).powi(2);
            [r[0] * t.max(0.0).sqrt(), r[1] * t.max(0.0).sqrt()]
        };
        let mut expected = 0.0;
        for k in 0..m.slice_count {
            let z = (k as f64 + 0.5) * m.slice_spacing_mm;
            let (outer, central) = (section(spec.outer_radii_mm, z - cz), section(spec.central_radii_mm, z - cz));
            for p in &res.perforations {
                if z < p.z_range_mm[0] || z >= p.z_range_mm[1] {
                    continue;
                }
                let steps = 2000;
                let (a0, a1) = (p.angle_range_deg[0].to_radians(), p.angle_range_deg[1].to_radians());
                let dt = (a1 - a0) / steps as f64;
                for i in 0..steps {
                    let t = a0 + (i as f64 + 0.5) * dt;
                    let rc = ellipse_radius(central, t);
                    let hi = (rc + p.depth_mm).min(ellipse_radius(outer, t));
                    expected += 0.5 * (hi * hi - rc * rc).max(0.0) * dt;
                }
            }
        }
        let got = r.total_perforation_mm2();
        assert!(expected > 0.0);
        assert!((got - expected).abs() / expected < 0.10, "{got} vs {expected}");
    }

    fn random_star() -> impl Strategy<Value = Vec<[f64; 2]>> {
        (5usize..40).prop_flat_map(|n| {
            prop::collection::vec((0.2f64..1.0, 0.0f64..1.0), n).prop_map(move |v| {
                // sorted angles with radial jitter: star-shaped, hence simple
                let mut ang: Vec<f64> = v.iter().enumerate().map(|(i, (_, j))| (i as f64 + 0.9 * j) * 2.0 * PI / n as f64).collect();
                ang.sort_by(f64::total_cmp);
                ang.iter().zip(&v).map(|(t, (r, _))| [r * 30.0 * t.cos(), r * 30.0 * t.sin()]).collect()
            })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]
        #[test]
        fn circularity_bounded_and_scale_free(pts in random_star(), s in 0.01f64..100.0) {
            if let Ok(c) = Contour::new(pts.clone()) {
                let v = circularity(&c).unwrap();
                prop_assert!(v > 0.0 && v <= 1.0);
                let scaled = Contour::new(pts.iter().map(|p| [p[0] * s, p[1] * s]).collect()).unwrap();
                prop_assert!((circularity(&scaled).unwrap() - v).abs() < 1e-9);
            }
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn smoothness_rotation_and_scale_free(pts in random_star(), s in 0.1f64..10.0, rot in 0.0f64..(2.0 * PI)) {
            if let Ok(c) = Contour::new(pts.clone()) {
                let k = (c.len() - 1) / 2;
                let k = k.min(DEFAULT_HARMONICS);
                let v = smoothness(&c, k).unwrap();
                let (sn, cs) = rot.sin_cos();
                let moved = Contour::new(
                    pts.iter().map(|p| [s * (cs * p[0] - sn * p[1]) + 7.0, s * (sn * p[0] + cs * p[1]) - 3.0]).collect(),
                ).unwrap();
                prop_assert!((smoothness(&moved, k).unwrap() - v).abs() < 1e-9);
            }
        }

        #[test]
        fn perforation_adds_over_disjoint_patches(
            patches in prop::collection::vec((0usize..14, 1usize..4, 1usize..4), 1..5),
        ) {
            let base = frame_with_central_block();
            let mut all = base.clone();
            let mut sum = 0.0;
            // patches placed in separate 5-px columns along the top ring
            for (i, &(x, w, h)) in patches.iter().enumerate() {
                let x0 = 2 + i * 15 + x.min(9);
                let mut one = base.clone();
                one.slice_mut(ndarray::s![2..2 + h, x0..x0 + w]).fill(3);
                all.slice_mut(ndarray::s![2..2 + h, x0..x0 + w]).fill(3);
                sum += perforation(one.view(), 1.0).area_mm2;
            }
            prop_assert_eq!(perforation(all.view(), 1.0).area_mm2, sum);
        }
    }
}
