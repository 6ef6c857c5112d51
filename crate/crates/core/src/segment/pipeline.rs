use ndarray::{Array2, ArrayView2, Zip};
use serde::{Deserialize, Serialize};

use super::{
    active_contour, flood_fill, morph_chan_vese_in, morph_contrast_enhance, ChanVeseParams, EdgeField, SegmentError,
    SnakeParams,
};
use crate::model::{boundary_loops, polygon_signed_area, Class, Contour, ImageStack, LabelVolume};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentConfig {
    /// Gaussian smoothing before edge extraction (px).
    pub gauss_sigma: f64,
    pub snake: SnakeParams,
    /// First-slice outer initialization `[x0, y0, x1, y1]` in pixels.
    pub init_rect: [f64; 4],
    /// First-slice inner initialization: the outer contour scaled about its centroid.
    pub inner_init_scale: f64,
    /// In a stack, a slice whose outer or inner contour area drops below this
    /// fraction of the previous slice's is re-segmented from the first-slice
    /// initialization: a snake started inside a grown organ can lock onto the
    /// next edge inwards.
    pub prior_min_area_ratio: f64,
    pub chanvese: ChanVeseParams,
    pub tophat_radius_px: usize,
    pub flood_tolerance: u8,
    /// Minimum mean-gray difference for an object or cavity to count as present.
    pub min_contrast: f64,
}

impl Default for SegmentConfig {
    fn default() -> Self {
        Self {
            gauss_sigma: 2.0,
            snake: SnakeParams::default(),
            init_rect: [16.0, 16.0, 240.0, 240.0],
            inner_init_scale: 0.75,
            prior_min_area_ratio: 0.7,
            chanvese: ChanVeseParams::default(),
            tophat_radius_px: 15,
            flood_tolerance: 10,
            min_contrast: 15.0,
        }
    }
}

impl SegmentConfig {
    pub fn validate(&self) -> Result<(), SegmentError> {
        self.snake.validate()?;
        self.chanvese.validate()?;
        let bad = |m: &str| Err(SegmentError::InvalidConfig(m.to_string()));
        if !(self.gauss_sigma >= 0.0) {
            return bad("gauss_sigma must be >= 0");
        }
        let [x0, y0, x1, y1] = self.init_rect;
        if !(x1 > x0 && y1 > y0) {
            return bad("init_rect must have positive extent");
        }
        if !(self.inner_init_scale > 0.0 && self.inner_init_scale < 1.0) {
            return bad("inner_init_scale must lie in (0, 1)");
        }
        if !(0.0..=1.0).contains(&self.prior_min_area_ratio) {
            return bad("prior_min_area_ratio must lie in [0, 1]");
        }
        if self.tophat_radius_px == 0 {
            return Err(SegmentError::BadRadius);
        }
        if !(self.min_contrast >= 0.0) {
            return bad("min_contrast must be >= 0");
        }
        Ok(())
    }
}

/// Contours carried from one slice to the next.
#[derive(Debug, Clone, PartialEq)]
pub struct FramePrior {
    pub outer: Contour,
    pub inner: Contour,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct FrameDiagnostics {
    pub outer_iters: usize,
    pub inner_iters: usize,
    pub chanvese_iters: usize,
    /// Both contours and the Chan-Vese evolution reached their stopping criteria.
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSegmentation {
    pub outer: Contour,
    pub inner: Contour,
    pub resection: Vec<Contour>,
    /// 4-class label image.
    pub mask: Array2<u8>,
    pub diagnostics: FrameDiagnostics,
}

impl FrameSegmentation {
    pub fn prior(&self) -> FramePrior {
        FramePrior {
            outer: self.outer.clone(),
            inner: self.inner.clone(),
        }
    }
}

fn region_mean(img: &Array2<f64>, mask: &Array2<bool>) -> Option<f64> {
    let (mut s, mut n) = (0.0, 0usize);
    Zip::from(img).and(mask).for_each(|&v, &m| {
        if m {
            s += v;
            n += 1;
        }
    });
    (n > 0).then(|| s / n as f64)
}

/// Segments one slice into background / peripheral / central / resection.
pub fn segment_frame(
    image: ArrayView2<'_, u8>,
    prior: Option<&FramePrior>,
    cfg: &SegmentConfig,
) -> Result<FrameSegmentation, SegmentError> {
    cfg.validate()?;
    let (h, w) = image.dim();
    let field = EdgeField::from_image(image, cfg.gauss_sigma);
    let smoothed_gray = field.smoothed().mapv(|v| v * 255.0);

    let outer_init = match prior {
        Some(p) => p.outer.clone(),
        None => {
            let [x0, y0, x1, y1] = cfg.init_rect;
            Contour::rectangle(x0.max(0.5), y0.max(0.5), x1.min(w as f64 - 0.5), y1.min(h as f64 - 0.5))?
        }
    };
    let outer = active_contour(&field, &outer_init, &cfg.snake)?;
    let outer_mask = outer.contour.rasterize(h, w);
    let inside = region_mean(&smoothed_gray, &outer_mask);
    let outside = region_mean(&smoothed_gray, &outer_mask.mapv(|b| !b));
    let contrast = match (inside, outside) {
        (Some(a), Some(b)) => (a - b).abs(),
        _ => 0.0,
    };
    if contrast < cfg.min_contrast {
        return Err(SegmentError::NoObject(contrast));
    }

    let inner_init = match prior {
        Some(p) => p.inner.clone(),
        None => outer.contour.scaled(outer.contour.centroid(), cfg.inner_init_scale)?,
    };
    let inner = active_contour(&field, &inner_init, &cfg.snake)?;
    if !inner.contour.is_inside(&outer.contour) {
        return Err(SegmentError::ContainmentViolation);
    }
    let inner_mask = inner.contour.rasterize(h, w);

    let (region, cv_iters, cv_converged) = resection_region(image, &smoothed_gray, &inner_mask, &inner.contour, cfg)?;

    let mut mask = Array2::<u8>::zeros((h, w));
    Zip::from(&mut mask)
        .and(&outer_mask)
        .and(&inner_mask)
        .and(&region)
        .for_each(|m, &o, &i, &r| {
            *m = if r {
                Class::Resection.code()
            } else if i {
                Class::Central.code()
            } else if o {
                Class::Peripheral.code()
            } else {
                Class::Background.code()
            };
        });
    let resection = boundary_loops(region.view())
        .into_iter()
        .filter(|l| polygon_signed_area(l) > 0.0)
        .filter_map(|l| Contour::new(l).ok())
        .collect();

    Ok(FrameSegmentation {
        diagnostics: FrameDiagnostics {
            outer_iters: outer.iterations,
            inner_iters: inner.iterations,
            chanvese_iters: cv_iters,
            converged: outer.converged && inner.converged && cv_converged,
        },
        outer: outer.contour,
        inner: inner.contour,
        resection,
        mask,
    })
}

/// Contrast enhancement → Chan-Vese inside the inner contour → flood fill from the
/// inner contour's centroid. Returns an empty region when no dark cavity is
/// found at the seed.
fn resection_region(
    image: ArrayView2<'_, u8>,
    smoothed_gray: &Array2<f64>,
    inner_mask: &Array2<bool>,
    inner: &Contour,
    cfg: &SegmentConfig,
) -> Result<(Array2<bool>, usize, bool), SegmentError> {
    let (h, w) = image.dim();
    let empty = Array2::from_elem((h, w), false);
    let [cx, cy] = inner.centroid();
    let seed = ((cx - 0.5).round() as i64, (cy - 0.5).round() as i64);
    if seed.0 < 0 || seed.1 < 0 || seed.0 >= w as i64 || seed.1 >= h as i64 {
        return Err(SegmentError::SeedOutOfBounds(seed.0, seed.1));
    }
    let enhanced = morph_contrast_enhance(image, cfg.tophat_radius_px)?.mapv(|v| v as f64);
    let r = cfg.chanvese.init_radius_px;
    let init = Array2::from_shape_fn((h, w), |(y, x)| {
        inner_mask[[y, x]] && ((x as f64 - seed.0 as f64).hypot(y as f64 - seed.1 as f64) <= r)
    });
    let cv = match morph_chan_vese_in(enhanced.view(), init.view(), inner_mask.view(), &cfg.chanvese) {
        Ok(cv) => cv,
        Err(SegmentError::NoContrast { .. }) | Err(SegmentError::DegenerateInit) => return Ok((empty, 0, true)),
        Err(e) => return Err(e),
    };
    if !cv.mask[[seed.1 as usize, seed.0 as usize]] {
        return Ok((empty, cv.iterations, cv.converged));
    }
    let as_gray = cv.mask.mapv(|b| if b { 255u8 } else { 0 });
    let region = flood_fill(as_gray.view(), seed, cfg.flood_tolerance)?;
    // the cavity must be darker than the central tissue around it
    let ring = Zip::from(inner_mask).and(&region).map_collect(|&i, &r| i && !r);
    let surround = region_mean(smoothed_gray, &ring);
    let cavity = region_mean(smoothed_gray, &region);
    match (cavity, surround) {
        (Some(c), Some(s)) if s - c >= cfg.min_contrast => Ok((region, cv.iterations, cv.converged)),
        _ => Ok((empty, cv.iterations, cv.converged)),
    }
}

/// Outcome of one slice within a stack.
#[derive(Debug, Clone, PartialEq)]
pub enum SliceStatus {
    Segmented(FrameDiagnostics),
    /// Labels copied from slice `filled_from`.
    Failed { reason: String, filled_from: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct StackSegmentation {
    pub labels: LabelVolume,
    pub statuses: Vec<SliceStatus>,
}

impl StackSegmentation {
    pub fn failed_count(&self) -> usize {
        self.statuses
            .iter()
            .filter(|s| matches!(s, SliceStatus::Failed { .. }))
            .count()
    }

    /// One plain-text line per slice.
    pub fn log_lines(&self) -> Vec<String> {
        self.statuses
            .iter()
            .enumerate()
            .map(|(k, s)| match s {
                SliceStatus::Segmented(d) => format!(
                    "slice {k:04} ok converged={} outer_iters={} inner_iters={} chanvese_iters={}",
                    d.converged, d.outer_iters, d.inner_iters, d.chanvese_iters
                ),
                SliceStatus::Failed { reason, filled_from } => {
                    format!("slice {k:04} failed filled_from={filled_from:04} reason={reason}")
                }
            })
            .collect()
    }
}

fn plausible_after(seg: &FrameSegmentation, prior: &FramePrior, min_ratio: f64) -> bool {
    seg.outer.area() >= min_ratio * prior.outer.area() && seg.inner.area() >= min_ratio * prior.inner.area()
}

/// Segments slices in order, each initialized from the previous slice's
/// contours, falling back to the default initialization when that fails or
/// the contours shrink below `prior_min_area_ratio`.
/// Failed slices take the labels of the nearest segmented slice;
/// more than 20% failures abort.
pub fn segment_stack(stack: &ImageStack, cfg: &SegmentConfig) -> Result<StackSegmentation, SegmentError> {
    cfg.validate()?;
    if stack.is_empty() {
        return Err(SegmentError::EmptyStack);
    }
    let n = stack.len();
    let mut masks: Vec<Option<Array2<u8>>> = Vec::with_capacity(n);
    let mut outcomes: Vec<Result<FrameDiagnostics, String>> = Vec::with_capacity(n);
    let mut prior: Option<FramePrior> = None;
    for slice in stack.slices() {
        // a prior from a distant or very different slice can mislead; retry cold
        let attempt = match &prior {
            None => segment_frame(slice.view(), None, cfg),
            Some(p) => match segment_frame(slice.view(), Some(p), cfg) {
                Ok(seg) if plausible_after(&seg, p, cfg.prior_min_area_ratio) => Ok(seg),
                _ => segment_frame(slice.view(), None, cfg),
            },
        };
        match attempt {
            Ok(seg) => {
                prior = Some(seg.prior());
                outcomes.push(Ok(seg.diagnostics));
                masks.push(Some(seg.mask));
            }
            Err(e) => {
                outcomes.push(Err(e.to_string()));
                masks.push(None);
            }
        }
    }
    let failed = masks.iter().filter(|m| m.is_none()).count();
    if failed * 5 > n {
        return Err(SegmentError::FatalSegmentation { failed, total: n });
    }
    let ok_indices: Vec<usize> = (0..n).filter(|&k| masks[k].is_some()).collect();
    let mut slices = Vec::with_capacity(n);
    let mut statuses = Vec::with_capacity(n);
    for (k, outcome) in outcomes.into_iter().enumerate() {
        match outcome {
            Ok(d) => {
                slices.push(masks[k].clone().expect("segmented"));
                statuses.push(SliceStatus::Segmented(d));
            }
            Err(reason) => {
                let src = *ok_indices
                    .iter()
                    .min_by_key(|&&j| (j.abs_diff(k), j))
                    .expect("at least one slice segmented");
                slices.push(masks[src].clone().expect("segmented"));
                statuses.push(SliceStatus::Failed {
                    reason,
                    filled_from: src,
                });
            }
        }
    }
    let labels = LabelVolume::from_slices(stack.manifest().clone(), &slices)?;
    Ok(StackSegmentation { labels, statuses })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::iou;
    use crate::model::{class_mask_2d, rasterize_polygon, ScanManifest};
    use crate::phantom::{synth_phantom, PhantomSpec};

    fn noiseless() -> (ImageStack, LabelVolume) {
        let spec = PhantomSpec {
            speckle_sigma: 0.0,
            ..PhantomSpec::resected(0)
        };
        synth_phantom(&spec, &PhantomSpec::default_manifest("t")).unwrap()
    }

    fn class_iou(a: ArrayView2<'_, u8>, b: ArrayView2<'_, u8>, c: Class) -> f64 {
        iou(class_mask_2d(a, c).view(), class_mask_2d(b, c).view()).unwrap()
    }

    #[test]
    fn noiseless_frame_matches_ground_truth() {
        let (stack, truth) = noiseless();
        for k in [24, 48] {
            let seg = segment_frame(stack.slices()[k].view(), None, &SegmentConfig::default()).unwrap();
            for c in Class::ALL {
                let v = class_iou(seg.mask.view(), truth.slice(k), c);
                assert!(v >= 0.95, "slice {k} {c:?}: {v}");
            }
            assert!(seg.inner.is_inside(&seg.outer));
            assert!(!seg.resection.is_empty());
        }
    }

    #[test]
    fn repeated_frame_with_prior_is_a_fixpoint() {
        let (stack, _) = noiseless();
        let img = stack.slices()[30].view();
        let cfg = SegmentConfig::default();
        let first = segment_frame(img, None, &cfg).unwrap();
        assert!(first.diagnostics.converged);
        let second = segment_frame(img, Some(&first.prior()), &cfg).unwrap();
        assert_eq!(second.outer, first.outer);
        assert_eq!(second.inner, first.inner);
        assert_eq!(second.mask, first.mask);
    }

    #[test]
    fn inner_escaping_outer_is_rejected() {
        // two separate bright disks; the inner prior sits on the other one
        let img = Array2::from_shape_fn((128, 128), |(y, x)| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            if (px - 36.0).hypot(py - 64.0) <= 20.0 || (px - 96.0).hypot(py - 64.0) <= 16.0 {
                200u8
            } else {
                30
            }
        });
        let prior = FramePrior {
            outer: Contour::circle(36.0, 64.0, 26.0, 200).unwrap(),
            inner: Contour::circle(96.0, 64.0, 22.0, 200).unwrap(),
        };
        let r = segment_frame(img.view(), Some(&prior), &SegmentConfig::default());
        assert!(matches!(r, Err(SegmentError::ContainmentViolation)), "{r:?}");
    }

    #[test]
    fn single_slice_stack_matches_frame() {
        let (stack, _) = noiseless();
        let img = stack.slices()[40].clone();
        let m = ScanManifest::new(1, 256, 256, 0.2, 0.7, "one").unwrap();
        let one = ImageStack::new(m, vec![img.clone()]).unwrap();
        let cfg = SegmentConfig::default();
        let seg = segment_stack(&one, &cfg).unwrap();
        let frame = segment_frame(img.view(), None, &cfg).unwrap();
        assert_eq!(seg.labels.slice(0), frame.mask.view());
        assert_eq!(seg.statuses, vec![SliceStatus::Segmented(frame.diagnostics)]);
        assert_eq!(seg.log_lines().len(), 1);
    }

    #[test]
    fn uniform_stack_is_fatal() {
        let m = ScanManifest::new(4, 64, 64, 0.2, 4.0, "flat").unwrap();
        let stack = ImageStack::new(m, vec![Array2::from_elem((64, 64), 90u8); 4]).unwrap();
        let cfg = SegmentConfig {
            init_rect: [4.0, 4.0, 60.0, 60.0],
            ..SegmentConfig::default()
        };
        assert!(matches!(
            segment_stack(&stack, &cfg),
            Err(SegmentError::FatalSegmentation { failed: 4, total: 4 })
        ));
    }

    #[test]
    fn failed_slices_copy_nearest_labels() {
        let (stack, _) = noiseless();
        let mut slices: Vec<Array2<u8>> = stack.slices()[38..48].to_vec();
        slices[4] = Array2::from_elem((256, 256), 90);
        let m = ScanManifest::new(10, 256, 256, 0.2, 7.0, "gap").unwrap();
        let seg = segment_stack(&ImageStack::new(m, slices).unwrap(), &SegmentConfig::default()).unwrap();
        assert_eq!(seg.failed_count(), 1);
        assert!(matches!(&seg.statuses[4], SliceStatus::Failed { filled_from: 3, .. }));
        assert_eq!(seg.labels.slice(4), seg.labels.slice(3));
        assert!(seg.log_lines()[4].contains("failed"));
    }

    #[test]
    fn mask_regions_survive_contour_round_trip() {
        let (stack, _) = noiseless();
        let seg = segment_frame(stack.slices()[36].view(), None, &SegmentConfig::default()).unwrap();
        for c in Class::ALL {
            let mask = class_mask_2d(seg.mask.view(), c);
            let mut back = Array2::from_elem(mask.dim(), false);
            for l in boundary_loops(mask.view()) {
                let r = rasterize_polygon(&l, 256, 256);
                Zip::from(&mut back).and(&r).for_each(|b, &v| *b ^= v);
            }
            assert!(iou(mask.view(), back.view()).unwrap() >= 0.99, "{c:?}");
        }
    }

    #[test]
    fn iou_does_not_improve_with_more_speckle() {
        // a few unpropagated frames per seed; paired differences across noise levels
        let m = ScanManifest::new(5, 256, 256, 0.2, 60.0, "noise").unwrap();
        let sigmas = [0.0, 0.05, 0.1, 0.2];
        let seeds = 0..5u64;
        let mut scores = vec![Vec::new(); sigmas.len()];
        for seed in seeds {
            for (i, &s) in sigmas.iter().enumerate() {
                let spec = PhantomSpec {
                    speckle_sigma: s,
                    ..PhantomSpec::resected(seed)
                };
                let (stack, truth) = synth_phantom(&spec, &m).unwrap();
                for k in 1..4 {
                    let seg = segment_frame(stack.slices()[k].view(), None, &SegmentConfig::default()).unwrap();
                    let mean = Class::FOREGROUND
                        .iter()
                        .map(|&c| class_iou(seg.mask.view(), truth.slice(k), c))
                        .sum::<f64>()
                        / 3.0;
                    scores[i].push(mean);
                }
            }
        }
        for i in 1..sigmas.len() {
            let d: Vec<f64> = scores[i].iter().zip(&scores[i - 1]).map(|(a, b)| a - b).collect();
            let n = d.len() as f64;
            let mean = d.iter().sum::<f64>() / n;
            let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
            // an increase is allowed only within two standard errors
            assert!(mean <= 2.0 * sd / n.sqrt() + 1e-12, "sigma {}: mean change {mean}", sigmas[i]);
        }
    }
}
