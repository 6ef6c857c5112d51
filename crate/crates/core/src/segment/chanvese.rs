use ndarray::{s, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use super::SegmentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChanVeseParams {
    /// Weight of the inside fit term.
    pub lambda1: f64,
    /// Weight of the outside fit term.
    pub lambda2: f64,
    /// Curvature-operator applications per iteration.
    pub smoothing_passes: usize,
    pub max_iters: usize,
    /// Radius of the seed disk used by the segmentation pipeline.
    pub init_radius_px: f64,
}

impl Default for ChanVeseParams {
    fn default() -> Self {
        Self {
            lambda1: 1.0,
            lambda2: 1.0,
            smoothing_passes: 1,
            max_iters: 200,
            init_radius_px: 3.0,
        }
    }
}

impl ChanVeseParams {
    pub fn validate(&self) -> Result<(), SegmentError> {
        if !(self.lambda1 > 0.0 && self.lambda2 > 0.0) {
            return Err(SegmentError::InvalidConfig("chanvese: lambda1 and lambda2 must be > 0".into()));
        }
        if !(self.init_radius_px > 0.0) {
            return Err(SegmentError::InvalidConfig("chanvese: init_radius_px must be > 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct ChanVeseOutcome {
    pub mask: Array2<bool>,
    pub iterations: usize,
    /// True when an iteration left the mask unchanged, or restored the mask
    /// of two iterations earlier.
    pub converged: bool,
    /// Within-region squared deviation of the initial mask, then after the
    /// data-fitting step of each iteration (before smoothing).
    pub energy: Vec<f64>,
}

/// Morphological Chan-Vese over the whole image.
pub fn morph_chan_vese(
    image: ArrayView2<'_, f64>,
    init: ArrayView2<'_, bool>,
    params: &ChanVeseParams,
) -> Result<ChanVeseOutcome, SegmentError> {
    let domain = Array2::from_elem(image.dim(), true);
    morph_chan_vese_in(image, init, domain.view(), params)
}

/// Morphological Chan-Vese restricted to `domain`: pixels outside it are
/// pinned outside the mask and excluded from both region means.
pub fn morph_chan_vese_in(
    image: ArrayView2<'_, f64>,
    init: ArrayView2<'_, bool>,
    domain: ArrayView2<'_, bool>,
    params: &ChanVeseParams,
) -> Result<ChanVeseOutcome, SegmentError> {
    params.validate()?;
    let (h, w) = image.dim();
    if init.dim() != (h, w) || domain.dim() != (h, w) {
        return Err(SegmentError::InvalidConfig("chanvese: image, init and domain shapes differ".into()));
    }
    // work on the domain's bounding box plus a one-pixel margin
    let (mut y0, mut y1, mut x0, mut x1) = (h, 0, w, 0);
    for ((y, x), &d) in domain.indexed_iter() {
        if d {
            y0 = y0.min(y);
            y1 = y1.max(y);
            x0 = x0.min(x);
            x1 = x1.max(x);
        }
    }
    if y0 > y1 {
        return Err(SegmentError::DegenerateInit);
    }
    let (y0, x0) = (y0.saturating_sub(1), x0.saturating_sub(1));
    let (y1, x1) = ((y1 + 2).min(h), (x1 + 2).min(w));
    let img = image.slice(s![y0..y1, x0..x1]);
    let dom = domain.slice(s![y0..y1, x0..x1]);
    let mut u = ndarray::Zip::from(init.slice(s![y0..y1, x0..x1]))
        .and(dom)
        .map_collect(|&a, &d| a && d);

    let n_dom = dom.iter().filter(|&&d| d).count();
    let n_in = u.iter().filter(|&&b| b).count();
    if n_in == 0 || n_in == n_dom {
        return Err(SegmentError::DegenerateInit);
    }
    let (c1, c2) = region_means(img, dom, u.view());
    if (c1 - c2).abs() < 1.0 {
        return Err(SegmentError::NoContrast {
            inside: c1,
            outside: c2,
        });
    }

    let mut energy = vec![fit_energy(img, dom, u.view())];
    let mut converged = false;
    let mut iterations = 0;
    let mut cycle = 0usize;
    let mut before_prev: Option<Array2<bool>> = None;
    let (ch, cw) = u.dim();
    while iterations < params.max_iters {
        let (c1, c2) = region_means(img, dom, u.view());
        let prev = u.clone();
        for y in 0..ch {
            for x in 0..cw {
                if !dom[[y, x]] || !has_gradient(prev.view(), y, x) {
                    continue;
                }
                let i = img[[y, x]];
                let aux = params.lambda1 * (i - c1).powi(2) - params.lambda2 * (i - c2).powi(2);
                if aux < 0.0 {
                    u[[y, x]] = true;
                } else if aux > 0.0 {
                    u[[y, x]] = false;
                }
            }
        }
        energy.push(fit_energy(img, dom, u.view()));
        for _ in 0..params.smoothing_passes {
            u = if cycle % 2 == 0 {
                sup_inf(inf_sup(u.view()).view())
            } else {
                inf_sup(sup_inf(u.view()).view())
            };
            cycle += 1;
        }
        ndarray::Zip::from(&mut u).and(dom).for_each(|v, &d| *v &= d);
        iterations += 1;
        // the alternating smoothing operator can settle into a 2-cycle
        if u == prev || before_prev.as_ref() == Some(&u) {
            converged = true;
            break;
        }
        before_prev = Some(prev);
    }

    let mut mask = Array2::from_elem((h, w), false);
    mask.slice_mut(s![y0..y1, x0..x1]).assign(&u);
    Ok(ChanVeseOutcome {
        mask,
        iterations,
        converged,
        energy,
    })
}

fn region_means(img: ArrayView2<'_, f64>, dom: ArrayView2<'_, bool>, u: ArrayView2<'_, bool>) -> (f64, f64) {
    let (mut s1, mut n1, mut s2, mut n2) = (0.0, 0usize, 0.0, 0usize);
    ndarray::Zip::from(img).and(dom).and(u).for_each(|&i, &d, &b| {
        if d {
            if b {
                s1 += i;
                n1 += 1;
            } else {
                s2 += i;
                n2 += 1;
            }
        }
    });
    (
        if n1 > 0 { s1 / n1 as f64 } else { 0.0 },
        if n2 > 0 { s2 / n2 as f64 } else { 0.0 },
    )
}

/// Sum of squared deviations from the region means, inside plus outside.
fn fit_energy(img: ArrayView2<'_, f64>, dom: ArrayView2<'_, bool>, u: ArrayView2<'_, bool>) -> f64 {
    let (c1, c2) = region_means(img, dom, u);
    let mut e = 0.0;
    ndarray::Zip::from(img).and(dom).and(u).for_each(|&i, &d, &b| {
        if d {
            e += if b { (i - c1).powi(2) } else { (i - c2).powi(2) };
        }
    });
    e
}

/// Nonzero central-difference gradient of the indicator (one-sided at edges).
fn has_gradient(u: ArrayView2<'_, bool>, y: usize, x: usize) -> bool {
    let (h, w) = u.dim();
    let gx = if w < 2 {
        false
    } else if x == 0 {
        u[[y, 1]] != u[[y, 0]]
    } else if x == w - 1 {
        u[[y, w - 1]] != u[[y, w - 2]]
    } else {
        u[[y, x + 1]] != u[[y, x - 1]]
    };
    let gy = if h < 2 {
        false
    } else if y == 0 {
        u[[1, x]] != u[[0, x]]
    } else if y == h - 1 {
        u[[h - 1, x]] != u[[h - 2, x]]
    } else {
        u[[y + 1, x]] != u[[y - 1, x]]
    };
    gx || gy
}

/// The four 3-pixel line segments through the origin, as `(dy, dx)` offsets.
const LINES: [(isize, isize); 4] = [(0, 1), (1, 0), (1, 1), (1, -1)];

fn sample(u: ArrayView2<'_, bool>, y: isize, x: isize) -> bool {
    let (h, w) = u.dim();
    y >= 0 && x >= 0 && (y as usize) < h && (x as usize) < w && u[[y as usize, x as usize]]
}

/// Supremum over line directions of the binary erosion.
fn sup_inf(u: ArrayView2<'_, bool>) -> Array2<bool> {
    Array2::from_shape_fn(u.dim(), |(y, x)| {
        if !u[[y, x]] {
            return false;
        }
        let (y, x) = (y as isize, x as isize);
        LINES
            .iter()
            .any(|&(dy, dx)| sample(u, y + dy, x + dx) && sample(u, y - dy, x - dx))
    })
}

/// Infimum over line directions of the binary dilation.
fn inf_sup(u: ArrayView2<'_, bool>) -> Array2<bool> {
    Array2::from_shape_fn(u.dim(), |(y, x)| {
        if u[[y, x]] {
            return true;
        }
        let (y, x) = (y as isize, x as isize);
        LINES
            .iter()
            .all(|&(dy, dx)| sample(u, y + dy, x + dx) || sample(u, y - dy, x - dx))
    })
}
