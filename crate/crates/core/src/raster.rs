//! Small raster utilities shared across stages: connected components,
//! hole filling, convex hulls and separable Gaussian smoothing.

use ndarray::{Array2, Array3, ArrayView2, ArrayView3};

/// 4-connected component labels (0 = not in mask, components numbered from 1
/// in raster order) and the size of each component (index 0 unused).
pub fn label_components_2d(mask: ArrayView2<'_, bool>) -> (Array2<u32>, Vec<usize>) {
    let (h, w) = mask.dim();
    let mut labels = Array2::<u32>::zeros((h, w));
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for y in 0..h {
        for x in 0..w {
            if !mask[[y, x]] || labels[[y, x]] != 0 {
                continue;
            }
            let id = sizes.len() as u32;
            let mut size = 0;
            labels[[y, x]] = id;
            stack.push((y, x));
            while let Some((cy, cx)) = stack.pop() {
                size += 1;
                let mut visit = |ny: usize, nx: usize| {
                    if mask[[ny, nx]] && labels[[ny, nx]] == 0 {
                        labels[[ny, nx]] = id;
                        stack.push((ny, nx));
                    }
                };
                if cy > 0 {
                    visit(cy - 1, cx);
                }
                if cy + 1 < h {
                    visit(cy + 1, cx);
                }
                if cx > 0 {
                    visit(cy, cx - 1);
                }
                if cx + 1 < w {
                    visit(cy, cx + 1);
                }
            }
            sizes.push(size);
        }
    }
    (labels, sizes)
}

/// 6-connected component labels of a `[[z, y, x]]` volume.
pub fn label_components_3d(mask: ArrayView3<'_, bool>) -> (Array3<u32>, Vec<usize>) {
    let (d, h, w) = mask.dim();
    let mut labels = Array3::<u32>::zeros((d, h, w));
    let mut sizes = vec![0usize];
    let mut stack = Vec::new();
    for z in 0..d {
        for y in 0..h {
            for x in 0..w {
                if !mask[[z, y, x]] || labels[[z, y, x]] != 0 {
                    continue;
                }
                let id = sizes.len() as u32;
                let mut size = 0;
                labels[[z, y, x]] = id;
                stack.push((z, y, x));
                while let Some((cz, cy, cx)) = stack.pop() {
                    size += 1;
                    let mut visit = |p: (usize, usize, usize)| {
                        if mask[[p.0, p.1, p.2]] && labels[[p.0, p.1, p.2]] == 0 {
                            labels[[p.0, p.1, p.2]] = id;
                            stack.push(p);
                        }
                    };
                    if cz > 0 {
                        visit((cz - 1, cy, cx));
                    }
                    if cz + 1 < d {
                        visit((cz + 1, cy, cx));
                    }
                    if cy > 0 {
                        visit((cz, cy - 1, cx));
                    }
                    if cy + 1 < h {
                        visit((cz, cy + 1, cx));
                    }
                    if cx > 0 {
                        visit((cz, cy, cx - 1));
                    }
                    if cx + 1 < w {
                        visit((cz, cy, cx + 1));
                    }
                }
                sizes.push(size);
            }
        }
    }
    (labels, sizes)
}

/// Fills background regions not 4-connected to the image border.
pub fn fill_holes(mask: ArrayView2<'_, bool>) -> Array2<bool> {
    let (h, w) = mask.dim();
    let mut outside = Array2::from_elem((h, w), false);
    let mut stack = Vec::new();
    let push = |y: usize, x: usize, outside: &mut Array2<bool>, stack: &mut Vec<(usize, usize)>| {
        if !mask[[y, x]] && !outside[[y, x]] {
            outside[[y, x]] = true;
            stack.push((y, x));
        }
    };
    for x in 0..w {
        push(0, x, &mut outside, &mut stack);
        push(h - 1, x, &mut outside, &mut stack);
    }
    for y in 0..h {
        push(y, 0, &mut outside, &mut stack);
        push(y, w - 1, &mut outside, &mut stack);
    }
    while let Some((y, x)) = stack.pop() {
        if y > 0 {
            push(y - 1, x, &mut outside, &mut stack);
        }
        if y + 1 < h {
            push(y + 1, x, &mut outside, &mut stack);
        }
        if x > 0 {
            push(y, x - 1, &mut outside, &mut stack);
        }
        if x + 1 < w {
            push(y, x + 1, &mut outside, &mut stack);
        }
    }
    outside.mapv(|o| !o)
}

/// Convex hull (counterclockwise in a y-up frame, i.e. positive shoelace
/// area) of a point set via the monotone chain.
pub fn convex_hull(points: &[[f64; 2]]) -> Vec<[f64; 2]> {
    let mut pts: Vec<[f64; 2]> = points.to_vec();
    pts.sort_by(|a, b| a[0].total_cmp(&b[0]).then(a[1].total_cmp(&b[1])));
    pts.dedup();
    if pts.len() < 3 {
        return pts;
    }
    let cross = |o: [f64; 2], a: [f64; 2], b: [f64; 2]| {
        (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])
    };
    let mut hull: Vec<[f64; 2]> = Vec::with_capacity(2 * pts.len());
    for &p in &pts {
        while hull.len() >= 2 && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    let lower_len = hull.len() + 1;
    for &p in pts.iter().rev().skip(1) {
        while hull.len() >= lower_len && cross(hull[hull.len() - 2], hull[hull.len() - 1], p) <= 0.0 {
            hull.pop();
        }
        hull.push(p);
    }
    hull.pop();
    hull
}

/// Pixels whose centers lie inside or on the convex polygon `hull`
/// (as returned by [`convex_hull`]).
pub fn rasterize_convex_inclusive(hull: &[[f64; 2]], height: usize, width: usize) -> Array2<bool> {
    let mut out = Array2::from_elem((height, width), false);
    if hull.len() < 3 {
        for p in hull {
            let (x, y) = ((p[0] - 0.5).round(), (p[1] - 0.5).round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < width && (y as usize) < height {
                out[[y as usize, x as usize]] = true;
            }
        }
        if hull.len() == 2 {
            // segment: mark pixel centers lying on it
            let (a, b) = (hull[0], hull[1]);
            for ((y, x), v) in out.indexed_iter_mut() {
                let p = [x as f64 + 0.5, y as f64 + 0.5];
                let c = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
                let within = (p[0] - a[0]) * (p[0] - b[0]) <= 0.0 && (p[1] - a[1]) * (p[1] - b[1]) <= 0.0;
                if c.abs() < 1e-9 && within {
                    *v = true;
                }
            }
        }
        return out;
    }
    let n = hull.len();
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for p in hull {
        x0 = x0.min(p[0]);
        x1 = x1.max(p[0]);
        y0 = y0.min(p[1]);
        y1 = y1.max(p[1]);
    }
    let ys = ((y0 - 0.5).floor().max(0.0) as usize)..(((y1 + 0.5).ceil().max(0.0) as usize).min(height));
    let xs = ((x0 - 0.5).floor().max(0.0) as usize)..(((x1 + 0.5).ceil().max(0.0) as usize).min(width));
    for y in ys {
        for x in xs.clone() {
            let p = [x as f64 + 0.5, y as f64 + 0.5];
            let inside = (0..n).all(|i| {
                let a = hull[i];
                let b = hull[(i + 1) % n];
                (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]) >= -1e-9
            });
            if inside {
                out[[y, x]] = true;
            }
        }
    }
    out
}

/// Separable Gaussian blur with edge clamping; `sigma == 0` copies.
pub fn gaussian_blur(img: ArrayView2<'_, f64>, sigma: f64) -> Array2<f64> {
    if sigma <= 0.0 {
        return img.to_owned();
    }
    let r = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-r..=r).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    let (h, w) = img.dim();
    let mut tmp = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let xx = (x as isize + i as isize - r).clamp(0, w as isize - 1) as usize;
                acc += kv * img[[y, xx]];
            }
            tmp[[y, x]] = acc;
        }
    }
    let mut out = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            for (i, kv) in k.iter().enumerate() {
                let yy = (y as isize + i as isize - r).clamp(0, h as isize - 1) as usize;
                acc += kv * tmp[[yy, x]];
            }
            out[[y, x]] = acc;
        }
    }
    out
}

/// Central-difference gradient `(d/dx, d/dy)`, one-sided at the borders.
pub fn gradient(img: ArrayView2<'_, f64>) -> (Array2<f64>, Array2<f64>) {
    let (h, w) = img.dim();
    let mut gx = Array2::<f64>::zeros((h, w));
    let mut gy = Array2::<f64>::zeros((h, w));
    for y in 0..h {
        for x in 0..w {
            gx[[y, x]] = if w < 2 {
                0.0
            } else if x == 0 {
                img[[y, 1]] - img[[y, 0]]
            } else if x == w - 1 {
                img[[y, w - 1]] - img[[y, w - 2]]
            } else {
                0.5 * (img[[y, x + 1]] - img[[y, x - 1]])
            };
            gy[[y, x]] = if h < 2 {
                0.0
            } else if y == 0 {
                img[[1, x]] - img[[0, x]]
            } else if y == h - 1 {
                img[[h - 1, x]] - img[[h - 2, x]]
            } else {
                0.5 * (img[[y + 1, x]] - img[[y - 1, x]])
            };
        }
    }
    (gx, gy)
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn components_use_4_connectivity() {
        let m = array![[true, false, true], [false, true, true], [true, false, false]];
        let (_, sizes) = label_components_2d(m.view());
        assert_eq!(&sizes[1..], &[1, 3, 1]);
    }

    #[test]
    fn components_3d() {
        let mut m = Array3::from_elem((3, 3, 3), false);
        m[[0, 0, 0]] = true;
        m[[1, 0, 0]] = true;
        m[[2, 2, 2]] = true;
        m[[1, 1, 1]] = true;
        let (_, sizes) = label_components_3d(m.view());
        assert_eq!(&sizes[1..], &[2, 1, 1]);
    }

    #[test]
    fn holes_are_filled() {
        let mut m = Array2::from_elem((5, 5), false);
        for y in 1..4 {
            for x in 1..4 {
                m[[y, x]] = !(y == 2 && x == 2);
            }
        }
        let f = fill_holes(m.view());
        assert!(f[[2, 2]]);
        assert_eq!(f.iter().filter(|&&b| b).count(), 9);
    }

    #[test]
    fn hull_of_square_with_interior_point() {
        let h = convex_hull(&[[0.0, 0.0], [2.0, 0.0], [1.0, 1.0], [2.0, 2.0], [0.0, 2.0]]);
        assert_eq!(h.len(), 4);
        let r = rasterize_convex_inclusive(&[[0.5, 0.5], [2.5, 0.5], [2.5, 2.5], [0.5, 2.5]], 4, 4);
        assert_eq!(r.iter().filter(|&&b| b).count(), 9);
    }

    #[test]
    fn blur_preserves_constants() {
        let img = Array2::from_elem((6, 7), 3.5);
        let b = gaussian_blur(img.view(), 1.5);
        assert!(b.iter().all(|&v| (v - 3.5).abs() < 1e-12));
    }
}
