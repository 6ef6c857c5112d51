use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use super::ModelError;

/// Closed simple polygon in continuous pixel coordinates `(x, y)`.
///
/// The closing edge from the last point back to the first is implicit.
#[derive(Debug, Clone, PartialEq)]
pub struct Contour {
    points: Vec<[f64; 2]>,
}

impl Contour {
    /// Validates and builds a contour. Consecutive duplicate points are dropped
    /// before the checks run.
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self, ModelError> {
        let mut cleaned: Vec<[f64; 2]> = Vec::with_capacity(points.len());
        for p in points {
            if !(p[0].is_finite() && p[1].is_finite()) {
                return Err(ModelError::NonFinite);
            }
            if cleaned.last() != Some(&p) {
                cleaned.push(p);
            }
        }
        while cleaned.len() > 1 && cleaned.first() == cleaned.last() {
            cleaned.pop();
        }
        if cleaned.len() < 4 {
            return Err(ModelError::TooFewPoints(cleaned.len()));
        }
        if polygon_signed_area(&cleaned) == 0.0 {
            return Err(ModelError::ZeroArea);
        }
        if !is_simple(&cleaned) {
            return Err(ModelError::SelfIntersecting);
        }
        Ok(Self { points: cleaned })
    }

    /// Axis-aligned rectangle with corners `(x0, y0)` and `(x1, y1)`.
    pub fn rectangle(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self, ModelError> {
        Self::new(vec![[x0, y0], [x1, y0], [x1, y1], [x0, y1]])
    }

    /// Regular `n`-gon approximating a circle.
    pub fn circle(cx: f64, cy: f64, r: f64, n: usize) -> Result<Self, ModelError> {
        Self::new(
            (0..n)
                .map(|i| {
                    let t = std::f64::consts::TAU * i as f64 / n as f64;
                    [cx + r * t.cos(), cy + r * t.sin()]
                })
                .collect(),
        )
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn signed_area(&self) -> f64 {
        polygon_signed_area(&self.points)
    }

    pub fn area(&self) -> f64 {
        self.signed_area().abs()
    }

    pub fn perimeter(&self) -> f64 {
        polygon_perimeter(&self.points)
    }

    /// Area centroid.
    pub fn centroid(&self) -> [f64; 2] {
        let n = self.points.len();
        let (mut cx, mut cy, mut a2) = (0.0, 0.0, 0.0);
        for i in 0..n {
            let [x0, y0] = self.points[i];
            let [x1, y1] = self.points[(i + 1) % n];
            let cross = x0 * y1 - x1 * y0;
            a2 += cross;
            cx += (x0 + x1) * cross;
            cy += (y0 + y1) * cross;
        }
        [cx / (3.0 * a2), cy / (3.0 * a2)]
    }

    /// Copy scaled by `s` about `center`.
    pub fn scaled(&self, center: [f64; 2], s: f64) -> Result<Self, ModelError> {
        Self::new(
            self.points
                .iter()
                .map(|p| [center[0] + s * (p[0] - center[0]), center[1] + s * (p[1] - center[1])])
                .collect(),
        )
    }

    /// Pixels of a `height × width` image whose centers lie inside the contour.
    pub fn rasterize(&self, height: usize, width: usize) -> Array2<bool> {
        rasterize_polygon(&self.points, height, width)
    }

    /// Whether every vertex of `self` lies strictly inside `other` and the
    /// boundaries do not cross.
    pub fn is_inside(&self, other: &Contour) -> bool {
        self.points.iter().all(|&p| point_in_polygon(p, &other.points))
            && !boundaries_cross(&self.points, &other.points)
    }
}

pub fn polygon_signed_area(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    let mut s = 0.0;
    for i in 0..n {
        let [x0, y0] = points[i];
        let [x1, y1] = points[(i + 1) % n];
        s += x0 * y1 - x1 * y0;
    }
    0.5 * s
}

pub(crate) fn polygon_perimeter(points: &[[f64; 2]]) -> f64 {
    let n = points.len();
    (0..n)
        .map(|i| {
            let a = points[i];
            let b = points[(i + 1) % n];
            (b[0] - a[0]).hypot(b[1] - a[1])
        })
        .sum()
}

/// Even-odd test at pixel centers, scanline by scanline.
pub fn rasterize_polygon(points: &[[f64; 2]], height: usize, width: usize) -> Array2<bool> {
    let mut out = Array2::from_elem((height, width), false);
    let n = points.len();
    if n < 3 {
        return out;
    }
    let mut xs: Vec<f64> = Vec::new();
    for y in 0..height {
        let sy = y as f64 + 0.5;
        xs.clear();
        for i in 0..n {
            let [x0, y0] = points[i];
            let [x1, y1] = points[(i + 1) % n];
            if (y0 <= sy) != (y1 <= sy) {
                xs.push(x0 + (sy - y0) * (x1 - x0) / (y1 - y0));
            }
        }
        xs.sort_by(f64::total_cmp);
        for pair in xs.chunks_exact(2) {
            // pixel x is inside when pair[0] <= x + 0.5 < pair[1]
            let lo = (pair[0] - 0.5).ceil().max(0.0);
            let hi = (pair[1] - 0.5).ceil().min(width as f64);
            let (lo, hi) = (lo as isize, hi as isize);
            for x in lo..hi {
                out[[y, x as usize]] = true;
            }
        }
    }
    out
}

pub(crate) fn point_in_polygon(p: [f64; 2], poly: &[[f64; 2]]) -> bool {
    let n = poly.len();
    let mut inside = false;
    for i in 0..n {
        let [x0, y0] = poly[i];
        let [x1, y1] = poly[(i + 1) % n];
        if (y0 <= p[1]) != (y1 <= p[1]) {
            let x = x0 + (p[1] - y0) * (x1 - x0) / (y1 - y0);
            if p[0] < x {
                inside = !inside;
            }
        }
    }
    inside
}

fn orient(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

fn on_segment(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> bool {
    p[0] >= a[0].min(b[0]) && p[0] <= a[0].max(b[0]) && p[1] >= a[1].min(b[1]) && p[1] <= a[1].max(b[1])
}

/// Closed-segment intersection, touching included.
fn segments_intersect(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    let d1 = orient(c, d, a);
    let d2 = orient(c, d, b);
    let d3 = orient(a, b, c);
    let d4 = orient(a, b, d);
    if ((d1 > 0.0 && d2 < 0.0) || (d1 < 0.0 && d2 > 0.0))
        && ((d3 > 0.0 && d4 < 0.0) || (d3 < 0.0 && d4 > 0.0))
    {
        return true;
    }
    (d1 == 0.0 && on_segment(c, d, a))
        || (d2 == 0.0 && on_segment(c, d, b))
        || (d3 == 0.0 && on_segment(a, b, c))
        || (d4 == 0.0 && on_segment(a, b, d))
}

fn bbox_disjoint(a: [f64; 2], b: [f64; 2], c: [f64; 2], d: [f64; 2]) -> bool {
    a[0].max(b[0]) < c[0].min(d[0])
        || c[0].max(d[0]) < a[0].min(b[0])
        || a[1].max(b[1]) < c[1].min(d[1])
        || c[1].max(d[1]) < a[1].min(b[1])
}

fn is_simple(pts: &[[f64; 2]]) -> bool {
    let n = pts.len();
    for i in 0..n {
        let a = pts[i];
        let b = pts[(i + 1) % n];
        // adjacent edges may only share their common vertex
        let next = pts[(i + 2) % n];
        if orient(a, b, next) == 0.0 && {
            let d = [(b[0] - a[0]), (b[1] - a[1])];
            let e = [(next[0] - b[0]), (next[1] - b[1])];
            d[0] * e[0] + d[1] * e[1] < 0.0
        } {
            return false;
        }
        for j in (i + 2)..n {
            if i == 0 && j == n - 1 {
                continue;
            }
            let c = pts[j];
            let d = pts[(j + 1) % n];
            if bbox_disjoint(a, b, c, d) {
                continue;
            }
            if segments_intersect(a, b, c, d) {
                return false;
            }
        }
    }
    true
}

fn boundaries_cross(p: &[[f64; 2]], q: &[[f64; 2]]) -> bool {
    let (n, m) = (p.len(), q.len());
    for i in 0..n {
        let (a, b) = (p[i], p[(i + 1) % n]);
        for j in 0..m {
            let (c, d) = (q[j], q[(j + 1) % m]);
            if !bbox_disjoint(a, b, c, d) && segments_intersect(a, b, c, d) {
                return true;
            }
        }
    }
    false
}

/// Closed iso-0.5 boundary loops of a binary mask (marching squares on pixel
/// centers, diagonal saddles resolved so foreground is 4-connected).
///
/// Foreground loops have positive signed area, hole loops negative. Vertices
/// sit on midpoints between pixel centers, so rasterizing a foreground loop
/// reproduces its (hole-free) component exactly.
pub fn boundary_loops(mask: ArrayView2<'_, bool>) -> Vec<Vec<[f64; 2]>> {
    let (h, w) = mask.dim();
    let at = |i: isize, j: isize| -> bool {
        // padded corner (i, j) maps to pixel (i-1, j-1)
        let (x, y) = (i - 1, j - 1);
        x >= 0 && y >= 0 && (x as usize) < w && (y as usize) < h && mask[[y as usize, x as usize]]
    };
    // doubled integer coordinates of padded lattice; corner (i,j) -> (2i, 2j)
    let mut next: HashMap<(i64, i64), (i64, i64)> = HashMap::new();
    let mut starts: Vec<(i64, i64)> = Vec::new();
    for j in 0..=(h as isize) {
        for i in 0..=(w as isize) {
            let corners = [(i, j), (i + 1, j), (i + 1, j + 1), (i, j + 1)];
            let vals = corners.map(|(a, b)| at(a, b));
            let n_in = vals.iter().filter(|&&v| v).count();
            if n_in == 0 || n_in == 4 {
                continue;
            }
            let mid = |e: usize| -> (i64, i64) {
                let (a, b) = corners[e];
                let (c, d) = corners[(e + 1) % 4];
                ((a + c) as i64, (b + d) as i64)
            };
            // walk corners in order; edge e joins corner e and e+1
            for e in 0..4 {
                let here = vals[e];
                let there = vals[(e + 1) % 4];
                if !here && there {
                    // entering an inside run at edge e; find where it leaves
                    let mut k = (e + 1) % 4;
                    while vals[(k + 1) % 4] {
                        k = (k + 1) % 4;
                    }
                    let p_in = mid(e);
                    let p_out = mid(k);
                    next.insert(p_out, p_in);
                    starts.push(p_out);
                }
            }
        }
    }
    let mut loops = Vec::new();
    let mut visited: std::collections::HashSet<(i64, i64)> = std::collections::HashSet::new();
    for s in starts {
        if visited.contains(&s) {
            continue;
        }
        let mut lp = Vec::new();
        let mut cur = s;
        loop {
            visited.insert(cur);
            lp.push([cur.0 as f64 * 0.5 - 1.0 + 0.5, cur.1 as f64 * 0.5 - 1.0 + 0.5]);
            cur = next[&cur];
            if cur == s {
                break;
            }
        }
        loops.push(lp);
    }
    loops
}
