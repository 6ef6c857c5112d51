use ndarray::{Array2, ArrayView2};

use super::SegmentError;

/// 4-connected region around `seed = (x, y)` of pixels whose value differs
/// from the seed value by at most `tolerance`.
pub fn flood_fill(img: ArrayView2<'_, u8>, seed: (i64, i64), tolerance: u8) -> Result<Array2<bool>, SegmentError> {
    let (h, w) = img.dim();
    let (sx, sy) = seed;
    if sx < 0 || sy < 0 || sx >= w as i64 || sy >= h as i64 {
        return Err(SegmentError::SeedOutOfBounds(sx, sy));
    }
    let (sx, sy) = (sx as usize, sy as usize);
    let reference = img[[sy, sx]] as i16;
    let tol = tolerance as i16;
    let ok = |v: u8| (v as i16 - reference).abs() <= tol;
    let mut region = Array2::from_elem((h, w), false);
    region[[sy, sx]] = true;
    let mut stack = vec![(sy, sx)];
    while let Some((y, x)) = stack.pop() {
        let neighbors = [
            (y.wrapping_sub(1), x),
            (y + 1, x),
            (y, x.wrapping_sub(1)),
            (y, x + 1),
        ];
        for (ny, nx) in neighbors {
            if ny < h && nx < w && !region[[ny, nx]] && ok(img[[ny, nx]]) {
                region[[ny, nx]] = true;
                stack.push((ny, nx));
            }
        }
    }
    Ok(region)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::VecDeque;

    /// Breadth-first reference fill.
    fn bfs(img: &Array2<u8>, seed: (usize, usize), tol: i16) -> Array2<bool> {
        let (h, w) = img.dim();
        let r = img[[seed.1, seed.0]] as i16;
        let mut seen = Array2::from_elem((h, w), false);
        let mut q = VecDeque::from([(seed.1, seed.0)]);
        seen[[seed.1, seed.0]] = true;
        while let Some((y, x)) = q.pop_front() {
            for (dy, dx) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                let (ny, nx) = (y as i64 + dy, x as i64 + dx);
                if ny < 0 || nx < 0 || ny >= h as i64 || nx >= w as i64 {
                    continue;
                }
                let (ny, nx) = (ny as usize, nx as usize);
                if !seen[[ny, nx]] && (img[[ny, nx]] as i16 - r).abs() <= tol {
                    seen[[ny, nx]] = true;
                    q.push_back((ny, nx));
                }
            }
        }
        seen
    }

    #[test]
    fn ring_interior() {
        let mut img = Array2::<u8>::zeros((11, 11));
        for y in 0..11 {
            for x in 0..11 {
                let d = ((x as f64 - 5.0).powi(2) + (y as f64 - 5.0).powi(2)).sqrt();
                if (3.5..4.5).contains(&d) {
                    img[[y, x]] = 255;
                }
            }
        }
        let region = flood_fill(img.view(), (5, 5), 0).unwrap();
        assert_eq!(region, bfs(&img, (5, 5), 0));
        assert!(!region[[0, 0]]);
        assert!(region.iter().filter(|&&b| b).count() > 20);
    }

    #[test]
    fn uniform_image_fills_everything() {
        let img = Array2::from_elem((6, 9), 42u8);
        assert!(flood_fill(img.view(), (8, 0), 0).unwrap().iter().all(|&b| b));
    }

    #[test]
    fn seed_outside_rejected() {
        let img = Array2::<u8>::zeros((4, 4));
        assert_eq!(flood_fill(img.view(), (-1, 0), 0), Err(SegmentError::SeedOutOfBounds(-1, 0)));
        assert!(flood_fill(img.view(), (4, 0), 0).is_err());
    }

    #[test]
    fn tolerance_matches_reference() {
        let img = Array2::from_shape_fn((15, 15), |(y, x)| ((x * 7 + y * 13) % 40) as u8);
        for tol in [0u8, 3, 10, 25] {
            assert_eq!(flood_fill(img.view(), (7, 7), tol).unwrap(), bfs(&img, (7, 7), tol as i16));
        }
    }
}
