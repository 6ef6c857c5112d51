use std::collections::VecDeque;

use ndarray::{Array2, ArrayView2, Zip};

use super::SegmentError;

/// Half-widths of the disk's rows, `dy = -r..=r`.
fn disk_rows(radius: usize) -> Vec<usize> {
    let r = radius as i64;
    (-r..=r)
        .map(|dy| ((r * r - dy * dy) as f64).sqrt().floor() as usize)
        .collect()
}

/// Sliding-window extreme over `[x - w, x + w]` clipped to the row.
fn sliding<F: Fn(u8, u8) -> bool>(row: &[u8], w: usize, better: F, out: &mut [u8]) {
    let n = row.len();
    let mut dq: VecDeque<usize> = VecDeque::new();
    let mut next = 0;
    for x in 0..n {
        let hi = (x + w).min(n - 1);
        while next <= hi {
            while let Some(&b) = dq.back() {
                if better(row[next], row[b]) || row[next] == row[b] {
                    dq.pop_back();
                } else {
                    break;
                }
            }
            dq.push_back(next);
            next += 1;
        }
        let lo = x.saturating_sub(w);
        while let Some(&f) = dq.front() {
            if f < lo {
                dq.pop_front();
            } else {
                break;
            }
        }
        out[x] = row[*dq.front().expect("window nonempty")];
    }
}

fn disk_filter(img: ArrayView2<'_, u8>, radius: usize, erode: bool) -> Array2<u8> {
    let (h, w) = img.dim();
    let rows = disk_rows(radius);
    let mut widths = rows.clone();
    widths.sort_unstable();
    widths.dedup();
    let better = |a: u8, b: u8| if erode { a < b } else { a > b };
    // per distinct half-width, the row-wise sliding extreme of every row
    let mut lut = vec![usize::MAX; radius + 1];
    let mut filtered: Vec<Array2<u8>> = Vec::with_capacity(widths.len());
    for (i, &hw) in widths.iter().enumerate() {
        lut[hw] = i;
        let mut f = Array2::<u8>::zeros((h, w));
        let mut buf = vec![0u8; w];
        for y in 0..h {
            let row: Vec<u8> = img.row(y).to_vec();
            sliding(&row, hw, better, &mut buf);
            f.row_mut(y).assign(&ndarray::ArrayView1::from(&buf[..]));
        }
        filtered.push(f);
    }
    let init = if erode { u8::MAX } else { u8::MIN };
    let mut out = Array2::from_elem((h, w), init);
    let r = radius as isize;
    for (i, &hw) in rows.iter().enumerate() {
        let dy = i as isize - r;
        let f = &filtered[lut[hw]];
        for y in 0..h {
            let sy = y as isize + dy;
            if sy < 0 || sy >= h as isize {
                continue;
            }
            let src = f.row(sy as usize);
            let mut dst = out.row_mut(y);
            Zip::from(&mut dst).and(&src).for_each(|d, &s| {
                if better(s, *d) {
                    *d = s;
                }
            });
        }
    }
    out
}

/// Grey erosion by a disk; neighbors outside the image are ignored.
pub fn grey_erode_disk(img: ArrayView2<'_, u8>, radius: usize) -> Array2<u8> {
    disk_filter(img, radius, true)
}

/// Grey dilation by a disk; neighbors outside the image are ignored.
pub fn grey_dilate_disk(img: ArrayView2<'_, u8>, radius: usize) -> Array2<u8> {
    disk_filter(img, radius, false)
}

/// `image − opening(image)`.
pub fn white_tophat(img: ArrayView2<'_, u8>, radius: usize) -> Array2<u8> {
    let opened = grey_dilate_disk(grey_erode_disk(img, radius).view(), radius);
    let mut out = img.to_owned();
    Zip::from(&mut out).and(&opened).for_each(|o, &p| *o -= p);
    out
}

/// `closing(image) − image`.
pub fn black_tophat(img: ArrayView2<'_, u8>, radius: usize) -> Array2<u8> {
    let mut closed = grey_erode_disk(grey_dilate_disk(img, radius).view(), radius);
    Zip::from(&mut closed).and(&img).for_each(|c, &i| *c -= i);
    closed
}

/// Top-hat contrast enhancement: `clamp(I + WTH(I) − BTH(I), 0, 255)` with a
/// disk structuring element.
pub fn morph_contrast_enhance(img: ArrayView2<'_, u8>, radius_px: usize) -> Result<Array2<u8>, SegmentError> {
    if radius_px == 0 {
        return Err(SegmentError::BadRadius);
    }
    let wth = white_tophat(img, radius_px);
    let bth = black_tophat(img, radius_px);
    let mut out = Array2::<u8>::zeros(img.dim());
    Zip::from(&mut out)
        .and(&img)
        .and(&wth)
        .and(&bth)
        .for_each(|o, &i, &t, &b| {
            *o = (i as i32 + t as i32 - b as i32).clamp(0, 255) as u8;
        });
    Ok(out)
}
