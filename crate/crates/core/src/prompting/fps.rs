//! Greedy farthest-point sampling over a pixel region.

use super::distance::deepest_pixel;
use super::{Point, PromptError, Role};
use crate::raster::Mask;

/// Points picked by [`farthest_point_sample`], in selection order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub points: Vec<Point>,
    /// Set when more points were requested than the region holds.
    pub truncated: bool,
}

/// Pick `k` spatially spread pixels of `region`.
///
/// The first pick is the pixel deepest inside the region (largest distance
/// transform value); each later pick maximises its minimum distance to the
/// picks so far. All ties go to the lowest row-major index.
pub fn farthest_point_sample(region: &Mask, k: usize, role: Role) -> Result<Sample, PromptError> {
    if k == 0 {
        return Ok(Sample {
            points: Vec::new(),
            truncated: false,
        });
    }
    let Some((x0, y0, x1, y1)) = bounding_box(region) else {
        return Err(PromptError::EmptyRegion { role });
    };
    let window = crop(region, x0, y0, x1 - x0 + 1, y1 - y0 + 1);
    Ok(sample_window(&window, (x0, y0), k))
}

fn bounding_box(m: &Mask) -> Option<(u32, u32, u32, u32)> {
    let w = m.width() as usize;
    let mut bbox: Option<(u32, u32, u32, u32)> = None;
    for (y, row) in m.data().chunks_exact(w).enumerate() {
        let Some(first) = row.iter().position(|&v| v != 0) else {
            continue;
        };
        let last = row.iter().rposition(|&v| v != 0).unwrap();
        let y = y as u32;
        bbox = Some(match bbox {
            None => (first as u32, y, last as u32, y),
            Some((a, b, c, _)) => (a.min(first as u32), b, c.max(last as u32), y),
        });
    }
    bbox
}

pub(crate) fn crop(m: &Mask, x0: u32, y0: u32, w: u32, h: u32) -> Mask {
    let src_w = m.width() as usize;
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for y in y0..y0 + h {
        let start = y as usize * src_w + x0 as usize;
        data.extend_from_slice(&m.data()[start..start + w as usize]);
    }
    Mask::from_raw(w, h, data)
}

/// Sample inside a cropped window. Because everything outside the window's
/// bounding box is outside the region, the window's border-as-background
/// distance transform equals that of the full frame.
pub(crate) fn sample_window(window: &Mask, origin: (u32, u32), k: usize) -> Sample {
    // Squared distances inside a window this size fit in i32 exactly.
    let small = window.width() <= 32768 && window.height() <= 32768;
    // Dense regions are swept row by row over the whole window; sparse ones
    // over a packed pixel list.
    let dense = window.count() * 2 >= window.len();
    match (small, dense) {
        (true, true) => sample_dense::<i32>(window, origin, k),
        (true, false) => sample_window_with::<i32>(window, origin, k),
        (false, true) => sample_dense::<u64>(window, origin, k),
        (false, false) => sample_window_with::<u64>(window, origin, k),
    }
}

/// Squared-distance type for the sweeps. The window-size guard rules out
/// overflow, so the arithmetic is written as wrapping ops: that keeps the
/// loops vectorizable in builds with overflow checks.
trait SqDist: Copy + Ord {
    const MAX: Self;
    const ZERO: Self;
    fn sq(dx: i32, dy: i32) -> Self;
    fn plus(self, other: Self) -> Self;
}

// Signed compares vectorize on baseline x86-64, unsigned ones do not.
// 2 * 32767^2 still fits in i32.
impl SqDist for i32 {
    const MAX: Self = i32::MAX;
    const ZERO: Self = 0;
    #[inline(always)]
    fn sq(dx: i32, dy: i32) -> i32 {
        dx.wrapping_mul(dx).wrapping_add(dy.wrapping_mul(dy))
    }
    #[inline(always)]
    fn plus(self, other: i32) -> i32 {
        self.wrapping_add(other)
    }
}

impl SqDist for u64 {
    const MAX: Self = u64::MAX;
    const ZERO: Self = 0;
    #[inline(always)]
    fn sq(dx: i32, dy: i32) -> u64 {
        let (dx, dy) = (dx as i64, dy as i64);
        dx.wrapping_mul(dx).wrapping_add(dy.wrapping_mul(dy)) as u64
    }
    #[inline(always)]
    fn plus(self, other: u64) -> u64 {
        self.wrapping_add(other)
    }
}

fn sample_dense<D: SqDist>(window: &Mask, origin: (u32, u32), k: usize) -> Sample {
    let ww = window.width() as usize;
    let count = window.count();
    let truncated = k > count;
    let k = k.min(count);
    let mut chosen = Vec::with_capacity(k);
    let Some((mut next, _)) = deepest_pixel(window) else {
        return Sample {
            points: chosen,
            truncated,
        };
    };
    // Cells outside the region sit at 0 and never win: while picks remain,
    // some unpicked region cell has a positive distance.
    let mut nearest: Vec<D> = window
        .data()
        .iter()
        .map(|&v| if v != 0 { D::MAX } else { D::ZERO })
        .collect();
    let mut dx2 = vec![D::ZERO; ww];
    // Largest nearest-distance per row; rows without region cells stay 0.
    let mut row_best: Vec<D> = window
        .data()
        .chunks_exact(ww)
        .map(|row| if row.iter().any(|&v| v != 0) { D::MAX } else { D::ZERO })
        .collect();
    while chosen.len() < k {
        let (px, py) = ((next % ww) as i32, (next / ww) as i32);
        chosen.push(Point {
            x: px as u32 + origin.0,
            y: py as u32 + origin.1,
        });
        for (x, v) in dx2.iter_mut().enumerate() {
            *v = D::sq((x as i32).wrapping_sub(px), 0);
        }
        for (y, rb) in row_best.iter_mut().enumerate() {
            let dy2 = D::sq(0, y as i32 - py);
            // Nothing in this row is nearer to the new pick than it already
            // is to an earlier one.
            if dy2 >= *rb {
                continue;
            }
            let row = &mut nearest[y * ww..(y + 1) * ww];
            let mut m = D::ZERO;
            for (d, &h) in row.iter_mut().zip(&dx2) {
                let v = (*d).min(h.plus(dy2));
                *d = v;
                m = m.max(v);
            }
            *rb = m;
        }
        // First row holding the maximum, then its first cell.
        let best = row_best.iter().copied().max().unwrap_or(D::ZERO);
        let y = row_best.iter().position(|&m| m == best).unwrap_or(0);
        next = y * ww + nearest[y * ww..(y + 1) * ww].iter().position(|&d| d == best).unwrap_or(0);
    }
    Sample {
        points: chosen,
        truncated,
    }
}

fn sample_window_with<D: SqDist>(window: &Mask, origin: (u32, u32), k: usize) -> Sample {
    let ww = window.width() as usize;
    let deepest = deepest_pixel(window).map(|(i, _)| i);
    let mut xs: Vec<i32> = Vec::new();
    let mut ys: Vec<i32> = Vec::new();
    let mut seed = 0usize;
    for (i, &v) in window.data().iter().enumerate() {
        if v == 0 {
            continue;
        }
        if Some(i) == deepest {
            seed = xs.len();
        }
        xs.push((i % ww) as i32);
        ys.push((i / ww) as i32);
    }

    let truncated = k > xs.len();
    let k = k.min(xs.len());
    let mut chosen = Vec::with_capacity(k);
    let mut nearest = vec![D::MAX; xs.len()];
    let mut next = seed;
    while chosen.len() < k {
        let (px, py) = (xs[next], ys[next]);
        chosen.push(Point {
            x: px as u32 + origin.0,
            y: py as u32 + origin.1,
        });
        let mut best = D::ZERO;
        for ((d, &x), &y) in nearest.iter_mut().zip(&xs).zip(&ys) {
            let v = (*d).min(D::sq(x.wrapping_sub(px), y.wrapping_sub(py)));
            *d = v;
            best = best.max(v);
        }
        // First occurrence of the maximum, so ties keep the lowest index.
        next = nearest.iter().position(|&d| d == best).unwrap_or(0);
    }
    Sample {
        points: chosen,
        truncated,
    }
}
