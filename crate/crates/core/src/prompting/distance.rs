//! Exact Euclidean distance transforms in squared integer arithmetic
//! (Meijster, Roerdink & Hesselink separable algorithm).

use crate::raster::Mask;

/// Per-pixel squared distances, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DistanceField {
    width: u32,
    height: u32,
    squared: Vec<u64>,
}

impl DistanceField {
    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn squared(&self) -> &[u64] {
        &self.squared
    }

    pub fn squared_at(&self, x: u32, y: u32) -> u64 {
        self.squared[(y * self.width + x) as usize]
    }

    pub fn at(&self, x: u32, y: u32) -> f64 {
        (self.squared_at(x, y) as f64).sqrt()
    }
}

/// Distance from each foreground pixel to the nearest background pixel,
/// where every cell outside the image counts as background. Background
/// pixels map to 0.
pub fn distance_transform(m: &Mask) -> DistanceField {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let (pw, ph) = (w + 2, h + 2);
    let mut feature = vec![true; pw * ph];
    for y in 0..h {
        let row = &m.data()[y * w..(y + 1) * w];
        for (x, &v) in row.iter().enumerate() {
            feature[(y + 1) * pw + x + 1] = v == 0;
        }
    }
    let padded = squared_edt(pw, ph, &feature);
    let mut squared = Vec::with_capacity(w * h);
    for y in 0..h {
        squared.extend_from_slice(&padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + w]);
    }
    DistanceField {
        width: m.width(),
        height: m.height(),
        squared,
    }
}

/// Squared distance from every pixel to the nearest `true` cell of
/// `feature`. Cells are `u64::MAX` when there is no feature at all.
pub(crate) fn squared_edt(width: usize, height: usize, feature: &[bool]) -> Vec<u64> {
    debug_assert_eq!(feature.len(), width * height);
    let mut out = vec![0u64; width * height];
    if width == 0 || height == 0 {
        return out;
    }
    // Larger than any in-image distance, small enough to square in i64.
    let inf = (width + height) as u32;

    // Column pass, swept a row at a time: vertical distance to the nearest
    // feature.
    let mut g = vec![0u32; width * height];
    for (gv, &f) in g[..width].iter_mut().zip(&feature[..width]) {
        *gv = if f { 0 } else { inf };
    }
    for y in 1..height {
        let (above, rest) = g.split_at_mut(y * width);
        let above = &above[(y - 1) * width..];
        let row = &mut rest[..width];
        let feat = &feature[y * width..(y + 1) * width];
        for x in 0..width {
            row[x] = if feat[x] { 0 } else { (above[x] + 1).min(inf) };
        }
    }
    for y in (0..height - 1).rev() {
        let (head, below) = g.split_at_mut((y + 1) * width);
        let row = &mut head[y * width..];
        for (v, &b) in row.iter_mut().zip(&below[..width]) {
            *v = (*v).min(b + 1);
        }
    }

    // Row pass: lower envelope of parabolas.
    let inf2 = (inf as i64) * (inf as i64);
    let mut s = vec![0usize; width];
    let mut t = vec![0i64; width];
    let mut gsq = vec![0i64; width];
    for y in 0..height {
        for (q, &v) in gsq.iter_mut().zip(&g[y * width..(y + 1) * width]) {
            *q = (v as i64) * (v as i64);
        }
        let f = |x: i64, i: usize| (x - i as i64).pow(2) + gsq[i];
        // Floor division through f64 is exact here: the numerator stays far
        // below 2^53, so rounding can never cross an integer.
        let sep = |i: usize, u: usize| {
            let (i2, u2) = (i as i64, u as i64);
            let num = u2 * u2 - i2 * i2 + gsq[u] - gsq[i];
            (num as f64 / (2 * (u2 - i2)) as f64).floor() as i64
        };
        let mut q: isize = 0;
        s[0] = 0;
        t[0] = 0;
        for u in 1..width {
            while q >= 0 && f(t[q as usize], s[q as usize]) > f(t[q as usize], u) {
                q -= 1;
            }
            if q < 0 {
                q = 0;
                s[0] = u;
            } else {
                let next = 1 + sep(s[q as usize], u);
                if next < width as i64 {
                    q += 1;
                    s[q as usize] = u;
                    t[q as usize] = next;
                }
            }
        }
        let row = &mut out[y * width..(y + 1) * width];
        for u in (0..width).rev() {
            let d = f(u as i64, s[q as usize]);
            row[u] = if d >= inf2 { u64::MAX } else { d as u64 };
            if u as i64 == t[q as usize] {
                q -= 1;
            }
        }
    }
    out
}

/// Distance from each cell to the nearest cell outside the region along its
/// column, counting the rows above and below the image as outside.
fn vertical_depth(m: &Mask) -> Vec<u32> {
    let (w, h) = (m.width() as usize, m.height() as usize);
    let data = m.data();
    let mut g = vec![0u32; w * h];
    for (gv, &v) in g[..w].iter_mut().zip(&data[..w]) {
        *gv = (v != 0) as u32;
    }
    for y in 1..h {
        let (above, rest) = g.split_at_mut(y * w);
        let above = &above[(y - 1) * w..];
        for ((gv, &v), &a) in rest[..w].iter_mut().zip(&data[y * w..(y + 1) * w]).zip(above) {
            *gv = if v != 0 { a + 1 } else { 0 };
        }
    }
    for (gv, &v) in g[(h - 1) * w..].iter_mut().zip(&data[(h - 1) * w..]) {
        *gv = (*gv).min((v != 0) as u32);
    }
    for y in (0..h - 1).rev() {
        let (head, below) = g.split_at_mut((y + 1) * w);
        for (gv, &b) in head[y * w..].iter_mut().zip(&below[..w]) {
            *gv = (*gv).min(b + 1);
        }
    }
    g
}

/// The region pixel farthest from every non-region cell (the image border
/// counts as outside), as `(row-major index, squared distance)`. Ties go to
/// the lowest index. Equivalent to the argmax of [`distance_transform`] but
/// only evaluates pixels that can still win.
pub fn deepest_pixel(m: &Mask) -> Option<(usize, u64)> {
    let (w, h) = (m.width() as usize, m.height() as usize);
    if !m.has_foreground() {
        return None;
    }
    let g = vertical_depth(m);
    // Upper bound per pixel: the nearer of the vertical and horizontal runs.
    let mut bound = vec![0u32; w * h];
    let mut row_max = vec![0u32; h];
    for y in 0..h {
        let row = &m.data()[y * w..(y + 1) * w];
        let b = &mut bound[y * w..(y + 1) * w];
        let mut run = 0u32;
        for x in 0..w {
            run = if row[x] != 0 { run + 1 } else { 0 };
            b[x] = run;
        }
        run = 0;
        for x in (0..w).rev() {
            run = if row[x] != 0 { run + 1 } else { 0 };
            b[x] = b[x].min(run).min(g[y * w + x]);
        }
        row_max[y] = b.iter().copied().max().unwrap_or(0);
    }
    let mut rows: Vec<usize> = (0..h).filter(|&y| row_max[y] > 0).collect();
    rows.sort_by(|&a, &b| row_max[b].cmp(&row_max[a]).then(a.cmp(&b)));

    let mut best: Option<(usize, u64)> = None;
    for y in rows {
        let row_bound = row_max[y] as u64 * row_max[y] as u64;
        if best.is_some_and(|(_, d)| row_bound < d) {
            break;
        }
        let gy = &g[y * w..(y + 1) * w];
        for x in 0..w {
            let ub = bound[y * w + x] as u64;
            let ub2 = ub * ub;
            if ub == 0 || best.is_some_and(|(_, d)| ub2 < d) {
                continue;
            }
            // Exact depth: nearest column minimum within the current radius.
            // Every column closer than the horizontal run is inside the image.
            let mut d = ub2;
            let mut dx = 1usize;
            while ((dx * dx) as u64) < d {
                let dx2 = (dx * dx) as u64;
                for c in [x.wrapping_sub(dx), x + dx] {
                    if let Some(&gc) = gy.get(c) {
                        d = d.min(dx2 + gc as u64 * gc as u64);
                    }
                }
                dx += 1;
            }
            let idx = y * w + x;
            let better = match best {
                None => true,
                Some((bi, bd)) => d > bd || (d == bd && idx < bi),
            };
            if better {
                best = Some((idx, d));
            }
        }
    }
    best
}

/// Cells of `feature` dilated by a disk: true where some feature cell lies
/// within Euclidean distance `radius` (inclusive).
pub(crate) fn within_radius(feature: &Mask, radius: u32) -> Vec<bool> {
    let (w, h) = (feature.width() as usize, feature.height() as usize);
    let r = radius as u64;
    if w == 0 || h == 0 {
        return Vec::new();
    }
    if r > 32 {
        // Wide disks: one exact transform beats 2r + 1 row sweeps.
        let f: Vec<bool> = feature.data().iter().map(|&v| v != 0).collect();
        return squared_edt(w, h, &f).into_iter().map(|d| d <= r * r).collect();
    }
    // Vertical distance to the nearest feature, capped just past the radius.
    let cap = radius + 1;
    let data = feature.data();
    let mut g = vec![cap; w * h];
    for (gv, &v) in g[..w].iter_mut().zip(&data[..w]) {
        *gv = if v != 0 { 0 } else { cap };
    }
    for y in 1..h {
        let (above, rest) = g.split_at_mut(y * w);
        let above = &above[(y - 1) * w..];
        for ((gv, &v), &a) in rest[..w].iter_mut().zip(&data[y * w..(y + 1) * w]).zip(above) {
            *gv = if v != 0 { 0 } else { (a + 1).min(cap) };
        }
    }
    for y in (0..h - 1).rev() {
        let (head, below) = g.split_at_mut((y + 1) * w);
        for (v, &b) in head[y * w..].iter_mut().zip(&below[..w]) {
            *v = (*v).min(b + 1);
        }
    }
    let g2: Vec<u32> = g.iter().map(|&v| v * v).collect();
    let mut out = vec![false; w * h];
    for dx in 0..=radius.min(w as u32 - 1) as usize {
        let allow = (r * r) as u32 - (dx * dx) as u32;
        for y in 0..h {
            let row = &g2[y * w..(y + 1) * w];
            let o = &mut out[y * w..(y + 1) * w];
            // Feature column to the right (x + dx) and to the left (x - dx).
            for (ov, &gv) in o[..w - dx].iter_mut().zip(&row[dx..]) {
                *ov |= gv <= allow;
            }
            for (ov, &gv) in o[dx..].iter_mut().zip(&row[..w - dx]) {
                *ov |= gv <= allow;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Brute force over all pixels plus a one-cell ring of outside cells.
    fn brute_force(m: &Mask) -> Vec<u64> {
        let (w, h) = (m.width() as i64, m.height() as i64);
        let mut bg = Vec::new();
        for y in -1..=h {
            for x in -1..=w {
                if x < 0 || y < 0 || x >= w || y >= h || !m.get(x as u32, y as u32) {
                    bg.push((x, y));
                }
            }
        }
        let mut out = Vec::new();
        for y in 0..h {
            for x in 0..w {
                out.push(
                    bg.iter()
                        .map(|&(bx, by)| ((bx - x).pow(2) + (by - y).pow(2)) as u64)
                        .min()
                        .unwrap(),
                );
            }
        }
        out
    }

    #[test]
    fn isolated_pixel_is_one() {
        let m = Mask::from_fn(3, 3, |x, y| (x, y) == (1, 1));
        let d = distance_transform(&m);
        assert_eq!(d.squared_at(1, 1), 1);
        assert_eq!(d.squared_at(0, 0), 0);
    }

    #[test]
    fn full_five_by_five_center_is_three() {
        let m = Mask::from_fn(5, 5, |_, _| true);
        let d = distance_transform(&m);
        assert_eq!(d.squared(), &brute_force(&m)[..]);
        assert_eq!(d.at(2, 2), 3.0);
    }

    #[test]
    fn all_background_is_zero() {
        let d = distance_transform(&Mask::zeros(6, 4));
        assert!(d.squared().iter().all(|&v| v == 0));
    }

    #[test]
    fn no_features_is_infinite() {
        let d = squared_edt(4, 3, &[false; 12]);
        assert!(d.iter().all(|&v| v == u64::MAX));
    }

    #[test]
    fn deepest_pixel_examples() {
        assert_eq!(deepest_pixel(&Mask::zeros(3, 3)), None);
        let full = Mask::from_fn(5, 5, |_, _| true);
        assert_eq!(deepest_pixel(&full), Some((12, 9)));
        // 1-px segment: every pixel has depth 1, so the leftmost wins.
        let seg = Mask::from_fn(15, 3, |x, y| y == 1 && (2..13).contains(&x));
        assert_eq!(deepest_pixel(&seg), Some((17, 1)));
    }

    proptest! {
        #[test]
        fn deepest_pixel_is_first_argmax(
            (w, h, bits) in (1u32..=32, 1u32..=32).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.7), (w * h) as usize))
            })
        ) {
            let m = Mask::from_raw(w, h, bits.into_iter().map(u8::from).collect());
            let field = distance_transform(&m);
            let want = m
                .data()
                .iter()
                .zip(field.squared())
                .enumerate()
                .filter(|(_, (&v, _))| v != 0)
                .fold(None, |acc: Option<(usize, u64)>, (i, (_, &d))| match acc {
                    Some((_, bd)) if bd >= d => acc,
                    _ => Some((i, d)),
                });
            prop_assert_eq!(deepest_pixel(&m), want);
        }

        #[test]
        fn within_radius_matches_transform(
            (w, h, bits) in (1u32..=40, 1u32..=40).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.03), (w * h) as usize))
            }),
            radius in prop_oneof![0u32..=12, 30u32..=40],
        ) {
            let m = Mask::from_raw(w, h, bits.into_iter().map(u8::from).collect());
            let f: Vec<bool> = m.data().iter().map(|&v| v != 0).collect();
            let r2 = radius as u64 * radius as u64;
            let want: Vec<bool> = squared_edt(w as usize, h as usize, &f).into_iter().map(|d| d <= r2).collect();
            prop_assert_eq!(within_radius(&m, radius), want);
        }

        #[test]
        fn matches_brute_force(
            (w, h, bits) in (1u32..=24, 1u32..=24).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.8), (w * h) as usize))
            })
        ) {
            let m = Mask::from_raw(w, h, bits.into_iter().map(u8::from).collect());
            let got = distance_transform(&m);
            prop_assert_eq!(got.squared(), &brute_force(&m)[..]);
        }

        #[test]
        fn generic_edt_matches_brute_force(
            (w, h, feat) in (1usize..=20, 1usize..=20).prop_flat_map(|(w, h)| {
                (Just(w), Just(h), proptest::collection::vec(proptest::bool::weighted(0.1), w * h))
            })
        ) {
            let got = squared_edt(w, h, &feat);
            for y in 0..h {
                for x in 0..w {
                    let want = (0..w * h)
                        .filter(|&i| feat[i])
                        .map(|i| ((i % w) as i64 - x as i64).pow(2) as u64 + ((i / w) as i64 - y as i64).pow(2) as u64)
                        .min()
                        .unwrap_or(u64::MAX);
                    prop_assert_eq!(got[y * w + x], want);
                }
            }
        }
    }
}
