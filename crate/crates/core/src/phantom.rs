//! Synthetic fixtures: grayscale images with thin curvilinear ribbons, their
//! ground truth, and a corrupted coarse mask with spurious blobs.
//!
//! Everything is integer arithmetic driven by a seeded ChaCha8 stream, so a
//! spec reproduces the same bytes on every platform.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::{squared_edt, Point};
use crate::raster::{Mask, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhantomSpec {
    pub width: u32,
    pub height: u32,
    pub ribbon_count: u32,
    pub ribbon_thickness: u32,
    pub noise_blob_count: u32,
    /// Every blob has strictly fewer pixels than this.
    pub noise_blob_max_area: u32,
    /// Largest per-tile erosion depth applied to the coarse mask.
    pub coarse_erosion: u32,
    pub rng_seed: u64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        PhantomSpec {
            width: 512,
            height: 512,
            ribbon_count: 2,
            ribbon_thickness: 9,
            noise_blob_count: 12,
            noise_blob_max_area: 999,
            coarse_erosion: 2,
            rng_seed: 0,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PhantomError {
    #[error("ribbons cannot fit: {0}")]
    CannotFit(String),
    #[error("noise blobs cannot fit: {0}")]
    BlobsCannotFit(String),
}

/// One injected spurious component.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Blob {
    pub center: Point,
    pub area: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Phantom {
    pub image: Raster,
    pub gt_mask: Mask,
    pub coarse_mask: Mask,
    pub blobs: Vec<Blob>,
    pub centerlines: Vec<Vec<Point>>,
}

const RIBBON_LEVEL: i32 = 180;
const RIBBON_JITTER: i32 = 10;
const TEXTURE_LO: i32 = 50;
const TEXTURE_HI: i32 = 90;
const PIXEL_JITTER: i32 = 12;
const TEXTURE_CELL: u32 = 32;
const EROSION_TILE: u32 = 32;
/// Blobs stay at least this far from the true ribbons.
const BLOB_CLEARANCE: i64 = 12;
const BLOB_GAP: i64 = 3;
const MAX_ATTEMPTS: usize = 200;

/// Unit vectors at 22.5 degree steps, scaled by 1024. Index 4 points down (+y).
const DIRS: [(i64, i64); 16] = [
    (1024, 0),
    (946, 392),
    (724, 724),
    (392, 946),
    (0, 1024),
    (-392, 946),
    (-724, 724),
    (-946, 392),
    (-1024, 0),
    (-946, -392),
    (-724, -724),
    (-392, -946),
    (0, -1024),
    (392, -946),
    (724, -724),
    (946, -392),
];
const STEP: i64 = 3;
const TURN_EVERY: usize = 8;

pub fn generate_phantom(spec: &PhantomSpec) -> Result<Phantom, PhantomError> {
    let radius = spec.ribbon_thickness / 2;
    let inset = radius + 2;
    // Ribbon pixels lie within (thickness - 1) / 2 of the centerline,
    // compared as 4 d^2 <= (thickness - 1)^2 to stay in integers.
    let band = (spec.ribbon_thickness as u64).saturating_sub(1).pow(2);
    let min_side = spec.width.min(spec.height);
    if spec.ribbon_thickness == 0 {
        return Err(PhantomError::CannotFit("ribbon thickness is zero".into()));
    }
    if min_side < 8 * (radius + 2) || min_side < 32 {
        return Err(PhantomError::CannotFit(format!(
            "{}x{} canvas is too small for {} px ribbons",
            spec.width, spec.height, spec.ribbon_thickness
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.rng_seed);
    let (w, h) = (spec.width, spec.height);
    let n = w as usize * h as usize;

    // Ribbons must span at least 60% of the short side in both directions.
    let min_span = min_side * 3 / 5;
    let mut centerlines = Vec::new();
    let mut centerline_px = vec![false; n];
    for _ in 0..spec.ribbon_count {
        let line = (0..MAX_ATTEMPTS)
            .map(|_| walk_centerline(&mut rng, w, h, inset))
            .find(|line| span(line).0 >= min_span && span(line).1 >= min_span)
            .ok_or_else(|| {
                PhantomError::CannotFit(format!("no ribbon spanning {min_span} px after {MAX_ATTEMPTS} tries"))
            })?;
        for p in &line {
            centerline_px[(p.y * w + p.x) as usize] = true;
        }
        centerlines.push(line);
    }

    let to_line = squared_edt(w as usize, h as usize, &centerline_px);
    let gt_data: Vec<u8> = to_line
        .iter()
        .map(|&d| (d != u64::MAX && 4 * d <= band) as u8)
        .collect();
    let gt_mask = Mask::from_raw(w, h, gt_data);

    let coarse_ribbons = erode_by_tiles(&gt_mask, spec.coarse_erosion, &mut rng);
    let (coarse_mask, blobs) = place_blobs(spec, &gt_mask, coarse_ribbons, &mut rng)?;
    let image = render(&gt_mask, &mut rng);

    Ok(Phantom {
        image,
        gt_mask,
        coarse_mask,
        blobs,
        centerlines,
    })
}

fn span(line: &[Point]) -> (u32, u32) {
    let (mut x0, mut y0, mut x1, mut y1) = (u32::MAX, u32::MAX, 0, 0);
    for p in line {
        x0 = x0.min(p.x);
        x1 = x1.max(p.x);
        y0 = y0.min(p.y);
        y1 = y1.max(p.y);
    }
    (x1.saturating_sub(x0), y1.saturating_sub(y0))
}

/// Random walk heading roughly along one diagonal, with the heading allowed
/// to drift one 22.5 degree step either side. Consecutive samples are joined
/// with Bresenham lines so the centerline is 8-connected.
fn walk_centerline(rng: &mut ChaCha8Rng, w: u32, h: u32, inset: u32) -> Vec<Point> {
    // Diagonals: down-right from the left band, or down-left from the right band.
    let down_right = rng.random_bool(0.5);
    let base: i64 = if down_right { 2 } else { 6 };
    let band_w = (w / 3).max(inset + 1);
    let band_h = (h / 4).max(inset + 1);
    let sx = if down_right {
        rng.random_range(inset..band_w)
    } else {
        rng.random_range(w - band_w..w - inset)
    };
    let sy = rng.random_range(inset..band_h);

    let (mut px, mut py) = ((sx as i64) << 10, (sy as i64) << 10);
    let mut heading = base;
    let lo = (inset as i64) << 10;
    let (hi_x, hi_y) = (((w - 1 - inset) as i64) << 10, ((h - 1 - inset) as i64) << 10);
    let mut samples = vec![Point { x: sx, y: sy }];
    let mut steps = 0usize;
    loop {
        if steps.is_multiple_of(TURN_EVERY) && steps > 0 {
            let turn = rng.random_range(-1i64..=1);
            heading = (heading + turn).clamp(base - 1, base + 1);
        }
        let (dx, dy) = DIRS[heading as usize];
        let (nx, ny) = (px + dx * STEP, py + dy * STEP);
        if nx < lo || ny < lo || nx > hi_x || ny > hi_y {
            break;
        }
        px = nx;
        py = ny;
        steps += 1;
        samples.push(Point {
            x: ((px + 512) >> 10) as u32,
            y: ((py + 512) >> 10) as u32,
        });
    }

    let mut line = Vec::new();
    for pair in samples.windows(2) {
        bresenham(pair[0], pair[1], &mut line);
    }
    if line.is_empty() {
        line.push(samples[0]);
    }
    line.dedup();
    line
}

fn bresenham(a: Point, b: Point, out: &mut Vec<Point>) {
    let (mut x, mut y) = (a.x as i64, a.y as i64);
    let (x1, y1) = (b.x as i64, b.y as i64);
    let dx = (x1 - x).abs();
    let dy = -(y1 - y).abs();
    let sx = if x < x1 { 1 } else { -1 };
    let sy = if y < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        out.push(Point {
            x: x as u32,
            y: y as u32,
        });
        if x == x1 && y == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x += sx;
        }
        if e2 <= dx {
            err += dx;
            y += sy;
        }
    }
}

/// Erode the ground truth by a disk whose radius is drawn per tile from
/// `0..=max_depth`. Depth 0 leaves the tile untouched.
fn erode_by_tiles(gt: &Mask, max_depth: u32, rng: &mut ChaCha8Rng) -> Mask {
    let (w, h) = (gt.width(), gt.height());
    let tiles_x = w.div_ceil(EROSION_TILE);
    let tiles_y = h.div_ceil(EROSION_TILE);
    let depths: Vec<u64> = (0..tiles_x * tiles_y)
        .map(|_| rng.random_range(0..=max_depth) as u64)
        .collect();
    if max_depth == 0 {
        return gt.clone();
    }
    let feature: Vec<bool> = gt.data().iter().map(|&v| v == 0).collect();
    // Pad so the image border also counts as background.
    let (pw, ph) = (w as usize + 2, h as usize + 2);
    let mut padded = vec![true; pw * ph];
    for y in 0..h as usize {
        padded[(y + 1) * pw + 1..(y + 1) * pw + 1 + w as usize]
            .copy_from_slice(&feature[y * w as usize..(y + 1) * w as usize]);
    }
    let dist = squared_edt(pw, ph, &padded);
    let mut data = vec![0u8; w as usize * h as usize];
    for y in 0..h {
        for x in 0..w {
            let i = (y * w + x) as usize;
            let d = depths[((y / EROSION_TILE) * tiles_x + x / EROSION_TILE) as usize];
            let inner = dist[(y as usize + 1) * pw + x as usize + 1];
            data[i] = (gt.data()[i] != 0 && inner > d * d) as u8;
        }
    }
    Mask::from_raw(w, h, data)
}

fn place_blobs(
    spec: &PhantomSpec,
    gt: &Mask,
    mut coarse: Mask,
    rng: &mut ChaCha8Rng,
) -> Result<(Mask, Vec<Blob>), PhantomError> {
    if spec.noise_blob_count == 0 {
        return Ok((coarse, Vec::new()));
    }
    if spec.noise_blob_max_area < 10 {
        return Err(PhantomError::BlobsCannotFit(format!(
            "maximum blob area {} is below 10 px",
            spec.noise_blob_max_area
        )));
    }
    let (w, h) = (spec.width as i64, spec.height as i64);
    let feature: Vec<bool> = gt.data().iter().map(|&v| v != 0).collect();
    let to_gt = squared_edt(w as usize, h as usize, &feature);
    // pi * a^2 < max_area keeps the largest blobs under the limit (pi ~ 22/7).
    let axis_max = ((spec.noise_blob_max_area as u64 * 7 / 22).isqrt() as i64).clamp(2, 20);
    let mut placed: Vec<(i64, i64, i64, i64)> = Vec::new();
    let mut blobs = Vec::new();
    for _ in 0..spec.noise_blob_count {
        let mut done = false;
        for _ in 0..MAX_ATTEMPTS * 5 {
            let a = rng.random_range(2..=axis_max);
            let b = rng.random_range(2..=axis_max);
            let cx = rng.random_range(a + 1..w - a - 1);
            let cy = rng.random_range(b + 1..h - b - 1);
            let pixels = ellipse(cx, cy, a, b);
            let area = pixels.len() as u64;
            if area == 0 || area >= spec.noise_blob_max_area as u64 {
                continue;
            }
            let clear = pixels.iter().all(|&(x, y)| {
                to_gt[(y * w + x) as usize] > (BLOB_CLEARANCE * BLOB_CLEARANCE) as u64
            });
            let apart = placed.iter().all(|&(x0, y0, x1, y1)| {
                cx + a + BLOB_GAP < x0 || cx - a - BLOB_GAP > x1 || cy + b + BLOB_GAP < y0 || cy - b - BLOB_GAP > y1
            });
            if !(clear && apart) {
                continue;
            }
            for &(x, y) in &pixels {
                coarse.set(x as u32, y as u32, true);
            }
            placed.push((cx - a, cy - b, cx + a, cy + b));
            blobs.push(Blob {
                center: Point {
                    x: cx as u32,
                    y: cy as u32,
                },
                area,
            });
            done = true;
            break;
        }
        if !done {
            return Err(PhantomError::BlobsCannotFit(format!(
                "placed {} of {} blobs",
                blobs.len(),
                spec.noise_blob_count
            )));
        }
    }
    Ok((coarse, blobs))
}

fn ellipse(cx: i64, cy: i64, a: i64, b: i64) -> Vec<(i64, i64)> {
    let mut out = Vec::new();
    for dy in -b..=b {
        for dx in -a..=a {
            if dx * dx * b * b + dy * dy * a * a <= a * a * b * b {
                out.push((cx + dx, cy + dy));
            }
        }
    }
    out
}

/// Bilinear value-noise texture for the background, a bright ribbon level,
/// and per-pixel jitter on both.
fn render(gt: &Mask, rng: &mut ChaCha8Rng) -> Raster {
    let (w, h) = (gt.width(), gt.height());
    let gx = w / TEXTURE_CELL + 2;
    let gy = h / TEXTURE_CELL + 2;
    let grid: Vec<i32> = (0..gx * gy)
        .map(|_| rng.random_range(TEXTURE_LO..=TEXTURE_HI))
        .collect();
    let c = TEXTURE_CELL as i32;
    let mut data = Vec::with_capacity(w as usize * h as usize);
    for y in 0..h {
        for x in 0..w {
            let jitter_bg = rng.random_range(-PIXEL_JITTER..=PIXEL_JITTER);
            let jitter_fg = rng.random_range(-RIBBON_JITTER..=RIBBON_JITTER);
            let v = if gt.get(x, y) {
                RIBBON_LEVEL + jitter_fg
            } else {
                let (cx, cy) = (x / TEXTURE_CELL, y / TEXTURE_CELL);
                let (fx, fy) = ((x % TEXTURE_CELL) as i32, (y % TEXTURE_CELL) as i32);
                let at = |i: u32, j: u32| grid[(j * gx + i) as usize];
                let top = at(cx, cy) * (c - fx) + at(cx + 1, cy) * fx;
                let bottom = at(cx, cy + 1) * (c - fx) + at(cx + 1, cy + 1) * fx;
                (top * (c - fy) + bottom * fy) / (c * c) + jitter_bg
            };
            data.push(v.clamp(0, 255) as u8);
        }
    }
    Raster::new(w, h, data).expect("dimensions match")
}
