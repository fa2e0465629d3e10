//! Deterministic stand-in for a promptable segmenter: seeded region growing
//! from the positive prompts, fenced off by disks around the negatives.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::Connectivity;
use crate::prompting::{Label, PromptSet};
use crate::raster::{Mask, Raster};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RefineConfig {
    /// Maximum gray-level difference from the seed's own intensity.
    pub intensity_tolerance: u8,
    pub negative_block_radius: u32,
    pub connectivity: Connectivity,
    /// Growth rounds per seed; `None` grows to a fixpoint.
    pub max_iterations: Option<u32>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            intensity_tolerance: 25,
            negative_block_radius: 10,
            connectivity: Connectivity::Eight,
            max_iterations: None,
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RefineError {
    #[error("no seeds")]
    NoSeeds,
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
}

/// Pixels within `radius` (inclusive) of any negative prompt, except the
/// positive prompt pixels themselves, which always stay growable.
pub fn blocked_pixels(width: u32, height: u32, prompts: &PromptSet, radius: u32) -> Vec<bool> {
    let (w, h) = (width as i64, height as i64);
    let r = radius as i64;
    let mut blocked = vec![false; (w * h) as usize];
    for p in prompts.negatives() {
        let (cx, cy) = (p.x as i64, p.y as i64);
        for y in (cy - r).max(0)..=(cy + r).min(h - 1) {
            for x in (cx - r).max(0)..=(cx + r).min(w - 1) {
                if (x - cx).pow(2) + (y - cy).pow(2) <= r * r {
                    blocked[(y * w + x) as usize] = true;
                }
            }
        }
    }
    for p in prompts.positives() {
        blocked[(p.y * width + p.x) as usize] = false;
    }
    blocked
}

pub fn refine(img: &Raster, prompts: &PromptSet, cfg: &RefineConfig) -> Result<Mask, RefineError> {
    if prompts.width != img.width() || prompts.height != img.height() {
        return Err(RefineError::InvalidPrompt(format!(
            "prompts declare {}x{} but the image is {}x{}",
            prompts.width,
            prompts.height,
            img.width(),
            img.height()
        )));
    }
    if let Some(p) = prompts
        .points
        .iter()
        .find(|p| p.x >= img.width() || p.y >= img.height())
    {
        return Err(RefineError::InvalidPrompt(format!(
            "point ({}, {}) is outside the image",
            p.x, p.y
        )));
    }
    if !prompts.points.iter().any(|p| p.label == Label::Positive) {
        return Err(RefineError::NoSeeds);
    }

    let (w, h) = (img.width() as i32, img.height() as i32);
    let pixels = img.data();
    let blocked = blocked_pixels(img.width(), img.height(), prompts, cfg.negative_block_radius);
    let tol = cfg.intensity_tolerance as i16;
    let offsets = cfg.connectivity.offsets();
    let limit = cfg.max_iterations.unwrap_or(u32::MAX);

    let mut out = vec![0u8; pixels.len()];
    // Visit stamps: pixel i was reached by the current seed iff stamp[i] == seed number.
    let mut stamp = vec![0u32; pixels.len()];
    let mut queue: VecDeque<(u32, u32)> = VecDeque::new();
    for (n, seed) in prompts.positives().enumerate() {
        let mark = n as u32 + 1;
        let s = (seed.y as i32 * w + seed.x as i32) as usize;
        let base = pixels[s] as i16;
        stamp[s] = mark;
        out[s] = 1;
        queue.push_back((s as u32, 0));
        while let Some((idx, depth)) = queue.pop_front() {
            if depth >= limit {
                continue;
            }
            let (x, y) = (idx as i32 % w, idx as i32 / w);
            for &(dx, dy) in offsets {
                let (nx, ny) = (x + dx, y + dy);
                if nx < 0 || ny < 0 || nx >= w || ny >= h {
                    continue;
                }
                let ni = (ny * w + nx) as usize;
                if stamp[ni] == mark || blocked[ni] || (pixels[ni] as i16 - base).abs() > tol {
                    continue;
                }
                stamp[ni] = mark;
                out[ni] = 1;
                queue.push_back((ni as u32, depth + 1));
            }
        }
    }
    Ok(Mask::from_raw(img.width(), img.height(), out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompting::PointPrompt;
    use proptest::prelude::*;
    use std::collections::HashSet;

    fn prompts(w: u32, h: u32, pos: &[(u32, u32)], neg: &[(u32, u32)]) -> PromptSet {
        let mut set = PromptSet::empty("t", w, h, String::new());
        for &(x, y) in pos {
            set.points.push(PointPrompt { x, y, label: Label::Positive });
        }
        for &(x, y) in neg {
            set.points.push(PointPrompt { x, y, label: Label::Negative });
        }
        set.n_positive = pos.len();
        set.n_negative = neg.len();
        set
    }

    /// Plain BFS per seed with an explicitly enumerated blocked set.
    fn oracle(img: &Raster, set: &PromptSet, cfg: &RefineConfig) -> Mask {
        let (w, h) = (img.width() as i64, img.height() as i64);
        let r = cfg.negative_block_radius as i64;
        let seeds: HashSet<(i64, i64)> = set.positives().map(|p| (p.x as i64, p.y as i64)).collect();
        let mut blocked = HashSet::new();
        for y in 0..h {
            for x in 0..w {
                let near = set.negatives().any(|n| (n.x as i64 - x).pow(2) + (n.y as i64 - y).pow(2) <= r * r);
                if near && !seeds.contains(&(x, y)) {
                    blocked.insert((x, y));
                }
            }
        }
        let mut out = Mask::zeros(img.width(), img.height());
        for &(sx, sy) in &seeds {
            let base = img.get(sx as u32, sy as u32) as i64;
            let mut seen = HashSet::from([(sx, sy)]);
            let mut todo = vec![(sx, sy)];
            while let Some((x, y)) = todo.pop() {
                out.set(x as u32, y as u32, true);
                for dy in -1..=1i64 {
                    for dx in -1..=1i64 {
                        if (dx, dy) == (0, 0) || (cfg.connectivity == Connectivity::Four && dx * dy != 0) {
                            continue;
                        }
                        let (nx, ny) = (x + dx, y + dy);
                        if nx < 0 || ny < 0 || nx >= w || ny >= h || seen.contains(&(nx, ny)) || blocked.contains(&(nx, ny)) {
                            continue;
                        }
                        if (img.get(nx as u32, ny as u32) as i64 - base).abs() > cfg.intensity_tolerance as i64 {
                            continue;
                        }
                        seen.insert((nx, ny));
                        todo.push((nx, ny));
                    }
                }
            }
        }
        out
    }

    #[test]
    fn uniform_image_floods_everything() {
        let img = Raster::from_fn(20, 15, |_, _| 90);
        let m = refine(&img, &prompts(20, 15, &[(3, 4)], &[]), &RefineConfig::default()).unwrap();
        assert_eq!(m.count(), 300);
    }

    #[test]
    fn ring_of_negatives_confines_growth() {
        let img = Raster::from_fn(61, 61, |_, _| 120);
        // Twelve negatives on a circle of radius 20 around the seed, block radius 6.
        let ring: Vec<(u32, u32)> = [
            (50, 30), (47, 40), (40, 47), (30, 50), (20, 47), (13, 40),
            (10, 30), (13, 20), (20, 13), (30, 10), (40, 13), (47, 20),
        ]
        .to_vec();
        let set = prompts(61, 61, &[(30, 30)], &ring);
        let cfg = RefineConfig { negative_block_radius: 6, ..Default::default() };
        let m = refine(&img, &set, &cfg).unwrap();
        assert_eq!(m, oracle(&img, &set, &cfg));
        assert!(m.get(30, 30));
        assert!(!m.get(0, 0) && !m.get(60, 60));
        let inside = m.count();
        assert!(inside > 400 && inside < 61 * 61 / 2, "{inside}");
    }

    #[test]
    fn grows_only_over_similar_intensity() {
        let img = Raster::from_fn(30, 30, |x, y| if (5..15).contains(&x) && (8..20).contains(&y) { 200 } else { 0 });
        let m = refine(&img, &prompts(30, 30, &[(9, 9)], &[]), &RefineConfig::default()).unwrap();
        let expected = Mask::from_fn(30, 30, |x, y| (5..15).contains(&x) && (8..20).contains(&y));
        assert_eq!(m, expected);
    }

    #[test]
    fn errors() {
        let img = Raster::from_fn(5, 5, |_, _| 0);
        let cfg = RefineConfig::default();
        assert_eq!(refine(&img, &prompts(5, 5, &[], &[(1, 1)]), &cfg), Err(RefineError::NoSeeds));
        assert!(matches!(refine(&img, &prompts(5, 5, &[(5, 0)], &[]), &cfg), Err(RefineError::InvalidPrompt(_))));
        assert!(matches!(refine(&img, &prompts(6, 5, &[(1, 0)], &[]), &cfg), Err(RefineError::InvalidPrompt(_))));
    }

    #[test]
    fn iteration_limit_bounds_growth() {
        let img = Raster::from_fn(21, 21, |_, _| 7);
        let cfg = RefineConfig { max_iterations: Some(3), ..Default::default() };
        let m = refine(&img, &prompts(21, 21, &[(10, 10)], &[]), &cfg).unwrap();
        // Eight-connected rounds grow a Chebyshev ball.
        assert_eq!(m.count(), 7 * 7);
    }

    fn instance() -> impl Strategy<Value = (Raster, PromptSet, u8, u32, bool)> {
        (
            proptest::collection::vec(0u8..4, 64 * 64),
            proptest::collection::vec((0u32..64, 0u32..64), 1..5),
            proptest::collection::vec((0u32..64, 0u32..64), 0..5),
            0u8..80,
            0u32..6,
            any::<bool>(),
        )
            .prop_map(|(levels, pos, neg, tol, r, four)| {
                let img = Raster::new(64, 64, levels.into_iter().map(|l| l * 40).collect()).unwrap();
                let pos: Vec<_> = pos.into_iter().collect::<std::collections::BTreeSet<_>>().into_iter().collect();
                let neg: Vec<_> = neg.into_iter().filter(|p| !pos.contains(p)).collect::<std::collections::BTreeSet<_>>().into_iter().collect();
                (img, prompts(64, 64, &pos, &neg), tol, r, four)
            })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn contracts_hold((img, set, tol, r, four) in instance()) {
            let conn = if four { Connectivity::Four } else { Connectivity::Eight };
            let cfg = RefineConfig { intensity_tolerance: tol, negative_block_radius: r, connectivity: conn, max_iterations: None };
            let m = refine(&img, &set, &cfg).unwrap();
            prop_assert_eq!(&m, &oracle(&img, &set, &cfg));
            for p in set.positives() {
                prop_assert!(m.get(p.x, p.y));
            }
            let blocked = blocked_pixels(64, 64, &set, r);
            for (i, &b) in blocked.iter().enumerate() {
                if b { prop_assert_eq!(m.data()[i], 0); }
            }
            for p in set.negatives() {
                prop_assert!(!m.get(p.x, p.y));
            }
            let looser = RefineConfig { intensity_tolerance: tol.saturating_add(40), ..cfg.clone() };
            let m2 = refine(&img, &set, &looser).unwrap();
            prop_assert!(m.data().iter().zip(m2.data()).all(|(a, b)| a <= b));
        }
    }
}
