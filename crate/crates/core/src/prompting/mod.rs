//! Positive/negative point prompts sampled from a pruned coarse mask.
//!
//! Positives come from the clean (retained) foreground, with the budget
//! split across components in proportion to their area. Negatives come from
//! background kept clear of the clean foreground by a margin, and/or from
//! the low-confidence components that pruning set aside.

mod distance;
mod fps;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::components::{label_components, Connectivity};
use crate::raster::Mask;

pub use distance::{deepest_pixel, distance_transform, DistanceField};
pub(crate) use distance::{squared_edt, within_radius};
pub use fps::{farthest_point_sample, Sample};

pub const DEFAULT_POSITIVES: usize = 20;
pub const DEFAULT_NEGATIVES: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Point {
    pub x: u32,
    pub y: u32,
}

/// Which side of the prompt a sampling region feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Role {
    Positive,
    Negative,
}

impl std::fmt::Display for Role {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Role::Positive => "positive",
            Role::Negative => "negative",
        })
    }
}

/// Point label; serialized as 1 (positive) or 0 (negative).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Negative,
    Positive,
}

impl Serialize for Label {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(match self {
            Label::Positive => 1,
            Label::Negative => 0,
        })
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        match u8::deserialize(d)? {
            1 => Ok(Label::Positive),
            0 => Ok(Label::Negative),
            other => Err(serde::de::Error::custom(format!(
                "point label must be 0 or 1, got {other}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointPrompt {
    pub x: u32,
    pub y: u32,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NegativeSource {
    BackgroundMargin,
    LowConfidence,
    #[default]
    Both,
}

impl std::str::FromStr for NegativeSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "background_margin" => Ok(NegativeSource::BackgroundMargin),
            "low_confidence" => Ok(NegativeSource::LowConfidence),
            "both" => Ok(NegativeSource::Both),
            _ => Err(format!(
                "unknown negative source {s:?} (expected background_margin, low_confidence or both)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Allocation {
    /// Largest-remainder split by component area, at least one point per
    /// component while the budget lasts.
    #[default]
    ProportionalByArea,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TieBreak {
    #[default]
    RowMajor,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PromptConfig {
    pub n_positive: usize,
    pub n_negative: usize,
    pub negative_source: NegativeSource,
    pub margin_radius: u32,
    pub allocation: Allocation,
    pub tie_break: TieBreak,
    /// Connectivity used to split the clean mask into components.
    pub connectivity: Connectivity,
}

impl Default for PromptConfig {
    fn default() -> Self {
        PromptConfig {
            n_positive: DEFAULT_POSITIVES,
            n_negative: DEFAULT_NEGATIVES,
            negative_source: NegativeSource::Both,
            margin_radius: 5,
            allocation: Allocation::ProportionalByArea,
            tie_break: TieBreak::RowMajor,
            connectivity: Connectivity::Eight,
        }
    }
}

impl PromptConfig {
    /// Hex SHA-256 of the config's canonical JSON form.
    pub fn digest(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(&canonical))
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptSet {
    pub source_image: String,
    pub width: u32,
    pub height: u32,
    /// Positives first, then negatives, each in selection order.
    pub points: Vec<PointPrompt>,
    pub n_positive: usize,
    pub n_negative: usize,
    pub config_digest: String,
    /// Fewer points than requested were available.
    pub truncated: bool,
}

/// Wire form. Field order is the serialized key order.
#[derive(Serialize, Deserialize)]
struct PromptSetJson {
    image: String,
    width: u32,
    height: u32,
    points: Vec<PointPrompt>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    config_digest: Option<String>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("empty sampling region ({role})")]
    EmptyRegion { role: Role },
    #[error("no positive region")]
    NoPositiveRegion,
    #[error("no negative region")]
    NoNegativeRegion,
    #[error("clean mask is {0}x{1} but low-confidence mask is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("clean and low-confidence masks overlap at ({x}, {y})")]
    Overlap { x: u32, y: u32 },
    #[error("invalid prompt set: {0}")]
    Invalid(String),
}

impl PromptSet {
    pub fn empty(source_image: &str, width: u32, height: u32, config_digest: String) -> Self {
        PromptSet {
            source_image: source_image.to_string(),
            width,
            height,
            points: Vec::new(),
            n_positive: 0,
            n_negative: 0,
            config_digest,
            truncated: false,
        }
    }

    pub fn positives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.label == Label::Positive)
    }

    pub fn negatives(&self) -> impl Iterator<Item = &PointPrompt> {
        self.points.iter().filter(|p| p.label == Label::Negative)
    }

    pub fn to_json(&self) -> String {
        let wire = PromptSetJson {
            image: self.source_image.clone(),
            width: self.width,
            height: self.height,
            points: self.points.clone(),
            config_digest: Some(self.config_digest.clone()),
        };
        let mut s = serde_json::to_string_pretty(&wire).expect("prompt set serializes");
        s.push('\n');
        s
    }

    /// Parse and validate the wire form: labels must be 0/1, points in
    /// bounds and unique. A missing `config_digest` is allowed.
    pub fn from_json(text: &str) -> Result<Self, PromptError> {
        let wire: PromptSetJson =
            serde_json::from_str(text).map_err(|e| PromptError::Invalid(e.to_string()))?;
        if wire.width == 0 || wire.height == 0 {
            return Err(PromptError::Invalid("zero image dimensions".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for p in &wire.points {
            if p.x >= wire.width || p.y >= wire.height {
                return Err(PromptError::Invalid(format!(
                    "point ({}, {}) outside {}x{}",
                    p.x, p.y, wire.width, wire.height
                )));
            }
            if !seen.insert(*p) {
                return Err(PromptError::Invalid(format!("duplicate point ({}, {})", p.x, p.y)));
            }
        }
        let n_positive = wire.points.iter().filter(|p| p.label == Label::Positive).count();
        Ok(PromptSet {
            source_image: wire.image,
            width: wire.width,
            height: wire.height,
            n_negative: wire.points.len() - n_positive,
            n_positive,
            points: wire.points,
            config_digest: wire.config_digest.unwrap_or_default(),
            truncated: false,
        })
    }
}

/// Split `n` points over components with the given areas.
///
/// Largest-remainder rounding of `n * area / total` (remainder ties go to
/// the larger component, then the lower index). Components left at zero
/// then take one point at a time from the component holding the most,
/// while that donor keeps at least one. Finally no component is asked for
/// more points than it has pixels; the surplus moves to the largest
/// components with room.
pub fn allocate_proportional(areas: &[u64], n: usize) -> Vec<usize> {
    let mut quota = vec![0usize; areas.len()];
    let total: u128 = areas.iter().map(|&a| a as u128).sum();
    if n == 0 || total == 0 {
        return quota;
    }
    let mut rems = Vec::with_capacity(areas.len());
    for (i, &a) in areas.iter().enumerate() {
        let scaled = n as u128 * a as u128;
        quota[i] = (scaled / total) as usize;
        rems.push((scaled % total, a, i));
    }
    let assigned: usize = quota.iter().sum();
    rems.sort_by(|a, b| b.0.cmp(&a.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
    for &(_, _, i) in rems.iter().take(n - assigned) {
        quota[i] += 1;
    }

    let by_size = {
        let mut idx: Vec<usize> = (0..areas.len()).collect();
        idx.sort_by(|&a, &b| areas[b].cmp(&areas[a]).then(a.cmp(&b)));
        idx
    };
    for &needy in &by_size {
        if quota[needy] > 0 || areas[needy] == 0 {
            continue;
        }
        let donor = (0..areas.len())
            .filter(|&i| quota[i] > 1)
            .max_by(|&a, &b| quota[a].cmp(&quota[b]).then(b.cmp(&a)));
        let Some(donor) = donor else { break };
        quota[donor] -= 1;
        quota[needy] += 1;
    }

    let mut surplus = 0usize;
    for (q, &a) in quota.iter_mut().zip(areas) {
        let cap = usize::try_from(a).unwrap_or(usize::MAX);
        if *q > cap {
            surplus += *q - cap;
            *q = cap;
        }
    }
    for &i in &by_size {
        if surplus == 0 {
            break;
        }
        let room = usize::try_from(areas[i]).unwrap_or(usize::MAX) - quota[i];
        let give = room.min(surplus);
        quota[i] += give;
        surplus -= give;
    }
    quota
}

/// Pixels eligible for negative prompts under `cfg`.
pub fn negative_region(clean: &Mask, low_conf: &Mask, cfg: &PromptConfig) -> Mask {
    let use_margin = cfg.negative_source != NegativeSource::LowConfidence;
    let use_low = cfg.negative_source != NegativeSource::BackgroundMargin;
    let near_clean = if use_margin {
        within_radius(clean, cfg.margin_radius)
    } else {
        Vec::new()
    };
    let data = clean
        .data()
        .iter()
        .zip(low_conf.data())
        .enumerate()
        .map(|(i, (&c, &l))| {
            let margin_ok = use_margin && c == 0 && l == 0 && !near_clean[i];
            (margin_ok || (use_low && l != 0)) as u8
        })
        .collect();
    Mask::from_raw(clean.width(), clean.height(), data)
}

/// Sample a prompt set from the clean and low-confidence masks.
pub fn generate_prompts(
    clean: &Mask,
    low_conf: &Mask,
    image_id: &str,
    cfg: &PromptConfig,
) -> Result<PromptSet, PromptError> {
    if clean.width() != low_conf.width() || clean.height() != low_conf.height() {
        return Err(PromptError::DimensionMismatch(
            clean.width(),
            clean.height(),
            low_conf.width(),
            low_conf.height(),
        ));
    }
    if let Some(i) = clean
        .data()
        .iter()
        .zip(low_conf.data())
        .position(|(&c, &l)| c != 0 && l != 0)
    {
        let w = clean.width() as usize;
        return Err(PromptError::Overlap {
            x: (i % w) as u32,
            y: (i / w) as u32,
        });
    }

    let mut set = PromptSet::empty(image_id, clean.width(), clean.height(), cfg.digest());

    if cfg.n_positive > 0 {
        let (labels, stats) = label_components(clean, cfg.connectivity);
        if stats.is_empty() {
            return Err(PromptError::NoPositiveRegion);
        }
        let areas: Vec<u64> = stats.iter().map(|s| s.area).collect();
        let quotas = allocate_proportional(&areas, cfg.n_positive);
        for (s, &q) in stats.iter().zip(&quotas) {
            if q == 0 {
                continue;
            }
            let mut window = Mask::zeros(s.bbox_w, s.bbox_h);
            for y in 0..s.bbox_h {
                for x in 0..s.bbox_w {
                    if labels.get(s.bbox_x + x, s.bbox_y + y) == s.id {
                        window.set(x, y, true);
                    }
                }
            }
            let sample = fps::sample_window(&window, (s.bbox_x, s.bbox_y), q);
            set.truncated |= sample.truncated;
            set.points.extend(sample.points.into_iter().map(|p| PointPrompt {
                x: p.x,
                y: p.y,
                label: Label::Positive,
            }));
        }
        set.n_positive = set.points.len();
        if set.n_positive < cfg.n_positive {
            set.truncated = true;
        }
    }

    if cfg.n_negative > 0 {
        let region = negative_region(clean, low_conf, cfg);
        let sample = farthest_point_sample(&region, cfg.n_negative, Role::Negative)
            .map_err(|_| PromptError::NoNegativeRegion)?;
        set.truncated |= sample.truncated;
        set.n_negative = sample.points.len();
        set.points.extend(sample.points.into_iter().map(|p| PointPrompt {
            x: p.x,
            y: p.y,
            label: Label::Negative,
        }));
    }

    if set.truncated {
        log::warn!(
            "{image_id}: requested {}+{} prompts, sampled {}+{}",
            cfg.n_positive,
            cfg.n_negative,
            set.n_positive,
            set.n_negative
        );
    }
    Ok(set)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exact rational largest-remainder oracle, without the floor or cap
    /// adjustments.
    fn hamilton(areas: &[u64], n: usize) -> Vec<usize> {
        let total: u64 = areas.iter().sum();
        let mut q: Vec<usize> = areas.iter().map(|&a| (n as u64 * a / total) as usize).collect();
        let mut left = n - q.iter().sum::<usize>();
        let mut order: Vec<usize> = (0..areas.len()).collect();
        order.sort_by_key(|&i| std::cmp::Reverse((n as u64 * areas[i]) % total));
        for i in order {
            if left == 0 {
                break;
            }
            q[i] += 1;
            left -= 1;
        }
        q
    }

    #[test]
    fn allocation_three_to_one() {
        assert_eq!(hamilton(&[3000, 1000], 20), vec![15, 5]);
        assert_eq!(allocate_proportional(&[3000, 1000], 20), vec![15, 5]);
    }

    #[test]
    fn allocation_floor_of_one() {
        // Hamilton would give the small component nothing.
        assert_eq!(hamilton(&[10_000, 100], 20), vec![20, 0]);
        assert_eq!(allocate_proportional(&[10_000, 100], 20), vec![19, 1]);
        // Fewer points than components: the largest ones get them.
        assert_eq!(allocate_proportional(&[50, 400, 100, 300], 2), vec![0, 1, 0, 1]);
    }

    #[test]
    fn allocation_respects_capacity() {
        assert_eq!(allocate_proportional(&[2, 2], 10), vec![2, 2]);
        assert_eq!(allocate_proportional(&[1, 100], 4), vec![1, 3]);
    }

    proptest! {
        #[test]
        fn allocation_sums_to_budget(areas in proptest::collection::vec(1u64..5000, 1..8), n in 0usize..60) {
            let q = allocate_proportional(&areas, n);
            let cap: u64 = areas.iter().sum();
            prop_assert_eq!(q.iter().sum::<usize>() as u64, (n as u64).min(cap));
            if n >= areas.len() {
                prop_assert!(q.iter().all(|&v| v >= 1));
            }
            for (v, a) in q.iter().zip(&areas) {
                prop_assert!(*v as u64 <= *a);
            }
        }
    }

    fn two_blocks() -> (Mask, Mask) {
        // Clean: a 60x50 block and a 20x50 block (areas 3000 and 1000).
        let clean = Mask::from_fn(120, 80, |x, y| {
            (5..55).contains(&y) && ((5..65).contains(&x) || (90..110).contains(&x))
        });
        let low = Mask::from_fn(120, 80, |x, y| (70..75).contains(&y) && (10..20).contains(&x));
        (clean, low)
    }

    #[test]
    fn positives_split_by_area() {
        let (clean, low) = two_blocks();
        let set = generate_prompts(&clean, &low, "img", &PromptConfig::default()).unwrap();
        let left = set.positives().filter(|p| p.x < 80).count();
        let right = set.positives().filter(|p| p.x >= 80).count();
        assert_eq!((left, right), (15, 5));
        assert_eq!(set.n_negative, 20);
        assert!(!set.truncated);
        // Positives precede negatives.
        assert!(set.points[..20].iter().all(|p| p.label == Label::Positive));
    }

    #[test]
    fn zero_request_is_empty() {
        let (clean, low) = two_blocks();
        let cfg = PromptConfig {
            n_positive: 0,
            n_negative: 0,
            ..Default::default()
        };
        let set = generate_prompts(&clean, &low, "img", &cfg).unwrap();
        assert!(set.points.is_empty());
        let set = generate_prompts(&Mask::zeros(3, 3), &Mask::zeros(3, 3), "e", &cfg).unwrap();
        assert!(set.points.is_empty());
    }

    #[test]
    fn single_component_gets_all_positives() {
        let clean = Mask::from_fn(64, 64, |x, y| (8..56).contains(&x) && (20..40).contains(&y));
        let set = generate_prompts(&clean, &Mask::zeros(64, 64), "one", &PromptConfig::default()).unwrap();
        let pos: Vec<_> = set.positives().collect();
        assert_eq!(pos.len(), 20);
        assert!(pos.iter().all(|p| clean.get(p.x, p.y)));
        let uniq: std::collections::HashSet<_> = pos.iter().map(|p| (p.x, p.y)).collect();
        assert_eq!(uniq.len(), 20);
    }

    #[test]
    fn error_paths() {
        let cfg = PromptConfig::default();
        assert_eq!(
            generate_prompts(&Mask::zeros(8, 8), &Mask::zeros(8, 8), "x", &cfg).unwrap_err(),
            PromptError::NoPositiveRegion
        );
        let full = Mask::from_fn(8, 8, |_, _| true);
        assert_eq!(
            generate_prompts(&full, &Mask::zeros(8, 8), "x", &cfg).unwrap_err(),
            PromptError::NoNegativeRegion
        );
        assert!(matches!(
            generate_prompts(&full, &full, "x", &cfg).unwrap_err(),
            PromptError::Overlap { x: 0, y: 0 }
        ));
        assert!(matches!(
            generate_prompts(&full, &Mask::zeros(4, 8), "x", &cfg).unwrap_err(),
            PromptError::DimensionMismatch(..)
        ));
    }

    #[test]
    fn tiny_regions_truncate() {
        let clean = Mask::from_fn(30, 30, |x, y| x < 2 && y < 2);
        let cfg = PromptConfig {
            negative_source: NegativeSource::LowConfidence,
            ..Default::default()
        };
        let low = Mask::from_fn(30, 30, |x, y| x == 20 && y < 3);
        let set = generate_prompts(&clean, &low, "t", &cfg).unwrap();
        assert!(set.truncated);
        assert_eq!((set.n_positive, set.n_negative), (4, 3));
    }

    #[test]
    fn json_shape_and_key_order() {
        let (clean, low) = two_blocks();
        let cfg = PromptConfig {
            n_positive: 1,
            n_negative: 1,
            ..Default::default()
        };
        let set = generate_prompts(&clean, &low, "img-7", &cfg).unwrap();
        let json = set.to_json();
        let keys: Vec<usize> = ["\"image\"", "\"width\"", "\"height\"", "\"points\"", "\"config_digest\""]
            .iter()
            .map(|k| json.find(k).unwrap())
            .collect();
        assert!(keys.windows(2).all(|w| w[0] < w[1]));
        assert!(json.contains("\"label\": 1"));
        assert!(json.contains("\"label\": 0"));
        let back = PromptSet::from_json(&json).unwrap();
        assert_eq!(back.points, set.points);
        assert_eq!(back.config_digest, cfg.digest());
    }

    #[test]
    fn json_validation() {
        let bad_label = r#"{"image":"a","width":4,"height":4,"points":[{"x":1,"y":1,"label":2}]}"#;
        assert!(matches!(PromptSet::from_json(bad_label), Err(PromptError::Invalid(_))));
        let oob = r#"{"image":"a","width":4,"height":4,"points":[{"x":4,"y":1,"label":1}]}"#;
        assert!(matches!(PromptSet::from_json(oob), Err(PromptError::Invalid(_))));
        let ok = r#"{"image":"a","width":4,"height":4,"points":[{"x":3,"y":1,"label":1},{"x":0,"y":0,"label":0}]}"#;
        let set = PromptSet::from_json(ok).unwrap();
        assert_eq!((set.n_positive, set.n_negative), (1, 1));
    }

    #[test]
    fn digest_tracks_config() {
        let a = PromptConfig::default();
        let b = PromptConfig {
            margin_radius: 6,
            ..Default::default()
        };
        assert_eq!(a.digest(), PromptConfig::default().digest());
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }

    fn masks_strategy() -> impl Strategy<Value = (Mask, Mask)> {
        (8u32..=40, 8u32..=40).prop_flat_map(|(w, h)| {
            proptest::collection::vec(0u8..6, (w * h) as usize).prop_map(move |v| {
                let clean = v.iter().map(|&c| (c == 0) as u8).collect();
                let low = v.iter().map(|&c| (c == 1) as u8).collect();
                (Mask::from_raw(w, h, clean), Mask::from_raw(w, h, low))
            })
        })
    }

    proptest! {
        #[test]
        fn membership_margin_and_determinism(
            (clean, low) in masks_strategy(), np in 0usize..12, nn in 0usize..12, r in 0u32..4,
        ) {
            let cfg = PromptConfig { n_positive: np, n_negative: nn, margin_radius: r, ..Default::default() };
            let Ok(set) = generate_prompts(&clean, &low, "p", &cfg) else { return Ok(()) };
            let again = generate_prompts(&clean, &low, "p", &cfg).unwrap();
            prop_assert_eq!(set.to_json(), again.to_json());

            let clean_px: Vec<(i64, i64)> = (0..clean.height()).flat_map(|y| (0..clean.width()).map(move |x| (x, y)))
                .filter(|&(x, y)| clean.get(x, y)).map(|(x, y)| (x as i64, y as i64)).collect();
            for p in set.positives() {
                prop_assert!(clean.get(p.x, p.y));
            }
            for p in set.negatives() {
                prop_assert!(!clean.get(p.x, p.y));
                if !low.get(p.x, p.y) {
                    let far = clean_px.iter().all(|&(cx, cy)| {
                        (cx - p.x as i64).pow(2) + (cy - p.y as i64).pow(2) > (r as i64).pow(2)
                    });
                    prop_assert!(far);
                }
            }
            let uniq: std::collections::HashSet<_> = set.points.iter().collect();
            prop_assert_eq!(uniq.len(), set.points.len());
            prop_assert_eq!(set.n_positive + set.n_negative, set.points.len());
        }
    }
}
