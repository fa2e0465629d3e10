//! Morphology-aware pruning: keep components that are large enough in both
//! area and bounding-box extent, and set the rest aside as low-confidence.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::components::{ComponentStats, LabelMap};
use crate::raster::Mask;

pub const DEFAULT_MIN_AREA: u64 = 1000;
pub const DEFAULT_MIN_EXTENT: u32 = 275;

/// How the extent threshold is applied to the bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExtentRule {
    /// Removed if either the width or the height is below the threshold.
    #[default]
    EitherDimension,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PruneConfig {
    pub min_area: u64,
    pub min_extent: u32,
    pub extent_rule: ExtentRule,
}

impl Default for PruneConfig {
    fn default() -> Self {
        PruneConfig {
            min_area: DEFAULT_MIN_AREA,
            min_extent: DEFAULT_MIN_EXTENT,
            extent_rule: ExtentRule::EitherDimension,
        }
    }
}

impl PruneConfig {
    /// Both thresholds are removal-if-strictly-smaller, so equality retains.
    pub fn retains(&self, s: &ComponentStats) -> bool {
        let extent_ok = match self.extent_rule {
            ExtentRule::EitherDimension => {
                s.bbox_w >= self.min_extent && s.bbox_h >= self.min_extent
            }
        };
        s.area >= self.min_area && extent_ok
    }

    pub fn halved(&self) -> PruneConfig {
        PruneConfig {
            min_area: self.min_area / 2,
            min_extent: self.min_extent / 2,
            extent_rule: self.extent_rule,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PruneResult {
    pub clean_mask: Mask,
    pub low_conf_mask: Mask,
    pub retained_ids: Vec<u32>,
    pub removed_ids: Vec<u32>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PruneError {
    #[error("invariant violation: component {id} has area {expected} in stats but {found} in the label map")]
    Inconsistent { id: u32, expected: u64, found: u64 },
    #[error("invariant violation: label map contains id {id} with no stats entry")]
    UnknownLabel { id: u32 },
}

pub fn prune(
    labels: &LabelMap,
    stats: &[ComponentStats],
    cfg: &PruneConfig,
) -> Result<PruneResult, PruneError> {
    let max_id = stats.iter().map(|s| s.id).max().unwrap_or(0) as usize;
    let mut keep = vec![false; max_id + 1];
    let mut known = vec![false; max_id + 1];
    let mut retained_ids = Vec::new();
    let mut removed_ids = Vec::new();
    for s in stats {
        known[s.id as usize] = true;
        if cfg.retains(s) {
            keep[s.id as usize] = true;
            retained_ids.push(s.id);
        } else {
            removed_ids.push(s.id);
        }
    }

    let mut counts = vec![0u64; max_id + 1];
    let n = labels.labels().len();
    let mut clean = vec![0u8; n];
    let mut low = vec![0u8; n];
    for (i, &id) in labels.labels().iter().enumerate() {
        if id == 0 {
            continue;
        }
        let id_us = id as usize;
        if id_us > max_id || !known[id_us] {
            return Err(PruneError::UnknownLabel { id });
        }
        counts[id_us] += 1;
        if keep[id_us] {
            clean[i] = 1;
        } else {
            low[i] = 1;
        }
    }
    for s in stats {
        let found = counts[s.id as usize];
        if found != s.area {
            return Err(PruneError::Inconsistent {
                id: s.id,
                expected: s.area,
                found,
            });
        }
    }

    let (w, h) = (labels.width(), labels.height());
    Ok(PruneResult {
        clean_mask: Mask::from_raw(w, h, clean),
        low_conf_mask: Mask::from_raw(w, h, low),
        retained_ids,
        removed_ids,
    })
}
