//! Overlap metrics, run aggregation and throughput timing.

use std::fmt::Write as _;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::raster::Mask;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum MetricsError {
    #[error("dimension mismatch: prediction is {0}x{1}, ground truth is {2}x{3}")]
    DimensionMismatch(u32, u32, u32, u32),
    #[error("no runs to aggregate")]
    NoRuns,
    #[error("empty batch")]
    EmptyBatch,
}

/// Pixel counts of a prediction against ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn of(pred: &Mask, gt: &Mask) -> Result<Self, MetricsError> {
        if pred.width() != gt.width() || pred.height() != gt.height() {
            return Err(MetricsError::DimensionMismatch(
                pred.width(),
                pred.height(),
                gt.width(),
                gt.height(),
            ));
        }
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p != 0, g != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, true) => c.fn_ += 1,
                (false, false) => c.tn += 1,
            }
        }
        Ok(c)
    }

    /// 1.0 when both masks are empty.
    pub fn dice(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.fn_;
        if denom == 0 {
            1.0
        } else {
            (2 * self.tp) as f64 / denom as f64
        }
    }

    /// 1.0 when both masks are empty.
    pub fn iou(&self) -> f64 {
        let union = self.tp + self.fp + self.fn_;
        if union == 0 {
            1.0
        } else {
            self.tp as f64 / union as f64
        }
    }

    pub fn accuracy(&self) -> f64 {
        let total = self.tp + self.fp + self.fn_ + self.tn;
        (self.tp + self.tn) as f64 / total as f64
    }
}

pub fn dice(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    Confusion::of(pred, gt).map(|c| c.dice())
}

pub fn iou(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    Confusion::of(pred, gt).map(|c| c.iou())
}

pub fn pixel_accuracy(pred: &Mask, gt: &Mask) -> Result<f64, MetricsError> {
    Confusion::of(pred, gt).map(|c| c.accuracy())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub image_id: String,
    pub dice: f64,
    pub iou: f64,
    pub accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_time_s: Option<f64>,
}

impl MetricsReport {
    pub fn evaluate(image_id: &str, pred: &Mask, gt: &Mask) -> Result<Self, MetricsError> {
        let c = Confusion::of(pred, gt)?;
        Ok(MetricsReport {
            image_id: image_id.to_string(),
            dice: c.dice(),
            iou: c.iou(),
            accuracy: c.accuracy(),
            wall_time_s: None,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

impl MeanStd {
    /// Arithmetic mean and sample (N-1) standard deviation; std is 0 for a
    /// single value.
    pub fn of(values: &[f64]) -> MeanStd {
        if values.iter().all(|&v| v == values[0]) {
            return MeanStd {
                mean: values[0],
                std: 0.0,
            };
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let std = if values.len() < 2 {
            0.0
        } else {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        };
        MeanStd { mean, std }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub dice: MeanStd,
    pub iou: MeanStd,
    pub accuracy: MeanStd,
    pub n_runs: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fps: Option<MeanStd>,
}

/// Average each run's reports, then take mean and sample std across runs.
pub fn aggregate(runs: &[Vec<MetricsReport>]) -> Result<AggregateReport, MetricsError> {
    if runs.is_empty() || runs.iter().any(|r| r.is_empty()) {
        return Err(MetricsError::NoRuns);
    }
    let run_mean = |f: fn(&MetricsReport) -> f64| -> Vec<f64> {
        runs.iter()
            .map(|r| r.iter().map(f).sum::<f64>() / r.len() as f64)
            .collect()
    };
    Ok(AggregateReport {
        dice: MeanStd::of(&run_mean(|r| r.dice)),
        iou: MeanStd::of(&run_mean(|r| r.iou)),
        accuracy: MeanStd::of(&run_mean(|r| r.accuracy)),
        n_runs: runs.len(),
        fps: None,
    })
}

/// Images per second through `stage`, timed on the calling thread around
/// the stage calls only.
pub fn measure_fps<T, R>(mut stage: impl FnMut(&T) -> R, images: &[T]) -> Result<f64, MetricsError> {
    if images.is_empty() {
        return Err(MetricsError::EmptyBatch);
    }
    let start = Instant::now();
    for img in images {
        std::hint::black_box(stage(img));
    }
    Ok(fps_from(images.len(), start.elapsed().as_secs_f64()))
}

pub fn fps_from(n_images: usize, seconds: f64) -> f64 {
    n_images as f64 / seconds
}

/// Plain-text table with Dice/IoU/ACC in percent and FPS, one row per
/// labelled aggregate.
pub fn render_table(rows: &[(String, AggregateReport)]) -> String {
    let header = ["Method", "Dice (%)", "IoU (%)", "ACC (%)", "Time (FPS)"];
    let pct = |m: MeanStd| format!("{:.2} ± {:.3}", m.mean * 100.0, m.std * 100.0);
    let body: Vec<[String; 5]> = rows
        .iter()
        .map(|(name, r)| {
            [
                name.clone(),
                pct(r.dice),
                pct(r.iou),
                pct(r.accuracy),
                r.fps
                    .map(|f| format!("{:.2} ± {:.3}", f.mean, f.std))
                    .unwrap_or_else(|| "-".into()),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for row in &body {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: &[&str]| {
        let padded: Vec<String> = cells
            .iter()
            .zip(widths)
            .map(|(c, w)| format!("{c}{}", " ".repeat(w - c.chars().count())))
            .collect();
        let _ = writeln!(out, "{}", padded.join("  ").trim_end());
    };
    line(&mut out, &header);
    let rule: usize = widths.iter().sum::<usize>() + 2 * (widths.len() - 1);
    let _ = writeln!(out, "{}", "-".repeat(rule));
    for row in &body {
        line(&mut out, &row.iter().map(String::as_str).collect::<Vec<_>>());
    }
    out
}
