//! Per-image pipeline (binarize, label, prune, prompt, refine, evaluate) and
//! the batch drivers built on it.
//!
//! Images, coarse masks and ground truth are paired by filename stem:
//! `images/a.png`, `coarse/a.png` and `gt/a.png` belong together. Each image
//! writes `<stem>.prompts.json`, `<stem>.refined.png` and, with ground truth,
//! `<stem>.overlay.png` into the output directory, plus one row in
//! `metrics.csv`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::components::label_components;
use crate::config::{ConfigError, PipelineConfig, RefinerKind};
use crate::metrics::{aggregate, AggregateReport, MetricsError, MetricsReport};
use crate::prompting::{generate_prompts, PromptConfig, PromptError, PromptSet};
use crate::pruning::{prune, PruneConfig, PruneError, PruneResult};
use crate::raster::{self, Mask, Raster, RasterError};
use crate::refine::{refine, RefineError};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Prune(#[from] PruneError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Refine(#[from] RefineError),
    #[error(transparent)]
    Metrics(#[from] MetricsError),
    #[error("{stem}: no matching {what}")]
    MissingPair { stem: String, what: &'static str },
    #[error("{stem}: image is {0}x{1} but the coarse mask is {2}x{3}", .dims.0, .dims.1, .dims.2, .dims.3)]
    ShapeMismatch {
        stem: String,
        dims: (u32, u32, u32, u32),
    },
    #[error("adapter failed: {0}")]
    Adapter(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

/// What the prompt stage had to do when pruning left nothing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Fallback {
    #[default]
    None,
    /// Retried with both thresholds halved.
    Relaxed,
    /// Used the largest raw component as the positive region.
    LargestComponent,
}

impl Fallback {
    pub fn as_str(self) -> &'static str {
        match self {
            Fallback::None => "",
            Fallback::Relaxed => "relaxed",
            Fallback::LargestComponent => "largest_component",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PromptStage {
    pub pruned: PruneResult,
    pub prompts: PromptSet,
    pub fallback: Fallback,
}

/// Label, prune and sample prompts from a coarse mask.
///
/// When pruning removes every component, both thresholds are halved once;
/// if that still leaves nothing, the largest raw component becomes the
/// positive region.
pub fn prompt_stage(
    coarse: &Mask,
    image_id: &str,
    prune_cfg: &PruneConfig,
    prompt_cfg: &PromptConfig,
) -> Result<PromptStage, PipelineError> {
    let (labels, stats) = label_components(coarse, prompt_cfg.connectivity);
    let mut fallback = Fallback::None;
    let mut pruned = prune(&labels, &stats, prune_cfg)?;
    if !pruned.clean_mask.has_foreground() && !stats.is_empty() && prompt_cfg.n_positive > 0 {
        fallback = Fallback::Relaxed;
        pruned = prune(&labels, &stats, &prune_cfg.halved())?;
        if !pruned.clean_mask.has_foreground() {
            fallback = Fallback::LargestComponent;
            let largest = stats
                .iter()
                .max_by(|a, b| a.area.cmp(&b.area).then(b.id.cmp(&a.id)))
                .map(|s| s.id)
                .expect("non-empty stats");
            pruned = PruneResult {
                clean_mask: labels.select(|id| id == largest),
                low_conf_mask: labels.select(|id| id != largest),
                retained_ids: vec![largest],
                removed_ids: stats.iter().map(|s| s.id).filter(|&id| id != largest).collect(),
            };
        }
        log::warn!("{image_id}: pruning removed every component, fallback {}", fallback.as_str());
    }
    let prompts = generate_prompts(&pruned.clean_mask, &pruned.low_conf_mask, image_id, prompt_cfg)?;
    Ok(PromptStage {
        pruned,
        prompts,
        fallback,
    })
}

/// Inputs for one image, already loaded.
#[derive(Debug, Clone)]
pub struct ImageInputs {
    pub id: String,
    pub image: Raster,
    pub coarse: Mask,
    pub ground_truth: Option<Mask>,
    /// On-disk image, needed by the external adapter.
    pub image_path: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub struct ImageOutcome {
    pub id: String,
    pub prompts: PromptSet,
    pub refined: Option<Mask>,
    pub report: Option<MetricsReport>,
    pub coarse_report: Option<MetricsReport>,
    pub fallback: Fallback,
    pub seconds: f64,
}

/// Run every stage for one image. `scratch` is where the external adapter
/// exchanges files.
pub fn process_image(
    inputs: &ImageInputs,
    cfg: &PipelineConfig,
    scratch: Option<&Path>,
) -> Result<ImageOutcome, PipelineError> {
    let start = Instant::now();
    let (iw, ih) = (inputs.image.width(), inputs.image.height());
    if (iw, ih) != (inputs.coarse.width(), inputs.coarse.height()) {
        return Err(PipelineError::ShapeMismatch {
            stem: inputs.id.clone(),
            dims: (iw, ih, inputs.coarse.width(), inputs.coarse.height()),
        });
    }
    let stage = prompt_stage(&inputs.coarse, &inputs.id, &cfg.prune, &cfg.prompt)?;
    let refined = match cfg.refiner {
        RefinerKind::Oracle => Some(refine(&inputs.image, &stage.prompts, &cfg.refine)?),
        RefinerKind::External => {
            let adapter = cfg
                .adapter
                .as_deref()
                .ok_or_else(|| PipelineError::Adapter("no adapter configured".into()))?;
            let scratch = scratch
                .ok_or_else(|| PipelineError::Adapter("no scratch directory".into()))?;
            Some(run_adapter(adapter, inputs, &stage.prompts, scratch)?)
        }
        RefinerKind::ExportOnly => None,
    };
    let seconds = start.elapsed().as_secs_f64();

    let (report, coarse_report) = match &inputs.ground_truth {
        Some(gt) => {
            let coarse_report = MetricsReport::evaluate(&inputs.id, &inputs.coarse, gt)?;
            let report = match &refined {
                Some(m) => {
                    let mut r = MetricsReport::evaluate(&inputs.id, m, gt)?;
                    r.wall_time_s = Some(seconds);
                    Some(r)
                }
                None => None,
            };
            (report, Some(coarse_report))
        }
        None => (None, None),
    };
    Ok(ImageOutcome {
        id: inputs.id.clone(),
        prompts: stage.prompts,
        refined,
        report,
        coarse_report,
        fallback: stage.fallback,
        seconds,
    })
}

/// Invoke `<adapter> --image IMG --prompts JSON --output MASK` and read the
/// mask it writes.
pub fn run_adapter(
    adapter: &Path,
    inputs: &ImageInputs,
    prompts: &PromptSet,
    scratch: &Path,
) -> Result<Mask, PipelineError> {
    let image_path = inputs
        .image_path
        .clone()
        .ok_or_else(|| PipelineError::Adapter(format!("{}: image has no file path", inputs.id)))?;
    let prompt_path = scratch.join(format!("{}.adapter-prompts.json", inputs.id));
    let mask_path = scratch.join(format!("{}.adapter-mask.png", inputs.id));
    write_file(&prompt_path, prompts.to_json().as_bytes())?;
    let output = Command::new(adapter)
        .arg("--image")
        .arg(&image_path)
        .arg("--prompts")
        .arg(&prompt_path)
        .arg("--output")
        .arg(&mask_path)
        .output()
        .map_err(|e| PipelineError::Adapter(format!("{}: {e}", adapter.display())))?;
    if !output.status.success() {
        return Err(PipelineError::Adapter(format!(
            "{} exited with {}: {}",
            adapter.display(),
            output.status,
            String::from_utf8_lossy(&output.stderr).trim()
        )));
    }
    let mask = raster::load_mask(&mask_path)?;
    let _ = fs::remove_file(&prompt_path);
    let _ = fs::remove_file(&mask_path);
    if (mask.width(), mask.height()) != (prompts.width, prompts.height) {
        return Err(PipelineError::Adapter(format!(
            "adapter mask is {}x{}, expected {}x{}",
            mask.width(),
            mask.height(),
            prompts.width,
            prompts.height
        )));
    }
    Ok(mask)
}

/// TP green, FP red, FN blue, everything else black.
pub fn overlay(pred: &Mask, gt: &Mask) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(pred.len() * 3);
    for (&p, &g) in pred.data().iter().zip(gt.data()) {
        rgb.extend_from_slice(match (p != 0, g != 0) {
            (true, true) => &[0, 255, 0],
            (true, false) => &[255, 0, 0],
            (false, true) => &[0, 0, 255],
            (false, false) => &[0, 0, 0],
        });
    }
    rgb
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), PipelineError> {
    fs::write(path, bytes).map_err(|source| PipelineError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png") || e.eq_ignore_ascii_case("pgm"))
}

/// Image files in `dir` keyed by stem, sorted.
pub fn list_images(dir: &Path) -> Result<Vec<(String, PathBuf)>, PipelineError> {
    let entries = fs::read_dir(dir).map_err(|source| PipelineError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut out = Vec::new();
    for entry in entries {
        let path = entry
            .map_err(|source| PipelineError::Io {
                path: dir.to_path_buf(),
                source,
            })?
            .path();
        if path.is_file() && is_image(&path) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.push((stem.to_string(), path.clone()));
            }
        }
    }
    out.sort();
    Ok(out)
}

fn find_by_stem(dir: &Path, stem: &str) -> Option<PathBuf> {
    ["png", "pgm", "PNG", "PGM"]
        .iter()
        .map(|ext| dir.join(format!("{stem}.{ext}")))
        .find(|p| p.is_file())
}

fn load_inputs(
    stem: &str,
    image_path: &Path,
    coarse_dir: &Path,
    gt_dir: Option<&Path>,
) -> Result<ImageInputs, PipelineError> {
    let coarse_path = find_by_stem(coarse_dir, stem).ok_or_else(|| PipelineError::MissingPair {
        stem: stem.to_string(),
        what: "coarse mask",
    })?;
    let ground_truth = match gt_dir {
        Some(dir) => match find_by_stem(dir, stem) {
            Some(p) => Some(raster::load_mask(p)?),
            None => {
                log::warn!("{stem}: no ground truth, skipping evaluation");
                None
            }
        },
        None => None,
    };
    Ok(ImageInputs {
        id: stem.to_string(),
        image: raster::load_grayscale(image_path)?,
        coarse: raster::load_mask(coarse_path)?,
        ground_truth,
        image_path: Some(image_path.to_path_buf()),
    })
}

/// Per-stem load outcome; a missing pair fails only its own image.
pub type LoadedRun = Vec<(String, Result<ImageInputs, PipelineError>)>;

/// Load every image of one run, in stem order.
pub fn load_run(cfg: &PipelineConfig, coarse_dir: &Path) -> Result<LoadedRun, PipelineError> {
    let images_dir = cfg
        .paths
        .images
        .as_deref()
        .ok_or_else(|| ConfigError::Invalid("paths.images is required".into()))?;
    let gt_dir = cfg.paths.ground_truth.as_deref();
    Ok(list_images(images_dir)?
        .into_iter()
        .map(|(stem, path)| {
            let inputs = load_inputs(&stem, &path, coarse_dir, gt_dir);
            (stem, inputs)
        })
        .collect())
}

/// Result of one image in a batch.
#[derive(Debug)]
pub struct ImageRecord {
    pub run: usize,
    pub stem: String,
    pub outcome: Result<ImageOutcome, PipelineError>,
}

#[derive(Debug)]
pub struct BatchSummary {
    pub records: Vec<ImageRecord>,
    pub aggregate: Option<AggregateReport>,
    pub coarse_aggregate: Option<AggregateReport>,
}

impl BatchSummary {
    pub fn processed(&self) -> usize {
        self.records.iter().filter(|r| r.outcome.is_ok()).count()
    }

    pub fn failures(&self) -> usize {
        self.records.len() - self.processed()
    }
}

fn pool(workers: usize) -> rayon::ThreadPool {
    let mut b = rayon::ThreadPoolBuilder::new();
    if workers > 0 {
        b = b.num_threads(workers);
    }
    b.build().expect("thread pool")
}

/// Batch driver: every run (coarse directory) over every image, writing
/// per-image artifacts. Per-image failures are recorded and the batch
/// carries on.
pub fn run_pipeline(cfg: &PipelineConfig) -> Result<BatchSummary, PipelineError> {
    cfg.validate()?;
    let output = cfg.paths.output.clone().expect("validated");
    let coarse_dirs = cfg.coarse_dirs();
    let multi = coarse_dirs.len() > 1;
    let workers = pool(cfg.workers);

    let mut records = Vec::new();
    let mut run_reports = Vec::new();
    let mut run_coarse = Vec::new();
    for (run, coarse_dir) in coarse_dirs.iter().enumerate() {
        let out_dir = if multi {
            output.join(format!("run_{}", run + 1))
        } else {
            output.clone()
        };
        fs::create_dir_all(&out_dir).map_err(|source| PipelineError::Io {
            path: out_dir.clone(),
            source,
        })?;
        let loaded = load_run(cfg, coarse_dir)?;
        if loaded.is_empty() {
            log::info!("no inputs in {}", cfg.paths.images.as_ref().unwrap().display());
        }
        let outcomes: Vec<(String, Result<ImageOutcome, PipelineError>)> = workers.install(|| {
            loaded
                .into_par_iter()
                .map(|(stem, inputs)| {
                    let outcome = inputs
                        .and_then(|inp| process_image(&inp, cfg, Some(&out_dir)).map(|o| (inp, o)))
                        .and_then(|(inp, o)| {
                            write_artifacts(&out_dir, &inp, &o)?;
                            Ok(o)
                        });
                    if let Err(e) = &outcome {
                        log::error!("{stem}: {e}");
                    }
                    (stem, outcome)
                })
                .collect()
        });
        write_metrics_csv(&out_dir.join("metrics.csv"), &outcomes)?;
        let reports: Vec<MetricsReport> = outcomes
            .iter()
            .filter_map(|(_, o)| o.as_ref().ok().and_then(|o| o.report.clone()))
            .collect();
        let coarse: Vec<MetricsReport> = outcomes
            .iter()
            .filter_map(|(_, o)| o.as_ref().ok().and_then(|o| o.coarse_report.clone()))
            .collect();
        if !reports.is_empty() {
            run_reports.push(reports);
        }
        if !coarse.is_empty() {
            run_coarse.push(coarse);
        }
        records.extend(outcomes.into_iter().map(|(stem, outcome)| ImageRecord {
            run: run + 1,
            stem,
            outcome,
        }));
    }

    let aggregate_report = aggregate(&run_reports).ok();
    let coarse_aggregate = aggregate(&run_coarse).ok();
    if let Some(agg) = &aggregate_report {
        let json = serde_json::to_string_pretty(agg).expect("aggregate serializes") + "\n";
        write_file(&output.join("summary.json"), json.as_bytes())?;
        let mut rows = Vec::new();
        if let Some(c) = &coarse_aggregate {
            rows.push(("coarse".to_string(), c.clone()));
        }
        rows.push(("refined".to_string(), agg.clone()));
        write_file(&output.join("summary.txt"), crate::metrics::render_table(&rows).as_bytes())?;
    }
    Ok(BatchSummary {
        records,
        aggregate: aggregate_report,
        coarse_aggregate,
    })
}

fn write_artifacts(out_dir: &Path, inputs: &ImageInputs, o: &ImageOutcome) -> Result<(), PipelineError> {
    write_file(
        &out_dir.join(format!("{}.prompts.json", o.id)),
        o.prompts.to_json().as_bytes(),
    )?;
    if let Some(mask) = &o.refined {
        raster::save_mask(mask, out_dir.join(format!("{}.refined.png", o.id)))?;
        if let Some(gt) = &inputs.ground_truth {
            raster::save_rgb(
                mask.width(),
                mask.height(),
                &overlay(mask, gt),
                out_dir.join(format!("{}.overlay.png", o.id)),
            )?;
        }
    }
    Ok(())
}

const CSV_HEADER: &str =
    "image,status,dice,iou,accuracy,coarse_dice,n_positive,n_negative,truncated,fallback,error";

fn write_metrics_csv(
    path: &Path,
    outcomes: &[(String, Result<ImageOutcome, PipelineError>)],
) -> Result<(), PipelineError> {
    let mut s = String::from(CSV_HEADER);
    s.push('\n');
    for (stem, outcome) in outcomes {
        match outcome {
            Ok(o) => {
                let num = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
                let _ = writeln!(
                    s,
                    "{stem},ok,{},{},{},{},{},{},{},{},",
                    num(o.report.as_ref().map(|r| r.dice)),
                    num(o.report.as_ref().map(|r| r.iou)),
                    num(o.report.as_ref().map(|r| r.accuracy)),
                    num(o.coarse_report.as_ref().map(|r| r.dice)),
                    o.prompts.n_positive,
                    o.prompts.n_negative,
                    o.prompts.truncated,
                    o.fallback.as_str(),
                );
            }
            Err(e) => {
                let msg = e.to_string().replace([',', '\n'], ";");
                let _ = writeln!(s, "{stem},failed,,,,,,,,,{msg}");
            }
        }
    }
    write_file(path, s.as_bytes())
}

/// One row of a prompt-count sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub count: usize,
    pub n_positive: usize,
    pub n_negative: usize,
    /// Mean refined Dice over every evaluated image and run.
    pub mean_dice: Option<f64>,
    pub images: usize,
    pub failures: usize,
    pub error: Option<String>,
}

/// Positive gets the odd point.
pub fn split_count(count: usize) -> (usize, usize) {
    (count.div_ceil(2), count / 2)
}

/// Re-run the in-memory pipeline for each total prompt count.
pub fn ablate_prompt_count(
    cfg: &PipelineConfig,
    inputs: &[ImageInputs],
    counts: &[usize],
) -> Vec<AblationRow> {
    counts
        .iter()
        .map(|&count| {
            let (n_positive, n_negative) = split_count(count);
            let mut run_cfg = cfg.clone();
            run_cfg.prompt.n_positive = n_positive;
            run_cfg.prompt.n_negative = n_negative;
            let mut dices = Vec::new();
            let mut failures = 0;
            let mut error = None;
            for inp in inputs {
                match process_image(inp, &run_cfg, None) {
                    Ok(o) => match o.report {
                        Some(r) => dices.push(r.dice),
                        None => {
                            failures += 1;
                            error.get_or_insert_with(|| format!("{}: no ground truth", inp.id));
                        }
                    },
                    Err(e) => {
                        failures += 1;
                        error.get_or_insert_with(|| e.to_string());
                    }
                }
            }
            AblationRow {
                count,
                n_positive,
                n_negative,
                mean_dice: (!dices.is_empty()).then(|| dices.iter().sum::<f64>() / dices.len() as f64),
                images: inputs.len(),
                failures,
                error,
            }
        })
        .collect()
}

pub fn ablation_csv(rows: &[AblationRow]) -> String {
    let mut s = String::from("count,n_positive,n_negative,mean_dice,images,failures,status,error\n");
    for r in rows {
        let status = match (r.mean_dice, r.failures) {
            (_, 0) => "ok",
            (Some(_), _) => "partial",
            (None, _) => "failed",
        };
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{}",
            r.count,
            r.n_positive,
            r.n_negative,
            r.mean_dice.map(|d| d.to_string()).unwrap_or_default(),
            r.images,
            r.failures,
            status,
            r.error.as_deref().unwrap_or("").replace([',', '\n'], ";"),
        );
    }
    s
}
