//! Turn coarse binary segmentation masks into positive/negative point
//! prompts, refine with a deterministic region-growing stand-in for a
//! promptable segmenter, and score the result.
//!
//! The stages, in pipeline order:
//!
//! 1. [`raster`]: load images and masks, binarize (nonzero is foreground).
//! 2. [`components`]: connected-component labelling with per-component
//!    area and bounding box.
//! 3. [`pruning`]: drop components below an area or bounding-box extent
//!    threshold into a low-confidence mask.
//! 4. [`prompting`]: greedy farthest-point sampling of positives from the
//!    retained foreground and negatives from margin background and the
//!    low-confidence components.
//! 5. [`refine`]: seeded region growing from the positives, blocked around
//!    the negatives.
//! 6. [`metrics`]: Dice, IoU, pixel accuracy, run aggregation, throughput.
//!
//! [`phantom`] builds synthetic fixtures and [`pipeline`] wires the stages
//! into batch runs.

pub mod components;
pub mod config;
pub mod metrics;
pub mod phantom;
pub mod pipeline;
pub mod prompting;
pub mod pruning;
pub mod raster;
pub mod refine;

pub use components::{label_components, ComponentStats, Connectivity, LabelMap};
pub use config::{ConfigError, PipelineConfig, RefinerKind};
pub use metrics::{aggregate, dice, iou, measure_fps, pixel_accuracy, AggregateReport, MetricsReport};
pub use phantom::{generate_phantom, Phantom, PhantomSpec};
pub use pipeline::{ablate_prompt_count, process_image, prompt_stage, run_pipeline, PipelineError};
pub use prompting::{
    distance_transform, farthest_point_sample, generate_prompts, Label, PointPrompt, PromptConfig,
    PromptSet,
};
pub use pruning::{prune, PruneConfig, PruneResult};
pub use raster::{binarize, load_grayscale, save_mask, Mask, Raster};
pub use refine::{refine, RefineConfig};
