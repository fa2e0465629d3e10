//! Pipeline configuration, read from a TOML file.
//!
//! ```toml
//! refiner = "oracle"        # oracle | external | export_only
//!
//! [paths]
//! images = "data/images"
//! coarse = "data/coarse"    # or a list of directories, one per run
//! ground_truth = "data/gt"
//! output = "out"
//!
//! [prune]
//! min_area = 1000
//! min_extent = 275
//!
//! [prompt]
//! n_positive = 20
//! n_negative = 20
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompting::PromptConfig;
use crate::pruning::PruneConfig;
use crate::refine::RefineConfig;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config {}: {source}", path.display())]
    Read {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("invalid config: {0}")]
    Parse(String),
    #[error("invalid config: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RefinerKind {
    /// Built-in seeded region growing.
    #[default]
    Oracle,
    /// Shell out to `adapter` per image.
    External,
    /// Write prompts only.
    ExportOnly,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany {
    One(PathBuf),
    Many(Vec<PathBuf>),
}

impl OneOrMany {
    pub fn to_vec(&self) -> Vec<PathBuf> {
        match self {
            OneOrMany::One(p) => vec![p.clone()],
            OneOrMany::Many(v) => v.clone(),
        }
    }
}

impl Default for OneOrMany {
    fn default() -> Self {
        OneOrMany::Many(Vec::new())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub images: Option<PathBuf>,
    /// Coarse-mask directories; each one is a run.
    pub coarse: OneOrMany,
    pub ground_truth: Option<PathBuf>,
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub prune: PruneConfig,
    pub prompt: PromptConfig,
    pub refine: RefineConfig,
    pub paths: PathsConfig,
    pub refiner: RefinerKind,
    /// Executable used when `refiner = "external"`.
    pub adapter: Option<PathBuf>,
    /// Worker threads for batch runs; 0 picks the machine default.
    pub workers: usize,
    /// Expected number of runs; checked against the coarse directories when set.
    pub runs: Option<usize>,
}

impl PipelineConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_toml_str(&text)
    }

    pub fn coarse_dirs(&self) -> Vec<PathBuf> {
        self.paths.coarse.to_vec()
    }

    /// Checks that need the filesystem: input directories exist and the
    /// refiner has what it needs.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let images = self
            .paths
            .images
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("paths.images is required".into()))?;
        let mut dirs = vec![("paths.images", images.clone())];
        let coarse = self.coarse_dirs();
        if coarse.is_empty() {
            return Err(ConfigError::Invalid("paths.coarse is required".into()));
        }
        dirs.extend(coarse.iter().map(|c| ("paths.coarse", c.clone())));
        if let Some(gt) = &self.paths.ground_truth {
            dirs.push(("paths.ground_truth", gt.clone()));
        }
        for (key, dir) in dirs {
            if !dir.is_dir() {
                return Err(ConfigError::Invalid(format!(
                    "{key}: {} is not a directory",
                    dir.display()
                )));
            }
        }
        if self.paths.output.is_none() {
            return Err(ConfigError::Invalid("paths.output is required".into()));
        }
        if let Some(runs) = self.runs {
            if runs == 0 || runs != coarse.len() {
                return Err(ConfigError::Invalid(format!(
                    "runs = {runs} but {} coarse directories are configured",
                    coarse.len()
                )));
            }
        }
        if self.refiner == RefinerKind::External && self.adapter.is_none() {
            return Err(ConfigError::Invalid(
                "refiner = \"external\" needs an adapter executable".into(),
            ));
        }
        Ok(())
    }
}
