use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};

use maskprompt::components::Connectivity;
use maskprompt::config::OneOrMany;
use maskprompt::metrics::{measure_fps, render_table};
use maskprompt::pipeline::{ablation_csv, load_run, prompt_stage, ImageInputs};
use maskprompt::prompting::NegativeSource;
use maskprompt::raster::{load_mask, save_raster};
use maskprompt::{
    generate_phantom, load_grayscale, process_image, refine, run_pipeline, save_mask,
    ConfigError, MetricsReport, PhantomSpec, PipelineConfig, PipelineError, PromptSet,
    RefinerKind,
};

/// Coarse masks in, point prompts and refined masks out.
#[derive(Parser, Debug)]
#[command(name = "maskprompt", version)]
struct Cli {
    /// Log level when RUST_LOG is unset.
    #[arg(long, global = true, default_value = "warn")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Coarse mask to PromptSet JSON.
    Prompts(PromptsCmd),
    /// Image plus PromptSet to refined mask.
    Refine(RefineCmd),
    /// Score a predicted mask against ground truth.
    Eval(EvalCmd),
    /// Full batch over paired image, coarse and ground-truth directories.
    Pipeline(PipelineCmd),
    /// Sweep the total prompt count and report mean Dice per count.
    Ablate(AblateCmd),
    /// Write seeded synthetic fixtures.
    Phantom(PhantomCmd),
    /// Single-threaded throughput of the prompt stage or the whole stage.
    Bench(BenchCmd),
}

/// Overrides shared by every command that builds prompts.
#[derive(Args, Debug, Default)]
struct PromptOverrides {
    #[arg(long)]
    n_positive: Option<usize>,
    #[arg(long)]
    n_negative: Option<usize>,
    #[arg(long)]
    min_area: Option<u64>,
    #[arg(long)]
    min_extent: Option<u32>,
    /// 4 or 8.
    #[arg(long)]
    connectivity: Option<Connectivity>,
    /// background_margin, low_confidence or both.
    #[arg(long)]
    negative_source: Option<NegativeSource>,
    #[arg(long)]
    margin_radius: Option<u32>,
}

#[derive(Args, Debug, Default)]
struct RefineOverrides {
    #[arg(long)]
    tolerance: Option<u8>,
    #[arg(long)]
    block_radius: Option<u32>,
    #[arg(long)]
    max_iterations: Option<u32>,
}

#[derive(Args, Debug)]
struct PromptsCmd {
    #[arg(long)]
    mask: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    /// Defaults to the mask's file stem.
    #[arg(long)]
    image_id: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    prompt: PromptOverrides,
}

#[derive(Args, Debug)]
struct RefineCmd {
    #[arg(long)]
    image: PathBuf,
    #[arg(long)]
    prompts: PathBuf,
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    refine: RefineOverrides,
}

#[derive(Args, Debug)]
struct EvalCmd {
    #[arg(long)]
    pred: PathBuf,
    #[arg(long)]
    gt: PathBuf,
    /// Print a JSON report instead of text.
    #[arg(long)]
    json: bool,
}

#[derive(Args, Debug)]
struct BatchArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    images: Option<PathBuf>,
    /// Repeat for several runs.
    #[arg(long)]
    coarse: Vec<PathBuf>,
    #[arg(long)]
    ground_truth: Option<PathBuf>,
    #[arg(long, short)]
    output: Option<PathBuf>,
    #[arg(long)]
    workers: Option<usize>,
    /// oracle, external or export_only.
    #[arg(long, value_parser = parse_refiner)]
    refiner: Option<RefinerKind>,
    #[arg(long)]
    adapter: Option<PathBuf>,
    #[command(flatten)]
    prompt: PromptOverrides,
    #[command(flatten)]
    refine: RefineOverrides,
}

#[derive(Args, Debug)]
struct PipelineCmd {
    #[command(flatten)]
    batch: BatchArgs,
}

#[derive(Args, Debug)]
struct AblateCmd {
    #[command(flatten)]
    batch: BatchArgs,
    /// Total prompt counts, comma separated.
    #[arg(long, value_delimiter = ',', default_values_t = [2, 6, 10, 20, 40, 60])]
    counts: Vec<usize>,
    /// CSV destination; stdout when omitted.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct PhantomCmd {
    #[arg(long, short)]
    output: PathBuf,
    #[arg(long, default_value_t = 1)]
    count: u64,
    /// Seed of the first phantom; the i-th uses seed + i.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    width: Option<u32>,
    #[arg(long)]
    height: Option<u32>,
    #[arg(long)]
    ribbons: Option<u32>,
    #[arg(long)]
    thickness: Option<u32>,
    #[arg(long)]
    blobs: Option<u32>,
    #[arg(long)]
    blob_max_area: Option<u32>,
    #[arg(long)]
    erosion: Option<u32>,
}

#[derive(Args, Debug)]
struct BenchCmd {
    /// Coarse mask to time; a seeded phantom of --size is used otherwise.
    #[arg(long)]
    mask: Option<PathBuf>,
    /// Image for the full stage; the phantom image is used otherwise.
    #[arg(long)]
    image: Option<PathBuf>,
    #[arg(long, default_value_t = 1024)]
    size: u32,
    #[arg(long, default_value_t = 20)]
    iterations: usize,
    /// Time prompting plus refinement instead of prompting alone.
    #[arg(long)]
    full: bool,
    #[arg(long)]
    config: Option<PathBuf>,
}

fn parse_refiner(s: &str) -> Result<RefinerKind, String> {
    match s {
        "oracle" => Ok(RefinerKind::Oracle),
        "external" => Ok(RefinerKind::External),
        "export_only" | "export-only" => Ok(RefinerKind::ExportOnly),
        other => Err(format!("unknown refiner {other:?}")),
    }
}

/// Failure classes, mapped to exit codes 2 and 1.
enum Failure {
    Config(anyhow::Error),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

type CmdResult = Result<ExitCode, Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn load_config(path: Option<&Path>) -> Result<PipelineConfig, Failure> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(config_err),
        None => Ok(PipelineConfig::default()),
    }
}

impl PromptOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        let p = &mut cfg.prompt;
        if let Some(v) = self.n_positive {
            p.n_positive = v;
        }
        if let Some(v) = self.n_negative {
            p.n_negative = v;
        }
        if let Some(v) = self.connectivity {
            p.connectivity = v;
        }
        if let Some(v) = self.negative_source {
            p.negative_source = v;
        }
        if let Some(v) = self.margin_radius {
            p.margin_radius = v;
        }
        if let Some(v) = self.min_area {
            cfg.prune.min_area = v;
        }
        if let Some(v) = self.min_extent {
            cfg.prune.min_extent = v;
        }
    }
}

impl RefineOverrides {
    fn apply(&self, cfg: &mut PipelineConfig) {
        if let Some(v) = self.tolerance {
            cfg.refine.intensity_tolerance = v;
        }
        if let Some(v) = self.block_radius {
            cfg.refine.negative_block_radius = v;
        }
        if self.max_iterations.is_some() {
            cfg.refine.max_iterations = self.max_iterations;
        }
    }
}

impl BatchArgs {
    fn resolve(&self) -> Result<PipelineConfig, Failure> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(v) = &self.images {
            cfg.paths.images = Some(v.clone());
        }
        match self.coarse.as_slice() {
            [] => {}
            [one] => cfg.paths.coarse = OneOrMany::One(one.clone()),
            many => cfg.paths.coarse = OneOrMany::Many(many.to_vec()),
        }
        if let Some(v) = &self.ground_truth {
            cfg.paths.ground_truth = Some(v.clone());
        }
        if let Some(v) = &self.output {
            cfg.paths.output = Some(v.clone());
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.refiner {
            cfg.refiner = v;
        }
        if let Some(v) = &self.adapter {
            cfg.adapter = Some(v.clone());
        }
        self.prompt.apply(&mut cfg);
        self.refine.apply(&mut cfg);
        Ok(cfg)
    }
}

fn file_stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "image".into())
}

fn write_text(path: &Path, text: &str) -> anyhow::Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| parent.display().to_string())?;
    }
    fs::write(path, text).with_context(|| path.display().to_string())
}

fn cmd_prompts(c: &PromptsCmd) -> CmdResult {
    let mut cfg = load_config(c.config.as_deref())?;
    c.prompt.apply(&mut cfg);
    let coarse = load_mask(&c.mask).map_err(anyhow::Error::from)?;
    let id = c.image_id.clone().unwrap_or_else(|| file_stem(&c.mask));
    let stage = prompt_stage(&coarse, &id, &cfg.prune, &cfg.prompt).map_err(anyhow::Error::from)?;
    write_text(&c.output, &stage.prompts.to_json())?;
    println!(
        "{id}: {} positive, {} negative{}{}",
        stage.prompts.n_positive,
        stage.prompts.n_negative,
        if stage.prompts.truncated { ", truncated" } else { "" },
        match stage.fallback.as_str() {
            "" => String::new(),
            f => format!(", fallback {f}"),
        }
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_refine(c: &RefineCmd) -> CmdResult {
    let mut cfg = load_config(c.config.as_deref())?;
    c.refine.apply(&mut cfg);
    let image = load_grayscale(&c.image).map_err(anyhow::Error::from)?;
    let text = fs::read_to_string(&c.prompts).with_context(|| c.prompts.display().to_string())?;
    let prompts = PromptSet::from_json(&text).map_err(anyhow::Error::from)?;
    let mask = refine(&image, &prompts, &cfg.refine).map_err(anyhow::Error::from)?;
    save_mask(&mask, &c.output).map_err(anyhow::Error::from)?;
    println!("{}: {} foreground pixels", prompts.source_image, mask.count());
    Ok(ExitCode::SUCCESS)
}

fn cmd_eval(c: &EvalCmd) -> CmdResult {
    let pred = load_mask(&c.pred).map_err(anyhow::Error::from)?;
    let gt = load_mask(&c.gt).map_err(anyhow::Error::from)?;
    let report = MetricsReport::evaluate(&file_stem(&c.pred), &pred, &gt).map_err(anyhow::Error::from)?;
    if c.json {
        println!("{}", serde_json::to_string_pretty(&report).map_err(anyhow::Error::from)?);
    } else {
        println!(
            "dice {:.6}  iou {:.6}  accuracy {:.6}",
            report.dice, report.iou, report.accuracy
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn pipeline_failure(e: PipelineError) -> Failure {
    match e {
        PipelineError::Config(e) => config_err(e),
        other => Failure::Runtime(other.into()),
    }
}

fn cmd_pipeline(c: &PipelineCmd) -> CmdResult {
    let cfg = c.batch.resolve()?;
    let summary = run_pipeline(&cfg).map_err(pipeline_failure)?;
    if summary.records.is_empty() {
        println!(
            "no inputs in {}",
            cfg.paths.images.as_deref().unwrap_or(Path::new("")).display()
        );
        return Ok(ExitCode::SUCCESS);
    }
    for r in &summary.records {
        if let Err(e) = &r.outcome {
            eprintln!("run {} {}: {e}", r.run, r.stem);
        } else if let Ok(o) = &r.outcome {
            if !o.fallback.as_str().is_empty() {
                eprintln!("warning: run {} {}: fallback {}", r.run, r.stem, o.fallback.as_str());
            }
        }
    }
    println!("processed {}, failed {}", summary.processed(), summary.failures());
    if let Some(agg) = &summary.aggregate {
        let mut rows = Vec::new();
        if let Some(c) = &summary.coarse_aggregate {
            rows.push(("coarse".to_string(), c.clone()));
        }
        rows.push(("refined".to_string(), agg.clone()));
        print!("{}", render_table(&rows));
    }
    Ok(if summary.failures() == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn cmd_ablate(c: &AblateCmd) -> CmdResult {
    let cfg = c.batch.resolve()?;
    if cfg.paths.ground_truth.is_none() {
        return Err(config_err(ConfigError::Invalid(
            "ablation needs paths.ground_truth".into(),
        )));
    }
    if cfg.refiner != RefinerKind::Oracle {
        return Err(config_err(ConfigError::Invalid(
            "ablation runs with the oracle refiner only".into(),
        )));
    }
    cfg.validate().map_err(config_err)?;
    let mut inputs: Vec<ImageInputs> = Vec::new();
    let mut load_failures = 0;
    for dir in cfg.coarse_dirs() {
        for (stem, loaded) in load_run(&cfg, &dir).map_err(pipeline_failure)? {
            match loaded {
                Ok(inp) => inputs.push(inp),
                Err(e) => {
                    load_failures += 1;
                    eprintln!("{stem}: {e}");
                }
            }
        }
    }
    if inputs.is_empty() && load_failures == 0 {
        println!("no inputs");
        return Ok(ExitCode::SUCCESS);
    }
    let rows = maskprompt::ablate_prompt_count(&cfg, &inputs, &c.counts);
    let csv = ablation_csv(&rows);
    match &c.csv {
        Some(p) => write_text(p, &csv)?,
        None => print!("{csv}"),
    }
    let failed = load_failures > 0 || rows.iter().any(|r| r.failures > 0);
    Ok(if failed { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_phantom(c: &PhantomCmd) -> CmdResult {
    let mut base = PhantomSpec::default();
    if let Some(v) = c.width {
        base.width = v;
    }
    if let Some(v) = c.height {
        base.height = v;
    }
    if let Some(v) = c.ribbons {
        base.ribbon_count = v;
    }
    if let Some(v) = c.thickness {
        base.ribbon_thickness = v;
    }
    if let Some(v) = c.blobs {
        base.noise_blob_count = v;
    }
    if let Some(v) = c.blob_max_area {
        base.noise_blob_max_area = v;
    }
    if let Some(v) = c.erosion {
        base.coarse_erosion = v;
    }
    let dirs = ["images", "coarse", "gt", "spec"].map(|d| c.output.join(d));
    for d in &dirs {
        fs::create_dir_all(d).with_context(|| d.display().to_string())?;
    }
    for i in 0..c.count {
        let spec = PhantomSpec {
            rng_seed: c.seed.wrapping_add(i),
            ..base.clone()
        };
        let p = generate_phantom(&spec).map_err(|e| config_err(anyhow!(e)))?;
        let stem = format!("phantom_{:04}", spec.rng_seed);
        let png = format!("{stem}.png");
        save_raster(&p.image, dirs[0].join(&png)).map_err(anyhow::Error::from)?;
        save_mask(&p.coarse_mask, dirs[1].join(&png)).map_err(anyhow::Error::from)?;
        save_mask(&p.gt_mask, dirs[2].join(&png)).map_err(anyhow::Error::from)?;
        let sidecar = serde_json::to_string_pretty(&spec).map_err(anyhow::Error::from)? + "\n";
        write_text(&dirs[3].join(format!("{stem}.json")), &sidecar)?;
    }
    println!("wrote {} phantoms to {}", c.count, c.output.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_bench(c: &BenchCmd) -> CmdResult {
    if c.iterations == 0 {
        return Err(config_err(anyhow!("--iterations must be positive")));
    }
    let cfg = load_config(c.config.as_deref())?;
    let (image, coarse) = match &c.mask {
        Some(m) => {
            let coarse = load_mask(m).map_err(anyhow::Error::from)?;
            let image = match &c.image {
                Some(i) => load_grayscale(i).map_err(anyhow::Error::from)?,
                None if c.full => bail_config("--full with --mask needs --image")?,
                None => coarse.to_raster(),
            };
            (image, coarse)
        }
        None => {
            let spec = PhantomSpec {
                width: c.size,
                height: c.size,
                ..PhantomSpec::default()
            };
            let p = generate_phantom(&spec).map_err(|e| config_err(anyhow!(e)))?;
            (p.image, p.coarse_mask)
        }
    };
    let inputs = ImageInputs {
        id: "bench".into(),
        image,
        coarse,
        ground_truth: None,
        image_path: None,
    };
    let batch = vec![inputs; c.iterations];
    let fps = if c.full {
        let mut run_cfg = cfg.clone();
        run_cfg.refiner = RefinerKind::Oracle;
        // Fail early rather than timing errors.
        process_image(&batch[0], &run_cfg, None).map_err(anyhow::Error::from)?;
        measure_fps(|inp| process_image(inp, &run_cfg, None), &batch)
    } else {
        prompt_stage(&batch[0].coarse, "bench", &cfg.prune, &cfg.prompt).map_err(anyhow::Error::from)?;
        measure_fps(
            |inp: &ImageInputs| prompt_stage(&inp.coarse, "bench", &cfg.prune, &cfg.prompt),
            &batch,
        )
    }
    .map_err(anyhow::Error::from)?;
    let (w, h) = (batch[0].coarse.width(), batch[0].coarse.height());
    println!(
        "{} stage, {w}x{h}, {} images: {fps:.2} images/s ({:.2} ms/image)",
        if c.full { "full" } else { "prompt" },
        c.iterations,
        1000.0 / fps
    );
    Ok(ExitCode::SUCCESS)
}

fn bail_config<T>(msg: &str) -> Result<T, Failure> {
    Err(config_err(anyhow!(msg.to_string())))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(&cli.log_level))
        .format_timestamp(None)
        .init();
    let result = match &cli.command {
        Command::Prompts(c) => cmd_prompts(c),
        Command::Refine(c) => cmd_refine(c),
        Command::Eval(c) => cmd_eval(c),
        Command::Pipeline(c) => cmd_pipeline(c),
        Command::Ablate(c) => cmd_ablate(c),
        Command::Phantom(c) => cmd_phantom(c),
        Command::Bench(c) => cmd_bench(c),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Config(e)) => {
            eprintln!("config error: {e:#}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
