//! Command-line entry point.
//!
//! Every subcommand reads one [`RunConfig`] (from `--config`, falling back to
//! `ROSIE_FORGE_CONFIG`), and writes its outputs under `--out`. Exit codes:
//! 0 on success, 1 on validation errors, 2 when a backend failed.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::backend::RetryPolicy;
use crate::evalkit::{self, toy, MethodPredictions, PredictionSet, Split};
use crate::inpainting::{CascadeConfig, HttpInpainter, InpaintBackend, MockCascade};
use crate::pipeline::{
    augment_dataset, mix_datasets, plan_jobs, AugmentMode, Backends, FlagPolicy, JobTemplate, MixSource,
    PipelineConfig,
};
use crate::prompting::{
    default_exemplars, propose, AugmentationSpec, CompletionBackend, FewShotExemplar, HttpCompleter, PromptBackend,
    PromptRegistry, PromptTriple, RuleBackend,
};
use crate::scene::{generate_episode, pick_scene, TaskSpec, ACTION_DIM, DEFAULT_IMAGE_SIZE};
use crate::segmentation::{
    detect, filter_by_threshold, DetectionBackend, HttpDetector, MockDetector, ThresholdTable, WireDetection,
};
use crate::seed::derive_seed;
use crate::store::{self, read_json, write_json, Dataset, ImageSize, Provenance};

pub const CONFIG_ENV: &str = "ROSIE_FORGE_CONFIG";

/// A backend is either mocked or reached at an endpoint, never both.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendChoice {
    #[serde(default)]
    pub mock: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

impl BackendChoice {
    pub fn mock() -> Self {
        Self {
            mock: true,
            endpoint: None,
        }
    }

    fn require(&self, name: &str) -> Result<(), CliError> {
        match (self.mock, &self.endpoint) {
            (true, None) | (false, Some(_)) => Ok(()),
            (true, Some(_)) => Err(CliError::validation("cli", format!("{name}: set either mock or endpoint, not both"))),
            (false, None) => Err(CliError::validation(
                "cli",
                format!("{name}: needs an endpoint or mock = true (or pass --mock-all)"),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub detect: BackendChoice,
    #[serde(default)]
    pub inpaint_base: BackendChoice,
    #[serde(default)]
    pub inpaint_sr: BackendChoice,
    #[serde(default)]
    pub complete: BackendChoice,
    /// Threshold table; the shipped table when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thresholds: Option<PathBuf>,
    /// Prompt registry consulted before any proposer.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub registry: Option<PathBuf>,
    /// Few-shot exemplars; the built-in one when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub exemplars: Option<PathBuf>,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    #[serde(default)]
    pub seed: u64,
    /// Per-channel tolerance outside the mask; 0 for mocks, 2 otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub locality_tolerance: Option<u8>,
    #[serde(default)]
    pub flag_policy: FlagPolicy,
    #[serde(default)]
    pub cascade: CascadeConfig,
    #[serde(default)]
    pub retry: RetryPolicy,
}

fn default_parallelism() -> usize {
    1
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            detect: BackendChoice::default(),
            inpaint_base: BackendChoice::default(),
            inpaint_sr: BackendChoice::default(),
            complete: BackendChoice::default(),
            thresholds: None,
            registry: None,
            exemplars: None,
            parallelism: 1,
            seed: 0,
            locality_tolerance: None,
            flag_policy: FlagPolicy::Warn,
            cascade: CascadeConfig::default(),
            retry: RetryPolicy::default(),
        }
    }
}

impl RunConfig {
    /// Checks that hold for every subcommand. A backend that is neither
    /// mocked nor configured only fails once a subcommand asks for it.
    pub fn validate(&self) -> Result<(), String> {
        if self.parallelism == 0 {
            return Err("parallelism must be at least 1".into());
        }
        for (name, b) in self.backends() {
            if b.mock && b.endpoint.is_some() {
                return Err(format!("{name}: set either mock or endpoint, not both"));
            }
        }
        if self.inpaint_base.mock != self.inpaint_sr.mock {
            return Err("inpaint_base and inpaint_sr must both be mocked or both be endpoints".into());
        }
        self.cascade.validate().map_err(|e| e.to_string())
    }

    fn backends(&self) -> [(&'static str, &BackendChoice); 4] {
        [
            ("detect", &self.detect),
            ("inpaint_base", &self.inpaint_base),
            ("inpaint_sr", &self.inpaint_sr),
            ("complete", &self.complete),
        ]
    }

    fn all_mock(&mut self) {
        for b in [&mut self.detect, &mut self.inpaint_base, &mut self.inpaint_sr, &mut self.complete] {
            *b = BackendChoice::mock();
        }
    }

    fn pipeline(&self) -> PipelineConfig {
        let tolerance = self
            .locality_tolerance
            .unwrap_or(if self.inpaint_base.mock { 0 } else { 2 });
        PipelineConfig {
            parallelism: self.parallelism,
            locality_tolerance: tolerance,
            flag_policy: self.flag_policy,
            cascade: self.cascade,
            retry: self.retry,
            batch_queries: true,
        }
    }

    fn thresholds(&self) -> Result<ThresholdTable, CliError> {
        let table = match &self.thresholds {
            Some(p) => ThresholdTable::load(p).map_err(|e| CliError::validation("segmentation", e))?,
            None => ThresholdTable::default(),
        };
        table.validate().map_err(|e| CliError::validation("segmentation", e))?;
        Ok(table)
    }

    fn detector(&self) -> Result<Box<dyn DetectionBackend>, CliError> {
        self.detect.require("detect")?;
        Ok(match &self.detect.endpoint {
            Some(url) => Box::new(HttpDetector::new(url.clone(), self.retry)),
            None => Box::new(MockDetector::new()),
        })
    }

    fn inpainter(&self) -> Result<Box<dyn InpaintBackend>, CliError> {
        self.inpaint_base.require("inpaint_base")?;
        self.inpaint_sr.require("inpaint_sr")?;
        Ok(match (&self.inpaint_base.endpoint, &self.inpaint_sr.endpoint) {
            (Some(base), Some(sr)) => Box::new(HttpInpainter::new(base.clone(), sr.clone())),
            _ => Box::new(MockCascade::new(self.cascade.base_resolution)),
        })
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{module}: {message}")]
    Validation { module: &'static str, message: String },
    #[error("{module}: backend failure: {message}")]
    Backend { module: &'static str, message: String },
}

impl CliError {
    fn validation(module: &'static str, e: impl ToString) -> Self {
        CliError::Validation {
            module,
            message: e.to_string(),
        }
    }

    fn backend(module: &'static str, e: impl ToString) -> Self {
        CliError::Backend {
            module,
            message: e.to_string(),
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation { .. } => 1,
            CliError::Backend { .. } => 2,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "rosie-forge", version, about = "Semantic augmentation for episodic robot datasets")]
pub struct Cli {
    /// Run config (JSON). Falls back to $ROSIE_FORGE_CONFIG.
    #[arg(long, global = true, env = CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Global seed; overrides the config's seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Use mock backends for detection, inpainting and completion.
    #[arg(long, global = true)]
    pub mock_all: bool,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Worker count; overrides the config's parallelism.
    #[arg(long, global = true)]
    pub parallelism: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic pick dataset.
    Synth(SynthArgs),
    /// Dump detections for one frame.
    Segment(SegmentArgs),
    /// Propose a prompt triple for an augmentation spec.
    Propose(SpecArgs),
    /// Augment every episode whose instruction matches the source task.
    Augment(AugmentArgs),
    /// Write a 1:1 mix manifest for an original and an augmented dataset.
    Mix(MixArgs),
    /// Score prediction files or the toy success detector.
    Eval(EvalArgs),
    /// Render an episode's frames as a horizontal PNG strip.
    Inspect(InspectArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Task spec (JSON); when absent, pick scenes for --target are generated.
    #[arg(long)]
    pub task: Option<PathBuf>,
    /// Object to pick when no task file is given.
    #[arg(long, default_value = "green chip bag")]
    pub target: String,
    #[arg(long, default_value_t = 4)]
    pub episodes: usize,
    #[arg(long, default_value_t = 10)]
    pub length: usize,
}

#[derive(Debug, Args)]
pub struct SegmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub episode: String,
    #[arg(long, default_value_t = 0)]
    pub frame: usize,
    /// Detection query; repeat for several.
    #[arg(long = "query", required = true)]
    pub queries: Vec<String>,
    /// Keep only detections at or above this score.
    #[arg(long)]
    pub min_score: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SpecArgs {
    #[arg(long)]
    pub source: String,
    #[arg(long)]
    pub target: String,
    /// Instruction for the augmented episodes, when the augmentation is a new task.
    #[arg(long)]
    pub new_instruction: Option<String>,
}

impl SpecArgs {
    fn spec(&self) -> AugmentationSpec {
        let spec = AugmentationSpec::new(&self.source, &self.target);
        match &self.new_instruction {
            Some(n) => spec.with_new_instruction(n),
            None => spec,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Replace,
    Distractor,
}

#[derive(Debug, Args)]
pub struct AugmentArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub spec: SpecArgs,
    #[arg(long, value_enum, default_value = "replace")]
    pub mode: ModeArg,
    /// Distractor box as WxH.
    #[arg(long, default_value = "32x32")]
    pub box_size: String,
    /// Threshold family; defaults by mode.
    #[arg(long)]
    pub family: Option<String>,
    /// Region query; with --prompt, skips proposal.
    #[arg(long)]
    pub region: Option<String>,
    #[arg(long = "passthrough")]
    pub passthrough: Vec<String>,
    #[arg(long)]
    pub prompt: Option<String>,
    /// Appended to source ids to form augmented ids.
    #[arg(long, default_value = "a")]
    pub id_suffix: String,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    #[arg(long)]
    pub original: PathBuf,
    #[arg(long)]
    pub augmented: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `method=path` prediction file; repeat for several methods.
    #[arg(long = "predictions")]
    pub predictions: Vec<String>,
    /// Train and score the toy detector with and without clutter augmentation.
    #[arg(long)]
    pub toy: bool,
    #[arg(long, default_value_t = evalkit::DEFAULT_THRESHOLD)]
    pub threshold: f64,
}

#[derive(Debug, Args)]
pub struct InspectArgs {
    #[arg(long)]
    pub dataset: PathBuf,
    #[arg(long)]
    pub episode: String,
    /// Dataset holding the source episode of an augmented one.
    #[arg(long)]
    pub original: Option<PathBuf>,
}

fn load_config(cli: &Cli) -> Result<RunConfig, CliError> {
    let mut config = match &cli.config {
        Some(path) => read_json::<RunConfig>(path).map_err(|e| CliError::validation("cli", e))?,
        None => RunConfig::default(),
    };
    if cli.mock_all {
        config.all_mock();
    }
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(p) = cli.parallelism {
        config.parallelism = p;
    }
    config.validate().map_err(|e| CliError::validation("cli", e))?;
    Ok(config)
}

fn out_dir(cli: &Cli) -> Result<&Path, CliError> {
    cli.out
        .as_deref()
        .ok_or_else(|| CliError::validation("cli", "this subcommand needs --out"))
}

fn store_err(e: store::StoreError) -> CliError {
    CliError::validation("store", e)
}

/// Parse arguments, run, and return the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: &Cli) -> Result<(), CliError> {
    let config = load_config(cli)?;
    match &cli.command {
        Command::Synth(a) => synth(cli, &config, a),
        Command::Segment(a) => segment(cli, &config, a),
        Command::Propose(a) => {
            let triple = propose_triple(&config, &a.spec())?;
            for line in triple.render_lines() {
                println!("{line}");
            }
            if let Some(out) = &cli.out {
                fs::create_dir_all(out).map_err(|e| CliError::validation("cli", e))?;
                write_json(&out.join("triple.json"), &triple).map_err(store_err)?;
            }
            Ok(())
        }
        Command::Augment(a) => augment(cli, &config, a),
        Command::Mix(a) => mix(cli, &config, a),
        Command::Eval(a) => eval(cli, &config, a),
        Command::Inspect(a) => inspect(cli, a),
    }
}

fn synth(cli: &Cli, config: &RunConfig, a: &SynthArgs) -> Result<(), CliError> {
    let out = out_dir(cli)?;
    let task: Option<TaskSpec> = match &a.task {
        Some(p) => Some(read_json(p).map_err(store_err)?),
        None => None,
    };
    let (h, w) = task
        .as_ref()
        .map(|t| (t.scene.height, t.scene.width))
        .unwrap_or((DEFAULT_IMAGE_SIZE, DEFAULT_IMAGE_SIZE));
    let mut dataset = Dataset::new("synthetic", ACTION_DIM, ImageSize { height: h, width: w });
    for i in 0..a.episodes {
        let seed = derive_seed(config.seed, &["synth".into(), i.into()]);
        let t = match &task {
            Some(t) => t.clone(),
            None => TaskSpec::new("pick", &a.target, pick_scene(&a.target, seed)),
        };
        let ep = generate_episode(&t, a.length, seed).map_err(|e| CliError::validation("scene", e))?;
        dataset.episodes.push(ep.episode);
    }
    dataset.sort_episodes();
    store::save_dataset(&dataset, out).map_err(store_err)?;
    println!("wrote {} episodes to {}", dataset.episodes.len(), out.display());
    Ok(())
}

fn segment(cli: &Cli, config: &RunConfig, a: &SegmentArgs) -> Result<(), CliError> {
    let dataset = store::load_dataset(&a.dataset).map_err(store_err)?;
    let ep = dataset
        .episode(&a.episode)
        .ok_or_else(|| CliError::validation("store", format!("no episode {}", a.episode)))?;
    let frame = ep
        .frames
        .get(a.frame)
        .ok_or_else(|| CliError::validation("store", format!("episode {} has no frame {}", a.episode, a.frame)))?;
    let detector = config.detector()?;
    let mut found = detect(detector.as_ref(), &frame.image, &a.queries).map_err(|e| {
        if e.is_backend() {
            CliError::backend("segmentation", e)
        } else {
            CliError::validation("segmentation", e)
        }
    })?;
    if let Some(t) = a.min_score {
        found = filter_by_threshold(&found, t);
    }
    let wire: Vec<WireDetection> = found.iter().map(WireDetection::from_detection).collect();
    match &cli.out {
        Some(out) => {
            fs::create_dir_all(out).map_err(|e| CliError::validation("cli", e))?;
            write_json(&out.join("detections.json"), &wire).map_err(store_err)?;
        }
        None => println!("{}", serde_json::to_string_pretty(&wire).expect("detections serialize")),
    }
    Ok(())
}

fn load_exemplars(config: &RunConfig) -> Result<Vec<FewShotExemplar>, CliError> {
    match &config.exemplars {
        Some(p) => read_json(p).map_err(store_err),
        None => Ok(default_exemplars()),
    }
}

fn propose_triple(config: &RunConfig, spec: &AugmentationSpec) -> Result<PromptTriple, CliError> {
    if let Some(path) = &config.registry {
        let registry = PromptRegistry::load(path).map_err(store_err)?;
        if let Some(t) = registry.lookup(spec) {
            return Ok(t.clone());
        }
    }
    config.complete.require("complete")?;
    let exemplars = load_exemplars(config)?;
    let rule = RuleBackend::new(config.seed);
    let http;
    let backend = match &config.complete.endpoint {
        Some(url) => {
            http = HttpCompleter::new(url.clone(), config.retry);
            PromptBackend::remote(&http as &dyn CompletionBackend)
        }
        None => PromptBackend::Rule(&rule),
    };
    propose(&backend, &exemplars, spec).map_err(|e| match e {
        crate::prompting::PromptError::Backend(b) => CliError::backend("prompting", b),
        other => CliError::validation("prompting", other),
    })
}

fn parse_box(s: &str) -> Result<(u32, u32), CliError> {
    let err = || CliError::validation("cli", format!("box size `{s}` is not WxH"));
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(err)?;
    let w: u32 = w.trim().parse().map_err(|_| err())?;
    let h: u32 = h.trim().parse().map_err(|_| err())?;
    if w == 0 || h == 0 {
        return Err(err());
    }
    Ok((w, h))
}

fn augment(cli: &Cli, config: &RunConfig, a: &AugmentArgs) -> Result<(), CliError> {
    let out = out_dir(cli)?;
    let dataset = store::load_dataset(&a.dataset).map_err(store_err)?;
    let spec = a.spec.spec();
    spec.validate().map_err(|e| CliError::validation("prompting", e))?;
    let triple = match (&a.region, &a.prompt) {
        (Some(region), Some(prompt)) => {
            let passthrough = if a.passthrough.is_empty() {
                crate::prompting::DEFAULT_PASSTHROUGH.iter().map(|s| s.to_string()).collect()
            } else {
                a.passthrough.clone()
            };
            PromptTriple::new(region, passthrough, prompt)
        }
        (None, None) => propose_triple(config, &spec)?,
        _ => return Err(CliError::validation("cli", "--region and --prompt go together")),
    };
    triple.validate().map_err(|e| CliError::validation("prompting", e))?;
    let mode = match a.mode {
        ModeArg::Replace => AugmentMode::ReplaceTarget,
        ModeArg::Distractor => {
            let (box_w, box_h) = parse_box(&a.box_size)?;
            AugmentMode::AddDistractor { box_w, box_h }
        }
    };
    let family = a.family.clone().unwrap_or_else(|| {
        match mode {
            AugmentMode::ReplaceTarget => "novel-object-pick",
            AugmentMode::AddDistractor { .. } => "distractor-addition",
        }
        .to_string()
    });
    let thresholds = config
        .thresholds()?
        .get(&family)
        .map_err(|e| CliError::validation("segmentation", e))?
        .clone();
    let template = JobTemplate {
        spec,
        triple,
        thresholds,
        mode,
        seed: config.seed,
        id_suffix: a.id_suffix.clone(),
    };
    let jobs = plan_jobs(&dataset, &template);
    let detector = config.detector()?;
    let inpainter = config.inpainter()?;
    let backends = Backends {
        detector: detector.as_ref(),
        inpainter: inpainter.as_ref(),
    };
    let outcome = augment_dataset(&dataset, &jobs, backends, &config.pipeline());
    store::save_dataset(&outcome.dataset, out).map_err(store_err)?;
    write_json(&out.join("skips.json"), &outcome.skips).map_err(store_err)?;
    write_json(&out.join("flags.json"), &outcome.flags).map_err(store_err)?;
    println!(
        "{} jobs, {} augmented, {} skipped, {} flagged",
        jobs.len(),
        outcome.dataset.episodes.len(),
        outcome.skips.len(),
        outcome.flags.len()
    );
    if outcome.backend_failures > 0 {
        return Err(CliError::backend(
            "pipeline",
            format!("{} episodes skipped after backend failures", outcome.backend_failures),
        ));
    }
    Ok(())
}

fn mix(cli: &Cli, config: &RunConfig, a: &MixArgs) -> Result<(), CliError> {
    let out = out_dir(cli)?;
    let ids = |p: &Path| -> Result<Vec<String>, CliError> {
        Ok(store::load_manifest(p).map_err(store_err)?.episodes.into_iter().map(|e| e.id).collect())
    };
    let original = MixSource::new(a.original.display().to_string(), ids(&a.original)?);
    let augmented = MixSource::new(a.augmented.display().to_string(), ids(&a.augmented)?);
    let manifest = mix_datasets(&original, &augmented, config.seed).map_err(|e| CliError::validation("pipeline", e))?;
    fs::create_dir_all(out).map_err(|e| CliError::validation("cli", e))?;
    write_json(&out.join("mix.json"), &manifest).map_err(store_err)?;
    println!("epoch order of {} episodes written", manifest.epoch_order.len());
    Ok(())
}

fn eval(cli: &Cli, config: &RunConfig, a: &EvalArgs) -> Result<(), CliError> {
    let mut methods = Vec::new();
    for spec in &a.predictions {
        let (method, path) = spec
            .split_once('=')
            .ok_or_else(|| CliError::validation("cli", format!("`{spec}` is not method=path")))?;
        let rows = evalkit::load_predictions(Path::new(path)).map_err(|e| CliError::validation("evalkit", e))?;
        methods.push(MethodPredictions {
            method: method.to_string(),
            sets: PredictionSet::group(&rows).map_err(|e| CliError::validation("evalkit", e))?,
        });
    }
    if a.toy {
        let bench = toy::benchmark(config.seed, toy::BenchmarkSizes::default());
        for (name, clutter) in [("No Aug", false), ("Clutter Aug", true)] {
            let det = toy::train_on_benchmark(&bench, clutter, config.seed)
                .map_err(|e| CliError::validation("evalkit", e))?;
            methods.push(MethodPredictions {
                method: name.to_string(),
                sets: vec![
                    toy::toy_detector_eval(&det, &bench.in_distribution, Split::InDistribution),
                    toy::toy_detector_eval(&det, &bench.ood, Split::Ood),
                ],
            });
        }
    }
    if methods.is_empty() {
        return Err(CliError::validation("cli", "eval needs --predictions or --toy"));
    }
    let report = evalkit::evaluate_splits(&methods, a.threshold).map_err(|e| CliError::validation("evalkit", e))?;
    let table = report.render_table();
    print!("{table}");
    if let Some(out) = &cli.out {
        fs::create_dir_all(out).map_err(|e| CliError::validation("cli", e))?;
        write_json(&out.join("report.json"), &report).map_err(store_err)?;
        fs::write(out.join("report.txt"), &table).map_err(|e| CliError::validation("cli", e))?;
    }
    Ok(())
}

/// Frames side by side, left to right, top-aligned.
pub fn frame_strip(frames: &[&RgbImage]) -> RgbImage {
    let h = frames.iter().map(|f| f.height()).max().unwrap_or(0);
    let w: u32 = frames.iter().map(|f| f.width()).sum();
    let mut strip = RgbImage::new(w, h);
    let mut x0 = 0;
    for f in frames {
        image::imageops::replace(&mut strip, *f, i64::from(x0), 0);
        x0 += f.width();
    }
    strip
}

fn inspect(cli: &Cli, a: &InspectArgs) -> Result<(), CliError> {
    let out = out_dir(cli)?;
    let dataset = store::load_dataset(&a.dataset).map_err(store_err)?;
    let ep = dataset
        .episode(&a.episode)
        .ok_or_else(|| CliError::validation("store", format!("no episode {}", a.episode)))?;
    let source_dataset = match (&ep.provenance, &a.original) {
        (Provenance::Augmented { .. }, Some(p)) => Some(store::load_dataset(p).map_err(store_err)?),
        _ => None,
    };
    let source = match &ep.provenance {
        Provenance::Augmented { source_episode_id, .. } => source_dataset
            .as_ref()
            .unwrap_or(&dataset)
            .episode(source_episode_id)
            .filter(|s| s.frames.len() == ep.frames.len()),
        Provenance::Collected => None,
    };
    let frames: Vec<&RgbImage> = match source {
        Some(src) => src
            .frames
            .iter()
            .zip(&ep.frames)
            .flat_map(|(o, a)| [&o.image, &a.image])
            .collect(),
        None => ep.frames.iter().map(|f| &f.image).collect(),
    };
    let strip = frame_strip(&frames);
    fs::create_dir_all(out).map_err(|e| CliError::validation("cli", e))?;
    let path = out.join(format!("{}_strip.png", ep.id));
    fs::write(&path, store::encode_png(&strip)).map_err(|e| CliError::validation("cli", e))?;
    println!("wrote {}", path.display());
    Ok(())
}
