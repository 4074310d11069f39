//! Command-line front end: `synth`, `prepare`, `train`, `eval`, `ablate`,
//! `gradcheck` and `config`.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::{info, warn};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::archive::{ArchiveMeta, ClipArchive};
use crate::data::logs::{read_log_dir, write_file, write_log_dir};
use crate::data::{
    class_histogram, prepare_dataset, CategoryQuota, Clip, ClipParams, EligibilityConfig,
    PrepareConfig, SplitConfig,
};
use crate::error::{Error, Result};
use crate::eval::{
    derive_seed, evaluate, measure_inference, run_ablation, MetricsReport, SweepSpec,
};
use crate::model::{checkpoint, ModelConfig, Variant};
use crate::synth::{generate, SynthConfig};
use crate::train::gradcheck::{run_default, GradcheckConfig};
use crate::train::{dataset_loss, init_params, train, TrainConfig};

pub const CONFIG_SCHEMA: &str = "egospeed.config/1";
pub const MANIFEST_SCHEMA: &str = "egospeed.manifest/1";
pub const REPORT_SCHEMA: &str = "egospeed.report/1";

pub const ARCHIVE_FILE: &str = "clips.egsc";
pub const CHECKPOINT_FILE: &str = "model.egsm";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const ORACLE_FILE: &str = "oracle.jsonl";

/// Dataset-construction section of the config file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PrepareSection {
    pub source_fps: f64,
    pub target_fps: f64,
    pub history: usize,
    pub future: usize,
    pub quota: CategoryQuota,
    pub eligibility: EligibilityConfig,
    pub split: SplitConfig,
}

impl Default for PrepareSection {
    fn default() -> Self {
        let p = PrepareConfig::default();
        PrepareSection {
            source_fps: p.source_fps,
            target_fps: p.target_fps,
            history: p.clip.history,
            future: p.clip.future,
            quota: p.clip.quota,
            eligibility: p.eligibility,
            split: SplitConfig::default(),
        }
    }
}

impl PrepareSection {
    pub fn prepare_config(&self, clip: ClipParams) -> PrepareConfig {
        PrepareConfig {
            source_fps: self.source_fps,
            target_fps: self.target_fps,
            clip,
            eligibility: self.eligibility,
        }
    }

    pub fn clip_params(&self) -> ClipParams {
        ClipParams {
            history: self.history,
            future: self.future,
            quota: self.quota,
        }
    }
}

/// Everything a run can be configured with, one TOML table per stage.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub schema: String,
    /// Master seed; every stage seed is derived from it.
    pub seed: u64,
    pub synth: SynthConfig,
    pub prepare: PrepareSection,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub sweep: SweepSpec,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            schema: CONFIG_SCHEMA.into(),
            seed: 0,
            synth: SynthConfig::default(),
            prepare: PrepareSection::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            sweep: SweepSpec::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        if cfg.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "schema: expected {CONFIG_SCHEMA:?}, found {:?}",
                cfg.schema
            )));
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Stage seed derived from the master seed.
    pub fn stage_seed(&self, stage: &str) -> u64 {
        derive_seed(self.seed, stage)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Artifact {
    pub role: String,
    pub path: PathBuf,
    pub sha256: String,
    pub bytes: u64,
}

impl Artifact {
    pub fn of(role: &str, path: &Path) -> Result<Self> {
        let bytes = fs::read(path)?;
        Ok(Artifact {
            role: role.into(),
            path: path.to_path_buf(),
            sha256: sha256_hex(&bytes),
            bytes: bytes.len() as u64,
        })
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// Provenance record written next to every command's outputs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema: String,
    pub command: String,
    pub tool_version: String,
    pub config_path: Option<PathBuf>,
    pub config: RunConfig,
    pub master_seed: u64,
    pub inputs: Vec<Artifact>,
    pub outputs: Vec<Artifact>,
    pub summary: serde_json::Value,
}

impl RunManifest {
    fn new(command: &str, cli: &Globals, config: &RunConfig) -> Self {
        RunManifest {
            schema: MANIFEST_SCHEMA.into(),
            command: command.into(),
            tool_version: env!("CARGO_PKG_VERSION").into(),
            config_path: cli.config.clone(),
            config: config.clone(),
            master_seed: config.seed,
            inputs: Vec::new(),
            outputs: Vec::new(),
            summary: serde_json::Value::Null,
        }
    }

    fn write(mut self, dir: &Path, outputs: &[(&str, PathBuf)]) -> Result<()> {
        for (role, path) in outputs {
            self.outputs.push(Artifact::of(role, path)?);
        }
        let text = serde_json::to_string_pretty(&self)?;
        fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(())
    }
}

#[derive(Parser, Debug)]
#[command(name = "egospeed", version, about = "Speed-control action forecasting from object detections")]
pub struct Cli {
    #[command(flatten)]
    pub globals: Globals,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Globals {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed (overrides the config file).
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; defaults to the available cores.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

/// Clip shape overrides.
#[derive(Args, Debug, Clone, Default)]
pub struct ClipFlags {
    /// History length in downsampled frames.
    #[arg(long = "T")]
    pub history: Option<usize>,
    /// Offset of the predicted frame after the anchor.
    #[arg(long = "FT")]
    pub future: Option<usize>,
    /// Per-category object slots as `car,pedestrian,traffic`.
    #[arg(long)]
    pub quota: Option<CategoryQuota>,
}

#[derive(Args, Debug, Clone, Default)]
pub struct TrainFlags {
    /// Chebyshev order.
    #[arg(long = "K")]
    pub order: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub max_epochs: Option<usize>,
    #[arg(long)]
    pub patience: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum SplitName {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Preset {
    /// Five variants at T=10, FT=1, K=1.
    Table1,
    /// Full model at four (T, FT, K) settings.
    Table2,
    /// The `[sweep]` table of the config file.
    Config,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate synthetic detection and sensor logs.
    Synth {
        #[arg(long)]
        sessions: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn logs into a split clip archive.
    Prepare {
        #[arg(long)]
        logs: PathBuf,
        #[command(flatten)]
        clip: ClipFlags,
        /// Keep each session inside one split.
        #[arg(long)]
        by_session: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one variant on an archive.
    Train {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        variant: Option<Variant>,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score a checkpoint on one split of an archive.
    Eval {
        #[arg(long)]
        archive: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitName,
        #[arg(long)]
        variant: Option<Variant>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train and score a grid of variants and settings.
    Ablate {
        #[arg(long)]
        logs: PathBuf,
        #[arg(long, value_enum, default_value = "table1")]
        preset: Preset,
        /// Restrict to these variants (repeatable).
        #[arg(long = "variant")]
        variants: Vec<Variant>,
        #[arg(long)]
        quota: Option<CategoryQuota>,
        #[command(flatten)]
        flags: TrainFlags,
        #[arg(long)]
        by_session: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every gradient coordinate on a tiny model.
    Gradcheck {
        #[arg(long)]
        variant: Option<Variant>,
        /// Relative tolerance.
        #[arg(long)]
        tolerance: Option<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the effective configuration as TOML.
    Config,
}

/// Exit status of a command that ran to completion but failed a check.
pub const EXIT_CHECK_FAILED: i32 = 5;

fn resolve_config(g: &Globals) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = g.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_train_flags(cfg: &mut RunConfig, f: &TrainFlags) {
    if let Some(k) = f.order {
        cfg.model.order = k;
    }
    if let Some(b) = f.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(m) = f.max_epochs {
        cfg.train.max_epochs = m;
    }
    if let Some(p) = f.patience {
        cfg.train.patience = p;
    }
}

/// Runs a parsed command line and returns the process exit code.
pub fn run(cli: Cli) -> Result<i32> {
    if let Some(n) = cli.globals.threads {
        if n == 0 {
            return Err(Error::InvalidConfig("threads must be positive".into()));
        }
        if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
            warn!("thread pool already initialised; --threads ignored");
        }
    }
    let mut cfg = resolve_config(&cli.globals)?;
    let g = &cli.globals;
    match &cli.command {
        Command::Synth { sessions, out } => {
            if let Some(s) = sessions {
                cfg.synth.sessions = *s;
            }
            cmd_synth(g, cfg, out)
        }
        Command::Prepare {
            logs,
            clip,
            by_session,
            out,
        } => {
            if let Some(t) = clip.history {
                cfg.prepare.history = t;
            }
            if let Some(ft) = clip.future {
                cfg.prepare.future = ft;
            }
            if let Some(q) = clip.quota {
                cfg.prepare.quota = q;
            }
            cfg.prepare.split.by_session |= by_session;
            cmd_prepare(g, cfg, logs, out)
        }
        Command::Train {
            archive,
            variant,
            flags,
            out,
        } => {
            if let Some(v) = variant {
                cfg.model.variant = *v;
            }
            apply_train_flags(&mut cfg, flags);
            cmd_train(g, cfg, archive, out)
        }
        Command::Eval {
            archive,
            checkpoint,
            split,
            variant,
            out,
        } => cmd_eval(g, cfg, archive, checkpoint, *split, *variant, out.as_deref()),
        Command::Ablate {
            logs,
            preset,
            variants,
            quota,
            flags,
            by_session,
            out,
        } => {
            apply_train_flags(&mut cfg, flags);
            cfg.prepare.split.by_session |= by_session;
            let seeds = cfg.sweep.seeds.clone();
            let mut spec = match preset {
                Preset::Table1 => SweepSpec::table1(),
                Preset::Table2 => SweepSpec::table2(),
                Preset::Config => cfg.sweep.clone(),
            };
            if *preset != Preset::Config {
                spec.seeds = seeds;
            }
            if !variants.is_empty() {
                spec.variants = variants.clone();
            }
            if let Some(q) = quota {
                spec.quotas = vec![*q];
            }
            if let Some(k) = flags.order {
                spec.order = vec![k];
            }
            cfg.sweep = spec;
            cmd_ablate(g, cfg, logs, out)
        }
        Command::Gradcheck {
            variant,
            tolerance,
            out,
        } => {
            if let Some(v) = variant {
                cfg.model.variant = *v;
            }
            if let Some(t) = tolerance {
                cfg.gradcheck.rel_tol = *t;
            }
            cmd_gradcheck(g, cfg, out.as_deref())
        }
        Command::Config => {
            print!("{}", cfg.to_toml()?);
            Ok(0)
        }
    }
}

fn print_histogram(name: &str, clips: &[Clip]) -> [usize; 4] {
    let h = class_histogram(clips);
    println!(
        "{name:>5}: {:>6} clips  [fb {} | sb {} | sa {} | fa {}]",
        clips.len(),
        h[0],
        h[1],
        h[2],
        h[3]
    );
    h
}

pub fn cmd_synth(g: &Globals, mut cfg: RunConfig, out: &Path) -> Result<i32> {
    cfg.synth.seed = cfg.stage_seed("synth");
    cfg.synth.validate()?;
    let data = generate(&cfg.synth)?;
    write_log_dir(out, &data.frames, &data.sensors)?;
    let oracle = out.join(ORACLE_FILE);
    write_file(&oracle, &data.oracle)?;
    let mut hist = [0usize; 4];
    for o in &data.oracle {
        if let Some(a) = o.action {
            hist[a.index()] += 1;
        }
    }
    println!(
        "{} sessions, {} frames; frame labels [fb {} | sb {} | sa {} | fa {}]",
        cfg.synth.sessions,
        data.frames.len(),
        hist[0],
        hist[1],
        hist[2],
        hist[3]
    );
    let mut m = RunManifest::new("synth", g, &cfg);
    m.summary = serde_json::json!({ "frames": data.frames.len(), "frame_labels": hist });
    m.write(
        out,
        &[
            ("detections", out.join(crate::data::logs::DETECTIONS_FILE)),
            ("sensors", out.join(crate::data::logs::SENSORS_FILE)),
            ("oracle", oracle),
        ],
    )?;
    Ok(0)
}

pub fn cmd_prepare(g: &Globals, mut cfg: RunConfig, logs: &Path, out: &Path) -> Result<i32> {
    cfg.prepare.split.seed = cfg.stage_seed("split");
    let clip = cfg.prepare.clip_params();
    clip.validate()?;
    cfg.prepare.split.ratios.validate()?;
    let prep = cfg.prepare.prepare_config(clip);
    let (frames, sensors) = read_log_dir(logs)?;
    if frames.is_empty() {
        warn!("no detection records in {}; writing an empty archive", logs.display());
    }
    let clips = prepare_dataset(&frames, &sensors, &prep)?;
    let splits = cfg.prepare.split.apply(clips)?;
    fs::create_dir_all(out)?;
    let archive = ClipArchive {
        meta: ArchiveMeta {
            prepare: prep,
            split_seed: cfg.prepare.split.seed,
            split_by_session: cfg.prepare.split.by_session,
        },
        splits,
    };
    let path = out.join(ARCHIVE_FILE);
    archive.save(&path)?;
    let train = print_histogram("train", &archive.splits.train);
    let val = print_histogram("val", &archive.splits.val);
    let test = print_histogram("test", &archive.splits.test);
    let mut m = RunManifest::new("prepare", g, &cfg);
    m.inputs.push(Artifact::of("detections", &logs.join(crate::data::logs::DETECTIONS_FILE))?);
    m.inputs.push(Artifact::of("sensors", &logs.join(crate::data::logs::SENSORS_FILE))?);
    m.summary = serde_json::json!({
        "clips": archive.splits.len(),
        "histograms": { "train": train, "val": val, "test": test },
    });
    m.write(out, &[("archive", path)])?;
    Ok(0)
}

#[derive(Serialize)]
struct ReportFile<'a, T: Serialize> {
    schema: &'a str,
    #[serde(flatten)]
    body: &'a T,
}

/// Pretty JSON of `body` with a leading `schema` field, newline-terminated.
pub fn report_json<T: Serialize>(body: &T) -> Result<String> {
    let text = serde_json::to_string_pretty(&ReportFile {
        schema: REPORT_SCHEMA,
        body,
    })?;
    Ok(text + "\n")
}

fn write_json<T: Serialize>(path: &Path, body: &T) -> Result<()> {
    fs::write(path, report_json(body)?)?;
    Ok(())
}

fn model_for_archive(cfg: &RunConfig, archive: &ClipArchive) -> ModelConfig {
    let clip = archive.meta.prepare.clip;
    ModelConfig {
        history: clip.history,
        future: clip.future,
        quota: clip.quota,
        ..cfg.model.clone()
    }
}

fn print_metrics(m: &MetricsReport) {
    let names = ["full_braking", "slight_braking", "slight_accel", "full_accel"];
    for j in 0..4 {
        match m.recall[j] {
            Some(r) => println!("recall {:<15} {r:6.2}  (n = {})", names[j], m.counts[j]),
            None => println!("recall {:<15}    n/a  (class absent)", names[j]),
        }
    }
    println!("accuracy {:.2}", m.accuracy);
}

pub fn cmd_train(g: &Globals, mut cfg: RunConfig, archive_path: &Path, out: &Path) -> Result<i32> {
    let archive = ClipArchive::load(archive_path)?;
    cfg.model = model_for_archive(&cfg, &archive);
    cfg.model.seed = cfg.stage_seed("init");
    cfg.train.seed = cfg.stage_seed("train");
    cfg.train.validate()?;
    let init = init_params(&cfg.model, cfg.model.seed)?;
    fs::create_dir_all(out)?;
    let report_path = out.join("report.json");
    let (params, report) = match train(&archive.splits, init, &cfg.train) {
        Ok(v) => v,
        Err(Error::NumericFault { path, partial }) => {
            if let Some(r) = &partial {
                write_json(&report_path, r.as_ref())?;
                fs::write(out.join("epochs.csv"), r.epochs_csv())?;
            }
            return Err(Error::NumericFault { path, partial });
        }
        Err(e) => return Err(e),
    };
    let ckpt = out.join(CHECKPOINT_FILE);
    checkpoint::save(&params, &ckpt)?;
    write_json(&report_path, &report)?;
    let epochs = out.join("epochs.csv");
    fs::write(&epochs, report.epochs_csv())?;
    println!(
        "{}: best epoch {} of {} (val loss {:.6}), {:.1}s",
        report.variant, report.best_epoch, report.stop_epoch, report.best_val_loss, report.total_seconds
    );
    if let Some(m) = &report.test_metrics {
        print_metrics(m);
    }
    let mut m = RunManifest::new("train", g, &cfg);
    m.inputs.push(Artifact::of("archive", archive_path)?);
    m.summary = serde_json::json!({
        "best_epoch": report.best_epoch,
        "best_val_loss": report.best_val_loss,
        "stop_epoch": report.stop_epoch,
        "test_accuracy": report.test_metrics.as_ref().map(|t| t.accuracy),
    });
    m.write(out, &[("checkpoint", ckpt), ("report", report_path), ("epochs", epochs)])?;
    Ok(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub split: String,
    pub variant: Variant,
    pub loss: f64,
    pub metrics: MetricsReport,
    pub inference: crate::eval::InferenceTiming,
}

pub fn cmd_eval(
    g: &Globals,
    cfg: RunConfig,
    archive_path: &Path,
    ckpt_path: &Path,
    split: SplitName,
    variant: Option<Variant>,
    out: Option<&Path>,
) -> Result<i32> {
    let archive = ClipArchive::load(archive_path)?;
    let params = checkpoint::load(ckpt_path)?;
    if let Some(v) = variant {
        if v != params.variant() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint holds variant {}, not {v}",
                params.variant()
            )));
        }
    }
    let clips = match split {
        SplitName::Train => &archive.splits.train,
        SplitName::Val => &archive.splits.val,
        SplitName::Test => &archive.splits.test,
    };
    let metrics = evaluate(&params, clips)?;
    let loss = dataset_loss(clips, &params)?;
    let inference = measure_inference(&params, clips)?;
    println!("{} on {:?} split: loss {loss:.6}", params.variant(), split);
    print_metrics(&metrics);
    println!("inference {:.1} us/clip", inference.us_per_clip);
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let path = out.join("metrics.json");
        write_json(
            &path,
            &EvalSummary {
                split: format!("{split:?}").to_lowercase(),
                variant: params.variant(),
                loss,
                metrics,
                inference,
            },
        )?;
        let mut m = RunManifest::new("eval", g, &cfg);
        m.inputs.push(Artifact::of("archive", archive_path)?);
        m.inputs.push(Artifact::of("checkpoint", ckpt_path)?);
        m.write(out, &[("metrics", path)])?;
    }
    Ok(0)
}

pub fn cmd_ablate(g: &Globals, cfg: RunConfig, logs: &Path, out: &Path) -> Result<i32> {
    let (frames, sensors) = read_log_dir(logs)?;
    let split = SplitConfig {
        seed: cfg.stage_seed("split"),
        ..cfg.prepare.split
    };
    let prepare = cfg.prepare.clone();
    let results = run_ablation(&cfg.sweep, &cfg.train, &cfg.model, cfg.stage_seed("ablate"), |clip| {
        info!("preparing clips for T={} FT={} quota {}", clip.history, clip.future, clip.quota);
        let clips = prepare_dataset(&frames, &sensors, &prepare.prepare_config(*clip))?;
        split.apply(clips)
    })?;
    fs::create_dir_all(out)?;
    let table = results.to_csv()?;
    print!("{table}");
    let results_path = out.join("results.csv");
    fs::write(&results_path, &table)?;
    let curves = out.join("loss_curves.csv");
    fs::write(&curves, results.loss_curves_csv())?;
    let cells = out.join("cells.json");
    write_json(&cells, &results)?;
    let failed = results.cells.iter().filter(|c| c.error.is_some()).count();
    let mut m = RunManifest::new("ablate", g, &cfg);
    m.inputs.push(Artifact::of("detections", &logs.join(crate::data::logs::DETECTIONS_FILE))?);
    m.inputs.push(Artifact::of("sensors", &logs.join(crate::data::logs::SENSORS_FILE))?);
    m.summary = serde_json::json!({ "cells": results.cells.len(), "failed": failed });
    m.write(out, &[("results", results_path), ("loss_curves", curves), ("cells", cells)])?;
    if failed > 0 {
        warn!("{failed} cell(s) failed; see cells.json");
    }
    Ok(0)
}

pub fn cmd_gradcheck(g: &Globals, mut cfg: RunConfig, out: Option<&Path>) -> Result<i32> {
    cfg.gradcheck.seed = cfg.stage_seed("gradcheck");
    let report = run_default(cfg.model.variant, &cfg.gradcheck)?;
    for t in &report.tensors {
        println!(
            "{:<36} n={:<5} max_abs={:.2e} max_rel={:.2e}{}",
            t.name,
            t.coordinates,
            t.max_abs_error,
            t.max_rel_error,
            if t.failures > 0 { "  FAIL" } else { "" }
        );
    }
    println!(
        "{}: {} coordinates, {} failures, max relative error {:.3e} ({:.2}s)",
        report.variant, report.coordinates, report.failures, report.max_rel_error, report.seconds
    );
    if let Some(out) = out {
        fs::create_dir_all(out)?;
        let path = out.join("gradcheck.json");
        write_json(&path, &report)?;
        RunManifest::new("gradcheck", g, &cfg).write(out, &[("gradcheck", path)])?;
    }
    Ok(if report.passed() { 0 } else { EXIT_CHECK_FAILED })
}
