//! The `seedcl` command line: dataset generation, pretraining, probing,
//! evaluation, learning-rate range tests and histogram comparison.

mod config;
mod record;

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use config::{Paths, Profile, RunConfig};
pub use record::{RunRecord, RUNS_FILE};

use crate::contrastive::{pretrain, Framework};
use crate::error::{Error, Result};
use crate::metrics::{classification_report, color_histogram, histogram_rms_difference, ConfusionMatrix};
use crate::net::{strip_all_heads_and_freeze, Checkpoint, EncoderConfig, ParamStore};
use crate::probe::{predict, probe_lr_sweep, split_labels, train_probe, LabelBudget, LearningRate, ProbeConfig, ProbeData};
use crate::raster::Image;
use crate::rng;
use crate::synthgen::{
    generate_dataset, generate_toy_cutouts, load_cutout_dir, DatasetManifest, DatasetSpec, Split, ThresholdConfig,
    ToyConfig, MANIFEST_FILE,
};

pub const CHECKPOINT_DIR: &str = "checkpoint";
pub const CLASSIFIER_DIR: &str = "classifier";
pub const PLACEMENTS_FILE: &str = "placements.jsonl";

const TOY_STREAM: u64 = u64::MAX;
const PROBE_SPLIT_STREAM: u64 = 5;

#[derive(Debug, Parser)]
#[command(name = "seedcl", version, about = "Synthetic seed datasets and contrastive self-supervised pretraining")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Compose a synthetic dataset from cutouts or generated toy seeds.
    GenSynthetic(GenArgs),
    /// Pretrain an encoder with SimCLR, MoCo or BYOL.
    Pretrain(PretrainArgs),
    /// Train a linear probe on a frozen pretrained encoder.
    Probe(ProbeArgs),
    /// Classification report for an encoder plus probe.
    Eval(EvalArgs),
    /// Learning-rate range test for a probe.
    LrFind(LrFindArgs),
    /// Root-mean-square difference of two images' color histograms.
    HistCompare(HistArgs),
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Directory of `<class>/<photo>.png` seed photographs or cutouts.
    #[arg(long, conflicts_with = "toy_classes", required_unless_present = "toy_classes")]
    pub cutouts: Option<PathBuf>,
    /// Generate this many classes of toy seeds instead of reading photographs.
    #[arg(long)]
    pub toy_classes: Option<usize>,
    /// Toy cutouts per class.
    #[arg(long, default_value_t = 30)]
    pub toy_cutouts: usize,
    /// Toy seed color saturation in [0, 1].
    #[arg(long)]
    pub toy_saturation: Option<f64>,
    #[arg(long, default_value_t = 1000)]
    pub per_class: usize,
    #[arg(long, default_value_t = 50)]
    pub seeds_per_image: usize,
    /// Per-image seed count varies uniformly by up to this much.
    #[arg(long, default_value_t = 0)]
    pub seed_count_jitter: usize,
    /// Per-image, per-channel background offset range.
    #[arg(long, default_value_t = 0)]
    pub background_tint: u8,
    #[arg(long, default_value_t = 224)]
    pub size: usize,
    /// Train and validation fractions.
    #[arg(long, default_value = "0.8,0.2")]
    pub split: String,
    /// Reject placements that overlap earlier ones.
    #[arg(long)]
    pub no_overlap: bool,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct PretrainArgs {
    #[arg(long, value_parser = parse_framework)]
    pub framework: Framework,
    /// RunConfig JSON; flags override its values.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub profile: Option<Profile>,
    /// Dataset manifest (`manifest.jsonl`) or the directory holding it.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Pretrained checkpoint directory.
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Labelled images per class, validation included.
    #[arg(long, default_value_t = 50)]
    pub per_class: usize,
    /// Of those, images per class held out for probe validation.
    #[arg(long, default_value_t = 10)]
    pub per_class_val: usize,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ProbeArgs {
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// `auto` or a number.
    #[arg(long)]
    pub lr: Option<String>,
    /// Train the encoder together with the classifier.
    #[arg(long)]
    pub end_to_end: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Probe output directory or its classifier checkpoint.
    #[arg(long)]
    pub probe: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "val")]
    pub split: String,
    /// Text report path; the JSON report goes next to it.
    #[arg(long)]
    pub report_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct LrFindArgs {
    #[command(flatten)]
    pub labels: LabelArgs,
    #[arg(long, default_value_t = 1e-5)]
    pub min_lr: f64,
    #[arg(long, default_value_t = 1.0)]
    pub max_lr: f64,
    #[arg(long, default_value_t = 100)]
    pub steps: usize,
    /// Sweep CSV path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct HistArgs {
    pub image_a: PathBuf,
    pub image_b: PathBuf,
}

fn parse_framework(s: &str) -> std::result::Result<Framework, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

/// Parse arguments, run, and return the process exit code.
pub fn run_from<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) | Error::Json { .. } => 2,
        _ => 1,
    }
}

/// Run one subcommand, appending a [`RunRecord`] wherever it writes output.
pub fn run(command: Command) -> Result<()> {
    let (name, dir) = match &command {
        Command::GenSynthetic(a) => ("gen-synthetic", Some(a.out.clone())),
        Command::Pretrain(a) => ("pretrain", Some(a.out.clone())),
        Command::Probe(a) => ("probe", Some(a.out.clone())),
        Command::Eval(a) => ("eval", a.report_out.as_deref().map(parent_dir)),
        Command::LrFind(a) => ("lr-find", a.out.as_deref().map(parent_dir)),
        Command::HistCompare(_) => ("hist-compare", None),
    };
    let mut rec = RunRecord::start(name);
    let result = match command {
        Command::GenSynthetic(a) => gen_synthetic(&a, &mut rec),
        Command::Pretrain(a) => cmd_pretrain(&a, &mut rec),
        Command::Probe(a) => cmd_probe(&a, &mut rec),
        Command::Eval(a) => cmd_eval(&a, &mut rec),
        Command::LrFind(a) => cmd_lr_find(&a, &mut rec),
        Command::HistCompare(a) => cmd_hist_compare(&a),
    };
    rec.finished_at = record::now();
    if let Err(e) = &result {
        rec.error = Some(e.to_string());
    }
    if let Some(dir) = dir {
        if let Err(e) = rec.append(&dir) {
            eprintln!("warning: could not append run record: {e}");
        }
    }
    result
}

fn parent_dir(p: &Path) -> PathBuf {
    match p.parent() {
        Some(d) if !d.as_os_str().is_empty() => d.to_path_buf(),
        _ => PathBuf::from("."),
    }
}

fn parse_split(s: &str) -> Result<(f64, f64)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    let bad = || Error::Config(format!("split `{s}` must be two comma-separated fractions"));
    match parts.as_slice() {
        [a, b] => Ok((a.parse().map_err(|_| bad())?, b.parse().map_err(|_| bad())?)),
        _ => Err(bad()),
    }
}

fn manifest_path(p: &Path) -> PathBuf {
    if p.is_dir() {
        p.join(MANIFEST_FILE)
    } else {
        p.to_path_buf()
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn mkdir(path: &Path) -> Result<()> {
    std::fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

fn gen_synthetic(a: &GenArgs, rec: &mut RunRecord) -> Result<()> {
    let mut spec = DatasetSpec::new(a.per_class, a.seeds_per_image, a.size);
    spec.split = parse_split(&a.split)?;
    spec.seed_count_jitter = a.seed_count_jitter;
    spec.background_tint = a.background_tint;
    spec.compose.no_overlap = a.no_overlap;
    spec.validate()?;
    let classes = match (&a.cutouts, a.toy_classes) {
        (Some(dir), _) => load_cutout_dir(dir, ThresholdConfig::Otsu)?,
        (None, Some(k)) => {
            let mut toy = ToyConfig::for_canvas(a.size);
            if let Some(s) = a.toy_saturation {
                toy.saturation = s;
            }
            let cuts = generate_toy_cutouts(k, a.toy_cutouts, &toy, &mut rng::stream(a.seed, &[TOY_STREAM]))?;
            let mut by_class: Vec<(String, Vec<_>)> = Vec::new();
            for c in cuts {
                match by_class.iter_mut().find(|(n, _)| *n == c.class_label) {
                    Some((_, v)) => v.push(c),
                    None => by_class.push((c.class_label.clone(), vec![c])),
                }
            }
            by_class
        }
        (None, None) => return Err(Error::Config("pass --cutouts DIR or --toy-classes N".into())),
    };
    rec.config = json!({ "dataset": spec, "seed": a.seed, "classes": classes.iter().map(|(n, _)| n).collect::<Vec<_>>() });
    let generated = generate_dataset(&classes, &spec, &a.out, a.seed)?;
    let mut lines = String::new();
    for (r, p) in generated.manifest.records.iter().zip(&generated.placements) {
        lines.push_str(&serde_json::to_string(&json!({ "path": r.path, "placements": p })).expect("serializable"));
        lines.push('\n');
    }
    let placements = a.out.join(PLACEMENTS_FILE);
    write(&placements, &lines)?;
    let m = &generated.manifest;
    rec.artifacts = vec![a.out.join(MANIFEST_FILE), placements];
    rec.metrics = json!({ "images": m.records.len(), "train": m.count(Split::Train), "val": m.count(Split::Val) });
    println!("{} images ({} train, {} val) in {}", m.records.len(), m.count(Split::Train), m.count(Split::Val), a.out.display());
    Ok(())
}

fn load_config(path: Option<&Path>, fallback: RunConfig, rec: &mut RunRecord) -> Result<RunConfig> {
    match path {
        Some(p) => {
            let (cfg, text) = RunConfig::load(p)?;
            rec.config_file = Some(p.to_path_buf());
            rec.config_text = Some(text);
            Ok(cfg)
        }
        None => Ok(fallback),
    }
}

fn cmd_pretrain(a: &PretrainArgs, rec: &mut RunRecord) -> Result<()> {
    let fallback = RunConfig::for_profile(a.profile.unwrap_or(Profile::Desk), a.framework);
    let mut cfg = load_config(a.config.as_deref(), fallback, rec)?;
    cfg.framework.framework = a.framework;
    if let Some(p) = a.profile {
        cfg.profile = p;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(b) = a.batch_size {
        cfg.train.batch_size = b;
    }
    if let Some(lr) = a.lr {
        cfg.train.learning_rate = lr;
    }
    if let Some(s) = a.seed {
        cfg.train.master_seed = s;
    }
    cfg.paths.data_dir = Some(a.data.clone());
    cfg.paths.out_dir = Some(a.out.clone());
    rec.config = serde_json::to_value(&cfg).expect("serializable");
    cfg.validate()?;

    let manifest = DatasetManifest::read(&manifest_path(&a.data))?;
    let outcome = pretrain(&cfg.framework, &cfg.train, &manifest, &cfg.augmentation, &cfg.encoder)?;
    mkdir(&a.out)?;
    let ckpt = a.out.join(CHECKPOINT_DIR);
    outcome.checkpoint.save(&ckpt)?;
    let (loss, epochs, snapshot) = (a.out.join("loss.csv"), a.out.join("epochs.csv"), a.out.join("config.json"));
    outcome.write_csvs(&loss, &epochs)?;
    write(&snapshot, &format!("{}\n", serde_json::to_string_pretty(&cfg).expect("serializable")))?;
    rec.checkpoint = Some(ckpt);
    rec.artifacts = vec![loss, epochs, snapshot];
    let last = outcome.epochs.last().map(|e| e.mean_loss);
    rec.metrics = json!({ "final_mean_loss": last, "steps": outcome.steps.len() });
    if let Some(l) = last {
        println!("{}: {} epochs, final mean loss {l:.4}", cfg.framework.framework, outcome.epochs.len());
    }
    Ok(())
}

/// Encoder configuration recorded in a checkpoint's config snapshot.
pub fn checkpoint_encoder(ckpt: &Checkpoint) -> Result<EncoderConfig> {
    let v = ckpt.config.get("encoder").cloned().ok_or_else(|| Error::Config("checkpoint config has no encoder".into()))?;
    serde_json::from_value(v).map_err(|e| Error::Config(format!("checkpoint encoder config: {e}")))
}

struct Labelled {
    encoder: EncoderConfig,
    params: ParamStore<f32>,
    data: ProbeData,
    classes: Vec<String>,
    probe: ProbeConfig,
}

fn labelled(a: &LabelArgs, rec: &mut RunRecord) -> Result<Labelled> {
    let mut probe = load_config(a.config.as_deref(), RunConfig::default(), rec)?.probe;
    if let Some(s) = a.seed {
        probe.seed = s;
    }
    let ckpt = Checkpoint::load(&a.ckpt)?;
    let encoder = checkpoint_encoder(&ckpt)?;
    let params = strip_all_heads_and_freeze(&ckpt.params);
    let manifest = DatasetManifest::read(&manifest_path(&a.data))?;
    let split = split_labels(
        &manifest,
        LabelBudget::PerClass(a.per_class),
        a.per_class_val,
        &mut rng::stream(probe.seed, &[PROBE_SPLIT_STREAM]),
    )?;
    let data = ProbeData {
        train: manifest.load(&split.train_records)?,
        val: manifest.load(&split.val_records)?,
        class_count: manifest.class_names.len(),
    };
    Ok(Labelled { encoder, params, data, classes: manifest.class_names, probe })
}

fn cmd_probe(a: &ProbeArgs, rec: &mut RunRecord) -> Result<()> {
    let mut l = labelled(&a.labels, rec)?;
    if let Some(e) = a.epochs {
        l.probe.epochs = e;
    }
    if let Some(lr) = &a.lr {
        l.probe.learning_rate = serde_json::from_str(lr)
            .or_else(|_| serde_json::from_value(json!(lr)))
            .map_err(|_| Error::Config(format!("--lr must be `auto` or a number, got `{lr}`")))?;
    }
    l.probe.end_to_end = a.end_to_end;
    rec.config = json!({ "probe": l.probe, "per_class": a.labels.per_class, "per_class_val": a.labels.per_class_val });
    let outcome = train_probe(&l.params, &l.encoder, &l.data, &l.probe)?;

    mkdir(&a.out)?;
    let dir = a.out.join(CLASSIFIER_DIR);
    let ckpt = Checkpoint {
        framework: "linear_probe".into(),
        config: json!({ "encoder": l.encoder, "probe": l.probe, "classes": l.classes }),
        epoch: l.probe.epochs,
        params: outcome.params.clone(),
    };
    ckpt.save(&dir)?;
    let curves = a.out.join("curves.csv");
    write(&curves, &outcome.curves_csv())?;
    rec.artifacts = vec![curves];
    if let Some(sw) = &outcome.sweep {
        let p = a.out.join("lr_sweep.csv");
        write(&p, &sw.csv())?;
        rec.artifacts.push(p);
    }
    rec.checkpoint = Some(dir);
    let last = outcome.curves.last();
    rec.metrics = json!({
        "learning_rate": outcome.learning_rate,
        "train_acc": last.map(|c| c.train_acc),
        "val_acc": last.map(|c| c.val_acc),
    });
    println!(
        "probe lr {:.3e}: train acc {:.4}, val acc {:.4}",
        outcome.learning_rate,
        last.map_or(0.0, |c| c.train_acc),
        last.map_or(0.0, |c| c.val_acc)
    );
    Ok(())
}

fn cmd_eval(a: &EvalArgs, rec: &mut RunRecord) -> Result<()> {
    let split: Split = a.split.parse()?;
    let enc_ckpt = Checkpoint::load(&a.ckpt)?;
    let probe_dir = if a.probe.join(CLASSIFIER_DIR).is_dir() { a.probe.join(CLASSIFIER_DIR) } else { a.probe.clone() };
    let probe = Checkpoint::load(&probe_dir)?;
    let encoder = checkpoint_encoder(&enc_ckpt)?;
    let mut params = probe.params.clone();
    for (name, p) in strip_all_heads_and_freeze(&enc_ckpt.params).iter() {
        if params.get(name).is_none() {
            params.insert(name, p.shape.clone(), p.values.clone(), p.role)?;
        }
    }
    let manifest = DatasetManifest::read(&manifest_path(&a.data))?;
    let records: Vec<_> = manifest.records_in(split).cloned().collect();
    if records.is_empty() {
        return Err(Error::InsufficientData(format!("manifest has no {} records", a.split)));
    }
    let loaded = manifest.load(&records)?;
    let (images, truth): (Vec<Image>, Vec<usize>) = loaded.into_iter().unzip();
    let predicted = predict(&encoder, &params, &images)?;
    let cm = ConfusionMatrix::from_indices(manifest.class_names.clone(), &truth, &predicted)?;
    let report = classification_report(&cm)?;
    rec.config = json!({ "ckpt": a.ckpt, "probe": a.probe, "split": a.split });
    rec.metrics = json!({ "accuracy": report.accuracy, "macro": report.macro_avg });
    let text = report.render();
    print!("{text}");
    if let Some(out) = &a.report_out {
        mkdir(&parent_dir(out))?;
        write(out, &text)?;
        let js = out.with_extension("json");
        write(&js, &format!("{}\n", report.to_json()))?;
        rec.artifacts = vec![out.clone(), js];
    }
    Ok(())
}

fn cmd_lr_find(a: &LrFindArgs, rec: &mut RunRecord) -> Result<()> {
    let mut l = labelled(&a.labels, rec)?;
    l.probe.lr_range = (a.min_lr, a.max_lr);
    l.probe.lr_steps = a.steps;
    l.probe.learning_rate = LearningRate::AUTO;
    rec.config = json!({ "probe": l.probe });
    let sweep = probe_lr_sweep(&l.params, &l.encoder, &l.data, &l.probe)?;
    if let Some(out) = &a.out {
        mkdir(&parent_dir(out))?;
        write(out, &sweep.csv())?;
        rec.artifacts = vec![out.clone()];
    }
    rec.metrics = json!({ "suggested_lr": sweep.suggestion, "diverged_at": sweep.diverged_at });
    println!("suggested lr: {}", sweep.suggestion);
    Ok(())
}

fn cmd_hist_compare(a: &HistArgs) -> Result<()> {
    let ha = color_histogram(&Image::load(&a.image_a)?);
    let hb = color_histogram(&Image::load(&a.image_b)?);
    println!("{:.6}", histogram_rms_difference(&ha, &hb)?);
    Ok(())
}
