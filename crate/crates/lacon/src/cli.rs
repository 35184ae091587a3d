//! Command-line front end: `synth`, `label`, `filter`, `train`, `sample` and
//! `eval`.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use lacon_core::curation::{apply_filter, score_histograms, FilterPreset, FilterThresholds};
use lacon_core::encoder::StrategyKind;
use lacon_core::flowmodel::{train, TrainOutcome};
use lacon_core::sampler::{measure_outputs, row_to_image, sample, GuidanceMode, SamplerConfig};
use lacon_core::signals::{CornerTagWatermarkScorer, HeuristicAestheticScorer};
use lacon_core::{Attribute, QualityVector};
use serde::Serialize;

use crate::checkpoint::Checkpoint;
use crate::config::RunConfig;
use crate::eval::{run_sweep, Sweep};
use crate::labeling::{build_manifest, AesChoice, LabelOptions, Source};
use crate::{corpus, dataset, imageio, manifest_io, tables};

#[derive(Debug, Parser)]
#[command(name = "lacon", version, about = "Quality-conditioned flow matching on uncurated data")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic PNG corpus with class index and aesthetic table.
    Synth(SynthArgs),
    /// Label a directory of images (or a synthetic corpus) into a manifest.
    Label(LabelArgs),
    /// Apply quality thresholds to a manifest.
    Filter(FilterArgs),
    /// Train a velocity model on a manifest.
    Train(TrainArgs),
    /// Generate images from a checkpoint.
    Sample(SampleArgs),
    /// Sweep conditions and compare targets with measured outputs.
    Eval(EvalArgs),
}

#[derive(Debug, Args)]
pub struct Workers {
    /// Worker threads (default: one per logical core).
    #[arg(long, env = "LACON_WORKERS")]
    pub workers: Option<usize>,
}

impl Workers {
    fn count(&self) -> usize {
        self.workers.unwrap_or(0)
    }
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct LabelArgs {
    /// Directory of PNG files.
    #[arg(required_unless_present = "synthetic", conflicts_with = "synthetic")]
    pub input: Option<PathBuf>,
    /// Label `N` generated images instead of reading a directory.
    #[arg(long, value_name = "N", requires = "seed")]
    pub synthetic: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output manifest (JSONL).
    #[arg(long)]
    pub out: PathBuf,
    /// auto, heuristic or fixed:<value>.
    #[arg(long, default_value = "auto")]
    pub aes: String,
    #[arg(long)]
    pub target_long_side: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

#[derive(Debug, Args)]
pub struct FilterArgs {
    pub manifest: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// ratio5, ratio30, ratio50, ratio65 or ratio80.
    #[arg(long, conflicts_with_all = ["aes_min", "wat_max", "cla_min", "ent_min", "luma_min", "luma_max"])]
    pub preset: Option<String>,
    #[arg(long)]
    pub aes_min: Option<f64>,
    #[arg(long)]
    pub wat_max: Option<f64>,
    #[arg(long)]
    pub cla_min: Option<f64>,
    #[arg(long)]
    pub ent_min: Option<f64>,
    #[arg(long)]
    pub luma_min: Option<f64>,
    #[arg(long)]
    pub luma_max: Option<f64>,
    /// Also write score histograms before and after filtering.
    #[arg(long)]
    pub histograms: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub bins: usize,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    pub manifest: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub strategy: Option<StrategyKind>,
    /// Loss curve CSV (default: next to the checkpoint).
    #[arg(long)]
    pub loss_csv: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[command(flatten)]
    pub workers: Workers,
}

/// `attr=value`
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttrValue(pub Attribute, pub f64);

impl std::str::FromStr for AttrValue {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let (a, v) = s
            .split_once('=')
            .ok_or_else(|| format!("expected attr=value, got `{s}`"))?;
        let attr = a.trim().parse::<Attribute>().map_err(|e| e.to_string())?;
        let value = v.trim().parse::<f64>().map_err(|e| e.to_string())?;
        Ok(Self(attr, value))
    }
}

#[derive(Debug, Args)]
pub struct GuidanceArgs {
    /// cfg, lacon-s or lacon-a.
    #[arg(long, default_value = "lacon-s")]
    pub mode: GuidanceMode,
    #[arg(long)]
    pub class: Option<usize>,
    #[arg(long)]
    pub count: Option<usize>,
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub config: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    pub checkpoint: PathBuf,
    /// Output directory for PNGs and `samples.jsonl`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub omega_c: Option<f64>,
    /// Condition target, e.g. `luma=0.8` (repeatable).
    #[arg(long = "target", value_name = "ATTR=VALUE")]
    pub targets: Vec<AttrValue>,
    /// LACON-A attribute weight, e.g. `luma=1.5` (repeatable).
    #[arg(long = "omega", value_name = "ATTR=WEIGHT")]
    pub omegas: Vec<AttrValue>,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    pub checkpoint: PathBuf,
    /// Output directory for `eval.csv` and `histograms.csv`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// Targets for one attribute, e.g. `luma=0.3,0.5,0.8` (repeatable).
    #[arg(long = "sweep", required = true)]
    pub sweeps: Vec<Sweep>,
    /// Class guidance weights to evaluate (repeatable; default from config).
    #[arg(long = "omega-c")]
    pub omega_cs: Vec<f64>,
    /// Weight of the swept attribute under LACON-A.
    #[arg(long, default_value_t = 1.0)]
    pub omega_k: f64,
    /// Training manifest whose score histograms go into `histograms.csv`.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub guidance: GuidanceArgs,
}

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth(a) => cmd_synth(&a),
        Command::Label(a) => cmd_label(&a),
        Command::Filter(a) => cmd_filter(&a),
        Command::Train(a) => cmd_train(&a),
        Command::Sample(a) => cmd_sample(&a),
        Command::Eval(a) => cmd_eval(&a),
    }
}

fn cmd_synth(a: &SynthArgs) -> anyhow::Result<()> {
    corpus::write_synthetic_corpus(a.n, a.seed, &a.out)
        .with_context(|| format!("writing synthetic corpus to {}", a.out.display()))?;
    log::info!("wrote {} images to {}", a.n, a.out.display());
    Ok(())
}

fn cmd_label(a: &LabelArgs) -> anyhow::Result<()> {
    let config = RunConfig::load_or_default(a.config.as_deref())?;
    let source = match (&a.input, a.synthetic) {
        (Some(dir), None) => {
            if !dir.is_dir() {
                bail!("input directory {} does not exist", dir.display());
            }
            Source::Directory(dir.clone())
        }
        (None, Some(n)) => Source::Synthetic {
            n,
            seed: a.seed.context("--seed is required with --synthetic")?,
        },
        _ => bail!("give either an input directory or --synthetic"),
    };
    let options = LabelOptions {
        target_long_side: a
            .target_long_side
            .unwrap_or(config.labeling.target_long_side),
        aes: a.aes.parse::<AesChoice>()?,
        workers: a.workers.count(),
    };
    let report = build_manifest(&source, &options)?;
    manifest_io::write_manifest(&a.out, &report.manifest)?;
    log::info!(
        "labeled {} images, skipped {}; provenance {}",
        report.manifest.len(),
        report.skipped.len(),
        report.manifest.provenance()
    );
    Ok(())
}

fn cmd_filter(a: &FilterArgs) -> anyhow::Result<()> {
    let manifest = manifest_io::read_manifest(&a.manifest)?;
    let thresholds = match &a.preset {
        Some(name) => name.parse::<FilterPreset>()?.thresholds(),
        None => {
            let p = FilterThresholds::permissive();
            FilterThresholds::new(
                a.aes_min.unwrap_or(p.aes_min),
                a.wat_max.unwrap_or(p.wat_max),
                a.cla_min.unwrap_or(p.cla_min),
                a.ent_min.unwrap_or(p.ent_min),
                a.luma_min.unwrap_or(p.luma_min),
                a.luma_max.unwrap_or(p.luma_max),
            )?
        }
    };
    log::info!(
        "thresholds aes_min={} wat_max={} cla_min={} ent_min={} luma_min={} luma_max={}",
        thresholds.aes_min,
        thresholds.wat_max,
        thresholds.cla_min,
        thresholds.ent_min,
        thresholds.luma_min,
        thresholds.luma_max
    );
    let kept = apply_filter(&manifest, &thresholds);
    manifest_io::write_manifest(&a.out, &kept)?;
    if let Some(path) = &a.histograms {
        let mut rows = tables::histogram_rows("input", &score_histograms(&manifest, a.bins)?);
        rows.extend(tables::histogram_rows("kept", &score_histograms(&kept, a.bins)?));
        tables::write_histogram_csv(path, &rows)?;
    }
    let fraction = if manifest.is_empty() {
        1.0
    } else {
        kept.len() as f64 / manifest.len() as f64
    };
    println!("retained {}/{} ({fraction:.6})", kept.len(), manifest.len());
    Ok(())
}

fn cmd_train(a: &TrainArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(a.config.as_deref())?;
    config.train.seed = a.seed;
    if let Some(steps) = a.steps {
        config.train.steps = steps;
    }
    if let Some(kind) = a.strategy {
        config.strategy = kind;
    }
    config.validate()?;
    let digest = config.digest();
    log::info!("run config digest {digest}");

    let manifest = manifest_io::read_manifest(&a.manifest)?;
    let s_base = manifest
        .median_quality()
        .context("cannot train on an empty manifest")?;
    let (examples, side) = dataset::load_examples(&manifest, a.workers.count())?;
    let log_every = (config.train.steps / 20).max(1);
    let outcome: TrainOutcome = train(
        &examples,
        side,
        &config.train,
        config.strategy,
        config.anchor_set()?,
        &mut |step, loss| {
            if step % log_every == 0 {
                log::info!("step {step} loss {loss:.5}");
            }
        },
    )?;
    let steps = outcome.losses.len();
    let ckpt = Checkpoint::new(
        outcome.net,
        config.train.clone(),
        s_base,
        steps,
        digest,
        manifest.provenance().to_string(),
    );
    ckpt.save(&a.out)?;
    let loss_path = a
        .loss_csv
        .clone()
        .unwrap_or_else(|| a.out.with_extension("loss.csv"));
    tables::write_loss_csv(&loss_path, &outcome.losses)?;
    if steps > 0 {
        log::info!(
            "final loss {:.5} (zero predictor {:.5})",
            TrainOutcome::tail_mean(&outcome.losses, 100),
            TrainOutcome::tail_mean(&outcome.baseline_losses, 100)
        );
    }
    Ok(())
}

#[derive(Serialize)]
struct SampleLine<'a> {
    sample_id: String,
    seed: u64,
    mode: &'a str,
    class: usize,
    guidance: &'a lacon_core::sampler::GuidanceSpec,
    measured: QualityVector,
}

fn load_checkpoint(path: &Path) -> anyhow::Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn cmd_sample(a: &SampleArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(a.guidance.config.as_deref())?;
    apply_guidance_flags(&mut config, &a.guidance);
    if let Some(w) = a.omega_c {
        config.guidance.omega_c = w;
    }
    for &AttrValue(attr, v) in &a.targets {
        config.guidance.targets.insert(attr, v);
    }
    for &AttrValue(attr, w) in &a.omegas {
        config.guidance.omega.insert(attr, w);
    }
    config.validate()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let net = &ckpt.net;
    let class = check_class(config.sampler.class, net)?;
    let g = config.guidance_spec(ckpt.header.s_base);
    let sampler = SamplerConfig {
        steps: config.sampler.steps,
        seed: a.seed,
        count: config.sampler.count,
    };
    let images = sample(net, a.guidance.mode, class, &g, &sampler)?;
    let side = net.config().side;
    let measured = measure_outputs(
        &images,
        side,
        &HeuristicAestheticScorer,
        &CornerTagWatermarkScorer,
        config.labeling.target_long_side,
    )?;
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let sidecar_path = a.out.join("samples.jsonl");
    let mut sidecar = std::io::BufWriter::new(
        std::fs::File::create(&sidecar_path)
            .with_context(|| format!("creating {}", sidecar_path.display()))?,
    );
    for (i, (row, q)) in images.rows_iter().zip(&measured).enumerate() {
        let sample_id = format!("sample-{i:05}");
        imageio::save_png(&a.out.join(format!("{sample_id}.png")), &row_to_image(row, side)?)?;
        let line = SampleLine {
            sample_id,
            seed: a.seed,
            mode: a.guidance.mode.name(),
            class,
            guidance: &g,
            measured: *q,
        };
        writeln!(sidecar, "{}", serde_json::to_string(&line)?)?;
    }
    sidecar.flush()?;
    log::info!("wrote {} samples to {}", measured.len(), a.out.display());
    Ok(())
}

fn apply_guidance_flags(config: &mut RunConfig, g: &GuidanceArgs) {
    if let Some(class) = g.class {
        config.sampler.class = class;
    }
    if let Some(count) = g.count {
        config.sampler.count = count;
    }
    if let Some(steps) = g.steps {
        config.sampler.steps = steps;
    }
}

fn check_class(class: usize, net: &lacon_core::flowmodel::VelocityNet) -> anyhow::Result<usize> {
    let n = net.config().n_classes;
    if class >= n {
        bail!("class {class} out of range: the checkpoint has {n} classes");
    }
    Ok(class)
}

fn cmd_eval(a: &EvalArgs) -> anyhow::Result<()> {
    let mut config = RunConfig::load_or_default(a.guidance.config.as_deref())?;
    apply_guidance_flags(&mut config, &a.guidance);
    if a.guidance.count.is_none() {
        config.sampler.count = 256;
    }
    config.validate()?;
    let ckpt = load_checkpoint(&a.checkpoint)?;
    let class = check_class(config.sampler.class, &ckpt.net)?;
    let base = config.guidance_spec(ckpt.header.s_base);
    let omega_cs = if a.omega_cs.is_empty() {
        vec![config.guidance.omega_c]
    } else {
        a.omega_cs.clone()
    };
    let sampler = SamplerConfig {
        steps: config.sampler.steps,
        seed: a.seed,
        count: config.sampler.count,
    };
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    let mut rows = Vec::new();
    let mut hist_rows = Vec::new();
    if let Some(path) = &a.manifest {
        let m = manifest_io::read_manifest(path)?;
        hist_rows.extend(tables::histogram_rows("manifest", &score_histograms(&m, 20)?));
    }
    for sweep in &a.sweeps {
        let result = run_sweep(
            &ckpt.net,
            &base,
            a.guidance.mode,
            sweep,
            &omega_cs,
            a.omega_k,
            class,
            &sampler,
            config.labeling.target_long_side,
        )?;
        for (omega_c, target, q) in result.measured {
            let records = q
                .into_iter()
                .enumerate()
                .map(|(i, quality)| lacon_core::curation::SampleRecord {
                    id: format!("{i:05}"),
                    image_ref: String::new(),
                    class_label: class as u32,
                    quality,
                })
                .collect();
            let m = lacon_core::curation::Manifest::new(records, "")?;
            let source = format!("{}={target}@omega_c={omega_c}", sweep.attribute);
            hist_rows.extend(tables::histogram_rows(&source, &score_histograms(&m, 20)?));
        }
        rows.extend(result.rows);
    }
    tables::write_eval_csv(&a.out.join("eval.csv"), &rows)?;
    tables::write_histogram_csv(&a.out.join("histograms.csv"), &hist_rows)?;
    for r in rows.iter().filter(|r| r.attribute == r.swept) {
        println!(
            "{} omega_c={} {}={}: measured {:.4}",
            r.mode, r.omega_c, r.swept, r.target, r.mean_measured
        );
    }
    Ok(())
}
