//! Builds a manifest from a directory of images or a synthetic corpus.
//!
//! Images are labeled on a bounded rayon pool. Files that fail to decode or
//! label are skipped and reported; the manifest itself is sorted by id, so
//! the result does not depend on the worker count.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use lacon_core::curation::{Manifest, SampleRecord};
use lacon_core::signals::{
    label_sample, CornerTagWatermarkScorer, FixedScorer, HeuristicAestheticScorer, RgbImage,
    Scorer, TableScorer,
};
use lacon_core::QualityVector;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::corpus;
use crate::error::{Error, IoContext, Result};
use crate::imageio;

/// Long side images are resampled to before clarity and entropy. The toy
/// corpus is 16x16, so the default keeps it at native resolution.
pub const DEFAULT_LABEL_SIDE: usize = 16;

#[derive(Debug, Clone, PartialEq)]
pub enum Source {
    Directory(PathBuf),
    Synthetic { n: usize, seed: u64 },
}

/// Where aesthetic scores come from.
#[derive(Debug, Clone, PartialEq, Default)]
pub enum AesChoice {
    /// The corpus score table when there is one, else the heuristic.
    #[default]
    Auto,
    Heuristic,
    Fixed(f64),
}

impl std::str::FromStr for AesChoice {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "auto" => Ok(Self::Auto),
            "heuristic" => Ok(Self::Heuristic),
            other => other
                .strip_prefix("fixed:")
                .and_then(|v| v.parse().ok())
                .map(Self::Fixed)
                .ok_or_else(|| {
                    Error::Config(format!(
                        "unknown aesthetic scorer `{other}` (expected auto, heuristic or fixed:<value>)"
                    ))
                }),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabelOptions {
    pub target_long_side: usize,
    pub aes: AesChoice,
    /// Worker threads; `0` lets rayon pick.
    pub workers: usize,
}

impl Default for LabelOptions {
    fn default() -> Self {
        Self {
            target_long_side: DEFAULT_LABEL_SIDE,
            aes: AesChoice::Auto,
            workers: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skipped {
    pub image_ref: String,
    pub reason: String,
}

#[derive(Debug, Clone)]
pub struct LabelReport {
    pub manifest: Manifest,
    pub skipped: Vec<Skipped>,
}

struct Job {
    id: String,
    image_ref: String,
    class_label: u32,
    load: Box<dyn Fn() -> Result<RgbImage> + Send + Sync>,
}

#[derive(Serialize)]
struct Provenance<'a> {
    format: u32,
    source: String,
    aes: &'a str,
    wat: &'a str,
    target_long_side: usize,
}

pub fn build_manifest(source: &Source, options: &LabelOptions) -> Result<LabelReport> {
    let (jobs, mut skipped, table) = match source {
        Source::Directory(dir) => directory_jobs(dir)?,
        Source::Synthetic { n, seed } => synthetic_jobs(*n, *seed)?,
    };
    let aes: Box<dyn Scorer> = match (&options.aes, table) {
        (AesChoice::Auto, Some(t)) => Box::new(t),
        (AesChoice::Auto | AesChoice::Heuristic, _) => Box::new(HeuristicAestheticScorer),
        (AesChoice::Fixed(v), _) => Box::new(FixedScorer::new(format!("fixed:{v}"), *v)),
    };
    let wat = CornerTagWatermarkScorer;
    let serial = Mutex::new(());
    let must_serialize = aes.is_serial() || wat.is_serial();

    let label_one = |job: &Job| -> Result<QualityVector> {
        let image = (job.load)()?;
        let _guard = must_serialize.then(|| serial.lock().unwrap_or_else(|e| e.into_inner()));
        Ok(label_sample(
            &job.id,
            &image,
            aes.as_ref(),
            &wat,
            options.target_long_side,
        )?)
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(options.workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let results: Vec<Result<QualityVector>> = pool.install(|| jobs.par_iter().map(label_one).collect());

    let mut records = Vec::with_capacity(jobs.len());
    for (job, result) in jobs.into_iter().zip(results) {
        match result {
            Ok(quality) => records.push(SampleRecord {
                id: job.id,
                image_ref: job.image_ref,
                class_label: job.class_label,
                quality,
            }),
            Err(e) => {
                log::warn!("skipping {}: {e}", job.image_ref);
                skipped.push(Skipped {
                    image_ref: job.image_ref,
                    reason: e.to_string(),
                });
            }
        }
    }
    let provenance = Provenance {
        format: crate::manifest_io::MANIFEST_FORMAT,
        source: match source {
            Source::Directory(_) => "directory".into(),
            Source::Synthetic { seed, .. } => format!("synthetic:{seed}"),
        },
        aes: aes.name(),
        wat: wat.name(),
        target_long_side: options.target_long_side,
    };
    let digest = Sha256::digest(serde_json::to_vec(&provenance).expect("provenance serializes"));
    Ok(LabelReport {
        manifest: Manifest::new(records, hex::encode(digest))?,
        skipped,
    })
}

type Jobs = (Vec<Job>, Vec<Skipped>, Option<TableScorer>);

fn directory_jobs(dir: &Path) -> Result<Jobs> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).at(dir)? {
        let path = entry.at(dir)?.path();
        let is_png = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if is_png && path.is_file() {
            files.push(path);
        }
    }
    files.sort();

    let index_path = dir.join(corpus::INDEX_FILE);
    let index = index_path
        .exists()
        .then(|| corpus::read_index(&index_path))
        .transpose()?;
    let table_path = dir.join(corpus::AES_TABLE_FILE);
    let table = table_path
        .exists()
        .then(|| corpus::read_score_table(&table_path))
        .transpose()?
        .map(|scores| TableScorer::new("aes-table", scores));

    let mut jobs = Vec::with_capacity(files.len());
    let mut skipped = Vec::new();
    let mut seen = BTreeMap::new();
    for path in files {
        let image_ref = path.to_string_lossy().into_owned();
        let file_name = path.file_name().unwrap_or_default().to_string_lossy().into_owned();
        let id = path.file_stem().unwrap_or_default().to_string_lossy().into_owned();
        if let Some(previous) = seen.insert(id.clone(), image_ref.clone()) {
            return Err(lacon_core::Error::InvalidConfig(format!(
                "files `{previous}` and `{image_ref}` map to the same id `{id}`"
            ))
            .into());
        }
        let class_label = match &index {
            None => 0,
            Some(index) => match index.get(&file_name) {
                Some(&c) => c,
                None => {
                    log::warn!("skipping {image_ref}: not listed in {}", corpus::INDEX_FILE);
                    skipped.push(Skipped {
                        image_ref,
                        reason: format!("not listed in {}", corpus::INDEX_FILE),
                    });
                    continue;
                }
            },
        };
        jobs.push(Job {
            id,
            image_ref,
            class_label,
            load: Box::new(move || imageio::load_rgb(&path)),
        });
    }
    Ok((jobs, skipped, table))
}

fn synthetic_jobs(n: usize, seed: u64) -> Result<Jobs> {
    if n == 0 {
        return Err(lacon_core::Error::InvalidConfig("n must be ≥ 1".into()).into());
    }
    let mut scores = BTreeMap::new();
    let jobs = (0..n as u64)
        .map(|i| {
            let params = lacon_core::flowmodel::synthetic_params(seed, i);
            let id = corpus::synthetic_id(seed, i);
            scores.insert(id.clone(), params.aesthetic());
            Job {
                id,
                image_ref: corpus::synthetic_ref(seed, i),
                class_label: params.class as u32,
                load: Box::new(move || Ok(corpus::synthetic_sample(seed, i)?.1)),
            }
        })
        .collect();
    Ok((jobs, Vec::new(), Some(TableScorer::new("aes-table", scores))))
}
