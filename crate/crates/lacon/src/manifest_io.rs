//! JSONL manifests: one record per line, plus a `<name>.meta.json` sidecar
//! carrying the labeling provenance digest.

use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use lacon_core::curation::{Manifest, SampleRecord};
use lacon_core::QualityVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MANIFEST_FORMAT: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Line {
    id: String,
    image_ref: String,
    class_label: u32,
    s_aes: f64,
    s_wat: f64,
    s_cla: f64,
    s_ent: f64,
    s_luma: f64,
}

impl From<&SampleRecord> for Line {
    fn from(r: &SampleRecord) -> Self {
        let q = &r.quality;
        Self {
            id: r.id.clone(),
            image_ref: r.image_ref.clone(),
            class_label: r.class_label,
            s_aes: q.aes,
            s_wat: q.wat,
            s_cla: q.cla,
            s_ent: q.ent,
            s_luma: q.luma,
        }
    }
}

impl From<Line> for SampleRecord {
    fn from(l: Line) -> Self {
        Self {
            id: l.id,
            image_ref: l.image_ref,
            class_label: l.class_label,
            quality: QualityVector::new(l.s_aes, l.s_wat, l.s_cla, l.s_ent, l.s_luma),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Meta {
    format: u32,
    provenance: String,
    records: usize,
}

pub fn meta_path(manifest: &Path) -> PathBuf {
    let mut name = manifest.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    manifest.with_file_name(name)
}

pub fn write_manifest(path: &Path, manifest: &Manifest) -> Result<()> {
    let file = std::fs::File::create(path).at(path)?;
    let mut w = BufWriter::new(file);
    for r in manifest.records() {
        let line = serde_json::to_string(&Line::from(r)).expect("manifest lines serialize");
        writeln!(w, "{line}").at(path)?;
    }
    w.flush().at(path)?;
    let meta = Meta {
        format: MANIFEST_FORMAT,
        provenance: manifest.provenance().to_string(),
        records: manifest.len(),
    };
    let meta_file = meta_path(path);
    let text = serde_json::to_string_pretty(&meta).expect("meta serializes");
    std::fs::write(&meta_file, text + "\n").at(meta_file)
}

/// Reads a manifest. Blank lines are ignored; every record is range-checked.
/// A missing sidecar leaves the provenance empty.
pub fn read_manifest(path: &Path) -> Result<Manifest> {
    let file = std::fs::File::open(path).at(path)?;
    let mut records = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.at(path)?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message,
        };
        let parsed: Line = serde_json::from_str(&line).map_err(|e| parse_err(e.to_string()))?;
        let record = SampleRecord::from(parsed);
        record
            .quality
            .validate()
            .map_err(|e| parse_err(e.to_string()))?;
        records.push(record);
    }
    let meta_file = meta_path(path);
    let provenance = match std::fs::read_to_string(&meta_file) {
        Ok(text) => {
            let meta: Meta = serde_json::from_str(&text).map_err(|e| Error::Format {
                path: meta_file.clone(),
                message: e.to_string(),
            })?;
            if meta.records != records.len() {
                return Err(Error::Format {
                    path: meta_file,
                    message: format!(
                        "sidecar lists {} records, manifest has {}",
                        meta.records,
                        records.len()
                    ),
                });
            }
            meta.provenance
        }
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e).at(meta_file),
    };
    Ok(Manifest::new(records, provenance)?)
}
