//! On-disk synthetic corpora: `<id>.png` files, an `index.csv` with class
//! labels and an `aes_scores.json` table holding each pattern's aesthetic
//! level, which the labeler picks up in place of a learned predictor.

use std::collections::BTreeMap;
use std::path::Path;

use lacon_core::flowmodel::{render, synthetic_params, PatternParams, SYNTH_SIDE};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};
use crate::imageio;

pub const INDEX_FILE: &str = "index.csv";
pub const AES_TABLE_FILE: &str = "aes_scores.json";
const SYNTH_PREFIX: &str = "synth:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IndexRow {
    pub file: String,
    pub class_label: u32,
}

pub fn synthetic_id(seed: u64, index: u64) -> String {
    format!("synth-{seed}-{index:06}")
}

/// `synth:<seed>:<index>`, resolvable without touching the disk.
pub fn synthetic_ref(seed: u64, index: u64) -> String {
    format!("{SYNTH_PREFIX}{seed}:{index}")
}

pub fn parse_synthetic_ref(image_ref: &str) -> Option<(u64, u64)> {
    let rest = image_ref.strip_prefix(SYNTH_PREFIX)?;
    let (seed, index) = rest.split_once(':')?;
    Some((seed.parse().ok()?, index.parse().ok()?))
}

pub fn synthetic_sample(seed: u64, index: u64) -> Result<(PatternParams, lacon_core::signals::RgbImage)> {
    let params = synthetic_params(seed, index);
    let image = render(&params, SYNTH_SIDE)?;
    Ok((params, image))
}

/// Writes `n` synthetic images into `out_dir`, creating it if needed.
/// Output bytes depend only on `(n, seed)`.
pub fn write_synthetic_corpus(n: usize, seed: u64, out_dir: &Path) -> Result<()> {
    if n == 0 {
        return Err(lacon_core::Error::InvalidConfig("n must be ≥ 1".into()).into());
    }
    std::fs::create_dir_all(out_dir).at(out_dir)?;
    let mut index = Vec::with_capacity(n);
    let mut aes = BTreeMap::new();
    for i in 0..n as u64 {
        let (params, image) = synthetic_sample(seed, i)?;
        let id = synthetic_id(seed, i);
        let file = format!("{id}.png");
        imageio::save_png(&out_dir.join(&file), &image)?;
        index.push(IndexRow {
            file,
            class_label: params.class as u32,
        });
        aes.insert(id, params.aesthetic());
    }
    write_index(&out_dir.join(INDEX_FILE), &index)?;
    let table = out_dir.join(AES_TABLE_FILE);
    let text = serde_json::to_string_pretty(&aes).expect("score table serializes");
    std::fs::write(&table, text + "\n").at(table)
}

pub fn write_index(path: &Path, rows: &[IndexRow]) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().at(path)
}

pub fn read_index(path: &Path) -> Result<BTreeMap<String, u32>> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut r = csv::Reader::from_path(path).map_err(csv_err)?;
    let mut out = BTreeMap::new();
    for row in r.deserialize::<IndexRow>() {
        let row = row.map_err(csv_err)?;
        if out.insert(row.file.clone(), row.class_label).is_some() {
            return Err(Error::Format {
                path: path.to_path_buf(),
                message: format!("file `{}` listed twice", row.file),
            });
        }
    }
    Ok(out)
}

pub fn read_score_table(path: &Path) -> Result<BTreeMap<String, f64>> {
    let text = std::fs::read_to_string(path).at(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synthetic_refs_parse_back() {
        assert_eq!(parse_synthetic_ref(&synthetic_ref(7, 4321)), Some((7, 4321)));
        assert_eq!(parse_synthetic_ref("synth:7"), None);
        assert_eq!(parse_synthetic_ref("img/synth:1:2.png"), None);
    }

    #[test]
    fn ids_sort_in_index_order() {
        let ids: Vec<String> = (0..20).map(|i| synthetic_id(3, i)).collect();
        let mut sorted = ids.clone();
        sorted.sort();
        assert_eq!(ids, sorted);
    }
}
