//! CSV outputs: loss curves, score histograms and evaluation summaries.

use std::path::Path;

use lacon_core::curation::AttributeHistogram;
use serde::Serialize;

use crate::error::{Error, IoContext, Result};

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl IntoIterator<Item = T>) -> Result<()> {
    let csv_err = |e: csv::Error| Error::Format {
        path: path.to_path_buf(),
        message: e.to_string(),
    };
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_err)?;
    // Written by hand so that an empty table still has its header.
    w.write_record(header).map_err(csv_err)?;
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    w.flush().at(path)
}

pub fn write_loss_csv(path: &Path, losses: &[f64]) -> Result<()> {
    write_rows(path, &["step", "loss"], losses.iter().enumerate())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct HistogramRow {
    pub source: String,
    pub attribute: String,
    pub bin_lo: f64,
    pub bin_hi: f64,
    pub count: usize,
    pub proportion: f64,
}

pub fn histogram_rows(source: &str, hists: &[AttributeHistogram]) -> Vec<HistogramRow> {
    hists
        .iter()
        .flat_map(|h| {
            (0..h.counts.len()).map(move |bin| {
                let (bin_lo, bin_hi) = h.bin_edges(bin);
                HistogramRow {
                    source: source.to_string(),
                    attribute: h.attribute.to_string(),
                    bin_lo,
                    bin_hi,
                    count: h.counts[bin],
                    proportion: h.proportions[bin],
                }
            })
        })
        .collect()
}

pub fn write_histogram_csv(path: &Path, rows: &[HistogramRow]) -> Result<()> {
    write_rows(
        path,
        &["source", "attribute", "bin_lo", "bin_hi", "count", "proportion"],
        rows,
    )
}

/// Mean measured value of one attribute under one guidance setting.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EvalRow {
    pub mode: String,
    pub omega_c: f64,
    /// Attribute whose condition was moved.
    pub swept: String,
    pub target: f64,
    /// Attribute that was measured.
    pub attribute: String,
    pub mean_measured: f64,
    pub samples: usize,
}

pub fn write_eval_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_rows(
        path,
        &["mode", "omega_c", "swept", "target", "attribute", "mean_measured", "samples"],
        rows,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_loss_table_has_a_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("loss.csv");
        write_loss_csv(&path, &[]).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "step,loss\n");
        write_loss_csv(&path, &[0.5, 0.25]).unwrap();
        assert_eq!(
            std::fs::read_to_string(&path).unwrap(),
            "step,loss\n0,0.5\n1,0.25\n"
        );
    }
}
