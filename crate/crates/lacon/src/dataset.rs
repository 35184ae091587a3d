//! Turns manifest records into training examples (`x = 2 v - 1` on the
//! grayscale image).

use std::path::Path;

use lacon_core::curation::Manifest;
use lacon_core::flowmodel::TrainingExample;
use lacon_core::signals::RgbImage;
use rayon::prelude::*;

use crate::corpus;
use crate::error::{Error, Result};
use crate::imageio;

pub fn load_image(image_ref: &str) -> Result<RgbImage> {
    match corpus::parse_synthetic_ref(image_ref) {
        Some((seed, index)) => Ok(corpus::synthetic_sample(seed, index)?.1),
        None => imageio::load_rgb(Path::new(image_ref)),
    }
}

pub fn to_model_space(image: &RgbImage) -> Result<Vec<f64>> {
    Ok(image.to_gray()?.data().iter().map(|v| 2.0 * v - 1.0).collect())
}

/// Loads every record. All images must be square and share one size, which is
/// returned alongside the examples.
pub fn load_examples(manifest: &Manifest, workers: usize) -> Result<(Vec<TrainingExample>, usize)> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| Error::Config(format!("cannot start worker pool: {e}")))?;
    let loaded: Vec<Result<(usize, TrainingExample)>> = pool.install(|| {
        manifest
            .records()
            .par_iter()
            .map(|r| {
                let image = load_image(&r.image_ref)?;
                if image.width() != image.height() {
                    return Err(Error::Format {
                        path: r.image_ref.clone().into(),
                        message: format!("image is {}x{}, expected square", image.width(), image.height()),
                    });
                }
                Ok((
                    image.width(),
                    TrainingExample {
                        image: to_model_space(&image)?,
                        class: r.class_label as usize,
                        quality: r.quality,
                    },
                ))
            })
            .collect()
    });
    let mut side = None;
    let mut examples = Vec::with_capacity(loaded.len());
    for (record, item) in manifest.records().iter().zip(loaded) {
        let (s, ex) = item?;
        match side {
            None => side = Some(s),
            Some(expected) if expected != s => {
                return Err(Error::Format {
                    path: record.image_ref.clone().into(),
                    message: format!("image side {s} differs from {expected} in the rest of the corpus"),
                })
            }
            _ => {}
        }
        examples.push(ex);
    }
    let side = side.ok_or(lacon_core::Error::EmptyBatch)?;
    Ok((examples, side))
}
