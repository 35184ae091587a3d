//! Quality-conditioned generative modeling on uncurated data.
//!
//! Instead of discarding low-quality training samples, every sample is labeled
//! with a five-dimensional quality vector (aesthetic, watermark, clarity,
//! entropy, luminance) and the generator is trained conditioned on it. At
//! sampling time the condition becomes a control knob.
//!
//! This crate is the pure numerical core: it is `no_std` (with `alloc`) and
//! performs no IO. File formats, the worker pool and the command-line tool live
//! in the `lacon` companion crate.
//!
//! Modules:
//! - [`signals`]: analytic quality signals and the pluggable scorer interface.
//! - [`encoder`]: Gaussian-weighted cluster-centroid (GCC) condition embeddings
//!   and the ablation strategies.
//! - [`curation`]: corpus records, threshold filtering and score histograms.
//! - [`flowmodel`]: the toy conditional velocity network, flow-matching loss
//!   and training loop.
//! - [`sampler`]: Euler integration with plain CFG and multi-condition guidance.

#![cfg_attr(not(any(feature = "std", test)), no_std)]

extern crate alloc;

pub mod curation;
pub mod encoder;
mod error;
pub mod flowmodel;
pub mod quality;
pub mod sampler;
pub mod signals;
pub mod tensor;

pub use error::{Error, Result};
pub use quality::{Attribute, QualityVector};
