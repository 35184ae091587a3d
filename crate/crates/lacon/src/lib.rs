//! IO, file formats and the command-line tool around [`lacon_core`].
//!
//! - [`corpus`]: synthetic corpora on disk.
//! - [`labeling`]: parallel labeling into a [`Manifest`](lacon_core::curation::Manifest).
//! - [`manifest_io`]: JSONL manifests with a provenance sidecar.
//! - [`dataset`]: manifest records to training examples.
//! - [`checkpoint`]: binary checkpoints with a JSON header.
//! - [`config`]: TOML run configuration.
//! - [`eval`], [`tables`]: condition sweeps and CSV outputs.

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod corpus;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod imageio;
pub mod labeling;
pub mod manifest_io;
pub mod tables;

pub use error::{Error, Result};
pub use lacon_core as core;
