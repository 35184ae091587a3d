//! Binary checkpoints.
//!
//! Layout: the 8-byte magic `LACONCKP`, a little-endian `u32` format version,
//! a little-endian `u64` header length, the JSON header, then every tensor as
//! raw little-endian `f64` in the order listed by the header.

use std::io::Write;
use std::path::Path;

use lacon_core::encoder::{AnchorSet, StrategyKind};
use lacon_core::flowmodel::{NetConfig, TrainConfig, VelocityNet};
use lacon_core::{Attribute, QualityVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, IoContext, Result};

pub const MAGIC: &[u8; 8] = b"LACONCKP";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Header {
    pub net: NetConfig,
    pub strategy: StrategyKind,
    pub anchors: AnchorSet,
    pub train: TrainConfig,
    /// Neutral condition used by the samplers, normally the manifest median.
    pub s_base: QualityVector,
    pub steps_completed: usize,
    /// Digest of the run configuration that produced the weights.
    pub config_digest: String,
    /// Provenance digest of the training manifest.
    pub manifest_provenance: String,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: Header,
    pub net: VelocityNet,
}

impl Checkpoint {
    /// Fills in the architecture fields and tensor index from `net`.
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        net: VelocityNet,
        train: TrainConfig,
        s_base: QualityVector,
        steps_completed: usize,
        config_digest: String,
        manifest_provenance: String,
    ) -> Self {
        let tensors = net
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorEntry {
                name,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect();
        let header = Header {
            net: net.config().clone(),
            strategy: net.encoder().kind(),
            anchors: net.encoder().specs().clone(),
            train,
            s_base,
            steps_completed,
            config_digest,
            manifest_provenance,
            tensors,
        };
        Self { header, net }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = serde_json::to_vec(&self.header).expect("checkpoint header serializes");
        let n_params = self.net.parameter_count();
        let mut out = Vec::with_capacity(20 + header.len() + 8 * n_params);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, m) in self.net.tensors() {
            for v in m.as_slice() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], origin: &Path) -> Result<Self> {
        let bad = |message: String| Error::Format {
            path: origin.to_path_buf(),
            message,
        };
        if bytes.len() < 20 || &bytes[..8] != MAGIC {
            return Err(bad("not a lacon checkpoint".into()));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != FORMAT_VERSION {
            return Err(bad(format!(
                "unsupported checkpoint version {version} (expected {FORMAT_VERSION})"
            )));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes"));
        let header_end = usize::try_from(header_len)
            .ok()
            .and_then(|n| n.checked_add(20))
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| bad("truncated header".into()))?;
        let header: Header = serde_json::from_slice(&bytes[20..header_end])
            .map_err(|e| bad(format!("bad header: {e}")))?;
        // Deserialization bypasses the anchor checks.
        let anchors = AnchorSet::new(std::array::from_fn(|i| {
            header.anchors.get(Attribute::ALL[i]).clone()
        }))?;
        let mut net = VelocityNet::zeros(header.net.clone(), header.strategy, anchors)?;

        let expected: Vec<TensorEntry> = net
            .tensors()
            .into_iter()
            .map(|(name, m)| TensorEntry {
                name,
                rows: m.rows(),
                cols: m.cols(),
            })
            .collect();
        if expected != header.tensors {
            return Err(bad("tensor index does not match the architecture".into()));
        }
        let data = &bytes[header_end..];
        if data.len() != 8 * net.parameter_count() {
            return Err(bad(format!(
                "expected {} bytes of weights, found {}",
                8 * net.parameter_count(),
                data.len()
            )));
        }
        let mut chunks = data.chunks_exact(8);
        for m in net.tensors_mut() {
            for (v, c) in m.as_mut_slice().iter_mut().zip(&mut chunks) {
                *v = f64::from_le_bytes(c.try_into().expect("8 bytes"));
            }
        }
        Ok(Self { header, net })
    }

    /// Writes through a temporary file in the target directory, so readers
    /// never see a partial checkpoint.
    pub fn save(&self, path: &Path) -> Result<()> {
        let dir = match path.parent() {
            Some(p) if !p.as_os_str().is_empty() => p,
            _ => Path::new("."),
        };
        let mut tmp = tempfile::NamedTempFile::new_in(dir).at(dir)?;
        tmp.write_all(&self.to_bytes()).at(tmp.path())?;
        tmp.as_file().sync_all().at(tmp.path())?;
        tmp.persist(path).map_err(|e| e.error).at(path)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).at(path)?;
        Self::from_bytes(&bytes, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use lacon_core::flowmodel::VelocityModel;
    use lacon_core::tensor::Matrix;
    use rand::SeedableRng;

    fn small_net(kind: StrategyKind) -> VelocityNet {
        let config = NetConfig {
            side: 3,
            hidden: vec![7, 5],
            cond_dim: 3,
            class_dim: 2,
            n_classes: 2,
            pixel_hidden: 4,
        };
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        VelocityNet::new(config, kind, AnchorSet::default(), &mut rng).unwrap()
    }

    #[test]
    fn every_strategy_round_trips_bit_for_bit() {
        for kind in StrategyKind::ALL {
            let ckpt = Checkpoint::new(
                small_net(kind),
                TrainConfig::default(),
                QualityVector::new(5.5, 0.1, 812.25, 4.0, 1.0 / 3.0),
                17,
                "digest".into(),
                "prov".into(),
            );
            let bytes = ckpt.to_bytes();
            let back = Checkpoint::from_bytes(&bytes, Path::new("mem")).unwrap();
            assert_eq!(back, ckpt, "{kind}");
            assert_eq!(back.to_bytes(), bytes);
            let x = Matrix::from_fn(4, 9, |r, c| (r as f64 - c as f64) / 9.0);
            let q = ckpt.header.s_base;
            let a = ckpt.net.velocity(&x, 0.37, Some(1), &q).unwrap();
            let b = back.net.velocity(&x, 0.37, Some(1), &q).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn corrupt_inputs_are_rejected() {
        let ckpt = Checkpoint::new(
            small_net(StrategyKind::Gcc),
            TrainConfig::default(),
            QualityVector::default(),
            0,
            String::new(),
            String::new(),
        );
        let bytes = ckpt.to_bytes();
        let origin = Path::new("mem");
        assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 8], origin).is_err());
        assert!(Checkpoint::from_bytes(b"LACONCKX", origin).is_err());
        let mut wrong_version = bytes.clone();
        wrong_version[8] = 9;
        assert!(Checkpoint::from_bytes(&wrong_version, origin).is_err());
    }

    #[test]
    fn save_then_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt");
        let ckpt = Checkpoint::new(
            small_net(StrategyKind::FourierFeature),
            TrainConfig::default(),
            QualityVector::default(),
            3,
            "d".into(),
            String::new(),
        );
        ckpt.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ckpt);
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }
}
