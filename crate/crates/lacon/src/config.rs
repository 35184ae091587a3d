//! Declarative run configuration (TOML). Every section is optional and
//! unknown keys are rejected; command-line flags are applied on top.

use std::collections::BTreeMap;
use std::path::Path;

use lacon_core::encoder::{AnchorSet, AttributeAnchorSpec, StrategyKind};
use lacon_core::flowmodel::TrainConfig;
use lacon_core::sampler::{GuidanceSpec, DEFAULT_TARGETS};
use lacon_core::{Attribute, QualityVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, IoContext, Result};
use crate::labeling::DEFAULT_LABEL_SIDE;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: StrategyKind,
    pub train: TrainConfig,
    pub sampler: SamplerSection,
    pub guidance: GuidanceSection,
    pub labeling: LabelingSection,
    /// Replacements for individual attributes of the default anchor grid.
    pub anchors: Vec<AttributeAnchorSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            strategy: StrategyKind::Gcc,
            train: TrainConfig::default(),
            sampler: SamplerSection::default(),
            guidance: GuidanceSection::default(),
            labeling: LabelingSection::default(),
            anchors: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SamplerSection {
    pub steps: usize,
    pub count: usize,
    pub class: usize,
}

impl Default for SamplerSection {
    fn default() -> Self {
        Self {
            steps: 50,
            count: 16,
            class: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GuidanceSection {
    pub omega_c: f64,
    /// Per-attribute weights for LACON-A; missing attributes weigh zero.
    pub omega: BTreeMap<Attribute, f64>,
    /// Target overrides on top of the defaults.
    pub targets: BTreeMap<Attribute, f64>,
    /// Overrides the `s_base` stored in the checkpoint.
    pub s_base: Option<QualityVector>,
}

impl Default for GuidanceSection {
    fn default() -> Self {
        Self {
            omega_c: 4.0,
            omega: BTreeMap::new(),
            targets: BTreeMap::new(),
            s_base: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LabelingSection {
    pub target_long_side: usize,
}

impl Default for LabelingSection {
    fn default() -> Self {
        Self {
            target_long_side: DEFAULT_LABEL_SIDE,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).at(path)?;
        Self::from_toml(&text).map_err(|e| match e {
            Error::Config(message) => Error::Format {
                path: path.to_path_buf(),
                message,
            },
            other => other,
        })
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let config: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        self.train.validate()?;
        self.anchor_set()?;
        if self.sampler.steps == 0 || self.sampler.count == 0 {
            return Err(Error::Config("sampler steps and count must be positive".into()));
        }
        if self.labeling.target_long_side == 0 {
            return Err(Error::Config("target_long_side must be positive".into()));
        }
        let weights = std::iter::once(&self.guidance.omega_c).chain(self.guidance.omega.values());
        if weights.into_iter().any(|w| !w.is_finite()) {
            return Err(Error::Config("guidance weights must be finite".into()));
        }
        self.targets().validate()?;
        if let Some(s) = &self.guidance.s_base {
            s.validate()?;
        }
        Ok(())
    }

    pub fn anchor_set(&self) -> Result<AnchorSet> {
        let mut set = AnchorSet::default();
        for spec in &self.anchors {
            set.set(spec.clone())?;
        }
        Ok(set)
    }

    pub fn targets(&self) -> QualityVector {
        let mut s = DEFAULT_TARGETS;
        for (&attr, &v) in &self.guidance.targets {
            s.set(attr, v);
        }
        s
    }

    /// Guidance for one run. LACON-S holds `s_base` with the configured
    /// target overrides applied.
    pub fn guidance_spec(&self, checkpoint_s_base: QualityVector) -> GuidanceSpec {
        let s_base = self.guidance.s_base.unwrap_or(checkpoint_s_base);
        let mut g = GuidanceSpec::new(self.guidance.omega_c, s_base);
        g.s_high = self.targets();
        for (&attr, &w) in &self.guidance.omega {
            g.omega[attr.index()] = w;
        }
        for (&attr, &v) in &self.guidance.targets {
            g.s_hold.set(attr, v);
        }
        g
    }

    /// SHA-256 over the canonical JSON form of the effective configuration.
    pub fn digest(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("run config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_is_the_default() {
        assert_eq!(RunConfig::from_toml("").unwrap(), RunConfig::default());
    }

    #[test]
    fn sections_parse_and_unknown_keys_fail() {
        let c = RunConfig::from_toml(
            r#"
strategy = "fourier-feature"
[train]
steps = 10
lr_schedule = "constant"
[guidance]
omega_c = 2.5
omega = { luma = 1.0 }
targets = { luma = 0.8 }
"#,
        )
        .unwrap();
        assert_eq!(c.strategy, StrategyKind::FourierFeature);
        assert_eq!(c.train.steps, 10);
        assert_eq!(c.train.batch_size, 128);
        let g = c.guidance_spec(QualityVector::new(5.0, 0.2, 900.0, 5.0, 0.5));
        assert_eq!(g.omega, [0.0, 0.0, 0.0, 0.0, 1.0]);
        assert_eq!(g.s_high.luma, 0.8);
        assert_eq!(g.s_hold.luma, 0.8);
        assert_eq!(g.s_hold.aes, 5.0);
        assert!(RunConfig::from_toml("[train]\nstep = 3\n").is_err());
        assert!(RunConfig::from_toml("colour = 1\n").is_err());
        assert!(RunConfig::from_toml("[guidance]\ntargets = { luma = 2.0 }\n").is_err());
    }

    #[test]
    fn anchor_override_replaces_one_attribute() {
        let c = RunConfig::from_toml(
            r#"
[[anchors]]
attribute = "ent"
anchors = [1.0, 3.0, 5.0, 7.0]
sigma = 1.0
range_min = 0.0
range_max = 8.0
"#,
        )
        .unwrap();
        let set = c.anchor_set().unwrap();
        assert_eq!(set.get(Attribute::Ent).anchors, vec![1.0, 3.0, 5.0, 7.0]);
        assert_eq!(set.get(Attribute::Aes), AnchorSet::default().get(Attribute::Aes));
    }

    #[test]
    fn digest_tracks_content() {
        let a = RunConfig::default();
        let mut b = a.clone();
        assert_eq!(a.digest(), b.digest());
        b.train.steps += 1;
        assert_ne!(a.digest(), b.digest());
        assert_eq!(a.digest().len(), 64);
    }
}
