//! Condition embeddings for the quality vector.
//!
//! Every attribute owns a fixed grid of scalar anchors `p_1 < ... < p_N`,
//! uniformly spaced over its value range. A score is soft-assigned to the
//! anchors with a Gaussian RBF whose width is half the anchor spacing, and the
//! normalized affinities weight a table of learnable centroid tokens
//! ([`gcc`]). The ablation strategies (linear interpolation, discrete binning,
//! Fourier features) share the same anchor specs and live in [`strategy`].

pub mod gcc;
pub mod strategy;

use alloc::format;
use alloc::vec::Vec;

use crate::{Attribute, Error, QualityVector, Result};

pub use gcc::{
    backprop_to_centroids, embed_attribute, embed_vector, CentroidTable, ConditionEmbedding,
};
pub use strategy::{embed_vector_strategy, InjectionStrategy, StrategyKind};

/// Anchor grid and kernel width for one attribute.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AttributeAnchorSpec {
    pub attribute: Attribute,
    pub anchors: Vec<f64>,
    pub sigma: f64,
    /// Lower end of the score range; scores are clamped up to it.
    pub range_min: f64,
    /// Upper end of the score range used when `clip_max` is absent.
    pub range_max: f64,
    pub clip_max: Option<f64>,
}

impl AttributeAnchorSpec {
    /// `n` anchors at the cell centers of `[range_min, range_max]`, with
    /// `sigma` equal to half the spacing.
    pub fn uniform(
        attribute: Attribute,
        n: usize,
        range_min: f64,
        range_max: f64,
        clip_max: Option<f64>,
    ) -> Result<Self> {
        if n < 2 {
            return Err(Error::InvalidConfig(format!(
                "attribute {attribute}: at least 2 anchors required, got {n}"
            )));
        }
        if !(range_min.is_finite() && range_max.is_finite() && range_min < range_max) {
            return Err(Error::InvalidConfig(format!(
                "attribute {attribute}: invalid range [{range_min}, {range_max}]"
            )));
        }
        let width = range_max - range_min;
        let nf = n as f64;
        let anchors = (0..n)
            .map(|i| range_min + (i as f64 + 0.5) * width / nf)
            .collect();
        let spec = Self {
            attribute,
            anchors,
            sigma: width / (2.0 * nf),
            range_min,
            range_max,
            clip_max,
        };
        spec.validate()?;
        Ok(spec)
    }

    /// Default configuration for one attribute.
    ///
    /// | attribute | N  | anchors              | clipping |
    /// |-----------|----|----------------------|----------|
    /// | aes       | 10 | 0.5, 1.5, ..., 9.5   | none     |
    /// | wat       | 10 | 0.05, 0.15, ..., 0.95| none     |
    /// | cla       | 10 | 150, 450, ..., 2850  | 3000     |
    /// | ent       | 8  | 0.5, 1.5, ..., 7.5   | none     |
    /// | luma      | 10 | 0.05, 0.15, ..., 0.95| none     |
    pub fn default_for(attribute: Attribute) -> Self {
        let spec = match attribute {
            Attribute::Aes => Self::uniform(attribute, 10, 0.0, 10.0, None),
            Attribute::Wat => Self::uniform(attribute, 10, 0.0, 1.0, None),
            Attribute::Cla => Self::uniform(attribute, 10, 0.0, 3000.0, Some(3000.0)),
            Attribute::Ent => Self::uniform(attribute, 8, 0.0, 8.0, None),
            Attribute::Luma => Self::uniform(attribute, 10, 0.0, 1.0, None),
        };
        spec.expect("default anchor specs are valid")
    }

    pub fn len(&self) -> usize {
        self.anchors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.anchors.is_empty()
    }

    /// Upper clamp bound: `clip_max` if set, else `range_max`.
    pub fn upper(&self) -> f64 {
        self.clip_max.unwrap_or(self.range_max)
    }

    pub fn spacing(&self) -> f64 {
        self.anchors[1] - self.anchors[0]
    }

    /// Clamps a score into `[range_min, upper()]`.
    pub fn clamp(&self, s: f64) -> f64 {
        s.clamp(self.range_min, self.upper())
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| {
            Err(Error::InvalidConfig(format!(
                "attribute {}: {msg}",
                self.attribute
            )))
        };
        if self.anchors.len() < 2 {
            return bad("at least 2 anchors required");
        }
        if self.anchors.iter().any(|p| !p.is_finite()) {
            return bad("anchors must be finite");
        }
        let spacing = self.spacing();
        if spacing <= 0.0 {
            return bad("anchors must be strictly increasing");
        }
        for pair in self.anchors.windows(2) {
            let gap = pair[1] - pair[0];
            if gap <= 0.0 {
                return bad("anchors must be strictly increasing");
            }
            if (gap - spacing).abs() > 1e-9 * spacing.max(1.0) {
                return bad("anchors must be uniformly spaced");
            }
        }
        if !(self.sigma > 0.0) || (self.sigma - spacing / 2.0).abs() > 1e-9 * spacing.max(1.0) {
            return bad("sigma must equal half the anchor spacing");
        }
        if !(self.range_min < self.upper()) {
            return bad("empty clamp range");
        }
        Ok(())
    }
}

/// Anchor specs for all five attributes, in canonical order.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct AnchorSet {
    specs: [AttributeAnchorSpec; 5],
}

impl AnchorSet {
    pub fn new(specs: [AttributeAnchorSpec; 5]) -> Result<Self> {
        for (attr, spec) in Attribute::ALL.iter().zip(&specs) {
            if spec.attribute != *attr {
                return Err(Error::InvalidConfig(format!(
                    "anchor spec for {} found in the {attr} slot",
                    spec.attribute
                )));
            }
            spec.validate()?;
        }
        Ok(Self { specs })
    }

    pub fn get(&self, attr: Attribute) -> &AttributeAnchorSpec {
        &self.specs[attr.index()]
    }

    pub fn set(&mut self, spec: AttributeAnchorSpec) -> Result<()> {
        spec.validate()?;
        let idx = spec.attribute.index();
        self.specs[idx] = spec;
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &AttributeAnchorSpec> {
        self.specs.iter()
    }

    /// Clamps every component of `s` into its attribute's range.
    pub fn clamp(&self, s: &QualityVector) -> QualityVector {
        let mut out = *s;
        for spec in &self.specs {
            out.set(spec.attribute, spec.clamp(s.get(spec.attribute)));
        }
        out
    }
}

impl Default for AnchorSet {
    fn default() -> Self {
        Self {
            specs: Attribute::ALL.map(AttributeAnchorSpec::default_for),
        }
    }
}

/// Normalized Gaussian RBF weights of score `s` over the anchors of `spec`.
///
/// The score is clamped into the spec's range first. Weights are strictly
/// positive and sum to one.
pub fn rbf_weights(s: f64, spec: &AttributeAnchorSpec) -> Vec<f64> {
    let mut w = alloc::vec![0.0; spec.len()];
    rbf_weights_into(s, spec, &mut w);
    w
}

/// Allocation-free [`rbf_weights`]; `out.len()` must equal the anchor count.
pub fn rbf_weights_into(s: f64, spec: &AttributeAnchorSpec, out: &mut [f64]) {
    debug_assert!(s.is_finite(), "score must be finite");
    debug_assert_eq!(out.len(), spec.len());
    let s = spec.clamp(s);
    let inv_two_var = 1.0 / (2.0 * spec.sigma * spec.sigma);
    let mut max_logit = f64::NEG_INFINITY;
    for (o, p) in out.iter_mut().zip(&spec.anchors) {
        let d = s - p;
        *o = -d * d * inv_two_var;
        max_logit = max_logit.max(*o);
    }
    let mut total = 0.0;
    for o in out.iter_mut() {
        *o = libm::exp(*o - max_logit);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}
