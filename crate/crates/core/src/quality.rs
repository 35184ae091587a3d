//! The five quality attributes and the per-sample quality vector.

use core::fmt;
use core::str::FromStr;

use crate::{Error, Result};

/// One of the five quality attributes, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum Attribute {
    Aes,
    Wat,
    Cla,
    Ent,
    Luma,
}

impl Attribute {
    /// Canonical order: aesthetic, watermark, clarity, entropy, luminance.
    pub const ALL: [Attribute; 5] = [
        Attribute::Aes,
        Attribute::Wat,
        Attribute::Cla,
        Attribute::Ent,
        Attribute::Luma,
    ];

    pub const COUNT: usize = 5;

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Attribute::Aes => "aes",
            Attribute::Wat => "wat",
            Attribute::Cla => "cla",
            Attribute::Ent => "ent",
            Attribute::Luma => "luma",
        }
    }

    /// Declared value range `(min, max)`. Clarity is unbounded above; its
    /// upper bound here is `f64::INFINITY`.
    pub fn value_range(self) -> (f64, f64) {
        match self {
            Attribute::Aes => (0.0, 10.0),
            Attribute::Wat => (0.0, 1.0),
            Attribute::Cla => (0.0, f64::INFINITY),
            Attribute::Ent => (0.0, 8.0),
            Attribute::Luma => (0.0, 1.0),
        }
    }
}

impl fmt::Display for Attribute {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Attribute {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Attribute::ALL
            .into_iter()
            .find(|a| a.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(alloc::format!(
                    "unknown attribute `{s}` (expected one of aes, wat, cla, ent, luma)"
                ))
            })
    }
}

/// Per-sample quality label `s = [aes, wat, cla, ent, luma]`.
///
/// `cla` is the Laplacian variance expressed in 8-bit intensity units
/// (intensity in `[0, 255]`), so values are directly comparable with the
/// anchor grid and filtering thresholds.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct QualityVector {
    pub aes: f64,
    pub wat: f64,
    pub cla: f64,
    pub ent: f64,
    pub luma: f64,
}

impl QualityVector {
    pub fn new(aes: f64, wat: f64, cla: f64, ent: f64, luma: f64) -> Self {
        Self {
            aes,
            wat,
            cla,
            ent,
            luma,
        }
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self::new(v[0], v[1], v[2], v[3], v[4])
    }

    pub fn to_array(&self) -> [f64; 5] {
        [self.aes, self.wat, self.cla, self.ent, self.luma]
    }

    pub fn get(&self, attr: Attribute) -> f64 {
        self.to_array()[attr.index()]
    }

    pub fn set(&mut self, attr: Attribute, value: f64) {
        match attr {
            Attribute::Aes => self.aes = value,
            Attribute::Wat => self.wat = value,
            Attribute::Cla => self.cla = value,
            Attribute::Ent => self.ent = value,
            Attribute::Luma => self.luma = value,
        }
    }

    /// Copy with one attribute replaced.
    pub fn with(mut self, attr: Attribute, value: f64) -> Self {
        self.set(attr, value);
        self
    }

    /// Checks every field against its declared range.
    pub fn validate(&self) -> Result<()> {
        for attr in Attribute::ALL {
            let v = self.get(attr);
            let (lo, hi) = attr.value_range();
            if !(v >= lo && v <= hi) {
                return Err(Error::InvalidConfig(alloc::format!(
                    "quality field s_{attr} = {v} outside [{lo}, {hi}]"
                )));
            }
        }
        Ok(())
    }
}
