//! Corpus records, threshold filtering and score histograms.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use crate::{Attribute, Error, QualityVector, Result};

/// One labeled corpus entry.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SampleRecord {
    pub id: String,
    /// File path, or `synth:<seed>:<index>` for generator-backed samples.
    pub image_ref: String,
    pub class_label: u32,
    pub quality: QualityVector,
}

/// Labeled records sorted by id, plus a digest of the labeling configuration
/// that produced the scores.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    records: Vec<SampleRecord>,
    provenance: String,
}

impl Manifest {
    /// Sorts records by id and rejects duplicate ids.
    pub fn new(mut records: Vec<SampleRecord>, provenance: impl Into<String>) -> Result<Self> {
        records.sort_by(|a, b| a.id.cmp(&b.id));
        if let Some(pair) = records.windows(2).find(|p| p[0].id == p[1].id) {
            return Err(Error::DuplicateId(pair[0].id.clone()));
        }
        Ok(Self {
            records,
            provenance: provenance.into(),
        })
    }

    pub fn records(&self) -> &[SampleRecord] {
        &self.records
    }

    pub fn provenance(&self) -> &str {
        &self.provenance
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn ids(&self) -> BTreeSet<&str> {
        self.records.iter().map(|r| r.id.as_str()).collect()
    }

    /// Attribute-wise median of the scores; `None` for an empty manifest.
    pub fn median_quality(&self) -> Option<QualityVector> {
        if self.records.is_empty() {
            return None;
        }
        let mut out = QualityVector::default();
        for attr in Attribute::ALL {
            let mut values: Vec<f64> = self.records.iter().map(|r| r.quality.get(attr)).collect();
            values.sort_by(f64::total_cmp);
            let n = values.len();
            let median = if n % 2 == 1 {
                values[n / 2]
            } else {
                0.5 * (values[n / 2 - 1] + values[n / 2])
            };
            out.set(attr, median);
        }
        Some(out)
    }
}

/// Keep-if thresholds. A record passes when
/// `aes >= aes_min`, `wat <= wat_max`, `cla >= cla_min`, `ent >= ent_min`
/// and `luma_min <= luma <= luma_max`.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct FilterThresholds {
    pub aes_min: f64,
    pub wat_max: f64,
    pub cla_min: f64,
    pub ent_min: f64,
    pub luma_min: f64,
    pub luma_max: f64,
}

impl FilterThresholds {
    pub fn new(
        aes_min: f64,
        wat_max: f64,
        cla_min: f64,
        ent_min: f64,
        luma_min: f64,
        luma_max: f64,
    ) -> Result<Self> {
        let t = Self {
            aes_min,
            wat_max,
            cla_min,
            ent_min,
            luma_min,
            luma_max,
        };
        t.validate()?;
        Ok(t)
    }

    /// Thresholds that retain every valid record.
    pub fn permissive() -> Self {
        Self {
            aes_min: 0.0,
            wat_max: 1.0,
            cla_min: 0.0,
            ent_min: 0.0,
            luma_min: 0.0,
            luma_max: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.aes_min,
            self.wat_max,
            self.cla_min,
            self.ent_min,
            self.luma_min,
            self.luma_max,
        ];
        if all.iter().any(|v| v.is_nan()) {
            return Err(Error::InvalidConfig("filter threshold is NaN".into()));
        }
        if !(self.luma_min < self.luma_max) {
            return Err(Error::InvalidConfig(format!(
                "luma_min ({}) must be below luma_max ({})",
                self.luma_min, self.luma_max
            )));
        }
        Ok(())
    }

    pub fn keeps(&self, q: &QualityVector) -> bool {
        q.aes >= self.aes_min
            && q.wat <= self.wat_max
            && q.cla >= self.cla_min
            && q.ent >= self.ent_min
            && q.luma >= self.luma_min
            && q.luma <= self.luma_max
    }

    /// True when `self` is componentwise at least as strict as `other`.
    pub fn at_least_as_strict_as(&self, other: &FilterThresholds) -> bool {
        self.aes_min >= other.aes_min
            && self.wat_max <= other.wat_max
            && self.cla_min >= other.cla_min
            && self.ent_min >= other.ent_min
            && self.luma_min >= other.luma_min
            && self.luma_max <= other.luma_max
    }
}

/// Threshold rows for the approximate retention ratios of the filtering
/// baseline, strictest first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum FilterPreset {
    Ratio5,
    Ratio30,
    Ratio50,
    Ratio65,
    Ratio80,
}

impl FilterPreset {
    pub const ALL: [FilterPreset; 5] = [
        FilterPreset::Ratio5,
        FilterPreset::Ratio30,
        FilterPreset::Ratio50,
        FilterPreset::Ratio65,
        FilterPreset::Ratio80,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FilterPreset::Ratio5 => "ratio5",
            FilterPreset::Ratio30 => "ratio30",
            FilterPreset::Ratio50 => "ratio50",
            FilterPreset::Ratio65 => "ratio65",
            FilterPreset::Ratio80 => "ratio80",
        }
    }

    pub fn thresholds(self) -> FilterThresholds {
        let (aes_min, wat_max, cla_min, ent_min) = match self {
            FilterPreset::Ratio5 => (5.0, 0.3, 800.0, 6.0),
            FilterPreset::Ratio30 => (4.0, 0.5, 600.0, 4.0),
            FilterPreset::Ratio50 => (3.5, 0.6, 500.0, 3.0),
            FilterPreset::Ratio65 => (3.0, 0.7, 400.0, 2.0),
            FilterPreset::Ratio80 => (3.0, 0.8, 200.0, 2.0),
        };
        FilterThresholds {
            aes_min,
            wat_max,
            cla_min,
            ent_min,
            luma_min: 0.1,
            luma_max: 0.9,
        }
    }
}

impl fmt::Display for FilterPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FilterPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FilterPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown filter preset `{s}` (available: ratio5, ratio30, ratio50, ratio65, ratio80)"
                ))
            })
    }
}

/// Records passing `t`, in their original order.
pub fn apply_filter(manifest: &Manifest, t: &FilterThresholds) -> Manifest {
    Manifest {
        records: manifest
            .records
            .iter()
            .filter(|r| t.keeps(&r.quality))
            .cloned()
            .collect(),
        provenance: manifest.provenance.clone(),
    }
}

/// Score histogram of one attribute over `[lo, hi]` in equal-width bins.
#[derive(Debug, Clone, PartialEq)]
pub struct AttributeHistogram {
    pub attribute: Attribute,
    pub lo: f64,
    pub hi: f64,
    pub counts: Vec<usize>,
    pub proportions: Vec<f64>,
}

impl AttributeHistogram {
    pub fn bin_edges(&self, bin: usize) -> (f64, f64) {
        let width = (self.hi - self.lo) / self.counts.len() as f64;
        (
            self.lo + bin as f64 * width,
            if bin + 1 == self.counts.len() {
                self.hi
            } else {
                self.lo + (bin + 1) as f64 * width
            },
        )
    }
}

/// Histogram range used for an attribute. Clarity uses its clipping range
/// `[0, 3000]`; larger values land in the last bin.
pub fn histogram_range(attr: Attribute) -> (f64, f64) {
    match attr {
        Attribute::Cla => (0.0, 3000.0),
        other => other.value_range(),
    }
}

/// Per-attribute bin counts and proportions. Values outside the range are
/// clamped into the first or last bin. Proportions are zero for an empty
/// manifest.
pub fn score_histograms(manifest: &Manifest, bins: usize) -> Result<Vec<AttributeHistogram>> {
    if bins == 0 {
        return Err(Error::InvalidConfig(
            "histogram needs at least one bin".into(),
        ));
    }
    let n = manifest.len();
    Ok(Attribute::ALL
        .iter()
        .map(|&attr| {
            let (lo, hi) = histogram_range(attr);
            let mut counts = vec![0usize; bins];
            for r in &manifest.records {
                let v = r.quality.get(attr);
                let pos = (v - lo) / (hi - lo) * bins as f64;
                let bin = if pos.is_nan() || pos < 0.0 {
                    0
                } else {
                    (libm::floor(pos) as usize).min(bins - 1)
                };
                counts[bin] += 1;
            }
            let proportions = counts
                .iter()
                .map(|&c| if n == 0 { 0.0 } else { c as f64 / n as f64 })
                .collect();
            AttributeHistogram {
                attribute: attr,
                lo,
                hi,
                counts,
                proportions,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::string::ToString;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn record(id: &str, q: QualityVector) -> SampleRecord {
        SampleRecord {
            id: id.to_string(),
            image_ref: format!("{id}.png"),
            class_label: 0,
            quality: q,
        }
    }

    fn random_manifest(n: usize, seed: u64) -> Manifest {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let records = (0..n)
            .map(|i| {
                record(
                    &format!("s{i:06}"),
                    QualityVector::new(
                        rng.random_range(0.0..10.0),
                        rng.random_range(0.0..1.0),
                        rng.random_range(0.0..4000.0),
                        rng.random_range(0.0..8.0),
                        rng.random_range(0.0..1.0),
                    ),
                )
            })
            .collect();
        Manifest::new(records, "test").unwrap()
    }

    #[test]
    fn manifest_sorts_and_rejects_duplicates() {
        let q = QualityVector::default();
        let m = Manifest::new(vec![record("b", q), record("a", q)], "p").unwrap();
        assert_eq!(m.records()[0].id, "a");
        assert_eq!(
            Manifest::new(vec![record("a", q), record("a", q)], "p"),
            Err(Error::DuplicateId("a".into()))
        );
        assert!(Manifest::new(vec![], "p").unwrap().is_empty());
    }

    #[test]
    fn presets_carry_the_threshold_table() {
        let t = FilterPreset::Ratio65.thresholds();
        assert_eq!(
            t,
            FilterThresholds::new(3.0, 0.7, 400.0, 2.0, 0.1, 0.9).unwrap()
        );
        assert_eq!(
            "ratio5".parse::<FilterPreset>().unwrap(),
            FilterPreset::Ratio5
        );
        assert!("ratio70".parse::<FilterPreset>().is_err());
        for pair in FilterPreset::ALL.windows(2) {
            assert!(pair[0]
                .thresholds()
                .at_least_as_strict_as(&pair[1].thresholds()));
        }
    }

    #[test]
    fn thresholds_validate_luma_interval() {
        assert!(FilterThresholds::new(0.0, 1.0, 0.0, 0.0, 0.6, 0.6).is_err());
        assert!(FilterThresholds::new(f64::NAN, 1.0, 0.0, 0.0, 0.1, 0.6).is_err());
    }

    #[test]
    fn permissive_filter_is_identity() {
        let m = random_manifest(500, 1);
        assert_eq!(apply_filter(&m, &FilterThresholds::permissive()), m);
    }

    #[test]
    fn filtering_nests_like_brute_force() {
        let m = random_manifest(2000, 2);
        let strict = FilterPreset::Ratio5.thresholds();
        let loose = FilterPreset::Ratio65.thresholds();
        let direct = apply_filter(&m, &strict);
        let chained = apply_filter(&apply_filter(&m, &loose), &strict);
        assert_eq!(direct, chained);
        let brute: Vec<&str> = m
            .records()
            .iter()
            .filter(|r| {
                let q = r.quality;
                q.aes >= 5.0
                    && q.wat <= 0.3
                    && q.cla >= 800.0
                    && q.ent >= 6.0
                    && q.luma >= 0.1
                    && q.luma <= 0.9
            })
            .map(|r| r.id.as_str())
            .collect();
        let got: Vec<&str> = direct.records().iter().map(|r| r.id.as_str()).collect();
        assert_eq!(got, brute);
    }

    #[test]
    fn histogram_trivia() {
        let single = Manifest::new(
            vec![record("a", QualityVector::new(5.0, 0.5, 50.0, 4.0, 0.5))],
            "p",
        )
        .unwrap();
        for h in score_histograms(&single, 10).unwrap() {
            assert_eq!(h.proportions.iter().filter(|&&p| p == 1.0).count(), 1);
        }
        let pair = Manifest::new(
            vec![
                record("lo", QualityVector::new(0.0, 0.0, 0.0, 0.0, 0.0)),
                record("hi", QualityVector::new(10.0, 1.0, 1e6, 8.0, 1.0)),
            ],
            "p",
        )
        .unwrap();
        for h in score_histograms(&pair, 4).unwrap() {
            assert_eq!(h.proportions, vec![0.5, 0.0, 0.0, 0.5]);
        }
        for h in score_histograms(&Manifest::default(), 3).unwrap() {
            assert_eq!(h.counts, vec![0, 0, 0]);
            assert_eq!(h.proportions, vec![0.0, 0.0, 0.0]);
        }
        assert!(score_histograms(&single, 0).is_err());
    }

    #[test]
    fn histogram_counts_match_counting_oracle() {
        let m = random_manifest(3000, 3);
        let bins = 7;
        for h in score_histograms(&m, bins).unwrap() {
            let mut counts = vec![0usize; bins];
            for r in m.records() {
                let v = r.quality.get(h.attribute);
                let mut b = 0;
                for k in 0..bins {
                    let (lo, _) = h.bin_edges(k);
                    if v >= lo {
                        b = k;
                    }
                }
                counts[b] += 1;
            }
            assert_eq!(h.counts, counts, "{}", h.attribute);
            let total: f64 = h.proportions.iter().sum();
            assert!((total - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn median_quality_is_attribute_wise() {
        let m = Manifest::new(
            vec![
                record("a", QualityVector::new(1.0, 0.9, 10.0, 1.0, 0.1)),
                record("b", QualityVector::new(3.0, 0.1, 30.0, 3.0, 0.3)),
                record("c", QualityVector::new(2.0, 0.5, 20.0, 2.0, 0.2)),
            ],
            "p",
        )
        .unwrap();
        assert_eq!(
            m.median_quality().unwrap(),
            QualityVector::new(2.0, 0.5, 20.0, 2.0, 0.2)
        );
        assert_eq!(Manifest::default().median_quality(), None);
    }

    fn thresholds_strategy() -> impl Strategy<Value = FilterThresholds> {
        (
            0.0f64..10.0,
            0.0f64..1.0,
            0.0f64..3000.0,
            0.0f64..8.0,
            0.0f64..0.5,
            0.5f64..1.0,
        )
            .prop_map(|(a, w, c, e, lmin, lmax)| FilterThresholds {
                aes_min: a,
                wat_max: w,
                cla_min: c,
                ent_min: e,
                luma_min: lmin,
                luma_max: lmax,
            })
    }

    proptest! {
        #[test]
        fn filter_is_idempotent(t in thresholds_strategy(), seed in 0u64..1000) {
            let m = random_manifest(200, seed);
            let once = apply_filter(&m, &t);
            prop_assert_eq!(apply_filter(&once, &t), once);
        }

        #[test]
        fn stricter_thresholds_retain_subsets(t in thresholds_strategy(), tighten in prop::array::uniform6(0.0f64..1.0), seed in 0u64..1000) {
            let strict = FilterThresholds {
                aes_min: t.aes_min + tighten[0] * 2.0,
                wat_max: t.wat_max - tighten[1] * 0.2,
                cla_min: t.cla_min + tighten[2] * 500.0,
                ent_min: t.ent_min + tighten[3],
                luma_min: t.luma_min + tighten[4] * 0.1,
                luma_max: t.luma_max - tighten[5] * 0.1,
            };
            prop_assert!(strict.at_least_as_strict_as(&t));
            let m = random_manifest(200, seed);
            let loose_ids = apply_filter(&m, &t).ids().into_iter().map(String::from).collect::<BTreeSet<_>>();
            for r in apply_filter(&m, &strict).records() {
                prop_assert!(loose_ids.contains(&r.id));
            }
        }
    }
}
