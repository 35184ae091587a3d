//! Quality-signal extraction.
//!
//! Three signals are analytic and computed here:
//! - clarity: population variance of the 3x3 Laplacian response over interior
//!   pixels of a scale-normalized grayscale image,
//! - entropy: Shannon entropy (bits) of the 256-bin grayscale histogram,
//! - luminance: mean of the HSV value channel, `max(r, g, b)`.
//!
//! The aesthetic and watermark signals come from model-based scorers behind the
//! [`Scorer`] trait. Two deterministic heuristic scorers ship with the crate so
//! the pipeline can run end to end without any neural network.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use crate::{Error, QualityVector, Result};

/// Factor converting a Laplacian variance measured on `[0, 1]` intensities
/// into 8-bit intensity units, the scale of the clarity anchor grid.
pub const CLARITY_UNIT_SCALE: f64 = 255.0 * 255.0;

/// Default long-side resolution used by scale normalization.
pub const DEFAULT_TARGET_LONG_SIDE: usize = 512;

/// Single-channel image, row-major, intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if width < 3 || height < 3 {
            return Err(Error::ImageTooSmall { width, height });
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "gray image data",
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::InvalidImage(format!("intensity {v} outside [0, 1]")));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn filled(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, alloc::vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }
}

/// Three-channel image, row-major `(r, g, b)` triples in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    width: usize,
    height: usize,
    data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize, data: Vec<[f64; 3]>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage("empty image".to_string()));
        }
        if data.len() != width * height {
            return Err(Error::DimensionMismatch {
                context: "rgb image data",
                expected: width * height,
                actual: data.len(),
            });
        }
        if let Some(px) = data
            .iter()
            .find(|px| px.iter().any(|c| !(0.0..=1.0).contains(c)))
        {
            return Err(Error::InvalidImage(format!(
                "pixel {px:?} has a channel outside [0, 1]"
            )));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, rgb: [f64; 3]) -> Result<Self> {
        Self::new(width, height, alloc::vec![rgb; width * height])
    }

    /// Achromatic image with `r = g = b = gray`.
    pub fn from_gray_values(width: usize, height: usize, gray: &[f64]) -> Result<Self> {
        Self::new(width, height, gray.iter().map(|&v| [v, v, v]).collect())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[[f64; 3]] {
        &self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    /// ITU-R BT.601 luma: `0.299 r + 0.587 g + 0.114 b`.
    pub fn to_gray(&self) -> Result<GrayImage> {
        let data = self
            .data
            .iter()
            .map(|&[r, g, b]| (0.299 * r + 0.587 * g + 0.114 * b).clamp(0.0, 1.0))
            .collect();
        GrayImage::new(self.width, self.height, data)
    }
}

/// Resamples `img` so that its longest side equals `target_long_side`.
///
/// The short side is rounded half-up and the aspect ratio is preserved.
/// Bilinear interpolation with pixel-center alignment; images already at the
/// target size are returned unchanged.
pub fn scale_normalize(img: &GrayImage, target_long_side: usize) -> Result<GrayImage> {
    if target_long_side < 3 {
        return Err(Error::InvalidConfig(format!(
            "target long side {target_long_side} must be at least 3"
        )));
    }
    let (w, h) = (img.width, img.height);
    let long = w.max(h);
    if long == target_long_side {
        return Ok(img.clone());
    }
    let short = w.min(h);
    let scaled_short = (2 * short * target_long_side + long) / (2 * long);
    let (out_w, out_h) = if w >= h {
        (target_long_side, scaled_short)
    } else {
        (scaled_short, target_long_side)
    };
    if out_w < 3 || out_h < 3 {
        return Err(Error::ImageTooSmall {
            width: out_w,
            height: out_h,
        });
    }

    let xs = sample_positions(w, out_w);
    let ys = sample_positions(h, out_h);
    let mut data = Vec::with_capacity(out_w * out_h);
    for &(y0, y1, fy) in &ys {
        let row0 = &img.data[y0 * w..(y0 + 1) * w];
        let row1 = &img.data[y1 * w..(y1 + 1) * w];
        for &(x0, x1, fx) in &xs {
            let top = row0[x0] + fx * (row0[x1] - row0[x0]);
            let bottom = row1[x0] + fx * (row1[x1] - row1[x0]);
            data.push((top + fy * (bottom - top)).clamp(0.0, 1.0));
        }
    }
    GrayImage::new(out_w, out_h, data)
}

/// Source neighbours and blend fraction for each output coordinate.
fn sample_positions(src_len: usize, dst_len: usize) -> Vec<(usize, usize, f64)> {
    let scale = src_len as f64 / dst_len as f64;
    (0..dst_len)
        .map(|i| {
            let src = ((i as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (libm::floor(src) as usize).min(src_len - 1);
            let i1 = (i0 + 1).min(src_len - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Population variance of the `[[0,1,0],[1,-4,1],[0,1,0]]` response over
/// interior pixels (no padding), on `[0, 1]` intensities.
pub fn clarity(img: &GrayImage) -> f64 {
    let (w, h) = (img.width, img.height);
    let n = ((w - 2) * (h - 2)) as f64;
    let response = |x: usize, y: usize| {
        img.get(x, y - 1) + img.get(x, y + 1) + img.get(x - 1, y) + img.get(x + 1, y)
            - 4.0 * img.get(x, y)
    };
    let mut sum = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            sum += response(x, y);
        }
    }
    let mean = sum / n;
    let mut ss = 0.0;
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            let d = response(x, y) - mean;
            ss += d * d;
        }
    }
    ss / n
}

/// Histogram bin of an intensity: `floor(v * 255.999)`.
#[inline]
pub fn intensity_bin(v: f64) -> usize {
    (libm::floor(v * 255.999) as usize).min(255)
}

/// Shannon entropy in bits of the 256-bin intensity histogram; in `[0, 8]`.
pub fn entropy(img: &GrayImage) -> f64 {
    let mut counts = [0usize; 256];
    for &v in &img.data {
        counts[intensity_bin(v)] += 1;
    }
    let n = img.data.len() as f64;
    let h: f64 = counts
        .iter()
        .filter(|&&c| c > 0)
        .map(|&c| {
            let p = c as f64 / n;
            -p * libm::log2(p)
        })
        .sum();
    if h > 0.0 {
        h.min(8.0)
    } else {
        0.0
    }
}

/// Mean HSV value channel, `V = max(r, g, b)`; in `[0, 1]`.
pub fn luminance(img: &RgbImage) -> f64 {
    let sum: f64 = img.data.iter().map(|&[r, g, b]| r.max(g).max(b)).sum();
    sum / img.data.len() as f64
}

/// A model-based quality scorer (aesthetic predictor, watermark detector).
///
/// Implementations must be deterministic. `sample_id` lets precomputed-score
/// scorers look their value up; image-based scorers ignore it.
pub trait Scorer: Sync {
    fn name(&self) -> &str;

    fn score(&self, sample_id: &str, image: &RgbImage) -> Result<f64>;

    /// Scorers that are not safe to call concurrently return `true`; the
    /// labeling pipeline then serializes calls to them.
    fn is_serial(&self) -> bool {
        false
    }
}

/// Returns the same value for every image.
#[derive(Debug, Clone)]
pub struct FixedScorer {
    name: String,
    value: f64,
}

impl FixedScorer {
    pub fn new(name: impl Into<String>, value: f64) -> Self {
        Self {
            name: name.into(),
            value,
        }
    }
}

impl Scorer for FixedScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, _sample_id: &str, _image: &RgbImage) -> Result<f64> {
        Ok(self.value)
    }
}

/// Looks scores up by sample id; unknown ids are an error.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    name: String,
    scores: BTreeMap<String, f64>,
}

impl TableScorer {
    pub fn new(name: impl Into<String>, scores: BTreeMap<String, f64>) -> Self {
        Self {
            name: name.into(),
            scores,
        }
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

impl Scorer for TableScorer {
    fn name(&self) -> &str {
        &self.name
    }

    fn score(&self, sample_id: &str, _image: &RgbImage) -> Result<f64> {
        self.scores
            .get(sample_id)
            .copied()
            .ok_or_else(|| Error::ScorerFailed {
                name: self.name.clone(),
                reason: format!("no score for sample `{sample_id}`"),
            })
    }
}

/// Heuristic aesthetic stand-in in `[0, 10]`: half exposure balance (mean gray
/// close to 0.5), half global contrast (gray standard deviation, saturating
/// at 0.5).
#[derive(Debug, Clone, Copy, Default)]
pub struct HeuristicAestheticScorer;

impl Scorer for HeuristicAestheticScorer {
    fn name(&self) -> &str {
        "heuristic-aesthetic"
    }

    fn score(&self, _sample_id: &str, image: &RgbImage) -> Result<f64> {
        let gray: Vec<f64> = image
            .data
            .iter()
            .map(|&[r, g, b]| 0.299 * r + 0.587 * g + 0.114 * b)
            .collect();
        let n = gray.len() as f64;
        let mean = gray.iter().sum::<f64>() / n;
        let var = gray.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let exposure = (1.0 - 2.0 * (mean - 0.5).abs()).clamp(0.0, 1.0);
        let contrast = (2.0 * libm::sqrt(var)).min(1.0);
        Ok((10.0 * (0.5 * exposure + 0.5 * contrast)).clamp(0.0, 10.0))
    }
}

/// Side of the square corner tag used as the synthetic watermark.
pub const CORNER_TAG_SIDE: usize = 4;

/// Heuristic watermark stand-in: correlation of the top-left
/// [`CORNER_TAG_SIDE`]-square patch with a checkerboard template, squashed to
/// a probability. A full-contrast tag scores close to 1; natural content
/// (including stripes) scores close to 0.
#[derive(Debug, Clone, Copy, Default)]
pub struct CornerTagWatermarkScorer;

impl CornerTagWatermarkScorer {
    pub fn tag_correlation(image: &RgbImage) -> f64 {
        let side_x = CORNER_TAG_SIDE.min(image.width);
        let side_y = CORNER_TAG_SIDE.min(image.height);
        let n = (side_x * side_y) as f64;
        let gray = |x: usize, y: usize| {
            let [r, g, b] = image.get(x, y);
            0.299 * r + 0.587 * g + 0.114 * b
        };
        let mut mean = 0.0;
        for y in 0..side_y {
            for x in 0..side_x {
                mean += gray(x, y);
            }
        }
        mean /= n;
        let mut corr = 0.0;
        for y in 0..side_y {
            for x in 0..side_x {
                let sign = if (x + y) % 2 == 0 { 1.0 } else { -1.0 };
                corr += sign * (gray(x, y) - mean);
            }
        }
        corr / n
    }
}

impl Scorer for CornerTagWatermarkScorer {
    fn name(&self) -> &str {
        "corner-tag-watermark"
    }

    fn score(&self, _sample_id: &str, image: &RgbImage) -> Result<f64> {
        let corr = Self::tag_correlation(image);
        // A perfect 0/1 tag has correlation 0.5.
        let z = 12.0 * (2.0 * corr - 0.5);
        Ok(1.0 / (1.0 + libm::exp(-z)))
    }
}

fn checked_score(
    scorer: &dyn Scorer,
    sample_id: &str,
    image: &RgbImage,
    (min, max): (f64, f64),
) -> Result<f64> {
    let value = scorer.score(sample_id, image)?;
    if !(value >= min && value <= max) {
        return Err(Error::ScorerOutOfRange {
            name: scorer.name().to_string(),
            value,
            min,
            max,
        });
    }
    Ok(value)
}

/// Labels one image with its full quality vector.
///
/// Clarity and entropy are measured on the BT.601 grayscale image after
/// scale normalization; clarity is reported in 8-bit intensity units
/// ([`CLARITY_UNIT_SCALE`]). Luminance is measured on the original RGB image.
pub fn label_sample(
    sample_id: &str,
    rgb: &RgbImage,
    aes_scorer: &dyn Scorer,
    wat_scorer: &dyn Scorer,
    target_long_side: usize,
) -> Result<QualityVector> {
    let aes = checked_score(aes_scorer, sample_id, rgb, (0.0, 10.0))?;
    let wat = checked_score(wat_scorer, sample_id, rgb, (0.0, 1.0))?;
    let gray = scale_normalize(&rgb.to_gray()?, target_long_side)?;
    Ok(QualityVector {
        aes,
        wat,
        cla: clarity(&gray) * CLARITY_UNIT_SCALE,
        ent: entropy(&gray),
        luma: luminance(rgb),
    })
}
