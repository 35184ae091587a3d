//! Deterministic toy corpus of striped grayscale images.
//!
//! Class 0 is horizontal stripes and class 1 vertical ones: every row (or
//! column) gets a band of consecutive ranks, and the bands are laid out in a
//! fixed scrambled order, so neighbouring stripes differ sharply. Each knob
//! drives one signal:
//!
//! * `tones` quantizes the ranks into that many equally populated gray levels
//!   (entropy close to `log2 tones`),
//! * `luma` warps the ranks with a power curve before quantization; the
//!   exponent is solved so the mean intensity hits the target,
//! * an optional Gaussian blur lowers clarity (unblurred images sit above the
//!   clarity clip),
//! * an optional checkerboard tag in the top-left corner raises the watermark
//!   score,
//! * `variant` picks one of [`AESTHETIC_LEVELS`] scrambled stripe orders and
//!   carries the stub aesthetic score, which no pixel statistic measures.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::signals::{RgbImage, CORNER_TAG_SIDE};
use crate::{Error, Result};

/// Side of generated images.
pub const SYNTH_SIDE: usize = 16;

/// Tone counts drawn uniformly per image.
pub const TONE_CHOICES: [usize; 8] = [2, 4, 8, 16, 32, 64, 128, 256];

/// Stub aesthetic score of each stripe-order variant.
pub const AESTHETIC_LEVELS: [f64; 3] = [3.0, 5.5, 8.0];

/// Range of the blur sigma for blurred images.
pub const BLUR_RANGE: (f64, f64) = (0.4, 2.0);

/// Seed of the fixed stripe orders. Part of the corpus definition.
const LAYOUT_SEED: u64 = 0x5eed_57a1;

/// Generator knobs for one image.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct PatternParams {
    pub class: usize,
    /// Index into [`AESTHETIC_LEVELS`].
    pub variant: usize,
    pub tones: usize,
    /// Target mean intensity before blur and tag.
    pub luma: f64,
    /// `0` disables the blur.
    pub blur_sigma: f64,
    pub tagged: bool,
}

impl PatternParams {
    /// Draws parameters in a fixed order: class, variant, tones, luma, blur
    /// coin, blur sigma, tag coin.
    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let class = rng.random_range(0..2usize);
        let variant = rng.random_range(0..AESTHETIC_LEVELS.len());
        let tones = TONE_CHOICES[rng.random_range(0..TONE_CHOICES.len())];
        let luma = rng.random_range(0.15..=0.85);
        let blurred = rng.random_bool(0.3);
        let sigma = rng.random_range(BLUR_RANGE.0..=BLUR_RANGE.1);
        let tagged = rng.random_bool(0.3);
        Self {
            class,
            variant,
            tones,
            luma,
            blur_sigma: if blurred { sigma } else { 0.0 },
            tagged,
        }
    }

    /// The stub aesthetic score.
    pub fn aesthetic(&self) -> f64 {
        AESTHETIC_LEVELS[self.variant]
    }
}

/// One generated image with the knobs that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub params: PatternParams,
    pub image: RgbImage,
}

/// Stripe order of `variant`: a fixed permutation of `0..side`.
fn stripe_order(variant: usize, side: usize) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(LAYOUT_SEED);
    rng.set_stream(variant as u64);
    let mut order: Vec<usize> = (0..side).collect();
    order.shuffle(&mut rng);
    order
}

/// Pixel ranks in `(0, 1)`, row-major, each value used once.
fn rank_layout(class: usize, variant: usize, side: usize) -> Vec<f64> {
    let n = side * side;
    let order = stripe_order(variant, side);
    let mut out = vec![0.0; n];
    for y in 0..side {
        for x in 0..side {
            let (major, minor) = if class == 0 { (y, x) } else { (x, y) };
            out[y * side + x] = ((order[major] * side + minor) as f64 + 0.5) / n as f64;
        }
    }
    out
}

fn quantize(rank: f64, exponent: f64, tones: usize) -> f64 {
    let warped = libm::pow(rank, exponent);
    let level = ((warped * tones as f64) as usize).min(tones - 1);
    level as f64 / (tones - 1) as f64
}

fn mean_level(ranks: &[f64], exponent: f64, tones: usize) -> f64 {
    ranks
        .iter()
        .map(|&r| quantize(r, exponent, tones))
        .sum::<f64>()
        / ranks.len() as f64
}

/// Warp exponent whose quantized output has mean closest to `luma`.
fn solve_exponent(ranks: &[f64], tones: usize, luma: f64) -> f64 {
    // The mean decreases in the exponent; search over its logarithm.
    let (mut lo, mut hi) = (-6.0_f64, 6.0_f64);
    for _ in 0..50 {
        let mid = 0.5 * (lo + hi);
        if mean_level(ranks, libm::exp(mid), tones) > luma {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    // Few tones make the mean a step function; pick the closer side.
    let (a, b) = (libm::exp(lo), libm::exp(hi));
    let err = |e: f64| (mean_level(ranks, e, tones) - luma).abs();
    if err(a) <= err(b) {
        a
    } else {
        b
    }
}

/// Renders an achromatic `side x side` image (`side` at least
/// [`CORNER_TAG_SIDE`]). Values are quantized to multiples of `1/255` so that
/// an 8-bit PNG round trip is lossless.
pub fn render(params: &PatternParams, side: usize) -> Result<RgbImage> {
    if side < CORNER_TAG_SIDE {
        return Err(Error::InvalidConfig(format!(
            "synthetic side must be at least {CORNER_TAG_SIDE}, got {side}"
        )));
    }
    let valid = params.tones >= 2
        && params.class <= 1
        && params.variant < AESTHETIC_LEVELS.len()
        && (0.0..=1.0).contains(&params.luma)
        && params.blur_sigma >= 0.0
        && params.blur_sigma.is_finite();
    if !valid {
        return Err(Error::InvalidConfig(format!(
            "invalid pattern parameters {params:?}"
        )));
    }
    let ranks = rank_layout(params.class, params.variant, side);
    let exponent = solve_exponent(&ranks, params.tones, params.luma);
    let mut pixels: Vec<f64> = ranks
        .iter()
        .map(|&r| quantize(r, exponent, params.tones))
        .collect();
    if params.blur_sigma > 0.0 {
        pixels = gaussian_blur(&pixels, side, params.blur_sigma);
    }
    if params.tagged {
        for y in 0..CORNER_TAG_SIDE {
            for x in 0..CORNER_TAG_SIDE {
                pixels[y * side + x] = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
            }
        }
    }
    for p in &mut pixels {
        *p = libm::round(p.clamp(0.0, 1.0) * 255.0) / 255.0;
    }
    RgbImage::from_gray_values(side, side, &pixels)
}

/// Separable Gaussian blur with edge clamping.
fn gaussian_blur(pixels: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    let radius = libm::ceil(3.0 * sigma) as isize;
    let mut kernel: Vec<f64> = (-radius..=radius)
        .map(|k| libm::exp(-((k * k) as f64) / (2.0 * sigma * sigma)))
        .collect();
    let total: f64 = kernel.iter().sum();
    kernel.iter_mut().for_each(|w| *w /= total);
    let clamp = |i: isize| i.clamp(0, side as isize - 1) as usize;

    let mut tmp = vec![0.0; pixels.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * pixels[y * side + clamp(x as isize + j as isize - radius)])
                .sum();
        }
    }
    let mut out = vec![0.0; pixels.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] = kernel
                .iter()
                .enumerate()
                .map(|(j, w)| w * tmp[clamp(y as isize + j as isize - radius) * side + x])
                .sum();
        }
    }
    out
}

/// Parameters of sample `index` of the corpus with `seed`. Each index has its
/// own stream, so any sample can be regenerated on its own.
pub fn synthetic_params(seed: u64, index: u64) -> PatternParams {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    PatternParams::random(&mut rng)
}

/// Generates `n` samples of side [`SYNTH_SIDE`].
pub fn make_synthetic_corpus(n: usize, seed: u64) -> Result<Vec<SyntheticSample>> {
    if n == 0 {
        return Err(Error::InvalidConfig("n must be ≥ 1".into()));
    }
    (0..n as u64)
        .map(|i| {
            let params = synthetic_params(seed, i);
            Ok(SyntheticSample {
                params,
                image: render(&params, SYNTH_SIDE)?,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signals::{
        entropy, luminance, CornerTagWatermarkScorer, Scorer, CLARITY_UNIT_SCALE,
    };

    fn clarity(g: &crate::signals::GrayImage) -> f64 {
        crate::signals::clarity(g) * CLARITY_UNIT_SCALE
    }

    fn base() -> PatternParams {
        PatternParams {
            class: 0,
            variant: 0,
            tones: 256,
            luma: 0.4,
            blur_sigma: 0.0,
            tagged: false,
        }
    }

    fn gray(p: &PatternParams) -> crate::signals::GrayImage {
        render(p, SYNTH_SIDE).unwrap().to_gray().unwrap()
    }

    #[test]
    fn generation_is_deterministic_and_indexable() {
        let a = make_synthetic_corpus(20, 7).unwrap();
        let b = make_synthetic_corpus(20, 7).unwrap();
        assert_eq!(a, b);
        assert_eq!(a[13].params, synthetic_params(7, 13));
        assert_ne!(a, make_synthetic_corpus(20, 8).unwrap());
        assert!(make_synthetic_corpus(0, 1).is_err());
    }

    #[test]
    fn luma_knob_sets_mean_intensity() {
        for tones in [4, 16, 256] {
            for luma in [0.15, 0.5, 0.85] {
                let img = render(
                    &PatternParams {
                        tones,
                        luma,
                        ..base()
                    },
                    SYNTH_SIDE,
                )
                .unwrap();
                assert!(
                    (luminance(&img) - luma).abs() < 0.02,
                    "tones {tones} luma {luma}: {}",
                    luminance(&img)
                );
            }
        }
        let two = render(
            &PatternParams {
                tones: 2,
                luma: 0.3,
                ..base()
            },
            SYNTH_SIDE,
        )
        .unwrap();
        assert!((luminance(&two) - 0.3).abs() < 0.01);
    }

    #[test]
    fn tones_set_entropy() {
        let at = |tones| {
            entropy(&gray(&PatternParams {
                tones,
                luma: 0.5,
                ..base()
            }))
        };
        assert!((at(2) - 1.0).abs() < 1e-3, "{}", at(2));
        for tones in [4, 8, 16, 32, 64, 128] {
            let expect = (tones as f64).log2();
            assert!((at(tones) - expect).abs() < 0.15, "{tones}: {}", at(tones));
        }
        assert!(at(256) > 7.5);
    }

    #[test]
    fn blur_lowers_clarity_and_sharp_images_clip() {
        for tones in [2, 8, 256] {
            let sharp = gray(&PatternParams {
                tones,
                luma: 0.5,
                ..base()
            });
            assert!(clarity(&sharp) > 3000.0, "{tones}: {}", clarity(&sharp));
        }
        let soft = gray(&PatternParams {
            blur_sigma: 1.0,
            ..base()
        });
        let softer = gray(&PatternParams {
            blur_sigma: 2.0,
            ..base()
        });
        assert!(clarity(&softer) < clarity(&soft));
        assert!(clarity(&softer) < 3000.0);
    }

    #[test]
    fn tag_raises_watermark_score() {
        let wat = CornerTagWatermarkScorer;
        for tones in [2, 256] {
            let plain = render(&PatternParams { tones, ..base() }, SYNTH_SIDE).unwrap();
            let tagged = render(
                &PatternParams {
                    tones,
                    tagged: true,
                    ..base()
                },
                SYNTH_SIDE,
            )
            .unwrap();
            assert!(wat.score("", &plain).unwrap() < 0.1);
            assert!(wat.score("", &tagged).unwrap() > 0.9);
        }
    }

    #[test]
    fn variants_share_statistics_but_not_layout() {
        let a = gray(&base());
        let b = gray(&PatternParams {
            variant: 2,
            ..base()
        });
        assert_ne!(a, b);
        assert_eq!(entropy(&a), entropy(&b));
        let sum = |g: &crate::signals::GrayImage| g.data().iter().sum::<f64>();
        assert!((sum(&a) - sum(&b)).abs() < 1e-9);
        assert_eq!(base().aesthetic(), AESTHETIC_LEVELS[0]);
    }

    #[test]
    fn classes_are_transposes() {
        let h = render(&base(), SYNTH_SIDE).unwrap();
        let v = render(&PatternParams { class: 1, ..base() }, SYNTH_SIDE).unwrap();
        for y in 0..SYNTH_SIDE {
            for x in 0..SYNTH_SIDE {
                assert_eq!(h.get(x, y), v.get(y, x));
            }
        }
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(render(&base(), 2).is_err());
        assert!(render(&PatternParams { tones: 1, ..base() }, 16).is_err());
        assert!(render(
            &PatternParams {
                variant: 3,
                ..base()
            },
            16
        )
        .is_err());
        assert!(render(
            &PatternParams {
                luma: 1.5,
                ..base()
            },
            16
        )
        .is_err());
    }
}
