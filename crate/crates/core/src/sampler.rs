//! Euler integration of the learned velocity field, with classifier-free
//! guidance on the class (CFG / LACON-S) or per-attribute guidance (LACON-A).

use alloc::format;
use alloc::vec::Vec;
use core::fmt;
use core::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::flowmodel::VelocityModel;
use crate::signals::{label_sample, RgbImage, Scorer};
use crate::tensor::Matrix;
use crate::{Attribute, Error, QualityVector, Result};

/// Sampling mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum GuidanceMode {
    /// Class guidance with the quality condition held at `s_base`.
    Cfg,
    /// Class guidance with the quality condition held at `s_hold`.
    LaconS,
    /// Separate guidance term per attribute.
    LaconA,
}

impl GuidanceMode {
    pub fn name(self) -> &'static str {
        match self {
            Self::Cfg => "cfg",
            Self::LaconS => "lacon-s",
            Self::LaconA => "lacon-a",
        }
    }
}

impl fmt::Display for GuidanceMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for GuidanceMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cfg" => Ok(Self::Cfg),
            "lacon-s" => Ok(Self::LaconS),
            "lacon-a" => Ok(Self::LaconA),
            other => Err(Error::InvalidConfig(format!(
                "unknown guidance mode {other:?} (expected cfg, lacon-s or lacon-a)"
            ))),
        }
    }
}

/// Default per-attribute targets.
pub const DEFAULT_TARGETS: QualityVector = QualityVector {
    aes: 7.0,
    wat: 0.05,
    cla: 2500.0,
    ent: 7.0,
    luma: 0.5,
};

/// Guidance weights and quality conditions for all three modes.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct GuidanceSpec {
    pub omega_c: f64,
    /// Per-attribute weights in [`Attribute::ALL`] order.
    pub omega: [f64; 5],
    pub s_base: QualityVector,
    /// Target value per attribute.
    pub s_high: QualityVector,
    /// Condition held fixed by LACON-S.
    pub s_hold: QualityVector,
}

impl GuidanceSpec {
    /// Default targets: aesthetic 7, watermark 0.05, clarity 2500, entropy 7,
    /// luminance 0.5. All attribute weights start at zero and the LACON-S
    /// condition starts at `s_base`.
    pub fn new(omega_c: f64, s_base: QualityVector) -> Self {
        Self {
            omega_c,
            omega: [0.0; 5],
            s_base,
            s_high: DEFAULT_TARGETS,
            s_hold: s_base,
        }
    }

    pub fn omega(&self, attr: Attribute) -> f64 {
        self.omega[attr.index()]
    }

    /// `s_base` with attribute `attr` replaced by its target.
    pub fn target_for(&self, attr: Attribute) -> QualityVector {
        self.s_base.with(attr, self.s_high.get(attr))
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.omega_c.is_finite() && self.omega.iter().all(|w| w.is_finite());
        if !finite {
            return Err(Error::InvalidConfig(
                "guidance weights must be finite".into(),
            ));
        }
        self.s_base.validate()?;
        self.s_high.validate()?;
        self.s_hold.validate()
    }
}

/// Integration settings.
#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct SamplerConfig {
    pub steps: usize,
    pub seed: u64,
    pub count: usize,
}

impl SamplerConfig {
    pub fn new(seed: u64, count: usize) -> Self {
        Self {
            steps: 50,
            seed,
            count,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.count == 0 {
            return Err(Error::InvalidConfig(format!(
                "steps and count must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// `omega * cond + (1 - omega) * uncond`.
pub fn cfg_combine(cond: &Matrix, uncond: &Matrix, omega: f64) -> Matrix {
    let data = cond
        .as_slice()
        .iter()
        .zip(uncond.as_slice())
        .map(|(c, u)| omega * c + (1.0 - omega) * u)
        .collect();
    Matrix::from_vec(cond.rows(), cond.cols(), data)
}

/// Class-guided velocity with a fixed quality condition (two evaluations).
pub fn guided_velocity<M: VelocityModel + ?Sized>(
    model: &M,
    x: &Matrix,
    t: f64,
    class: usize,
    s: &QualityVector,
    omega_c: f64,
) -> Result<Matrix> {
    let cond = model.velocity(x, t, Some(class), s)?;
    let uncond = model.velocity(x, t, None, s)?;
    Ok(cfg_combine(&cond, &uncond, omega_c))
}

/// Per-attribute guided velocity (seven evaluations):
/// `v_base + omega_c (v_text - v_base) + sum_k omega_k (v_k - v_text)`, where
/// `v_base` is unconditional at `s_base`, `v_text` is class-conditional at
/// `s_base` and `v_k` is class-conditional with attribute `k` at its target.
/// Terms with `omega_k == 0` are skipped, so all-zero weights reproduce the
/// class-guided velocity exactly.
pub fn lacon_a_velocity<M: VelocityModel + ?Sized>(
    model: &M,
    x: &Matrix,
    t: f64,
    class: usize,
    g: &GuidanceSpec,
) -> Result<Matrix> {
    let v_base = model.velocity(x, t, None, &g.s_base)?;
    let v_text = model.velocity(x, t, Some(class), &g.s_base)?;
    let mut out = cfg_combine(&v_text, &v_base, g.omega_c);
    for attr in Attribute::ALL {
        let v_k = model.velocity(x, t, Some(class), &g.target_for(attr))?;
        let w = g.omega(attr);
        if w != 0.0 {
            for ((o, k), c) in out
                .as_mut_slice()
                .iter_mut()
                .zip(v_k.as_slice())
                .zip(v_text.as_slice())
            {
                *o += w * (k - c);
            }
        }
    }
    Ok(out)
}

/// Initial noise for `config`, one row per sample.
pub fn initial_noise(config: &SamplerConfig, dim: usize) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    Matrix::from_fn(config.count, dim, |_, _| rng.sample(StandardNormal))
}

/// Integrates from `t = 1` to `t = 0` in `steps` uniform Euler steps, then
/// clamps to `[-1, 1]`.
pub fn integrate<F>(config: &SamplerConfig, dim: usize, mut velocity: F) -> Result<Matrix>
where
    F: FnMut(&Matrix, f64) -> Result<Matrix>,
{
    config.validate()?;
    let mut x = initial_noise(config, dim);
    let dt = 1.0 / config.steps as f64;
    for i in 0..config.steps {
        let t = (config.steps - i) as f64 * dt;
        let v = velocity(&x, t)?;
        for (xv, vv) in x.as_mut_slice().iter_mut().zip(v.as_slice()) {
            *xv -= dt * vv;
        }
        if x.as_slice().iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteState { step: i, t });
        }
    }
    x.as_mut_slice()
        .iter_mut()
        .for_each(|v| *v = v.clamp(-1.0, 1.0));
    Ok(x)
}

/// CFG / LACON-S sampling with a fixed quality condition `s`.
pub fn euler_sample<M: VelocityModel + ?Sized>(
    model: &M,
    class: usize,
    s: &QualityVector,
    omega_c: f64,
    config: &SamplerConfig,
) -> Result<Matrix> {
    integrate(config, model.image_dim(), |x, t| {
        guided_velocity(model, x, t, class, s, omega_c)
    })
}

/// LACON-A sampling.
pub fn lacon_a_sample<M: VelocityModel + ?Sized>(
    model: &M,
    class: usize,
    g: &GuidanceSpec,
    config: &SamplerConfig,
) -> Result<Matrix> {
    g.validate()?;
    integrate(config, model.image_dim(), |x, t| {
        lacon_a_velocity(model, x, t, class, g)
    })
}

/// Dispatches on `mode`.
pub fn sample<M: VelocityModel + ?Sized>(
    model: &M,
    mode: GuidanceMode,
    class: usize,
    g: &GuidanceSpec,
    config: &SamplerConfig,
) -> Result<Matrix> {
    match mode {
        GuidanceMode::Cfg => euler_sample(model, class, &g.s_base, g.omega_c, config),
        GuidanceMode::LaconS => euler_sample(model, class, &g.s_hold, g.omega_c, config),
        GuidanceMode::LaconA => lacon_a_sample(model, class, g, config),
    }
}

/// Converts one generated row (values in `[-1, 1]`) to an achromatic image.
pub fn row_to_image(row: &[f64], side: usize) -> Result<RgbImage> {
    if row.len() != side * side {
        return Err(Error::DimensionMismatch {
            context: "generated image",
            expected: side * side,
            actual: row.len(),
        });
    }
    let gray: Vec<f64> = row
        .iter()
        .map(|v| (v.clamp(-1.0, 1.0) + 1.0) / 2.0)
        .collect();
    RgbImage::from_gray_values(side, side, &gray)
}

/// Labels each generated row with the same pipeline used for training data.
pub fn measure_outputs(
    images: &Matrix,
    side: usize,
    aes: &dyn Scorer,
    wat: &dyn Scorer,
    target_long_side: usize,
) -> Result<Vec<QualityVector>> {
    images
        .rows_iter()
        .enumerate()
        .map(|(i, row)| {
            let img = row_to_image(row, side)?;
            label_sample(&format!("generated-{i}"), &img, aes, wat, target_long_side)
        })
        .collect()
}

/// Mean of one attribute over measured outputs.
pub fn mean_attribute(measured: &[QualityVector], attr: Attribute) -> f64 {
    measured.iter().map(|q| q.get(attr)).sum::<f64>() / measured.len().max(1) as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use core::cell::Cell;

    /// Analytic stand-in: the velocity depends linearly on every condition.
    struct Linear {
        calls: Cell<usize>,
    }

    impl VelocityModel for Linear {
        fn image_dim(&self) -> usize {
            4
        }

        fn velocity(
            &self,
            x: &Matrix,
            t: f64,
            class: Option<usize>,
            s: &QualityVector,
        ) -> Result<Matrix> {
            self.calls.set(self.calls.get() + 1);
            let c = class.map_or(-0.5, |c| c as f64 + 1.0);
            let s = s.to_array();
            Ok(Matrix::from_fn(x.rows(), 4, |r, j| {
                0.3 * x.get(r, j) + 0.1 * t + c * (j as f64 + 1.0) * 0.2 + s[j] * 0.01 + s[4] * 0.05
            }))
        }
    }

    fn spec() -> GuidanceSpec {
        let mut g = GuidanceSpec::new(3.0, QualityVector::new(5.0, 0.4, 900.0, 5.0, 0.4));
        g.omega = [1.5, -2.0, 0.0, 0.75, 4.0];
        g
    }

    #[test]
    fn lacon_a_evaluates_seven_times_per_step() {
        let m = Linear {
            calls: Cell::new(0),
        };
        let x = Matrix::zeros(2, 4);
        lacon_a_velocity(&m, &x, 0.5, 0, &spec()).unwrap();
        assert_eq!(m.calls.get(), 7);
        m.calls.set(0);
        guided_velocity(&m, &x, 0.5, 0, &spec().s_base, 3.0).unwrap();
        assert_eq!(m.calls.get(), 2);
    }

    #[test]
    fn zero_attribute_weights_reproduce_cfg_exactly() {
        let m = Linear {
            calls: Cell::new(0),
        };
        let mut g = spec();
        g.omega = [0.0; 5];
        let config = SamplerConfig::new(9, 3);
        let a = lacon_a_sample(&m, 1, &g, &config).unwrap();
        let b = euler_sample(&m, 1, &g.s_base, g.omega_c, &config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unit_and_zero_weights_select_single_branch() {
        let m = Linear {
            calls: Cell::new(0),
        };
        let x = Matrix::from_fn(2, 4, |r, c| (r + c) as f64 * 0.1);
        let s = spec().s_base;
        let cond = m.velocity(&x, 0.3, Some(0), &s).unwrap();
        let uncond = m.velocity(&x, 0.3, None, &s).unwrap();
        assert_eq!(guided_velocity(&m, &x, 0.3, 0, &s, 1.0).unwrap(), cond);
        assert_eq!(guided_velocity(&m, &x, 0.3, 0, &s, 0.0).unwrap(), uncond);
    }

    #[test]
    fn lacon_a_matches_reassociated_form() {
        // Expanded into a weighted sum of the seven branch velocities.
        let m = Linear {
            calls: Cell::new(0),
        };
        let g = spec();
        let x = Matrix::from_fn(3, 4, |r, c| libm::sin((r * 4 + c) as f64));
        let t = 0.7;
        let got = lacon_a_velocity(&m, &x, t, 1, &g).unwrap();
        let base = m.velocity(&x, t, None, &g.s_base).unwrap();
        let text = m.velocity(&x, t, Some(1), &g.s_base).unwrap();
        let sum_w: f64 = g.omega.iter().sum();
        let mut expected: Vec<f64> = base
            .as_slice()
            .iter()
            .zip(text.as_slice())
            .map(|(b, c)| (1.0 - g.omega_c) * b + (g.omega_c - sum_w) * c)
            .collect();
        for attr in Attribute::ALL {
            let vk = m.velocity(&x, t, Some(1), &g.target_for(attr)).unwrap();
            for (e, v) in expected.iter_mut().zip(vk.as_slice()) {
                *e += g.omega(attr) * v;
            }
        }
        for (a, e) in got.as_slice().iter().zip(&expected) {
            assert!((a - e).abs() < 1e-12, "{a} vs {e}");
        }
    }

    #[test]
    fn linear_velocity_has_closed_form_euler_path() {
        // Constant velocity v integrates to x_0 = x_1 - v.
        struct Constant;
        impl VelocityModel for Constant {
            fn image_dim(&self) -> usize {
                2
            }
            fn velocity(
                &self,
                x: &Matrix,
                _t: f64,
                class: Option<usize>,
                _s: &QualityVector,
            ) -> Result<Matrix> {
                let v = if class.is_some() { 0.25 } else { -0.25 };
                Ok(Matrix::from_fn(x.rows(), 2, |_, _| v))
            }
        }
        let config = SamplerConfig {
            steps: 8,
            seed: 4,
            count: 5,
        };
        let noise = initial_noise(&config, 2);
        let s = QualityVector::new(5.0, 0.5, 100.0, 4.0, 0.5);
        let out = euler_sample(&Constant, 0, &s, 2.0, &config).unwrap();
        // Guided velocity: 2 * 0.25 - 1 * (-0.25) = 0.75.
        for (o, n) in out.as_slice().iter().zip(noise.as_slice()) {
            assert!((o - (n - 0.75).clamp(-1.0, 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn same_seed_same_samples() {
        let m = Linear {
            calls: Cell::new(0),
        };
        let config = SamplerConfig::new(2, 4);
        let a = lacon_a_sample(&m, 0, &spec(), &config).unwrap();
        let b = lacon_a_sample(&m, 0, &spec(), &config).unwrap();
        assert_eq!(a, b);
        let c = lacon_a_sample(&m, 0, &spec(), &SamplerConfig::new(3, 4)).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_degenerate_configs() {
        let m = Linear {
            calls: Cell::new(0),
        };
        let mut config = SamplerConfig::new(0, 1);
        config.steps = 0;
        assert!(lacon_a_sample(&m, 0, &spec(), &config).is_err());
        assert!("cfg".parse::<GuidanceMode>().is_ok());
        assert!("lacon-x".parse::<GuidanceMode>().is_err());
    }
}
