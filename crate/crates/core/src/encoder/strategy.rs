//! Token-injection strategies behind one interface.
//!
//! - `Gcc`: soft RBF assignment over learnable centroids (see [`super::gcc`]).
//! - `LinearInterpolation`: two learnable endpoint tokens per attribute,
//!   blended by the score's position in its range.
//! - `DiscreteBinning`: one learnable token per anchor cell; the score picks
//!   the cell that contains it, boundary values go to the lower cell.
//! - `FourierFeature`: sin/cos features of the normalized score at
//!   [`FOURIER_FREQUENCIES`], projected by a per-attribute two-layer MLP
//!   with hidden width `4d`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;
use core::fmt;
use core::str::FromStr;

use rand::Rng;

use super::gcc::{accumulate_centroid_grad, embed_vector_into, CentroidTable, ConditionEmbedding};
use super::{AnchorSet, AttributeAnchorSpec};
use crate::tensor::{silu, silu_grad, Matrix};
use crate::{Attribute, Error, QualityVector, Result};

/// Log-spaced frequency bank applied to the min-max normalized score.
pub const FOURIER_FREQUENCIES: [f64; 8] = [0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0];

const FOURIER_FEATURES: usize = 2 * FOURIER_FREQUENCIES.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "kebab-case"))]
pub enum StrategyKind {
    Gcc,
    LinearInterpolation,
    DiscreteBinning,
    FourierFeature,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 4] = [
        StrategyKind::Gcc,
        StrategyKind::LinearInterpolation,
        StrategyKind::DiscreteBinning,
        StrategyKind::FourierFeature,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::Gcc => "gcc",
            StrategyKind::LinearInterpolation => "linear-interpolation",
            StrategyKind::DiscreteBinning => "discrete-binning",
            StrategyKind::FourierFeature => "fourier-feature",
        }
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                Error::InvalidConfig(format!(
                    "unknown strategy `{s}` (expected gcc, linear-interpolation, discrete-binning or fourier-feature)"
                ))
            })
    }
}

/// Per-attribute projection `W2 silu(W1 phi + b1) + b2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FourierMlp {
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

impl FourierMlp {
    fn zeros(dim: usize) -> Self {
        let hidden = 4 * dim;
        Self {
            w1: Matrix::zeros(hidden, FOURIER_FEATURES),
            b1: Matrix::zeros(1, hidden),
            w2: Matrix::zeros(dim, hidden),
            b2: Matrix::zeros(1, dim),
        }
    }

    fn random<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> Self {
        let hidden = 4 * dim;
        let mut uniform = |rows, cols, fan_in: usize| {
            let bound = 1.0 / libm::sqrt(fan_in as f64);
            Matrix::from_fn(rows, cols, |_, _| rng.random_range(-bound..=bound))
        };
        Self {
            w1: uniform(hidden, FOURIER_FEATURES, FOURIER_FEATURES),
            b1: uniform(1, hidden, FOURIER_FEATURES),
            w2: uniform(dim, hidden, hidden),
            b2: uniform(1, dim, hidden),
        }
    }

    fn hidden_pre(&self, phi: &[f64]) -> Vec<f64> {
        self.w1
            .rows_iter()
            .zip(self.b1.as_slice())
            .map(|(row, b)| b + row.iter().zip(phi).map(|(w, p)| w * p).sum::<f64>())
            .collect()
    }

    fn forward(&self, phi: &[f64], out: &mut [f64]) {
        let h: Vec<f64> = self.hidden_pre(phi).into_iter().map(silu).collect();
        for ((o, row), b) in out
            .iter_mut()
            .zip(self.w2.rows_iter())
            .zip(self.b2.as_slice())
        {
            *o = b + row.iter().zip(&h).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    fn backward(&self, phi: &[f64], upstream: &[f64], grad: &mut FourierMlp) {
        let pre = self.hidden_pre(phi);
        let h: Vec<f64> = pre.iter().map(|&z| silu(z)).collect();
        let mut dh = vec![0.0; h.len()];
        for (o, g) in upstream.iter().enumerate() {
            grad.b2.as_mut_slice()[o] += g;
            let w_row = self.w2.row(o);
            for (j, (gw, hj)) in grad.w2.row_mut(o).iter_mut().zip(&h).enumerate() {
                *gw += g * hj;
                dh[j] += g * w_row[j];
            }
        }
        for (j, (dhj, z)) in dh.iter().zip(&pre).enumerate() {
            let dz = dhj * silu_grad(*z);
            grad.b1.as_mut_slice()[j] += dz;
            for (gw, p) in grad.w1.row_mut(j).iter_mut().zip(phi) {
                *gw += dz * p;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Params {
    Gcc(CentroidTable),
    /// Per attribute, a `2 x d` matrix: row 0 at the range minimum, row 1 at the maximum.
    Linear(Vec<Matrix>),
    /// Per attribute, one token per anchor cell.
    Binning(Vec<Matrix>),
    Fourier(Vec<FourierMlp>),
}

/// A condition encoder: anchor specs plus the learnable parameters of one
/// injection strategy.
#[derive(Debug, Clone, PartialEq)]
pub struct InjectionStrategy {
    specs: AnchorSet,
    dim: usize,
    params: Params,
}

impl InjectionStrategy {
    /// Randomly initialized encoder. Token tables use `U[-1/sqrt(d), 1/sqrt(d)]`;
    /// Fourier projections use `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`.
    pub fn new<R: Rng + ?Sized>(
        kind: StrategyKind,
        specs: AnchorSet,
        dim: usize,
        rng: &mut R,
    ) -> Self {
        let bound = 1.0 / libm::sqrt(dim as f64);
        let mut tokens =
            |rows: usize| Matrix::from_fn(rows, dim, |_, _| rng.random_range(-bound..=bound));
        let params = match kind {
            StrategyKind::Gcc => Params::Gcc(CentroidTable::random(&specs, dim, rng)),
            StrategyKind::LinearInterpolation => {
                Params::Linear(specs.iter().map(|_| tokens(2)).collect())
            }
            StrategyKind::DiscreteBinning => {
                Params::Binning(specs.iter().map(|s| tokens(s.len())).collect())
            }
            StrategyKind::FourierFeature => Params::Fourier(
                (0..Attribute::COUNT)
                    .map(|_| FourierMlp::random(dim, rng))
                    .collect(),
            ),
        };
        Self { specs, dim, params }
    }

    /// All parameters zero.
    pub fn zeros(kind: StrategyKind, specs: AnchorSet, dim: usize) -> Self {
        let params = match kind {
            StrategyKind::Gcc => Params::Gcc(CentroidTable::zeros(&specs, dim)),
            StrategyKind::LinearInterpolation => {
                Params::Linear(specs.iter().map(|_| Matrix::zeros(2, dim)).collect())
            }
            StrategyKind::DiscreteBinning => {
                Params::Binning(specs.iter().map(|s| Matrix::zeros(s.len(), dim)).collect())
            }
            StrategyKind::FourierFeature => Params::Fourier(
                (0..Attribute::COUNT)
                    .map(|_| FourierMlp::zeros(dim))
                    .collect(),
            ),
        };
        Self { specs, dim, params }
    }

    /// GCC encoder around an existing centroid table.
    pub fn gcc(specs: AnchorSet, table: CentroidTable) -> Result<Self> {
        table.check_shape(&specs)?;
        Ok(Self {
            dim: table.dim(),
            specs,
            params: Params::Gcc(table),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.kind(), self.specs.clone(), self.dim)
    }

    pub fn kind(&self) -> StrategyKind {
        match self.params {
            Params::Gcc(_) => StrategyKind::Gcc,
            Params::Linear(_) => StrategyKind::LinearInterpolation,
            Params::Binning(_) => StrategyKind::DiscreteBinning,
            Params::Fourier(_) => StrategyKind::FourierFeature,
        }
    }

    pub fn specs(&self) -> &AnchorSet {
        &self.specs
    }

    /// Width `d` of each attribute embedding.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn centroids(&self) -> Option<&CentroidTable> {
        match &self.params {
            Params::Gcc(t) => Some(t),
            _ => None,
        }
    }

    pub fn embed(&self, s: &QualityVector) -> ConditionEmbedding {
        let mut out = ConditionEmbedding::zeros(self.dim);
        self.embed_into(s, out.as_mut_slice());
        out
    }

    /// Writes the `5 * d` embedding of `s` into `out`.
    pub fn embed_into(&self, s: &QualityVector, out: &mut [f64]) {
        assert_eq!(out.len(), Attribute::COUNT * self.dim, "embedding width");
        let d = self.dim;
        match &self.params {
            Params::Gcc(table) => embed_vector_into(s, table, &self.specs, out),
            Params::Linear(tokens) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let alpha = interpolation_weight(s.get(spec.attribute), spec);
                    let (lo, hi) = (tokens[k].row(0), tokens[k].row(1));
                    for ((o, a), b) in out[k * d..(k + 1) * d].iter_mut().zip(lo).zip(hi) {
                        *o = (1.0 - alpha) * a + alpha * b;
                    }
                }
            }
            Params::Binning(tokens) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let bin = bin_index(s.get(spec.attribute), spec);
                    out[k * d..(k + 1) * d].copy_from_slice(tokens[k].row(bin));
                }
            }
            Params::Fourier(mlps) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let phi = fourier_features(s.get(spec.attribute), spec);
                    mlps[k].forward(&phi, &mut out[k * d..(k + 1) * d]);
                }
            }
        }
    }

    /// Accumulates into `grad` (same kind and shape as `self`) the parameter
    /// gradient given the upstream gradient of the `5 * d` embedding of `s`.
    pub fn backward(
        &self,
        s: &QualityVector,
        upstream: &[f64],
        grad: &mut InjectionStrategy,
    ) -> Result<()> {
        let d = self.dim;
        if upstream.len() != Attribute::COUNT * d {
            return Err(Error::DimensionMismatch {
                context: "upstream embedding gradient",
                expected: Attribute::COUNT * d,
                actual: upstream.len(),
            });
        }
        match (&self.params, &mut grad.params) {
            (Params::Gcc(_), Params::Gcc(g)) => {
                accumulate_centroid_grad(s, &self.specs, upstream, g)?;
            }
            (Params::Linear(_), Params::Linear(g)) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let alpha = interpolation_weight(s.get(spec.attribute), spec);
                    let up = &upstream[k * d..(k + 1) * d];
                    for (gl, u) in g[k].row_mut(0).iter_mut().zip(up) {
                        *gl += (1.0 - alpha) * u;
                    }
                    for (gh, u) in g[k].row_mut(1).iter_mut().zip(up) {
                        *gh += alpha * u;
                    }
                }
            }
            (Params::Binning(_), Params::Binning(g)) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let bin = bin_index(s.get(spec.attribute), spec);
                    for (gt, u) in g[k]
                        .row_mut(bin)
                        .iter_mut()
                        .zip(&upstream[k * d..(k + 1) * d])
                    {
                        *gt += u;
                    }
                }
            }
            (Params::Fourier(mlps), Params::Fourier(g)) => {
                for spec in self.specs.iter() {
                    let k = spec.attribute.index();
                    let phi = fourier_features(s.get(spec.attribute), spec);
                    mlps[k].backward(&phi, &upstream[k * d..(k + 1) * d], &mut g[k]);
                }
            }
            _ => {
                return Err(Error::InvalidConfig(format!(
                    "gradient buffer is {} but encoder is {}",
                    grad.kind(),
                    self.kind()
                )))
            }
        }
        Ok(())
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        match &self.params {
            Params::Gcc(t) => {
                for (attr, b) in Attribute::ALL.iter().zip(t.blocks()) {
                    out.push((format!("centroids.{attr}"), b));
                }
            }
            Params::Linear(ts) => {
                for (attr, b) in Attribute::ALL.iter().zip(ts) {
                    out.push((format!("endpoints.{attr}"), b));
                }
            }
            Params::Binning(ts) => {
                for (attr, b) in Attribute::ALL.iter().zip(ts) {
                    out.push((format!("bins.{attr}"), b));
                }
            }
            Params::Fourier(mlps) => {
                for (attr, m) in Attribute::ALL.iter().zip(mlps) {
                    out.push((format!("fourier.{attr}.w1"), &m.w1));
                    out.push((format!("fourier.{attr}.b1"), &m.b1));
                    out.push((format!("fourier.{attr}.w2"), &m.w2));
                    out.push((format!("fourier.{attr}.b2"), &m.b2));
                }
            }
        }
        out
    }

    /// Mutable parameter tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        match &mut self.params {
            Params::Gcc(t) => t.blocks_mut().iter_mut().collect(),
            Params::Linear(ts) | Params::Binning(ts) => ts.iter_mut().collect(),
            Params::Fourier(mlps) => mlps
                .iter_mut()
                .flat_map(|m| [&mut m.w1, &mut m.b1, &mut m.w2, &mut m.b2])
                .collect(),
        }
    }
}

/// `embed_vector` generalized to every strategy.
pub fn embed_vector_strategy(
    s: &QualityVector,
    strategy: &InjectionStrategy,
) -> ConditionEmbedding {
    strategy.embed(s)
}

/// Position of the clamped score in `[range_min, upper]`, in `[0, 1]`.
fn interpolation_weight(s: f64, spec: &AttributeAnchorSpec) -> f64 {
    let lo = spec.range_min;
    let hi = spec.upper();
    ((spec.clamp(s) - lo) / (hi - lo)).clamp(0.0, 1.0)
}

/// Index of the anchor cell containing `s`. Cell boundaries are the midpoints
/// of adjacent anchors; a score exactly on a boundary belongs to the lower cell.
pub fn bin_index(s: f64, spec: &AttributeAnchorSpec) -> usize {
    let s = spec.clamp(s);
    spec.anchors
        .windows(2)
        .position(|pair| s <= 0.5 * (pair[0] + pair[1]))
        .unwrap_or(spec.len() - 1)
}

fn fourier_features(s: f64, spec: &AttributeAnchorSpec) -> [f64; FOURIER_FEATURES] {
    let x = interpolation_weight(s, spec);
    let mut phi = [0.0; FOURIER_FEATURES];
    for (j, f) in FOURIER_FREQUENCIES.iter().enumerate() {
        let angle = 2.0 * PI * f * x;
        phi[j] = libm::sin(angle);
        phi[FOURIER_FREQUENCIES.len() + j] = libm::cos(angle);
    }
    phi
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::rbf_weights;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rng() -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(5)
    }

    fn random_quality(rng: &mut ChaCha8Rng) -> QualityVector {
        QualityVector::new(
            rng.random_range(0.0..10.0),
            rng.random_range(0.0..1.0),
            rng.random_range(0.0..3500.0),
            rng.random_range(0.0..8.0),
            rng.random_range(0.0..1.0),
        )
    }

    #[test]
    fn linear_interpolation_midpoint_is_endpoint_average() {
        let enc = InjectionStrategy::new(
            StrategyKind::LinearInterpolation,
            AnchorSet::default(),
            4,
            &mut rng(),
        );
        let s = QualityVector::new(5.0, 0.5, 1500.0, 4.0, 0.5);
        let e = enc.embed(&s);
        let tensors = enc.tensors();
        for attr in Attribute::ALL {
            let t = tensors[attr.index()].1;
            for (c, x) in e.attribute(attr).iter().enumerate() {
                assert!((x - 0.5 * (t.get(0, c) + t.get(1, c))).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn binning_boundaries_go_to_the_lower_cell() {
        let specs = AnchorSet::default();
        let aes = specs.get(Attribute::Aes);
        assert_eq!(bin_index(5.0, aes), 4);
        assert_eq!(bin_index(5.0 + 1e-9, aes), 5);
        assert_eq!(bin_index(0.0, aes), 0);
        assert_eq!(bin_index(10.0, aes), 9);
        let cla = specs.get(Attribute::Cla);
        assert_eq!(bin_index(1e6, cla), 9);
        assert_eq!(bin_index(600.0, cla), 1);

        let enc = InjectionStrategy::new(StrategyKind::DiscreteBinning, specs, 3, &mut rng());
        let e = enc.embed(&QualityVector::new(5.0, 0.3, 600.0, 4.0, 0.1));
        let tokens = enc.tensors();
        assert_eq!(e.attribute(Attribute::Aes), tokens[0].1.row(4));
        assert_eq!(e.attribute(Attribute::Cla), tokens[2].1.row(1));
    }

    #[test]
    fn zero_fourier_projection_gives_zero_embedding() {
        let enc = InjectionStrategy::zeros(StrategyKind::FourierFeature, AnchorSet::default(), 4);
        let e = enc.embed(&QualityVector::new(3.0, 0.2, 700.0, 6.0, 0.4));
        assert!(e.as_slice().iter().all(|&x| x == 0.0));
    }

    #[test]
    fn gcc_strategy_delegates_to_embed_vector() {
        let specs = AnchorSet::default();
        let table = CentroidTable::random(&specs, 5, &mut rng());
        let enc = InjectionStrategy::gcc(specs.clone(), table.clone()).unwrap();
        let s = QualityVector::new(2.2, 0.8, 1234.0, 3.3, 0.6);
        assert_eq!(
            embed_vector_strategy(&s, &enc),
            crate::encoder::embed_vector(&s, &table, &specs).unwrap()
        );
    }

    #[test]
    fn gcc_and_binning_agree_at_anchors() {
        let specs = AnchorSet::default();
        for spec in specs.iter() {
            for (i, &p) in spec.anchors.iter().enumerate() {
                let w = rbf_weights(p, spec);
                let dominant = (0..w.len()).fold(0, |b, j| if w[j] > w[b] { j } else { b });
                assert_eq!(dominant, i);
                assert_eq!(bin_index(p, spec), i);
            }
        }
    }

    /// Central differences of `<g, embed(s)>` with respect to every parameter.
    #[test]
    fn strategy_gradients_match_finite_differences() {
        let mut r = rng();
        for kind in StrategyKind::ALL {
            let mut enc = InjectionStrategy::new(kind, AnchorSet::default(), 3, &mut r);
            let s = random_quality(&mut r);
            let g: Vec<f64> = (0..15).map(|_| r.random_range(-1.0..1.0)).collect();
            let mut grad = enc.zeros_like();
            enc.backward(&s, &g, &mut grad).unwrap();
            let analytic: Vec<Vec<f64>> = grad
                .tensors()
                .iter()
                .map(|(_, m)| m.as_slice().to_vec())
                .collect();
            let h = 1e-5;
            let n_tensors = enc.tensors().len();
            for t in 0..n_tensors {
                let len = enc.tensors()[t].1.as_slice().len();
                for idx in 0..len {
                    let orig = enc.tensors_mut()[t].as_slice()[idx];
                    enc.tensors_mut()[t].as_mut_slice()[idx] = orig + h;
                    let up: f64 = enc
                        .embed(&s)
                        .as_slice()
                        .iter()
                        .zip(&g)
                        .map(|(e, g)| e * g)
                        .sum();
                    enc.tensors_mut()[t].as_mut_slice()[idx] = orig - h;
                    let down: f64 = enc
                        .embed(&s)
                        .as_slice()
                        .iter()
                        .zip(&g)
                        .map(|(e, g)| e * g)
                        .sum();
                    enc.tensors_mut()[t].as_mut_slice()[idx] = orig;
                    let fd = (up - down) / (2.0 * h);
                    let an = analytic[t][idx];
                    let err = (fd - an).abs();
                    assert!(
                        err < 1e-9 || err / fd.abs().max(an.abs()) < 1e-6,
                        "{kind} tensor {t} idx {idx}: fd {fd} analytic {an}"
                    );
                }
            }
        }
    }

    #[test]
    fn mismatched_gradient_buffer_is_rejected() {
        let enc = InjectionStrategy::new(StrategyKind::Gcc, AnchorSet::default(), 2, &mut rng());
        let mut wrong =
            InjectionStrategy::zeros(StrategyKind::DiscreteBinning, AnchorSet::default(), 2);
        assert!(enc
            .backward(&QualityVector::default(), &[0.0; 10], &mut wrong)
            .is_err());
        let mut grad = enc.zeros_like();
        assert!(enc
            .backward(&QualityVector::default(), &[0.0; 9], &mut grad)
            .is_err());
    }

    #[test]
    fn strategy_names_parse() {
        for k in StrategyKind::ALL {
            assert_eq!(k.name().parse::<StrategyKind>().unwrap(), k);
        }
        assert!("binning".parse::<StrategyKind>().is_err());
    }
}
