//! Fully connected conditional velocity network.
//!
//! Input row: `[x_t (D) | sin 2πt, cos 2πt, t | class embedding (d_y) | e_aes .. e_luma (5d)]`.
//! Hidden layers use SiLU; the output layer is linear with width `D`. The
//! velocity is
//!
//! ```text
//! v_i = a(t) * x_t,i + b(t) * m_i + c(t) * g(x_t,i, m_i, context)
//! ```
//!
//! where `m = mlp(input)` and `a`, `b`, `c` are learned scalar gains, each a
//! linear combination of the fixed basis [`GATE_BASIS_OFFSETS`]. Near a data
//! point the exact velocity is `(x_t - x) / t`, whose `1/t` gain a plain MLP
//! on this input cannot express.
//!
//! `g` is an optional [`PixelHead`]: one small network applied to every pixel
//! with shared weights. It sees the pixel's own `x_t` and trunk output plus a
//! projection of the row's time, class and quality features, so it can learn
//! a per-pixel nonlinearity (such as pulling values onto a small set of tone
//! levels) that depends on the condition. The flat trunk would need a
//! separate copy of that function for each of the `D` outputs.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::Rng;

use crate::encoder::{AnchorSet, InjectionStrategy, StrategyKind};
use crate::tensor::{matmul_nn, matmul_nt, matmul_tn_acc, silu, silu_grad, Matrix};
use crate::{Attribute, Error, QualityVector, Result};

/// Width of the time embedding `[sin 2πt, cos 2πt, t]`.
pub const TIME_FEATURES: usize = 3;

/// Offsets `c` of the gate basis `1/(t + c)`; the basis also has a constant.
pub const GATE_BASIS_OFFSETS: [f64; 3] = [0.02, 0.1, 0.5];

/// Number of gate basis functions.
pub const GATE_BASIS: usize = GATE_BASIS_OFFSETS.len() + 1;

/// Gate basis at `t`: `[1, 1/(t + c_1), ..]`.
pub fn gate_basis(t: f64) -> [f64; GATE_BASIS] {
    let mut out = [1.0; GATE_BASIS];
    for (o, c) in out[1..].iter_mut().zip(GATE_BASIS_OFFSETS) {
        *o = 1.0 / (t + c);
    }
    out
}

/// Architecture of a [`VelocityNet`].
#[derive(Debug, Clone, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct NetConfig {
    /// Images are `side x side`; `D = side^2`.
    pub side: usize,
    pub hidden: Vec<usize>,
    /// Width `d` of each attribute embedding.
    pub cond_dim: usize,
    /// Width `d_y` of the class embedding.
    pub class_dim: usize,
    /// Number of real classes; the table has one extra null row.
    pub n_classes: usize,
    /// Hidden width of the per-pixel head; `0` leaves the head out.
    #[cfg_attr(feature = "serde", serde(default))]
    pub pixel_hidden: usize,
}

impl NetConfig {
    pub fn image_dim(&self) -> usize {
        self.side * self.side
    }

    pub fn input_width(&self) -> usize {
        self.image_dim() + self.context_width()
    }

    /// Width of the non-pixel part of the input row.
    pub fn context_width(&self) -> usize {
        TIME_FEATURES + self.class_dim + Attribute::COUNT * self.cond_dim
    }

    fn gate_rows(&self) -> usize {
        if self.pixel_hidden > 0 {
            3
        } else {
            2
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.side == 0
            || self.cond_dim == 0
            || self.class_dim == 0
            || self.n_classes == 0
            || self.hidden.contains(&0)
        {
            return Err(Error::InvalidConfig(format!(
                "network widths must be positive: {self:?}"
            )));
        }
        Ok(())
    }
}

/// Affine layer `y = W x + b`, `W: out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub weight: Matrix,
    pub bias: Matrix,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weight: Matrix::zeros(fan_out, fan_in),
            bias: Matrix::zeros(1, fan_out),
        }
    }

    fn random<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let bound = 1.0 / libm::sqrt(fan_in as f64);
        Self {
            weight: Matrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-bound..=bound)),
            bias: Matrix::from_fn(1, fan_out, |_, _| rng.random_range(-bound..=bound)),
        }
    }

    fn forward(&self, input: &Matrix) -> Matrix {
        let mut out = Matrix::zeros(input.rows(), self.weight.rows());
        matmul_nt(input, &self.weight, &mut out);
        let bias = self.bias.as_slice();
        for r in 0..out.rows() {
            for (o, b) in out.row_mut(r).iter_mut().zip(bias) {
                *o += b;
            }
        }
        out
    }
}

/// Weight-shared per-pixel head
/// `g = out . silu(pixel [x_t,i, m_i] + context c + bias) + out_bias`.
#[derive(Debug, Clone, PartialEq)]
pub struct PixelHead {
    /// `H x 2`: weights of the pixel's `x_t` and trunk output.
    pub pixel: Matrix,
    /// `H x C`, applied to the row context `c` (time, class, quality).
    pub context: Matrix,
    pub bias: Matrix,
    /// `1 x H`.
    pub out: Matrix,
    pub out_bias: Matrix,
}

impl PixelHead {
    fn zeros(hidden: usize, context: usize) -> Self {
        Self {
            pixel: Matrix::zeros(hidden, 2),
            context: Matrix::zeros(hidden, context),
            bias: Matrix::zeros(1, hidden),
            out: Matrix::zeros(1, hidden),
            out_bias: Matrix::zeros(1, 1),
        }
    }

    /// Output weights start at zero, so a fresh head contributes nothing.
    fn random<R: Rng + ?Sized>(hidden: usize, context: usize, rng: &mut R) -> Self {
        let pixel_bound = 1.0 / libm::sqrt(2.0);
        let context_bound = 1.0 / libm::sqrt(context as f64);
        Self {
            pixel: Matrix::from_fn(hidden, 2, |_, _| {
                rng.random_range(-pixel_bound..=pixel_bound)
            }),
            context: Matrix::from_fn(hidden, context, |_, _| {
                rng.random_range(-context_bound..=context_bound)
            }),
            bias: Matrix::from_fn(1, hidden, |_, _| rng.random_range(-1.0..=1.0)),
            out: Matrix::zeros(1, hidden),
            out_bias: Matrix::zeros(1, 1),
        }
    }

    fn hidden(&self) -> usize {
        self.pixel.rows()
    }

    /// `context c + bias` for one row.
    fn project_context(&self, ctx: &[f64], out: &mut [f64]) {
        for (k, o) in out.iter_mut().enumerate() {
            *o = self.bias.as_slice()[k]
                + self
                    .context
                    .row(k)
                    .iter()
                    .zip(ctx)
                    .map(|(w, c)| w * c)
                    .sum::<f64>();
        }
    }

    fn tensors(&self) -> [(&'static str, &Matrix); 5] {
        [
            ("pixel", &self.pixel),
            ("context", &self.context),
            ("bias", &self.bias),
            ("out", &self.out),
            ("out_bias", &self.out_bias),
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Matrix; 5] {
        [
            &mut self.pixel,
            &mut self.context,
            &mut self.bias,
            &mut self.out,
            &mut self.out_bias,
        ]
    }
}

/// A batch of network inputs. All slices have one entry per row of `x_t`;
/// `None` selects the null class.
#[derive(Debug, Clone, Copy)]
pub struct NetBatch<'a> {
    pub x_t: &'a Matrix,
    pub t: &'a [f64],
    pub classes: &'a [Option<usize>],
    pub quality: &'a [QualityVector],
}

/// Activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// `inputs[i]` is the input of layer `i`; `inputs[0]` is the assembled row.
    inputs: Vec<Matrix>,
    /// Pre-activations of the hidden layers.
    pre: Vec<Matrix>,
    /// Output of the last layer before gating.
    head: Matrix,
    /// Row context `[time | class | quality]`, `B x C`.
    context: Matrix,
    /// Pixel-head pre-activations, `B x (D * H)`, pixel-major.
    pixel_pre: Matrix,
    /// Pixel-head outputs, `B x D`.
    pixel_out: Matrix,
}

/// The toy conditional velocity model `v(x_t, t, y, s)`.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityNet {
    config: NetConfig,
    layers: Vec<Dense>,
    /// `rows x GATE_BASIS`: row 0 weights the `x_t` gain, row 1 the MLP gain
    /// and row 2, if present, the pixel-head gain.
    gate: Matrix,
    pixel_head: Option<PixelHead>,
    class_table: Matrix,
    encoder: InjectionStrategy,
}

impl VelocityNet {
    /// Random initialization: layers use `U[-1/sqrt(fan_in), 1/sqrt(fan_in)]`,
    /// the class table `U[-1/sqrt(d_y), 1/sqrt(d_y)]`. The gates start at
    /// `a = 0`, `b = 1`, `c = 1` with a zero pixel-head output, i.e. the plain
    /// MLP.
    pub fn new<R: Rng + ?Sized>(
        config: NetConfig,
        kind: StrategyKind,
        specs: AnchorSet,
        rng: &mut R,
    ) -> Result<Self> {
        config.validate()?;
        let widths = layer_widths(&config);
        let layers = widths
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], rng))
            .collect();
        let bound = 1.0 / libm::sqrt(config.class_dim as f64);
        let class_table = Matrix::from_fn(config.n_classes + 1, config.class_dim, |_, _| {
            rng.random_range(-bound..=bound)
        });
        let encoder = InjectionStrategy::new(kind, specs, config.cond_dim, rng);
        let pixel_head = (config.pixel_hidden > 0)
            .then(|| PixelHead::random(config.pixel_hidden, config.context_width(), rng));
        let mut gate = Matrix::zeros(config.gate_rows(), GATE_BASIS);
        for r in 1..gate.rows() {
            gate.row_mut(r)[0] = 1.0;
        }
        Ok(Self {
            config,
            layers,
            gate,
            pixel_head,
            class_table,
            encoder,
        })
    }

    /// All parameters zero; also used as a gradient buffer.
    pub fn zeros(config: NetConfig, kind: StrategyKind, specs: AnchorSet) -> Result<Self> {
        config.validate()?;
        let widths = layer_widths(&config);
        let layers = widths
            .windows(2)
            .map(|w| Dense::zeros(w[0], w[1]))
            .collect();
        let class_table = Matrix::zeros(config.n_classes + 1, config.class_dim);
        let encoder = InjectionStrategy::zeros(kind, specs, config.cond_dim);
        Ok(Self {
            gate: Matrix::zeros(config.gate_rows(), GATE_BASIS),
            pixel_head: (config.pixel_hidden > 0)
                .then(|| PixelHead::zeros(config.pixel_hidden, config.context_width())),
            config,
            layers,
            class_table,
            encoder,
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            config: self.config.clone(),
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weight.cols(), l.weight.rows()))
                .collect(),
            gate: Matrix::zeros(self.gate.rows(), GATE_BASIS),
            pixel_head: self
                .pixel_head
                .as_ref()
                .map(|h| PixelHead::zeros(h.hidden(), self.config.context_width())),
            class_table: Matrix::zeros(self.class_table.rows(), self.class_table.cols()),
            encoder: self.encoder.zeros_like(),
        }
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn encoder(&self) -> &InjectionStrategy {
        &self.encoder
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Dense] {
        &mut self.layers
    }

    pub fn image_dim(&self) -> usize {
        self.config.image_dim()
    }

    /// Index of the null-class row.
    pub fn null_class(&self) -> usize {
        self.config.n_classes
    }

    /// Named parameter tensors in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Matrix)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layers.{i}.weight"), &l.weight));
            out.push((format!("layers.{i}.bias"), &l.bias));
        }
        out.push((String::from("gate"), &self.gate));
        if let Some(head) = &self.pixel_head {
            for (name, m) in head.tensors() {
                out.push((format!("pixel_head.{name}"), m));
            }
        }
        out.push((String::from("class_table"), &self.class_table));
        for (name, m) in self.encoder.tensors() {
            out.push((format!("encoder.{name}"), m));
        }
        out
    }

    /// Mutable tensors, same order as [`Self::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out: Vec<&mut Matrix> = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out.push(&mut self.gate);
        if let Some(head) = &mut self.pixel_head {
            out.extend(head.tensors_mut());
        }
        out.push(&mut self.class_table);
        out.extend(self.encoder.tensors_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.as_slice().len()).sum()
    }

    fn class_row(&self, class: Option<usize>) -> Result<usize> {
        match class {
            None => Ok(self.null_class()),
            Some(c) if c < self.config.n_classes => Ok(c),
            Some(c) => Err(Error::InvalidConfig(format!(
                "class {c} out of range (model has {} classes)",
                self.config.n_classes
            ))),
        }
    }

    fn check_batch(&self, batch: &NetBatch<'_>) -> Result<()> {
        let b = batch.x_t.rows();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        if batch.x_t.cols() != self.image_dim() {
            return Err(Error::DimensionMismatch {
                context: "x_t width",
                expected: self.image_dim(),
                actual: batch.x_t.cols(),
            });
        }
        for (context, len) in [
            ("time batch", batch.t.len()),
            ("class batch", batch.classes.len()),
            ("quality batch", batch.quality.len()),
        ] {
            if len != b {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: b,
                    actual: len,
                });
            }
        }
        Ok(())
    }

    /// Writes the concatenated conditioning input for one row.
    fn write_condition(&self, row: &mut [f64], t: f64, class_row: usize, embedding: &[f64]) {
        let d_img = self.image_dim();
        let d_y = self.config.class_dim;
        let time = &mut row[d_img..d_img + TIME_FEATURES];
        time[0] = libm::sin(2.0 * PI * t);
        time[1] = libm::cos(2.0 * PI * t);
        time[2] = t;
        let start = d_img + TIME_FEATURES;
        row[start..start + d_y].copy_from_slice(self.class_table.row(class_row));
        row[start + d_y..].copy_from_slice(embedding);
    }

    fn assemble(&self, batch: &NetBatch<'_>) -> Result<Matrix> {
        self.check_batch(batch)?;
        let d_img = self.image_dim();
        let mut input = Matrix::zeros(batch.x_t.rows(), self.config.input_width());
        let mut embedding = vec![0.0; Attribute::COUNT * self.config.cond_dim];
        for r in 0..batch.x_t.rows() {
            let class_row = self.class_row(batch.classes[r])?;
            self.encoder.embed_into(&batch.quality[r], &mut embedding);
            let row = input.row_mut(r);
            row[..d_img].copy_from_slice(batch.x_t.row(r));
            self.write_condition(row, batch.t[r], class_row, &embedding);
        }
        Ok(input)
    }

    /// Output gains `(a, b, c)` at `t`; `c` is zero without a pixel head.
    pub fn gains(&self, t: f64) -> (f64, f64, f64) {
        let basis = gate_basis(t);
        let dot = |w: &[f64]| w.iter().zip(&basis).map(|(w, p)| w * p).sum::<f64>();
        let c = if self.gate.rows() > 2 {
            dot(self.gate.row(2))
        } else {
            0.0
        };
        (dot(self.gate.row(0)), dot(self.gate.row(1)), c)
    }

    pub fn pixel_head(&self) -> Option<&PixelHead> {
        self.pixel_head.as_ref()
    }

    /// Pixel-head pre-activations and outputs for all rows.
    fn run_pixel_head(
        &self,
        head: &PixelHead,
        x_t: &Matrix,
        trunk: &Matrix,
        context: &Matrix,
    ) -> (Matrix, Matrix) {
        let d = self.image_dim();
        let h = head.hidden();
        let mut pre = Matrix::zeros(x_t.rows(), d * h);
        let mut out = Matrix::zeros(x_t.rows(), d);
        let mut ctx = vec![0.0; h];
        let (wx, wm): (Vec<f64>, Vec<f64>) = head.pixel.rows_iter().map(|w| (w[0], w[1])).unzip();
        let w_out = head.out.as_slice();
        let b_out = head.out_bias.as_slice()[0];
        for r in 0..x_t.rows() {
            head.project_context(context.row(r), &mut ctx);
            let pre_row = pre.row_mut(r);
            let out_row = out.row_mut(r);
            for i in 0..d {
                let (x, m) = (x_t.get(r, i), trunk.get(r, i));
                let z = &mut pre_row[i * h..(i + 1) * h];
                let mut g = b_out;
                for k in 0..h {
                    z[k] = wx[k] * x + wm[k] * m + ctx[k];
                    g += w_out[k] * silu(z[k]);
                }
                out_row[i] = g;
            }
        }
        (pre, out)
    }

    fn run_layers(
        &self,
        x_t: &Matrix,
        t: &[f64],
        input: Matrix,
        mut cache: Option<&mut ForwardCache>,
    ) -> Matrix {
        let last = self.layers.len() - 1;
        let d_img = self.image_dim();
        let context = Matrix::from_fn(input.rows(), self.config.context_width(), |r, c| {
            input.get(r, d_img + c)
        });
        let mut h = input;
        for (i, layer) in self.layers.iter().enumerate() {
            let pre = layer.forward(&h);
            if i == last {
                let pixel = self
                    .pixel_head
                    .as_ref()
                    .map(|head| self.run_pixel_head(head, x_t, &pre, &context));
                let mut out = Matrix::zeros(pre.rows(), pre.cols());
                for r in 0..pre.rows() {
                    let (a, b, c) = self.gains(t[r]);
                    for ((o, m), x) in out.row_mut(r).iter_mut().zip(pre.row(r)).zip(x_t.row(r)) {
                        *o = a * x + b * m;
                    }
                    if let Some((_, g)) = &pixel {
                        for (o, g) in out.row_mut(r).iter_mut().zip(g.row(r)) {
                            *o += c * g;
                        }
                    }
                }
                if let Some(cache) = cache.as_deref_mut() {
                    cache.inputs.push(h);
                    cache.head = pre;
                    cache.context = context;
                    if let Some((z, g)) = pixel {
                        cache.pixel_pre = z;
                        cache.pixel_out = g;
                    }
                }
                return out;
            }
            let mut act = pre.clone();
            act.as_mut_slice().iter_mut().for_each(|v| *v = silu(*v));
            if let Some(c) = cache.as_deref_mut() {
                c.inputs.push(h);
                c.pre.push(pre);
            }
            h = act;
        }
        unreachable!("network has at least one layer")
    }

    /// Batched forward pass.
    pub fn forward(&self, batch: &NetBatch<'_>) -> Result<Matrix> {
        let input = self.assemble(batch)?;
        Ok(self.run_layers(batch.x_t, batch.t, input, None))
    }

    /// Forward pass keeping the activations needed by [`Self::backward`].
    pub fn forward_cached(&self, batch: &NetBatch<'_>) -> Result<(Matrix, ForwardCache)> {
        let input = self.assemble(batch)?;
        let mut cache = ForwardCache {
            inputs: Vec::with_capacity(self.layers.len()),
            pre: Vec::with_capacity(self.layers.len()),
            head: Matrix::zeros(0, 0),
            context: Matrix::zeros(0, 0),
            pixel_pre: Matrix::zeros(0, 0),
            pixel_out: Matrix::zeros(0, 0),
        };
        let out = self.run_layers(batch.x_t, batch.t, input, Some(&mut cache));
        Ok((out, cache))
    }

    /// Reverse-mode pass: accumulates into `grads` the gradient of a scalar
    /// loss whose gradient with respect to the network output is `d_out`.
    pub fn backward(
        &self,
        batch: &NetBatch<'_>,
        cache: &ForwardCache,
        d_out: &Matrix,
        grads: &mut VelocityNet,
    ) -> Result<()> {
        let b = batch.x_t.rows();
        if d_out.shape() != (b, self.image_dim()) {
            return Err(Error::DimensionMismatch {
                context: "output gradient",
                expected: b * self.image_dim(),
                actual: d_out.rows() * d_out.cols(),
            });
        }
        let d_img = self.image_dim();
        let mut delta = d_out.clone();
        let mut d_context = Matrix::zeros(b, self.config.context_width());
        for r in 0..b {
            let basis = gate_basis(batch.t[r]);
            let (_, gain, c) = self.gains(batch.t[r]);
            let d_row = d_out.row(r);
            let dot = |v: &[f64]| d_row.iter().zip(v).map(|(d, v)| d * v).sum::<f64>();
            let mut d_gains = [dot(batch.x_t.row(r)), dot(cache.head.row(r)), 0.0];
            if self.pixel_head.is_some() {
                d_gains[2] = dot(cache.pixel_out.row(r));
            }
            for (g, d_gain) in d_gains.iter().enumerate().take(self.gate.rows()) {
                for (k, p) in basis.iter().enumerate() {
                    grads.gate.row_mut(g)[k] += d_gain * p;
                }
            }
            delta.row_mut(r).iter_mut().for_each(|d| *d *= gain);
            if let (Some(head), Some(g_head)) = (&self.pixel_head, grads.pixel_head.as_mut()) {
                self.pixel_head_backward(
                    head,
                    g_head,
                    batch.x_t.row(r),
                    cache,
                    r,
                    d_row,
                    c,
                    delta.row_mut(r),
                    d_context.row_mut(r),
                );
            }
        }
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let g = &mut grads.layers[i];
            matmul_tn_acc(&delta, &cache.inputs[i], &mut g.weight);
            for r in 0..delta.rows() {
                for (gb, d) in g.bias.as_mut_slice().iter_mut().zip(delta.row(r)) {
                    *gb += d;
                }
            }
            let mut d_in = Matrix::zeros(delta.rows(), layer.weight.cols());
            matmul_nn(&delta, &layer.weight, &mut d_in);
            if i > 0 {
                for (d, z) in d_in
                    .as_mut_slice()
                    .iter_mut()
                    .zip(cache.pre[i - 1].as_slice())
                {
                    *d *= silu_grad(*z);
                }
            }
            delta = d_in;
        }
        // `delta` is now the gradient with respect to the assembled input row.
        for r in 0..b {
            for (d, g) in delta.row_mut(r)[d_img..].iter_mut().zip(d_context.row(r)) {
                *d += g;
            }
        }
        let d_y = self.config.class_dim;
        let class_start = d_img + TIME_FEATURES;
        let cond_start = class_start + d_y;
        for r in 0..b {
            let row = delta.row(r);
            let class_row = self.class_row(batch.classes[r])?;
            for (g, d) in grads
                .class_table
                .row_mut(class_row)
                .iter_mut()
                .zip(&row[class_start..cond_start])
            {
                *g += d;
            }
            self.encoder
                .backward(&batch.quality[r], &row[cond_start..], &mut grads.encoder)?;
        }
        Ok(())
    }
}

impl VelocityNet {
    /// Pixel-head part of the backward pass for row `r`. Adds the head's
    /// contribution to the trunk-output gradient `d_trunk` and the context
    /// gradient `d_context`.
    #[allow(clippy::too_many_arguments)]
    fn pixel_head_backward(
        &self,
        head: &PixelHead,
        grads: &mut PixelHead,
        x_t: &[f64],
        cache: &ForwardCache,
        r: usize,
        d_out: &[f64],
        gain: f64,
        d_trunk: &mut [f64],
        d_context: &mut [f64],
    ) {
        let h = head.hidden();
        let pre = cache.pixel_pre.row(r);
        let trunk = cache.head.row(r);
        let w_out = head.out.as_slice();
        let mut d_pre_sum = vec![0.0; h];
        for i in 0..x_t.len() {
            let d_g = gain * d_out[i];
            if d_g == 0.0 {
                continue;
            }
            grads.out_bias.as_mut_slice()[0] += d_g;
            let z = &pre[i * h..(i + 1) * h];
            let mut d_m = 0.0;
            for k in 0..h {
                grads.out.as_mut_slice()[k] += d_g * silu(z[k]);
                let dz = d_g * w_out[k] * silu_grad(z[k]);
                let gp = grads.pixel.row_mut(k);
                gp[0] += dz * x_t[i];
                gp[1] += dz * trunk[i];
                d_m += dz * head.pixel.get(k, 1);
                d_pre_sum[k] += dz;
            }
            d_trunk[i] += d_m;
        }
        let ctx = cache.context.row(r);
        for (k, dz) in d_pre_sum.iter().enumerate() {
            grads.bias.as_mut_slice()[k] += dz;
            for (j, (g, w)) in grads
                .context
                .row_mut(k)
                .iter_mut()
                .zip(head.context.row(k))
                .enumerate()
            {
                *g += dz * ctx[j];
                d_context[j] += dz * w;
            }
        }
    }
}

fn layer_widths(config: &NetConfig) -> Vec<usize> {
    let mut widths = Vec::with_capacity(config.hidden.len() + 2);
    widths.push(config.input_width());
    widths.extend_from_slice(&config.hidden);
    widths.push(config.image_dim());
    widths
}

/// Anything that predicts a velocity for a batch of states sharing `t`, the
/// class condition and the quality condition.
pub trait VelocityModel {
    fn image_dim(&self) -> usize;

    fn velocity(
        &self,
        x_t: &Matrix,
        t: f64,
        class: Option<usize>,
        s: &QualityVector,
    ) -> Result<Matrix>;
}

impl VelocityModel for VelocityNet {
    fn image_dim(&self) -> usize {
        self.config.image_dim()
    }

    fn velocity(
        &self,
        x_t: &Matrix,
        t: f64,
        class: Option<usize>,
        s: &QualityVector,
    ) -> Result<Matrix> {
        if x_t.rows() == 0 {
            return Err(Error::EmptyBatch);
        }
        if x_t.cols() != self.image_dim() {
            return Err(Error::DimensionMismatch {
                context: "x_t width",
                expected: self.image_dim(),
                actual: x_t.cols(),
            });
        }
        let class_row = self.class_row(class)?;
        let embedding = self.encoder.embed(s);
        let d_img = self.image_dim();
        let mut input = Matrix::zeros(x_t.rows(), self.config.input_width());
        for r in 0..x_t.rows() {
            let row = input.row_mut(r);
            row[..d_img].copy_from_slice(x_t.row(r));
            self.write_condition(row, t, class_row, embedding.as_slice());
        }
        Ok(self.run_layers(x_t, &vec![t; x_t.rows()], input, None))
    }
}

impl<M: VelocityModel + ?Sized> VelocityModel for &M {
    fn image_dim(&self) -> usize {
        (**self).image_dim()
    }

    fn velocity(
        &self,
        x_t: &Matrix,
        t: f64,
        class: Option<usize>,
        s: &QualityVector,
    ) -> Result<Matrix> {
        (**self).velocity(x_t, t, class, s)
    }
}
