//! Conditional flow-matching loss with classifier-free dropout.

use alloc::vec::Vec;

use rand::Rng;
use rand_distr::{Open01, StandardNormal};

use super::net::{NetBatch, VelocityNet};
use crate::tensor::Matrix;
use crate::{Error, QualityVector, Result};

/// One training pair: a flattened image in `[-1, 1]`, its class and labels.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub image: Vec<f64>,
    pub class: usize,
    pub quality: QualityVector,
}

/// Random quantities for one example in one step.
#[derive(Debug, Clone, PartialEq)]
pub struct SampleDraw {
    pub t: f64,
    pub drop_class: bool,
    pub noise: Vec<f64>,
}

/// Draws `t ~ U(0, 1)`, the dropout coin, then `D` standard normals, in that
/// order for each example.
pub fn draw_samples<R: Rng + ?Sized>(
    count: usize,
    dim: usize,
    p_drop: f64,
    rng: &mut R,
) -> Vec<SampleDraw> {
    (0..count)
        .map(|_| {
            let t: f64 = rng.sample(Open01);
            let drop_class = rng.random::<f64>() < p_drop;
            let noise = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            SampleDraw {
                t,
                drop_class,
                noise,
            }
        })
        .collect()
}

/// `x_t = (1 - t) x + t eps`.
pub fn interpolate(x: &[f64], noise: &[f64], t: f64) -> Result<Vec<f64>> {
    if x.len() != noise.len() {
        return Err(Error::DimensionMismatch {
            context: "interpolation noise",
            expected: x.len(),
            actual: noise.len(),
        });
    }
    Ok(x.iter()
        .zip(noise)
        .map(|(a, e)| (1.0 - t) * a + t * e)
        .collect())
}

/// Loss value and parameter gradient.
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    pub grads: VelocityNet,
}

struct Prepared {
    x_t: Matrix,
    target: Matrix,
    t: Vec<f64>,
    classes: Vec<Option<usize>>,
    quality: Vec<QualityVector>,
}

fn prepare(
    net: &VelocityNet,
    batch: &[&TrainingExample],
    draws: &[SampleDraw],
) -> Result<Prepared> {
    if batch.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if draws.len() != batch.len() {
        return Err(Error::DimensionMismatch {
            context: "draws per batch",
            expected: batch.len(),
            actual: draws.len(),
        });
    }
    let d = net.image_dim();
    let mut x_t = Matrix::zeros(batch.len(), d);
    let mut target = Matrix::zeros(batch.len(), d);
    for (r, (ex, draw)) in batch.iter().zip(draws).enumerate() {
        for (context, len) in [
            ("example image", ex.image.len()),
            ("noise", draw.noise.len()),
        ] {
            if len != d {
                return Err(Error::DimensionMismatch {
                    context,
                    expected: d,
                    actual: len,
                });
            }
        }
        let t = draw.t;
        for (((xt, tg), x), e) in x_t
            .row_mut(r)
            .iter_mut()
            .zip(target.row_mut(r))
            .zip(&ex.image)
            .zip(&draw.noise)
        {
            *xt = (1.0 - t) * x + t * e;
            *tg = e - x;
        }
    }
    Ok(Prepared {
        x_t,
        target,
        t: draws.iter().map(|d| d.t).collect(),
        classes: batch
            .iter()
            .zip(draws)
            .map(|(ex, d)| if d.drop_class { None } else { Some(ex.class) })
            .collect(),
        quality: batch.iter().map(|ex| ex.quality).collect(),
    })
}

fn batch_view(p: &Prepared) -> NetBatch<'_> {
    NetBatch {
        x_t: &p.x_t,
        t: &p.t,
        classes: &p.classes,
        quality: &p.quality,
    }
}

fn mse(out: &Matrix, target: &Matrix) -> f64 {
    let n = out.as_slice().len() as f64;
    out.as_slice()
        .iter()
        .zip(target.as_slice())
        .map(|(o, t)| (o - t) * (o - t))
        .sum::<f64>()
        / n
}

/// Mean squared error over `B * D` entries for fixed draws, without gradients.
pub fn fm_loss_value(
    net: &VelocityNet,
    batch: &[&TrainingExample],
    draws: &[SampleDraw],
) -> Result<f64> {
    let p = prepare(net, batch, draws)?;
    let out = net.forward(&batch_view(&p))?;
    Ok(mse(&out, &p.target))
}

/// Loss and gradient for fixed draws.
pub fn fm_loss_with_draws(
    net: &VelocityNet,
    batch: &[&TrainingExample],
    draws: &[SampleDraw],
) -> Result<LossOutput> {
    let p = prepare(net, batch, draws)?;
    let view = batch_view(&p);
    let (out, cache) = net.forward_cached(&view)?;
    let loss = mse(&out, &p.target);
    let scale = 2.0 / out.as_slice().len() as f64;
    let mut d_out = out;
    for (o, t) in d_out.as_mut_slice().iter_mut().zip(p.target.as_slice()) {
        *o = scale * (*o - t);
    }
    let mut grads = net.zeros_like();
    net.backward(&view, &cache, &d_out, &mut grads)?;
    Ok(LossOutput { loss, grads })
}

/// Draws the per-example randomness from `rng` and evaluates the loss.
pub fn fm_loss<R: Rng + ?Sized>(
    net: &VelocityNet,
    batch: &[&TrainingExample],
    p_drop: f64,
    rng: &mut R,
) -> Result<LossOutput> {
    let draws = draw_samples(batch.len(), net.image_dim(), p_drop, rng);
    fm_loss_with_draws(net, batch, &draws)
}

/// Loss of the predictor that always outputs zero, for the same draws.
pub fn zero_velocity_loss(batch: &[&TrainingExample], draws: &[SampleDraw]) -> f64 {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (ex, draw) in batch.iter().zip(draws) {
        for (x, e) in ex.image.iter().zip(&draw.noise) {
            sum += (e - x) * (e - x);
            n += 1;
        }
    }
    sum / n.max(1) as f64
}
