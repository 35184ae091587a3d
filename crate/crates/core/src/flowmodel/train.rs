//! Minibatch Adam training loop.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::loss::{draw_samples, fm_loss_with_draws, zero_velocity_loss, TrainingExample};
use super::net::{NetConfig, VelocityNet};
use crate::encoder::{AnchorSet, StrategyKind};
use crate::tensor::Matrix;
use crate::{Error, Result};

/// Training loss above this value aborts the run.
pub const DIVERGENCE_LIMIT: f64 = 1e6;

/// Learning-rate schedule over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(rename_all = "lowercase"))]
pub enum LrSchedule {
    #[default]
    Constant,
    /// Half-cosine from the base rate down to zero at the last step.
    Cosine,
}

impl LrSchedule {
    /// Rate for optimizer step `step` (0-based) of `total`.
    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            Self::Constant => base,
            Self::Cosine => {
                let progress = step as f64 / total.max(1) as f64;
                0.5 * base * (1.0 + libm::cos(core::f64::consts::PI * progress))
            }
        }
    }
}

/// Optimization and architecture hyperparameters.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct TrainConfig {
    pub seed: u64,
    pub batch_size: usize,
    pub steps: usize,
    /// Base learning rate.
    pub learning_rate: f64,
    pub lr_schedule: LrSchedule,
    /// Decay of the exponential moving average of the weights; `0` disables
    /// the average and returns the last iterate.
    pub ema_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Probability of replacing the class by the null class.
    pub p_drop: f64,
    pub hidden: Vec<usize>,
    /// Hidden width of the per-pixel head; `0` disables it.
    pub pixel_hidden: usize,
    pub cond_dim: usize,
    pub class_dim: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            batch_size: 128,
            steps: 5000,
            learning_rate: 1e-3,
            lr_schedule: LrSchedule::default(),
            ema_decay: 0.0,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            p_drop: 0.1,
            hidden: vec![256, 256, 256],
            pixel_hidden: 16,
            cond_dim: 8,
            class_dim: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.p_drop) {
            return Err(Error::InvalidConfig(format!(
                "p_drop must be in [0, 1), got {}",
                self.p_drop
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "learning_rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.ema_decay) {
            return Err(Error::InvalidConfig(format!(
                "ema_decay must be in [0, 1), got {}",
                self.ema_decay
            )));
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return Err(Error::InvalidConfig("Adam betas must be in [0, 1)".into()));
        }
        Ok(())
    }

    pub fn net_config(&self, side: usize, n_classes: usize) -> NetConfig {
        NetConfig {
            side,
            hidden: self.hidden.clone(),
            pixel_hidden: self.pixel_hidden,
            cond_dim: self.cond_dim,
            class_dim: self.class_dim,
            n_classes,
        }
    }
}

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(net: &VelocityNet, lr: f64, beta1: f64, beta2: f64, eps: f64) -> Self {
        let sizes: Vec<usize> = net
            .tensors()
            .iter()
            .map(|(_, m)| m.as_slice().len())
            .collect();
        Self {
            lr,
            beta1,
            beta2,
            eps,
            step: 0,
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn learning_rate(&self) -> f64 {
        self.lr
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.lr = lr;
    }

    pub fn update(&mut self, net: &mut VelocityNet, grads: &VelocityNet) {
        self.step += 1;
        let c1 = 1.0 - libm::pow(self.beta1, self.step as f64);
        let c2 = 1.0 - libm::pow(self.beta2, self.step as f64);
        let grad_tensors: Vec<&Matrix> = grads.tensors().into_iter().map(|(_, m)| m).collect();
        for (k, param) in net.tensors_mut().into_iter().enumerate() {
            let g = grad_tensors[k].as_slice();
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (i, p) in param.as_mut_slice().iter_mut().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                *p -= self.lr * m_hat / (libm::sqrt(v_hat) + self.eps);
            }
        }
    }
}

/// Result of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weight average if `ema_decay > 0`, else the last iterate.
    pub net: VelocityNet,
    /// Minibatch loss per step.
    pub losses: Vec<f64>,
    /// Loss of the all-zero predictor on the same minibatch and draws.
    pub baseline_losses: Vec<f64>,
}

impl TrainOutcome {
    /// Mean of the last `window` entries of `values`.
    pub fn tail_mean(values: &[f64], window: usize) -> f64 {
        let w = window.clamp(1, values.len().max(1));
        let tail = &values[values.len().saturating_sub(w)..];
        tail.iter().sum::<f64>() / tail.len().max(1) as f64
    }
}

/// Trains a fresh network. `observer` is called after every step with the
/// step index and minibatch loss.
pub fn train(
    examples: &[TrainingExample],
    side: usize,
    config: &TrainConfig,
    kind: StrategyKind,
    specs: AnchorSet,
    observer: &mut dyn FnMut(usize, f64),
) -> Result<TrainOutcome> {
    config.validate()?;
    if examples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let n_classes = examples.iter().map(|e| e.class).max().unwrap_or(0) + 1;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut net = VelocityNet::new(config.net_config(side, n_classes), kind, specs, &mut rng)?;
    for ex in examples {
        if ex.image.len() != net.image_dim() {
            return Err(Error::DimensionMismatch {
                context: "example image",
                expected: net.image_dim(),
                actual: ex.image.len(),
            });
        }
    }
    let mut adam = Adam::new(
        &net,
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.adam_eps,
    );
    let mut ema = (config.ema_decay > 0.0).then(|| net.clone());
    let batch_size = config.batch_size.min(examples.len());
    let mut losses = Vec::with_capacity(config.steps);
    let mut baseline_losses = Vec::with_capacity(config.steps);
    for step in 0..config.steps {
        let batch: Vec<&TrainingExample> = sample(&mut rng, examples.len(), batch_size)
            .into_iter()
            .map(|i| &examples[i])
            .collect();
        let draws = draw_samples(batch.len(), net.image_dim(), config.p_drop, &mut rng);
        let out = fm_loss_with_draws(&net, &batch, &draws)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss { step });
        }
        if out.loss > DIVERGENCE_LIMIT {
            return Err(Error::Diverged {
                step,
                loss: out.loss,
            });
        }
        adam.set_learning_rate(
            config
                .lr_schedule
                .rate(config.learning_rate, step, config.steps),
        );
        adam.update(&mut net, &out.grads);
        if let Some(avg) = ema.as_mut() {
            let d = config.ema_decay;
            for (a, p) in avg.tensors_mut().into_iter().zip(net.tensors()) {
                for (a, p) in a.as_mut_slice().iter_mut().zip(p.1.as_slice()) {
                    *a = d * *a + (1.0 - d) * p;
                }
            }
        }
        losses.push(out.loss);
        baseline_losses.push(zero_velocity_loss(&batch, &draws));
        observer(step, out.loss);
    }
    Ok(TrainOutcome {
        net: ema.unwrap_or(net),
        losses,
        baseline_losses,
    })
}
