//! Condition sweeps: sample at a series of targets for one attribute and
//! measure what comes out.

use lacon_core::flowmodel::VelocityNet;
use lacon_core::sampler::{
    mean_attribute, measure_outputs, sample, GuidanceMode, GuidanceSpec, SamplerConfig,
};
use lacon_core::signals::{CornerTagWatermarkScorer, HeuristicAestheticScorer};
use lacon_core::{Attribute, QualityVector};

use crate::error::Result;
use crate::tables::EvalRow;

#[derive(Debug, Clone, PartialEq)]
pub struct Sweep {
    pub attribute: Attribute,
    pub targets: Vec<f64>,
}

impl std::str::FromStr for Sweep {
    type Err = crate::error::Error;

    /// `luma=0.3,0.5,0.8`
    fn from_str(s: &str) -> Result<Self> {
        let bad = || crate::error::Error::Config(format!("bad sweep `{s}` (expected attr=v1,v2,...)"));
        let (attr, values) = s.split_once('=').ok_or_else(bad)?;
        let targets = values
            .split(',')
            .map(|v| v.trim().parse::<f64>().map_err(|_| bad()))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            attribute: attr.trim().parse()?,
            targets,
        })
    }
}

/// Guidance for one sweep point. LACON-S holds the target inside `s_hold`;
/// LACON-A moves `s_high` and weighs the swept attribute with `omega_k`.
pub fn sweep_guidance(
    base: &GuidanceSpec,
    mode: GuidanceMode,
    attribute: Attribute,
    target: f64,
    omega_k: f64,
) -> GuidanceSpec {
    let mut g = *base;
    match mode {
        GuidanceMode::Cfg => {}
        GuidanceMode::LaconS => g.s_hold = g.s_base.with(attribute, target),
        GuidanceMode::LaconA => {
            g.s_high.set(attribute, target);
            g.omega[attribute.index()] = omega_k;
        }
    }
    g
}

pub struct SweepResult {
    pub rows: Vec<EvalRow>,
    /// Measured quality of every sample, per (omega_c, target).
    pub measured: Vec<(f64, f64, Vec<QualityVector>)>,
}

#[allow(clippy::too_many_arguments)]
pub fn run_sweep(
    net: &VelocityNet,
    base: &GuidanceSpec,
    mode: GuidanceMode,
    sweep: &Sweep,
    omega_cs: &[f64],
    omega_k: f64,
    class: usize,
    sampler: &SamplerConfig,
    target_long_side: usize,
) -> Result<SweepResult> {
    let side = net.config().side;
    let mut rows = Vec::new();
    let mut measured = Vec::new();
    for &omega_c in omega_cs {
        for &target in &sweep.targets {
            let mut g = sweep_guidance(base, mode, sweep.attribute, target, omega_k);
            g.omega_c = omega_c;
            let images = sample(net, mode, class, &g, sampler)?;
            let q = measure_outputs(
                &images,
                side,
                &HeuristicAestheticScorer,
                &CornerTagWatermarkScorer,
                target_long_side,
            )?;
            log::info!(
                "{mode} omega_c={omega_c} {}={target}: mean {} {:.4}",
                sweep.attribute,
                sweep.attribute,
                mean_attribute(&q, sweep.attribute)
            );
            for attr in Attribute::ALL {
                rows.push(EvalRow {
                    mode: mode.to_string(),
                    omega_c,
                    swept: sweep.attribute.to_string(),
                    target,
                    attribute: attr.to_string(),
                    mean_measured: mean_attribute(&q, attr),
                    samples: q.len(),
                });
            }
            measured.push((omega_c, target, q));
        }
    }
    Ok(SweepResult { rows, measured })
}
