//! Toy conditional flow-matching model: network, loss, optimizer and the
//! synthetic corpus it is trained on.

pub mod loss;
pub mod net;
pub mod synth;
pub mod train;

pub use loss::{
    draw_samples, fm_loss, fm_loss_value, fm_loss_with_draws, interpolate, zero_velocity_loss,
    LossOutput, SampleDraw, TrainingExample,
};
pub use net::{
    gate_basis, Dense, ForwardCache, NetBatch, NetConfig, VelocityModel, VelocityNet, GATE_BASIS,
    GATE_BASIS_OFFSETS, TIME_FEATURES,
};
pub use synth::{
    make_synthetic_corpus, render, synthetic_params, PatternParams, SyntheticSample, SYNTH_SIDE,
};
pub use train::{train, Adam, LrSchedule, TrainConfig, TrainOutcome, DIVERGENCE_LIMIT};

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::{AnchorSet, StrategyKind};
    use crate::QualityVector;
    use alloc::vec;
    use alloc::vec::Vec;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_config() -> NetConfig {
        NetConfig {
            side: 2,
            hidden: vec![8, 8],
            cond_dim: 4,
            class_dim: 4,
            n_classes: 2,
            pixel_hidden: 3,
        }
    }

    fn tiny_examples() -> Vec<TrainingExample> {
        vec![
            TrainingExample {
                image: vec![0.5, -0.2, 0.9, -1.0],
                class: 0,
                quality: QualityVector::new(3.0, 0.2, 700.0, 4.5, 0.3),
            },
            TrainingExample {
                image: vec![-0.3, 0.1, 0.0, 0.7],
                class: 1,
                quality: QualityVector::new(8.2, 0.9, 4000.0, 6.1, 0.8),
            },
            TrainingExample {
                image: vec![1.0, 1.0, -0.5, 0.25],
                class: 1,
                quality: QualityVector::new(5.0, 0.5, 15.0, 1.0, 0.55),
            },
        ]
    }

    fn gradient_check(kind: StrategyKind, config: NetConfig) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut net = VelocityNet::new(config, kind, AnchorSet::default(), &mut rng).unwrap();
        // Move the pixel-head output and the gates off their initial values
        // so that every path carries gradient.
        for (k, m) in net.tensors_mut().into_iter().enumerate() {
            for (i, v) in m.as_mut_slice().iter_mut().enumerate() {
                if *v == 0.0 {
                    *v = 0.05 * libm::sin((k * 31 + i * 7) as f64);
                }
            }
        }
        let examples = tiny_examples();
        let batch: Vec<&TrainingExample> = examples.iter().collect();
        let mut draws = draw_samples(batch.len(), 4, 0.0, &mut rng);
        draws[2].drop_class = true;
        let analytic = fm_loss_with_draws(&net, &batch, &draws).unwrap();

        let h = 1e-6;
        let names: Vec<_> = net.tensors().into_iter().map(|(n, _)| n).collect();
        let grads: Vec<Vec<f64>> = analytic
            .grads
            .tensors()
            .into_iter()
            .map(|(_, m)| m.as_slice().to_vec())
            .collect();
        for (k, name) in names.iter().enumerate() {
            for i in 0..grads[k].len() {
                let mut plus = net.clone();
                plus.tensors_mut()[k].as_mut_slice()[i] += h;
                let mut minus = net.clone();
                minus.tensors_mut()[k].as_mut_slice()[i] -= h;
                let numeric = (fm_loss_value(&plus, &batch, &draws).unwrap()
                    - fm_loss_value(&minus, &batch, &draws).unwrap())
                    / (2.0 * h);
                let a = grads[k][i];
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-8);
                assert!(
                    rel < 1e-5 || (a - numeric).abs() < 1e-8,
                    "{kind:?} {name}[{i}]: analytic {a} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in StrategyKind::ALL {
            gradient_check(kind, tiny_config());
            gradient_check(
                kind,
                NetConfig {
                    pixel_hidden: 0,
                    ..tiny_config()
                },
            );
        }
    }

    #[test]
    fn zero_output_layer_gives_closed_form_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = VelocityNet::new(
            tiny_config(),
            StrategyKind::Gcc,
            AnchorSet::default(),
            &mut rng,
        )
        .unwrap();
        let last = net.layers_mut().last_mut().unwrap();
        last.weight.fill(0.0);
        last.bias.fill(0.0);
        let examples = tiny_examples();
        let batch: Vec<&TrainingExample> = examples.iter().collect();
        let draws = draw_samples(batch.len(), 4, 0.1, &mut rng);
        let loss = fm_loss_value(&net, &batch, &draws).unwrap();
        let mut expected = 0.0;
        for (ex, d) in examples.iter().zip(&draws) {
            for (x, e) in ex.image.iter().zip(&d.noise) {
                expected += (e - x) * (e - x);
            }
        }
        expected /= 12.0;
        assert!((loss - expected).abs() < 1e-12);
        assert!((zero_velocity_loss(&batch, &draws) - expected).abs() < 1e-12);
    }

    #[test]
    fn interpolation_endpoints() {
        let x = [0.25, -0.5];
        let e = [1.0, 2.0];
        assert_eq!(interpolate(&x, &e, 0.0).unwrap(), x.to_vec());
        assert_eq!(interpolate(&x, &e, 1.0).unwrap(), e.to_vec());
        assert_eq!(
            interpolate(&[0.0; 3], &[1.0; 3], 0.5).unwrap(),
            vec![0.5; 3]
        );
        assert!(interpolate(&x, &[1.0], 0.5).is_err());
    }

    #[test]
    fn training_is_deterministic_and_reduces_loss() {
        let examples = tiny_examples();
        let config = TrainConfig {
            seed: 5,
            batch_size: 3,
            steps: 200,
            hidden: vec![16],
            cond_dim: 4,
            class_dim: 4,
            ..TrainConfig::default()
        };
        let run = || {
            train(
                &examples,
                2,
                &config,
                StrategyKind::Gcc,
                AnchorSet::default(),
                &mut |_, _| {},
            )
            .unwrap()
        };
        let a = run();
        let b = run();
        assert_eq!(a.losses, b.losses);
        assert_eq!(a.net, b.net);
        let early = TrainOutcome::tail_mean(&a.losses[..20], 20);
        let late = TrainOutcome::tail_mean(&a.losses, 20);
        assert!(late < early, "loss did not decrease: {early} -> {late}");
    }

    #[test]
    fn cosine_schedule_decays_to_zero() {
        let base = 2e-3;
        assert_eq!(LrSchedule::Constant.rate(base, 77, 100), base);
        assert_eq!(LrSchedule::Cosine.rate(base, 0, 100), base);
        assert!((LrSchedule::Cosine.rate(base, 50, 100) - base / 2.0).abs() < 1e-15);
        let last = LrSchedule::Cosine.rate(base, 99, 100);
        assert!(last > 0.0 && last < 1e-6);
        let rates: Vec<f64> = (0..100).map(|s| LrSchedule::Cosine.rate(base, s, 100)).collect();
        assert!(rates.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn weight_average_leaves_the_trajectory_alone() {
        let examples = tiny_examples();
        let plain = TrainConfig {
            seed: 9,
            batch_size: 3,
            steps: 30,
            hidden: vec![8],
            cond_dim: 4,
            class_dim: 4,
            ..TrainConfig::default()
        };
        let averaged = TrainConfig {
            ema_decay: 0.9,
            ..plain.clone()
        };
        let run = |config: &TrainConfig| {
            train(
                &examples,
                2,
                config,
                StrategyKind::Gcc,
                AnchorSet::default(),
                &mut |_, _| {},
            )
            .unwrap()
        };
        let a = run(&plain);
        let b = run(&averaged);
        assert_eq!(a.losses, b.losses);
        assert_ne!(a.net, b.net);
        let bad = TrainConfig {
            ema_decay: 1.0,
            ..plain
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn rejects_bad_configs() {
        let examples = tiny_examples();
        let bad = TrainConfig {
            p_drop: 1.0,
            ..TrainConfig::default()
        };
        assert!(train(
            &examples,
            2,
            &bad,
            StrategyKind::Gcc,
            AnchorSet::default(),
            &mut |_, _| {}
        )
        .is_err());
        let ok = TrainConfig::default();
        assert!(train(
            &examples,
            3,
            &ok,
            StrategyKind::Gcc,
            AnchorSet::default(),
            &mut |_, _| {}
        )
        .is_err());
        assert!(train(
            &[],
            2,
            &ok,
            StrategyKind::Gcc,
            AnchorSet::default(),
            &mut |_, _| {}
        )
        .is_err());
    }

    #[test]
    fn unknown_class_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let net = VelocityNet::new(
            tiny_config(),
            StrategyKind::Gcc,
            AnchorSet::default(),
            &mut rng,
        )
        .unwrap();
        let x = crate::tensor::Matrix::zeros(1, 4);
        let s = QualityVector::new(5.0, 0.5, 100.0, 4.0, 0.5);
        assert!(net.velocity(&x, 0.5, Some(2), &s).is_err());
        assert!(net.velocity(&x, 0.5, None, &s).is_ok());
    }
}
