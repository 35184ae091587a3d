//! Cross-module invariants checked on random inputs.

use lacon_core::encoder::{rbf_weights, AnchorSet, AttributeAnchorSpec, StrategyKind};
use lacon_core::flowmodel::{
    draw_samples, fm_loss_with_draws, interpolate, NetConfig, TrainingExample, VelocityModel,
    VelocityNet,
};
use lacon_core::sampler::{
    guided_velocity, lacon_a_velocity, sample, GuidanceMode, GuidanceSpec, SamplerConfig,
};
use lacon_core::signals::{clarity, entropy, luminance, GrayImage, RgbImage};
use lacon_core::tensor::Matrix;
use lacon_core::{Attribute, QualityVector};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn gray(side: usize) -> impl Strategy<Value = GrayImage> {
    prop::collection::vec(0.0f64..=1.0, side * side)
        .prop_map(move |data| GrayImage::new(side, side, data).unwrap())
}

fn quality() -> impl Strategy<Value = QualityVector> {
    (0.0f64..=10.0, 0.0f64..=1.0, 0.0f64..5000.0, 0.0f64..=8.0, 0.0f64..=1.0)
        .prop_map(|(a, w, c, e, l)| QualityVector::new(a, w, c, e, l))
}

fn small_net(seed: u64, kind: StrategyKind) -> VelocityNet {
    let config = NetConfig {
        side: 2,
        hidden: vec![8],
        cond_dim: 4,
        class_dim: 3,
        n_classes: 2,
        pixel_hidden: 4,
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    VelocityNet::new(config, kind, AnchorSet::default(), &mut rng).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn entropy_stays_in_range_and_ignores_pixel_order(img in gray(6), seed in any::<u64>()) {
        let h = entropy(&img);
        prop_assert!((0.0..=8.0).contains(&h));
        let mut data = img.data().to_vec();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rand::seq::SliceRandom::shuffle(data.as_mut_slice(), &mut rng);
        let shuffled = GrayImage::new(6, 6, data).unwrap();
        prop_assert_eq!(entropy(&shuffled), h);
    }

    #[test]
    fn clarity_is_nonnegative_and_offset_invariant(img in gray(5), offset in -0.25f64..0.25) {
        let squeezed: Vec<f64> = img.data().iter().map(|v| 0.25 + 0.5 * v).collect();
        let img = GrayImage::new(5, 5, squeezed).unwrap();
        let c = clarity(&img);
        prop_assert!(c >= 0.0);
        let shifted: Vec<f64> = img.data().iter().map(|v| v + offset).collect();
        let shifted = GrayImage::new(5, 5, shifted).unwrap();
        prop_assert!((clarity(&shifted) - c).abs() <= 1e-9 * c.max(1.0));
    }

    #[test]
    fn luminance_of_gray_images_is_the_mean(img in gray(4)) {
        let rgb = RgbImage::from_gray_values(4, 4, img.data()).unwrap();
        let mean = img.data().iter().sum::<f64>() / 16.0;
        prop_assert!((luminance(&rgb) - mean).abs() < 1e-12);
    }

    #[test]
    fn scores_above_the_clip_share_weights(v in 3000.0f64..1e9) {
        let spec = AttributeAnchorSpec::default_for(Attribute::Cla);
        prop_assert_eq!(rbf_weights(v, &spec), rbf_weights(3000.0, &spec));
    }

    #[test]
    fn interpolation_is_affine_in_t(x in prop::collection::vec(-1.0f64..1.0, 4), e in prop::collection::vec(-3.0f64..3.0, 4), t in 0.0f64..=1.0) {
        let xt = interpolate(&x, &e, t).unwrap();
        for ((xt, x), e) in xt.iter().zip(&x).zip(&e) {
            prop_assert!((xt - ((1.0 - t) * x + t * e)).abs() < 1e-15);
        }
    }

    #[test]
    fn loss_ignores_batch_order(seed in any::<u64>(), qs in prop::collection::vec(quality(), 3)) {
        let net = small_net(seed, StrategyKind::Gcc);
        let examples: Vec<TrainingExample> = qs
            .iter()
            .enumerate()
            .map(|(i, q)| TrainingExample {
                image: (0..4).map(|j| ((i * 4 + j) as f64 * 0.37).sin()).collect(),
                class: i % 2,
                quality: *q,
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        let draws = draw_samples(3, 4, 0.3, &mut rng);
        let batch: Vec<&TrainingExample> = examples.iter().collect();
        let forward = fm_loss_with_draws(&net, &batch, &draws).unwrap().loss;
        let rev_batch: Vec<&TrainingExample> = examples.iter().rev().collect();
        let rev_draws: Vec<_> = draws.iter().rev().cloned().collect();
        let reversed = fm_loss_with_draws(&net, &rev_batch, &rev_draws).unwrap().loss;
        prop_assert!(forward >= 0.0);
        prop_assert!((forward - reversed).abs() <= 1e-12 * forward.max(1.0));
    }

    #[test]
    fn zero_attribute_weights_reduce_lacon_a_to_cfg(seed in any::<u64>(), s_base in quality(), omega_c in -2.0f64..8.0) {
        let net = small_net(seed, StrategyKind::Gcc);
        let mut g = GuidanceSpec::new(omega_c, s_base);
        g.s_high = QualityVector::new(9.0, 0.0, 2900.0, 7.5, 0.9);
        let config = SamplerConfig { steps: 6, seed, count: 3 };
        let a = sample(&net, GuidanceMode::LaconA, 1, &g, &config).unwrap();
        let c = sample(&net, GuidanceMode::Cfg, 1, &g, &config).unwrap();
        prop_assert_eq!(a, c);
    }

    #[test]
    fn unit_class_weight_gives_the_text_velocity(seed in any::<u64>(), s_base in quality(), t in 0.01f64..1.0) {
        let net = small_net(seed, StrategyKind::FourierFeature);
        let g = GuidanceSpec::new(1.0, s_base);
        let x = Matrix::from_fn(2, 4, |r, c| ((r * 4 + c) as f64).cos());
        let v = lacon_a_velocity(&net, &x, t, 0, &g).unwrap();
        let v_text = net.velocity(&x, t, Some(0), &s_base).unwrap();
        prop_assert_eq!(&v, &v_text);
        prop_assert_eq!(guided_velocity(&net, &x, t, 0, &s_base, 1.0).unwrap(), v_text);
    }
}
