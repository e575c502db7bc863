use advmakeup::attacks::{pgd_targeted, AttackConfig, AttackMethod};
use advmakeup::autograd::Tensor;
use advmakeup::config::RunConfig;
use advmakeup::evaluation::{calibrate_threshold, false_accept_rate, fid, psnr, ssim, SsimConfig};
use advmakeup::networks::{FaceRecognizer, Surrogate};
use proptest::prelude::*;

fn tensor(shape: &[usize], values: Vec<f64>) -> Tensor {
    Tensor::from_fn(shape, |i| values[i])
}

fn unit_image(side: usize) -> impl Strategy<Value = Tensor> {
    prop::collection::vec(0.0..1.0f64, 3 * side * side)
        .prop_map(move |v| tensor(&[3, side, side], v))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn psnr_and_ssim_are_symmetric(a in unit_image(12), b in unit_image(12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let cfg = SsimConfig::default();
        let (ab, ba) = (ssim(&a, &b, &cfg).unwrap(), ssim(&b, &a, &cfg).unwrap());
        prop_assert!((ab - ba).abs() < 1e-12);
        prop_assert!(ab <= 1.0 + 1e-12 && ab >= -1.0 - 1e-12);
    }

    #[test]
    fn fid_is_non_negative_and_symmetric(
        a in prop::collection::vec(-2.0..2.0f64, 40 * 3),
        b in prop::collection::vec(-2.0..2.0f64, 40 * 3),
    ) {
        let (a, b) = (tensor(&[40, 3], a), tensor(&[40, 3], b));
        let (ab, ba) = (fid(&a, &b).unwrap(), fid(&b, &a).unwrap());
        prop_assert!(ab >= 0.0);
        prop_assert!((ab - ba).abs() < 1e-6 * ab.max(1.0));
    }

    #[test]
    fn calibrated_threshold_never_exceeds_the_target_rate(
        scores in prop::collection::vec(-1.0..1.0f64, 1000..1500),
        far in 0.0..0.2f64,
    ) {
        let th = calibrate_threshold("m", &scores, far).unwrap();
        let achieved = false_accept_rate(&scores, th.tau);
        prop_assert_eq!(achieved, th.far_achieved);
        // ties at tau can only add accepted pairs when scores repeat
        prop_assert!(achieved <= far + 1.0 / scores.len() as f64 + 1e-12);
        prop_assert!(false_accept_rate(&scores, th.tau + 1e-9) <= achieved);
    }

    #[test]
    fn overrides_change_the_hash_and_round_trip(lr in 1e-5..1e-2f64, seed in 0u64..1000) {
        let base = RunConfig::default();
        let cfg = base
            .with_overrides(&[format!("training.learning_rate={lr}"), format!("training.seed={seed}")])
            .unwrap();
        prop_assert_eq!(cfg.training.learning_rate, lr);
        let back = RunConfig::from_toml_str(&cfg.to_toml_string()).unwrap();
        prop_assert_eq!(back.hash(), cfg.hash());
        if lr != base.training.learning_rate || seed != base.training.seed {
            prop_assert_ne!(cfg.hash(), base.hash());
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]

    #[test]
    fn pgd_stays_inside_the_budget_and_pixel_range(
        x in prop::collection::vec(-1.0..1.0f64, 2 * 3 * 16 * 16),
        eps in 0.0..0.3f64,
        seed in 0u64..50,
    ) {
        let x = tensor(&[2, 3, 16, 16], x);
        let z = Tensor::from_fn(&[1, 3, 16, 16], |i| ((i as f64) * 0.13).sin());
        let model = FaceRecognizer::new("fr-p", seed);
        let models: Vec<&dyn Surrogate> = vec![&model];
        let cfg = AttackConfig { method: AttackMethod::Pgd, epsilon: eps, alpha: eps / 4.0, steps: 5, ..AttackConfig::default() };
        let adv = pgd_targeted(&x, &z, &models, &cfg).unwrap();
        for (a, o) in adv.data().iter().zip(x.data()) {
            prop_assert!((a - o).abs() <= eps + 1e-12);
            prop_assert!((-1.0..=1.0).contains(a));
        }
    }
}
