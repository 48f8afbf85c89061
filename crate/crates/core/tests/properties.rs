use proptest::prelude::*;

use dilab_core::analytic::{analytic_fp, fp_at_threshold, overlap_at_threshold, tp_at_threshold, tp_vs_k_prob};
use dilab_core::distribution::{sample_dataset, DistributionSpec};
use dilab_core::linear::{decide, margin, psi_decide, train_linear, DecisionConfig};
use dilab_core::nn::{pgd_attack, Activation, MlpModel, MlpShape, PgdConfig};
use dilab_core::pacbayes::{normalize_weights, perturbation_bound_from_norms};
use dilab_core::verifier::{hypothesis_test, Verdict};

fn spec(d: usize) -> DistributionSpec {
    DistributionSpec::new(vec![0.3, -0.2, 0.1], d, 0.4, 30).unwrap()
}

fn bias_free_net(input: usize, seed: u64) -> MlpModel {
    let shape = MlpShape {
        input_dim: input,
        hidden: vec![6, 5],
        output_dim: 2,
        hidden_activation: Activation::Relu,
        has_bias: false,
        dropout: 0.0,
    };
    MlpModel::init(&shape, seed).unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn training_ignores_sample_order(seed in any::<u64>(), d in 1usize..8, rot in 0usize..30) {
        let s = sample_dataset(&spec(d), 30, seed).unwrap();
        let mut idx: Vec<usize> = (0..30).collect();
        idx.rotate_left(rot);
        idx.reverse();
        prop_assert_eq!(train_linear(&s).unwrap(), train_linear(&s.select(&idx)).unwrap());
    }

    #[test]
    fn margin_decomposes(seed in any::<u64>(), d in 1usize..8) {
        let sp = spec(d);
        let s = sample_dataset(&sp, 30, seed).unwrap();
        let f = train_linear(&s).unwrap();
        let fresh = sample_dataset(&sp, 5, seed ^ 0x55).unwrap();
        for x in s.samples.iter().chain(&fresh.samples) {
            let y = x.y.sign();
            let noise: f64 = f.w2.iter().zip(&x.x2).map(|(w, v)| w * v).sum();
            let expected = 30.0 * sp.u_norm_sq() + y * noise;
            let got = margin(&f, x).unwrap();
            prop_assert!((got - expected).abs() <= 1e-9 * (1.0 + expected.abs()));
        }
    }

    #[test]
    fn decision_scale_free(t in -50.0f64..50.0, lambda in -50.0f64..50.0, c in 0.01f64..100.0) {
        prop_assert_eq!(decide(t, lambda), decide(c * t, c * lambda));
    }

    #[test]
    fn higher_threshold_never_flags_more(seed in any::<u64>(), l1 in -3.0f64..3.0, dl in 0.0f64..3.0) {
        let sp = spec(4);
        let f = train_linear(&sample_dataset(&sp, 30, seed).unwrap()).unwrap();
        let sv = sample_dataset(&sp, 10, seed ^ 1).unwrap();
        let s0 = sample_dataset(&sp, 10, seed ^ 2).unwrap();
        let lo = psi_decide(&f, &sv, &s0, &DecisionConfig { lambda: l1, k_reveal: 5 }, 9).unwrap();
        let hi = psi_decide(&f, &sv, &s0, &DecisionConfig { lambda: l1 + dl, k_reveal: 5 }, 9).unwrap();
        prop_assert!(!hi.stolen || lo.stolen);
    }

    #[test]
    fn analytic_ranges_and_monotonicity(k in 1.0f64..1e4, d in 1.0f64..500.0, m in 1e4f64..1e6) {
        let fp = analytic_fp(k, d, m).unwrap();
        let tp = tp_vs_k_prob(k, d, m).unwrap();
        prop_assert!((0.0..0.5).contains(&fp));
        prop_assert!(tp > 0.5 && tp <= 1.0);
        prop_assert!(analytic_fp(k * 2.0, d, m).unwrap() <= fp);
        prop_assert!(analytic_fp(k, d * 2.0, m).unwrap() <= fp);
        prop_assert!(tp_vs_k_prob(k * 2.0, d, m).unwrap() >= tp);
        prop_assert!(tp_vs_k_prob(k, d * 2.0, m).unwrap() >= tp);
    }

    #[test]
    fn threshold_probabilities_bounded(k in 1.0f64..100.0, d in 1.0f64..100.0, sigma in 0.05f64..2.0, frac in 0.01f64..0.99) {
        let m = 1000.0;
        let lambda = frac * d * sigma * sigma;
        let fp = fp_at_threshold(k, d, m, sigma, lambda).unwrap();
        let tp = tp_at_threshold(k, d, m, sigma, lambda).unwrap();
        prop_assert!(fp < 0.5 && fp >= 0.0);
        prop_assert!(tp > 0.5 && tp <= 1.0);
        let ov = overlap_at_threshold(k, 0.0, d, m, sigma, lambda).unwrap();
        prop_assert!((0.0..=1.0).contains(&ov));
    }

    #[test]
    fn pgd_stays_in_ball(seed in any::<u64>(), gamma in 0.001f64..0.5, class in 0usize..2) {
        let f = bias_free_net(5, seed);
        let x: Vec<f64> = (0..5).map(|i| (i as f64 - 2.0) * 0.3).collect();
        let adv = pgd_attack(&f, &x, class, &PgdConfig::with_gamma(gamma)).unwrap();
        for (a, b) in adv.iter().zip(&x) {
            prop_assert!((a - b).abs() <= gamma * (1.0 + 1e-12));
        }
    }

    #[test]
    fn relu_net_positively_homogeneous(seed in any::<u64>(), c in 0.01f64..50.0) {
        let f = bias_free_net(4, seed);
        let x = [0.7, -1.1, 0.2, 0.5];
        let cx: Vec<f64> = x.iter().map(|v| c * v).collect();
        for (a, b) in f.forward(&x).unwrap().iter().zip(f.forward(&cx).unwrap()) {
            prop_assert!((c * a - b).abs() <= 1e-9 * (1.0 + b.abs()));
        }
    }

    #[test]
    fn normalization_keeps_function(seed in any::<u64>()) {
        let f = bias_free_net(4, seed);
        let g = normalize_weights(&f).unwrap();
        let x = [0.3, 0.1, -0.9, 2.0];
        for (a, b) in f.forward(&x).unwrap().iter().zip(g.forward(&x).unwrap()) {
            prop_assert!((a - b).abs() <= 1e-9 * (1.0 + a.abs()));
        }
    }

    #[test]
    fn perturbation_bound_linear(ws in prop::collection::vec(0.5f64..5.0, 1..5), b in 0.1f64..10.0, c in 0.1f64..1.0) {
        let d = ws.len() as f64;
        let us: Vec<f64> = ws.iter().map(|w| w / d * 0.5).collect();
        let base = perturbation_bound_from_norms(&ws, b, &us).unwrap();
        let scaled_b = perturbation_bound_from_norms(&ws, 2.0 * b, &us).unwrap();
        prop_assert!((scaled_b - 2.0 * base).abs() <= 1e-9 * base);
        let mut us2 = us.clone();
        us2[0] *= c;
        let part = perturbation_bound_from_norms(&ws, b, &us2).unwrap();
        let e = std::f64::consts::E * b * ws.iter().product::<f64>();
        prop_assert!((base - part - e * (1.0 - c) * us[0] / ws[0]).abs() <= 1e-9 * base);
    }

    #[test]
    fn verdict_affine_invariant(
        a in prop::collection::vec(-5.0f64..5.0, 3..20),
        b in prop::collection::vec(-5.0f64..5.0, 3..20),
        scale in 0.1f64..10.0,
        shift in -10.0f64..10.0,
    ) {
        let r1 = hypothesis_test(&a, &b, 0.05).unwrap();
        let ta: Vec<f64> = a.iter().map(|v| scale * v + shift).collect();
        let tb: Vec<f64> = b.iter().map(|v| scale * v + shift).collect();
        let r2 = hypothesis_test(&ta, &tb, 0.05).unwrap();
        if !r1.degenerate {
            prop_assert!((r1.p - r2.p).abs() <= 1e-6);
            if (r1.p - 0.05).abs() > 1e-6 {
                prop_assert_eq!(r1.verdict, r2.verdict);
            }
        }
    }
}

#[test]
fn null_p_values_roughly_uniform() {
    let sp = spec(6);
    let mut small = 0;
    let n = 300;
    for s in 0..n {
        let d = sample_dataset(&sp, 40, 1000 + s).unwrap();
        let a: Vec<f64> = d.samples[..20].iter().map(|x| x.x2[0]).collect();
        let b: Vec<f64> = d.samples[20..].iter().map(|x| x.x2[0]).collect();
        if hypothesis_test(&a, &b, 0.05).unwrap().verdict == Verdict::Stolen {
            small += 1;
        }
    }
    let frac = small as f64 / n as f64;
    assert!((frac - 0.05).abs() <= 0.04, "{frac}");
}
