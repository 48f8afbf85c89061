use super::train::input_gradient;
use super::MlpModel;
use crate::error::{Error, Result};

/// l-infinity PGD attack settings.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PgdConfig {
    pub gamma: f64,
    pub step_size: f64,
    pub n_steps: usize,
}

impl PgdConfig {
    /// `n_steps = 10`, `step_size = gamma / 4`.
    pub fn with_gamma(gamma: f64) -> Self {
        PgdConfig {
            gamma,
            step_size: gamma / 4.0,
            n_steps: 10,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.step_size > 0.0 && self.step_size <= self.gamma) {
            return Err(Error::Config(format!(
                "PGD needs 0 < step_size ({}) <= gamma ({})",
                self.step_size, self.gamma
            )));
        }
        if self.n_steps == 0 {
            return Err(Error::Config("PGD needs n_steps >= 1".into()));
        }
        Ok(())
    }
}

/// Clamp `v` into `[x - gamma, x + gamma]` so that `|v - x| <= gamma` holds
/// after rounding, not just in exact arithmetic.
fn project(v: f64, x: f64, gamma: f64) -> f64 {
    let mut v = v.clamp(x - gamma, x + gamma);
    while v - x > gamma {
        v = v.next_down();
    }
    while x - v > gamma {
        v = v.next_up();
    }
    v
}

/// Signed-gradient ascent on the cross-entropy loss, projected onto the
/// l-infinity ball around `x` after every step. Starts from `x` itself.
pub fn pgd_attack(f: &MlpModel, x: &[f64], class: usize, cfg: &PgdConfig) -> Result<Vec<f64>> {
    cfg.validate()?;
    let mut adv = x.to_vec();
    for _ in 0..cfg.n_steps {
        let (_, g) = input_gradient(f, &adv, class)?;
        for ((a, gi), xi) in adv.iter_mut().zip(&g).zip(x) {
            let s = if *gi > 0.0 {
                1.0
            } else if *gi < 0.0 {
                -1.0
            } else {
                0.0
            };
            *a = project(*a + cfg.step_size * s, *xi, cfg.gamma);
        }
    }
    Ok(adv)
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, Layer, MlpShape};
    use super::*;
    use proptest::prelude::*;

    fn net(seed: u64) -> MlpModel {
        MlpModel::init(
            &MlpShape {
                input_dim: 5,
                hidden: vec![12],
                output_dim: 2,
                hidden_activation: Activation::Relu,
                has_bias: true,
                dropout: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn config_validation() {
        assert!(PgdConfig::with_gamma(0.1).validate().is_ok());
        assert!(PgdConfig { gamma: 0.1, step_size: 0.2, n_steps: 1 }.validate().is_err());
        assert!(PgdConfig { gamma: 0.1, step_size: 0.01, n_steps: 0 }.validate().is_err());
    }

    #[test]
    fn flat_model_leaves_input() {
        let f = MlpModel::from_layers(vec![Layer::zeros(2, 3, Activation::Identity)], true).unwrap();
        let x = [0.1, 0.2, 0.3];
        let adv = pgd_attack(&f, &x, 1, &PgdConfig::with_gamma(0.05)).unwrap();
        assert_eq!(adv, x.to_vec());
    }

    #[test]
    fn linear_single_step_is_signed_gradient() {
        // Logit difference z1 - z0 = w . x; for class 1 the loss gradient is
        // -(1 - p1) w, so ascent moves against sign(w).
        let w = [0.5, -2.0, 0.0, 1.0];
        let mut l = Layer::zeros(2, 4, Activation::Identity);
        for j in 0..4 {
            l.weights[4 + j] = w[j];
        }
        let f = MlpModel::from_layers(vec![l], false).unwrap();
        let x = [0.3, 0.1, -0.2, 0.0];
        let cfg = PgdConfig { gamma: 0.1, step_size: 0.03, n_steps: 1 };
        let adv = pgd_attack(&f, &x, 1, &cfg).unwrap();
        for j in 0..4 {
            let expected = x[j] - 0.03 * if w[j] > 0.0 { 1.0 } else if w[j] < 0.0 { -1.0 } else { 0.0 };
            assert!((adv[j] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn attack_increases_loss() {
        let f = net(1);
        let mut rng = crate::rng::rng_from_seed(9);
        let mut ok = 0;
        let n = 200;
        for i in 0..n {
            let x: Vec<f64> = (0..5).map(|_| rand::Rng::gen_range(&mut rng, -1.0..1.0)).collect();
            let class = i % 2;
            let before = input_gradient(&f, &x, class).unwrap().0;
            let adv = pgd_attack(&f, &x, class, &PgdConfig::with_gamma(0.1)).unwrap();
            let after = input_gradient(&f, &adv, class).unwrap().0;
            if after >= before {
                ok += 1;
            }
        }
        assert!(ok as f64 >= 0.95 * n as f64, "{ok}/{n}");
    }

    proptest! {
        #[test]
        fn stays_in_ball(x in prop::collection::vec(-3.0f64..3.0, 5), gamma in 1e-6f64..0.5, steps in 1usize..12, class in 0usize..2) {
            let f = net(2);
            let cfg = PgdConfig { gamma, step_size: gamma / 3.0, n_steps: steps };
            let adv = pgd_attack(&f, &x, class, &cfg).unwrap();
            for (a, b) in adv.iter().zip(&x) {
                prop_assert!((a - b).abs() <= gamma);
            }
        }
    }
}
