//! Numerical kernels checked against independent oracles: backprop against
//! central differences, `phi` against quadrature, the Welch p-value against
//! a permutation test.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::analytic::phi;
use crate::error::Result;
use crate::nn::{finite_difference_error, Activation, MlpModel, MlpShape, Target};
use crate::rng::{derive_named, derive_seed, rng_from_seed};
use crate::stats::welch_one_sided;
use crate::verifier::permutation_p_value;

pub const GRADIENT_TOL: f64 = 1e-4;
pub const PHI_TOL: f64 = 1e-8;
pub const PERMUTATION_TOL: f64 = 0.02;

#[derive(Debug, Clone, PartialEq)]
pub struct KernelRow {
    pub kernel: &'static str,
    pub case: String,
    pub value: f64,
    pub reference: f64,
    pub error: f64,
    pub tolerance: f64,
}

impl KernelRow {
    pub const CSV_HEADER: &'static str = "kernel,case,value,reference,error,tolerance,pass";

    pub fn pass(&self) -> bool {
        self.error <= self.tolerance
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.kernel,
            self.case,
            self.value,
            self.reference,
            self.error,
            self.tolerance,
            self.pass()
        )
    }
}

/// `integral_0^|z| pdf` by composite Simpson with `n` (even) panels.
pub fn phi_by_quadrature(z: f64, n: usize) -> f64 {
    let pdf = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let a = z.abs();
    let h = a / n as f64;
    let mut s = pdf(0.0) + pdf(a);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * pdf(i as f64 * h);
    }
    let half = s * h / 3.0;
    if z >= 0.0 {
        0.5 + half
    } else {
        0.5 - half
    }
}

pub fn gradient_rows(n_cases: usize, seed: u64) -> Result<Vec<KernelRow>> {
    (0..n_cases)
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let input = rng.gen_range(2..8);
            let hidden: Vec<usize> = (0..rng.gen_range(1..3)).map(|_| rng.gen_range(2..9)).collect();
            let act = if c % 2 == 0 { Activation::Tanh } else { Activation::Relu };
            let regression = c % 3 == 2;
            let shape = MlpShape {
                input_dim: input,
                hidden: hidden.clone(),
                output_dim: if regression { 1 } else { 2 },
                hidden_activation: act,
                has_bias: true,
                dropout: 0.0,
            };
            let f = MlpModel::init(&shape, rng.gen())?;
            let x: Vec<f64> = (0..input).map(|_| rng.sample(StandardNormal)).collect();
            let target = if regression {
                Target::Value(rng.sample(StandardNormal))
            } else {
                Target::Class(rng.gen_range(0..2))
            };
            let err = finite_difference_error(&f, &x, target, 1e-5)?;
            Ok(KernelRow {
                kernel: "gradient",
                case: format!("{input}-{}-{}:{act}", hidden.iter().map(|h| h.to_string()).collect::<Vec<_>>().join("-"), shape.output_dim),
                value: err,
                reference: 0.0,
                error: err,
                tolerance: GRADIENT_TOL,
            })
        })
        .collect()
}

pub fn phi_rows(n_points: usize) -> Result<Vec<KernelRow>> {
    (0..n_points)
        .map(|i| {
            let z = if n_points == 1 {
                0.0
            } else {
                -6.0 + 12.0 * i as f64 / (n_points - 1) as f64
            };
            let v = phi(z)?;
            let r = phi_by_quadrature(z, 4000);
            Ok(KernelRow {
                kernel: "phi",
                case: format!("z={z}"),
                value: v,
                reference: r,
                error: (v - r).abs(),
                tolerance: PHI_TOL,
            })
        })
        .collect()
}

/// Five small-sample cases `(n_a, n_b, shift)`, normal draws with equal spread.
pub const PERMUTATION_CASES: [(usize, usize, f64); 5] =
    [(6, 6, 0.0), (8, 10, 0.5), (12, 9, 1.0), (5, 15, 0.3), (10, 10, 0.8)];

pub fn permutation_rows(n_perm: usize, seed: u64) -> Vec<KernelRow> {
    PERMUTATION_CASES
        .iter()
        .enumerate()
        .map(|(c, &(na, nb, shift))| {
            let mut rng = rng_from_seed(derive_seed(derive_named(seed, "perm/data"), c as u64));
            let a: Vec<f64> = (0..na).map(|_| shift + rng.sample::<f64, _>(StandardNormal)).collect();
            let b: Vec<f64> = (0..nb).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
            let p = welch_one_sided(&a, &b).p_greater;
            let r = permutation_p_value(&a, &b, n_perm, derive_seed(derive_named(seed, "perm"), c as u64));
            KernelRow {
                kernel: "welch_p",
                case: format!("n={na}/{nb};shift={shift}"),
                value: p,
                reference: r,
                error: (p - r).abs(),
                tolerance: PERMUTATION_TOL,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadrature_oracle_sane() {
        assert_eq!(phi_by_quadrature(0.0, 10), 0.5);
        assert!((phi_by_quadrature(1.0, 4000) - 0.841344746068543).abs() < 1e-12);
        assert!((phi_by_quadrature(-2.0, 4000) - 0.022750131948179).abs() < 1e-12);
    }

    #[test]
    fn kernels_within_tolerance() {
        assert!(gradient_rows(6, 1).unwrap().iter().all(KernelRow::pass));
        let phi = phi_rows(50).unwrap();
        assert_eq!(phi.len(), 50);
        assert!(phi.iter().all(KernelRow::pass));
        assert!(permutation_rows(20_000, 3).iter().all(|r| r.error < 0.04));
    }
}
