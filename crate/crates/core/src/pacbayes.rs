//! Perturbation and margin bounds for ReLU networks.
//!
//! The output-perturbation bound for a `d`-layer bias-free ReLU net with
//! inputs of norm at most `B`, valid when every `||U_i||_2 <= ||W_i||_2 / d`:
//!
//! `|f_{w+u}(x) - f_w(x)| <= e B (prod_i ||W_i||_2) sum_i ||U_i||_2 / ||W_i||_2`
//!
//! and the generalization term
//!
//! `eps = sqrt((B^2 d^2 h ln(dh) prod ||W_i||_2^2 sum ||W_i||_F^2/||W_i||_2^2 + ln(dm/sigma)) / (gamma^2 m))`.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::distribution::Dataset;
use crate::error::{Error, Result};
use crate::nn::{frobenius_norm, margin_label, spectral_norm, Matrix, MlpModel};
use crate::rng::{derive_seed, rng_from_seed, LabRng};
use crate::stats::mean;

pub const SPECTRAL_ITERS: usize = 500;

#[derive(Debug, Clone, PartialEq)]
pub struct BoundInputs {
    /// Input-norm bound `B`.
    pub b_input: f64,
    pub depth: usize,
    /// Largest layer dimension `h`.
    pub width: usize,
    pub gamma_margin: f64,
    pub m: usize,
    pub sigma_p: f64,
    pub spectral_norms: Vec<f64>,
    pub frob_norms: Vec<f64>,
}

impl BoundInputs {
    pub fn from_model(f: &MlpModel, b_input: f64, gamma_margin: f64, m: usize, sigma_p: f64) -> Self {
        let (spectral_norms, frob_norms) = layer_norms(f);
        BoundInputs {
            b_input,
            depth: f.depth(),
            width: f.max_width(),
            gamma_margin,
            m,
            sigma_p,
            spectral_norms,
            frob_norms,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let pos = |v: f64| v > 0.0 && v.is_finite();
        if !(pos(self.b_input) && pos(self.gamma_margin) && pos(self.sigma_p)) {
            return Err(Error::Config("B, gamma_margin and sigma_p must be positive".into()));
        }
        if self.depth == 0 || self.width == 0 || self.m == 0 {
            return Err(Error::Config("depth, width and m must be positive".into()));
        }
        if self.spectral_norms.len() != self.depth || self.frob_norms.len() != self.depth {
            return Err(Error::Structure(format!(
                "{} spectral / {} Frobenius norms for depth {}",
                self.spectral_norms.len(),
                self.frob_norms.len(),
                self.depth
            )));
        }
        if self.spectral_norms.iter().chain(&self.frob_norms).any(|&v| !pos(v)) {
            return Err(Error::Config("layer norms must be positive".into()));
        }
        Ok(())
    }

    /// `beta = (prod ||W_i||_2)^(1/d)`.
    pub fn beta(&self) -> f64 {
        (self.spectral_norms.iter().map(|s| s.ln()).sum::<f64>() / self.depth as f64).exp()
    }
}

/// Per-layer spectral and Frobenius norms.
pub fn layer_norms(f: &MlpModel) -> (Vec<f64>, Vec<f64>) {
    f.layers
        .iter()
        .map(|l| {
            let w = l.matrix();
            (spectral_norm(&w, SPECTRAL_ITERS), frobenius_norm(&w))
        })
        .unzip()
}

fn require_bias_free(f: &MlpModel) -> Result<()> {
    if f.has_bias && f.layers.iter().any(|l| l.bias.iter().any(|&b| b != 0.0)) {
        return Err(Error::Structure("bound requires a bias-free network".into()));
    }
    Ok(())
}

/// Same weights, biases dropped.
pub fn bias_free(f: &MlpModel) -> MlpModel {
    let mut g = f.clone();
    for l in &mut g.layers {
        l.bias.iter_mut().for_each(|b| *b = 0.0);
    }
    g.has_bias = false;
    g
}

/// Right-hand side of the output-perturbation bound given `||U_i||_2`.
pub fn perturbation_bound(model: &MlpModel, b_input: f64, u_norms: &[f64]) -> Result<f64> {
    let (spec, _) = layer_norms(model);
    perturbation_bound_from_norms(&spec, b_input, u_norms)
}

pub fn perturbation_bound_from_norms(w_norms: &[f64], b_input: f64, u_norms: &[f64]) -> Result<f64> {
    if w_norms.len() != u_norms.len() {
        return Err(Error::Structure(format!(
            "{} perturbation norms for {} layers",
            u_norms.len(),
            w_norms.len()
        )));
    }
    let d = w_norms.len() as f64;
    for (i, (w, u)) in w_norms.iter().zip(u_norms).enumerate() {
        if *u > w / d {
            return Err(Error::BoundInapplicable {
                layer: i,
                perturbation: *u,
                limit: w / d,
            });
        }
    }
    if w_norms.iter().any(|&w| w == 0.0) {
        // A zero layer makes the network identically zero.
        return Ok(0.0);
    }
    let prod: f64 = w_norms.iter().product();
    let ratio: f64 = u_norms.iter().zip(w_norms).map(|(u, w)| u / w).sum();
    Ok(std::f64::consts::E * b_input * prod * ratio)
}

/// The generalization term `eps`, evaluated as written.
pub fn generalization_epsilon(inp: &BoundInputs) -> Result<f64> {
    inp.validate()?;
    let d = inp.depth as f64;
    let h = inp.width as f64;
    let m = inp.m as f64;
    let prod_sq: f64 = inp.spectral_norms.iter().map(|s| s * s).product();
    let ratio: f64 = inp
        .frob_norms
        .iter()
        .zip(&inp.spectral_norms)
        .map(|(f, s)| (f * f) / (s * s))
        .sum();
    let num = inp.b_input.powi(2) * d * d * h * (d * h).ln() * prod_sq * ratio + (d * m / inp.sigma_p).ln();
    Ok((num / (inp.gamma_margin.powi(2) * m)).sqrt())
}

/// Rescales every layer to `W_i * beta / ||W_i||_2`; a bias-free ReLU net
/// computes the same function afterwards.
pub fn normalize_weights(f: &MlpModel) -> Result<MlpModel> {
    require_bias_free(f)?;
    let (spec, _) = layer_norms(f);
    if spec.iter().any(|&s| s == 0.0) {
        return Err(Error::Structure("cannot normalize a zero layer".into()));
    }
    let d = spec.len() as f64;
    let beta = (spec.iter().map(|s| s.ln()).sum::<f64>() / d).exp();
    let mut g = f.clone();
    for (l, s) in g.layers.iter_mut().zip(&spec) {
        let c = beta / s;
        l.weights.iter_mut().for_each(|w| *w *= c);
    }
    Ok(g)
}

/// Gaussian `N(0, sigma^2)` perturbation shaped like the weight matrices.
pub fn sample_perturbation(f: &MlpModel, sigma_p: f64, rng: &mut LabRng) -> Vec<Matrix> {
    f.layers
        .iter()
        .map(|l| {
            let data = (0..l.rows * l.cols)
                .map(|_| sigma_p * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Matrix::new(l.rows, l.cols, data)
        })
        .collect()
}

fn l2_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct DominationReport {
    pub cases: usize,
    pub dominated: usize,
    /// Largest measured deviation divided by the bound.
    pub max_ratio: f64,
}

/// Samples `n_cases` perturbations inside the bound's precondition (each
/// layer scaled to a random fraction of `||W_i||_2 / d`) and compares the
/// largest output deviation over `probe` against the bound.
pub fn domination_check(f: &MlpModel, probe: &[Vec<f64>], n_cases: usize, seed: u64) -> Result<DominationReport> {
    require_bias_free(f)?;
    if probe.is_empty() {
        return Err(Error::Config("empty probe set".into()));
    }
    let b = probe
        .iter()
        .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let (w_norms, _) = layer_norms(f);
    let d = w_norms.len() as f64;
    let base: Vec<Vec<f64>> = probe.iter().map(|x| f.forward(x)).collect::<Result<_>>()?;
    let ratios: Vec<f64> = (0..n_cases)
        .into_par_iter()
        .map(|c| {
            let mut rng = rng_from_seed(derive_seed(seed, c as u64));
            let mut us = sample_perturbation(f, 1.0, &mut rng);
            let mut u_norms = Vec::with_capacity(us.len());
            for (u, w) in us.iter_mut().zip(&w_norms) {
                let frac: f64 = rng.gen_range(0.01..1.0);
                let target = frac * w / d;
                let s = spectral_norm(u, SPECTRAL_ITERS);
                *u = u.scaled(target / s);
                // Guard the precondition against power-iteration slack.
                let n = spectral_norm(u, SPECTRAL_ITERS).min(w / d);
                u_norms.push(n);
            }
            let bound = perturbation_bound_from_norms(&w_norms, b, &u_norms)?;
            let g = f.perturbed(&us)?;
            let mut worst: f64 = 0.0;
            for (x, y0) in probe.iter().zip(&base) {
                worst = worst.max(l2_diff(&g.forward(x)?, y0));
            }
            Ok(if bound > 0.0 { worst / bound } else { 0.0 })
        })
        .collect::<Result<_>>()?;
    Ok(DominationReport {
        cases: n_cases,
        dominated: ratios.iter().filter(|&&r| r <= 1.0).count(),
        max_ratio: ratios.iter().copied().fold(0.0, f64::max),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TailRow {
    pub t: f64,
    pub exceed_fraction: f64,
    pub bound: f64,
}

/// Empirical `P[||U||_2 > t]` for `h x h` Gaussian matrices against
/// `2h exp(-t^2 / (2 h sigma^2))`, one row per threshold.
pub fn spectral_tail_check(h: usize, sigma_p: f64, thresholds: &[f64], n_draws: usize, seed: u64) -> Vec<TailRow> {
    let norms: Vec<f64> = (0..n_draws)
        .into_par_iter()
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(seed, i as u64));
            let data = (0..h * h).map(|_| sigma_p * rng.sample::<f64, _>(StandardNormal)).collect();
            spectral_norm(&Matrix::new(h, h, data), SPECTRAL_ITERS)
        })
        .collect();
    let hf = h as f64;
    thresholds
        .iter()
        .map(|&t| TailRow {
            t,
            exceed_fraction: norms.iter().filter(|&&n| n > t).count() as f64 / n_draws as f64,
            bound: (2.0 * hf * (-t * t / (2.0 * hf * sigma_p * sigma_p)).exp()).min(1.0),
        })
        .collect()
}

/// `sigma sqrt(2h ln(2dh))`, the per-layer threshold of the union bound.
pub fn union_threshold(h: usize, d: usize, sigma_p: f64) -> f64 {
    let (h, d) = (h as f64, d as f64);
    sigma_p * (2.0 * h * (2.0 * d * h).ln()).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MarginSimilarityReport {
    pub n_draws: usize,
    /// `eps` computed for each model; the larger is used as the threshold.
    pub epsilon: f64,
    pub mean_gap: f64,
    pub max_gap: f64,
    /// Draws with `|E p(f_V + u) - E p(f_I + u')| <= eps`.
    pub within: usize,
    /// Expected-margin gap between the unperturbed models.
    pub base_gap: f64,
}

impl MarginSimilarityReport {
    pub fn fraction_within(&self) -> f64 {
        self.within as f64 / self.n_draws as f64
    }
}

fn mean_margin_nl(f: &MlpModel, probe: &Dataset) -> Result<f64> {
    let v: Vec<f64> = probe
        .samples
        .iter()
        .map(|s| margin_label(f, &s.input(), s.y))
        .collect::<Result<_>>()?;
    Ok(mean(&v))
}

/// Compares expected margins of two same-architecture models over a probe
/// set under independent Gaussian weight perturbations.
pub fn margin_similarity_check(
    fv: &MlpModel,
    fi: &MlpModel,
    probe: &Dataset,
    sigma_p: f64,
    gamma_margin: f64,
    m: usize,
    n_perturbations: usize,
    seed: u64,
) -> Result<MarginSimilarityReport> {
    if !fv.same_structure(fi) {
        return Err(Error::Structure("f_V and f_I differ in architecture".into()));
    }
    if probe.is_empty() || n_perturbations == 0 {
        return Err(Error::Config("need a probe set and at least one perturbation".into()));
    }
    let b = probe
        .samples
        .iter()
        .map(|s| s.input().iter().map(|v| v * v).sum::<f64>().sqrt())
        .fold(0.0, f64::max);
    let eps_v = generalization_epsilon(&BoundInputs::from_model(fv, b, gamma_margin, m, sigma_p))?;
    let eps_i = generalization_epsilon(&BoundInputs::from_model(fi, b, gamma_margin, m, sigma_p))?;
    let epsilon = eps_v.max(eps_i);
    let base_gap = (mean_margin_nl(fv, probe)? - mean_margin_nl(fi, probe)?).abs();
    let gaps: Vec<f64> = (0..n_perturbations)
        .into_par_iter()
        .map(|j| {
            let mut rng = rng_from_seed(derive_seed(seed, j as u64));
            let gv = fv.perturbed(&sample_perturbation(fv, sigma_p, &mut rng))?;
            let gi = fi.perturbed(&sample_perturbation(fi, sigma_p, &mut rng))?;
            Ok((mean_margin_nl(&gv, probe)? - mean_margin_nl(&gi, probe)?).abs())
        })
        .collect::<Result<_>>()?;
    Ok(MarginSimilarityReport {
        n_draws: n_perturbations,
        epsilon,
        mean_gap: mean(&gaps),
        max_gap: gaps.iter().copied().fold(0.0, f64::max),
        within: gaps.iter().filter(|&&g| g <= epsilon).count(),
        base_gap,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{sample_dataset, DistributionSpec};
    use crate::nn::{Activation, Layer, MlpShape};

    fn net(depth_hidden: usize, width: usize, input: usize, seed: u64) -> MlpModel {
        MlpModel::init(
            &MlpShape {
                input_dim: input,
                hidden: vec![width; depth_hidden],
                output_dim: 2,
                hidden_activation: Activation::Relu,
                has_bias: false,
                dropout: 0.0,
            },
            seed,
        )
        .unwrap()
    }

    #[test]
    fn zero_perturbation_zero_bound() {
        let f = net(2, 6, 4, 1);
        assert_eq!(perturbation_bound(&f, 1.0, &[0.0; 3]).unwrap(), 0.0);
    }

    #[test]
    fn precondition_enforced() {
        let f = net(1, 5, 3, 2);
        let (w, _) = layer_norms(&f);
        let r = perturbation_bound(&f, 1.0, &[w[0], 0.0]);
        assert!(matches!(r, Err(Error::BoundInapplicable { layer: 0, .. })));
    }

    #[test]
    fn linear_in_b_and_u() {
        let f = net(2, 6, 4, 3);
        let (w, _) = layer_norms(&f);
        let u: Vec<f64> = w.iter().map(|x| x / 10.0).collect();
        let base = perturbation_bound(&f, 1.0, &u).unwrap();
        assert!((perturbation_bound(&f, 2.5, &u).unwrap() - 2.5 * base).abs() < 1e-12 * base);
        let mut u2 = u.clone();
        u2[1] *= 2.0;
        let expected = base + std::f64::consts::E * w.iter().product::<f64>() * u[1] / w[1];
        assert!((perturbation_bound(&f, 1.0, &u2).unwrap() - expected).abs() < 1e-12 * expected);
    }

    #[test]
    fn single_linear_layer_is_tight() {
        // f(x) = W x: the deviation U x peaks at ||U||_2 B along the top
        // right singular vector, below e B ||U||_2.
        let mut l = Layer::zeros(2, 2, Activation::Identity);
        l.weights = vec![2.0, 0.0, 0.0, 1.0];
        let f = MlpModel::from_layers(vec![l], false).unwrap();
        let bound = perturbation_bound(&f, 1.0, &[0.5]).unwrap();
        assert!((bound - std::f64::consts::E * 0.5).abs() < 1e-9);
        let u = Matrix::new(2, 2, vec![0.5, 0.0, 0.0, 0.0]);
        let g = f.perturbed(&[u]).unwrap();
        let dev = l2_diff(&g.forward(&[1.0, 0.0]).unwrap(), &f.forward(&[1.0, 0.0]).unwrap());
        assert!((dev - 0.5).abs() < 1e-12 && dev <= bound);
    }

    #[test]
    fn bound_dominates_random_nets() {
        let f = net(2, 8, 5, 4);
        let spec = DistributionSpec::new(vec![0.3], 4, 0.5, 10).unwrap();
        let probe = sample_dataset(&spec, 64, 1).unwrap().inputs();
        let r = domination_check(&f, &probe, 100, 7).unwrap();
        assert_eq!(r.dominated, 100, "max ratio {}", r.max_ratio);
    }

    #[test]
    fn epsilon_monotone() {
        let f = net(1, 8, 4, 5);
        let base = BoundInputs::from_model(&f, 1.0, 1.0, 1000, 0.1);
        let e = generalization_epsilon(&base).unwrap();
        let bigger_gamma = BoundInputs { gamma_margin: 2.0, ..base.clone() };
        assert!(generalization_epsilon(&bigger_gamma).unwrap() < e);
        let more_data = BoundInputs { m: 4000, ..base.clone() };
        assert!(generalization_epsilon(&more_data).unwrap() < e);
        let bad = BoundInputs { gamma_margin: 0.0, ..base };
        assert!(generalization_epsilon(&bad).is_err());
    }

    #[test]
    fn epsilon_closed_form() {
        let inp = BoundInputs {
            b_input: 1.0,
            depth: 2,
            width: 8,
            gamma_margin: 0.5,
            m: 1000,
            sigma_p: 0.1,
            spectral_norms: vec![1.5, 2.0],
            frob_norms: vec![3.0, 2.5],
        };
        // Independent evaluation of the same expression.
        let ratio = 9.0 / 2.25 + 6.25 / 4.0;
        let num = 1.0 * 4.0 * 8.0 * 16f64.ln() * (2.25 * 4.0) * ratio + (2000.0f64 / 0.1).ln();
        let want = (num / (0.25 * 1000.0)).sqrt();
        assert!((generalization_epsilon(&inp).unwrap() - want).abs() < 1e-12 * want);
    }

    #[test]
    fn normalization_preserves_function() {
        let f = net(2, 7, 4, 6);
        let g = normalize_weights(&f).unwrap();
        let (a, _) = layer_norms(&f);
        let (b, _) = layer_norms(&g);
        let pa: f64 = a.iter().product();
        let pb: f64 = b.iter().product();
        assert!((pa - pb).abs() < 1e-9 * pa);
        for x in [[0.3, -1.0, 0.5, 2.0], [1.0, 1.0, -1.0, 0.0]] {
            let (ya, yb) = (f.forward(&x).unwrap(), g.forward(&x).unwrap());
            for (p, q) in ya.iter().zip(&yb) {
                assert!((p - q).abs() < 1e-9 * (1.0 + p.abs()));
            }
        }
        let mut biased = f.clone();
        biased.has_bias = true;
        biased.layers[0].bias[0] = 0.1;
        assert!(normalize_weights(&biased).is_err());
    }

    #[test]
    fn tail_respects_bound() {
        let h = 8;
        let sigma = 0.1;
        let t = union_threshold(h, 3, sigma);
        let rows = spectral_tail_check(h, sigma, &[0.2, 0.4, t], 1000, 3);
        for r in rows {
            assert!(r.exceed_fraction <= r.bound, "{r:?}");
        }
    }

    #[test]
    fn identical_models_zero_gap() {
        let f = net(1, 6, 5, 8);
        let spec = DistributionSpec::new(vec![0.3], 4, 0.5, 10).unwrap();
        let probe = sample_dataset(&spec, 32, 1).unwrap();
        let r = margin_similarity_check(&f, &f, &probe, 0.0001, 1.0, 100, 10, 2).unwrap();
        assert_eq!(r.base_gap, 0.0);
        assert_eq!(r.within, 10);
        let other = net(2, 6, 5, 8);
        assert!(matches!(
            margin_similarity_check(&f, &other, &probe, 0.01, 1.0, 100, 2, 2),
            Err(Error::Structure(_))
        ));
    }
}
