//! Closed-form linear suspect model and the DI decision rule.
//!
//! One pass of gradient ascent on `y * f(x)` from zero weights with unit
//! learning rate leaves `w1 = m u` and `w2 = sum_i y_i x2_i`, independent of
//! batching and order. The sums are computed with exact (correctly rounded)
//! accumulation so the weights are bit-identical under any permutation.

use std::path::Path;

use crate::distribution::{Dataset, DistributionSpec, LabeledSample, Provenance};
use crate::error::{Error, Result};
use crate::kv;
use crate::rng::derive_named;
use crate::stats::ExactSum;

#[derive(Debug, Clone, PartialEq)]
pub struct LinearModel {
    pub w1: Vec<f64>,
    pub w2: Vec<f64>,
    pub trained_on: Provenance,
}

impl LinearModel {
    pub fn zeros(k: usize, d: usize) -> Self {
        LinearModel {
            w1: vec![0.0; k],
            w2: vec![0.0; d],
            trained_on: Provenance::Custom,
        }
    }

    /// Raw score `w1 . x1 + w2 . x2`.
    pub fn score(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        check_len(self.w1.len(), x1.len())?;
        check_len(self.w2.len(), x2.len())?;
        Ok(dot(&self.w1, x1) + dot(&self.w2, x2))
    }

    /// Score on a concatenated `(x1, x2)` input.
    pub fn score_input(&self, x: &[f64]) -> Result<f64> {
        let k = self.w1.len();
        check_len(k + self.w2.len(), x.len())?;
        Ok(dot(&self.w1, &x[..k]) + dot(&self.w2, &x[k..]))
    }

    pub fn to_text(&self) -> String {
        format!(
            "k = {}\nd = {}\nw1 = \"{}\"\nw2 = \"{}\"\nprovenance = \"{}\"\n",
            self.w1.len(),
            self.w2.len(),
            kv::join_f64(&self.w1),
            kv::join_f64(&self.w2),
            self.trained_on
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let t = kv::parse_table(text)?;
        let k = kv::table_u64(&t, "k")? as usize;
        let d = kv::table_u64(&t, "d")? as usize;
        let w1 = kv::parse_f64_list(kv::table_str(&t, "w1")?)?;
        let w2 = kv::parse_f64_list(kv::table_str(&t, "w2")?)?;
        check_len(k, w1.len())?;
        check_len(d, w2.len())?;
        let trained_on = kv::table_str(&t, "provenance")?.parse()?;
        Ok(LinearModel { w1, w2, trained_on })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape { expected, got })
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `w1 = m u`, `w2 = sum_i y_i x2_i`.
pub fn train_linear(s: &Dataset) -> Result<LinearModel> {
    if s.is_empty() {
        return Err(Error::Config("cannot train on an empty dataset".into()));
    }
    let k = s.spec.k();
    let d = s.spec.noise_dim;
    let mut acc: Vec<ExactSum> = (0..d).map(|_| ExactSum::new()).collect();
    for smp in &s.samples {
        check_len(k, smp.x1.len())?;
        check_len(d, smp.x2.len())?;
        let sign = smp.y.sign();
        for (a, v) in acc.iter_mut().zip(&smp.x2) {
            a.add(sign * v);
        }
    }
    let m = s.len() as f64;
    Ok(LinearModel {
        w1: s.spec.u.iter().map(|v| m * v).collect(),
        w2: acc.into_iter().map(|a| a.value()).collect(),
        trained_on: s.provenance,
    })
}

/// Prediction margin `y * f(x)`.
pub fn margin(f: &LinearModel, sample: &LabeledSample) -> Result<f64> {
    Ok(sample.y.sign() * f.score(&sample.x1, &sample.x2)?)
}

/// Fraction of samples with non-negative margin (decision `sgn(f(x))`).
pub fn accuracy(f: &LinearModel, d: &Dataset) -> Result<f64> {
    if d.is_empty() {
        return Err(Error::Config("accuracy of an empty dataset".into()));
    }
    let mut correct = 0usize;
    for s in &d.samples {
        if margin(f, s)? >= 0.0 {
            correct += 1;
        }
    }
    Ok(correct as f64 / d.len() as f64)
}

/// Exactly-summed mean margin over a dataset.
pub fn mean_margin(f: &LinearModel, d: &Dataset) -> Result<f64> {
    let mut acc = ExactSum::new();
    for s in &d.samples {
        acc.add(margin(f, s)?);
    }
    Ok(acc.value() / d.len() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecisionConfig {
    pub lambda: f64,
    pub k_reveal: usize,
}

impl DecisionConfig {
    /// Checks `0 <= lambda <= D sigma^2` and `1 <= k <= m`.
    pub fn new(spec: &DistributionSpec, lambda: f64, k_reveal: usize) -> Result<Self> {
        if !(0.0..=spec.margin_gap()).contains(&lambda) {
            return Err(Error::Config(format!(
                "lambda {lambda} outside [0, D sigma^2 = {}]",
                spec.margin_gap()
            )));
        }
        if k_reveal == 0 || k_reveal > spec.m {
            return Err(Error::Config(format!(
                "k_reveal {k_reveal} outside [1, m = {}]",
                spec.m
            )));
        }
        Ok(DecisionConfig { lambda, k_reveal })
    }

    /// `lambda = D sigma^2 / 2`.
    pub fn optimal(spec: &DistributionSpec, k_reveal: usize) -> Result<Self> {
        Self::new(spec, spec.margin_gap() / 2.0, k_reveal)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PsiOutcome {
    /// `true` = stolen (1), `false` = independent (0).
    pub stolen: bool,
    /// Mean-margin difference between the private and public `k`-subsets.
    pub statistic: f64,
}

/// The verifier's decision: draw seeded `k`-subsets of `sv` and `s0` and
/// flag the model when the mean-margin difference is at least `lambda`.
pub fn psi_decide(
    f: &LinearModel,
    sv: &Dataset,
    s0: &Dataset,
    cfg: &DecisionConfig,
    seed: u64,
) -> Result<PsiOutcome> {
    let k = cfg.k_reveal;
    if k == 0 || k > sv.len().min(s0.len()) {
        return Err(Error::Config(format!(
            "k_reveal {k} exceeds dataset sizes ({}, {})",
            sv.len(),
            s0.len()
        )));
    }
    let sv_k = sv.random_subset(k, derive_named(seed, "psi/sv"))?;
    let s0_k = s0.random_subset(k, derive_named(seed, "psi/s0"))?;
    let t = mean_margin(f, &sv_k)? - mean_margin(f, &s0_k)?;
    Ok(PsiOutcome {
        stolen: decide(t, cfg.lambda),
        statistic: t,
    })
}

/// Ties go to "stolen".
pub fn decide(statistic: f64, lambda: f64) -> bool {
    statistic >= lambda
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distribution::{sample_dataset, Label};

    fn spec(d: usize) -> DistributionSpec {
        DistributionSpec::new(vec![0.5, -0.25], d, 0.5, 50).unwrap()
    }

    #[test]
    fn single_sample_weights() {
        let s = spec(3);
        let mut ds = sample_dataset(&s, 1, 1).unwrap();
        ds.samples[0] = LabeledSample::new(0, &s.u, vec![1.0, 2.0, -3.0], Label::Pos);
        let f = train_linear(&ds).unwrap();
        assert_eq!(f.w2, vec![1.0, 2.0, -3.0]);
        assert_eq!(f.w1, s.u);
    }

    #[test]
    fn opposite_labels_cancel() {
        let s = spec(2);
        let mut ds = sample_dataset(&s, 2, 1).unwrap();
        ds.samples[0] = LabeledSample::new(0, &s.u, vec![0.7, -0.3], Label::Pos);
        ds.samples[1] = LabeledSample::new(1, &s.u, vec![0.7, -0.3], Label::Neg);
        let f = train_linear(&ds).unwrap();
        assert_eq!(f.w2, vec![0.0, 0.0]);
    }

    #[test]
    fn zero_model_zero_margin() {
        let s = spec(4);
        let ds = sample_dataset(&s, 10, 2).unwrap();
        let f = LinearModel::zeros(2, 4);
        for smp in &ds.samples {
            assert_eq!(margin(&f, smp).unwrap(), 0.0);
        }
    }

    #[test]
    fn shape_errors() {
        let f = LinearModel::zeros(2, 4);
        let other = sample_dataset(&spec(3), 2, 1).unwrap();
        assert!(matches!(margin(&f, &other.samples[0]), Err(Error::Shape { .. })));
        let empty = Dataset {
            samples: vec![],
            ..other.clone()
        };
        assert!(train_linear(&empty).is_err());
        assert!(accuracy(&f, &empty).is_err());
    }

    #[test]
    fn psi_same_dataset_is_zero() {
        let s = spec(5);
        let ds = sample_dataset(&s, 50, 3).unwrap();
        let f = train_linear(&ds).unwrap();
        let cfg = DecisionConfig::optimal(&s, 50).unwrap();
        let out = psi_decide(&f, &ds, &ds, &cfg, 17).unwrap();
        assert_eq!(out.statistic, 0.0);
        assert!(!out.stolen);
    }

    #[test]
    fn psi_rejects_oversized_k() {
        let s = spec(5);
        let ds = sample_dataset(&s, 10, 3).unwrap();
        let f = train_linear(&ds).unwrap();
        let cfg = DecisionConfig::optimal(&s, 20).unwrap();
        assert!(matches!(psi_decide(&f, &ds, &ds, &cfg, 1), Err(Error::Config(_))));
    }

    #[test]
    fn decision_config_bounds() {
        let s = spec(4);
        assert!(DecisionConfig::new(&s, -0.1, 1).is_err());
        assert!(DecisionConfig::new(&s, s.margin_gap() * 1.01, 1).is_err());
        assert!(DecisionConfig::new(&s, 0.0, 0).is_err());
        assert!(DecisionConfig::new(&s, 0.0, 51).is_err());
        assert!(DecisionConfig::new(&s, s.margin_gap(), 50).is_ok());
    }

    #[test]
    fn ties_are_stolen() {
        assert!(decide(0.5, 0.5));
        assert!(!decide(0.499, 0.5));
    }

    #[test]
    fn model_text_round_trip() {
        let ds = sample_dataset(&spec(3), 9, 4).unwrap().with_provenance(Provenance::Independent);
        let f = train_linear(&ds).unwrap();
        assert_eq!(LinearModel::from_text(&f.to_text()).unwrap(), f);
    }
}
