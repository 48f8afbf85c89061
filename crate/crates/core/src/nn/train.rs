use rand::seq::SliceRandom;
use rand::Rng;

use super::{pgd_attack, MlpModel, PgdConfig};
use crate::distribution::Dataset;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, LabRng};

/// Training targets: class indices (cross-entropy) or scalar values
/// (squared loss on a one-output network).
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

impl Targets {
    pub fn len(&self) -> usize {
        match self {
            Targets::Classes(v) => v.len(),
            Targets::Values(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn get(&self, i: usize) -> Target {
        match self {
            Targets::Classes(v) => Target::Class(v[i]),
            Targets::Values(v) => Target::Value(v[i]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Target {
    Class(usize),
    Value(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub adversarial: Option<PgdConfig>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 50,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            adversarial: None,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight_decay be >= 0".into()));
        }
        if let Some(p) = &self.adversarial {
            p.validate()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainReport {
    /// Mean training loss per epoch (on adversarial inputs when enabled).
    pub losses: Vec<f64>,
}

/// Parameter-shaped gradient buffers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub bias: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(f: &MlpModel) -> Self {
        Gradients {
            weights: f.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            bias: f.layers.iter().map(|l| vec![0.0; l.bias.len()]).collect(),
        }
    }

    fn clear(&mut self) {
        for v in self.weights.iter_mut().chain(self.bias.iter_mut()) {
            v.iter_mut().for_each(|g| *g = 0.0);
        }
    }
}

struct Cache {
    /// `acts[0]` is the input, `acts[l + 1]` the output of layer `l`.
    acts: Vec<Vec<f64>>,
    pre: Vec<Vec<f64>>,
    /// Inverted-dropout multipliers per hidden layer, when active.
    masks: Vec<Option<Vec<f64>>>,
}

fn forward_cache(f: &MlpModel, x: &[f64], mut dropout: Option<&mut LabRng>) -> Cache {
    let n = f.layers.len();
    let mut acts = Vec::with_capacity(n + 1);
    let mut pre = Vec::with_capacity(n);
    let mut masks = Vec::with_capacity(n);
    acts.push(x.to_vec());
    for (l, layer) in f.layers.iter().enumerate() {
        let mut z = vec![0.0; layer.rows];
        layer.affine(&acts[l], &mut z);
        let mut a: Vec<f64> = z.iter().map(|&v| layer.activation.apply(v)).collect();
        let mask = match dropout.as_deref_mut() {
            Some(rng) if f.dropout > 0.0 && l + 1 < n => {
                let keep = 1.0 - f.dropout;
                let m: Vec<f64> = (0..a.len())
                    .map(|_| if rng.gen::<f64>() < keep { 1.0 / keep } else { 0.0 })
                    .collect();
                a.iter_mut().zip(&m).for_each(|(v, s)| *v *= s);
                Some(m)
            }
            _ => None,
        };
        pre.push(z);
        acts.push(a);
        masks.push(mask);
    }
    Cache { acts, pre, masks }
}

/// Loss and its gradient with respect to the network output.
fn output_loss(out: &[f64], target: Target) -> Result<(f64, Vec<f64>)> {
    match target {
        Target::Class(c) => {
            if out.len() < 2 || c >= out.len() {
                return Err(Error::Shape {
                    expected: out.len(),
                    got: c,
                });
            }
            let mx = out.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = out.iter().map(|v| (v - mx).exp()).collect();
            let s: f64 = exps.iter().sum();
            let loss = s.ln() + mx - out[c];
            let mut g: Vec<f64> = exps.iter().map(|e| e / s).collect();
            g[c] -= 1.0;
            Ok((loss, g))
        }
        Target::Value(t) => {
            if out.len() != 1 {
                return Err(Error::Shape {
                    expected: 1,
                    got: out.len(),
                });
            }
            let r = out[0] - t;
            Ok((r * r, vec![2.0 * r]))
        }
    }
}

/// Backpropagates `dout`; accumulates parameter gradients when `grads` is
/// given and returns the gradient with respect to the input.
fn backward(f: &MlpModel, cache: &Cache, dout: Vec<f64>, mut grads: Option<&mut Gradients>) -> Vec<f64> {
    let mut da = dout;
    for l in (0..f.layers.len()).rev() {
        let layer = &f.layers[l];
        let mut dz = da;
        if let Some(m) = &cache.masks[l] {
            dz.iter_mut().zip(m).for_each(|(v, s)| *v *= s);
        }
        for (i, v) in dz.iter_mut().enumerate() {
            // The derivative needs the pre-dropout activation.
            let a = layer.activation.apply(cache.pre[l][i]);
            *v *= layer.activation.derivative(cache.pre[l][i], a);
        }
        let input = &cache.acts[l];
        if let Some(g) = grads.as_deref_mut() {
            let gw = &mut g.weights[l];
            for (i, d) in dz.iter().enumerate() {
                if *d == 0.0 {
                    continue;
                }
                let row = &mut gw[i * layer.cols..(i + 1) * layer.cols];
                for (w, a) in row.iter_mut().zip(input) {
                    *w += d * a;
                }
            }
            if f.has_bias {
                g.bias[l].iter_mut().zip(&dz).for_each(|(b, d)| *b += d);
            }
        }
        let mut prev = vec![0.0; layer.cols];
        for (i, d) in dz.iter().enumerate() {
            if *d == 0.0 {
                continue;
            }
            let row = &layer.weights[i * layer.cols..(i + 1) * layer.cols];
            for (p, w) in prev.iter_mut().zip(row) {
                *p += d * w;
            }
        }
        da = prev;
    }
    da
}

fn check_input(f: &MlpModel, x: &[f64]) -> Result<()> {
    if x.len() != f.input_dim() {
        return Err(Error::Shape {
            expected: f.input_dim(),
            got: x.len(),
        });
    }
    Ok(())
}

/// Per-sample loss; parameter gradients are added into `grads`.
pub fn loss_and_gradients(f: &MlpModel, x: &[f64], target: Target, grads: &mut Gradients) -> Result<f64> {
    check_input(f, x)?;
    let cache = forward_cache(f, x, None);
    let (loss, dout) = output_loss(cache.acts.last().expect("non-empty"), target)?;
    backward(f, &cache, dout, Some(grads));
    Ok(loss)
}

/// Loss of `f` at `x` for `target`, without gradients.
pub fn loss(f: &MlpModel, x: &[f64], target: Target) -> Result<f64> {
    check_input(f, x)?;
    Ok(output_loss(&f.forward(x)?, target)?.0)
}

fn param_mut(m: &mut MlpModel, l: usize, bias: bool, j: usize) -> &mut f64 {
    if bias {
        &mut m.layers[l].bias[j]
    } else {
        &mut m.layers[l].weights[j]
    }
}

/// Largest relative gap between backprop and central differences with
/// step `h` over every weight and bias. Relative error uses a floor of
/// 1e-3 on the denominator so near-zero gradients compare absolutely.
pub fn finite_difference_error(f: &MlpModel, x: &[f64], target: Target, h: f64) -> Result<f64> {
    let mut g = Gradients::zeros_like(f);
    loss_and_gradients(f, x, target, &mut g)?;
    let mut worst: f64 = 0.0;
    let mut probe = f.clone();
    for l in 0..f.layers.len() {
        for (bias, n) in [(false, f.layers[l].weights.len()), (true, f.layers[l].bias.len())] {
            for j in 0..n {
                let w0 = *param_mut(&mut probe, l, bias, j);
                *param_mut(&mut probe, l, bias, j) = w0 + h;
                let lp = loss(&probe, x, target)?;
                *param_mut(&mut probe, l, bias, j) = w0 - h;
                let lm = loss(&probe, x, target)?;
                *param_mut(&mut probe, l, bias, j) = w0;
                let fd = (lp - lm) / (2.0 * h);
                let an = if bias { g.bias[l][j] } else { g.weights[l][j] };
                worst = worst.max((fd - an).abs() / fd.abs().max(an.abs()).max(1e-3));
            }
        }
    }
    Ok(worst)
}

/// Cross-entropy loss and its gradient with respect to the input.
pub fn input_gradient(f: &MlpModel, x: &[f64], class: usize) -> Result<(f64, Vec<f64>)> {
    check_input(f, x)?;
    let cache = forward_cache(f, x, None);
    let (loss, dout) = output_loss(cache.acts.last().expect("non-empty"), Target::Class(class))?;
    Ok((loss, backward(f, &cache, dout, None)))
}

/// Trains a copy of `f` on a labeled dataset with cross-entropy.
pub fn train(f: &MlpModel, d: &Dataset, cfg: &TrainConfig) -> Result<(MlpModel, TrainReport)> {
    let classes = d.samples.iter().map(|s| s.y.class_index()).collect();
    train_on(f, &d.inputs(), &Targets::Classes(classes), cfg)
}

/// Mini-batch SGD with momentum. Each epoch reshuffles with a seed derived
/// from `(cfg.seed, epoch)`; with `cfg.adversarial` set every sample is
/// replaced by its PGD perturbation against the current weights.
pub fn train_on(
    f: &MlpModel,
    inputs: &[Vec<f64>],
    targets: &Targets,
    cfg: &TrainConfig,
) -> Result<(MlpModel, TrainReport)> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(Error::Config("cannot train on an empty set".into()));
    }
    if inputs.len() != targets.len() {
        return Err(Error::Shape {
            expected: inputs.len(),
            got: targets.len(),
        });
    }
    for x in inputs {
        check_input(f, x)?;
    }
    if cfg.adversarial.is_some() && matches!(targets, Targets::Values(_)) {
        return Err(Error::Config("adversarial training needs class targets".into()));
    }

    let mut model = f.clone();
    let mut report = TrainReport::default();
    let mut grads = Gradients::zeros_like(&model);
    let mut vel = Gradients::zeros_like(&model);
    let mut order: Vec<usize> = (0..inputs.len()).collect();

    for epoch in 0..cfg.epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, epoch as u64));
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.clear();
            for &i in batch {
                let target = targets.get(i);
                let adv;
                let x: &[f64] = match (&cfg.adversarial, target) {
                    (Some(p), Target::Class(c)) => {
                        adv = pgd_attack(&model, &inputs[i], c, p)?;
                        &adv
                    }
                    _ => &inputs[i],
                };
                let cache = forward_cache(&model, x, Some(&mut rng));
                let (loss, dout) = output_loss(cache.acts.last().expect("non-empty"), target)?;
                total += loss;
                backward(&model, &cache, dout, Some(&mut grads));
            }
            let scale = 1.0 / batch.len() as f64;
            for (l, layer) in model.layers.iter_mut().enumerate() {
                for ((w, g), v) in layer.weights.iter_mut().zip(&grads.weights[l]).zip(vel.weights[l].iter_mut()) {
                    *v = cfg.momentum * *v + g * scale + cfg.weight_decay * *w;
                    *w -= cfg.learning_rate * *v;
                }
                if model.has_bias {
                    for ((b, g), v) in layer.bias.iter_mut().zip(&grads.bias[l]).zip(vel.bias[l].iter_mut()) {
                        *v = cfg.momentum * *v + g * scale;
                        *b -= cfg.learning_rate * *v;
                    }
                }
            }
        }
        let mean = total / inputs.len() as f64;
        if !mean.is_finite() {
            return Err(Error::Training {
                epoch,
                reason: format!("loss is {mean}"),
            });
        }
        if model.layers.iter().any(|l| l.weights.iter().any(|w| !w.is_finite())) {
            return Err(Error::Training {
                epoch,
                reason: "non-finite weights".into(),
            });
        }
        report.losses.push(mean);
    }
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::super::{Activation, MlpShape};
    use super::*;
    use crate::distribution::{sample_dataset, DistributionSpec};

    fn shape(input: usize, hidden: Vec<usize>, out: usize, act: Activation) -> MlpShape {
        MlpShape {
            input_dim: input,
            hidden,
            output_dim: out,
            hidden_activation: act,
            has_bias: true,
            dropout: 0.0,
        }
    }

    fn loss_of(f: &MlpModel, x: &[f64], t: Target) -> f64 {
        output_loss(&f.forward(x).unwrap(), t).unwrap().0
    }

    fn check_fd(f: &MlpModel, x: &[f64], t: Target) -> f64 {
        finite_difference_error(f, x, t, 1e-5).unwrap()
    }

    #[test]
    fn gradients_match_finite_differences() {
        let x = [0.3, -0.8, 0.5, 1.1];
        let f = MlpModel::init(&shape(4, vec![6], 2, Activation::Tanh), 1).unwrap();
        assert!(check_fd(&f, &x, Target::Class(1)) <= 1e-4);
        let f = MlpModel::init(&shape(4, vec![5, 5], 1, Activation::Tanh), 2).unwrap();
        assert!(check_fd(&f, &x, Target::Value(0.7)) <= 1e-4);
        let f = MlpModel::init(&shape(4, vec![7], 2, Activation::Relu), 3).unwrap();
        assert!(check_fd(&f, &x, Target::Class(0)) <= 1e-4);
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let f = MlpModel::init(&shape(3, vec![8], 2, Activation::Tanh), 4).unwrap();
        let x = [0.2, -0.4, 0.9];
        let (_, g) = input_gradient(&f, &x, 0).unwrap();
        for j in 0..3 {
            let mut p = x;
            p[j] += 1e-6;
            let mut q = x;
            q[j] -= 1e-6;
            let fd = (loss_of(&f, &p, Target::Class(0)) - loss_of(&f, &q, Target::Class(0))) / 2e-6;
            assert!((fd - g[j]).abs() < 1e-7);
        }
    }

    #[test]
    fn zero_epochs_unchanged() {
        let spec = DistributionSpec::new(vec![0.5], 2, 0.3, 20).unwrap();
        let ds = sample_dataset(&spec, 20, 1).unwrap();
        let f = MlpModel::init(&shape(3, vec![4], 2, Activation::Relu), 5).unwrap();
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        let (g, rep) = train(&f, &ds, &cfg).unwrap();
        assert_eq!(g, f);
        assert!(rep.losses.is_empty());
    }

    #[test]
    fn separable_clusters_fit() {
        let spec = DistributionSpec::new(vec![1.0, 0.5], 3, 0.2, 100).unwrap();
        let ds = sample_dataset(&spec, 100, 7).unwrap();
        let f = MlpModel::init(&shape(5, vec![16], 2, Activation::Relu), 6).unwrap();
        let cfg = TrainConfig {
            epochs: 100,
            seed: 3,
            ..TrainConfig::default()
        };
        let (g, rep) = train(&f, &ds, &cfg).unwrap();
        assert_eq!(g.accuracy(&ds.inputs(), &ds.labels()).unwrap(), 1.0);
        assert!(rep.losses.last().unwrap() < &rep.losses[0]);
    }

    #[test]
    fn training_is_deterministic() {
        let spec = DistributionSpec::new(vec![0.3], 4, 0.5, 40).unwrap();
        let ds = sample_dataset(&spec, 40, 2).unwrap();
        let mut sh = shape(5, vec![8], 2, Activation::Relu);
        sh.dropout = 0.2;
        let f = MlpModel::init(&sh, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 5,
            seed: 11,
            adversarial: Some(PgdConfig::with_gamma(0.05)),
            ..TrainConfig::default()
        };
        let a = train(&f, &ds, &cfg).unwrap().0;
        let b = train(&f, &ds, &cfg).unwrap().0;
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn divergence_reports_epoch() {
        let spec = DistributionSpec::new(vec![1.0], 2, 1.0, 30).unwrap();
        let ds = sample_dataset(&spec, 30, 2).unwrap();
        let f = MlpModel::init(&shape(3, vec![8], 1, Activation::Relu), 1).unwrap();
        let targets = Targets::Values(vec![1e3; 30]);
        let cfg = TrainConfig {
            epochs: 50,
            learning_rate: 10.0,
            momentum: 0.0,
            ..TrainConfig::default()
        };
        match train_on(&f, &ds.inputs(), &targets, &cfg) {
            Err(Error::Training { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_config() {
        let f = MlpModel::init(&shape(2, vec![], 1, Activation::Relu), 1).unwrap();
        let cfg = TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        };
        assert!(train_on(&f, &[vec![0.0, 0.0]], &Targets::Values(vec![0.0]), &cfg).is_err());
        assert!(train_on(&f, &[], &Targets::Values(vec![]), &TrainConfig::default()).is_err());
    }
}
