//! Minimal dense feed-forward networks.
//!
//! Layers are stored row-major (`rows = out`, `cols = in`). Networks serve
//! both as suspect classifiers (two logits, class 0 = label -1, class 1 =
//! label +1) and as the distinguisher's scalar regressor.

mod pgd;
mod spectral;
mod train;

use std::fmt;
use std::path::Path;

use rand::Rng;

pub use pgd::{pgd_attack, PgdConfig};
pub use spectral::{frobenius_norm, spectral_norm, Matrix};
pub use train::{
    finite_difference_error, input_gradient, loss, loss_and_gradients, train, train_on, Gradients, Target, Targets,
    TrainConfig, TrainReport,
};

use crate::distribution::Label;
use crate::error::{Error, Result};
use crate::kv;
use crate::rng::rng_from_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z` and output `a`.
    #[inline]
    pub fn derivative(self, z: f64, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
            Activation::Identity => 1.0,
        }
    }

    fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        }
    }

    pub fn parse(s: &str) -> Result<Activation> {
        match s.trim() {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Format(format!("unknown activation `{other}`"))),
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub rows: usize,
    pub cols: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(rows: usize, cols: usize, activation: Activation) -> Self {
        Layer {
            rows,
            cols,
            weights: vec![0.0; rows * cols],
            bias: vec![0.0; rows],
            activation,
        }
    }

    pub fn matrix(&self) -> Matrix {
        Matrix::new(self.rows, self.cols, self.weights.clone())
    }

    /// `out = W x + b` (pre-activation).
    #[inline]
    pub(crate) fn affine(&self, x: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.cols..(i + 1) * self.cols];
            let mut acc = self.bias[i];
            for (w, v) in row.iter().zip(x) {
                acc += w * v;
            }
            *o = acc;
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpModel {
    pub layers: Vec<Layer>,
    /// When false, biases are pinned at zero and never trained.
    pub has_bias: bool,
    /// Inverted-dropout rate applied to hidden activations during training.
    pub dropout: f64,
}

/// Architecture description used to build fresh networks.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpShape {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
    pub hidden_activation: Activation,
    pub has_bias: bool,
    pub dropout: f64,
}

impl MlpModel {
    /// Fresh network with weights and biases drawn from
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`; the last layer is linear.
    pub fn init(shape: &MlpShape, seed: u64) -> Result<Self> {
        if shape.input_dim == 0 || shape.output_dim == 0 || shape.hidden.iter().any(|&h| h == 0) {
            return Err(Error::Config("layer widths must be positive".into()));
        }
        if !(0.0..1.0).contains(&shape.dropout) {
            return Err(Error::Config(format!("dropout {} outside [0, 1)", shape.dropout)));
        }
        let mut rng = rng_from_seed(seed);
        let mut dims = vec![shape.input_dim];
        dims.extend_from_slice(&shape.hidden);
        dims.push(shape.output_dim);
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (cols, rows) = (dims[l], dims[l + 1]);
                let act = if l + 1 == n {
                    Activation::Identity
                } else {
                    shape.hidden_activation
                };
                let bound = 1.0 / (cols as f64).sqrt();
                let mut layer = Layer::zeros(rows, cols, act);
                for w in &mut layer.weights {
                    *w = rng.gen_range(-bound..bound);
                }
                if shape.has_bias {
                    for b in &mut layer.bias {
                        *b = rng.gen_range(-bound..bound);
                    }
                }
                layer
            })
            .collect();
        Ok(MlpModel {
            layers,
            has_bias: shape.has_bias,
            dropout: shape.dropout,
        })
    }

    /// Builds a network from explicit layers, checking that dimensions chain.
    pub fn from_layers(layers: Vec<Layer>, has_bias: bool) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.rows * l.cols || l.bias.len() != l.rows {
                return Err(Error::Format(format!("layer {i} storage does not match {}x{}", l.rows, l.cols)));
            }
            if i > 0 && layers[i - 1].rows != l.cols {
                return Err(Error::Shape {
                    expected: layers[i - 1].rows,
                    got: l.cols,
                });
            }
            if !has_bias && l.bias.iter().any(|&b| b != 0.0) {
                return Err(Error::Config(format!("layer {i} has non-zero bias in a bias-free net")));
            }
        }
        Ok(MlpModel {
            layers,
            has_bias,
            dropout: 0.0,
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].cols
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].rows
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Largest layer dimension `h` (over inputs and outputs of every layer).
    pub fn max_width(&self) -> usize {
        self.layers.iter().map(|l| l.rows.max(l.cols)).max().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::Shape {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        Ok(self.forward_unchecked(x))
    }

    pub(crate) fn forward_unchecked(&self, x: &[f64]) -> Vec<f64> {
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        for layer in &self.layers {
            next.resize(layer.rows, 0.0);
            layer.affine(&cur, &mut next);
            for v in next.iter_mut() {
                *v = layer.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        cur
    }

    /// Predicted class (argmax over logits; ties go to the lower index).
    pub fn predict_class(&self, x: &[f64]) -> Result<usize> {
        let out = self.forward(x)?;
        Ok(argmax(&out))
    }

    /// Binary decision as a label. Two-logit nets use argmax, a single
    /// score output uses its sign (`>= 0` is `+1`).
    pub fn predict_label(&self, x: &[f64]) -> Result<Label> {
        let out = self.forward(x)?;
        match out.len() {
            1 => Ok(if out[0] >= 0.0 { Label::Pos } else { Label::Neg }),
            2 => Ok(if out[1] > out[0] { Label::Pos } else { Label::Neg }),
            n => Err(Error::Interface(format!("{n}-logit network is not a binary classifier"))),
        }
    }

    /// Scalar output of a one-output network.
    pub fn score(&self, x: &[f64]) -> Result<f64> {
        if self.output_dim() != 1 {
            return Err(Error::Shape {
                expected: 1,
                got: self.output_dim(),
            });
        }
        Ok(self.forward(x)?[0])
    }

    /// Accuracy on labeled inputs.
    pub fn accuracy(&self, inputs: &[Vec<f64>], labels: &[Label]) -> Result<f64> {
        if inputs.is_empty() {
            return Err(Error::Config("accuracy of an empty set".into()));
        }
        let mut ok = 0usize;
        for (x, y) in inputs.iter().zip(labels) {
            if self.predict_label(x)? == *y {
                ok += 1;
            }
        }
        Ok(ok as f64 / inputs.len() as f64)
    }

    /// Copy with every weight matrix perturbed by the matching entry of `deltas`.
    pub fn perturbed(&self, deltas: &[Matrix]) -> Result<MlpModel> {
        if deltas.len() != self.layers.len() {
            return Err(Error::Structure(format!(
                "{} perturbations for {} layers",
                deltas.len(),
                self.layers.len()
            )));
        }
        let mut out = self.clone();
        for (l, d) in out.layers.iter_mut().zip(deltas) {
            if d.rows != l.rows || d.cols != l.cols {
                return Err(Error::Structure("perturbation shape mismatch".into()));
            }
            for (w, u) in l.weights.iter_mut().zip(&d.data) {
                *w += u;
            }
        }
        Ok(out)
    }

    pub fn same_structure(&self, other: &MlpModel) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.rows == b.rows && a.cols == b.cols && a.activation == b.activation)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!("dilab-mlp v1\nbias {}\ndropout {}\n", self.has_bias, self.dropout);
        for (i, l) in self.layers.iter().enumerate() {
            s.push_str(&format!(
                "layer_{i}: {} {}; {}; {}; {}\n",
                l.rows,
                l.cols,
                kv::join_f64(&l.weights),
                kv::join_f64(&l.bias),
                l.activation
            ));
        }
        s
    }

    pub fn from_text(text: &str) -> Result<MlpModel> {
        let mut lines = text.lines().filter(|l| !l.trim().is_empty());
        match lines.next() {
            Some("dilab-mlp v1") => {}
            other => return Err(Error::Format(format!("unsupported model header {other:?}"))),
        }
        let mut has_bias = true;
        let mut dropout = 0.0;
        let mut layers = Vec::new();
        for line in lines {
            if let Some(v) = line.strip_prefix("bias ") {
                has_bias = v.trim() == "true";
            } else if let Some(v) = line.strip_prefix("dropout ") {
                dropout = v.trim().parse().map_err(|e| Error::Format(format!("dropout: {e}")))?;
            } else if line.starts_with("layer_") {
                let (_, body) = line
                    .split_once(':')
                    .ok_or_else(|| Error::Format(format!("bad layer line `{line}`")))?;
                let parts: Vec<&str> = body.split(';').collect();
                if parts.len() != 4 {
                    return Err(Error::Format(format!("layer line needs 4 fields: `{line}`")));
                }
                let dims: Vec<usize> = parts[0]
                    .split_whitespace()
                    .map(|t| t.parse().map_err(|e| Error::Format(format!("dims: {e}"))))
                    .collect::<Result<_>>()?;
                if dims.len() != 2 {
                    return Err(Error::Format("layer dims need rows and cols".into()));
                }
                layers.push(Layer {
                    rows: dims[0],
                    cols: dims[1],
                    weights: kv::parse_f64_list(parts[1])?,
                    bias: kv::parse_f64_list(parts[2])?,
                    activation: Activation::parse(parts[3])?,
                });
            } else {
                return Err(Error::Format(format!("unexpected line `{line}`")));
            }
        }
        let mut model = MlpModel::from_layers(layers, has_bias)?;
        model.dropout = dropout;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<MlpModel> {
        Self::from_text(&std::fs::read_to_string(path)?)
    }
}

pub(crate) fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Margin `f(x)[y] - max_{j != y} f(x)[j]`.
pub fn margin_nl(f: &MlpModel, x: &[f64], class: usize) -> Result<f64> {
    let out = f.forward(x)?;
    if out.len() < 2 || class >= out.len() {
        return Err(Error::Shape {
            expected: out.len().max(2),
            got: class,
        });
    }
    let other = out
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != class)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max);
    Ok(out[class] - other)
}

/// Margin with a `{-1, +1}` label.
pub fn margin_label(f: &MlpModel, x: &[f64], y: Label) -> Result<f64> {
    margin_nl(f, x, y.class_index())
}
