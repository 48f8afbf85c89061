//! Black-box margin embeddings by random-direction walks.
//!
//! Each sample gets `n_directions` random sign vectors scaled to `step_size`
//! (an l-infinity step). Along each direction the walk takes unit steps until
//! the model's decision leaves the true label; the embedding is the distance
//! travelled. Directions are keyed on `(cfg.seed, sample.id)` so that the
//! same sample is probed identically regardless of which model is queried.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::Rng;
use rayon::prelude::*;

use crate::distribution::{Dataset, Label, LabeledSample};
use crate::error::{Error, Result};
use crate::linear::LinearModel;
use crate::nn::MlpModel;
use crate::rng::{derive_seed, rng_from_seed};

/// Anything that returns a binary decision for an input vector.
pub trait Classifier: Sync {
    fn input_dim(&self) -> usize;
    fn classify(&self, x: &[f64]) -> Result<Label>;
}

impl Classifier for MlpModel {
    fn input_dim(&self) -> usize {
        MlpModel::input_dim(self)
    }

    fn classify(&self, x: &[f64]) -> Result<Label> {
        self.predict_label(x)
    }
}

impl Classifier for LinearModel {
    fn input_dim(&self) -> usize {
        self.w1.len() + self.w2.len()
    }

    fn classify(&self, x: &[f64]) -> Result<Label> {
        Ok(if self.score_input(x)? >= 0.0 {
            Label::Pos
        } else {
            Label::Neg
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    pub n_directions: usize,
    pub max_steps: usize,
    pub step_size: f64,
    pub seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        WalkConfig {
            n_directions: 30,
            max_steps: 50,
            step_size: 0.02,
            seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_directions == 0 || self.max_steps == 0 {
            return Err(Error::Config("walk needs n_directions >= 1 and max_steps >= 1".into()));
        }
        if !(self.step_size > 0.0 && self.step_size.is_finite()) {
            return Err(Error::Config(format!("step_size {} must be positive", self.step_size)));
        }
        Ok(())
    }

    /// Distance reported for a direction that never flips the decision.
    pub fn cap(&self) -> f64 {
        self.max_steps as f64 * self.step_size
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    pub distances: Vec<f64>,
    pub sample_id: u64,
    /// 1 for private-origin samples, 0 for public-origin ones.
    pub b: u8,
    pub queries: u64,
}

/// Steps along `direction` from `x` until `model` stops predicting `y`.
/// Returns the number of steps taken and whether the decision flipped.
pub fn walk_direction<C: Classifier + ?Sized>(
    model: &C,
    x: &[f64],
    y: Label,
    direction: &[f64],
    max_steps: usize,
) -> Result<(usize, bool)> {
    let mut probe = vec![0.0; x.len()];
    for s in 1..=max_steps {
        let t = s as f64;
        for ((p, xi), di) in probe.iter_mut().zip(x).zip(direction) {
            *p = xi + t * di;
        }
        if model.classify(&probe)? != y {
            return Ok((s, true));
        }
    }
    Ok((max_steps, false))
}

/// Seeded l-infinity directions for one sample.
pub fn directions(cfg: &WalkConfig, sample_id: u64, dim: usize) -> Vec<Vec<f64>> {
    let mut rng = rng_from_seed(derive_seed(cfg.seed, sample_id));
    (0..cfg.n_directions)
        .map(|_| {
            (0..dim)
                .map(|_| if rng.gen::<bool>() { cfg.step_size } else { -cfg.step_size })
                .collect()
        })
        .collect()
}

pub fn blind_walk<C: Classifier + ?Sized>(model: &C, sample: &LabeledSample, cfg: &WalkConfig) -> Result<Embedding> {
    cfg.validate()?;
    let x = sample.input();
    if x.len() != model.input_dim() {
        return Err(Error::Shape {
            expected: model.input_dim(),
            got: x.len(),
        });
    }
    let mut distances = Vec::with_capacity(cfg.n_directions);
    let mut queries = 0u64;
    for dir in directions(cfg, sample.id, x.len()) {
        let (steps, _) = walk_direction(model, &x, sample.y, &dir, cfg.max_steps)?;
        queries += steps as u64;
        distances.push(steps as f64 * cfg.step_size);
    }
    Ok(Embedding {
        distances,
        sample_id: sample.id,
        b: 0,
        queries,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    pub embeddings: Vec<Embedding>,
    pub total_queries: u64,
}

impl EmbeddingSet {
    pub fn of_class(&self, b: u8) -> Vec<&Embedding> {
        self.embeddings.iter().filter(|e| e.b == b).collect()
    }
}

/// Walks every sample of one dataset in parallel, tagging embeddings with `b`.
pub fn embed_samples<C: Classifier + ?Sized>(model: &C, d: &Dataset, b: u8, cfg: &WalkConfig) -> Result<Vec<Embedding>> {
    d.samples
        .par_iter()
        .map(|s| {
            let mut e = blind_walk(model, s, cfg)?;
            e.b = b;
            Ok(e)
        })
        .collect()
}

/// Embeds equal-size private (`b = 1`) and public (`b = 0`) subsets.
pub fn embed_dataset<C: Classifier + ?Sized>(
    model: &C,
    sv_subset: &Dataset,
    s0_subset: &Dataset,
    cfg: &WalkConfig,
) -> Result<EmbeddingSet> {
    if sv_subset.is_empty() || s0_subset.is_empty() {
        return Err(Error::Protocol("embedding subsets must be non-empty".into()));
    }
    if sv_subset.len() != s0_subset.len() {
        return Err(Error::Protocol(format!(
            "private and public subsets differ in size ({} vs {})",
            sv_subset.len(),
            s0_subset.len()
        )));
    }
    let mut embeddings = embed_samples(model, sv_subset, 1, cfg)?;
    embeddings.extend(embed_samples(model, s0_subset, 0, cfg)?);
    let total_queries = embeddings.iter().map(|e| e.queries).sum();
    Ok(EmbeddingSet {
        embeddings,
        total_queries,
    })
}

pub fn write_embeddings_csv<W: Write>(embeddings: &[Embedding], mut w: W) -> Result<()> {
    let n = embeddings.first().map_or(0, |e| e.distances.len());
    let mut header = String::from("sample_id,b");
    for i in 0..n {
        header.push_str(&format!(",d_{i}"));
    }
    writeln!(w, "{header}")?;
    for e in embeddings {
        if e.distances.len() != n {
            return Err(Error::Shape {
                expected: n,
                got: e.distances.len(),
            });
        }
        let mut line = format!("{},{}", e.sample_id, e.b);
        for d in &e.distances {
            line.push_str(&format!(",{d}"));
        }
        writeln!(w, "{line}")?;
    }
    Ok(())
}

pub fn read_embeddings_csv<R: BufRead>(r: R) -> Result<Vec<Embedding>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| Error::Format("empty embeddings file".into()))??;
    if !header.starts_with("sample_id,b") {
        return Err(Error::Format(format!("unexpected embeddings header `{header}`")));
    }
    let n = header.split(',').count() - 2;
    let mut out = Vec::new();
    for (row, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != n + 2 {
            return Err(Error::Format(format!("row {row}: expected {} fields", n + 2)));
        }
        let bad = |e: &dyn std::fmt::Display| Error::Format(format!("row {row}: {e}"));
        let sample_id = fields[0].parse().map_err(|e| bad(&e))?;
        let b: u8 = fields[1].parse().map_err(|e| bad(&e))?;
        if b > 1 {
            return Err(Error::Format(format!("row {row}: b must be 0 or 1")));
        }
        let distances = fields[2..]
            .iter()
            .map(|f| f.parse().map_err(|e| bad(&e)))
            .collect::<Result<Vec<f64>>>()?;
        out.push(Embedding {
            distances,
            sample_id,
            b,
            queries: 0,
        });
    }
    Ok(out)
}

pub fn save_embeddings(embeddings: &[Embedding], path: &Path) -> Result<()> {
    let f = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(f);
    write_embeddings_csv(embeddings, &mut w)?;
    w.flush()?;
    Ok(())
}

pub fn load_embeddings(path: &Path) -> Result<Vec<Embedding>> {
    read_embeddings_csv(std::io::BufReader::new(std::fs::File::open(path)?))
}
