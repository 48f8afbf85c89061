//! Distinguisher training, scoring and the one-sided ownership test.
//!
//! The distinguisher `g_V` is a small regressor on Blind Walk embeddings,
//! trained with squared loss towards 0 for private-origin (`b = 1`) and 1 for
//! public-origin (`b = 0`) embeddings. Verification compares the scores of
//! `k` private and `k` public samples with a Welch t-test of
//! `H0: mu <= mu_V` against `H_a: mu > mu_V`.

use std::fmt;

use rand::seq::SliceRandom;

use crate::blindwalk::{embed_samples, Classifier, Embedding, WalkConfig};
use crate::distribution::Dataset;
use crate::error::{Error, Result};
use crate::nn::{train_on, Activation, MlpModel, MlpShape, Targets, TrainConfig};
use crate::rng::{derive_named, rng_from_seed};
use crate::stats::welch_one_sided;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GvArch {
    /// One tanh hidden layer (two weight layers).
    TwoLayerTanh,
    /// Three tanh hidden layers with dropout (four weight layers).
    FourLayerDropout,
}

impl GvArch {
    pub fn name(self) -> &'static str {
        match self {
            GvArch::TwoLayerTanh => "two_layer_tanh",
            GvArch::FourLayerDropout => "four_layer_dropout",
        }
    }

    pub fn parse(s: &str) -> Result<GvArch> {
        match s.trim() {
            "two_layer_tanh" => Ok(GvArch::TwoLayerTanh),
            "four_layer_dropout" => Ok(GvArch::FourLayerDropout),
            other => Err(Error::Config(format!("unknown distinguisher arch `{other}`"))),
        }
    }
}

impl fmt::Display for GvArch {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GvConfig {
    pub arch: GvArch,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for GvConfig {
    fn default() -> Self {
        GvConfig {
            arch: GvArch::TwoLayerTanh,
            hidden: 32,
            dropout: 0.1,
            epochs: 300,
            batch_size: 16,
            learning_rate: 0.05,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Distinguisher {
    pub net: MlpModel,
    pub arch: GvArch,
    /// Embeddings are multiplied by this before entering the net.
    pub input_scale: f64,
    pub n_private: usize,
    pub n_public: usize,
    pub seed: u64,
}

/// Trains `g_V` on labeled embeddings.
pub fn train_gv(embeddings: &[Embedding], cfg: &GvConfig) -> Result<Distinguisher> {
    let n_private = embeddings.iter().filter(|e| e.b == 1).count();
    let n_public = embeddings.len() - n_private;
    if n_private == 0 || n_public == 0 {
        return Err(Error::Training {
            epoch: 0,
            reason: "distinguisher needs embeddings from both private and public samples".into(),
        });
    }
    let dim = embeddings[0].distances.len();
    if let Some(e) = embeddings.iter().find(|e| e.distances.len() != dim) {
        return Err(Error::Shape {
            expected: dim,
            got: e.distances.len(),
        });
    }
    let max = embeddings
        .iter()
        .flat_map(|e| e.distances.iter().copied())
        .fold(0.0f64, f64::max);
    let input_scale = if max > 0.0 { 1.0 / max } else { 1.0 };
    let (hidden, dropout) = match cfg.arch {
        GvArch::TwoLayerTanh => (vec![cfg.hidden], 0.0),
        GvArch::FourLayerDropout => (vec![cfg.hidden; 3], cfg.dropout),
    };
    let shape = MlpShape {
        input_dim: dim,
        hidden,
        output_dim: 1,
        hidden_activation: Activation::Tanh,
        has_bias: true,
        dropout,
    };
    let init = MlpModel::init(&shape, derive_named(cfg.seed, "gv/init"))?;
    let inputs: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|e| e.distances.iter().map(|d| d * input_scale).collect())
        .collect();
    let targets = Targets::Values(embeddings.iter().map(|e| if e.b == 1 { 0.0 } else { 1.0 }).collect());
    let tcfg = TrainConfig {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        learning_rate: cfg.learning_rate,
        momentum: 0.9,
        weight_decay: 0.0,
        adversarial: None,
        seed: derive_named(cfg.seed, "gv/train"),
    };
    let (net, _) = train_on(&init, &inputs, &targets, &tcfg)?;
    Ok(Distinguisher {
        net,
        arch: cfg.arch,
        input_scale,
        n_private,
        n_public,
        seed: cfg.seed,
    })
}

/// Embeds a private and a public pool through `model` and trains `g_V` on
/// the result. Pools may differ in size.
pub fn build_gv<C: Classifier + ?Sized>(
    model: &C,
    private: &Dataset,
    public: &Dataset,
    walk: &WalkConfig,
    cfg: &GvConfig,
) -> Result<Distinguisher> {
    let mut emb = embed_samples(model, private, 1, walk)?;
    emb.extend(embed_samples(model, public, 0, walk)?);
    train_gv(&emb, cfg)
}

/// `g_V` trained with the public pool augmented by a portion of
/// independent data. An empty portion reduces to [`build_gv`].
pub fn augment_gv_training<C: Classifier + ?Sized>(
    model: &C,
    sv: &Dataset,
    s0: &Dataset,
    si_portion: &Dataset,
    walk: &WalkConfig,
    cfg: &GvConfig,
) -> Result<Distinguisher> {
    let public = if si_portion.is_empty() {
        s0.clone()
    } else {
        s0.concat(si_portion)?
    };
    build_gv(model, sv, &public, walk, cfg)
}

pub fn score(g: &Distinguisher, e: &Embedding) -> Result<f64> {
    let x: Vec<f64> = e.distances.iter().map(|d| d * g.input_scale).collect();
    g.net.score(&x)
}

pub fn score_batch(g: &Distinguisher, es: &[Embedding]) -> Result<Vec<f64>> {
    es.iter().map(|e| score(g, e)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    Stolen,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Verdict::Stolen => "stolen",
            Verdict::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VerificationReport {
    /// Mean score on public-origin embeddings.
    pub mu: f64,
    /// Mean score on private-origin embeddings.
    pub mu_v: f64,
    pub delta_mu: f64,
    pub t: f64,
    pub p: f64,
    pub alpha: f64,
    pub verdict: Verdict,
    /// Both score vectors had zero variance.
    pub degenerate: bool,
}

impl VerificationReport {
    pub const CSV_HEADER: &'static str = "suspect,delta_mu,t,p,alpha,verdict,k,seed";

    pub fn csv_row(&self, suspect: &str, k: usize, seed: u64) -> String {
        format!(
            "{suspect},{},{},{},{},{},{k},{seed}",
            self.delta_mu, self.t, self.p, self.alpha, self.verdict
        )
    }

    pub fn to_text(&self) -> String {
        format!(
            "mu = {}\nmu_v = {}\ndelta_mu = {}\nt = {}\np = {}\nalpha = {}\nverdict = \"{}\"\ndegenerate = {}\n",
            self.mu, self.mu_v, self.delta_mu, self.t, self.p, self.alpha, self.verdict, self.degenerate
        )
    }
}

/// One-sided Welch test; `stolen` iff `p < alpha`.
pub fn hypothesis_test(scores_v: &[f64], scores_0: &[f64], alpha: f64) -> Result<VerificationReport> {
    if scores_v.len() < 2 || scores_0.len() < 2 {
        return Err(Error::Protocol("each score vector needs at least two entries".into()));
    }
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::Config(format!("alpha {alpha} outside [0, 1]")));
    }
    let w = welch_one_sided(scores_0, scores_v);
    Ok(VerificationReport {
        mu: w.mean_a,
        mu_v: w.mean_b,
        delta_mu: w.mean_a - w.mean_b,
        t: w.t,
        p: w.p_greater,
        alpha,
        verdict: if w.p_greater < alpha {
            Verdict::Stolen
        } else {
            Verdict::Inconclusive
        },
        degenerate: w.degenerate,
    })
}

/// Monte-Carlo permutation p-value for the Welch statistic of
/// `mean_a > mean_b` (counts ties as extreme, with the `+1` correction).
pub fn permutation_p_value(a: &[f64], b: &[f64], n_perm: usize, seed: u64) -> f64 {
    let t_obs = welch_one_sided(a, b).t;
    let mut pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let mut rng = rng_from_seed(seed);
    let mut hits = 0usize;
    for _ in 0..n_perm {
        pooled.shuffle(&mut rng);
        let (pa, pb) = pooled.split_at(a.len());
        if welch_one_sided(pa, pb).t >= t_obs {
            hits += 1;
        }
    }
    (hits + 1) as f64 / (n_perm + 1) as f64
}

/// End-to-end check of one suspect: sample `k` private and `k` public
/// points, walk, score with `g`, test.
#[allow(clippy::too_many_arguments)]
pub fn verify_ownership<C: Classifier + ?Sized>(
    suspect: &C,
    sv: &Dataset,
    s0: &Dataset,
    g: &Distinguisher,
    k: usize,
    walk: &WalkConfig,
    alpha: f64,
    seed: u64,
) -> Result<VerificationReport> {
    if k < 2 || k > sv.len().min(s0.len()) {
        return Err(Error::Config(format!(
            "k = {k} must lie in [2, {}]",
            sv.len().min(s0.len())
        )));
    }
    let sv_k = sv.random_subset(k, derive_named(seed, "verify/sv"))?;
    let s0_k = s0.random_subset(k, derive_named(seed, "verify/s0"))?;
    let ev = embed_samples(suspect, &sv_k, 1, walk)?;
    let e0 = embed_samples(suspect, &s0_k, 0, walk)?;
    hypothesis_test(&score_batch(g, &ev)?, &score_batch(g, &e0)?, alpha)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::derive_seed;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn emb(d: Vec<f64>, b: u8, id: u64) -> Embedding {
        Embedding {
            distances: d,
            sample_id: id,
            b,
            queries: 0,
        }
    }

    #[test]
    fn identical_scores_inconclusive() {
        let s = [0.2, 0.4, 0.9, 0.1];
        let r = hypothesis_test(&s, &s, 0.01).unwrap();
        assert_eq!(r.t, 0.0);
        assert!((r.p - 0.5).abs() < 1e-15);
        assert_eq!(r.verdict, Verdict::Inconclusive);
        assert!(hypothesis_test(&[1.0], &s, 0.01).is_err());
    }

    #[test]
    fn separated_scores_significant() {
        let mut rng = rng_from_seed(1);
        let n = Normal::new(0.0, 0.1).unwrap();
        let v: Vec<f64> = (0..30).map(|_| n.sample(&mut rng)).collect();
        let o: Vec<f64> = (0..30).map(|_| 1.0 + n.sample(&mut rng)).collect();
        let r = hypothesis_test(&v, &o, 0.01).unwrap();
        assert!(r.p < 1e-10);
        assert_eq!(r.verdict, Verdict::Stolen);
        assert!(r.delta_mu > 0.9);
    }

    #[test]
    fn degenerate_flagged() {
        let r = hypothesis_test(&[0.5, 0.5], &[0.5, 0.5, 0.5], 0.01).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 0.5);
    }

    #[test]
    fn affine_invariance() {
        let mut rng = rng_from_seed(2);
        for _ in 0..20 {
            let v: Vec<f64> = (0..8).map(|_| rng.gen::<f64>()).collect();
            let o: Vec<f64> = (0..9).map(|_| rng.gen::<f64>() + 0.3).collect();
            let (a, c) = (rng.gen_range(0.1..10.0), rng.gen_range(-5.0..5.0));
            let r1 = hypothesis_test(&v, &o, 0.05).unwrap();
            let tv: Vec<f64> = v.iter().map(|x| a * x + c).collect();
            let to: Vec<f64> = o.iter().map(|x| a * x + c).collect();
            let r2 = hypothesis_test(&tv, &to, 0.05).unwrap();
            assert!((r1.t - r2.t).abs() < 1e-9 * (1.0 + r1.t.abs()));
            assert!((r1.p - r2.p).abs() < 1e-9);
            assert_eq!(r1.verdict, r2.verdict);
        }
    }

    #[test]
    fn matches_permutation_oracle() {
        let mut rng = rng_from_seed(3);
        let n = Normal::new(0.0, 1.0).unwrap();
        for (i, shift) in [0.0, 0.5, 1.0].iter().enumerate() {
            let a: Vec<f64> = (0..10).map(|_| shift + n.sample(&mut rng)).collect();
            let b: Vec<f64> = (0..10).map(|_| n.sample(&mut rng)).collect();
            let p = welch_one_sided(&a, &b).p_greater;
            let perm = permutation_p_value(&a, &b, 20_000, derive_seed(4, i as u64));
            assert!((p - perm).abs() < 0.03, "{p} vs {perm}");
        }
    }

    #[test]
    fn null_calibration() {
        // Both samples from the same distribution: rejections near alpha.
        let mut rejections = 0;
        let n = Normal::new(0.3, 0.2).unwrap();
        for s in 0..400 {
            let mut rng = rng_from_seed(derive_seed(9, s));
            let v: Vec<f64> = (0..10).map(|_| n.sample(&mut rng)).collect();
            let o: Vec<f64> = (0..10).map(|_| n.sample(&mut rng)).collect();
            if hypothesis_test(&v, &o, 0.05).unwrap().p < 0.05 {
                rejections += 1;
            }
        }
        let frac = rejections as f64 / 400.0;
        assert!((frac - 0.05).abs() <= 0.04, "{frac}");
    }

    #[test]
    fn gv_learns_separable_embeddings() {
        let mut es = Vec::new();
        let mut rng = rng_from_seed(5);
        for i in 0..40 {
            let small: Vec<f64> = (0..6).map(|_| rng.gen_range(0.02..0.2)).collect();
            es.push(emb(small, 1, i));
            es.push(emb(vec![1.0; 6], 0, 100 + i));
        }
        let g = train_gv(&es, &GvConfig { epochs: 100, ..GvConfig::default() }).unwrap();
        let scores = score_batch(&g, &es).unwrap();
        let (mut v, mut o) = (Vec::new(), Vec::new());
        for (e, s) in es.iter().zip(&scores) {
            if e.b == 1 {
                v.push(*s)
            } else {
                o.push(*s)
            }
        }
        let r = hypothesis_test(&v, &o, 0.01).unwrap();
        assert!(r.delta_mu > 0.5, "{r:?}");
    }

    #[test]
    fn gv_rejects_single_class() {
        let es = vec![emb(vec![0.1, 0.2], 1, 0), emb(vec![0.3, 0.2], 1, 1)];
        assert!(matches!(train_gv(&es, &GvConfig::default()), Err(Error::Training { .. })));
    }

    #[test]
    fn score_is_scaled_forward() {
        let es = vec![emb(vec![0.1, 0.4], 1, 0), emb(vec![0.5, 0.2], 0, 1)];
        let g = train_gv(&es, &GvConfig { epochs: 3, ..GvConfig::default() }).unwrap();
        for e in &es {
            let x: Vec<f64> = e.distances.iter().map(|d| d * g.input_scale).collect();
            assert_eq!(score(&g, e).unwrap(), g.net.forward(&x).unwrap()[0]);
        }
        let batch = score_batch(&g, &es).unwrap();
        assert_eq!(batch[1], score(&g, &es[1]).unwrap());
        assert!(score(&g, &emb(vec![0.1], 0, 2)).is_err());
    }

    #[test]
    fn zero_weight_scores_zero() {
        let es = vec![emb(vec![0.1, 0.4], 1, 0), emb(vec![0.5, 0.2], 0, 1)];
        let mut g = train_gv(&es, &GvConfig { epochs: 0, ..GvConfig::default() }).unwrap();
        for l in &mut g.net.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
        assert_eq!(score(&g, &es[0]).unwrap(), 0.0);
    }
}
