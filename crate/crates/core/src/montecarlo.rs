//! Seeded trial harness that estimates the linear-model probabilities by
//! direct simulation and sets them against the closed forms.

use std::fmt;
use std::io::Write;

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::analytic;
use crate::distribution::{sample_dataset, Dataset, DistributionSpec, Provenance};
use crate::error::{Error, Result};
use crate::linear::{mean_margin, psi_decide, train_linear, DecisionConfig, LinearModel};
use crate::rng::rng_from_seed;
use crate::rng::{derive_named, derive_seed};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scenario {
    /// Suspect trained on the victim's own data.
    TpDependent,
    /// Suspect trained on a fresh independent dataset.
    FpIndependent,
    /// Suspect's training set contains `k - p` of the `k` revealed private
    /// samples; the remaining `p` revealed samples are independent of it.
    Overlap { p: usize },
    /// Single revealed sample against a dependent model.
    Mi,
}

impl Scenario {
    pub fn parse(s: &str) -> Result<Scenario> {
        let s = s.trim();
        match s {
            "TP_dependent" | "tp" => Ok(Scenario::TpDependent),
            "FP_independent" | "fp" => Ok(Scenario::FpIndependent),
            "MI" | "mi" => Ok(Scenario::Mi),
            _ => {
                let inner = s
                    .strip_prefix("OVERLAP(")
                    .or_else(|| s.strip_prefix("overlap("))
                    .and_then(|r| r.strip_suffix(')'))
                    .ok_or_else(|| Error::Plan(format!("unknown scenario `{s}`")))?;
                let p = inner
                    .trim()
                    .parse()
                    .map_err(|e| Error::Plan(format!("bad overlap count `{inner}`: {e}")))?;
                Ok(Scenario::Overlap { p })
            }
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::TpDependent => f.write_str("TP_dependent"),
            Scenario::FpIndependent => f.write_str("FP_independent"),
            Scenario::Overlap { p } => write!(f, "OVERLAP({p})"),
            Scenario::Mi => f.write_str("MI"),
        }
    }
}

/// Decision threshold of a plan.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Threshold {
    /// `D sigma^2 / 2`, or half the expected statistic in the overlap scenario.
    Optimal,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialPlan {
    pub spec: DistributionSpec,
    pub k_reveal: usize,
    pub threshold: Threshold,
    pub n_trials: usize,
    pub scenario: Scenario,
    pub base_seed: u64,
}

impl TrialPlan {
    pub fn new(spec: DistributionSpec, scenario: Scenario, k_reveal: usize, n_trials: usize, base_seed: u64) -> Self {
        TrialPlan {
            spec,
            k_reveal,
            threshold: Threshold::Optimal,
            n_trials,
            scenario,
            base_seed,
        }
    }

    pub fn lambda(&self) -> f64 {
        match self.threshold {
            Threshold::Fixed(l) => l,
            Threshold::Optimal => match self.scenario {
                Scenario::Overlap { p } => {
                    analytic::overlap_lambda(self.k_reveal as f64, p as f64, self.spec.noise_dim as f64, self.spec.sigma)
                }
                _ => self.spec.margin_gap() / 2.0,
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.n_trials == 0 {
            return Err(Error::Plan("n_trials must be >= 1".into()));
        }
        if self.k_reveal == 0 || self.k_reveal > self.spec.m {
            return Err(Error::Plan(format!("k = {} outside [1, m = {}]", self.k_reveal, self.spec.m)));
        }
        match self.scenario {
            Scenario::Mi if self.k_reveal != 1 => {
                return Err(Error::Plan("MI scenario reveals exactly one sample".into()))
            }
            Scenario::Overlap { p } if p > self.k_reveal => {
                return Err(Error::Plan(format!("overlap p = {p} exceeds k = {}", self.k_reveal)))
            }
            _ => {}
        }
        DecisionConfig::new(&self.spec, self.lambda(), self.k_reveal).map_err(|e| Error::Plan(e.to_string()))?;
        Ok(())
    }

    pub fn analytic_prediction(&self) -> Result<f64> {
        let (k, d, m, s, l) = (
            self.k_reveal as f64,
            self.spec.noise_dim as f64,
            self.spec.m as f64,
            self.spec.sigma,
            self.lambda(),
        );
        match self.scenario {
            Scenario::TpDependent | Scenario::Mi => analytic::tp_at_threshold(k, d, m, s, l),
            Scenario::FpIndependent => analytic::fp_at_threshold(k, d, m, s, l),
            Scenario::Overlap { p } => analytic::overlap_at_threshold(k, p as f64, d, m, s, l),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialOutcome {
    pub positive_rate: f64,
    /// Binomial standard error `sqrt(rate (1 - rate) / n)`.
    pub stderr: f64,
    pub n_trials: usize,
    pub analytic_prediction: f64,
    /// `(rate - prediction) / stderr`; `None` when the standard error is 0.
    pub z_gap: Option<f64>,
}

impl TrialOutcome {
    pub fn from_counts(positives: usize, n_trials: usize, prediction: f64) -> Self {
        let rate = positives as f64 / n_trials as f64;
        let stderr = (rate * (1.0 - rate) / n_trials as f64).sqrt();
        TrialOutcome {
            positive_rate: rate,
            stderr,
            n_trials,
            analytic_prediction: prediction,
            z_gap: (stderr > 0.0).then(|| (rate - prediction) / stderr),
        }
    }
}

/// Closed-form model trained on `revealed` plus `n_bulk` further fresh
/// samples. The bulk enters the weights only through `sum y x2`, which for
/// i.i.d. samples is exactly `N(0, n_bulk sigma^2 I)`, so it is drawn as one
/// Gaussian vector instead of sample by sample.
fn model_with_bulk(spec: &DistributionSpec, revealed: Option<&Dataset>, n_bulk: usize, seed: u64) -> Result<LinearModel> {
    let mut f = match revealed {
        Some(r) if !r.is_empty() => train_linear(r)?,
        _ => LinearModel::zeros(spec.k(), spec.noise_dim),
    };
    let n = revealed.map_or(0, |r| r.len()) + n_bulk;
    f.w1 = spec.u.iter().map(|v| n as f64 * v).collect();
    let scale = (n_bulk as f64).sqrt() * spec.sigma;
    let mut rng = rng_from_seed(seed);
    for w in &mut f.w2 {
        *w += scale * rng.sample::<f64, _>(StandardNormal);
    }
    Ok(f)
}

/// One trial: regenerate the revealed samples and the suspect's weights,
/// decide.
pub fn run_single_trial(plan: &TrialPlan, trial: u64) -> Result<bool> {
    let seed = derive_seed(plan.base_seed, trial);
    let spec = &plan.spec;
    let k = plan.k_reveal;
    let cfg = DecisionConfig {
        lambda: plan.lambda(),
        k_reveal: k,
    };
    // Only the revealed k-subsets enter the statistic; a uniform subset of
    // an i.i.d. dataset is itself i.i.d., so they are drawn at size k and
    // the rest of any training set is folded into the bulk sum.
    let public = draw(spec, k, derive_named(seed, "s0"), Provenance::Public)?;
    let revealed = draw(spec, k, derive_named(seed, "sv"), Provenance::Private)?;
    let bulk_seed = derive_named(seed, "bulk");
    let f = match plan.scenario {
        Scenario::TpDependent | Scenario::Mi => model_with_bulk(spec, Some(&revealed), spec.m - k, bulk_seed)?,
        Scenario::FpIndependent => model_with_bulk(spec, None, spec.m, bulk_seed)?,
        Scenario::Overlap { p } => {
            let shared = revealed.select(&(0..k - p).collect::<Vec<_>>());
            model_with_bulk(spec, Some(&shared), spec.m - (k - p), bulk_seed)?
        }
    };
    Ok(psi_decide(&f, &revealed, &public, &cfg, derive_named(seed, "psi"))?.stolen)
}

fn draw(spec: &DistributionSpec, n: usize, seed: u64, p: Provenance) -> Result<Dataset> {
    Ok(sample_dataset(spec, n, seed)?.with_provenance(p))
}

/// Runs every trial of `plan` (in parallel) and tallies positives.
pub fn run_trials(plan: &TrialPlan) -> Result<TrialOutcome> {
    plan.validate()?;
    let decisions: Vec<bool> = (0..plan.n_trials as u64)
        .into_par_iter()
        .map(|t| run_single_trial(plan, t))
        .collect::<Result<_>>()?;
    let positives = decisions.iter().filter(|&&d| d).count();
    Ok(TrialOutcome::from_counts(positives, plan.n_trials, plan.analytic_prediction()?))
}

/// Sequential reference tally, used to check the parallel reduction.
pub fn run_trials_sequential(plan: &TrialPlan) -> Result<TrialOutcome> {
    plan.validate()?;
    let mut positives = 0;
    for t in 0..plan.n_trials as u64 {
        if run_single_trial(plan, t)? {
            positives += 1;
        }
    }
    Ok(TrialOutcome::from_counts(positives, plan.n_trials, plan.analytic_prediction()?))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepParam {
    K,
    D,
    M,
    Lambda,
}

impl SweepParam {
    pub fn parse(s: &str) -> Result<SweepParam> {
        match s {
            "k" => Ok(SweepParam::K),
            "D" | "d" => Ok(SweepParam::D),
            "m" => Ok(SweepParam::M),
            "lambda" => Ok(SweepParam::Lambda),
            other => Err(Error::Plan(format!("cannot sweep `{other}` (k, D, m, lambda)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub plan: TrialPlan,
    pub outcome: TrialOutcome,
}

/// One row per grid point. Point `i` runs with base seed
/// `derive_seed(template.base_seed, i)`, except a single-point grid which
/// keeps the template's seed (so it equals `run_trials(template')`).
pub fn sweep(template: &TrialPlan, vary: SweepParam, grid: &[f64]) -> Result<Vec<SweepRow>> {
    let single = grid.len() == 1;
    grid.iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut plan = template.clone();
            if !single {
                plan.base_seed = derive_seed(template.base_seed, i as u64);
            }
            match vary {
                SweepParam::K => plan.k_reveal = as_count(v)?,
                SweepParam::D => plan.spec.noise_dim = as_count(v)?,
                SweepParam::M => plan.spec.m = as_count(v)?,
                SweepParam::Lambda => plan.threshold = Threshold::Fixed(v),
            }
            let outcome = run_trials(&plan)?;
            Ok(SweepRow { plan, outcome })
        })
        .collect()
}

fn as_count(v: f64) -> Result<usize> {
    if v >= 1.0 && v.fract() == 0.0 {
        Ok(v as usize)
    } else {
        Err(Error::Plan(format!("grid value {v} is not a positive count")))
    }
}

pub const CSV_HEADER: &str = "scenario,k,D,m,lambda,n_trials,rate,stderr,analytic,z_gap";

pub fn csv_row(plan: &TrialPlan, o: &TrialOutcome) -> String {
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        plan.scenario,
        plan.k_reveal,
        plan.spec.noise_dim,
        plan.spec.m,
        plan.lambda(),
        o.n_trials,
        o.positive_rate,
        o.stderr,
        o.analytic_prediction,
        o.z_gap.map_or_else(|| "NaN".to_string(), |z| z.to_string())
    )
}

pub fn write_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> Result<()> {
    writeln!(w, "{CSV_HEADER}")?;
    for r in rows {
        writeln!(w, "{}", csv_row(&r.plan, &r.outcome))?;
    }
    Ok(())
}

/// Monte-Carlo estimate of the training-vs-fresh mean-margin gap.
#[derive(Debug, Clone, PartialEq)]
pub struct MarginGapEstimate {
    pub mean_gap: f64,
    pub stderr: f64,
    pub expected: f64,
    pub n_trials: usize,
}

impl MarginGapEstimate {
    pub fn z(&self) -> f64 {
        (self.mean_gap - self.expected) / self.stderr
    }
}

/// Per trial: train on `m` fresh samples, take mean margin on the training set
/// minus mean margin on an independent set of the same size.
pub fn margin_gap(spec: &DistributionSpec, n_trials: usize, base_seed: u64) -> Result<MarginGapEstimate> {
    spec.validate()?;
    if n_trials < 2 {
        return Err(Error::Plan("need at least two trials for a standard error".into()));
    }
    let gaps: Vec<f64> = (0..n_trials as u64)
        .into_par_iter()
        .map(|t| {
            let seed = derive_seed(base_seed, t);
            let train = draw(spec, spec.m, derive_named(seed, "train"), Provenance::Private)?;
            let fresh = draw(spec, spec.m, derive_named(seed, "fresh"), Provenance::Public)?;
            let f = train_linear(&train)?;
            Ok(mean_margin(&f, &train)? - mean_margin(&f, &fresh)?)
        })
        .collect::<Result<_>>()?;
    let mean = crate::stats::mean(&gaps);
    let sd = crate::stats::sample_variance(&gaps).sqrt();
    Ok(MarginGapEstimate {
        mean_gap: mean,
        stderr: sd / (n_trials as f64).sqrt(),
        expected: spec.margin_gap(),
        n_trials,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(d: usize, m: usize) -> DistributionSpec {
        DistributionSpec::new(vec![0.1, 0.0], d, 0.5, m).unwrap()
    }

    #[test]
    fn scenario_names_round_trip() {
        for s in [Scenario::TpDependent, Scenario::FpIndependent, Scenario::Overlap { p: 7 }, Scenario::Mi] {
            assert_eq!(Scenario::parse(&s.to_string()).unwrap(), s);
        }
        assert!(Scenario::parse("bogus").is_err());
    }

    #[test]
    fn single_trial_degenerate() {
        let plan = TrialPlan::new(spec(4, 20), Scenario::FpIndependent, 5, 1, 3);
        let o = run_trials(&plan).unwrap();
        assert!(o.positive_rate == 0.0 || o.positive_rate == 1.0);
        assert_eq!(o.stderr, 0.0);
        assert!(o.z_gap.is_none());
    }

    #[test]
    fn plan_errors() {
        let mut plan = TrialPlan::new(spec(4, 20), Scenario::Mi, 5, 10, 3);
        assert!(matches!(run_trials(&plan), Err(Error::Plan(_))));
        plan.scenario = Scenario::Overlap { p: 6 };
        assert!(run_trials(&plan).is_err());
        plan.scenario = Scenario::TpDependent;
        plan.n_trials = 0;
        assert!(run_trials(&plan).is_err());
    }

    #[test]
    fn reproducible_and_order_free() {
        let plan = TrialPlan::new(spec(8, 50), Scenario::TpDependent, 10, 200, 99);
        let a = run_trials(&plan).unwrap();
        let b = run_trials(&plan).unwrap();
        let c = run_trials_sequential(&plan).unwrap();
        assert_eq!(a, b);
        assert_eq!(a, c);
    }

    #[test]
    fn single_point_sweep_equals_run() {
        let plan = TrialPlan::new(spec(8, 50), Scenario::FpIndependent, 10, 100, 5);
        let rows = sweep(&plan, SweepParam::K, &[10.0]).unwrap();
        assert_eq!(rows[0].outcome, run_trials(&plan).unwrap());
    }

    #[test]
    fn bulk_matches_full_training() {
        // Same w1 and same E|w2|^2 as training on a fully sampled set.
        let sp = spec(3, 40);
        let revealed = sample_dataset(&sp, 6, 1).unwrap();
        let r = train_linear(&revealed).unwrap().w2;
        let (mut bulk_sq, mut full_sq) = (0.0, 0.0);
        let n = 2000;
        for i in 0..n {
            let b = model_with_bulk(&sp, Some(&revealed), 34, derive_seed(2, i)).unwrap();
            let f = train_linear(&sample_dataset(&sp, 40, derive_seed(3, i)).unwrap()).unwrap();
            assert_eq!(b.w1, f.w1);
            bulk_sq += b.w2.iter().zip(&r).map(|(w, r)| (w - r) * (w - r)).sum::<f64>();
            full_sq += f.w2.iter().map(|w| w * w).sum::<f64>();
        }
        // n D sigma^2: 40 * 3 * 0.25 for the full set, 34 * 3 * 0.25 for the bulk.
        let (bulk, full) = (bulk_sq / n as f64, full_sq / n as f64);
        assert!((full - 30.0).abs() < 1.5, "{full}");
        assert!((bulk - 25.5).abs() < 1.5, "{bulk}");
    }

    #[test]
    fn csv_shape() {
        let plan = TrialPlan::new(spec(8, 50), Scenario::Overlap { p: 3 }, 10, 20, 5);
        let rows = sweep(&plan, SweepParam::Lambda, &[0.0, 1.0]).unwrap();
        let mut buf = Vec::new();
        write_csv(&mut buf, &rows).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("OVERLAP(3),10,8,50,0,20,"));
    }
}
