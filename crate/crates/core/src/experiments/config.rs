//! Experiment configuration files.
//!
//! TOML with one section per sub-config. Every section has defaults, so a
//! file only needs the keys it changes:
//!
//! ```toml
//! experiment = "nonlinear_fp"
//! seeds = [1000, 1001, 1002]
//!
//! [distribution]
//! d = 64
//! sigma = 0.25
//!
//! [walk]
//! max_steps = 50
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::Deserialize;
use sha2::{Digest, Sha256};

use crate::blindwalk::WalkConfig;
use crate::distribution::DistributionSpec;
use crate::error::{Error, Result};
use crate::experiments::nonlinear::{NonlinearSetup, SuspectRecipe};
use crate::nn::{PgdConfig, TrainConfig};
use crate::verifier::{GvArch, GvConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentId {
    TheoryTables,
    FpCurve,
    LinearMc,
    NonlinearFp,
    AdversarialFn,
    CountermeasureGv,
    CountermeasureNoise,
    PacbayesCheck,
    NumericalKernels,
}

impl ExperimentId {
    pub const ALL: [ExperimentId; 9] = [
        ExperimentId::TheoryTables,
        ExperimentId::FpCurve,
        ExperimentId::LinearMc,
        ExperimentId::NonlinearFp,
        ExperimentId::AdversarialFn,
        ExperimentId::CountermeasureGv,
        ExperimentId::CountermeasureNoise,
        ExperimentId::PacbayesCheck,
        ExperimentId::NumericalKernels,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentId::TheoryTables => "theory_tables",
            ExperimentId::FpCurve => "fp_curve",
            ExperimentId::LinearMc => "linear_mc",
            ExperimentId::NonlinearFp => "nonlinear_fp",
            ExperimentId::AdversarialFn => "adversarial_fn",
            ExperimentId::CountermeasureGv => "countermeasure_gv",
            ExperimentId::CountermeasureNoise => "countermeasure_noise",
            ExperimentId::PacbayesCheck => "pacbayes_check",
            ExperimentId::NumericalKernels => "numerical_kernels",
        }
    }
}

impl FromStr for ExperimentId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ExperimentId::ALL
            .into_iter()
            .find(|id| id.name() == s.trim())
            .ok_or_else(|| Error::Config(format!("unknown experiment `{s}`")))
    }
}

impl fmt::Display for ExperimentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistributionSection {
    /// Signal dimension `K`.
    pub k: usize,
    pub d: usize,
    pub sigma: f64,
    pub m: usize,
    /// Explicit signal vector; when absent `u = e1 / sqrt(m)`.
    pub u: Option<Vec<f64>>,
}

impl Default for DistributionSection {
    fn default() -> Self {
        DistributionSection {
            k: 4,
            d: 64,
            sigma: 0.25,
            m: 1000,
            u: None,
        }
    }
}

impl DistributionSection {
    pub fn spec(&self) -> Result<DistributionSpec> {
        match &self.u {
            Some(u) => {
                if u.len() != self.k {
                    return Err(Error::Config(format!("u has {} entries but k = {}", u.len(), self.k)));
                }
                DistributionSpec::new(u.clone(), self.d, self.sigma, self.m)
            }
            None => DistributionSpec::bounded_signal(self.k, self.d, self.sigma, self.m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuspectSection {
    pub hidden: Vec<usize>,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub shared_init: bool,
    pub bias: bool,
    pub n_public: usize,
    pub n_test: usize,
}

impl Default for SuspectSection {
    fn default() -> Self {
        SuspectSection {
            hidden: vec![64, 64],
            epochs: 60,
            batch_size: 32,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 0.0,
            shared_init: true,
            bias: true,
            n_public: 200,
            n_test: 2000,
        }
    }
}

impl SuspectSection {
    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            weight_decay: self.weight_decay,
            adversarial: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdversarialSection {
    pub gamma: f64,
    /// Defaults to `gamma / 4`.
    pub step_size: Option<f64>,
    pub n_steps: usize,
}

impl Default for AdversarialSection {
    fn default() -> Self {
        AdversarialSection {
            gamma: 10.0 / 255.0,
            step_size: None,
            n_steps: 10,
        }
    }
}

impl AdversarialSection {
    pub fn pgd(&self) -> PgdConfig {
        PgdConfig {
            gamma: self.gamma,
            step_size: self.step_size.unwrap_or(self.gamma / 4.0),
            n_steps: self.n_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct WalkSection {
    pub n_directions: usize,
    pub max_steps: usize,
    pub step_size: f64,
    pub seed: u64,
    /// `max_steps` values swept by `countermeasure_noise`.
    pub max_steps_grid: Vec<usize>,
}

impl Default for WalkSection {
    fn default() -> Self {
        let w = WalkConfig::default();
        WalkSection {
            n_directions: w.n_directions,
            max_steps: w.max_steps,
            step_size: w.step_size,
            seed: w.seed,
            max_steps_grid: vec![25, 50, 100, 200],
        }
    }
}

impl WalkSection {
    pub fn walk(&self) -> WalkConfig {
        WalkConfig {
            n_directions: self.n_directions,
            max_steps: self.max_steps,
            step_size: self.step_size,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GvSection {
    pub arch: String,
    pub hidden: usize,
    pub dropout: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
}

impl Default for GvSection {
    fn default() -> Self {
        let g = GvConfig::default();
        GvSection {
            arch: g.arch.name().to_string(),
            hidden: g.hidden,
            dropout: g.dropout,
            epochs: g.epochs,
            batch_size: g.batch_size,
            learning_rate: g.learning_rate,
        }
    }
}

impl GvSection {
    pub fn gv(&self) -> Result<GvConfig> {
        Ok(GvConfig {
            arch: GvArch::parse(&self.arch)?,
            hidden: self.hidden,
            dropout: self.dropout,
            epochs: self.epochs,
            batch_size: self.batch_size,
            learning_rate: self.learning_rate,
            seed: 0,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct VerifySection {
    pub k: usize,
    pub alpha: f64,
    /// Per-class pool size for training `g_V` and drawing revealed samples.
    pub n_gv: usize,
}

impl Default for VerifySection {
    fn default() -> Self {
        VerifySection {
            k: 10,
            alpha: 0.01,
            n_gv: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MonteCarloSection {
    pub n_trials: usize,
    /// `linear_mc` cells, each `"SCENARIO k D m [lambda]"`; lambda defaults
    /// to the scenario's optimal threshold.
    pub cells: Vec<String>,
    /// `fp_curve` grid of revealed-sample counts.
    pub k_grid: Vec<usize>,
    /// `(D, sigma)` pairs for the margin-gap law, as `"D sigma"`.
    pub margin_cases: Vec<String>,
    pub margin_trials: usize,
}

impl Default for MonteCarloSection {
    fn default() -> Self {
        MonteCarloSection {
            n_trials: 10_000,
            cells: Vec::new(),
            k_grid: vec![1, 2, 5, 10, 20, 50, 100, 200, 500, 1000],
            margin_cases: vec!["10 0.25".into(), "64 0.25".into(), "10 1.0".into()],
            margin_trials: 2000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TheorySection {
    pub d: f64,
    pub m: f64,
    pub k: f64,
    pub sigma: f64,
    pub u_norm_sq: f64,
    pub p_overlap: f64,
    pub lambda: f64,
}

impl Default for TheorySection {
    fn default() -> Self {
        TheorySection {
            d: 10.0,
            m: 50_000.0,
            k: 10_000.0,
            sigma: 0.25,
            u_norm_sq: 1.0 / 50_000.0,
            p_overlap: 0.0,
            lambda: 10.0 * 0.0625 / 2.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PacBayesSection {
    pub sigma_p: f64,
    pub gamma_margin: f64,
    pub n_probe: usize,
    pub n_perturbations: usize,
    pub domination_cases: usize,
    pub tail_draws: usize,
}

impl Default for PacBayesSection {
    fn default() -> Self {
        PacBayesSection {
            sigma_p: 0.01,
            gamma_margin: 1.0,
            n_probe: 512,
            n_perturbations: 200,
            domination_cases: 100,
            tail_draws: 1000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelsSection {
    pub gradient_cases: usize,
    pub phi_points: usize,
    pub permutations: usize,
}

impl Default for KernelsSection {
    fn default() -> Self {
        KernelsSection {
            gradient_cases: 20,
            phi_points: 50,
            permutations: 100_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    experiment: String,
    #[serde(default = "default_seeds")]
    seeds: Vec<u64>,
    #[serde(default)]
    distribution: DistributionSection,
    #[serde(default)]
    suspect: SuspectSection,
    #[serde(default)]
    adversarial: AdversarialSection,
    #[serde(default)]
    walk: WalkSection,
    #[serde(default)]
    gv: GvSection,
    #[serde(default)]
    verify: VerifySection,
    #[serde(default)]
    montecarlo: MonteCarloSection,
    #[serde(default)]
    theory: TheorySection,
    #[serde(default)]
    pacbayes: PacBayesSection,
    #[serde(default)]
    kernels: KernelsSection,
}

fn default_seeds() -> Vec<u64> {
    vec![0]
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub id: ExperimentId,
    pub seeds: Vec<u64>,
    pub distribution: DistributionSection,
    pub suspect: SuspectSection,
    pub adversarial: AdversarialSection,
    pub walk: WalkSection,
    pub gv: GvSection,
    pub verify: VerifySection,
    pub montecarlo: MonteCarloSection,
    pub theory: TheorySection,
    pub pacbayes: PacBayesSection,
    pub kernels: KernelsSection,
    /// Hex SHA-256 of the source text.
    pub hash: String,
    pub source: String,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self> {
        let raw: RawConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let cfg = ExperimentConfig {
            id: raw.experiment.parse()?,
            seeds: raw.seeds,
            distribution: raw.distribution,
            suspect: raw.suspect,
            adversarial: raw.adversarial,
            walk: raw.walk,
            gv: raw.gv,
            verify: raw.verify,
            montecarlo: raw.montecarlo,
            theory: raw.theory,
            pacbayes: raw.pacbayes,
            kernels: raw.kernels,
            hash: hex::encode(Sha256::digest(text.as_bytes())),
            source: text.to_string(),
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    /// Defaults for `id` with the given seeds.
    pub fn with_defaults(id: ExperimentId, seeds: Vec<u64>) -> Result<Self> {
        let seeds = seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ");
        Self::parse(&format!("experiment = \"{id}\"\nseeds = [{seeds}]\n"))
    }

    /// Checks that the sub-configs the experiment reads are usable.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return Err(Error::Config("at least one seed is required".into()));
        }
        let mut sorted = self.seeds.clone();
        sorted.sort_unstable();
        sorted.dedup();
        if sorted.len() != self.seeds.len() {
            return Err(Error::Config("seeds must be distinct".into()));
        }
        match self.id {
            ExperimentId::TheoryTables => {
                let t = &self.theory;
                crate::analytic::TheoryInputs {
                    noise_dim: t.d,
                    m: t.m,
                    k: t.k,
                    sigma: t.sigma,
                    u_norm_sq: t.u_norm_sq,
                    p_overlap: t.p_overlap,
                    lambda: t.lambda,
                }
                .validate()?;
            }
            ExperimentId::FpCurve => {
                let spec = self.distribution.spec()?;
                if self.montecarlo.k_grid.is_empty() || self.montecarlo.n_trials == 0 {
                    return Err(Error::Config("fp_curve needs a k grid and n_trials >= 1".into()));
                }
                if let Some(&k) = self.montecarlo.k_grid.iter().find(|&&k| k == 0 || k > spec.m) {
                    return Err(Error::Config(format!("k = {k} outside [1, m = {}]", spec.m)));
                }
            }
            ExperimentId::LinearMc => {
                if self.montecarlo.cells.is_empty() && self.montecarlo.margin_cases.is_empty() {
                    return Err(Error::Config("linear_mc needs cells or margin_cases".into()));
                }
                for c in &self.montecarlo.cells {
                    parse_cell(c)?;
                }
                for c in &self.montecarlo.margin_cases {
                    parse_margin_case(c)?;
                }
            }
            ExperimentId::NonlinearFp
            | ExperimentId::AdversarialFn
            | ExperimentId::CountermeasureGv
            | ExperimentId::CountermeasureNoise => {
                self.nonlinear_setup()?.validate()?;
                self.gv.gv()?;
                if self.id == ExperimentId::CountermeasureNoise && self.walk.max_steps_grid.is_empty() {
                    return Err(Error::Config("max_steps_grid is empty".into()));
                }
            }
            ExperimentId::PacbayesCheck => {
                self.distribution.spec()?;
                self.suspect.train_config().validate()?;
                let p = &self.pacbayes;
                if !(p.sigma_p > 0.0 && p.gamma_margin > 0.0) {
                    return Err(Error::Config("sigma_p and gamma_margin must be positive".into()));
                }
                if p.n_probe == 0 || p.n_perturbations == 0 || p.domination_cases == 0 || p.tail_draws == 0 {
                    return Err(Error::Config("pacbayes counts must be positive".into()));
                }
            }
            ExperimentId::NumericalKernels => {
                let k = &self.kernels;
                if k.gradient_cases == 0 || k.phi_points == 0 || k.permutations == 0 {
                    return Err(Error::Config("kernel counts must be positive".into()));
                }
            }
        }
        Ok(())
    }

    pub fn nonlinear_setup(&self) -> Result<NonlinearSetup> {
        Ok(NonlinearSetup {
            spec: self.distribution.spec()?,
            n_public: self.suspect.n_public,
            n_test: self.suspect.n_test,
            suspect: SuspectRecipe {
                hidden: self.suspect.hidden.clone(),
                train: self.suspect.train_config(),
                shared_init: self.suspect.shared_init,
                bias: self.suspect.bias,
            },
            walk: self.walk.walk(),
            gv: self.gv.gv()?,
            n_gv: self.verify.n_gv,
            k: self.verify.k,
            alpha: self.verify.alpha,
            adv: self.adversarial.pgd(),
        })
    }
}

/// One `linear_mc` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub scenario: crate::montecarlo::Scenario,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub lambda: Option<f64>,
}

pub fn parse_cell(s: &str) -> Result<Cell> {
    let parts: Vec<&str> = s.split_whitespace().collect();
    if parts.len() != 4 && parts.len() != 5 {
        return Err(Error::Config(format!("cell `{s}`: expected `SCENARIO k D m [lambda]`")));
    }
    let num = |t: &str| -> Result<usize> {
        t.parse()
            .map_err(|e| Error::Config(format!("cell `{s}`: bad count `{t}`: {e}")))
    };
    let lambda = match parts.get(4) {
        Some(t) => Some(
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("cell `{s}`: bad lambda `{t}`: {e}")))?,
        ),
        None => None,
    };
    Ok(Cell {
        scenario: crate::montecarlo::Scenario::parse(parts[0]).map_err(|e| Error::Config(e.to_string()))?,
        k: num(parts[1])?,
        d: num(parts[2])?,
        m: num(parts[3])?,
        lambda,
    })
}

pub fn parse_margin_case(s: &str) -> Result<(usize, f64)> {
    let bad = || Error::Config(format!("margin case `{s}`: expected `D sigma`"));
    let mut it = s.split_whitespace();
    let d = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
    let sigma = it.next().and_then(|t| t.parse().ok()).ok_or_else(bad)?;
    if it.next().is_some() {
        return Err(bad());
    }
    Ok((d, sigma))
}
