//! The split protocol on synthetic data.
//!
//! 1. draw a pool of `2m` samples and split it in half into `S_V` and `S_I`;
//! 2. train `f_V` on `S_V`;
//! 3. draw a separate public set `S_0` and train `f_0` on it;
//! 4. train `g_V` on `f_V`'s embeddings of pools drawn from `S_V` and `S_0`;
//! 5. train the independent `f_I` on `S_I`.
//!
//! Optionally `f_A` is trained on `S_V` with PGD adversarial training.
//! Every suspect is then verified with `k` private and `k` public samples
//! drawn from the same pools `g_V` was trained on.

use rayon::prelude::*;

use crate::blindwalk::WalkConfig;
use crate::distribution::{sample_dataset, split_dataset, Dataset, DistributionSpec, Provenance};
use crate::error::{Error, Result};
use crate::nn::{train, Activation, MlpModel, MlpShape, PgdConfig, TrainConfig};
use crate::rng::derive_named;
use crate::verifier::{augment_gv_training, build_gv, verify_ownership, Distinguisher, GvConfig, VerificationReport};

#[derive(Debug, Clone, PartialEq)]
pub struct SuspectRecipe {
    pub hidden: Vec<usize>,
    pub train: TrainConfig,
    /// Every suspect starts from the same initial weights for a given seed.
    pub shared_init: bool,
    pub bias: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NonlinearSetup {
    /// `spec.m` is `|S_V|` (and `|S_I|`).
    pub spec: DistributionSpec,
    pub n_public: usize,
    pub n_test: usize,
    pub suspect: SuspectRecipe,
    pub walk: WalkConfig,
    pub gv: GvConfig,
    /// Per-class pool size used to train `g_V` and to draw verification samples.
    pub n_gv: usize,
    pub k: usize,
    pub alpha: f64,
    pub adv: PgdConfig,
}

impl NonlinearSetup {
    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        self.walk.validate()?;
        self.suspect.train.validate()?;
        self.adv.validate()?;
        if self.n_gv > self.spec.m || self.n_gv > self.n_public {
            return Err(Error::Config(format!(
                "n_gv = {} exceeds |S_V| = {} or |S_0| = {}",
                self.n_gv, self.spec.m, self.n_public
            )));
        }
        if self.k < 2 || self.k > self.n_gv {
            return Err(Error::Config(format!("k = {} must lie in [2, n_gv = {}]", self.k, self.n_gv)));
        }
        if self.n_test == 0 {
            return Err(Error::Config("n_test must be positive".into()));
        }
        Ok(())
    }

    pub fn shape(&self) -> MlpShape {
        MlpShape {
            input_dim: self.spec.input_dim(),
            hidden: self.suspect.hidden.clone(),
            output_dim: 2,
            hidden_activation: Activation::Relu,
            has_bias: self.suspect.bias,
            dropout: 0.0,
        }
    }
}

/// Which suspects to train and which distinguisher variants to build.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct SuspectSet {
    pub independent: bool,
    pub public: bool,
    pub adversarial: bool,
}

#[derive(Debug, Clone)]
pub struct World {
    pub sv: Dataset,
    pub si: Dataset,
    pub s0: Dataset,
    pub test: Dataset,
    pub sv_pool: Dataset,
    pub s0_pool: Dataset,
    pub f_v: MlpModel,
    pub f_i: Option<MlpModel>,
    pub f_0: Option<MlpModel>,
    pub f_a: Option<MlpModel>,
}

fn stage<T>(r: Result<T>, name: &str, seed: u64) -> Result<T> {
    r.map_err(|e| e.at_stage(name, seed))
}

/// Data and suspects for one seed.
pub fn build_world(setup: &NonlinearSetup, which: SuspectSet, seed: u64) -> Result<World> {
    setup.validate()?;
    let m = setup.spec.m;
    let pool = stage(sample_dataset(&setup.spec, 2 * m, derive_named(seed, "pool")), "sample", seed)?;
    let halves = stage(split_dataset(&pool, &[0.5, 0.5], derive_named(seed, "split")), "split", seed)?;
    let sv = halves[0].clone().with_provenance(Provenance::Private);
    let si = halves[1].clone().with_provenance(Provenance::Independent);
    let s0 = stage(
        sample_dataset(&setup.spec, setup.n_public, derive_named(seed, "public")),
        "sample",
        seed,
    )?
    .with_provenance(Provenance::Public);
    let test = stage(sample_dataset(&setup.spec, setup.n_test, derive_named(seed, "test")), "sample", seed)?;

    let shape = setup.shape();
    let init_for = |tag: &str| {
        let s = if setup.suspect.shared_init {
            derive_named(seed, "init")
        } else {
            derive_named(seed, &format!("init/{tag}"))
        };
        MlpModel::init(&shape, s)
    };
    let cfg_for = |tag: &str| TrainConfig {
        seed: derive_named(seed, &format!("train/{tag}")),
        ..setup.suspect.train.clone()
    };

    let mut jobs: Vec<(&str, &Dataset, bool)> = vec![("f_V", &sv, false)];
    if which.independent {
        jobs.push(("f_I", &si, false));
    }
    if which.public {
        jobs.push(("f_0", &s0, false));
    }
    if which.adversarial {
        jobs.push(("f_A", &sv, true));
    }
    let trained: Vec<(String, MlpModel)> = jobs
        .par_iter()
        .map(|(tag, data, adv)| {
            let init = stage(init_for(tag), "init", seed)?;
            let mut cfg = cfg_for(tag);
            if *adv {
                cfg.adversarial = Some(setup.adv);
                // The adversary trains the same recipe on the same data.
                cfg.seed = derive_named(seed, "train/f_V");
            }
            let (model, _) = stage(train(&init, data, &cfg), &format!("train {tag}"), seed)?;
            Ok((tag.to_string(), model))
        })
        .collect::<Result<_>>()?;
    let take = |t: &str| trained.iter().find(|(tag, _)| tag == t).map(|(_, m)| m.clone());

    let sv_pool = stage(sv.random_subset(setup.n_gv, derive_named(seed, "gv/sv")), "pool", seed)?;
    let s0_pool = stage(s0.random_subset(setup.n_gv, derive_named(seed, "gv/s0")), "pool", seed)?;
    Ok(World {
        f_v: take("f_V").expect("f_V always trained"),
        f_i: take("f_I"),
        f_0: take("f_0"),
        f_a: take("f_A"),
        sv,
        si,
        s0,
        test,
        sv_pool,
        s0_pool,
    })
}

impl World {
    pub fn gv(&self, walk: &WalkConfig, gv: &GvConfig, seed: u64) -> Result<Distinguisher> {
        let cfg = GvConfig {
            seed: derive_named(seed, "gv"),
            ..gv.clone()
        };
        stage(build_gv(&self.f_v, &self.sv_pool, &self.s0_pool, walk, &cfg), "train g_V", seed)
    }

    /// `g_V` with the public pool augmented by an equal-size portion of `S_I`.
    pub fn gv_augmented(&self, walk: &WalkConfig, gv: &GvConfig, seed: u64) -> Result<Distinguisher> {
        let cfg = GvConfig {
            seed: derive_named(seed, "gv"),
            ..gv.clone()
        };
        let portion = stage(
            self.si.random_subset(self.s0_pool.len(), derive_named(seed, "gv/si")),
            "pool",
            seed,
        )?;
        stage(
            augment_gv_training(&self.f_v, &self.sv_pool, &self.s0_pool, &portion, walk, &cfg),
            "train g_V",
            seed,
        )
    }

    pub fn suspects(&self) -> Vec<(&'static str, &MlpModel)> {
        let mut v = vec![("f_V", &self.f_v)];
        if let Some(m) = &self.f_i {
            v.push(("f_I", m));
        }
        if let Some(m) = &self.f_0 {
            v.push(("f_0", m));
        }
        if let Some(m) = &self.f_a {
            v.push(("f_A", m));
        }
        v
    }

    pub fn accuracy(&self, f: &MlpModel) -> Result<f64> {
        f.accuracy(&self.test.inputs(), &self.test.labels())
    }

    pub fn verify(
        &self,
        suspect: &MlpModel,
        g: &Distinguisher,
        setup: &NonlinearSetup,
        walk: &WalkConfig,
        seed: u64,
    ) -> Result<VerificationReport> {
        stage(
            verify_ownership(
                suspect,
                &self.sv_pool,
                &self.s0_pool,
                g,
                setup.k,
                walk,
                setup.alpha,
                derive_named(seed, "verify"),
            ),
            "verify",
            seed,
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SuspectResult {
    pub suspect: String,
    pub seed: u64,
    pub accuracy: f64,
    pub report: VerificationReport,
}

/// Trains the requested suspects for one seed, builds the baseline `g_V`
/// and verifies every suspect.
pub fn run_seed(setup: &NonlinearSetup, which: SuspectSet, seed: u64) -> Result<Vec<SuspectResult>> {
    let world = build_world(setup, which, seed)?;
    let g = world.gv(&setup.walk, &setup.gv, seed)?;
    world
        .suspects()
        .into_iter()
        .map(|(tag, f)| {
            Ok(SuspectResult {
                suspect: tag.to_string(),
                seed,
                accuracy: world.accuracy(f)?,
                report: world.verify(f, &g, setup, &setup.walk, seed)?,
            })
        })
        .collect()
}
