//! `dilab`: command-line driver for the dataset-inference lab.
//!
//! Exit codes: 0 success, 2 configuration error, 3 stage failure,
//! 4 acceptance-check failure under `--check`.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use dilab_core::analytic::theory_table;
use dilab_core::blindwalk::{embed_dataset, write_embeddings_csv, WalkConfig};
use dilab_core::distribution::{sample_dataset, Dataset};
use dilab_core::experiments::config::{ExperimentConfig, ExperimentId};
use dilab_core::experiments::run::{anchor_checks, run_experiment, theory_csv, theory_inputs, Check};
use dilab_core::experiments::summary::summarize;
use dilab_core::montecarlo::{self, run_trials, sweep, Scenario, SweepParam, Threshold, TrialPlan};
use dilab_core::nn::{train, Activation, MlpModel, MlpShape, PgdConfig};
use dilab_core::pacbayes::{
    bias_free, generalization_epsilon, layer_norms, margin_similarity_check, BoundInputs,
};
use dilab_core::rng::derive_named;
use dilab_core::verifier::{build_gv, verify_ownership, VerificationReport};
use dilab_core::Error;

#[derive(Parser)]
#[command(name = "dilab", version, about = "Dataset-inference fingerprinting lab")]
struct Cli {
    /// Experiment config file (TOML with one section per sub-config).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed; replaces the config's seed list when given.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Evaluate acceptance checks; exit 4 if any fails.
    #[arg(long, global = true)]
    check: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Closed-form probabilities, including the three anchor values.
    Theory {
        /// Emit `formula,inputs,value` rows instead of a table.
        #[arg(long)]
        csv: bool,
    },
    /// Monte-Carlo estimate of one linear scenario, optionally swept.
    SimulateLinear {
        /// TP_dependent, FP_independent, OVERLAP(p) or MI.
        #[arg(long, default_value = "FP_independent")]
        scenario: String,
        #[arg(long, default_value_t = 100)]
        k: usize,
        #[arg(long)]
        lambda: Option<f64>,
        #[arg(long, default_value_t = 10_000)]
        trials: usize,
        /// One of k, D, m, lambda.
        #[arg(long)]
        vary: Option<String>,
        /// Comma-separated grid for `--vary`.
        #[arg(long, value_delimiter = ',')]
        grid: Vec<f64>,
    },
    /// Trains a suspect on `--data` (or on `m` fresh samples) and saves it.
    TrainSuspect {
        /// Dataset path without extension (`<path>.csv` plus sidecar).
        #[arg(long)]
        data: Option<PathBuf>,
        /// PGD budget; enables adversarial training.
        #[arg(long)]
        adv_gamma: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Blind Walk embeddings of a model on private and public data.
    Embed {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        private: PathBuf,
        #[arg(long)]
        public: PathBuf,
        #[arg(long)]
        directions: Option<usize>,
        #[arg(long)]
        max_steps: Option<usize>,
        #[arg(long)]
        step_size: Option<f64>,
    },
    /// Builds g_V from the victim and tests a suspect.
    Verify {
        #[arg(long)]
        victim: PathBuf,
        #[arg(long)]
        suspect: PathBuf,
        #[arg(long)]
        private: PathBuf,
        #[arg(long)]
        public: PathBuf,
        #[arg(long, default_value = "suspect")]
        name: String,
    },
    /// Runs an experiment suite end to end.
    Experiment { id: String },
    /// Aggregates result CSVs across seeds.
    Summarize { files: Vec<PathBuf> },
    /// Bound components for a model, and margin similarity against a second.
    Pacbayes {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        other: Option<PathBuf>,
        /// Probe dataset; defaults to fresh samples from the config's distribution.
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

enum Failure {
    Config(String),
    Stage(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::Format(_) | Error::Spec(_) | Error::Plan(_) => Failure::Config(e.to_string()),
            other => Failure::Stage(other.to_string()),
        }
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Stage(e.to_string())
    }
}

type Outcome = std::result::Result<bool, Failure>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(4),
        Err(Failure::Config(m)) => {
            eprintln!("dilab: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Stage(m)) => {
            eprintln!("dilab: {m}");
            ExitCode::from(3)
        }
    }
}

/// Config for commands that only borrow its sections.
fn section_config(cli: &Cli, default_id: ExperimentId) -> std::result::Result<ExperimentConfig, Failure> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::with_defaults(default_id, vec![0])?,
    };
    if let Some(s) = cli.seed {
        cfg.seeds = vec![s];
    }
    Ok(cfg)
}

fn load_dataset(path: &Path) -> std::result::Result<Dataset, Failure> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let stem = path
        .file_name()
        .and_then(|s| s.to_str())
        .ok_or_else(|| Failure::Config(format!("bad dataset path {}", path.display())))?;
    Ok(Dataset::load(dir, stem)?)
}

fn print_checks(title: &str, checks: &[Check]) -> bool {
    for c in checks {
        println!("{} {title}: {} ({})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    checks.iter().all(|c| c.pass)
}

fn out_dir(cli: &Cli, default: &str) -> PathBuf {
    cli.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn dispatch(cli: &Cli) -> Outcome {
    match &cli.command {
        Command::Theory { csv } => {
            let cfg = section_config(cli, ExperimentId::TheoryTables)?;
            let rows = theory_table(&theory_inputs(&cfg))?;
            if *csv {
                print!("{}", theory_csv(&rows));
            } else {
                println!("{:<18} {:>14}  inputs", "formula", "value");
                for r in &rows {
                    println!("{:<18} {:>14.6}  {}", r.formula, r.value, r.inputs);
                }
            }
            Ok(!cli.check || print_checks("theory", &anchor_checks(&rows)))
        }
        Command::SimulateLinear {
            scenario,
            k,
            lambda,
            trials,
            vary,
            grid,
        } => {
            let cfg = section_config(cli, ExperimentId::LinearMc)?;
            let spec = cfg.distribution.spec()?;
            let mut plan = TrialPlan::new(spec, Scenario::parse(scenario)?, *k, *trials, cfg.seeds[0]);
            if let Some(l) = lambda {
                plan.threshold = Threshold::Fixed(*l);
            }
            let rows = match vary {
                Some(p) => {
                    if grid.is_empty() {
                        return Err(Failure::Config("--vary needs --grid".into()));
                    }
                    sweep(&plan, SweepParam::parse(p)?, grid)?
                }
                None => vec![montecarlo::SweepRow {
                    outcome: run_trials(&plan)?,
                    plan,
                }],
            };
            let mut buf = Vec::new();
            montecarlo::write_csv(&mut buf, &rows)?;
            emit(cli, "simulate_linear.csv", &buf)?;
            Ok(true)
        }
        Command::TrainSuspect {
            data,
            adv_gamma,
            epochs,
        } => {
            let cfg = section_config(cli, ExperimentId::NonlinearFp)?;
            let setup = cfg.nonlinear_setup()?;
            let seed = cfg.seeds[0];
            let dir = out_dir(cli, "suspect");
            std::fs::create_dir_all(&dir)?;
            let train_set = match data {
                Some(p) => load_dataset(p)?,
                None => {
                    let d = sample_dataset(&setup.spec, setup.spec.m, derive_named(seed, "data"))?;
                    d.save(&dir, "train")?;
                    d
                }
            };
            let shape = MlpShape {
                input_dim: train_set.samples.first().map_or(setup.spec.input_dim(), |s| s.input().len()),
                hidden: setup.suspect.hidden.clone(),
                output_dim: 2,
                hidden_activation: Activation::Relu,
                has_bias: setup.suspect.bias,
                dropout: 0.0,
            };
            let init = MlpModel::init(&shape, derive_named(seed, "init"))?;
            let mut tc = setup.suspect.train.clone();
            tc.seed = derive_named(seed, "train");
            if let Some(e) = epochs {
                tc.epochs = *e;
            }
            if let Some(g) = adv_gamma {
                tc.adversarial = Some(PgdConfig {
                    gamma: *g,
                    step_size: g / 4.0,
                    n_steps: cfg.adversarial.n_steps,
                });
            }
            let (model, report) = train(&init, &train_set, &tc)?;
            let path = dir.join("suspect.model");
            model.save(&path)?;
            let test = sample_dataset(&setup.spec, setup.n_test, derive_named(seed, "test"))?;
            println!("model = \"{}\"", path.display());
            println!("final_loss = {}", report.losses.last().copied().unwrap_or(f64::NAN));
            println!("train_accuracy = {}", model.accuracy(&train_set.inputs(), &train_set.labels())?);
            println!("test_accuracy = {}", model.accuracy(&test.inputs(), &test.labels())?);
            Ok(true)
        }
        Command::Embed {
            model,
            private,
            public,
            directions,
            max_steps,
            step_size,
        } => {
            let cfg = section_config(cli, ExperimentId::NonlinearFp)?;
            let mut walk: WalkConfig = cfg.walk.walk();
            if let Some(d) = directions {
                walk.n_directions = *d;
            }
            if let Some(s) = max_steps {
                walk.max_steps = *s;
            }
            if let Some(s) = step_size {
                walk.step_size = *s;
            }
            if let Some(s) = cli.seed {
                walk.seed = s;
            }
            let f = MlpModel::load(model)?;
            let set = embed_dataset(&f, &load_dataset(private)?, &load_dataset(public)?, &walk)?;
            let mut buf = Vec::new();
            write_embeddings_csv(&set.embeddings, &mut buf)?;
            emit(cli, "embeddings.csv", &buf)?;
            eprintln!("queries = {}", set.total_queries);
            Ok(true)
        }
        Command::Verify {
            victim,
            suspect,
            private,
            public,
            name,
        } => {
            let cfg = section_config(cli, ExperimentId::NonlinearFp)?;
            let setup = cfg.nonlinear_setup()?;
            let seed = cfg.seeds[0];
            let (sv, s0) = (load_dataset(private)?, load_dataset(public)?);
            let mut gv = setup.gv.clone();
            gv.seed = derive_named(seed, "gv");
            let g = build_gv(&MlpModel::load(victim)?, &sv, &s0, &setup.walk, &gv)?;
            let r = verify_ownership(
                &MlpModel::load(suspect)?,
                &sv,
                &s0,
                &g,
                setup.k,
                &setup.walk,
                setup.alpha,
                derive_named(seed, "verify"),
            )?;
            print!("{}", r.to_text());
            let csv = format!("{}\n{}\n", VerificationReport::CSV_HEADER, r.csv_row(name, setup.k, seed));
            println!("{}", csv.trim_end());
            if let Some(dir) = &cli.out {
                std::fs::create_dir_all(dir)?;
                std::fs::write(dir.join("verify.csv"), csv)?;
            }
            Ok(true)
        }
        Command::Experiment { id } => {
            let id: ExperimentId = id.parse()?;
            let mut cfg = match &cli.config {
                Some(p) => ExperimentConfig::load(p)?,
                None => ExperimentConfig::with_defaults(id, vec![cli.seed.unwrap_or(0)])?,
            };
            if cfg.id != id {
                return Err(Failure::Config(format!("config is for `{}`, not `{id}`", cfg.id)));
            }
            if let (Some(s), Some(_)) = (cli.seed, &cli.config) {
                cfg.seeds = vec![s];
                cfg.validate()?;
            }
            let out = run_experiment(&cfg)?;
            let dir = out_dir(cli, &format!("runs/{id}"));
            for p in out.write(&cfg, &dir)? {
                eprintln!("wrote {}", p.display());
            }
            print!("{}", out.results_csv());
            Ok(!cli.check || print_checks(id.name(), &out.checks))
        }
        Command::Summarize { files } => {
            if files.is_empty() {
                return Err(Failure::Config("no result files given".into()));
            }
            let texts: Vec<String> = files
                .iter()
                .map(std::fs::read_to_string)
                .collect::<std::io::Result<_>>()?;
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let s = summarize(&refs)?;
            emit(cli, "summary.csv", s.to_csv().as_bytes())?;
            Ok(true)
        }
        Command::Pacbayes { model, other, data } => {
            let cfg = section_config(cli, ExperimentId::PacbayesCheck)?;
            let pb = &cfg.pacbayes;
            let f = bias_free(&MlpModel::load(model)?);
            let probe = match data {
                Some(p) => load_dataset(p)?,
                None => sample_dataset(&cfg.distribution.spec()?, pb.n_probe, derive_named(cfg.seeds[0], "probe"))?,
            };
            let b = probe
                .inputs()
                .iter()
                .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let m = cfg.distribution.m;
            let inputs = BoundInputs::from_model(&f, b, pb.gamma_margin, m, pb.sigma_p);
            let (spec, frob) = layer_norms(&f);
            println!("B = {b}\nd = {}\nh = {}", inputs.depth, inputs.width);
            for (i, (s, fr)) in spec.iter().zip(&frob).enumerate() {
                println!("layer_{i} = {{ spectral = {s}, frobenius = {fr} }}");
            }
            println!("beta = {}\nepsilon = {}", inputs.beta(), generalization_epsilon(&inputs)?);
            if let Some(o) = other {
                let g = bias_free(&MlpModel::load(o)?);
                let r = margin_similarity_check(
                    &f,
                    &g,
                    &probe,
                    pb.sigma_p,
                    pb.gamma_margin,
                    m,
                    pb.n_perturbations,
                    derive_named(cfg.seeds[0], "similarity"),
                )?;
                let csv = format!(
                    "n_draws,within,fraction_within,mean_gap,max_gap,epsilon,base_gap\n{},{},{},{},{},{},{}\n",
                    r.n_draws,
                    r.within,
                    r.fraction_within(),
                    r.mean_gap,
                    r.max_gap,
                    r.epsilon,
                    r.base_gap
                );
                emit(cli, "margin_similarity.csv", csv.as_bytes())?;
            }
            Ok(true)
        }
    }
}

/// Writes to `<out>/<name>` when `--out` is set, otherwise to stdout.
fn emit(cli: &Cli, name: &str, bytes: &[u8]) -> std::result::Result<(), Failure> {
    match &cli.out {
        Some(dir) => {
            std::fs::create_dir_all(dir)?;
            std::fs::write(dir.join(name), bytes)?;
        }
        None => std::io::stdout().write_all(bytes)?,
    }
    Ok(())
}
