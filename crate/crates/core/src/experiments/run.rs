//! Runs one configured experiment end to end, producing its result table,
//! auxiliary files and acceptance checks.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::analytic::{self, TheoryInputs};
use crate::blindwalk::WalkConfig;
use crate::distribution::{sample_dataset, DistributionSpec};
use crate::error::{Error, Result};
use crate::experiments::config::{parse_cell, parse_margin_case, ExperimentConfig, ExperimentId};
use crate::experiments::kernels::{gradient_rows, permutation_rows, phi_rows, KernelRow};
use crate::experiments::nonlinear::{build_world, run_seed, SuspectSet, World};
use crate::montecarlo::{self, margin_gap, run_trials, Scenario, Threshold, TrialOutcome, TrialPlan};
use crate::pacbayes::{
    domination_check, layer_norms, margin_similarity_check, spectral_tail_check, union_threshold, BoundInputs,
    generalization_epsilon,
};
use crate::rng::{derive_named, derive_seed};
use crate::stats::{mean, median};
use crate::verifier::{GvArch, GvConfig, Verdict};

/// One acceptance condition evaluated on a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &str, pass: bool, detail: String) -> Self {
        Check {
            name: name.to_string(),
            pass,
            detail,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub id: ExperimentId,
    /// `(file name, contents)`; the first entry is `results.csv`.
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
}

impl RunOutput {
    pub fn results_csv(&self) -> &str {
        &self.files[0].1
    }

    pub fn file(&self, name: &str) -> Option<&str> {
        self.files.iter().find(|(n, _)| n == name).map(|(_, c)| c.as_str())
    }

    pub fn all_pass(&self) -> bool {
        self.checks.iter().all(|c| c.pass)
    }

    /// Writes every file plus `manifest.toml` and a copy of the config.
    pub fn write(&self, cfg: &ExperimentConfig, dir: &Path) -> Result<Vec<PathBuf>> {
        std::fs::create_dir_all(dir)?;
        let mut paths = Vec::new();
        for (name, contents) in &self.files {
            let p = dir.join(name);
            std::fs::write(&p, contents)?;
            paths.push(p);
        }
        let p = dir.join("config.toml");
        std::fs::write(&p, &cfg.source)?;
        paths.push(p);
        let p = dir.join("manifest.toml");
        std::fs::write(&p, manifest(cfg, self))?;
        paths.push(p);
        Ok(paths)
    }
}

pub fn manifest(cfg: &ExperimentConfig, out: &RunOutput) -> String {
    let list = |v: Vec<String>| v.join(", ");
    format!(
        "experiment = \"{}\"\nconfig_sha256 = \"{}\"\nconfig_file = \"config.toml\"\nseeds = [{}]\ndilab_core_version = \"{}\"\nfiles = [{}]\n",
        cfg.id,
        cfg.hash,
        list(cfg.seeds.iter().map(|s| s.to_string()).collect()),
        env!("CARGO_PKG_VERSION"),
        list(out.files.iter().map(|(n, _)| format!("\"{n}\"")).collect()),
    )
}

pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    match cfg.id {
        ExperimentId::TheoryTables => theory_tables(cfg),
        ExperimentId::FpCurve => fp_curve(cfg),
        ExperimentId::LinearMc => linear_mc(cfg),
        ExperimentId::NonlinearFp => nonlinear_fp(cfg),
        ExperimentId::AdversarialFn => adversarial_fn(cfg),
        ExperimentId::CountermeasureGv => countermeasure_gv(cfg),
        ExperimentId::CountermeasureNoise => countermeasure_noise(cfg),
        ExperimentId::PacbayesCheck => pacbayes_check(cfg),
        ExperimentId::NumericalKernels => numerical_kernels(cfg),
    }
}

fn output(id: ExperimentId, results: String, mut extra: Vec<(String, String)>, checks: Vec<Check>) -> RunOutput {
    let mut files = vec![("results.csv".to_string(), results)];
    files.append(&mut extra);
    RunOutput { id, files, checks }
}

// ---- theory --------------------------------------------------------------

pub const ANCHOR_TOL_ACCURACY: f64 = 5e-4;
pub const ANCHOR_TOL_FP: f64 = 1e-3;

pub fn theory_inputs(cfg: &ExperimentConfig) -> TheoryInputs {
    let t = &cfg.theory;
    TheoryInputs {
        noise_dim: t.d,
        m: t.m,
        k: t.k,
        sigma: t.sigma,
        u_norm_sq: t.u_norm_sq,
        p_overlap: t.p_overlap,
        lambda: t.lambda,
    }
}

/// The three anchor checks on a theory table.
pub fn anchor_checks(rows: &[analytic::TheoryRow]) -> Vec<Check> {
    let find = |formula: &str, tag: &str| {
        rows.iter()
            .find(|r| r.formula == formula && r.inputs.ends_with(tag))
            .map(|r| r.value)
            .unwrap_or(f64::NAN)
    };
    let acc1000 = find("accuracy_bound", ";D=1000");
    let acc10 = find("accuracy_bound", ";D=10");
    let fp = find("analytic_fp", "k=10000;D=10;m=50000");
    vec![
        Check::new(
            "accuracy_bound D=1000",
            (acc1000 - 0.6241).abs() <= ANCHOR_TOL_ACCURACY,
            format!("{acc1000:.6} vs 0.6241 +- {ANCHOR_TOL_ACCURACY}"),
        ),
        Check::new(
            "accuracy_bound D=10",
            (acc10 - 0.9992).abs() <= ANCHOR_TOL_ACCURACY,
            format!("{acc10:.6} vs 0.9992 +- {ANCHOR_TOL_ACCURACY}"),
        ),
        Check::new(
            "analytic_fp k=1e4 D=10 m=5e4",
            (fp - 0.309).abs() <= ANCHOR_TOL_FP,
            format!("{fp:.6} vs 0.309 +- {ANCHOR_TOL_FP}"),
        ),
    ]
}

pub fn theory_csv(rows: &[analytic::TheoryRow]) -> String {
    let mut out = String::from("formula,inputs,value\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{}", r.formula, r.inputs, r.value);
    }
    out
}

fn theory_tables(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let rows = analytic::theory_table(&theory_inputs(cfg))?;
    Ok(output(cfg.id, theory_csv(&rows), Vec::new(), anchor_checks(&rows)))
}

// ---- linear Monte-Carlo ----------------------------------------------------

/// `z` of an empirical rate against the analytic value, with the binomial
/// standard error taken at the analytic value.
pub fn analytic_z(rate: f64, analytic: f64, n: usize) -> f64 {
    let se = (analytic * (1.0 - analytic) / n as f64).sqrt();
    if se > 0.0 {
        (rate - analytic) / se
    } else if rate == analytic {
        0.0
    } else {
        f64::INFINITY
    }
}

fn cell_z(o: &TrialOutcome) -> f64 {
    o.z_gap
        .unwrap_or_else(|| analytic_z(o.positive_rate, o.analytic_prediction, o.n_trials))
}

fn fp_curve(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let spec = cfg.distribution.spec()?;
    let mc = &cfg.montecarlo;
    let base = cfg.seeds[0];
    let mut csv = String::from("k,D,m,n_trials,rate,stderr,analytic,analytic_stderr,z_gap\n");
    let mut analytic_dat = String::new();
    let mut mc_dat = String::new();
    let mut points = Vec::new();
    for (i, &k) in mc.k_grid.iter().enumerate() {
        let plan = TrialPlan::new(spec.clone(), Scenario::FpIndependent, k, mc.n_trials, derive_seed(base, i as u64));
        let o = run_trials(&plan).map_err(|e| e.at_stage(&format!("fp_curve k={k}"), base))?;
        let a = o.analytic_prediction;
        let ase = (a * (1.0 - a) / mc.n_trials as f64).sqrt();
        let z = analytic_z(o.positive_rate, a, mc.n_trials);
        let _ = writeln!(
            csv,
            "{k},{},{},{},{},{},{a},{ase},{z}",
            spec.noise_dim, spec.m, mc.n_trials, o.positive_rate, o.stderr
        );
        let _ = writeln!(analytic_dat, "{k} {a}");
        let _ = writeln!(mc_dat, "{k} {} {}", o.positive_rate, o.stderr);
        points.push((k, a, z));
    }
    let monotone = points.windows(2).all(|w| w[1].1 <= w[0].1);
    let worst = points.iter().map(|p| p.2.abs()).fold(0.0, f64::max);
    let checks = vec![
        Check::new(
            "analytic curve non-increasing in k",
            monotone,
            format!("{} points", points.len()),
        ),
        Check::new(
            "every point within 3 binomial SE",
            worst <= 3.0,
            format!("max |z| = {worst:.3}"),
        ),
    ];
    Ok(output(
        cfg.id,
        csv,
        vec![
            ("fp_curve_analytic.dat".into(), analytic_dat),
            ("fp_curve_mc.dat".into(), mc_dat),
        ],
        checks,
    ))
}

pub const LINEAR_MC_Z: f64 = 4.0;
pub const MARGIN_Z: f64 = 3.0;

fn linear_mc(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mc = &cfg.montecarlo;
    let base = cfg.seeds[0];
    let dist = &cfg.distribution;
    let mut csv = format!("{}\n", montecarlo::CSV_HEADER);
    let mut zs = Vec::new();
    let mut kinds = std::collections::BTreeSet::new();
    for (i, text) in mc.cells.iter().enumerate() {
        let cell = parse_cell(text)?;
        let spec = DistributionSpec::bounded_signal(dist.k, cell.d, dist.sigma, cell.m)?;
        let mut plan = TrialPlan::new(spec, cell.scenario, cell.k, mc.n_trials, derive_seed(base, i as u64));
        if let Some(l) = cell.lambda {
            plan.threshold = Threshold::Fixed(l);
        }
        let o = run_trials(&plan).map_err(|e| e.at_stage(&format!("cell `{text}`"), base))?;
        let _ = writeln!(csv, "{}", montecarlo::csv_row(&plan, &o));
        zs.push(cell_z(&o));
        kinds.insert(match cell.scenario {
            Scenario::TpDependent => "TP",
            Scenario::FpIndependent => "FP",
            Scenario::Overlap { .. } => "OVERLAP",
            Scenario::Mi => "MI",
        });
    }
    let within = zs.iter().filter(|z| z.abs() <= LINEAR_MC_Z).count();

    let mut margin_csv = String::from("D,sigma,m,n_trials,mean_gap,stderr,expected,z\n");
    let mut margin_ok = true;
    let mut margin_detail = Vec::new();
    for (i, text) in mc.margin_cases.iter().enumerate() {
        let (d, sigma) = parse_margin_case(text)?;
        let spec = DistributionSpec::bounded_signal(dist.k, d, sigma, dist.m)?;
        let est = margin_gap(&spec, mc.margin_trials, derive_seed(derive_named(base, "margin"), i as u64))?;
        let z = est.z();
        margin_ok &= z.abs() <= MARGIN_Z;
        margin_detail.push(format!("(D={d}, sigma={sigma}) z={z:.2}"));
        let _ = writeln!(
            margin_csv,
            "{d},{sigma},{},{},{},{},{},{z}",
            spec.m, est.n_trials, est.mean_gap, est.stderr, est.expected
        );
    }
    let mut checks = Vec::new();
    if !zs.is_empty() {
        checks.push(Check::new(
            "at least 12 cells covering TP, FP, OVERLAP, MI",
            zs.len() >= 12 && kinds.len() == 4,
            format!("{} cells, scenarios {:?}", zs.len(), kinds),
        ));
        checks.push(Check::new(
            "|z_gap| <= 4 in >= 95% of cells",
            within as f64 >= 0.95 * zs.len() as f64,
            format!("{within}/{} within", zs.len()),
        ));
    }
    if !margin_detail.is_empty() {
        checks.push(Check::new(
            "margin gap equals D sigma^2 within 3 SE",
            margin_ok,
            margin_detail.join("; "),
        ));
    }
    Ok(output(cfg.id, csv, vec![("margin_gap.csv".into(), margin_csv)], checks))
}

// ---- non-linear suites -----------------------------------------------------

pub const NONLINEAR_HEADER: &str = "experiment,suspect,seed,accuracy,delta_mu,t,p_value,verdict,k";

#[derive(Debug, Clone, PartialEq)]
pub struct NlRow {
    pub suspect: String,
    pub seed: u64,
    pub accuracy: f64,
    pub delta_mu: f64,
    pub t: f64,
    pub p: f64,
    pub verdict: Verdict,
    /// Experiment-specific column (`variant` or `max_steps`).
    pub extra: Option<String>,
}

fn nl_csv(id: ExperimentId, extra_col: Option<&str>, k: usize, rows: &[NlRow]) -> String {
    let mut out = String::from(NONLINEAR_HEADER);
    if let Some(c) = extra_col {
        out.push(',');
        out.push_str(c);
    }
    out.push('\n');
    for r in rows {
        let _ = write!(
            out,
            "{id},{},{},{},{},{},{},{},{k}",
            r.suspect, r.seed, r.accuracy, r.delta_mu, r.t, r.p, r.verdict
        );
        if let Some(e) = &r.extra {
            out.push(',');
            out.push_str(e);
        }
        out.push('\n');
    }
    out
}

fn select<'a>(rows: &'a [NlRow], suspect: &str, extra: Option<&str>) -> Vec<&'a NlRow> {
    rows.iter()
        .filter(|r| r.suspect == suspect && r.extra.as_deref() == extra)
        .collect()
}

fn ps(rows: &[&NlRow]) -> Vec<f64> {
    rows.iter().map(|r| r.p).collect()
}

fn by_seed<T: Send>(seeds: &[u64], f: impl Fn(u64) -> Result<Vec<T>> + Sync) -> Result<Vec<T>> {
    let per: Vec<Vec<T>> = seeds.par_iter().map(|&s| f(s)).collect::<Result<_>>()?;
    Ok(per.into_iter().flatten().collect())
}

fn verify_row(
    world: &World,
    cfg: &ExperimentConfig,
    tag: &str,
    g: &crate::verifier::Distinguisher,
    walk: &WalkConfig,
    seed: u64,
    extra: Option<String>,
) -> Result<NlRow> {
    let setup = cfg.nonlinear_setup()?;
    let f = world
        .suspects()
        .into_iter()
        .find(|(t, _)| *t == tag)
        .map(|(_, f)| f)
        .ok_or_else(|| Error::Config(format!("suspect {tag} was not trained")))?;
    let r = world.verify(f, g, &setup, walk, seed)?;
    Ok(NlRow {
        suspect: tag.to_string(),
        seed,
        accuracy: world.accuracy(f)?,
        delta_mu: r.delta_mu,
        t: r.t,
        p: r.p,
        verdict: r.verdict,
        extra,
    })
}

fn nonlinear_fp(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = cfg.nonlinear_setup()?;
    let which = SuspectSet {
        independent: true,
        public: true,
        adversarial: false,
    };
    let rows = by_seed(&cfg.seeds, |seed| {
        Ok(run_seed(&setup, which, seed)?
            .into_iter()
            .map(|r| NlRow {
                suspect: r.suspect,
                seed,
                accuracy: r.accuracy,
                delta_mu: r.report.delta_mu,
                t: r.report.t,
                p: r.report.p,
                verdict: r.report.verdict,
                extra: None,
            })
            .collect())
    })?;
    let checks = fp_checks(&rows, &cfg.seeds, setup.alpha);
    Ok(output(cfg.id, nl_csv(cfg.id, None, setup.k, &rows), Vec::new(), checks))
}

/// Conditions on the `f_V` / `f_I` / `f_0` p-values of a split-protocol run.
pub fn fp_checks(rows: &[NlRow], seeds: &[u64], alpha: f64) -> Vec<Check> {
    let pv = median(&ps(&select(rows, "f_V", None)));
    let pi = median(&ps(&select(rows, "f_I", None)));
    let p0 = median(&ps(&select(rows, "f_0", None)));
    let n = seeds.len();
    let per_seed = |s: u64, tag: &str| rows.iter().find(|r| r.seed == s && r.suspect == tag);
    let fp_seeds = seeds
        .iter()
        .filter(|&&s| match (per_seed(s, "f_I"), per_seed(s, "f_0")) {
            (Some(i), Some(o)) => i.p < o.p / 10.0,
            _ => false,
        })
        .count();
    let ordered_dmu = seeds
        .iter()
        .filter(|&&s| match (per_seed(s, "f_V"), per_seed(s, "f_I"), per_seed(s, "f_0")) {
            (Some(v), Some(i), Some(o)) => v.delta_mu > i.delta_mu && i.delta_mu > o.delta_mu,
            _ => false,
        })
        .count();
    vec![
        Check::new("at least 5 seeds", n >= 5, format!("{n} seeds")),
        Check::new(
            "median p ordering f_V < f_I < f_0",
            pv < pi && pi < p0,
            format!("p(f_V) = {pv:.3e}, p(f_I) = {pi:.3e}, p(f_0) = {p0:.3e}"),
        ),
        Check::new(format!("median p(f_V) < {alpha}").as_str(), pv < alpha, format!("{pv:.3e}")),
        Check::new("median p(f_0) > 0.1", p0 > 0.1, format!("{p0:.3e}")),
        Check::new(
            "p(f_I) < p(f_0)/10 in >= 60% of seeds",
            fp_seeds as f64 >= 0.6 * n as f64,
            format!("{fp_seeds}/{n}"),
        ),
        Check::new(
            "delta_mu ordering f_V > f_I > f_0 in >= 80% of seeds",
            ordered_dmu as f64 >= 0.8 * n as f64,
            format!("{ordered_dmu}/{n}"),
        ),
    ]
}

fn adversarial_fn(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = cfg.nonlinear_setup()?;
    let which = SuspectSet {
        independent: false,
        public: false,
        adversarial: true,
    };
    let rows = by_seed(&cfg.seeds, |seed| {
        let world = build_world(&setup, which, seed)?;
        let g = world.gv(&setup.walk, &setup.gv, seed)?;
        ["f_V", "f_A"]
            .iter()
            .map(|tag| verify_row(&world, cfg, tag, &g, &setup.walk, seed, None))
            .collect()
    })?;
    let n = cfg.seeds.len();
    let fv = select(&rows, "f_V", None);
    let fa = select(&rows, "f_A", None);
    let a_missed = fa.iter().filter(|r| r.p > setup.alpha).count();
    let v_caught = fv.iter().filter(|r| r.p < setup.alpha).count();
    let acc_v = mean(&fv.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let acc_a = mean(&fa.iter().map(|r| r.accuracy).collect::<Vec<_>>());
    let checks = vec![
        Check::new("at least 5 seeds", n >= 5, format!("{n} seeds")),
        Check::new(
            "p(f_A) > alpha in >= 80% of seeds",
            a_missed as f64 >= 0.8 * n as f64,
            format!("{a_missed}/{n}"),
        ),
        Check::new(
            "p(f_V) < alpha in >= 80% of seeds",
            v_caught as f64 >= 0.8 * n as f64,
            format!("{v_caught}/{n}"),
        ),
        Check::new(
            "accuracy(f_A) < accuracy(f_V)",
            acc_a < acc_v,
            format!("mean {acc_a:.4} vs {acc_v:.4}"),
        ),
    ];
    Ok(output(cfg.id, nl_csv(cfg.id, None, setup.k, &rows), Vec::new(), checks))
}

fn countermeasure_gv(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = cfg.nonlinear_setup()?;
    let which = SuspectSet {
        independent: true,
        public: true,
        adversarial: false,
    };
    let four = GvConfig {
        arch: GvArch::FourLayerDropout,
        ..setup.gv.clone()
    };
    let rows = by_seed(&cfg.seeds, |seed| {
        let world = build_world(&setup, which, seed)?;
        let variants = [
            ("baseline", world.gv(&setup.walk, &setup.gv, seed)?),
            ("augmented", world.gv_augmented(&setup.walk, &setup.gv, seed)?),
            ("four_layer", world.gv(&setup.walk, &four, seed)?),
        ];
        let mut out = Vec::new();
        for (name, g) in &variants {
            for tag in ["f_V", "f_I", "f_0"] {
                out.push(verify_row(&world, cfg, tag, g, &setup.walk, seed, Some(name.to_string()))?);
            }
        }
        Ok(out)
    })?;
    let checks = ["augmented", "four_layer"]
        .iter()
        .map(|v| {
            let p = median(&ps(&select(&rows, "f_I", Some(v))));
            Check::new(
                &format!("{v} g_V still flags f_I (median p < alpha)"),
                p < setup.alpha,
                format!("median p(f_I) = {p:.3e}"),
            )
        })
        .collect();
    Ok(output(cfg.id, nl_csv(cfg.id, Some("variant"), setup.k, &rows), Vec::new(), checks))
}

fn countermeasure_noise(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let setup = cfg.nonlinear_setup()?;
    let which = SuspectSet {
        independent: false,
        public: true,
        adversarial: true,
    };
    let grid = cfg.walk.max_steps_grid.clone();
    let rows = by_seed(&cfg.seeds, |seed| {
        let world = build_world(&setup, which, seed)?;
        let mut out = Vec::new();
        for &steps in &grid {
            let walk = WalkConfig {
                max_steps: steps,
                ..setup.walk
            };
            let g = world.gv(&walk, &setup.gv, seed)?;
            for tag in ["f_V", "f_0", "f_A"] {
                out.push(verify_row(&world, cfg, tag, &g, &walk, seed, Some(steps.to_string()))?);
            }
        }
        Ok(out)
    })?;
    let checks = grid
        .iter()
        .map(|s| {
            let key = s.to_string();
            let p = median(&ps(&select(&rows, "f_A", Some(&key))));
            Check::new(
                &format!("max_steps={s}: median p(f_A) > alpha"),
                p > setup.alpha,
                format!("{p:.3e}"),
            )
        })
        .collect();
    Ok(output(cfg.id, nl_csv(cfg.id, Some("max_steps"), setup.k, &rows), Vec::new(), checks))
}

// ---- PAC-Bayes -------------------------------------------------------------

pub const PACBAYES_HEADER: &str = "seed,check,cases,passed,statistic,bound";

fn pacbayes_check(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let mut setup = cfg.nonlinear_setup()?;
    // The perturbation bound assumes bias-free networks.
    setup.suspect.bias = false;
    let pb = cfg.pacbayes.clone();
    let which = SuspectSet {
        independent: true,
        public: false,
        adversarial: false,
    };
    struct SeedOut {
        rows: String,
        bounds: String,
        dominated: bool,
        tail_ok: bool,
        within: f64,
    }
    let per: Vec<SeedOut> = cfg
        .seeds
        .iter()
        .map(|&seed| -> Result<SeedOut> {
            let world = build_world(&setup, which, seed)?;
            let f_i = world.f_i.as_ref().expect("f_I requested");
            let probe = sample_dataset(&setup.spec, pb.n_probe, derive_named(seed, "probe"))
                .map_err(|e| e.at_stage("probe", seed))?;
            let dom = domination_check(&world.f_v, &probe.inputs(), pb.domination_cases, derive_named(seed, "domination"))
                .map_err(|e| e.at_stage("domination", seed))?;
            let (h, d) = (world.f_v.max_width(), world.f_v.depth());
            let t_star = union_threshold(h, d, pb.sigma_p);
            let thresholds: Vec<f64> = [0.5, 0.75, 1.0, 1.25].iter().map(|c| c * t_star).collect();
            let tail = spectral_tail_check(h, pb.sigma_p, &thresholds, pb.tail_draws, derive_named(seed, "tail"));
            let sim = margin_similarity_check(
                &world.f_v,
                f_i,
                &probe,
                pb.sigma_p,
                pb.gamma_margin,
                setup.spec.m,
                pb.n_perturbations,
                derive_named(seed, "similarity"),
            )
            .map_err(|e| e.at_stage("margin similarity", seed))?;

            let mut rows = String::new();
            let _ = writeln!(rows, "{seed},domination,{},{},{},1", dom.cases, dom.dominated, dom.max_ratio);
            for t in &tail {
                let _ = writeln!(
                    rows,
                    "{seed},spectral_tail t={},{},{},{},{}",
                    t.t,
                    pb.tail_draws,
                    u8::from(t.exceed_fraction <= t.bound),
                    t.exceed_fraction,
                    t.bound
                );
            }
            let _ = writeln!(
                rows,
                "{seed},margin_similarity,{},{},{},{}",
                sim.n_draws, sim.within, sim.mean_gap, sim.epsilon
            );

            let b = probe
                .inputs()
                .iter()
                .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
                .fold(0.0, f64::max);
            let inputs = BoundInputs::from_model(&world.f_v, b, pb.gamma_margin, setup.spec.m, pb.sigma_p);
            let eps = generalization_epsilon(&inputs)?;
            let (spec_n, frob_n) = layer_norms(&world.f_v);
            let mut bounds = format!("[seed_{seed}]\nB = {b}\nd = {d}\nh = {h}\n");
            let _ = writeln!(bounds, "spectral_norms = {:?}", spec_n);
            let _ = writeln!(bounds, "frobenius_norms = {:?}", frob_n);
            let _ = writeln!(bounds, "beta = {}\nepsilon = {eps}\nbase_margin_gap = {}\n", inputs.beta(), sim.base_gap);
            Ok(SeedOut {
                rows,
                bounds,
                dominated: dom.dominated == dom.cases,
                tail_ok: tail.iter().all(|t| t.exceed_fraction <= t.bound),
                within: sim.fraction_within(),
            })
        })
        .collect::<Result<_>>()?;

    let mut csv = format!("{PACBAYES_HEADER}\n");
    let mut bounds = String::new();
    for p in &per {
        csv.push_str(&p.rows);
        bounds.push_str(&p.bounds);
    }
    let min_within = per.iter().map(|p| p.within).fold(1.0, f64::min);
    let checks = vec![
        Check::new(
            "perturbation bound dominates every sampled case",
            per.iter().all(|p| p.dominated),
            format!("{} cases per seed", pb.domination_cases),
        ),
        Check::new(
            "spectral tail counts within 2h exp(-t^2/2h sigma^2)",
            per.iter().all(|p| p.tail_ok),
            format!("{} draws per threshold", pb.tail_draws),
        ),
        Check::new(
            "margin gap <= epsilon in >= 50% of draws",
            min_within >= 0.5,
            format!("smallest fraction {min_within:.3}"),
        ),
    ];
    Ok(output(cfg.id, csv, vec![("bounds.toml".into(), bounds)], checks))
}

// ---- numerical kernels -----------------------------------------------------

fn numerical_kernels(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let seed = cfg.seeds[0];
    let k = &cfg.kernels;
    let grads = gradient_rows(k.gradient_cases, derive_named(seed, "gradients"))?;
    let phis = phi_rows(k.phi_points)?;
    let perms = permutation_rows(k.permutations, seed);
    let mut csv = format!("{}\n", KernelRow::CSV_HEADER);
    for r in grads.iter().chain(&phis).chain(&perms) {
        let _ = writeln!(csv, "{}", r.csv_row());
    }
    let summary = |name: &str, rows: &[KernelRow]| {
        let worst = rows.iter().map(|r| r.error).fold(0.0, f64::max);
        Check::new(
            name,
            rows.iter().all(KernelRow::pass),
            format!("{} cases, max error {worst:.3e} (tol {:.0e})", rows.len(), rows[0].tolerance),
        )
    };
    let checks = vec![
        summary("backprop vs central differences", &grads),
        summary("phi vs quadrature", &phis),
        summary("Welch p vs permutation oracle", &perms),
    ];
    Ok(output(cfg.id, csv, Vec::new(), checks))
}
