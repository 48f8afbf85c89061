use dilab_core::experiments::summary::summarize;
use dilab_core::experiments::{run_experiment, ExperimentConfig, ExperimentId};

#[test]
fn theory_anchors_through_runner() {
    let cfg = ExperimentConfig::with_defaults(ExperimentId::TheoryTables, vec![0]).unwrap();
    let out = run_experiment(&cfg).unwrap();
    assert!(out.all_pass());
    assert!(out.results_csv().starts_with("formula,inputs,value\n"));
}

#[test]
fn small_fp_curve_is_deterministic() {
    let text = r#"
experiment = "fp_curve"
seeds = [11]
[distribution]
d = 10
m = 400
[montecarlo]
n_trials = 300
k_grid = [1, 4, 16]
"#;
    let cfg = ExperimentConfig::parse(text).unwrap();
    let a = run_experiment(&cfg).unwrap();
    let b = run_experiment(&ExperimentConfig::parse(text).unwrap()).unwrap();
    assert_eq!(a.files, b.files);
    let xs: Vec<&str> = a
        .file("fp_curve_analytic.dat")
        .unwrap()
        .lines()
        .map(|l| l.split_whitespace().next().unwrap())
        .collect();
    assert_eq!(xs, ["1", "4", "16"]);
    let changed = ExperimentConfig::parse(&text.replace("[11]", "[12]")).unwrap();
    assert_ne!(run_experiment(&changed).unwrap().results_csv(), a.results_csv());
}

#[test]
fn small_nonlinear_run_summarizes() {
    let text = r#"
experiment = "nonlinear_fp"
seeds = [1, 2]
[distribution]
k = 2
d = 6
m = 120
[suspect]
hidden = [8]
epochs = 5
n_public = 40
n_test = 100
[walk]
n_directions = 6
max_steps = 20
step_size = 0.05
[gv]
epochs = 20
[verify]
k = 5
n_gv = 20
"#;
    let cfg = ExperimentConfig::parse(text).unwrap();
    let out = run_experiment(&cfg).unwrap();
    let csv = out.results_csv();
    assert_eq!(csv.lines().count(), 1 + 3 * 2);
    let s = summarize(&[csv]).unwrap();
    assert_eq!(s.groups.len(), 3);
    assert!(s.groups.iter().all(|g| g.n == 2));
}

#[test]
fn config_errors() {
    assert!(ExperimentConfig::parse("experiment = \"fp_curve\"\nseeds = []\n").is_err());
    assert!(ExperimentConfig::parse("experiment = \"nope\"\n").is_err());
    assert!(ExperimentConfig::parse("experiment = \"fp_curve\"\n[walk]\nsteps = 3\n").is_err());
}
