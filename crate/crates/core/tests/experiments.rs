use errlab_core::datagen::{make_preset_spec, OutcomeForm, PresetScenario, ScenarioSpec};
use errlab_core::experiments::*;
use errlab_core::randmath::CovarianceMatrix;
use errlab_core::randmath::RngState;
use errlab_core::Error;
use proptest::prelude::*;

fn grid(extra: &str) -> ExperimentConfig {
    ExperimentConfig::from_json(&format!(
        r#"{{"scenario": {{"preset": "sim1"}}, "n": 400, "days": [2, 4],
            "preparations": [{{"kind": "average"}}, {{"kind": "concatenate"}}, {{"kind": "transformed_average"}}],
            "models": [{{"type": "ols"}}, {{"type": "mlp", "hidden": [4], "train": {{"max_epochs": 3, "batch_size": 32}}}}],
            "replications": 2, "seed": 5 {extra}}}"#
    ))
    .unwrap()
}

fn linear_spec(n: usize, k: usize) -> ScenarioSpec {
    ScenarioSpec {
        n,
        k,
        p: 1,
        q: 0,
        sigma_y2: 1.0,
        alpha: vec![2.0, 0.5],
        beta: vec![vec![10.0]],
        sigma_u: CovarianceMatrix::from_rows(&[vec![4.0]]).unwrap(),
        sigma_eps: CovarianceMatrix::from_rows(&[vec![1.0]]).unwrap(),
        lambda: None,
        sigma_z: None,
        outcome_form: OutcomeForm::Linear,
        link: Default::default(),
        seed: RngState::new(1),
        surrogate_scale: Default::default(),
    }
}

fn cell(spec: ScenarioSpec) -> Cell {
    Cell {
        scenario: "t".into(),
        test_n: spec.n,
        spec,
    }
}

#[test]
fn grid_has_every_cell_once_in_order() {
    let t = run_experiment(&grid("")).unwrap();
    assert_eq!(t.rows.len(), 2 * 2 * 3 * 2);
    assert_eq!(t.failures(), 0);
    let first = &t.rows[0];
    assert_eq!((first.days, first.rep, first.preparation.as_str(), first.model.as_str()), (2, 0, "average", "ols"));
    let mut keys: Vec<_> = t.rows.iter().map(|r| (r.days, r.rep, r.preparation.clone(), r.model.clone())).collect();
    keys.sort();
    keys.dedup();
    assert_eq!(keys.len(), t.rows.len());
    assert!(t.rows.iter().all(|r| r.wall_ms == 0 && r.train_mse.unwrap() >= 0.0));
    assert_eq!(t.aggregate().len(), 2 * 3 * 2);
}

#[test]
fn reruns_are_byte_identical() {
    let cfg = grid("");
    let mut a = Vec::new();
    let mut b = Vec::new();
    run_experiment(&cfg).unwrap().write_rows(&mut a).unwrap();
    run_experiment(&cfg).unwrap().write_rows(&mut b).unwrap();
    assert_eq!(a, b);
}

#[test]
fn persisted_seed_reproduces_a_row() {
    let cfg = grid("");
    let t = run_experiment(&cfg).unwrap();
    let cells = cfg.cells().unwrap();
    for r in t.rows.iter().filter(|r| r.days == 4 && r.rep == 1) {
        let prep = cfg.preparations.iter().find(|p| p.label() == r.preparation).unwrap();
        let model = cfg.models.iter().find(|m| m.label() == r.model).unwrap();
        let again = run_cell::<f64>(&cells[1], prep, model, r.rep, r.seed);
        assert_eq!(&again, r);
    }
}

#[test]
fn one_day_average_equals_concatenate_for_ols() {
    let c = cell(linear_spec(300, 1));
    let avg = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Average), &ModelSpec::Ols, 0, 3);
    let cat = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Concatenate), &ModelSpec::Ols, 0, 3);
    assert_eq!(avg.train_mse, cat.train_mse);
    assert_eq!(avg.test_mse, cat.test_mse);
}

#[test]
fn truth_ols_reaches_the_noise_floor() {
    let c = cell(linear_spec(200_000, 2));
    let r = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Truth), &ModelSpec::Ols, 0, 11);
    let test = r.test_mse.unwrap();
    assert!((test - 1.0).abs() < 0.05, "{test}");
}

#[test]
fn mse_matches_squared_cv_rmse() {
    use errlab_core::linreg::{fit_ols, predict_linear};
    use errlab_core::prepare::truth_design;
    let ds = errlab_core::datagen::generate::<f64>(&linear_spec(500, 2), RngState::new(4)).unwrap();
    let dm = truth_design(&ds).unwrap();
    let m = fit_ols(&dm, &ds.y).unwrap();
    let p = predict_linear(&m, &dm).unwrap();
    let rmse = (p.iter().zip(&ds.y).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 500.0).sqrt();
    assert!((mse(&p, &ds.y).unwrap() - rmse * rmse).abs() < 1e-12);
}

#[test]
fn tradeoff_sizes_and_budget_errors() {
    let base = ExperimentConfig::from_json(
        r#"{"scenario": {"preset": "sim2"}, "preparations": [{"kind": "average"}],
            "models": [{"type": "ols"}], "replications": 1}"#,
    )
    .unwrap();
    let t = run_budget_tradeoff(12000, &[2, 4, 6, 8, 10], &base).unwrap();
    let ns: Vec<usize> = t.rows.iter().map(|r| r.n).collect();
    assert_eq!(ns, vec![6000, 3000, 2000, 1500, 1200]);
    assert!(t.rows.iter().all(|r| r.scenario == "sim2-b12000"));
    assert!(matches!(
        run_budget_tradeoff(12000, &[7], &base),
        Err(Error::IndivisibleBudget { budget: 12000, days: 7 })
    ));
}

#[test]
fn divergence_is_a_failed_row() {
    let cfg = ExperimentConfig::from_json(
        r#"{"scenario": {"preset": "sim1"}, "n": 300, "days": [2],
            "preparations": [{"kind": "average"}],
            "models": [{"type": "ols"}, {"type": "mlp", "hidden": [4], "train": {"learning_rate": 1e6, "max_epochs": 5, "batch_size": 16}}],
            "replications": 1}"#,
    )
    .unwrap();
    let t = run_experiment(&cfg).unwrap();
    assert!(!t.rows[0].failed);
    assert!(t.rows[1].failed && t.rows[1].test_mse.is_none());
    assert!(matches!(t.check(), Err(Error::PartialFailure { failed: 1, total: 2 })));
    let agg = t.aggregate();
    assert_eq!((agg[1].failures, agg[1].test_mse_mean), (1, None));
}

#[test]
fn save_and_load() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("out/results.csv");
    let t = run_experiment(&grid("")).unwrap();
    let agg = aggregate_path_for(&path);
    t.save(&path, &agg).unwrap();
    assert_eq!(ResultTable::load(&path).unwrap(), t);
    let text = std::fs::read_to_string(&agg).unwrap();
    assert!(text.starts_with("scenario,days,n,preparation,model,reps,failures,train_mse_mean"));
    assert_eq!(text.lines().count(), 1 + 12);
}

#[test]
fn single_precision_runs() {
    let t = run_experiment(&grid(r#", "precision": "f32""#)).unwrap();
    assert_eq!(t.failures(), 0);
}

#[test]
fn sim3_covariates_and_log_terms() {
    let mut spec = make_preset_spec(PresetScenario::Sim3 { scenario: 2 }).unwrap();
    spec.n = 2000;
    let c = cell(spec);
    let plain = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Average), &ModelSpec::Ols, 0, 8);
    let logs = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Average).with_log_terms(), &ModelSpec::Ols, 0, 8);
    // nested designs on the same training data
    assert!(logs.train_mse.unwrap() <= plain.train_mse.unwrap());
    let bad = run_cell::<f64>(&c, &Preparation::new(PreparationKind::Concatenate).with_log_terms(), &ModelSpec::Ols, 0, 8);
    assert!(bad.failed);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(8))]
    #[test]
    fn aggregates_ignore_row_order(seed in any::<u64>(), swaps in proptest::collection::vec((0usize..6, 0usize..6), 0..10)) {
        let c = cell(linear_spec(120, 2));
        let mut t = ResultTable::default();
        for rep in 0..6 {
            t.rows.push(run_cell::<f64>(&c, &Preparation::new(PreparationKind::Average), &ModelSpec::Ols, rep, seed ^ rep as u64));
        }
        let before = t.aggregate();
        for (a, b) in swaps {
            t.rows.swap(a, b);
        }
        let after = t.aggregate();
        let close = |x: Option<f64>, y: Option<f64>| (x.unwrap() - y.unwrap()).abs() <= 1e-12 * x.unwrap().abs();
        prop_assert!(close(before[0].test_mse_mean, after[0].test_mse_mean));
        prop_assert!(close(before[0].test_mse_sd, after[0].test_mse_sd));
        prop_assert!(after.iter().all(|a| a.test_mse_mean.unwrap() > 0.0));
    }
}
