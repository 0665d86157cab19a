//! The real-data workflow: split, impute, prepare, then fit the six-model
//! menu and score each on held-out rows.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::error::{Error, Result};
use crate::experiments::{fit_and_score, mse, ModelSpec, PreparationKind, PreparedPair};
use crate::ingest::encode_categoricals;
use crate::linreg::{
    backward_select, expand_interactions, fit_terms, parsimony_select, predict_linear, replay_interactions, LinearModel,
    SelectionPath, DEFAULT_FOLDS,
    DEFAULT_PARSIMONY_TOLERANCE,
};
use crate::neuralnet::{Activation, TrainConfig};
use crate::prepare::{
    covariate_design, had_second_day, impute_missing_second_day, standardize, stratified_indices, DesignMatrix,
    Pipeline, PipelineKind,
};
use crate::randmath::RngState;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnalysisConfig {
    pub test_fraction: f64,
    pub folds: usize,
    pub parsimony_tolerance: f64,
    /// Highest interaction order in the selection start model.
    pub max_order: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub train: TrainConfig,
    pub seed: u64,
}

impl Default for AnalysisConfig {
    fn default() -> Self {
        Self {
            test_fraction: 0.2,
            folds: DEFAULT_FOLDS,
            parsimony_tolerance: DEFAULT_PARSIMONY_TOLERANCE,
            max_order: 3,
            hidden: vec![32, 16],
            activation: Activation::Relu,
            train: TrainConfig::default(),
            seed: 20_240_601,
        }
    }
}

impl AnalysisConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::Config(format!("test_fraction must lie in (0, 1), got {}", self.test_fraction)));
        }
        if self.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if !(1..=3).contains(&self.max_order) {
            return Err(Error::Config("max_order must be 1, 2 or 3".into()));
        }
        if !(self.parsimony_tolerance >= 0.0) {
            return Err(Error::Config("parsimony_tolerance must be non-negative".into()));
        }
        self.train.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRow {
    pub model: String,
    /// Terms besides the intercept, for the selected regressions.
    pub size: Option<usize>,
    pub train_mse: f64,
    pub test_mse: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AnalysisReport {
    pub train_rows: usize,
    pub test_rows: usize,
    pub imputed_rows: usize,
    pub rows: Vec<AnalysisRow>,
    pub full_size: usize,
    pub full_cv_rmse: f64,
    pub optimal_size: usize,
    pub optimal_cv_rmse: f64,
    pub parsimonious_size: usize,
    pub parsimonious_cv_rmse: f64,
    pub path: SelectionPath,
    pub warnings: Vec<String>,
}

impl AnalysisReport {
    /// `model,size,train_mse,test_mse`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for r in &self.rows {
            out.serialize(r)?;
        }
        out.flush().map_err(|e| Error::io("<analysis>", e))?;
        Ok(())
    }
}

fn with_covariates<T: Scalar>(dm: DesignMatrix<T>, ds: &Dataset<T>, dummies: &DesignMatrix<T>) -> Result<DesignMatrix<T>> {
    dm.hstack(&covariate_design(ds))?.hstack(dummies)
}

fn standardized_pair<T: Scalar>(train: DesignMatrix<T>, test: DesignMatrix<T>) -> Result<PreparedPair<T>> {
    let train = standardize(&train, None)?;
    let test = standardize(&test, train.standardization.as_ref())?;
    Ok(PreparedPair { train, test })
}

/// Runs the six-model menu on a two-day dataset.
///
/// Rows are split by observed-day pattern, absent second days are filled
/// from day 1, and every fitted quantity (Box-Cox lambdas, scaling, model
/// parameters) comes from the training rows only.
pub fn run_analysis<T: Scalar>(ds: &Dataset<T>, cfg: &AnalysisConfig) -> Result<AnalysisReport> {
    cfg.validate()?;
    if ds.k() != 2 {
        return Err(Error::Config(format!("the analysis workflow expects two days, found {}", ds.k())));
    }
    let seed = RngState::new(cfg.seed);
    let (dummies, warnings) = encode_categoricals::<T>(&ds.categoricals, ds.n())?;
    let imputed_rows = (0..ds.n()).filter(|&i| !ds.is_present(i, 1)).count();
    let full = impute_missing_second_day(ds)?;
    let (train_idx, test_idx) = stratified_indices(&full, cfg.test_fraction, seed.substream(1))?;
    let (train, test) = (full.select_rows(&train_idx), full.select_rows(&test_idx));
    let (d_train, d_test) = (dummies.select_rows(&train_idx), dummies.select_rows(&test_idx));

    let simple = |kind: PipelineKind| -> Result<PreparedPair<T>> {
        let mut pipeline = Pipeline::new(kind);
        let a = with_covariates(pipeline.apply(&train)?, &train, &d_train)?;
        let b = with_covariates(pipeline.apply(&test)?, &test, &d_test)?;
        standardized_pair(a, b)
    };
    let avg = simple(PipelineKind::Average)?;
    let cat = simple(PipelineKind::Concatenate)?;

    let nn = ModelSpec::Mlp {
        hidden: cfg.hidden.clone(),
        activation: cfg.activation,
        train: cfg.train.clone(),
    };
    let mut rows = Vec::with_capacity(6);
    for (label, pair, model, kind) in [
        ("nn_average", &avg, &nn, PreparationKind::Average),
        ("nn_concatenate", &cat, &nn, PreparationKind::Concatenate),
        ("lr_average", &avg, &ModelSpec::Ols, PreparationKind::Average),
        ("lr_concatenate", &cat, &ModelSpec::Ols, PreparationKind::Concatenate),
    ] {
        let stream = seed.derive(&[2, kind as u64]);
        let fit = fit_and_score(model, pair, &train.y, &test.y, stream)?;
        rows.push(AnalysisRow {
            model: label.into(),
            size: None,
            train_mse: fit.train_mse,
            test_mse: fit.test_mse,
        });
    }

    // transformed average + second-day indicator + covariates, all interactions
    let mut pipeline = Pipeline::new(PipelineKind::TransformedAverage);
    let main = |ds: &Dataset<T>, d: &DesignMatrix<T>, p: &mut Pipeline| -> Result<DesignMatrix<T>> {
        with_covariates(p.apply(ds)?.hstack(&had_second_day(ds))?, ds, d)
    };
    let a = main(&train, &d_train, &mut pipeline)?;
    let b = main(&test, &d_test, &mut pipeline)?;
    let pair = standardized_pair(a, b)?;
    let strata: Vec<String> = (0..train.n()).map(|i| train.presence_pattern(i)).collect();
    let x_train = expand_interactions(&pair.train, cfg.max_order)?.with_strata(strata);
    let x_test = replay_interactions(&x_train, &pair.test)?;
    let (optimal, path) = backward_select(&x_train, &train.y, cfg.folds, seed.substream(3))?;
    let best = path.best().clone();
    let parsimonious_size = parsimony_select(&path, cfg.parsimony_tolerance)?;
    let parsimonious = path
        .at_size(parsimonious_size)
        .cloned()
        .ok_or_else(|| Error::Degenerate("parsimonious size missing from path".into()))?;
    let score = |m: &LinearModel<T>, terms: &[usize]| -> Result<(f64, f64)> {
        let tr = predict_linear(m, &x_train.select_terms(terms))?;
        let te = predict_linear(m, &x_test.select_terms(terms))?;
        Ok((mse(&tr, &train.y)?.as_f64(), mse(&te, &test.y)?.as_f64()))
    };
    let (tr, te) = score(&optimal, &best.terms)?;
    rows.push(AnalysisRow {
        model: "lr_backward_optimal".into(),
        size: Some(best.size),
        train_mse: tr,
        test_mse: te,
    });
    let small = fit_terms(&x_train, &train.y, &parsimonious.terms)?;
    let (tr, te) = score(&small, &parsimonious.terms)?;
    rows.push(AnalysisRow {
        model: "lr_backward_parsimonious".into(),
        size: Some(parsimonious.size),
        train_mse: tr,
        test_mse: te,
    });

    Ok(AnalysisReport {
        train_rows: train.n(),
        test_rows: test.n(),
        imputed_rows,
        rows,
        full_size: path.steps[0].size,
        full_cv_rmse: path.steps[0].cv_rmse,
        optimal_size: best.size,
        optimal_cv_rmse: best.cv_rmse,
        parsimonious_size: parsimonious.size,
        parsimonious_cv_rmse: parsimonious.cv_rmse,
        path,
        warnings,
    })
}
