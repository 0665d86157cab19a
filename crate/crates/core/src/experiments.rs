//! Replicated simulation grids: generate, prepare, fit, score, aggregate.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::RngCore;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{generate, make_preset_spec, Dataset, PresetScenario, ScenarioSpec, PRESET_DAYS};
use crate::error::{Error, Result};
use crate::linreg::{fit_ols, predict_linear};
use crate::neuralnet::{init_network, predict_nn, train, Activation, Architecture, TrainConfig};
use crate::prepare::{covariate_design, standardize, truth_design, DesignMatrix, Lambdas, Pipeline, PipelineKind};
use crate::randmath::RngState;
use crate::scalar::Scalar;

/// Mean squared difference.
pub fn mse<T: Scalar>(predictions: &[T], targets: &[T]) -> Result<T> {
    if predictions.len() != targets.len() {
        return Err(Error::LengthMismatch {
            left: predictions.len(),
            right: targets.len(),
        });
    }
    if predictions.is_empty() {
        return Err(Error::Degenerate("mse of empty vectors".into()));
    }
    let sum: T = predictions.iter().zip(targets).map(|(&p, &t)| (p - t) * (p - t)).sum();
    Ok(sum / T::of_usize(targets.len()))
}

/// `test − train`.
pub fn overfit_gap(train_mse: f64, test_mse: f64) -> f64 {
    test_mse - train_mse
}

/// A built-in scenario named by tag, with the grid supplying days/budget.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum PresetRef {
    Sim1,
    Sim2 {
        #[serde(default)]
        budget: Option<usize>,
    },
    Sim3 {
        scenario: usize,
    },
}

/// A preset tag (an object with a `preset` key) or a full spec.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged, try_from = "serde_json::Value")]
pub enum ScenarioSource {
    Preset(PresetRef),
    Custom(Box<ScenarioSpec>),
}

impl TryFrom<serde_json::Value> for ScenarioSource {
    type Error = serde_json::Error;

    fn try_from(v: serde_json::Value) -> std::result::Result<Self, Self::Error> {
        if v.get("preset").is_some() {
            serde_json::from_value(v).map(Self::Preset)
        } else {
            serde_json::from_value(v).map(|s| Self::Custom(Box::new(s)))
        }
    }
}

impl ScenarioSource {
    fn base(&self) -> Result<ScenarioSpec> {
        match *self {
            Self::Preset(PresetRef::Sim1) => make_preset_spec(PresetScenario::Sim1 { days: 2 }),
            Self::Preset(PresetRef::Sim2 { budget }) => make_preset_spec(PresetScenario::Sim2 {
                budget: budget.unwrap_or(60000),
                days: 2,
            }),
            Self::Preset(PresetRef::Sim3 { scenario }) => make_preset_spec(PresetScenario::Sim3 { scenario }),
            Self::Custom(ref spec) => Ok((**spec).clone()),
        }
    }

    pub fn label(&self) -> String {
        match *self {
            Self::Preset(PresetRef::Sim1) => "sim1".into(),
            Self::Preset(PresetRef::Sim2 { budget }) => match budget {
                Some(b) => format!("sim2-b{b}"),
                None => "sim2".into(),
            },
            Self::Preset(PresetRef::Sim3 { scenario }) => format!("sim3-s{scenario}"),
            Self::Custom(_) => "custom".into(),
        }
    }

    fn default_days(&self) -> Vec<usize> {
        match self {
            Self::Preset(PresetRef::Sim1) | Self::Preset(PresetRef::Sim2 { .. }) => PRESET_DAYS.to_vec(),
            Self::Preset(PresetRef::Sim3 { .. }) => vec![2],
            Self::Custom(spec) => vec![spec.k],
        }
    }

    fn default_replications(&self) -> usize {
        match self {
            Self::Preset(PresetRef::Sim3 { .. }) => 100,
            _ => 20,
        }
    }

    fn budget(&self) -> Option<usize> {
        match *self {
            Self::Preset(PresetRef::Sim2 { budget }) => budget,
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PreparationKind {
    Average,
    Concatenate,
    TransformedAverage,
    /// Usual intakes themselves, the error-free reference.
    Truth,
}

/// How surrogate replicates become model inputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Preparation {
    pub kind: PreparationKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Lambdas>,
    /// Add `ln` of every averaged surrogate.
    #[serde(default)]
    pub log_terms: bool,
    /// Append error-free covariates when the scenario has them.
    #[serde(default = "yes")]
    pub covariates: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<String>,
}

fn yes() -> bool {
    true
}

impl Preparation {
    pub fn new(kind: PreparationKind) -> Self {
        Self {
            kind,
            lambdas: None,
            log_terms: false,
            covariates: true,
            label: None,
        }
    }

    pub fn with_log_terms(mut self) -> Self {
        self.log_terms = true;
        self
    }

    pub fn label(&self) -> String {
        if let Some(l) = &self.label {
            return l.clone();
        }
        let base = match self.kind {
            PreparationKind::Average => "average",
            PreparationKind::Concatenate => "concatenate",
            PreparationKind::TransformedAverage => "transformed_average",
            PreparationKind::Truth => "truth",
        };
        if self.log_terms {
            format!("{base}+log")
        } else {
            base.to_string()
        }
    }

    fn pipeline(&self) -> Option<Pipeline> {
        let kind = match self.kind {
            PreparationKind::Average => PipelineKind::Average,
            PreparationKind::Concatenate => PipelineKind::Concatenate,
            PreparationKind::TransformedAverage => PipelineKind::TransformedAverage,
            PreparationKind::Truth => return None,
        };
        let mut p = Pipeline::new(kind);
        if self.lambdas.is_some() {
            p.lambdas = self.lambdas.clone();
        }
        Some(p)
    }
}

/// Prepared train and test designs, standardized with training moments.
pub struct PreparedPair<T: Scalar> {
    pub train: DesignMatrix<T>,
    pub test: DesignMatrix<T>,
}

fn raw_design<T: Scalar>(prep: &Preparation, pipeline: &mut Option<Pipeline>, ds: &Dataset<T>) -> Result<DesignMatrix<T>> {
    let mut dm = match pipeline {
        Some(p) => p.apply(ds)?,
        None => truth_design(ds)?,
    };
    if prep.log_terms {
        let before = dm.cols();
        dm = dm.with_log_terms()?;
        if dm.cols() == before {
            return Err(Error::Config(format!(
                "preparation `{}` asks for log terms but has no averaged surrogate columns",
                prep.label()
            )));
        }
    }
    if prep.covariates && ds.q() > 0 {
        dm = dm.hstack(&covariate_design(ds))?;
    }
    Ok(dm)
}

/// Builds the design for both samples; all fitted parameters (Box-Cox
/// lambdas, standardization) come from the training sample.
pub fn prepare_pair<T: Scalar>(prep: &Preparation, train: &Dataset<T>, test: &Dataset<T>) -> Result<PreparedPair<T>> {
    let mut pipeline = prep.pipeline();
    let train_raw = raw_design(prep, &mut pipeline, train)?;
    let test_raw = raw_design(prep, &mut pipeline, test)?;
    let train = standardize(&train_raw, None)?;
    let test = standardize(&test_raw, train.standardization.as_ref())?;
    Ok(PreparedPair { train, test })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ModelSpec {
    Ols,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
        #[serde(default = "default_activation")]
        activation: Activation,
        /// Its `seed` is replaced per cell.
        #[serde(default)]
        train: TrainConfig,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![32, 16]
}

fn default_activation() -> Activation {
    Activation::Relu
}

impl ModelSpec {
    pub fn mlp() -> Self {
        Self::Mlp {
            hidden: default_hidden(),
            activation: default_activation(),
            train: TrainConfig::default(),
        }
    }

    /// `ols`, or e.g. `mlp-32-16-relu`.
    pub fn label(&self) -> String {
        match self {
            Self::Ols => "ols".into(),
            Self::Mlp { hidden, activation, .. } => {
                let act = serde_json::to_value(activation).expect("enum").as_str().expect("string").to_string();
                let mut parts = vec!["mlp".to_string()];
                parts.extend(hidden.iter().map(|h| h.to_string()));
                parts.push(act);
                parts.join("-")
            }
        }
    }

    pub fn is_mlp(&self) -> bool {
        matches!(self, Self::Mlp { .. })
    }
}

/// Train and test MSE of one fitted model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fit {
    pub train_mse: f64,
    pub test_mse: f64,
}

/// Stable 64-bit tag for a label, used to key random streams by name.
fn label_tag(label: &str) -> u64 {
    // FNV-1a
    label
        .bytes()
        .fold(0xcbf2_9ce4_8422_2325u64, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Fits `model` on the prepared training design and scores both samples.
/// Network targets are standardized with training moments and mapped back.
pub fn fit_and_score<T: Scalar>(
    model: &ModelSpec,
    pair: &PreparedPair<T>,
    y_train: &[T],
    y_test: &[T],
    seed: RngState,
) -> Result<Fit> {
    let (p_train, p_test) = match model {
        ModelSpec::Ols => {
            let m = fit_ols(&pair.train, y_train)?;
            (predict_linear(&m, &pair.train)?, predict_linear(&m, &pair.test)?)
        }
        ModelSpec::Mlp {
            hidden,
            activation,
            train: cfg,
        } => {
            let n = T::of_usize(y_train.len());
            let mean = y_train.iter().copied().sum::<T>() / n;
            let var = y_train.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / (n - T::one());
            let sd = if var > T::zero() { var.sqrt() } else { T::one() };
            let z: Vec<T> = y_train.iter().map(|&v| (v - mean) / sd).collect();
            let arch = Architecture::regression(pair.train.cols(), hidden, *activation)?;
            let net = init_network(&arch, seed.substream(1))?;
            let cfg = TrainConfig {
                seed: seed.substream(2),
                ..cfg.clone()
            };
            let (net, _) = train(&net, &pair.train, &z, &cfg)?;
            let back = |p: Vec<T>| p.into_iter().map(|v| v * sd + mean).collect::<Vec<_>>();
            (back(predict_nn(&net, &pair.train)?), back(predict_nn(&net, &pair.test)?))
        }
    };
    let fit = Fit {
        train_mse: mse(&p_train, y_train)?.as_f64(),
        test_mse: mse(&p_test, y_test)?.as_f64(),
    };
    if !(fit.train_mse.is_finite() && fit.test_mse.is_finite()) {
        return Err(Error::Diverged { epoch: 0 });
    }
    Ok(fit)
}

/// One line of the results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub scenario: String,
    pub days: usize,
    pub n: usize,
    pub preparation: String,
    pub model: String,
    pub rep: usize,
    pub train_mse: Option<f64>,
    pub test_mse: Option<f64>,
    pub seed: u64,
    pub wall_ms: u64,
    pub failed: bool,
}

pub const RESULTS_HEADER: &str = "scenario,days,n,preparation,model,rep,train_mse,test_mse,seed,wall_ms,failed";

/// A fully resolved grid point: the scenario at one replicate count.
#[derive(Debug, Clone)]
pub struct Cell {
    pub scenario: String,
    pub spec: ScenarioSpec,
    pub test_n: usize,
}

/// Runs every preparation × model on one replication of `cell`. Training
/// and test samples are generated once, from independent streams of
/// `seed`. Any failure becomes a failed row rather than an error.
pub fn run_unit<T: Scalar>(
    cell: &Cell,
    preparations: &[Preparation],
    models: &[ModelSpec],
    rep: usize,
    seed: u64,
    record_timing: bool,
) -> Vec<ResultRow> {
    let unit = RngState::new(seed);
    let data = (|| -> Result<(Dataset<T>, Dataset<T>)> {
        let train = generate::<T>(&cell.spec, unit.substream(1))?;
        let mut test_spec = cell.spec.clone();
        test_spec.n = cell.test_n;
        let test = generate::<T>(&test_spec, unit.substream(2))?;
        Ok((train, test))
    })();
    let row = |prep: &Preparation, model: &ModelSpec, fit: Option<Fit>, ms: u64| ResultRow {
        scenario: cell.scenario.clone(),
        days: cell.spec.k,
        n: cell.spec.n,
        preparation: prep.label(),
        model: model.label(),
        rep,
        train_mse: fit.map(|f| f.train_mse),
        test_mse: fit.map(|f| f.test_mse),
        seed,
        wall_ms: if record_timing { ms } else { 0 },
        failed: fit.is_none(),
    };
    let mut rows = Vec::with_capacity(preparations.len() * models.len());
    let (train, test) = match data {
        Ok(d) => d,
        Err(_) => {
            for prep in preparations {
                for model in models {
                    rows.push(row(prep, model, None, 0));
                }
            }
            return rows;
        }
    };
    for prep in preparations {
        let started = Instant::now();
        let pair = prepare_pair(prep, &train, &test);
        let prep_ms = started.elapsed().as_millis() as u64;
        for model in models {
            let started = Instant::now();
            let stream = unit.derive(&[label_tag(&prep.label()), label_tag(&model.label())]);
            let fit = pair
                .as_ref()
                .ok()
                .and_then(|pair| fit_and_score(model, pair, &train.y, &test.y, stream).ok());
            rows.push(row(prep, model, fit, prep_ms + started.elapsed().as_millis() as u64));
        }
    }
    rows
}

/// Single preparation × model × replication.
pub fn run_cell<T: Scalar>(cell: &Cell, prep: &Preparation, model: &ModelSpec, rep: usize, seed: u64) -> ResultRow {
    run_unit::<T>(cell, std::slice::from_ref(prep), std::slice::from_ref(model), rep, seed, false)
        .pop()
        .expect("one row")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    F32,
    #[default]
    F64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    /// Scenario column value; defaults to the scenario's own label.
    #[serde(default)]
    pub name: Option<String>,
    pub scenario: ScenarioSource,
    /// Replicate counts to sweep; defaults depend on the scenario.
    #[serde(default)]
    pub days: Option<Vec<usize>>,
    /// Training sample size override.
    #[serde(default)]
    pub n: Option<usize>,
    /// Test sample size; defaults to the training size of each cell.
    #[serde(default)]
    pub test_n: Option<usize>,
    /// Fixed total observations `n × days`; sets `n = budget / days`.
    #[serde(default)]
    pub budget: Option<usize>,
    pub preparations: Vec<Preparation>,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub replications: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub aggregate_output: Option<PathBuf>,
    /// Write measured wall time; off by default so reruns are byte-identical.
    #[serde(default)]
    pub record_timing: bool,
    #[serde(default)]
    pub precision: Precision,
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text).map_err(|e| match e {
            Error::Json(j) => Error::Config(format!("{}: {j}", path.display())),
            other => other,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.preparations.is_empty() || self.models.is_empty() {
            return Err(Error::Config("need at least one preparation and one model".into()));
        }
        if self.replications == Some(0) {
            return Err(Error::Config("replications must be positive".into()));
        }
        if self.days().iter().any(|&d| d == 0) {
            return Err(Error::Config("days must be positive".into()));
        }
        if self.budget().is_some() && self.n.is_some() {
            return Err(Error::Config("set either `budget` or `n`, not both".into()));
        }
        if let Some(b) = self.budget() {
            if let Some(&d) = self.days().iter().find(|&&d| b % d != 0) {
                return Err(Error::IndivisibleBudget { budget: b, days: d });
            }
        }
        let mut labels: Vec<(String, String)> = Vec::new();
        for p in &self.preparations {
            for m in &self.models {
                let key = (p.label(), m.label());
                if labels.contains(&key) {
                    return Err(Error::Config(format!("duplicate cell {} × {}", key.0, key.1)));
                }
                labels.push(key);
            }
        }
        self.scenario.base()?.validate()
    }

    pub fn days(&self) -> Vec<usize> {
        self.days.clone().unwrap_or_else(|| self.scenario.default_days())
    }

    pub fn budget(&self) -> Option<usize> {
        self.budget.or_else(|| self.scenario.budget())
    }

    pub fn replications(&self) -> usize {
        self.replications.unwrap_or_else(|| self.scenario.default_replications())
    }

    pub fn base_seed(&self) -> Result<u64> {
        Ok(self.seed.unwrap_or(self.scenario.base()?.seed.seed))
    }

    pub fn scenario_label(&self) -> String {
        if let Some(n) = &self.name {
            return n.clone();
        }
        match (self.budget(), &self.scenario) {
            (Some(b), ScenarioSource::Preset(PresetRef::Sim2 { budget: None })) => format!("sim2-b{b}"),
            (Some(b), ScenarioSource::Custom(_)) => format!("custom-b{b}"),
            _ => self.scenario.label(),
        }
    }

    /// Resolved grid points, one per replicate count.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        let base = self.scenario.base()?;
        let budget = self.budget();
        self.days()
            .into_iter()
            .map(|days| {
                let mut spec = base.clone();
                spec.k = days;
                if let Some(b) = budget {
                    if b % days != 0 {
                        return Err(Error::IndivisibleBudget { budget: b, days });
                    }
                    spec.n = b / days;
                } else if let Some(n) = self.n {
                    spec.n = n;
                }
                spec.validate()?;
                Ok(Cell {
                    scenario: self.scenario_label(),
                    test_n: self.test_n.unwrap_or(spec.n),
                    spec,
                })
            })
            .collect()
    }

    /// Seed of one `(days, rep)` unit, also written to the results.
    pub fn unit_seed(&self, days: usize, rep: usize) -> Result<u64> {
        let stream = RngState::new(self.base_seed()?).derive(&[days as u64, rep as u64]);
        Ok(stream.rng().next_u64())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub scenario: String,
    pub days: usize,
    pub n: usize,
    pub preparation: String,
    pub model: String,
    pub reps: usize,
    pub failures: usize,
    pub train_mse_mean: Option<f64>,
    pub train_mse_sd: Option<f64>,
    pub train_mse_se: Option<f64>,
    pub test_mse_mean: Option<f64>,
    pub test_mse_sd: Option<f64>,
    pub test_mse_se: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

fn summary(values: &[f64]) -> (Option<f64>, Option<f64>, Option<f64>) {
    let m = values.len();
    if m == 0 {
        return (None, None, None);
    }
    let mean = values.iter().sum::<f64>() / m as f64;
    if m == 1 {
        return (Some(mean), None, None);
    }
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (m - 1) as f64).sqrt();
    (Some(mean), Some(sd), Some(sd / (m as f64).sqrt()))
}

impl ResultTable {
    pub fn failures(&self) -> usize {
        self.rows.iter().filter(|r| r.failed).count()
    }

    /// `PartialFailure` when any row failed.
    pub fn check(&self) -> Result<()> {
        match self.failures() {
            0 => Ok(()),
            failed => Err(Error::PartialFailure {
                failed,
                total: self.rows.len(),
            }),
        }
    }

    /// Per-cell mean, sd and standard error over successful replications,
    /// in order of first appearance. Failed rows only count as failures.
    pub fn aggregate(&self) -> Vec<AggregateRow> {
        let mut order: Vec<(String, usize, usize, String, String)> = Vec::new();
        let mut groups: BTreeMap<(String, usize, usize, String, String), Vec<&ResultRow>> = BTreeMap::new();
        for r in &self.rows {
            let key = (r.scenario.clone(), r.days, r.n, r.preparation.clone(), r.model.clone());
            let entry = groups.entry(key.clone()).or_default();
            if entry.is_empty() {
                order.push(key);
            }
            entry.push(r);
        }
        order
            .into_iter()
            .map(|key| {
                let rows = &groups[&key];
                let ok: Vec<&&ResultRow> = rows.iter().filter(|r| !r.failed).collect();
                let train: Vec<f64> = ok.iter().filter_map(|r| r.train_mse).collect();
                let test: Vec<f64> = ok.iter().filter_map(|r| r.test_mse).collect();
                let (trm, trs, tre) = summary(&train);
                let (tem, tes, tee) = summary(&test);
                AggregateRow {
                    scenario: key.0,
                    days: key.1,
                    n: key.2,
                    preparation: key.3,
                    model: key.4,
                    reps: rows.len(),
                    failures: rows.len() - ok.len(),
                    train_mse_mean: trm,
                    train_mse_sd: trs,
                    train_mse_se: tre,
                    test_mse_mean: tem,
                    test_mse_sd: tes,
                    test_mse_se: tee,
                }
            })
            .collect()
    }

    pub fn write_rows<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.rows)
    }

    pub fn write_aggregates<W: Write>(&self, w: W) -> Result<()> {
        write_csv(w, &self.aggregate())
    }

    /// Writes the rows to `path` and the aggregates to `aggregate_path`.
    pub fn save(&self, path: &Path, aggregate_path: &Path) -> Result<()> {
        for (p, rows) in [(path, true), (aggregate_path, false)] {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
            }
            let f = File::create(p).map_err(|e| Error::io(p, e))?;
            if rows {
                self.write_rows(f)?;
            } else {
                self.write_aggregates(f)?;
            }
        }
        Ok(())
    }

    pub fn read_rows<R: Read>(r: R) -> Result<Self> {
        let mut reader = csv::Reader::from_reader(r);
        let header = reader
            .headers()
            .map_err(|e| Error::MalformedResults(e.to_string()))?
            .iter()
            .collect::<Vec<_>>()
            .join(",");
        if header != RESULTS_HEADER {
            return Err(Error::MalformedResults(format!("unexpected header `{header}`")));
        }
        let rows = reader
            .deserialize()
            .enumerate()
            .map(|(i, r)| r.map_err(|e| Error::MalformedResults(format!("row {}: {e}", i + 1))))
            .collect::<Result<Vec<ResultRow>>>()?;
        Ok(Self { rows })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_rows(f).map_err(|e| match e {
            Error::MalformedResults(m) => Error::MalformedResults(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

fn write_csv<W: Write, S: Serialize>(w: W, rows: &[S]) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    for r in rows {
        out.serialize(r)?;
    }
    out.flush().map_err(|e| Error::io("<csv>", e))?;
    Ok(())
}

/// Default aggregate path: `results.csv` → `results_aggregate.csv`.
pub fn aggregate_path_for(results: &Path) -> PathBuf {
    let stem = results.file_stem().and_then(|s| s.to_str()).unwrap_or("results");
    results.with_file_name(format!("{stem}_aggregate.csv"))
}

/// Every cell × replication of the grid. Units run in parallel and the rows
/// come back in grid order, so the table does not depend on scheduling.
pub fn run_experiment(config: &ExperimentConfig) -> Result<ResultTable> {
    config.validate()?;
    let cells = config.cells()?;
    let reps = config.replications();
    let mut units = Vec::with_capacity(cells.len() * reps);
    for (c, cell) in cells.iter().enumerate() {
        for rep in 0..reps {
            units.push((c, rep, config.unit_seed(cell.spec.k, rep)?));
        }
    }
    let rows: Vec<Vec<ResultRow>> = units
        .par_iter()
        .map(|&(c, rep, seed)| match config.precision {
            Precision::F64 => run_unit::<f64>(&cells[c], &config.preparations, &config.models, rep, seed, config.record_timing),
            Precision::F32 => run_unit::<f32>(&cells[c], &config.preparations, &config.models, rep, seed, config.record_timing),
        })
        .collect();
    Ok(ResultTable {
        rows: rows.into_iter().flatten().collect(),
    })
}

/// Fixed total observations: `n = budget / days` for each replicate count.
/// Checks divisibility for every entry before running anything.
pub fn run_budget_tradeoff(budget: usize, days: &[usize], config: &ExperimentConfig) -> Result<ResultTable> {
    if let Some(&d) = days.iter().find(|&&d| d == 0 || budget % d != 0) {
        return Err(Error::IndivisibleBudget { budget, days: d });
    }
    let mut cfg = config.clone();
    cfg.budget = Some(budget);
    cfg.n = None;
    cfg.days = Some(days.to_vec());
    run_experiment(&cfg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mse_values() {
        assert_eq!(mse(&[1.0, 3.0], &[1.0, 3.0]).unwrap(), 0.0);
        assert_eq!(mse(&[1.0, 3.0], &[0.0, 0.0]).unwrap(), 5.0);
        assert!(matches!(mse(&[1.0], &[0.0, 0.0]), Err(Error::LengthMismatch { .. })));
        assert!((overfit_gap(129.07, 142.89) - 13.82).abs() < 1e-9);
        assert_eq!(overfit_gap(2.0, 2.0), 0.0);
    }

    #[test]
    fn config_json_shapes() {
        let cfg = ExperimentConfig::from_json(
            r#"{
                "scenario": {"preset": "sim1"},
                "n": 500,
                "preparations": [{"kind": "average"}, {"kind": "transformed_average", "lambdas": "fit"}],
                "models": [{"type": "ols"}, {"type": "mlp", "hidden": [8], "train": {"max_epochs": 5}}],
                "replications": 2,
                "seed": 9
            }"#,
        )
        .unwrap();
        assert_eq!(cfg.days(), vec![2, 4, 6, 8, 10]);
        assert_eq!(cfg.models[1].label(), "mlp-8-relu");
        assert_eq!(cfg.preparations[1].label(), "transformed_average");
        let cells = cfg.cells().unwrap();
        assert_eq!(cells.len(), 5);
        assert!(cells.iter().all(|c| c.spec.n == 500 && c.test_n == 500));
        assert_eq!(cells[3].spec.k, 8);
    }

    #[test]
    fn budget_cells() {
        let cfg = ExperimentConfig::from_json(
            r#"{"scenario": {"preset": "sim2", "budget": 60000},
                "preparations": [{"kind": "average"}], "models": [{"type": "ols"}]}"#,
        )
        .unwrap();
        let ns: Vec<usize> = cfg.cells().unwrap().iter().map(|c| c.spec.n).collect();
        assert_eq!(ns, vec![30000, 15000, 10000, 7500, 6000]);
        assert_eq!(cfg.scenario_label(), "sim2-b60000");
        let bad = r#"{"scenario": {"preset": "sim2", "budget": 1000}, "days": [3],
                      "preparations": [{"kind": "average"}], "models": [{"type": "ols"}]}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::IndivisibleBudget { budget: 1000, days: 3 })));
    }

    #[test]
    fn unit_seeds_depend_on_everything() {
        let cfg = |seed: u64| {
            ExperimentConfig::from_json(&format!(
                r#"{{"scenario": {{"preset": "sim1"}}, "preparations": [{{"kind": "average"}}],
                    "models": [{{"type": "ols"}}], "seed": {seed}}}"#
            ))
            .unwrap()
        };
        let (a, b) = (cfg(1), cfg(2));
        let s = a.unit_seed(2, 0).unwrap();
        assert_ne!(s, b.unit_seed(2, 0).unwrap());
        assert_ne!(s, a.unit_seed(4, 0).unwrap());
        assert_ne!(s, a.unit_seed(2, 1).unwrap());
        assert_eq!(s, cfg(1).unit_seed(2, 0).unwrap());
    }

    #[test]
    fn rejects_empty_grids() {
        let bad = r#"{"scenario": {"preset": "sim1"}, "preparations": [], "models": [{"type": "ols"}]}"#;
        assert!(matches!(ExperimentConfig::from_json(bad), Err(Error::Config(_))));
    }

    #[test]
    fn aggregates_skip_failures() {
        let row = |rep, test: Option<f64>| ResultRow {
            scenario: "s".into(),
            days: 2,
            n: 10,
            preparation: "average".into(),
            model: "ols".into(),
            rep,
            train_mse: test.map(|t| t - 1.0),
            test_mse: test,
            seed: 1,
            wall_ms: 0,
            failed: test.is_none(),
        };
        let t = ResultTable {
            rows: vec![row(0, Some(2.0)), row(1, None), row(2, Some(4.0))],
        };
        let agg = t.aggregate();
        assert_eq!(agg.len(), 1);
        assert_eq!(agg[0].failures, 1);
        assert_eq!(agg[0].reps, 3);
        assert_eq!(agg[0].test_mse_mean, Some(3.0));
        assert!((agg[0].test_mse_sd.unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!(matches!(t.check(), Err(Error::PartialFailure { failed: 1, total: 3 })));
    }

    #[test]
    fn results_csv_round_trip() {
        let t = ResultTable {
            rows: vec![ResultRow {
                scenario: "sim1".into(),
                days: 2,
                n: 3000,
                preparation: "average".into(),
                model: "ols".into(),
                rep: 0,
                train_mse: Some(1.25),
                test_mse: None,
                seed: 42,
                wall_ms: 0,
                failed: true,
            }],
        };
        let mut buf = Vec::new();
        t.write_rows(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with(&format!("{RESULTS_HEADER}\n")));
        assert_eq!(ResultTable::read_rows(&buf[..]).unwrap(), t);
        assert!(matches!(
            ResultTable::read_rows("a,b\n1,2\n".as_bytes()),
            Err(Error::MalformedResults(_))
        ));
    }
}
