//! Replicate preparation: averaging, concatenation and Box-Cox averaging,
//! plus standardisation, day-2 imputation and stratified splitting.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::datagen::{box_cox, Dataset};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::randmath::RngState;
use crate::scalar::Scalar;

/// Search interval for the Box-Cox parameter.
pub const LAMBDA_BOUNDS: (f64, f64) = (-3.0, 3.0);
/// Golden-section stopping width.
pub const LAMBDA_TOLERANCE: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineKind {
    Average,
    Concatenate,
    TransformedAverage,
}

impl PipelineKind {
    pub fn label(self) -> &'static str {
        match self {
            Self::Average => "average",
            Self::Concatenate => "concatenate",
            Self::TransformedAverage => "transformed_average",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FitTag {
    Fit,
}

/// Box-Cox parameters: fixed per component, or fitted on training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Lambdas {
    Fixed(Vec<f64>),
    Fit(FitTag),
}

/// A replicate-preparation recipe. Serialises as
/// `{"kind": "transformed_average", "lambdas": "fit"}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipeline {
    pub kind: PipelineKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambdas: Option<Lambdas>,
}

impl Pipeline {
    pub fn new(kind: PipelineKind) -> Self {
        let lambdas = match kind {
            PipelineKind::TransformedAverage => Some(Lambdas::Fit(FitTag::Fit)),
            _ => None,
        };
        Self { kind, lambdas }
    }

    pub fn with_fixed_lambdas(kind: PipelineKind, lambdas: Vec<f64>) -> Self {
        Self {
            kind,
            lambdas: Some(Lambdas::Fixed(lambdas)),
        }
    }

    pub fn fixed_lambdas(&self) -> Option<&[f64]> {
        match &self.lambdas {
            Some(Lambdas::Fixed(v)) => Some(v),
            _ => None,
        }
    }

    /// Runs the recipe. A transformed average with `"fit"` lambdas fits them
    /// on `ds` and freezes them into `self`, so a later call on test data
    /// reuses the training values.
    pub fn apply<T: Scalar>(&mut self, ds: &Dataset<T>) -> Result<DesignMatrix<T>> {
        match self.kind {
            PipelineKind::Average => Ok(average_replicates(ds)),
            PipelineKind::Concatenate => concatenate_replicates(ds),
            PipelineKind::TransformedAverage => transformed_average(ds, self),
        }
    }
}

/// Which day a surrogate column summarises.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DaySlot {
    Day(usize),
    Avg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum ColumnSource {
    Surrogate {
        component: usize,
        pipeline: PipelineKind,
        day: DaySlot,
    },
    LogSurrogate {
        component: usize,
    },
    Truth {
        component: usize,
    },
    Covariate,
    Dummy {
        factor: String,
        level: String,
    },
    Indicator,
    /// Product of the named main-effect columns.
    Interaction {
        parents: Vec<String>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnMeta {
    pub name: String,
    #[serde(flatten)]
    pub source: ColumnSource,
}

/// A selectable unit: a main effect (possibly several dummy columns) or an
/// interaction, removed together during selection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Term {
    pub name: String,
    pub columns: Vec<usize>,
    /// Interaction order; 1 for main effects.
    pub order: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization<T> {
    pub means: Vec<T>,
    pub sds: Vec<T>,
}

/// Prepared predictors with per-column provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix<T: Scalar> {
    pub values: Matrix<T>,
    pub columns: Vec<ColumnMeta>,
    pub terms: Vec<Term>,
    pub standardization: Option<Standardization<T>>,
    /// Per-row stratum label used for stratified CV folds.
    pub strata: Option<Vec<String>>,
}

impl<T: Scalar> DesignMatrix<T> {
    /// One term per column.
    pub fn new(values: Matrix<T>, columns: Vec<ColumnMeta>) -> Self {
        assert_eq!(values.cols(), columns.len(), "column metadata width");
        let terms = columns
            .iter()
            .enumerate()
            .map(|(j, c)| Term {
                name: c.name.clone(),
                columns: vec![j],
                order: 1,
            })
            .collect();
        Self {
            values,
            columns,
            terms,
            standardization: None,
            strata: None,
        }
    }

    pub fn empty(rows: usize) -> Self {
        Self::new(Matrix::zeros(rows, 0), Vec::new())
    }

    pub fn rows(&self) -> usize {
        self.values.rows()
    }

    pub fn cols(&self) -> usize {
        self.values.cols()
    }

    pub fn column_names(&self) -> Vec<&str> {
        self.columns.iter().map(|c| c.name.as_str()).collect()
    }

    /// Side-by-side join; term indices of `rhs` are shifted.
    pub fn hstack(&self, rhs: &Self) -> Result<Self> {
        let offset = self.cols();
        let values = self.values.hstack(&rhs.values)?;
        let mut columns = self.columns.clone();
        columns.extend(rhs.columns.iter().cloned());
        let mut terms = self.terms.clone();
        terms.extend(rhs.terms.iter().map(|t| Term {
            name: t.name.clone(),
            columns: t.columns.iter().map(|c| c + offset).collect(),
            order: t.order,
        }));
        let standardization = match (&self.standardization, &rhs.standardization) {
            (Some(a), Some(b)) => Some(Standardization {
                means: a.means.iter().chain(&b.means).copied().collect(),
                sds: a.sds.iter().chain(&b.sds).copied().collect(),
            }),
            _ => None,
        };
        Ok(Self {
            values,
            columns,
            terms,
            standardization,
            strata: self.strata.clone().or_else(|| rhs.strata.clone()),
        })
    }

    pub fn select_rows(&self, idx: &[usize]) -> Self {
        Self {
            values: self.values.select_rows(idx),
            columns: self.columns.clone(),
            terms: self.terms.clone(),
            standardization: self.standardization.clone(),
            strata: self
                .strata
                .as_ref()
                .map(|s| idx.iter().map(|&i| s[i].clone()).collect()),
        }
    }

    /// Columns belonging to the given terms, ascending.
    pub fn term_columns(&self, terms: &[usize]) -> Vec<usize> {
        let mut cols: Vec<usize> = terms
            .iter()
            .flat_map(|&t| self.terms[t].columns.iter().copied())
            .collect();
        cols.sort_unstable();
        cols.dedup();
        cols
    }

    /// Same rows restricted to a subset of terms, renumbered.
    pub fn select_terms(&self, terms: &[usize]) -> Self {
        let cols = self.term_columns(terms);
        let remap: BTreeMap<usize, usize> = cols.iter().enumerate().map(|(n, &o)| (o, n)).collect();
        Self {
            values: self.values.select_columns(&cols),
            columns: cols.iter().map(|&c| self.columns[c].clone()).collect(),
            terms: terms
                .iter()
                .map(|&t| Term {
                    name: self.terms[t].name.clone(),
                    columns: self.terms[t].columns.iter().map(|c| remap[c]).collect(),
                    order: self.terms[t].order,
                })
                .collect(),
            standardization: self.standardization.as_ref().map(|s| Standardization {
                means: cols.iter().map(|&c| s.means[c]).collect(),
                sds: cols.iter().map(|&c| s.sds[c]).collect(),
            }),
            strata: self.strata.clone(),
        }
    }

    pub fn with_strata(mut self, strata: Vec<String>) -> Self {
        self.strata = Some(strata);
        self
    }

    /// Adds a `ln` column for every averaged surrogate column.
    pub fn with_log_terms(&self) -> Result<Self> {
        let avg: Vec<(usize, usize)> = self
            .columns
            .iter()
            .enumerate()
            .filter_map(|(j, c)| match c.source {
                ColumnSource::Surrogate {
                    component,
                    day: DaySlot::Avg,
                    ..
                } => Some((j, component)),
                _ => None,
            })
            .collect();
        let n = self.rows();
        let mut values = Matrix::zeros(n, avg.len());
        let mut columns = Vec::with_capacity(avg.len());
        for (c, &(j, component)) in avg.iter().enumerate() {
            for i in 0..n {
                let x = self.values[(i, j)];
                if !(x > T::zero()) {
                    return Err(Error::Domain(format!(
                        "log term needs positive `{}`, row {i} has {x}",
                        self.columns[j].name
                    )));
                }
                values[(i, c)] = x.ln();
            }
            columns.push(ColumnMeta {
                name: format!("log_{}", self.columns[j].name),
                source: ColumnSource::LogSurrogate { component },
            });
        }
        self.hstack(&DesignMatrix::new(values, columns))
    }
}

fn surrogate_meta(ds_names: &[String], l: usize, pipeline: PipelineKind, day: DaySlot) -> ColumnMeta {
    let name = match day {
        DaySlot::Avg => match pipeline {
            PipelineKind::TransformedAverage => format!("{}_bcavg", ds_names[l]),
            _ => format!("{}_avg", ds_names[l]),
        },
        DaySlot::Day(j) => format!("{}_d{}", ds_names[l], j + 1),
    };
    ColumnMeta {
        name,
        source: ColumnSource::Surrogate {
            component: l,
            pipeline,
            day,
        },
    }
}

/// One column per component: mean of its present replicates.
pub fn average_replicates<T: Scalar>(ds: &Dataset<T>) -> DesignMatrix<T> {
    let (n, p, k) = (ds.n(), ds.p(), ds.k());
    let mut values = Matrix::zeros(n, p);
    for i in 0..n {
        let days = (0..k).filter(|&j| ds.is_present(i, j)).count();
        let inv = T::one() / T::of_usize(days);
        for l in 0..p {
            let s: T = (0..k)
                .filter(|&j| ds.is_present(i, j))
                .map(|j| ds.x(i, l, j))
                .sum();
            values[(i, l)] = s * inv;
        }
    }
    let columns = (0..p)
        .map(|l| surrogate_meta(&ds.components, l, PipelineKind::Average, DaySlot::Avg))
        .collect();
    DesignMatrix::new(values, columns)
}

/// `p·k` columns ordered component-major: `(1,1), (1,2), …, (2,1), …`.
pub fn concatenate_replicates<T: Scalar>(ds: &Dataset<T>) -> Result<DesignMatrix<T>> {
    let (n, p, k) = (ds.n(), ds.p(), ds.k());
    let mut values = Matrix::zeros(n, p * k);
    for i in 0..n {
        for j in 0..k {
            if !ds.is_present(i, j) {
                return Err(Error::MissingNotImputed { row: i, day: j });
            }
        }
        for l in 0..p {
            for j in 0..k {
                values[(i, l * k + j)] = ds.x(i, l, j);
            }
        }
    }
    let columns = (0..p)
        .flat_map(|l| (0..k).map(move |j| (l, j)))
        .map(|(l, j)| surrogate_meta(&ds.components, l, PipelineKind::Concatenate, DaySlot::Day(j)))
        .collect();
    Ok(DesignMatrix::new(values, columns))
}

/// Profile log-likelihood of a Box-Cox-normal model, up to a constant.
///
/// `log_x` must already be centred on the log geometric mean, which makes
/// the Jacobian term vanish without moving the maximiser.
fn profile_log_likelihood<T: Scalar>(log_x: &[T], lambda: T) -> T {
    let n = T::of_usize(log_x.len());
    let transform = |lx: T| {
        if lambda == T::zero() {
            lx
        } else {
            (lambda * lx).exp_m1() / lambda
        }
    };
    let mean = log_x.iter().map(|&lx| transform(lx)).sum::<T>() / n;
    let var = log_x
        .iter()
        .map(|&lx| {
            let d = transform(lx) - mean;
            d * d
        })
        .sum::<T>()
        / n;
    -T::of(0.5) * n * var.ln()
}

/// Box-Cox profile log-likelihood of raw positive data (Jacobian included).
pub fn box_cox_log_likelihood<T: Scalar>(column: &[T], lambda: T) -> Result<T> {
    let logs = log_column(column)?;
    let n = T::of_usize(column.len());
    let mean_log = logs.iter().copied().sum::<T>() / n;
    let centred: Vec<T> = logs.iter().map(|&l| l - mean_log).collect();
    // dividing by the geometric mean scales σ² by gm^{-2λ}; the λ terms cancel
    Ok(profile_log_likelihood(&centred, lambda) - n * mean_log)
}

fn log_column<T: Scalar>(column: &[T]) -> Result<Vec<T>> {
    column
        .iter()
        .enumerate()
        .map(|(i, &x)| {
            if x > T::zero() {
                Ok(x.ln())
            } else {
                Err(Error::Domain(format!("box-cox fit needs positive values; row {i} is {x}")))
            }
        })
        .collect()
}

/// Maximum-likelihood Box-Cox `λ` on `[-3, 3]` by golden-section search.
pub fn fit_box_cox_lambda<T: Scalar>(column: &[T]) -> Result<T> {
    let logs = log_column(column)?;
    let mut distinct: Vec<T> = column.to_vec();
    distinct.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    distinct.dedup();
    if distinct.len() < 2 {
        return Err(Error::Degenerate("box-cox fit on a constant column".into()));
    }
    if distinct.len() < 10 {
        return Err(Error::Degenerate(format!(
            "box-cox fit needs at least 10 distinct values, got {}",
            distinct.len()
        )));
    }
    let n = T::of_usize(logs.len());
    let mean_log = logs.iter().copied().sum::<T>() / n;
    let centred: Vec<T> = logs.iter().map(|&l| l - mean_log).collect();
    let objective = |l: T| -profile_log_likelihood(&centred, l);

    let ratio = T::of((5f64.sqrt() - 1.0) / 2.0);
    let (mut a, mut b) = (T::of(LAMBDA_BOUNDS.0), T::of(LAMBDA_BOUNDS.1));
    let mut c = b - ratio * (b - a);
    let mut d = a + ratio * (b - a);
    let (mut fc, mut fd) = (objective(c), objective(d));
    while b - a > T::of(LAMBDA_TOLERANCE) {
        if fc < fd {
            b = d;
            d = c;
            fd = fc;
            c = b - ratio * (b - a);
            fc = objective(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + ratio * (b - a);
            fd = objective(d);
        }
    }
    Ok((a + b) / T::of(2.0))
}

/// Box-Cox each present replicate with its component's `λ`, then average.
///
/// `"fit"` lambdas are estimated from the pooled observed (non-imputed)
/// replicates of `ds` and written back into `pipeline`.
pub fn transformed_average<T: Scalar>(ds: &Dataset<T>, pipeline: &mut Pipeline) -> Result<DesignMatrix<T>> {
    let (n, p, k) = (ds.n(), ds.p(), ds.k());
    let lambdas: Vec<f64> = match &pipeline.lambdas {
        Some(Lambdas::Fixed(v)) => {
            if v.len() != p {
                return Err(Error::Config(format!(
                    "pipeline has {} lambdas for {p} components",
                    v.len()
                )));
            }
            v.clone()
        }
        Some(Lambdas::Fit(_)) | None => {
            let fitted = (0..p)
                .map(|l| {
                    let pooled: Vec<T> = (0..n)
                        .flat_map(|i| (0..k).map(move |j| (i, j)))
                        .filter(|&(i, j)| ds.is_observed(i, j))
                        .map(|(i, j)| ds.x(i, l, j))
                        .collect();
                    fit_box_cox_lambda(&pooled).map(|v| v.as_f64())
                })
                .collect::<Result<Vec<_>>>()?;
            pipeline.lambdas = Some(Lambdas::Fixed(fitted.clone()));
            fitted
        }
    };
    let mut values = Matrix::zeros(n, p);
    for i in 0..n {
        let days: Vec<usize> = (0..k).filter(|&j| ds.is_present(i, j)).collect();
        let inv = T::one() / T::of_usize(days.len());
        for l in 0..p {
            let mut s = T::zero();
            for &j in &days {
                s += box_cox(ds.x(i, l, j), T::of(lambdas[l]))?;
            }
            values[(i, l)] = s * inv;
        }
    }
    let columns = (0..p)
        .map(|l| surrogate_meta(&ds.components, l, PipelineKind::TransformedAverage, DaySlot::Avg))
        .collect();
    Ok(DesignMatrix::new(values, columns))
}

/// Centres and scales every column by its (sample, `n - 1`) standard
/// deviation. Parameters are fitted on `dm` unless supplied; constant
/// columns get `sd = 1`.
pub fn standardize<T: Scalar>(dm: &DesignMatrix<T>, params: Option<&Standardization<T>>) -> Result<DesignMatrix<T>> {
    let (n, d) = (dm.rows(), dm.cols());
    let params = match params {
        Some(p) => {
            if p.means.len() != d || p.sds.len() != d {
                return Err(Error::WidthMismatch {
                    expected: d,
                    actual: p.means.len(),
                });
            }
            p.clone()
        }
        None => {
            if n < 2 {
                return Err(Error::Degenerate("standardization needs at least 2 rows".into()));
            }
            let mut means = Vec::with_capacity(d);
            let mut sds = Vec::with_capacity(d);
            for j in 0..d {
                let mean = (0..n).map(|i| dm.values[(i, j)]).sum::<T>() / T::of_usize(n);
                let ss = (0..n)
                    .map(|i| {
                        let e = dm.values[(i, j)] - mean;
                        e * e
                    })
                    .sum::<T>();
                let sd = (ss / T::of_usize(n - 1)).sqrt();
                means.push(mean);
                sds.push(if sd > T::zero() { sd } else { T::one() });
            }
            Standardization { means, sds }
        }
    };
    let mut values = dm.values.clone();
    for i in 0..n {
        for (j, v) in values.row_mut(i).iter_mut().enumerate() {
            *v = (*v - params.means[j]) / params.sds[j];
        }
    }
    Ok(DesignMatrix {
        values,
        columns: dm.columns.clone(),
        terms: dm.terms.clone(),
        standardization: Some(params),
        strata: dm.strata.clone(),
    })
}

/// Fills an absent second day with the first day's values and marks it
/// imputed. Only meaningful for two-day data.
pub fn impute_missing_second_day<T: Scalar>(ds: &Dataset<T>) -> Result<Dataset<T>> {
    if ds.k() != 2 {
        return Err(Error::Config(format!("day-2 imputation needs k = 2, got {}", ds.k())));
    }
    let mut out = ds.clone();
    for i in 0..ds.n() {
        if !ds.is_present(i, 1) {
            for l in 0..ds.p() {
                out.set_x(i, l, 1, ds.x(i, l, 0));
            }
            out.present[i * 2 + 1] = true;
            out.imputed[i * 2 + 1] = true;
        }
    }
    Ok(out)
}

/// 0/1 column: did the individual genuinely report a second day.
pub fn had_second_day<T: Scalar>(ds: &Dataset<T>) -> DesignMatrix<T> {
    let values = Matrix::from_fn(ds.n(), 1, |i, _| {
        if ds.k() > 1 && ds.is_observed(i, 1) {
            T::one()
        } else {
            T::zero()
        }
    });
    DesignMatrix::new(
        values,
        vec![ColumnMeta {
            name: "had_second_day".into(),
            source: ColumnSource::Indicator,
        }],
    )
}

/// The usual-intake columns, when the dataset carries them.
pub fn truth_design<T: Scalar>(ds: &Dataset<T>) -> Result<DesignMatrix<T>> {
    let truth = ds
        .x_true
        .as_ref()
        .ok_or_else(|| Error::Config("dataset has no usual-intake columns".into()))?;
    let columns = (0..ds.p())
        .map(|l| ColumnMeta {
            name: format!("{}_true", ds.components[l]),
            source: ColumnSource::Truth { component: l },
        })
        .collect();
    Ok(DesignMatrix::new(truth.clone(), columns))
}

/// Continuous error-free covariates as columns.
pub fn covariate_design<T: Scalar>(ds: &Dataset<T>) -> DesignMatrix<T> {
    let columns = ds
        .z_names
        .iter()
        .map(|name| ColumnMeta {
            name: name.clone(),
            source: ColumnSource::Covariate,
        })
        .collect();
    DesignMatrix::new(ds.z.clone(), columns)
}

/// Splits by the observed-day pattern so every stratum keeps the same test
/// proportion. Returns `(train, test)` with rows in original order.
pub fn stratified_split<T: Scalar>(
    ds: &Dataset<T>,
    test_fraction: f64,
    rng: RngState,
) -> Result<(Dataset<T>, Dataset<T>)> {
    let (train, test) = stratified_indices(ds, test_fraction, rng)?;
    Ok((ds.select_rows(&train), ds.select_rows(&test)))
}

/// Index form of [`stratified_split`].
pub fn stratified_indices<T: Scalar>(
    ds: &Dataset<T>,
    test_fraction: f64,
    rng: RngState,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::Config(format!("test fraction must lie in (0, 1), got {test_fraction}")));
    }
    let mut strata: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for i in 0..ds.n() {
        strata.entry(ds.presence_pattern(i)).or_default().push(i);
    }
    let mut rng = rng.rng();
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (label, mut rows) in strata {
        if rows.len() < 2 {
            return Err(Error::StratumTooSmall {
                stratum: label,
                size: rows.len(),
            });
        }
        rows.shuffle(&mut rng);
        let take = (test_fraction * rows.len() as f64).round() as usize;
        test.extend_from_slice(&rows[..take]);
        train.extend_from_slice(&rows[take..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((train, test))
}
