//! Least squares with an intercept, interaction expansion, k-fold CV and
//! backward term selection.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashMap;
use std::hash::{Hash, Hasher};
use std::io::Write;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{HouseholderQr, Matrix};
use crate::prepare::{ColumnMeta, ColumnSource, DesignMatrix, Term};
use crate::randmath::RngState;
use crate::scalar::Scalar;

mod gram;
use gram::GramCv;

pub const DEFAULT_FOLDS: usize = 10;
pub const DEFAULT_PARSIMONY_TOLERANCE: f64 = 0.01;

/// Fitted `ŷ = b₀ + Σ bⱼ xⱼ`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct LinearModel<T: Scalar> {
    /// Intercept first, then one per design column.
    pub coefficients: Vec<T>,
    pub column_meta: Vec<ColumnMeta>,
    #[serde(default)]
    pub term_groups: Vec<Term>,
}

impl<T: Scalar> LinearModel<T> {
    pub fn intercept(&self) -> T {
        self.coefficients[0]
    }

    pub fn slopes(&self) -> &[T] {
        &self.coefficients[1..]
    }

    pub fn width(&self) -> usize {
        self.coefficients.len() - 1
    }
}

fn with_intercept<T: Scalar>(x: &Matrix<T>) -> Matrix<T> {
    let (n, d) = (x.rows(), x.cols());
    let mut data = Vec::with_capacity(n * (d + 1));
    for i in 0..n {
        data.push(T::one());
        data.extend_from_slice(x.row(i));
    }
    Matrix::from_vec(n, d + 1, data)
}

/// Ordinary least squares on `[1, X]` by Householder QR.
pub fn fit_ols<T: Scalar>(dm: &DesignMatrix<T>, y: &[T]) -> Result<LinearModel<T>> {
    let coefficients = ols_coefficients(&dm.values, y)?;
    Ok(LinearModel {
        coefficients,
        column_meta: dm.columns.clone(),
        term_groups: dm.terms.clone(),
    })
}

fn ols_coefficients<T: Scalar>(x: &Matrix<T>, y: &[T]) -> Result<Vec<T>> {
    let (n, d) = (x.rows(), x.cols());
    if y.len() != n {
        return Err(Error::LengthMismatch { left: n, right: y.len() });
    }
    if n <= d + 1 && !(d == 0 && n >= 1) {
        return Err(Error::Degenerate(format!("OLS needs more than {} rows, got {n}", d + 1)));
    }
    let qr = HouseholderQr::new(&with_intercept(x));
    qr.solve_least_squares(y).map_err(|e| match e {
        Error::RankDeficient { columns } => Error::RankDeficient {
            // report design indices; intercept is not a design column
            columns: columns.into_iter().filter(|&c| c > 0).map(|c| c - 1).collect(),
        },
        other => other,
    })
}

/// `intercept + X · slopes`.
pub fn predict_linear<T: Scalar>(m: &LinearModel<T>, dm: &DesignMatrix<T>) -> Result<Vec<T>> {
    predict_matrix(&m.coefficients, &dm.values)
}

fn predict_matrix<T: Scalar>(coefficients: &[T], x: &Matrix<T>) -> Result<Vec<T>> {
    if x.cols() + 1 != coefficients.len() {
        return Err(Error::WidthMismatch {
            expected: coefficients.len() - 1,
            actual: x.cols(),
        });
    }
    Ok((0..x.rows())
        .map(|i| {
            coefficients[0]
                + x.row(i)
                    .iter()
                    .zip(&coefficients[1..])
                    .map(|(&a, &b)| a * b)
                    .sum::<T>()
        })
        .collect())
}

fn column_key<T: Scalar>(v: &[T]) -> u64 {
    let mut h = DefaultHasher::new();
    for x in v {
        x.as_f64().to_bits().hash(&mut h);
    }
    h.finish()
}

/// Adds every product of 2 (and, for `max_order = 3`, 3) distinct
/// main-effect terms. Product columns that are all zero, constant, or exact
/// copies of an earlier column are not identifiable and are dropped; an
/// interaction left with no columns is dropped entirely.
pub fn expand_interactions<T: Scalar>(dm: &DesignMatrix<T>, max_order: usize) -> Result<DesignMatrix<T>> {
    if !(1..=3).contains(&max_order) {
        return Err(Error::Config(format!("interaction order must be 1..=3, got {max_order}")));
    }
    let n = dm.rows();
    let mains: Vec<usize> = (0..dm.terms.len()).filter(|&t| dm.terms[t].order == 1).collect();
    let mut combos: Vec<Vec<usize>> = Vec::new();
    if max_order >= 2 {
        for (a, &ta) in mains.iter().enumerate() {
            for &tb in &mains[a + 1..] {
                combos.push(vec![ta, tb]);
            }
        }
    }
    if max_order >= 3 {
        for (a, &ta) in mains.iter().enumerate() {
            for (b, &tb) in mains.iter().enumerate().skip(a + 1) {
                for &tc in &mains[b + 1..] {
                    combos.push(vec![ta, tb, tc]);
                }
            }
        }
    }

    let mut out = dm.clone();
    let mut seen: HashMap<u64, Vec<usize>> = HashMap::new();
    for j in 0..dm.cols() {
        seen.entry(column_key(&dm.values.column(j))).or_default().push(j);
    }
    let mut new_cols: Vec<Vec<T>> = Vec::new();

    for combo in combos {
        // cartesian product of the member terms' columns
        let mut col_sets: Vec<Vec<usize>> = vec![Vec::new()];
        for &t in &combo {
            col_sets = col_sets
                .into_iter()
                .flat_map(|prefix| {
                    dm.terms[t].columns.iter().map(move |&c| {
                        let mut v = prefix.clone();
                        v.push(c);
                        v
                    })
                })
                .collect();
        }
        let mut term_cols = Vec::new();
        for cols in col_sets {
            let values: Vec<T> = (0..n)
                .map(|i| cols.iter().fold(T::one(), |acc, &c| acc * dm.values[(i, c)]))
                .collect();
            let first = values.first().copied().unwrap_or(T::zero());
            if values.iter().all(|&v| v == first) {
                continue;
            }
            let key = column_key(&values);
            let duplicate = seen.get(&key).is_some_and(|cands| {
                cands.iter().any(|&c| {
                    if c < dm.cols() {
                        (0..n).all(|i| dm.values[(i, c)] == values[i])
                    } else {
                        new_cols[c - dm.cols()] == values
                    }
                })
            });
            if duplicate {
                continue;
            }
            let index = dm.cols() + new_cols.len();
            seen.entry(key).or_default().push(index);
            new_cols.push(values);
            let parents: Vec<String> = cols.iter().map(|&c| dm.columns[c].name.clone()).collect();
            term_cols.push((parents, index));
        }
        if term_cols.is_empty() {
            continue;
        }
        let name = combo
            .iter()
            .map(|&t| dm.terms[t].name.as_str())
            .collect::<Vec<_>>()
            .join(":");
        let mut columns = Vec::with_capacity(term_cols.len());
        let mut metas = Vec::with_capacity(term_cols.len());
        for (parents, index) in term_cols {
            metas.push(ColumnMeta {
                name: parents.join(":"),
                source: ColumnSource::Interaction { parents },
            });
            columns.push(index);
        }
        out.columns.extend(metas);
        out.terms.push(Term {
            name,
            columns,
            order: combo.len(),
        });
    }

    let d0 = dm.cols();
    let total = d0 + new_cols.len();
    let mut values = Matrix::zeros(n, total);
    for i in 0..n {
        let row = values.row_mut(i);
        row[..d0].copy_from_slice(dm.values.row(i));
        for (c, col) in new_cols.iter().enumerate() {
            row[d0 + c] = col[i];
        }
    }
    out.values = values;
    out.standardization = None;
    Ok(out)
}

/// Rebuilds the columns of `expanded` (an [`expand_interactions`] result)
/// from new rows of its main effects, keeping the same columns and terms.
pub fn replay_interactions<T: Scalar>(expanded: &DesignMatrix<T>, base: &DesignMatrix<T>) -> Result<DesignMatrix<T>> {
    let index: HashMap<&str, usize> = base.columns.iter().enumerate().map(|(j, c)| (c.name.as_str(), j)).collect();
    let find = |name: &str| {
        index
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("main-effect column `{name}` missing")))
    };
    let recipes: Vec<Vec<usize>> = expanded
        .columns
        .iter()
        .map(|c| match &c.source {
            ColumnSource::Interaction { parents } => parents.iter().map(|p| find(p)).collect(),
            _ => Ok(vec![find(&c.name)?]),
        })
        .collect::<Result<_>>()?;
    let values = Matrix::from_fn(base.rows(), recipes.len(), |i, j| {
        recipes[j].iter().fold(T::one(), |acc, &c| acc * base.values[(i, c)])
    });
    Ok(DesignMatrix {
        values,
        columns: expanded.columns.clone(),
        terms: expanded.terms.clone(),
        standardization: None,
        strata: None,
    })
}

/// Fold label per row. With strata the rows of each stratum are shuffled
/// and dealt round-robin, so every fold keeps the stratum proportions.
pub fn fold_assignment(n: usize, folds: usize, strata: Option<&[String]>, rng: RngState) -> Vec<usize> {
    let mut rng = rng.rng();
    let mut groups: Vec<(String, Vec<usize>)> = match strata {
        Some(s) => {
            let mut map: std::collections::BTreeMap<&str, Vec<usize>> = Default::default();
            for (i, label) in s.iter().enumerate() {
                map.entry(label.as_str()).or_default().push(i);
            }
            map.into_iter().map(|(k, v)| (k.to_string(), v)).collect()
        }
        None => vec![(String::new(), (0..n).collect())],
    };
    let mut assignment = vec![0; n];
    let mut next = 0;
    for (_, rows) in groups.iter_mut() {
        rows.shuffle(&mut rng);
        for &i in rows.iter() {
            assignment[i] = next % folds;
            next += 1;
        }
    }
    assignment
}

/// Cross-validation plan shared by every candidate of a selection run.
#[derive(Debug, Clone)]
pub struct CvPlan {
    folds: Vec<(Vec<usize>, Vec<usize>)>,
}

impl CvPlan {
    pub fn new(n: usize, folds: usize, strata: Option<&[String]>, rng: RngState) -> Result<Self> {
        if folds < 2 || n < folds {
            return Err(Error::Config(format!("need 2 <= folds <= n, got folds = {folds}, n = {n}")));
        }
        let labels = fold_assignment(n, folds, strata, rng);
        let folds = (0..folds)
            .map(|f| {
                let (test, train): (Vec<usize>, Vec<usize>) = (0..n).partition(|&i| labels[i] == f);
                (train, test)
            })
            .collect();
        Ok(Self { folds })
    }

    /// Mean over folds of held-out RMSE, fitting OLS on the given columns.
    pub fn rmse<T: Scalar>(&self, x: &Matrix<T>, y: &[T], columns: &[usize]) -> Result<T> {
        let sub = x.select_columns(columns);
        let mut total = T::zero();
        for (train, test) in &self.folds {
            let ytr: Vec<T> = train.iter().map(|&i| y[i]).collect();
            let coef = ols_coefficients(&sub.select_rows(train), &ytr)?;
            let pred = predict_matrix(&coef, &sub.select_rows(test))?;
            let mse = test
                .iter()
                .zip(&pred)
                .map(|(&i, &p)| (y[i] - p) * (y[i] - p))
                .sum::<T>()
                / T::of_usize(test.len());
            total += mse.sqrt();
        }
        Ok(total / T::of_usize(self.folds.len()))
    }
}

/// k-fold CV root mean squared error of OLS restricted to `term_subset`.
/// Folds are stratified when the design carries strata.
pub fn kfold_cv_rmse<T: Scalar>(
    dm: &DesignMatrix<T>,
    y: &[T],
    term_subset: &[usize],
    folds: usize,
    rng: RngState,
) -> Result<T> {
    let plan = CvPlan::new(dm.rows(), folds, dm.strata.as_deref(), rng)?;
    plan.rmse(&dm.values, y, &dm.term_columns(term_subset))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionStep {
    /// Term removed to reach this model; `None` for the starting model.
    pub removed: Option<String>,
    pub size: usize,
    pub cv_rmse: f64,
    /// Term indices still in the model.
    pub terms: Vec<usize>,
}

/// Backward-elimination path from the full model to intercept only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionPath {
    pub steps: Vec<SelectionStep>,
}

impl SelectionPath {
    pub fn min_cv(&self) -> f64 {
        self.steps.iter().map(|s| s.cv_rmse).fold(f64::INFINITY, f64::min)
    }

    /// First step attaining the minimum CV-RMSE.
    pub fn best(&self) -> &SelectionStep {
        let min = self.min_cv();
        self.steps
            .iter()
            .find(|s| s.cv_rmse == min)
            .unwrap_or(&self.steps[0])
    }

    pub fn at_size(&self, size: usize) -> Option<&SelectionStep> {
        self.steps.iter().find(|s| s.size == size)
    }

    /// `step,term,size,cv_rmse`
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        out.write_record(["step", "term", "size", "cv_rmse"])?;
        for (i, s) in self.steps.iter().enumerate() {
            out.write_record([
                i.to_string(),
                s.removed.clone().unwrap_or_default(),
                s.size.to_string(),
                s.cv_rmse.to_string(),
            ])?;
        }
        out.flush().map_err(|e| Error::io("<selection path>", e))?;
        Ok(())
    }
}

/// Greedy backward elimination scored by `folds`-fold CV-RMSE.
///
/// Each step drops the term whose removal gives the lowest CV-RMSE; ties go
/// to the highest term index, and rank-deficient candidates score `+∞`.
/// Scores come from per-fold Gram matrices and agree with
/// [`kfold_cv_rmse`] on the same seed up to rounding.
/// Returns the model at the path minimum, refitted on all rows.
pub fn backward_select<T: Scalar>(
    dm: &DesignMatrix<T>,
    y: &[T],
    folds: usize,
    rng: RngState,
) -> Result<(LinearModel<T>, SelectionPath)> {
    if folds < 2 || dm.rows() < folds {
        return Err(Error::Config(format!("need 2 <= folds <= n, got folds = {folds}, n = {}", dm.rows())));
    }
    if y.len() != dm.rows() {
        return Err(Error::LengthMismatch { left: dm.rows(), right: y.len() });
    }
    let labels = fold_assignment(dm.rows(), folds, dm.strata.as_deref(), rng);
    let engine = GramCv::new(dm, y, &labels, folds);
    let mut current: Vec<usize> = (0..dm.terms.len()).collect();
    let mut steps = vec![SelectionStep {
        removed: None,
        size: current.len(),
        cv_rmse: engine.score(&current),
        terms: current.clone(),
    }];
    while !current.is_empty() {
        let scores = engine.removal_scores(&current);
        let mut best = 0;
        for pos in 1..scores.len() {
            // positions are in ascending term order, so `<=` prefers later terms
            if scores[pos] <= scores[best] || scores[best].is_nan() {
                best = pos;
            }
        }
        let removed = current.remove(best);
        steps.push(SelectionStep {
            removed: Some(dm.terms[removed].name.clone()),
            size: current.len(),
            cv_rmse: scores[best],
            terms: current.clone(),
        });
    }
    let path = SelectionPath { steps };
    let model = fit_terms(dm, y, &path.best().terms)?;
    Ok((model, path))
}

/// OLS on a subset of terms.
pub fn fit_terms<T: Scalar>(dm: &DesignMatrix<T>, y: &[T], terms: &[usize]) -> Result<LinearModel<T>> {
    fit_ols(&dm.select_terms(terms), y)
}

/// Smallest model size whose CV-RMSE is within `tolerance` of the path minimum.
pub fn parsimony_select(path: &SelectionPath, tolerance: f64) -> Result<usize> {
    if path.steps.is_empty() {
        return Err(Error::Degenerate("empty selection path".into()));
    }
    let bound = path.min_cv() + tolerance;
    Ok(path
        .steps
        .iter()
        .filter(|s| s.cv_rmse <= bound)
        .map(|s| s.size)
        .min()
        .expect("the minimum itself qualifies"))
}
