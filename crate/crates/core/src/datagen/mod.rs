//! Synthetic data for the ratio, nonlinear and linear outcome scenarios.
//!
//! Every individual draws a between-person effect `u ~ N(0, Σ_u)` shared by
//! all of their replicate days, and each day adds within-person error
//! `ε_j ~ N(0, Σ_ε)` on the additive scale. When a Box-Cox `λ` is given the
//! reported value is the inverse-transform image of the additive-scale
//! value, and the usual intake is its expectation over `ε` given `u`.

mod boxcox;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::randmath::{
    standard_normal, CovarianceMatrix, GaussHermite, MvnSampler, RngState,
    DEFAULT_QUADRATURE_NODES,
};
use crate::scalar::Scalar;

pub use boxcox::{box_cox, inverse_box_cox, inverse_box_cox_truncated, true_usual_intake};

/// Redraw budget for individuals whose values leave the positive domain.
pub const MAX_REDRAWS: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutcomeForm {
    /// `Y = α₀ + α_X' X + α_Z' Z + e`
    Linear,
    /// `Y = α₀ + α₁ X₁/X₂ + e`
    Ratio,
    /// Seven-term nonlinear outcome in `X₁, X₂` plus `α_Z' Z`.
    Sim3Nonlinear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    #[default]
    Identity,
}

/// Which scale the consumed surrogate `X*` lives on when `λ` is set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SurrogateScale {
    /// Inverse Box-Cox image: the skewed, reported-intake scale.
    #[default]
    Observed,
    /// `β₀ + β_Z'Z + u + ε` before the inverse transform.
    Additive,
}

/// Full parameterisation of a data-generating scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub n: usize,
    pub k: usize,
    pub p: usize,
    pub q: usize,
    #[serde(rename = "sigma_Y2")]
    pub sigma_y2: f64,
    /// `α₀`, then the error-prone (or `h(X)`) coefficients, then `α_Z`.
    pub alpha: Vec<f64>,
    /// One row per component: `β₀ℓ` followed by `β_Zℓ`.
    pub beta: Vec<Vec<f64>>,
    #[serde(rename = "Sigma_u")]
    pub sigma_u: CovarianceMatrix<f64>,
    #[serde(rename = "Sigma_eps")]
    pub sigma_eps: CovarianceMatrix<f64>,
    #[serde(default)]
    pub lambda: Option<f64>,
    #[serde(rename = "Sigma_Z", default)]
    pub sigma_z: Option<CovarianceMatrix<f64>>,
    pub outcome_form: OutcomeForm,
    #[serde(default)]
    pub link: Link,
    pub seed: RngState,
    #[serde(default)]
    pub surrogate_scale: SurrogateScale,
}

impl ScenarioSpec {
    /// Number of outcome coefficients before `α_Z`.
    fn alpha_head(&self) -> usize {
        match self.outcome_form {
            OutcomeForm::Linear => 1 + self.p,
            OutcomeForm::Ratio => 2,
            OutcomeForm::Sim3Nonlinear => 7,
        }
    }

    pub fn alpha_z(&self) -> &[f64] {
        &self.alpha[self.alpha_head()..]
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidSpec(m));
        if self.n == 0 || self.k == 0 {
            return bad("n and k must be at least 1".into());
        }
        if !(self.sigma_y2 >= 0.0) || !self.sigma_y2.is_finite() {
            return bad(format!("sigma_Y2 must be a non-negative number, got {}", self.sigma_y2));
        }
        if self.sigma_u.dim() != self.p || self.sigma_eps.dim() != self.p {
            return bad(format!(
                "Sigma_u ({}) and Sigma_eps ({}) must both have dimension p = {}",
                self.sigma_u.dim(),
                self.sigma_eps.dim(),
                self.p
            ));
        }
        if self.beta.len() != self.p || self.beta.iter().any(|r| r.len() != self.q + 1) {
            return bad(format!("beta must be {} rows of {} values", self.p, self.q + 1));
        }
        if self.alpha.len() != self.alpha_head() + self.q {
            return bad(format!(
                "alpha must have {} entries for this outcome form, got {}",
                self.alpha_head() + self.q,
                self.alpha.len()
            ));
        }
        match (&self.sigma_z, self.q) {
            (None, 0) => {}
            (Some(s), q) if s.dim() == q => {}
            _ => return bad(format!("Sigma_Z must be present with dimension q = {}", self.q)),
        }
        match self.outcome_form {
            OutcomeForm::Ratio if self.p != 2 || self.q != 0 => {
                bad("ratio outcome requires p = 2 and q = 0".into())
            }
            OutcomeForm::Sim3Nonlinear if self.p != 2 => {
                bad("sim3-nonlinear outcome requires p = 2".into())
            }
            OutcomeForm::Sim3Nonlinear if self.lambda.is_some() => {
                bad("sim3-nonlinear outcome is generated without a Box-Cox transform".into())
            }
            _ => Ok(()),
        }?;
        self.sigma_u.cholesky()?;
        self.sigma_eps.cholesky()?;
        if let Some(s) = &self.sigma_z {
            s.cholesky()?;
        }
        Ok(())
    }
}

/// A free-text categorical covariate carried through from ingestion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalColumn {
    pub name: String,
    pub values: Vec<String>,
}

/// Outcomes, error-free covariates and replicate surrogates for `n` individuals.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset<T: Scalar> {
    pub y: Vec<T>,
    /// `n × q` continuous error-free covariates.
    pub z: Matrix<T>,
    pub z_names: Vec<String>,
    pub categoricals: Vec<CategoricalColumn>,
    /// Names of the `p` error-prone components.
    pub components: Vec<String>,
    /// Replicates for day `j` of component `l` of individual `i` at `(i·p + l)·k + j`.
    pub x_star: Vec<T>,
    /// Additive-scale replicates, same layout, when they differ from `x_star`.
    pub x_additive: Option<Vec<T>>,
    /// `n × p` usual intake.
    pub x_true: Option<Matrix<T>>,
    /// `n × k`; day 1 is always present.
    pub present: Vec<bool>,
    /// `n × k`; set where a value was filled in rather than observed.
    pub imputed: Vec<bool>,
    p: usize,
    k: usize,
}

impl<T: Scalar> Dataset<T> {
    /// Empty-covariate dataset with every replicate present.
    pub fn new(y: Vec<T>, x_star: Vec<T>, p: usize, k: usize) -> Result<Self> {
        let n = y.len();
        let ds = Self {
            z: Matrix::zeros(n, 0),
            z_names: Vec::new(),
            categoricals: Vec::new(),
            components: (1..=p).map(|l| format!("x{l}")).collect(),
            x_star,
            x_additive: None,
            x_true: None,
            present: vec![true; n * k],
            imputed: vec![false; n * k],
            y,
            p,
            k,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn p(&self) -> usize {
        self.p
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn q(&self) -> usize {
        self.z.cols()
    }

    #[inline]
    pub fn x(&self, i: usize, l: usize, j: usize) -> T {
        self.x_star[(i * self.p + l) * self.k + j]
    }

    #[inline]
    pub fn set_x(&mut self, i: usize, l: usize, j: usize, v: T) {
        self.x_star[(i * self.p + l) * self.k + j] = v;
    }

    #[inline]
    pub fn is_present(&self, i: usize, j: usize) -> bool {
        self.present[i * self.k + j]
    }

    /// Present and not imputed.
    #[inline]
    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.present[i * self.k + j] && !self.imputed[i * self.k + j]
    }

    /// Number of genuinely observed days for individual `i`.
    pub fn observed_days(&self, i: usize) -> usize {
        (0..self.k).filter(|&j| self.is_observed(i, j)).count()
    }

    /// Stratum label: the observed-day pattern, e.g. `"11"` or `"10"`.
    pub fn presence_pattern(&self, i: usize) -> String {
        (0..self.k)
            .map(|j| if self.is_observed(i, j) { '1' } else { '0' })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.n();
        let check = |what: &str, got: usize, want: usize| {
            if got == want {
                Ok(())
            } else {
                Err(Error::InvalidSpec(format!("{what} has length {got}, expected {want}")))
            }
        };
        check("x_star", self.x_star.len(), n * self.p * self.k)?;
        check("present", self.present.len(), n * self.k)?;
        check("imputed", self.imputed.len(), n * self.k)?;
        check("z rows", self.z.rows(), n)?;
        check("z_names", self.z_names.len(), self.z.cols())?;
        check("components", self.components.len(), self.p)?;
        if let Some(a) = &self.x_additive {
            check("x_additive", a.len(), n * self.p * self.k)?;
        }
        if let Some(t) = &self.x_true {
            check("x_true rows", t.rows(), n)?;
            check("x_true cols", t.cols(), self.p)?;
        }
        for c in &self.categoricals {
            check(&c.name, c.values.len(), n)?;
        }
        if let Some(i) = (0..n).find(|&i| !self.is_present(i, 0)) {
            return Err(Error::InvalidSpec(format!("day 1 missing for row {i}")));
        }
        Ok(())
    }

    /// Rows `idx`, in order.
    pub fn select_rows(&self, idx: &[usize]) -> Self {
        let (p, k) = (self.p, self.k);
        let pick = |v: &[T], width: usize| -> Vec<T> {
            idx.iter()
                .flat_map(|&i| v[i * width..(i + 1) * width].iter().copied())
                .collect()
        };
        let pick_bool = |v: &[bool]| -> Vec<bool> {
            idx.iter()
                .flat_map(|&i| v[i * k..(i + 1) * k].iter().copied())
                .collect()
        };
        Self {
            y: idx.iter().map(|&i| self.y[i]).collect(),
            z: self.z.select_rows(idx),
            z_names: self.z_names.clone(),
            categoricals: self
                .categoricals
                .iter()
                .map(|c| CategoricalColumn {
                    name: c.name.clone(),
                    values: idx.iter().map(|&i| c.values[i].clone()).collect(),
                })
                .collect(),
            components: self.components.clone(),
            x_star: pick(&self.x_star, p * k),
            x_additive: self.x_additive.as_ref().map(|a| pick(a, p * k)),
            x_true: self.x_true.as_ref().map(|t| t.select_rows(idx)),
            present: pick_bool(&self.present),
            imputed: pick_bool(&self.imputed),
            p,
            k,
        }
    }
}

/// Dispatches on the scenario's outcome form.
pub fn generate<T: Scalar>(spec: &ScenarioSpec, rng: RngState) -> Result<Dataset<T>> {
    match spec.outcome_form {
        OutcomeForm::Ratio => generate_ratio_scenario(spec, rng),
        OutcomeForm::Sim3Nonlinear => generate_sim3_scenario(spec, rng),
        OutcomeForm::Linear => generate_linear_scenario(spec, rng),
    }
}

/// One individual's draw before it is written into the dataset.
struct Draw {
    z: Vec<f64>,
    eta: Vec<f64>,
    additive: Vec<f64>, // p × k
    truth: Vec<f64>,
}

struct Generator<'a> {
    spec: &'a ScenarioSpec,
    u: MvnSampler<f64>,
    eps: MvnSampler<f64>,
    z: Option<MvnSampler<f64>>,
    rule: GaussHermite,
}

impl<'a> Generator<'a> {
    fn new(spec: &'a ScenarioSpec) -> Result<Self> {
        spec.validate()?;
        let p = spec.p;
        Ok(Self {
            spec,
            u: MvnSampler::new(&vec![0.0; p], &spec.sigma_u)?,
            eps: MvnSampler::new(&vec![0.0; p], &spec.sigma_eps)?,
            z: match &spec.sigma_z {
                Some(s) => Some(MvnSampler::new(&vec![0.0; spec.q], s)?),
                None => None,
            },
            rule: GaussHermite::new(DEFAULT_QUADRATURE_NODES),
        })
    }

    fn draw_z<R: rand::Rng>(&mut self, rng: &mut R) -> Vec<f64> {
        match &mut self.z {
            Some(s) => s.sample(rng),
            None => Vec::new(),
        }
    }

    /// Draws `u` and the `k` error vectors for fixed `z`.
    fn draw_errors<R: rand::Rng>(&mut self, rng: &mut R, z: Vec<f64>) -> Result<Draw> {
        let (p, k) = (self.spec.p, self.spec.k);
        let u = self.u.sample(rng);
        let eta: Vec<f64> = (0..p)
            .map(|l| {
                let b = &self.spec.beta[l];
                b[0] + b[1..].iter().zip(&z).map(|(bz, zv)| bz * zv).sum::<f64>() + u[l]
            })
            .collect();
        let mut additive = vec![0.0; p * k];
        let mut e = vec![0.0; p];
        for j in 0..k {
            self.eps.sample_into(rng, &mut e);
            for l in 0..p {
                additive[l * k + j] = eta[l] + e[l];
            }
        }
        let truth = eta
            .iter()
            .enumerate()
            .map(|(l, &h)| {
                true_usual_intake(h, self.spec.lambda, self.spec.sigma_eps.get(l, l), &self.rule)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Draw {
            z,
            eta,
            additive,
            truth,
        })
    }

    /// Reported-scale replicates, or `None` if outside the transform's domain.
    fn reported(&self, additive: &[f64]) -> Option<Vec<f64>> {
        match self.spec.lambda {
            None => Some(additive.to_vec()),
            Some(l) => additive.iter().map(|&w| inverse_box_cox(w, l).ok()).collect(),
        }
    }

    fn consumed<'b>(&self, additive: &'b [f64], reported: &'b [f64]) -> &'b [f64] {
        match self.spec.surrogate_scale {
            SurrogateScale::Observed => reported,
            SurrogateScale::Additive => additive,
        }
    }
}

/// Buffers individuals as they are accepted.
struct Builder {
    n: usize,
    p: usize,
    k: usize,
    q: usize,
    y: Vec<f64>,
    z: Vec<f64>,
    x_star: Vec<f64>,
    x_additive: Vec<f64>,
    x_true: Vec<f64>,
}

impl Builder {
    fn new(spec: &ScenarioSpec) -> Self {
        let (n, p, k, q) = (spec.n, spec.p, spec.k, spec.q);
        Self {
            n,
            p,
            k,
            q,
            y: Vec::with_capacity(n),
            z: Vec::with_capacity(n * q),
            x_star: Vec::with_capacity(n * p * k),
            x_additive: Vec::with_capacity(n * p * k),
            x_true: Vec::with_capacity(n * p),
        }
    }

    fn push(&mut self, d: &Draw, consumed: &[f64], y: f64) {
        self.y.push(y);
        self.z.extend_from_slice(&d.z);
        self.x_star.extend_from_slice(consumed);
        self.x_additive.extend_from_slice(&d.additive);
        self.x_true.extend_from_slice(&d.truth);
    }

    fn finish<T: Scalar>(self, keep_additive: bool) -> Result<Dataset<T>> {
        let cast = |v: Vec<f64>| v.into_iter().map(T::of).collect::<Vec<T>>();
        let mut ds = Dataset::new(cast(self.y), cast(self.x_star), self.p, self.k)?;
        ds.z = Matrix::from_vec(self.n, self.q, cast(self.z));
        ds.z_names = (1..=self.q).map(|j| format!("z{j}")).collect();
        ds.x_true = Some(Matrix::from_vec(self.n, self.p, cast(self.x_true)));
        if keep_additive {
            ds.x_additive = Some(cast(self.x_additive));
        }
        ds.validate()?;
        Ok(ds)
    }
}

/// `Y = α₀ + α₁ X₁/X₂ + e` with Box-Cox-scale replicate surrogates.
///
/// Individuals whose denominator usual intake or any consumed replicate is
/// non-positive (or whose additive value lies outside the inverse
/// transform's domain) are redrawn, up to [`MAX_REDRAWS`] times.
pub fn generate_ratio_scenario<T: Scalar>(spec: &ScenarioSpec, rng: RngState) -> Result<Dataset<T>> {
    if spec.outcome_form != OutcomeForm::Ratio {
        return Err(Error::InvalidSpec("expected outcome_form = ratio".into()));
    }
    let mut gen = Generator::new(spec)?;
    let mut rng = rng.rng();
    let mut out = Builder::new(spec);
    let sigma_y = spec.sigma_y2.sqrt();
    for i in 0..spec.n {
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let d = gen.draw_errors(&mut rng, Vec::new())?;
            let Some(rep) = gen.reported(&d.additive) else {
                continue;
            };
            let consumed = gen.consumed(&d.additive, &rep).to_vec();
            if d.truth[1] > 0.0 && consumed.iter().all(|&x| x > 0.0) {
                accepted = Some((d, consumed));
                break;
            }
        }
        let Some((d, consumed)) = accepted else {
            return Err(Error::Domain(format!(
                "ratio scenario: individual {i} still non-positive after {MAX_REDRAWS} redraws"
            )));
        };
        let e: f64 = standard_normal(&mut rng);
        let y = spec.alpha[0] + spec.alpha[1] * d.truth[0] / d.truth[1] + sigma_y * e;
        out.push(&d, &consumed, y);
    }
    out.finish(spec.lambda.is_some())
}

/// Nonlinear outcome in the usual intakes with correlated covariates `Z`.
pub fn sim3_outcome(alpha: &[f64], alpha_z: &[f64], x: &[f64], z: &[f64]) -> f64 {
    let (x1, x2) = (x[0], x[1]);
    alpha[0]
        + alpha[1] * x1
        + alpha[2] * x2
        + alpha[3] * x1 / x2
        + alpha[4] * x1.ln()
        + alpha[5] * x2.ln()
        + alpha[6] * (x1 * x2).sqrt()
        + alpha_z.iter().zip(z).map(|(a, b)| a * b).sum::<f64>()
}

/// `Z ~ N(0, Σ_Z)`, `X | Z ~ N(β[1 Z']', Σ_u)`, `X*_j = X + ε_j`.
///
/// An individual's `(X, ε)` is redrawn (keeping `Z`) while any usual intake
/// or replicate is non-positive.
pub fn generate_sim3_scenario<T: Scalar>(spec: &ScenarioSpec, rng: RngState) -> Result<Dataset<T>> {
    if spec.outcome_form != OutcomeForm::Sim3Nonlinear {
        return Err(Error::InvalidSpec("expected outcome_form = sim3-nonlinear".into()));
    }
    if spec.sigma_z.is_none() {
        return Err(Error::InvalidSpec("sim3-nonlinear requires Sigma_Z".into()));
    }
    let mut gen = Generator::new(spec)?;
    let mut rng = rng.rng();
    let mut out = Builder::new(spec);
    let sigma_y = spec.sigma_y2.sqrt();
    let alpha_z = spec.alpha_z().to_vec();
    for i in 0..spec.n {
        let z = gen.draw_z(&mut rng);
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let d = gen.draw_errors(&mut rng, z.clone())?;
            if d.truth.iter().all(|&x| x > 0.0) && d.additive.iter().all(|&x| x > 0.0) {
                accepted = Some(d);
                break;
            }
        }
        let Some(d) = accepted else {
            return Err(Error::NonPositiveTruth {
                individual: i,
                attempts: MAX_REDRAWS,
            });
        };
        let e: f64 = standard_normal(&mut rng);
        let y = sim3_outcome(&spec.alpha, &alpha_z, &d.truth, &d.z) + sigma_y * e;
        let consumed = d.additive.clone();
        out.push(&d, &consumed, y);
    }
    out.finish(false)
}

/// Linear outcome in the usual intakes: the general surrogate model with
/// `E[Y | X, Z] = α₀ + α_X'X + α_Z'Z`.
pub fn generate_linear_scenario<T: Scalar>(spec: &ScenarioSpec, rng: RngState) -> Result<Dataset<T>> {
    if spec.outcome_form != OutcomeForm::Linear {
        return Err(Error::InvalidSpec("expected outcome_form = linear".into()));
    }
    let mut gen = Generator::new(spec)?;
    let mut rng = rng.rng();
    let mut out = Builder::new(spec);
    let sigma_y = spec.sigma_y2.sqrt();
    let p = spec.p;
    for i in 0..spec.n {
        let z = gen.draw_z(&mut rng);
        let mut accepted = None;
        for _ in 0..MAX_REDRAWS {
            let d = gen.draw_errors(&mut rng, z.clone())?;
            if let Some(rep) = gen.reported(&d.additive) {
                let consumed = gen.consumed(&d.additive, &rep).to_vec();
                accepted = Some((d, consumed));
                break;
            }
        }
        let Some((d, consumed)) = accepted else {
            return Err(Error::Domain(format!(
                "linear scenario: individual {i} outside the inverse transform's domain"
            )));
        };
        debug_assert_eq!(d.eta.len(), p);
        let e: f64 = standard_normal(&mut rng);
        let y = spec.alpha[0]
            + spec.alpha[1..=p].iter().zip(&d.truth).map(|(a, x)| a * x).sum::<f64>()
            + spec.alpha_z().iter().zip(&d.z).map(|(a, x)| a * x).sum::<f64>()
            + sigma_y * e;
        out.push(&d, &consumed, y);
    }
    out.finish(spec.lambda.is_some())
}

/// Built-in parameterisations of the three simulation studies.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "preset", rename_all = "lowercase")]
pub enum PresetScenario {
    /// Ratio outcome, `λ = 0.35`, 12000 individuals.
    Sim1 { days: usize },
    /// Ratio outcome, `λ = 0.5`, `budget / days` individuals.
    Sim2 { budget: usize, days: usize },
    /// Nonlinear outcome with covariates, scenario 1 or 2.
    Sim3 { scenario: usize },
}

impl PresetScenario {
    pub fn label(&self) -> String {
        match self {
            Self::Sim1 { .. } => "sim1".into(),
            Self::Sim2 { budget, .. } => format!("sim2-b{budget}"),
            Self::Sim3 { scenario } => format!("sim3-s{scenario}"),
        }
    }
}

pub const PRESET_DAYS: [usize; 5] = [2, 4, 6, 8, 10];
pub const PRESET_BUDGETS: [usize; 3] = [12000, 60000, 120000];
const DEFAULT_SEED: u64 = 20_240_601;

fn ratio_spec(n: usize, k: usize, lambda: f64) -> ScenarioSpec {
    ScenarioSpec {
        n,
        k,
        p: 2,
        q: 0,
        sigma_y2: 1.0,
        alpha: vec![98.5, 4.0],
        beta: vec![vec![36.0], vec![27.5]],
        sigma_u: CovarianceMatrix::from_rows(&[vec![20.0, 15.5], vec![15.5, 25.5]])
            .expect("symmetric"),
        sigma_eps: CovarianceMatrix::from_rows(&[vec![38.0, 20.5], vec![20.5, 34.5]])
            .expect("symmetric"),
        lambda: Some(lambda),
        sigma_z: None,
        outcome_form: OutcomeForm::Ratio,
        link: Link::Identity,
        seed: RngState::new(DEFAULT_SEED),
        surrogate_scale: SurrogateScale::Observed,
    }
}

/// The built-in parameterisation for a study cell.
pub fn make_preset_spec(which: PresetScenario) -> Result<ScenarioSpec> {
    let unknown = || Err(Error::UnknownScenario(format!("{which:?}")));
    match which {
        PresetScenario::Sim1 { days } => {
            if !PRESET_DAYS.contains(&days) {
                return unknown();
            }
            Ok(ratio_spec(12000, days, 0.35))
        }
        PresetScenario::Sim2 { budget, days } => {
            if !PRESET_DAYS.contains(&days) || !PRESET_BUDGETS.contains(&budget) {
                return unknown();
            }
            Ok(ratio_spec(budget / days, days, 0.5))
        }
        PresetScenario::Sim3 { scenario } => {
            let (alpha, b0) = match scenario {
                1 => ([350.0, 2.0, -1.0, 3.0, 2.0, 1.0, -4.0], 100.0),
                2 => ([350.0, 1.0, -1.0, 50.0, 25.0, 25.0, -1.0], 50.0),
                _ => return unknown(),
            };
            let mut alpha = alpha.to_vec();
            alpha.extend_from_slice(&[0.0, 0.0, 1.0, 0.0]);
            Ok(ScenarioSpec {
                n: 40000,
                k: 2,
                p: 2,
                q: 4,
                sigma_y2: 1.0,
                alpha,
                beta: vec![vec![b0, 2.0, 0.0, -1.0, 0.5], vec![b0, 0.0, 2.0, 1.0, -0.5]],
                sigma_u: CovarianceMatrix::from_rows(&[vec![20.0, 15.5], vec![15.5, 25.5]])
                    .expect("symmetric"),
                sigma_eps: CovarianceMatrix::from_rows(&[vec![38.0, 20.5], vec![20.5, 34.5]])
                    .expect("symmetric"),
                lambda: None,
                sigma_z: Some(
                    CovarianceMatrix::from_rows(&[
                        vec![1.28, 0.21, -0.07, 0.32],
                        vec![0.21, 1.98, 1.28, 0.34],
                        vec![-0.07, 1.28, 1.91, 1.22],
                        vec![0.32, 0.34, 1.22, 1.20],
                    ])
                    .expect("symmetric"),
                ),
                outcome_form: OutcomeForm::Sim3Nonlinear,
                link: Link::Identity,
                seed: RngState::new(DEFAULT_SEED),
                surrogate_scale: SurrogateScale::Observed,
            })
        }
    }
}
