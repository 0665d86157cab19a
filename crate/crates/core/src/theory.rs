//! Closed-form variance results for replicate averaging, each with a
//! Monte Carlo counterpart.

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::randmath::{normal_central_moment, RngState};
use crate::scalar::Scalar;

/// Analytic value next to a Monte Carlo estimate of the same variance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceReport {
    pub analytic: f64,
    pub monte_carlo: f64,
    pub mc_standard_error: f64,
    pub draws: u64,
}

impl VarianceReport {
    /// `|analytic − MC|` in standard errors.
    pub fn z_score(&self) -> f64 {
        (self.analytic - self.monte_carlo).abs() / self.mc_standard_error
    }

    pub fn relative_error(&self) -> f64 {
        (self.analytic - self.monte_carlo).abs() / self.analytic.abs()
    }
}

/// Streaming sample moments about a fixed shift, enough for the variance
/// and the standard error of the variance.
#[derive(Debug, Clone, Default)]
pub struct MomentAccumulator {
    n: u64,
    shift: Option<f64>,
    s: [f64; 4],
}

impl MomentAccumulator {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, x: f64) {
        let c = *self.shift.get_or_insert(x);
        let d = x - c;
        let d2 = d * d;
        self.n += 1;
        self.s[0] += d;
        self.s[1] += d2;
        self.s[2] += d2 * d;
        self.s[3] += d2 * d2;
    }

    pub fn count(&self) -> u64 {
        self.n
    }

    pub fn mean(&self) -> f64 {
        self.shift.unwrap_or(0.0) + self.s[0] / self.n as f64
    }

    fn central(&self) -> (f64, f64) {
        let n = self.n as f64;
        let m1 = self.s[0] / n;
        let r2 = self.s[1] / n;
        let r3 = self.s[2] / n;
        let r4 = self.s[3] / n;
        let m2 = r2 - m1 * m1;
        let m4 = r4 - 4.0 * m1 * r3 + 6.0 * m1 * m1 * r2 - 3.0 * m1.powi(4);
        (m2, m4)
    }

    /// Unbiased sample variance.
    pub fn variance(&self) -> f64 {
        let n = self.n as f64;
        self.central().0 * n / (n - 1.0)
    }

    /// Large-sample standard error of the sample variance,
    /// `√((m₄ − m₂²)/N)`.
    pub fn variance_standard_error(&self) -> f64 {
        let (m2, m4) = self.central();
        ((m4 - m2 * m2).max(0.0) / self.n as f64).sqrt()
    }
}

fn normal(rng: &mut impl rand::Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Error variance of a mean of `k` i.i.d. replicates, `σ²/k`.
pub fn averaged_error_variance<T: Scalar>(sigma2: T, k: usize) -> T {
    sigma2 / T::of_usize(k)
}

/// MC oracle: variance of the mean of `k` draws from `N(0, σ²)`.
pub fn averaged_error_variance_mc(sigma2: f64, k: usize, draws: u64, rng: RngState) -> VarianceReport {
    let mut rng = rng.rng();
    let sd = sigma2.sqrt();
    let mut acc = MomentAccumulator::new();
    for _ in 0..draws {
        let mean = (0..k).map(|_| normal(&mut rng)).sum::<f64>() * sd / k as f64;
        acc.push(mean);
    }
    VarianceReport {
        analytic: averaged_error_variance(sigma2, k),
        monte_carlo: acc.variance(),
        mc_standard_error: acc.variance_standard_error(),
        draws,
    }
}

/// `s ↦ (e^s − 1)e^s`, the variance of `exp(N(0, s))`.
fn lognormal_variance(s: f64) -> f64 {
    s.exp_m1() * s.exp()
}

/// Inverse of [`lognormal_variance`]: `e^s` is the positive root of
/// `t² − t − v = 0`.
fn lognormal_log_variance(v: f64) -> f64 {
    // ln((1 + √(1+4v))/2), written to stay accurate as v → 0
    let root = (1.0 + 4.0 * v).sqrt();
    ((root - 1.0) / 2.0).ln_1p()
}

/// Log-scale variance of a single lognormal error whose variance matches
/// the mean of `k` independent `exp(N(0, σ²))` errors.
pub fn equivalent_lognormal_variance<T: Scalar>(sigma2: T, k: usize) -> Result<T> {
    if k < 2 {
        return Err(Error::Domain(format!("averaging needs k >= 2, got {k}")));
    }
    if !(sigma2 >= T::zero()) {
        return Err(Error::Domain(format!("variance must be non-negative, got {sigma2}")));
    }
    let v = lognormal_variance(sigma2.as_f64()) / k as f64;
    Ok(T::of(lognormal_log_variance(v)))
}

/// The closed form as printed alongside the sandwich bound,
/// `ln[½·√((k − 4e^{σ²} + 4e^{2σ²})/k) + 1]`. Kept for comparison only: it
/// does not reduce to `σ²` at `k = 1`.
pub fn printed_reduced_variance(sigma2: f64, k: usize) -> f64 {
    let e = sigma2.exp();
    let k = k as f64;
    (0.5 * ((k - 4.0 * e + 4.0 * e * e) / k).sqrt() + 1.0).ln()
}

/// MC oracle for [`equivalent_lognormal_variance`]: estimate the variance
/// of the mean of `k` lognormals, then invert the matching equation. The
/// standard error is carried through by the delta method.
pub fn equivalent_lognormal_variance_mc(sigma2: f64, k: usize, draws: u64, rng: RngState) -> Result<VarianceReport> {
    let analytic = equivalent_lognormal_variance(sigma2, k)?;
    let mut rng = rng.rng();
    let sd = sigma2.sqrt();
    let mut acc = MomentAccumulator::new();
    for _ in 0..draws {
        let mean = (0..k).map(|_| (sd * normal(&mut rng)).exp()).sum::<f64>() / k as f64;
        acc.push(mean);
    }
    let v = acc.variance();
    let root = (1.0 + 4.0 * v).sqrt();
    // ds/dv = 1 / (t·√(1+4v)) with t = (1 + √(1+4v))/2
    let slope = 2.0 / ((1.0 + root) * root);
    Ok(VarianceReport {
        analytic,
        monte_carlo: lognormal_log_variance(v),
        mc_standard_error: slope * acc.variance_standard_error(),
        draws,
    })
}

/// `var(X | X̄*) = σ_V²σ_X²/(σ_V² + kσ_X²)` for `X̄* = X + mean of k errors`.
pub fn conditional_truth_variance<T: Scalar>(sigma_v2: T, sigma_x2: T, k: usize) -> T {
    sigma_v2 * sigma_x2 / (sigma_v2 + T::of_usize(k) * sigma_x2)
}

/// MC oracle: simulate `(X, X̄*)` and take the residual variance of the
/// population regression of `X` on `X̄*`, which for jointly normal pairs is
/// the conditional variance.
pub fn conditional_truth_variance_mc(sigma_v2: f64, sigma_x2: f64, k: usize, draws: u64, rng: RngState) -> VarianceReport {
    let mut rng = rng.rng();
    let (sx, sv) = (sigma_x2.sqrt(), sigma_v2.sqrt());
    let (mut sxx, mut sww, mut sxw) = (0.0, 0.0, 0.0);
    let (mut mx, mut mw) = (0.0, 0.0);
    for _ in 0..draws {
        let x = sx * normal(&mut rng);
        let v: f64 = (0..k).map(|_| normal(&mut rng)).sum::<f64>() * sv / k as f64;
        let w = x + v;
        mx += x;
        mw += w;
        sxx += x * x;
        sww += w * w;
        sxw += x * w;
    }
    let n = draws as f64;
    let (mx, mw) = (mx / n, mw / n);
    let cxx = sxx / n - mx * mx;
    let cww = sww / n - mw * mw;
    let cxw = sxw / n - mx * mw;
    let residual = (cxx - cxw * cxw / cww) * n / (n - 2.0);
    VarianceReport {
        analytic: conditional_truth_variance(sigma_v2, sigma_x2, k),
        monte_carlo: residual,
        // residuals are normal, so the variance estimate has sd σ²·√(2/N)
        mc_standard_error: residual * (2.0 / n).sqrt(),
        draws,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffInputs {
    #[serde(rename = "sigma_Y2")]
    pub sigma_y2: f64,
    #[serde(rename = "sigma_V2")]
    pub sigma_v2: f64,
    #[serde(rename = "sigma_X2")]
    pub sigma_x2: f64,
    #[serde(rename = "C1")]
    pub c1: f64,
    #[serde(rename = "C2")]
    pub c2: f64,
    pub delta: f64,
    pub n: usize,
    pub k: usize,
}

/// Idealised prediction error `σ_Y² + C₁/k + C₂/n^{1−δ}`.
pub fn prediction_floor(inputs: &TradeoffInputs) -> Result<f64> {
    let t = inputs;
    if !(0.0..1.0).contains(&t.delta) {
        return Err(Error::Domain(format!("delta must lie in [0, 1), got {}", t.delta)));
    }
    if t.n == 0 || t.k == 0 || t.c1 < 0.0 || t.c2 < 0.0 {
        return Err(Error::Domain("n, k must be positive and C1, C2 non-negative".into()));
    }
    Ok(t.sigma_y2 + t.c1 / t.k as f64 + t.c2 / (t.n as f64).powf(1.0 - t.delta))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Transform {
    Exp,
    Square,
    Cube,
    Identity,
}

impl Transform {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Self::Exp => x.exp(),
            Self::Square => x * x,
            Self::Cube => x * x * x,
            Self::Identity => x,
        }
    }

    /// `f^{(r)}(ω)` for `r = 1..=order`.
    pub fn derivatives(self, omega: f64, order: usize) -> Vec<f64> {
        (1..=order)
            .map(|r| match (self, r) {
                (Self::Exp, _) => omega.exp(),
                (Self::Square, 1) => 2.0 * omega,
                (Self::Square, 2) => 2.0,
                (Self::Cube, 1) => 3.0 * omega * omega,
                (Self::Cube, 2) => 6.0 * omega,
                (Self::Cube, 3) => 6.0,
                (Self::Identity, 1) => 1.0,
                _ => 0.0,
            })
            .collect()
    }

    /// Exact `var f(ω + e)` for `e ~ N(0, s²)`.
    pub fn variance(self, omega: f64, s: f64) -> f64 {
        match self {
            Self::Exp => (2.0 * omega).exp() * lognormal_variance(s * s),
            Self::Identity => s * s,
            Self::Square | Self::Cube => {
                let degree = if self == Self::Square { 2 } else { 3 };
                let m1 = polynomial_moment(omega, s, degree);
                let m2 = polynomial_moment(omega, s, 2 * degree);
                m2 - m1 * m1
            }
        }
    }
}

fn binomial(n: u32, k: u32) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

/// `E[(ω + e)^d]` for `e ~ N(0, s²)`.
fn polynomial_moment(omega: f64, s: f64, d: u32) -> f64 {
    (0..=d)
        .map(|j| binomial(d, j) * omega.powi((d - j) as i32) * normal_central_moment(j, s))
        .sum()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LemmaCheck {
    /// `var[f(Ω + ε̄) | Ω]`.
    pub transform_of_average: VarianceReport,
    /// `var[(1/k) Σ f(Ω + εᵢ) | Ω]`.
    pub average_of_transform: VarianceReport,
    /// First variance does not exceed the second by more than 3 combined SEs.
    pub holds: bool,
    /// `(second − first)` in combined standard errors.
    pub gap_se: f64,
}

/// Monte Carlo comparison of transforming the average against averaging the
/// transforms of `k` replicates `Ω + εᵢ`, `εᵢ ~ N(0, σ²)`.
pub fn lemma1_check(f: Transform, omega: f64, sigma: f64, k: usize, draws: u64, rng: RngState) -> Result<LemmaCheck> {
    if k < 2 {
        return Err(Error::Domain(format!("need k >= 2 replicates, got {k}")));
    }
    if draws < 100_000 {
        return Err(Error::Domain(format!("need at least 1e5 draws, got {draws}")));
    }
    if !(sigma > 0.0) {
        return Err(Error::Domain(format!("sigma must be positive, got {sigma}")));
    }
    let mut rng = rng.rng();
    let mut first = MomentAccumulator::new();
    let mut second = MomentAccumulator::new();
    for _ in 0..draws {
        let mut sum_eps = 0.0;
        let mut sum_f = 0.0;
        for _ in 0..k {
            let e = sigma * normal(&mut rng);
            sum_eps += e;
            sum_f += f.apply(omega + e);
        }
        first.push(f.apply(omega + sum_eps / k as f64));
        second.push(sum_f / k as f64);
    }
    let kf = k as f64;
    let a = VarianceReport {
        analytic: f.variance(omega, sigma / kf.sqrt()),
        monte_carlo: first.variance(),
        mc_standard_error: first.variance_standard_error(),
        draws,
    };
    let b = VarianceReport {
        analytic: f.variance(omega, sigma) / kf,
        monte_carlo: second.variance(),
        mc_standard_error: second.variance_standard_error(),
        draws,
    };
    let combined = a.mc_standard_error.hypot(b.mc_standard_error);
    Ok(LemmaCheck {
        transform_of_average: a,
        average_of_transform: b,
        holds: a.monte_carlo <= b.monte_carlo + 3.0 * combined,
        gap_se: (b.monte_carlo - a.monte_carlo) / combined,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaylorMode {
    TransformOfAverage,
    AverageOfTransform,
}

/// Truncated double Taylor series for the two variances compared by
/// [`lemma1_check`], using exact normal moments.
///
/// `derivatives[r-1]` is `f^{(r)}(Ω)`; the truncation order is its length.
pub fn taylor_variance(derivatives: &[f64], sigma: f64, k: usize, mode: TaylorMode) -> Result<f64> {
    if derivatives.is_empty() {
        return Err(Error::Domain("need at least one derivative".into()));
    }
    if derivatives.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("derivatives must be finite".into()));
    }
    if k == 0 {
        return Err(Error::Domain("k must be positive".into()));
    }
    let kf = k as f64;
    let (scale, factor) = match mode {
        TaylorMode::TransformOfAverage => (sigma / kf.sqrt(), 1.0),
        TaylorMode::AverageOfTransform => (sigma, 1.0 / kf),
    };
    let mut factorial = vec![1.0; derivatives.len() + 1];
    for r in 1..=derivatives.len() {
        factorial[r] = factorial[r - 1] * r as f64;
    }
    let mut total = 0.0;
    for (i, &fr) in derivatives.iter().enumerate() {
        for (j, &fs) in derivatives.iter().enumerate() {
            let (r, s) = ((i + 1) as u32, (j + 1) as u32);
            let cov = normal_central_moment(r + s, scale) - normal_central_moment(r, scale) * normal_central_moment(s, scale);
            total += fr * fs / (factorial[r as usize] * factorial[s as usize]) * cov;
        }
    }
    Ok(factor * total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_values() {
        assert_eq!(averaged_error_variance(1.0, 1), 1.0);
        assert_eq!(averaged_error_variance(38.0, 2), 19.0);
        assert_eq!(conditional_truth_variance(1.0, 1.0, 1), 0.5);
    }

    #[test]
    fn matching_equation_round_trips() {
        for s in [1e-6, 0.25, 1.0, 4.0] {
            assert!((lognormal_log_variance(lognormal_variance(s)) - s).abs() < 1e-12 * s.max(1.0));
        }
    }

    #[test]
    fn reduced_variance_limits() {
        assert!(equivalent_lognormal_variance(1e-12, 2).unwrap() < 1e-11);
        assert!(equivalent_lognormal_variance(1.0, 1).is_err());
        // the variance-matching root is the printed form with +½ for +1
        for (s2, k) in [(0.25, 2), (1.0, 5), (4.0, 10)] {
            let e = f64::exp(s2);
            let half = (0.5 * ((k as f64 - 4.0 * e + 4.0 * e * e) / k as f64).sqrt() + 0.5).ln();
            assert!((equivalent_lognormal_variance(s2, k).unwrap() - half).abs() < 1e-12);
            assert!(printed_reduced_variance(s2, k) > half);
        }
    }

    #[test]
    fn floor_arithmetic() {
        let mut t = TradeoffInputs {
            sigma_y2: 1.0,
            sigma_v2: 1.0,
            sigma_x2: 1.0,
            c1: 10.0,
            c2: 10.0,
            delta: 0.0,
            n: 12000,
            k: 2,
        };
        assert!((prediction_floor(&t).unwrap() - (6.0 + 10.0 / 12000.0)).abs() < 1e-12);
        t.c1 = 0.0;
        t.c2 = 0.0;
        assert_eq!(prediction_floor(&t).unwrap(), 1.0);
        t.delta = 1.0;
        assert!(prediction_floor(&t).is_err());
    }

    #[test]
    fn taylor_first_order_is_delta_method() {
        for mode in [TaylorMode::TransformOfAverage, TaylorMode::AverageOfTransform] {
            let v = taylor_variance(&[3.0], 0.7, 4, mode).unwrap();
            assert!((v - 9.0 * 0.49 / 4.0).abs() < 1e-14);
        }
    }

    #[test]
    fn taylor_square_is_exact() {
        let (omega, sigma, k) = (1.3, 0.8, 3);
        let d = Transform::Square.derivatives(omega, 2);
        let toa = taylor_variance(&d, sigma, k, TaylorMode::TransformOfAverage).unwrap();
        let aot = taylor_variance(&d, sigma, k, TaylorMode::AverageOfTransform).unwrap();
        let s = sigma / (k as f64).sqrt();
        assert!((toa - (4.0 * omega * omega * s * s + 2.0 * s.powi(4))).abs() < 1e-12);
        assert!((aot - Transform::Square.variance(omega, sigma) / k as f64).abs() < 1e-12);
    }

    #[test]
    fn moment_accumulator_matches_two_pass() {
        let xs = [1.0, 4.0, 2.5, -3.0, 7.25, 0.5];
        let mut acc = MomentAccumulator::new();
        xs.iter().for_each(|&x| acc.push(x));
        let mean = xs.iter().sum::<f64>() / 6.0;
        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0;
        assert!((acc.mean() - mean).abs() < 1e-14);
        assert!((acc.variance() - var).abs() < 1e-12);
    }

    #[test]
    fn polynomial_variances() {
        // var (ω+e)² = 4ω²s² + 2s⁴
        assert!((Transform::Square.variance(1.0, 1.0) - 6.0).abs() < 1e-12);
        // var e³ = E e⁶ = 15 s⁶
        assert!((Transform::Cube.variance(0.0, 2.0) - 15.0 * 64.0).abs() < 1e-9);
    }
}
