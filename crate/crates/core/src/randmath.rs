//! Seeded sampling and the normal-moment machinery behind the data
//! generators and the variance theory.

use std::f64::consts::PI;

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, Matrix};
use crate::scalar::Scalar;

/// Pivot tolerance for covariance factorisation.
pub const PSD_TOLERANCE: f64 = 1e-10;

/// Default Gauss-Hermite node count (exact through polynomial degree 79).
pub const DEFAULT_QUADRATURE_NODES: usize = 40;

/// A `(seed, stream)` pair naming one reproducible ChaCha8 stream.
///
/// Streams sharing a seed but differing in `stream` are independent
/// keystreams of the same cipher key, so per-replication generators can be
/// derived without any ordering dependence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(from = "RngStateRepr", into = "RngStateRepr")]
pub struct RngState {
    pub seed: u64,
    pub stream: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RngStateRepr {
    Seed(u64),
    Full { seed: u64, stream: u64 },
}

impl From<RngStateRepr> for RngState {
    fn from(r: RngStateRepr) -> Self {
        match r {
            RngStateRepr::Seed(seed) => RngState::new(seed),
            RngStateRepr::Full { seed, stream } => RngState { seed, stream },
        }
    }
}

impl From<RngState> for RngStateRepr {
    fn from(s: RngState) -> Self {
        RngStateRepr::Full {
            seed: s.seed,
            stream: s.stream,
        }
    }
}

impl RngState {
    pub const fn new(seed: u64) -> Self {
        Self { seed, stream: 0 }
    }

    pub const fn with_stream(seed: u64, stream: u64) -> Self {
        Self { seed, stream }
    }

    /// Fresh generator positioned at the start of this stream.
    pub fn rng(&self) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(self.stream);
        rng
    }

    /// Derived stream identified by `tag`; same key, different nonce.
    pub fn substream(&self, tag: u64) -> Self {
        Self {
            seed: self.seed,
            stream: splitmix64(self.stream ^ splitmix64(tag.wrapping_add(0x9E37_79B9_7F4A_7C15))),
        }
    }

    /// Substream for a path of tags, e.g. `[replication, role]`.
    pub fn derive(&self, tags: &[u64]) -> Self {
        tags.iter().fold(*self, |s, &t| s.substream(t))
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Draws one standard normal in the requested precision.
pub fn standard_normal<T: Scalar, R: Rng + ?Sized>(rng: &mut R) -> T {
    let z: f64 = StandardNormal.sample(rng);
    T::of(z)
}

/// Symmetric covariance matrix stored as its packed lower triangle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Vec<T>>", into = "Vec<Vec<T>>")]
#[serde(bound(serialize = "T: Scalar + Serialize", deserialize = "T: Scalar + Deserialize<'de>"))]
pub struct CovarianceMatrix<T: Scalar> {
    dim: usize,
    lower: Vec<T>,
}

impl<T: Scalar> CovarianceMatrix<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            lower: vec![T::zero(); dim * (dim + 1) / 2],
        }
    }

    pub fn identity(dim: usize) -> Self {
        let mut c = Self::zeros(dim);
        for i in 0..dim {
            c.lower[tri(i, i)] = T::one();
        }
        c
    }

    pub fn diagonal(values: &[T]) -> Self {
        let mut c = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            c.lower[tri(i, i)] = v;
        }
        c
    }

    /// From full rows; the input must be exactly symmetric.
    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let dim = rows.len();
        let mut lower = Vec::with_capacity(dim * (dim + 1) / 2);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != dim {
                return Err(Error::InvalidSpec(format!(
                    "covariance row {i} has {} entries, expected {dim}",
                    row.len()
                )));
            }
            for j in 0..=i {
                if row[j] != rows[j][i] {
                    return Err(Error::InvalidSpec(format!(
                        "covariance is not symmetric at ({i}, {j})"
                    )));
                }
                lower.push(row[j]);
            }
        }
        Ok(Self { dim, lower })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize) -> T {
        if i >= j {
            self.lower[tri(i, j)]
        } else {
            self.lower[tri(j, i)]
        }
    }

    pub fn to_matrix(&self) -> Matrix<T> {
        Matrix::from_fn(self.dim, self.dim, |i, j| self.get(i, j))
    }

    pub fn to_rows(&self) -> Vec<Vec<T>> {
        self.to_matrix().to_rows()
    }

    pub fn is_zero(&self) -> bool {
        self.lower.iter().all(|&x| x == T::zero())
    }

    /// Lower factor `L` with `L Lᵀ = self`.
    pub fn cholesky(&self) -> Result<Matrix<T>> {
        cholesky(self)
    }
}

impl<T: Scalar> TryFrom<Vec<Vec<T>>> for CovarianceMatrix<T> {
    type Error = Error;
    fn try_from(rows: Vec<Vec<T>>) -> Result<Self> {
        Self::from_rows(&rows)
    }
}

impl<T: Scalar> From<CovarianceMatrix<T>> for Vec<Vec<T>> {
    fn from(c: CovarianceMatrix<T>) -> Self {
        c.to_rows()
    }
}

fn tri(i: usize, j: usize) -> usize {
    i * (i + 1) / 2 + j
}

/// Cholesky factor of a covariance, accepting semi-definite input.
pub fn cholesky<T: Scalar>(cov: &CovarianceMatrix<T>) -> Result<Matrix<T>> {
    linalg::cholesky(&cov.to_matrix(), T::of(PSD_TOLERANCE))
}

/// Reusable sampler for `N(mean, cov)`.
#[derive(Debug, Clone)]
pub struct MvnSampler<T: Scalar> {
    mean: Vec<T>,
    factor: Matrix<T>,
    scratch: Vec<T>,
}

impl<T: Scalar> MvnSampler<T> {
    pub fn new(mean: &[T], cov: &CovarianceMatrix<T>) -> Result<Self> {
        if mean.len() != cov.dim() {
            return Err(Error::WidthMismatch {
                expected: cov.dim(),
                actual: mean.len(),
            });
        }
        Ok(Self {
            mean: mean.to_vec(),
            factor: cholesky(cov)?,
            scratch: vec![T::zero(); mean.len()],
        })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    /// Writes one draw into `out`; always consumes `dim` normals.
    pub fn sample_into<R: Rng + ?Sized>(&mut self, rng: &mut R, out: &mut [T]) {
        let d = self.mean.len();
        for z in self.scratch.iter_mut() {
            *z = standard_normal(rng);
        }
        for i in 0..d {
            let mut acc = self.mean[i];
            for k in 0..=i {
                acc += self.factor[(i, k)] * self.scratch[k];
            }
            out[i] = acc;
        }
    }

    pub fn sample<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Vec<T> {
        let mut out = vec![T::zero(); self.dim()];
        self.sample_into(rng, &mut out);
        out
    }
}

/// `count` i.i.d. rows from `N(mean, cov)` drawn from the given stream.
pub fn mvn_sample<T: Scalar>(
    mean: &[T],
    cov: &CovarianceMatrix<T>,
    count: usize,
    state: RngState,
) -> Result<Matrix<T>> {
    let mut sampler = MvnSampler::new(mean, cov)?;
    let mut rng = state.rng();
    let d = mean.len();
    let mut out = Matrix::zeros(count, d);
    for i in 0..count {
        sampler.sample_into(&mut rng, out.row_mut(i));
    }
    Ok(out)
}

/// `m!! = m (m-2) (m-4) ...`, with `0!! = (-1)!! = 1`.
pub fn double_factorial(m: i64) -> u128 {
    assert!(m >= -1, "double factorial is defined for m >= -1");
    let mut acc: u128 = 1;
    let mut k = m;
    while k > 1 {
        acc *= k as u128;
        k -= 2;
    }
    acc
}

/// `E[ε^order]` for `ε ~ N(0, σ²)`: zero for odd orders, `σ^order (order-1)!!` otherwise.
pub fn normal_central_moment<T: Scalar>(order: u32, sigma: T) -> T {
    if order % 2 == 1 {
        return T::zero();
    }
    let mut df = T::one();
    let mut k = order as i64 - 1;
    while k > 1 {
        df *= T::of(k as f64);
        k -= 2;
    }
    sigma.powi(order as i32) * df
}

/// Gauss-Hermite rule for `∫ exp(-x²) f(x) dx`.
#[derive(Debug, Clone)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// Nodes by Newton iteration on the normalised Hermite recurrence.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one quadrature node");
        const PIM4: f64 = 0.751_125_544_464_942_5; // π^(-1/4)
        let nf = n as f64;
        let mut x = vec![0.0; n];
        let mut w = vec![0.0; n];
        let mut z = 0.0_f64;
        for i in 0..n.div_ceil(2) {
            z = match i {
                0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-0.16667),
                1 => z - 1.14 * nf.powf(0.426) / z,
                2 => 1.86 * z - 0.86 * x[0],
                3 => 1.91 * z - 0.91 * x[1],
                _ => 2.0 * z - x[i - 2],
            };
            let mut pp = 0.0;
            for _ in 0..100 {
                let mut p1 = PIM4;
                let mut p2 = 0.0;
                for j in 1..=n {
                    let p3 = p2;
                    p2 = p1;
                    let jf = j as f64;
                    p1 = z * (2.0 / jf).sqrt() * p2 - ((jf - 1.0) / jf).sqrt() * p3;
                }
                pp = (2.0 * nf).sqrt() * p2;
                let z1 = z;
                z = z1 - p1 / pp;
                if (z - z1).abs() <= 1e-14 * z.abs().max(1.0) {
                    break;
                }
            }
            x[i] = z;
            x[n - 1 - i] = -z;
            w[i] = 2.0 / (pp * pp);
            w[n - 1 - i] = w[i];
        }
        Self {
            nodes: x,
            weights: w,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[g(W)]` for `W ~ N(mu, sigma2)`.
    pub fn expectation<T: Scalar>(&self, g: impl Fn(T) -> T, mu: T, sigma2: T) -> Result<T> {
        let scale = (T::of(2.0) * sigma2).sqrt();
        let mut acc = T::zero();
        for (&x, &w) in self.nodes.iter().zip(&self.weights) {
            let abscissa = mu + scale * T::of(x);
            let v = g(abscissa);
            if !v.is_finite() {
                return Err(Error::NonFiniteIntegrand {
                    abscissa: abscissa.as_f64(),
                });
            }
            acc += T::of(w) * v;
        }
        Ok(acc / T::of(PI.sqrt()))
    }
}

/// `E[g(W)]`, `W ~ N(mu, sigma2)`, by `nodes`-point Gauss-Hermite.
pub fn gauss_hermite_expectation<T: Scalar>(
    g: impl Fn(T) -> T,
    mu: T,
    sigma2: T,
    nodes: usize,
) -> Result<T> {
    if nodes < 2 {
        return Err(Error::Domain(format!("need at least 2 quadrature nodes, got {nodes}")));
    }
    GaussHermite::new(nodes).expectation(g, mu, sigma2)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn double_factorials() {
        assert_eq!(double_factorial(5), 15);
        assert_eq!(double_factorial(0), 1);
        assert_eq!(double_factorial(-1), 1);
        assert_eq!(double_factorial(7), 105);
        assert_eq!(double_factorial(8), 384);
    }

    #[test]
    fn central_moments() {
        assert_eq!(normal_central_moment(2, 1.0_f64), 1.0);
        assert_eq!(normal_central_moment(4, 1.0_f64), 3.0);
        assert_eq!(normal_central_moment(3, 2.0_f64), 0.0);
        assert_eq!(normal_central_moment(0, 2.0_f64), 1.0);
        assert_eq!(normal_central_moment(6, 2.0_f64), 64.0 * 15.0);
    }

    #[test]
    fn hermite_weights_sum_to_sqrt_pi() {
        for n in [2, 5, 10, 40, 64] {
            let rule = GaussHermite::new(n);
            let s: f64 = rule.weights().iter().sum();
            assert!((s - PI.sqrt()).abs() < 1e-12, "n={n}: {s}");
            assert!(rule.nodes().windows(2).all(|w| w[0] > w[1]));
        }
    }

    #[test]
    fn quadrature_polynomial_exactness() {
        let m = gauss_hermite_expectation(|w: f64| w, 3.5, 2.0, 2).unwrap();
        assert!((m - 3.5).abs() < 1e-12);
        let v = gauss_hermite_expectation(|w: f64| w * w, 0.0, 4.0, 2).unwrap();
        assert!((v - 4.0).abs() < 1e-12);
        // degree 2n-1 = 7 with 4 nodes: E[W^6] = 15 σ^6
        let m6 = gauss_hermite_expectation(|w: f64| w.powi(6), 0.0, 1.5, 4).unwrap();
        assert!((m6 - 15.0 * 1.5f64.powi(3)).abs() < 1e-10);
    }

    #[test]
    fn quadrature_lognormal_mean() {
        let m = gauss_hermite_expectation(f64::exp, 0.0, 1.0, DEFAULT_QUADRATURE_NODES).unwrap();
        assert!((m - 0.5f64.exp()).abs() < 1e-8);
    }

    #[test]
    fn quadrature_rejects_non_finite() {
        let r = gauss_hermite_expectation(|w: f64| w.ln(), 0.0, 1.0, 10);
        assert!(matches!(r, Err(Error::NonFiniteIntegrand { .. })));
        assert!(gauss_hermite_expectation(|w: f64| w, 0.0, 1.0, 1).is_err());
    }

    #[test]
    fn zero_covariance_returns_mean() {
        let cov = CovarianceMatrix::<f64>::zeros(2);
        let rows = mvn_sample(&[1.5, -2.0], &cov, 10, RngState::new(3)).unwrap();
        for i in 0..10 {
            assert_eq!(rows.row(i), &[1.5, -2.0]);
        }
    }

    #[test]
    fn sampling_is_deterministic_and_streams_differ() {
        let cov = CovarianceMatrix::<f64>::identity(3);
        let s = RngState::with_stream(11, 4);
        let a = mvn_sample(&[0.0; 3], &cov, 50, s).unwrap();
        let b = mvn_sample(&[0.0; 3], &cov, 50, s).unwrap();
        assert_eq!(a, b);
        let c = mvn_sample(&[0.0; 3], &cov, 50, s.substream(1)).unwrap();
        assert_ne!(a, c);
        assert_ne!(s.substream(1), s.substream(2));
        assert_eq!(s.derive(&[1, 2]), s.substream(1).substream(2));
    }

    #[test]
    fn covariance_json_is_row_major() {
        let c = CovarianceMatrix::from_rows(&[vec![38.0, 20.5], vec![20.5, 34.5]]).unwrap();
        let json = serde_json::to_string(&c).unwrap();
        assert_eq!(json, "[[38.0,20.5],[20.5,34.5]]");
        let back: CovarianceMatrix<f64> = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert!(serde_json::from_str::<CovarianceMatrix<f64>>("[[1.0,0.5],[0.4,1.0]]").is_err());
    }

    #[test]
    fn rng_state_accepts_bare_seed() {
        let s: RngState = serde_json::from_str("42").unwrap();
        assert_eq!(s, RngState::new(42));
        let s: RngState = serde_json::from_str(r#"{"seed":1,"stream":9}"#).unwrap();
        assert_eq!(s, RngState::with_stream(1, 9));
    }
}
