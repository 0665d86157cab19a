//! Cross-validation scores from per-fold Gram matrices.
//!
//! Columns are centred and scaled to unit variance first (which leaves
//! every OLS fit with an intercept unchanged), then each fold keeps
//! `XᵀX`, `Xᵀy` and `yᵀy` for its held-out rows. Removing a term from a
//! full-rank model is a rank-`|P|` downdate of the inverse Gram matrix, so
//! one elimination step costs one inversion per fold plus `O(d²)` per
//! candidate.

use crate::linalg::Matrix;
use crate::prepare::DesignMatrix;
use crate::scalar::Scalar;

/// Pivots below this fraction of the column's squared norm count as
/// linearly dependent.
const PIVOT_TOLERANCE: f64 = 1e-9;

struct Fold {
    n_test: f64,
    /// Held-out Gram matrix and cross products.
    test_gram: Matrix<f64>,
    test_xy: Vec<f64>,
    test_yy: f64,
    train_gram: Matrix<f64>,
    train_xy: Vec<f64>,
}

pub(super) struct GramCv {
    folds: Vec<Fold>,
    /// Design columns per term, offset by one for the intercept.
    term_columns: Vec<Vec<usize>>,
}

fn symmetric_sub(g: &Matrix<f64>, idx: &[usize]) -> Matrix<f64> {
    Matrix::from_fn(idx.len(), idx.len(), |i, j| g[(idx[i], idx[j])])
}

/// Lower Cholesky factor, or `None` when a pivot falls below tolerance.
fn cholesky(g: &Matrix<f64>) -> Option<Matrix<f64>> {
    let d = g.rows();
    let mut l = Matrix::zeros(d, d);
    for j in 0..d {
        let mut pivot = g[(j, j)];
        for k in 0..j {
            pivot -= l[(j, k)] * l[(j, k)];
        }
        if !(pivot > PIVOT_TOLERANCE * g[(j, j)]) {
            return None;
        }
        let root = pivot.sqrt();
        l[(j, j)] = root;
        for i in j + 1..d {
            let mut s = g[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / root;
        }
    }
    Some(l)
}

fn cholesky_solve(l: &Matrix<f64>, b: &[f64]) -> Vec<f64> {
    let d = l.rows();
    let mut z = b.to_vec();
    for i in 0..d {
        for k in 0..i {
            z[i] -= l[(i, k)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    for i in (0..d).rev() {
        for k in i + 1..d {
            z[i] -= l[(k, i)] * z[k];
        }
        z[i] /= l[(i, i)];
    }
    z
}

fn inverse(l: &Matrix<f64>) -> Matrix<f64> {
    let d = l.rows();
    let mut inv = Matrix::zeros(d, d);
    let mut e = vec![0.0; d];
    for j in 0..d {
        e.fill(0.0);
        e[j] = 1.0;
        let col = cholesky_solve(l, &e);
        for i in 0..d {
            inv[(i, j)] = col[i];
        }
    }
    inv
}

impl Fold {
    /// Held-out RMSE for coefficients `b` on columns `cols`.
    fn rmse(&self, cols: &[usize], b: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut cross = 0.0;
        for (i, &ci) in cols.iter().enumerate() {
            if b[i] == 0.0 {
                continue;
            }
            cross += b[i] * self.test_xy[ci];
            let row = self.test_gram.row(ci);
            let mut s = 0.0;
            for (j, &cj) in cols.iter().enumerate() {
                s += row[cj] * b[j];
            }
            quad += b[i] * s;
        }
        ((self.test_yy - 2.0 * cross + quad).max(0.0) / self.n_test).sqrt()
    }

    fn fit(&self, cols: &[usize]) -> Option<(Matrix<f64>, Vec<f64>)> {
        let l = cholesky(&symmetric_sub(&self.train_gram, cols))?;
        let rhs: Vec<f64> = cols.iter().map(|&c| self.train_xy[c]).collect();
        Some((l.clone(), cholesky_solve(&l, &rhs)))
    }
}

impl GramCv {
    pub(super) fn new<T: Scalar>(dm: &DesignMatrix<T>, y: &[T], labels: &[usize], folds: usize) -> Self {
        let (n, d) = (dm.rows(), dm.cols());
        let dim = d + 1;
        let mut mean = vec![0.0; d];
        for i in 0..n {
            for (m, v) in mean.iter_mut().zip(dm.values.row(i)) {
                *m += v.as_f64();
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f64);
        let mut sd = vec![0.0; d];
        for i in 0..n {
            for ((s, v), m) in sd.iter_mut().zip(dm.values.row(i)).zip(&mean) {
                *s += (v.as_f64() - m).powi(2);
            }
        }
        for s in &mut sd {
            *s = (*s / n as f64).sqrt();
            if !(*s > 0.0) {
                // constant column: leave it at zero so it reads as dependent
                *s = f64::INFINITY;
            }
        }
        let y_mean = y.iter().map(|v| v.as_f64()).sum::<f64>() / n as f64;

        let mut out: Vec<Fold> = (0..folds)
            .map(|_| Fold {
                n_test: 0.0,
                test_gram: Matrix::zeros(dim, dim),
                test_xy: vec![0.0; dim],
                test_yy: 0.0,
                train_gram: Matrix::zeros(0, 0),
                train_xy: Vec::new(),
            })
            .collect();
        let mut row = vec![0.0; dim];
        row[0] = 1.0;
        for i in 0..n {
            for (j, v) in dm.values.row(i).iter().enumerate() {
                row[j + 1] = (v.as_f64() - mean[j]) / sd[j];
            }
            let yi = y[i].as_f64() - y_mean;
            let f = &mut out[labels[i]];
            f.n_test += 1.0;
            f.test_yy += yi * yi;
            for a in 0..dim {
                f.test_xy[a] += row[a] * yi;
                let ra = row[a];
                if ra == 0.0 {
                    continue;
                }
                let g = f.test_gram.row_mut(a);
                for b in 0..=a {
                    g[b] += ra * row[b];
                }
            }
        }
        let mut total: Matrix<f64> = Matrix::zeros(dim, dim);
        let mut total_xy = vec![0.0; dim];
        for f in &mut out {
            for a in 0..dim {
                for b in 0..a {
                    f.test_gram[(b, a)] = f.test_gram[(a, b)];
                }
            }
            for (t, v) in total.as_mut_slice().iter_mut().zip(f.test_gram.as_slice()) {
                *t += v;
            }
            for (t, v) in total_xy.iter_mut().zip(&f.test_xy) {
                *t += v;
            }
        }
        for f in &mut out {
            f.train_gram = Matrix::from_fn(dim, dim, |a, b| total[(a, b)] - f.test_gram[(a, b)]);
            f.train_xy = total_xy.iter().zip(&f.test_xy).map(|(t, v)| t - v).collect();
        }
        let term_columns = dm
            .terms
            .iter()
            .map(|t| t.columns.iter().map(|c| c + 1).collect())
            .collect();
        Self {
            folds: out,
            term_columns,
        }
    }

    fn columns(&self, terms: &[usize]) -> Vec<usize> {
        let mut cols = vec![0];
        for &t in terms {
            cols.extend_from_slice(&self.term_columns[t]);
        }
        cols
    }

    /// Mean held-out RMSE of the model with these terms; `+∞` when any
    /// training fold is rank deficient.
    pub(super) fn score(&self, terms: &[usize]) -> f64 {
        let cols = self.columns(terms);
        let mut total = 0.0;
        for f in &self.folds {
            match f.fit(&cols) {
                Some((_, b)) => total += f.rmse(&cols, &b),
                None => return f64::INFINITY,
            }
        }
        total / self.folds.len() as f64
    }

    /// Scores of every single-term removal from `current`, in order.
    pub(super) fn removal_scores(&self, current: &[usize]) -> Vec<f64> {
        let cols = self.columns(current);
        // positions of each term's columns inside `cols`
        let mut positions = Vec::with_capacity(current.len());
        let mut next = 1;
        for &t in current {
            let w = self.term_columns[t].len();
            positions.push((next..next + w).collect::<Vec<_>>());
            next += w;
        }
        let fits: Option<Vec<_>> = self.folds.iter().map(|f| f.fit(&cols)).collect();
        let Some(fits) = fits else {
            // current model is rank deficient: score candidates directly
            return (0..current.len())
                .map(|pos| {
                    let mut cand = current.to_vec();
                    cand.remove(pos);
                    self.score(&cand)
                })
                .collect();
        };
        let inverses: Vec<Matrix<f64>> = fits.iter().map(|(l, _)| inverse(l)).collect();
        let mut scores = vec![0.0; current.len()];
        for ((fold, (_, b)), inv) in self.folds.iter().zip(&fits).zip(&inverses) {
            for (pos, p) in positions.iter().enumerate() {
                // b' = b − M[:,P] M[P,P]⁻¹ b[P]
                let mpp = Matrix::from_fn(p.len(), p.len(), |i, j| inv[(p[i], p[j])]);
                let bp: Vec<f64> = p.iter().map(|&i| b[i]).collect();
                let w = match cholesky(&mpp) {
                    Some(l) => cholesky_solve(&l, &bp),
                    None => {
                        scores[pos] = f64::INFINITY;
                        continue;
                    }
                };
                let mut reduced = b.clone();
                for (r, row) in reduced.iter_mut().zip(0..cols.len()) {
                    let inv_row = inv.row(row);
                    *r -= p.iter().zip(&w).map(|(&j, wj)| inv_row[j] * wj).sum::<f64>();
                }
                for &i in p {
                    reduced[i] = 0.0;
                }
                scores[pos] += fold.rmse(&cols, &reduced);
            }
        }
        let k = self.folds.len() as f64;
        scores.iter_mut().for_each(|s| *s /= k);
        scores
    }
}
