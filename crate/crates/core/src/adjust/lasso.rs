use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::Rng;

use crate::adjust::{Hyperparams, Regressor};
use crate::data::Covariates;

#[inline]
pub fn soft_threshold(z: f64, gamma: f64) -> f64 {
    if z > gamma {
        z - gamma
    } else if z < -gamma {
        z + gamma
    } else {
        0.0
    }
}

/// Cross-validation record of the penalty search.
#[derive(Debug, Clone, PartialEq)]
pub struct LassoPath {
    pub lambdas: Vec<f64>,
    pub cv_mse: Vec<f64>,
    pub chosen: usize,
}

/// L1-penalized least squares, `1/(2m) |y - b0 - X b|^2 + lambda |b|_1`, solved
/// on standardized columns and reported on the original scale.
#[derive(Debug, Clone, PartialEq)]
pub struct Lasso {
    pub intercept: f64,
    pub coef: Vec<f64>,
    pub lambda: f64,
    pub path: Option<LassoPath>,
}

/// Centred and scaled training problem in Gram form.
struct Problem {
    means: Vec<f64>,
    scales: Vec<f64>,
    y_mean: f64,
    gram: DMatrix<f64>,
    corr: DVector<f64>,
    tol: f64,
}

/// A sweep has converged when the largest objective change `g_jj * delta_j^2`
/// falls below this fraction of the outcome variance.
const CONVERGENCE: f64 = 1e-7;

impl Problem {
    fn new(x: &Covariates, y: &[f64], rows: &[usize]) -> Self {
        let (m, p) = (rows.len(), x.cols());
        let mf = m as f64;
        let y_mean = rows.iter().map(|&i| y[i]).sum::<f64>() / mf;
        let mut means = vec![0.0; p];
        for &i in rows {
            for (mu, v) in means.iter_mut().zip(x.row(i)) {
                *mu += v;
            }
        }
        means.iter_mut().for_each(|mu| *mu /= mf);
        let mut z = DMatrix::<f64>::zeros(m, p);
        for (r, &i) in rows.iter().enumerate() {
            for (j, v) in x.row(i).iter().enumerate() {
                z[(r, j)] = v - means[j];
            }
        }
        let mut scales = vec![0.0; p];
        for j in 0..p {
            let s = (z.column(j).norm_squared() / mf).sqrt();
            // Columns that are constant up to rounding carry no signal.
            if s > 1e-12 * (1.0 + means[j].abs()) {
                scales[j] = s;
                z.column_mut(j).scale_mut(1.0 / s);
            } else {
                z.column_mut(j).fill(0.0);
            }
        }
        let yc = DVector::from_iterator(m, rows.iter().map(|&i| y[i] - y_mean));
        let y_var = yc.norm_squared() / mf;
        let tol = CONVERGENCE * y_var.max(1e-300);
        let gram = z.tr_mul(&z) / mf;
        let corr = z.tr_mul(&yc) / mf;
        Self { means, scales, y_mean, gram, corr, tol }
    }

    fn lambda_max(&self) -> f64 {
        self.corr.iter().fold(0.0f64, |a, c| a.max(c.abs()))
    }

    /// Coordinate descent over a decreasing penalty sequence with warm starts.
    fn path(&self, lambdas: &[f64]) -> Vec<Vec<f64>> {
        let p = self.corr.len();
        let mut b = vec![0.0; p];
        // grad[j] = corr[j] - sum_k gram[j,k] b[k]
        let mut grad: Vec<f64> = self.corr.iter().copied().collect();
        let mut out = Vec::with_capacity(lambdas.len());
        for &lam in lambdas {
            for _ in 0..1000 {
                let mut change = self.sweep(lam, &mut b, &mut grad, None);
                if change < self.tol {
                    break;
                }
                let active: Vec<usize> = (0..p).filter(|&j| b[j] != 0.0).collect();
                for _ in 0..10_000 {
                    change = self.sweep(lam, &mut b, &mut grad, Some(&active));
                    if change < self.tol {
                        break;
                    }
                }
            }
            out.push(b.clone());
        }
        out
    }

    fn sweep(&self, lam: f64, b: &mut [f64], grad: &mut [f64], set: Option<&[usize]>) -> f64 {
        let p = b.len();
        let mut max_change = 0.0f64;
        let mut step = |j: usize, b: &mut [f64], grad: &mut [f64]| {
            let gjj = self.gram[(j, j)];
            if gjj <= 0.0 {
                return;
            }
            let new = soft_threshold(grad[j] + gjj * b[j], lam) / gjj;
            let delta = new - b[j];
            if delta != 0.0 {
                b[j] = new;
                let col = self.gram.column(j);
                for (g, gk) in grad.iter_mut().zip(col.iter()) {
                    *g -= gk * delta;
                }
                max_change = max_change.max(gjj * delta * delta);
            }
        };
        match set {
            Some(s) => s.iter().for_each(|&j| step(j, b, grad)),
            None => (0..p).for_each(|j| step(j, b, grad)),
        }
        max_change
    }

    fn to_original(&self, b: &[f64]) -> (f64, Vec<f64>) {
        let coef: Vec<f64> =
            b.iter().zip(&self.scales).map(|(bj, s)| if *s > 0.0 { bj / s } else { 0.0 }).collect();
        let intercept = self.y_mean - coef.iter().zip(&self.means).map(|(c, mu)| c * mu).sum::<f64>();
        (intercept, coef)
    }
}

fn log_grid(hi: f64, ratio: f64, len: usize) -> Vec<f64> {
    if hi <= 0.0 {
        return vec![0.0];
    }
    (0..len).map(|i| hi * ratio.powf(i as f64 / (len - 1) as f64)).collect()
}

impl Lasso {
    /// Smallest penalty at which every slope is zero.
    pub fn lambda_max(x: &Covariates, y: &[f64]) -> f64 {
        let rows: Vec<usize> = (0..x.rows()).collect();
        Problem::new(x, y, &rows).lambda_max()
    }

    pub fn fit_lambda(x: &Covariates, y: &[f64], lambda: f64) -> Self {
        let rows: Vec<usize> = (0..x.rows()).collect();
        let prob = Problem::new(x, y, &rows);
        let b = prob.path(&[lambda]).pop().expect("one penalty");
        let (intercept, coef) = prob.to_original(&b);
        Self { intercept, coef, lambda, path: None }
    }

    /// Uses `h.lambda` when set, otherwise the cross-validated minimum-MSE penalty.
    pub fn fit<R: Rng + ?Sized>(x: &Covariates, y: &[f64], h: &Hyperparams, rng: &mut R) -> Self {
        if let Some(lam) = h.lambda {
            return Self::fit_lambda(x, y, lam);
        }
        let m = x.rows();
        let rows: Vec<usize> = (0..m).collect();
        let full = Problem::new(x, y, &rows);
        let lambdas = log_grid(full.lambda_max(), h.lambda_ratio, h.lambda_grid);
        let folds = h.cv_folds.min(m);
        let mut order = rows.clone();
        order.shuffle(rng);
        let mut cv_mse = vec![0.0; lambdas.len()];
        for f in 0..folds {
            let (mut train, mut valid) = (Vec::new(), Vec::new());
            for (pos, &i) in order.iter().enumerate() {
                if pos % folds == f {
                    valid.push(i);
                } else {
                    train.push(i);
                }
            }
            let prob = Problem::new(x, y, &train);
            for (l, b) in prob.path(&lambdas).iter().enumerate() {
                let (b0, coef) = prob.to_original(b);
                let sse: f64 = valid
                    .iter()
                    .map(|&i| {
                        let pred = b0 + coef.iter().zip(x.row(i)).map(|(c, v)| c * v).sum::<f64>();
                        (y[i] - pred).powi(2)
                    })
                    .sum();
                cv_mse[l] += sse / m as f64;
            }
        }
        let chosen = cv_mse
            .iter()
            .enumerate()
            .fold(0, |best, (l, v)| if *v < cv_mse[best] { l } else { best });
        let b = full.path(&lambdas[..=chosen]).pop().expect("nonempty path");
        let (intercept, coef) = full.to_original(&b);
        Self { intercept, coef, lambda: lambdas[chosen], path: Some(LassoPath { lambdas, cv_mse, chosen }) }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(c, v)| c * v).sum::<f64>()
    }

    pub fn nonzero(&self) -> usize {
        self.coef.iter().filter(|c| **c != 0.0).count()
    }
}

impl Regressor for Lasso {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.nonzero() + 1
    }
}
