use nalgebra::DMatrix;

use crate::adjust::Regressor;
use crate::data::Covariates;
use crate::linalg::{lstsq, quantile};

/// Covariates with fewer distinct values than this enter linearly.
const MIN_DISTINCT_FOR_SPLINE: usize = 12;

/// Natural cubic spline basis (without the constant) at knots `knots`
/// (sorted, boundary knots first and last): `x` followed by
/// `d_k(x) - d_{K-1}(x)` for `k = 1..K-2`, where
/// `d_k(x) = ((x - t_k)_+^3 - (x - t_K)_+^3) / (t_K - t_k)`.
pub fn natural_spline_basis(x: f64, knots: &[f64], out: &mut Vec<f64>) {
    let kk = knots.len();
    out.push(x);
    if kk < 3 {
        return;
    }
    let last = knots[kk - 1];
    let cube = |v: f64| if v > 0.0 { v * v * v } else { 0.0 };
    let dk = |k: usize| (cube(x - knots[k]) - cube(x - last)) / (last - knots[k]);
    let d_pen = dk(kk - 2);
    for k in 0..kk - 2 {
        out.push(dk(k) - d_pen);
    }
}

#[derive(Debug, Clone)]
struct Term {
    /// Affine map to roughly `[0, 1]` applied before the basis, for conditioning.
    shift: f64,
    scale: f64,
    /// Empty for linear terms.
    knots: Vec<f64>,
}

/// Additive natural cubic spline regression solved by least squares.
#[derive(Debug, Clone)]
pub struct NaturalSpline {
    terms: Vec<Term>,
    coef: Vec<f64>,
}

impl NaturalSpline {
    /// `df` basis functions per continuous covariate: boundary knots at the
    /// extremes and `df - 1` interior knots at equally spaced quantiles.
    pub fn fit(x: &Covariates, y: &[f64], df: usize) -> Self {
        let terms: Vec<Term> = (0..x.cols())
            .map(|j| {
                let mut col = x.column(j);
                col.sort_by(f64::total_cmp);
                let (lo, hi) = (col[0], col[col.len() - 1]);
                let scale = if hi > lo { 1.0 / (hi - lo) } else { 0.0 };
                let mut distinct = col.clone();
                distinct.dedup();
                let knots = if distinct.len() >= MIN_DISTINCT_FOR_SPLINE && df >= 2 {
                    let mut k: Vec<f64> = (0..=df).map(|q| quantile(&col, q as f64 / df as f64)).collect();
                    k.iter_mut().for_each(|v| *v = (*v - lo) * scale);
                    k.dedup();
                    k
                } else {
                    Vec::new()
                };
                Term { shift: lo, scale, knots }
            })
            .collect();
        let mut model = Self { terms, coef: Vec::new() };
        let mut row = Vec::new();
        model.basis(x.row(0), &mut row);
        let q = row.len();
        let mut design = DMatrix::<f64>::zeros(x.rows(), q);
        for i in 0..x.rows() {
            row.clear();
            model.basis(x.row(i), &mut row);
            for (c, v) in row.iter().enumerate() {
                design[(i, c)] = *v;
            }
        }
        model.coef = lstsq(&design, y).iter().copied().collect();
        model
    }

    fn basis(&self, x: &[f64], out: &mut Vec<f64>) {
        out.push(1.0);
        for (t, v) in self.terms.iter().zip(x) {
            let u = (v - t.shift) * t.scale;
            if t.knots.is_empty() {
                out.push(u);
            } else {
                natural_spline_basis(u, &t.knots, out);
            }
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut row = Vec::with_capacity(self.coef.len());
        self.basis(x, &mut row);
        row.iter().zip(&self.coef).map(|(a, b)| a * b).sum()
    }
}

impl Regressor for NaturalSpline {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.coef.len()
    }
}
