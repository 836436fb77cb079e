use crate::adjust::Regressor;
use crate::data::Covariates;
use crate::linalg::weighted_ols;

/// Least-squares linear fit with intercept.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear {
    pub intercept: f64,
    pub coef: Vec<f64>,
}

impl Linear {
    pub fn fit(x: &Covariates, y: &[f64]) -> Self {
        let b = weighted_ols((0..x.rows()).map(|i| x.row(i)), y, None, x.cols());
        Self { intercept: b[0], coef: b[1..].to_vec() }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.intercept + self.coef.iter().zip(x).map(|(b, v)| b * v).sum::<f64>()
    }
}

impl Regressor for Linear {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.coef.len() + 1
    }
}
