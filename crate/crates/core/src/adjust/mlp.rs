use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::adjust::{Hyperparams, Regressor};
use crate::data::Covariates;
use crate::linalg::{mean, sd};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MlpParams {
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl MlpParams {
    pub fn from_hyper(h: &Hyperparams) -> Self {
        Self { width: h.width, epochs: h.epochs, learning_rate: h.learning_rate, weight_decay: h.weight_decay }
    }
}

/// Initial weights are uniform on `[-INIT_RANGE, INIT_RANGE]`.
const INIT_RANGE: f64 = 0.7;

/// One-hidden-layer tanh network with a linear output, trained full batch on
/// standardized inputs and outputs.
///
/// The training objective is `(SSE + decay * |W|^2) / (2m)`, where `W` holds
/// the connection weights of both layers (biases are not penalized). The
/// parameter vector is laid out as `[W1 (width x d, row-major), b1, w2, b2]`.
#[derive(Debug, Clone)]
pub struct Mlp {
    d: usize,
    width: usize,
    params: Vec<f64>,
    x_mean: Vec<f64>,
    x_scale: Vec<f64>,
    y_mean: f64,
    y_scale: f64,
    pub final_loss: f64,
}

pub fn param_count(d: usize, width: usize) -> usize {
    width * d + 2 * width + 1
}

/// Objective value and its gradient at `params` for standardized data.
pub fn loss_and_grad(params: &[f64], x: &DMatrix<f64>, y: &DVector<f64>, width: usize, decay: f64) -> (f64, Vec<f64>) {
    let (m, d) = (x.nrows(), x.ncols());
    let mf = m as f64;
    let w1 = DMatrix::from_row_slice(width, d, &params[..width * d]);
    let b1 = &params[width * d..width * d + width];
    let w2 = DVector::from_column_slice(&params[width * d + width..width * d + 2 * width]);
    let b2 = params[width * d + 2 * width];

    let mut h = x * w1.transpose();
    for mut row in h.row_iter_mut() {
        for (v, b) in row.iter_mut().zip(b1) {
            *v = (*v + b).tanh();
        }
    }
    let mut err = &h * &w2;
    err.add_scalar_mut(b2);
    err -= y;
    let penalty = w1.norm_squared() + w2.norm_squared();
    let loss = (err.norm_squared() + decay * penalty) / (2.0 * mf);

    let g_out = err / mf;
    let g_w2 = h.tr_mul(&g_out) + &w2 * (decay / mf);
    let g_b2 = g_out.sum();
    // Back-propagate through tanh: dZ = (g_out w2^T) .* (1 - H^2).
    let mut g_z = &g_out * w2.transpose();
    g_z.zip_apply(&h, |g, hv| *g *= 1.0 - hv * hv);
    let g_w1 = g_z.tr_mul(x) + w1 * (decay / mf);
    let g_b1 = g_z.row_sum();

    let mut grad = Vec::with_capacity(params.len());
    for r in 0..width {
        grad.extend(g_w1.row(r).iter());
    }
    grad.extend(g_b1.iter());
    grad.extend(g_w2.iter());
    grad.push(g_b2);
    (loss, grad)
}

impl Mlp {
    pub fn fit<R: Rng + ?Sized>(x: &Covariates, y: &[f64], p: &MlpParams, rng: &mut R) -> Self {
        let (m, d) = (x.rows(), x.cols());
        let x_mean: Vec<f64> = (0..d).map(|j| mean(&x.column(j))).collect();
        let x_scale: Vec<f64> = (0..d).map(|j| sd(&x.column(j))).collect();
        let (y_mean, y_scale) = (mean(y), sd(y));
        let width = p.width;
        let n_par = param_count(d, width);
        let mut params: Vec<f64> = (0..n_par).map(|_| rng.random_range(-INIT_RANGE..=INIT_RANGE)).collect();
        let mut net = Self { d, width, params: Vec::new(), x_mean, x_scale, y_mean, y_scale, final_loss: 0.0 };
        if y_scale == 0.0 {
            // Constant outcome: the output layer alone reproduces it.
            params.iter_mut().for_each(|v| *v = 0.0);
            net.params = params;
            return net;
        }
        let xs = DMatrix::from_fn(m, d, |i, j| net.std_x(j, x.get(i, j)));
        let ys = DVector::from_iterator(m, y.iter().map(|v| (v - y_mean) / y_scale));

        // Adam on the full batch.
        let (beta1, beta2, eps): (f64, f64, f64) = (0.9, 0.999, 1e-8);
        let mut m1 = vec![0.0; n_par];
        let mut m2 = vec![0.0; n_par];
        let mut loss = f64::NAN;
        for t in 1..=p.epochs {
            let (l, g) = loss_and_grad(&params, &xs, &ys, width, p.weight_decay);
            loss = l;
            let c1 = 1.0 - beta1.powi(t as i32);
            let c2 = 1.0 - beta2.powi(t as i32);
            for k in 0..n_par {
                m1[k] = beta1 * m1[k] + (1.0 - beta1) * g[k];
                m2[k] = beta2 * m2[k] + (1.0 - beta2) * g[k] * g[k];
                params[k] -= p.learning_rate * (m1[k] / c1) / ((m2[k] / c2).sqrt() + eps);
            }
        }
        net.params = params;
        net.final_loss = loss;
        net
    }

    #[inline]
    fn std_x(&self, j: usize, v: f64) -> f64 {
        if self.x_scale[j] > 0.0 {
            (v - self.x_mean[j]) / self.x_scale[j]
        } else {
            0.0
        }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.y_scale == 0.0 {
            return self.y_mean;
        }
        let (d, w) = (self.d, self.width);
        let p = &self.params;
        let mut out = p[w * d + 2 * w];
        for u in 0..w {
            let mut z = p[w * d + u];
            for j in 0..d {
                z += p[u * d + j] * self.std_x(j, x[j]);
            }
            out += p[w * d + w + u] * z.tanh();
        }
        self.y_mean + self.y_scale * out
    }
}

impl Regressor for Mlp {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.params.len()
    }
}
