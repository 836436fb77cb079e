use nalgebra::{DMatrix, DVector};

use crate::adjust::{Linear, Regressor};
use crate::data::Covariates;
use crate::linalg::{sd, solve_spd};

/// Epanechnikov kernel `0.75 (1 - u^2)` on `[-1, 1]`.
#[inline]
pub fn epanechnikov(u: f64) -> f64 {
    if u.abs() < 1.0 {
        0.75 * (1.0 - u * u)
    } else {
        0.0
    }
}

/// Multipliers on the rule-of-thumb bandwidth tried by cross-validation,
/// first as a common factor for all coordinates and then per coordinate.
pub const CV_GRID: [f64; 8] = [0.5, 0.71, 1.0, 1.41, 2.0, 2.83, 4.0, 8.0];

const MAX_SWEEPS: usize = 8;

/// Strength of the pull of local slopes towards the global least-squares
/// slopes, relative to the local design variance `mu_2(K) h^2 = h^2 / 5` of a
/// densely populated window.
pub const SLOPE_RIDGE: f64 = 0.02;

/// Rule-of-thumb bandwidth `scale * 1.06 * sd_j * m^(-1/(d+4))`; zero for
/// constant coordinates.
pub fn rule_of_thumb(x: &Covariates, scale: f64) -> Vec<f64> {
    let sds: Vec<f64> = (0..x.cols()).map(|j| sd(&x.column(j))).collect();
    let d = sds.iter().filter(|&&s| s > 0.0).count();
    let shrink = (x.rows() as f64).powf(-1.0 / (d as f64 + 4.0));
    sds.iter().map(|s| scale * 1.06 * s * shrink).collect()
}

/// Local linear smoother with a product Epanechnikov kernel and diagonal
/// bandwidth. The prediction at `x0` is the intercept of the weighted least
/// squares fit of `y` on `X - x0`.
///
/// An infinite bandwidth removes a coordinate from the kernel weights but
/// keeps its slope, so the fit is globally linear in that direction.
///
/// Each local slope in a kernel-weighted coordinate carries the penalty
/// `SLOPE_RIDGE * W * h_j^2 * (b_j - g_j)^2`, where `W` is the total local
/// weight and `g_j` the global least-squares slope. Sparse windows (a handful
/// of nearly collinear neighbours) are thereby kept from extrapolating wildly,
/// while exactly linear data and equal weights still reproduce the global fit.
#[derive(Debug, Clone)]
pub struct LocalLinearKernel {
    x: Covariates,
    y: Vec<f64>,
    /// Bandwidth per coordinate; zero marks a constant coordinate, which is ignored.
    pub bandwidth: Vec<f64>,
    active: Vec<usize>,
    global: Linear,
    ridge: f64,
}

impl LocalLinearKernel {
    pub fn fit(x: &Covariates, y: &[f64], scale: f64) -> Self {
        Self::with_bandwidth(x, y, rule_of_thumb(x, scale))
    }

    /// Bandwidth chosen by leave-one-out least squares over multiples of the
    /// rule of thumb (see [`select_bandwidth`]).
    pub fn fit_cv(x: &Covariates, y: &[f64], scale: f64) -> Self {
        let h = select_bandwidth(x, y, &rule_of_thumb(x, scale));
        Self::with_bandwidth(x, y, h)
    }

    pub fn with_bandwidth(x: &Covariates, y: &[f64], bandwidth: Vec<f64>) -> Self {
        let active = (0..x.cols()).filter(|&j| bandwidth[j] > 0.0).collect();
        Self { x: x.clone(), y: y.to_vec(), bandwidth, active, global: Linear::fit(x, y), ridge: SLOPE_RIDGE }
    }

    pub fn eval(&self, x0: &[f64]) -> f64 {
        let q = self.active.len() + 1;
        let mut xtx = DMatrix::<f64>::zeros(q, q);
        let mut xty = DVector::<f64>::zeros(q);
        let mut z = vec![0.0; q];
        let mut any = false;
        'units: for i in 0..self.x.rows() {
            let row = self.x.row(i);
            let mut w = 1.0;
            for (c, &j) in self.active.iter().enumerate() {
                let dx = row[j] - x0[j];
                if self.bandwidth[j].is_finite() {
                    let k = epanechnikov(dx / self.bandwidth[j]);
                    if k == 0.0 {
                        continue 'units;
                    }
                    w *= k;
                }
                z[c + 1] = dx;
            }
            any = true;
            z[0] = 1.0;
            for r in 0..q {
                let wr = w * z[r];
                xty[r] += wr * self.y[i];
                for c in r..q {
                    xtx[(r, c)] += wr * z[c];
                }
            }
        }
        if !any {
            return self.global.eval(x0);
        }
        for r in 0..q {
            for c in 0..r {
                xtx[(r, c)] = xtx[(c, r)];
            }
        }
        let wsum = xtx[(0, 0)];
        for (c, &j) in self.active.iter().enumerate() {
            let h = self.bandwidth[j];
            if h.is_finite() {
                let lambda = self.ridge * wsum * h * h;
                xtx[(c + 1, c + 1)] += lambda;
                xty[c + 1] += lambda * self.global.coef[j];
            }
        }
        solve_spd(xtx, &xty)[0]
    }
}

impl Regressor for LocalLinearKernel {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.x.rows()
    }
}

/// Leave-one-out residual sum of squares of the local linear fit for one
/// bandwidth vector over the active coordinates.
///
/// Each unordered pair is visited once: unit `j` enters the fit at `x_i` with
/// regressors `(1, x_j - x_i)` and unit `i` enters the fit at `x_j` with
/// `(1, x_i - x_j)`, which share the weight and the second-order terms.
struct LooCv<'a> {
    x: &'a Covariates,
    y: &'a [f64],
    active: Vec<usize>,
    global: Linear,
    ridge: f64,
}

impl LooCv<'_> {
    fn score(&self, h: &[f64]) -> f64 {
        let m = self.x.rows();
        let da = self.active.len();
        let q = da + 1;
        // Per unit: upper triangle of X'WX (row-major) followed by X'Wy.
        let tri = q * (q + 1) / 2;
        let stride = tri + q;
        let mut acc = vec![0.0; m * stride];
        let mut dx = vec![0.0; da];
        let mut outer = vec![0.0; tri];
        for i in 0..m {
            let xi = self.x.row(i);
            'pairs: for j in i + 1..m {
                let xj = self.x.row(j);
                let mut w = 1.0;
                for (c, &col) in self.active.iter().enumerate() {
                    let d = xj[col] - xi[col];
                    if h[c].is_finite() {
                        let k = epanechnikov(d / h[c]);
                        if k == 0.0 {
                            continue 'pairs;
                        }
                        w *= k;
                    }
                    dx[c] = d;
                }
                // Entries of w * z z' with z = (1, dx); odd-order terms flip sign for unit j.
                let mut t = 0;
                for r in 0..q {
                    let zr = if r == 0 { 1.0 } else { dx[r - 1] };
                    for c in r..q {
                        let zc = if c == 0 { 1.0 } else { dx[c - 1] };
                        outer[t] = w * zr * zc;
                        t += 1;
                    }
                }
                let (yi, yj) = (self.y[i], self.y[j]);
                let (ai, rest) = acc.split_at_mut(j * stride);
                let ai = &mut ai[i * stride..(i + 1) * stride];
                let aj = &mut rest[..stride];
                let mut t = 0;
                for r in 0..q {
                    for c in r..q {
                        let odd = (r == 0) != (c == 0);
                        ai[t] += outer[t];
                        aj[t] += if odd { -outer[t] } else { outer[t] };
                        t += 1;
                    }
                }
                ai[tri] += w * yj;
                aj[tri] += w * yi;
                for c in 0..da {
                    ai[tri + 1 + c] += w * dx[c] * yj;
                    aj[tri + 1 + c] -= w * dx[c] * yi;
                }
            }
        }
        let mut rss = 0.0;
        for i in 0..m {
            let a = &acc[i * stride..(i + 1) * stride];
            let pred = if a[0] > 0.0 {
                let mut xtx = DMatrix::<f64>::zeros(q, q);
                let mut t = 0;
                for r in 0..q {
                    for c in r..q {
                        xtx[(r, c)] = a[t];
                        xtx[(c, r)] = a[t];
                        t += 1;
                    }
                }
                let mut xty = DVector::from_column_slice(&a[tri..]);
                for (c, &col) in self.active.iter().enumerate() {
                    if h[c].is_finite() {
                        let lambda = self.ridge * a[0] * h[c] * h[c];
                        xtx[(c + 1, c + 1)] += lambda;
                        xty[c + 1] += lambda * self.global.coef[col];
                    }
                }
                solve_spd(xtx, &xty)[0]
            } else {
                self.global.eval(self.x.row(i))
            };
            let e = self.y[i] - pred;
            rss += e * e;
        }
        rss
    }
}

/// Leave-one-out least-squares choice of a diagonal bandwidth.
///
/// The search first scales all coordinates of `base` by a common factor from
/// [`CV_GRID`], then moves single coordinates one grid step up or down (past
/// the top of the grid to an infinite bandwidth) while the score improves.
pub fn select_bandwidth(x: &Covariates, y: &[f64], base: &[f64]) -> Vec<f64> {
    let active: Vec<usize> = (0..x.cols()).filter(|&j| base[j] > 0.0).collect();
    if active.is_empty() || x.rows() < 3 {
        return base.to_vec();
    }
    let cv = LooCv { x, y, active, global: Linear::fit(x, y), ridge: SLOPE_RIDGE };
    let base_a: Vec<f64> = cv.active.iter().map(|&j| base[j]).collect();
    let eval = |mult: &[f64]| {
        let h: Vec<f64> = base_a.iter().zip(mult).map(|(b, m)| b * m).collect();
        cv.score(&h)
    };
    let da = base_a.len();
    let mut mult = vec![1.0; da];
    let mut best = f64::INFINITY;
    for g in CV_GRID {
        let trial = vec![g; da];
        let s = eval(&trial);
        if s < best {
            best = s;
            mult = trial;
        }
    }
    if da > 1 {
        // Per-coordinate moves to the neighbouring grid points; the top of
        // the ladder is an infinite bandwidth.
        let ladder: Vec<f64> = CV_GRID.iter().copied().chain([f64::INFINITY]).collect();
        let common = CV_GRID.iter().position(|&g| g == mult[0]).unwrap_or(2);
        let mut pos = vec![common; da];
        for _ in 0..MAX_SWEEPS {
            let mut improved = false;
            for c in 0..da {
                for step in [-1isize, 1] {
                    let Some(next) = pos[c].checked_add_signed(step).filter(|&p| p < ladder.len()) else {
                        continue;
                    };
                    let mut trial = mult.clone();
                    trial[c] = ladder[next];
                    let s = eval(&trial);
                    if s < best {
                        best = s;
                        mult = trial;
                        pos[c] = next;
                        improved = true;
                        break;
                    }
                }
            }
            if !improved {
                break;
            }
        }
    }
    let mut h = base.to_vec();
    for (c, &j) in cv.active.iter().enumerate() {
        h[j] = base[j] * mult[c];
    }
    h
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kernel_integrates_to_one() {
        let steps = 20000;
        let h = 2.0 / steps as f64;
        let total: f64 = (0..steps).map(|i| epanechnikov(-1.0 + (i as f64 + 0.5) * h) * h).sum();
        assert!((total - 1.0).abs() < 1e-6);
    }

    #[test]
    fn far_query_uses_global_fit() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![i as f64 / 30.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| 3.0 * r[0] + 1.0).collect();
        let k = LocalLinearKernel::fit(&Covariates::from_rows(&rows).unwrap(), &y, 1.0);
        assert!((k.eval(&[50.0]) - 151.0).abs() < 1e-8);
    }

    #[test]
    fn loo_score_matches_direct_refits() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![(i as f64 * 0.77).sin(), (i as f64 * 0.31).cos() * 2.0]).collect();
        let y: Vec<f64> = rows.iter().map(|r| r[0] * r[0] + r[1].sin()).collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let h = [0.9, f64::INFINITY];
        let cv = LooCv { x: &x, y: &y, active: vec![0, 1], global: Linear::fit(&x, &y), ridge: 0.0 };
        let mut direct = 0.0;
        for i in 0..40 {
            let keep: Vec<usize> = (0..40).filter(|&j| j != i).collect();
            let yk: Vec<f64> = keep.iter().map(|&j| y[j]).collect();
            let mut k = LocalLinearKernel::with_bandwidth(&x.select(&keep), &yk, h.to_vec());
            k.ridge = 0.0;
            direct += (y[i] - k.eval(x.row(i))).powi(2);
        }
        let fast = cv.score(&h);
        assert!((fast - direct).abs() <= 1e-9 * direct, "{fast} vs {direct}");
    }
}
