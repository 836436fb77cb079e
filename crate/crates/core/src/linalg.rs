//! Small dense least-squares helpers shared by the adjusters.

use nalgebra::{DMatrix, DVector};

/// Condition number above which the normal matrix receives ridge jitter.
pub const COND_LIMIT: f64 = 1e10;

/// Solves the symmetric positive semidefinite system `a x = b` by Cholesky.
///
/// When the factorization fails or the condition estimate (squared ratio of
/// extreme Cholesky pivots) exceeds [`COND_LIMIT`], `1e-8 * trace / dim` is
/// added to the diagonal, growing tenfold until the factor is well behaved.
pub fn solve_spd(mut a: DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let dim = a.nrows();
    let base = 1e-8 * a.trace().abs().max(f64::MIN_POSITIVE) / dim as f64;
    let mut jitter = 0.0;
    for _ in 0..12 {
        if let Some(chol) = a.clone().cholesky() {
            let l = chol.l_dirty();
            let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
            for i in 0..dim {
                let d = l[(i, i)].abs();
                lo = lo.min(d);
                hi = hi.max(d);
            }
            let cond = if lo > 0.0 { (hi / lo).powi(2) } else { f64::INFINITY };
            if cond <= COND_LIMIT || jitter > 0.0 && cond.is_finite() {
                return chol.solve(b);
            }
        }
        let add = if jitter == 0.0 { base } else { jitter * 9.0 };
        jitter += add;
        for i in 0..dim {
            a[(i, i)] += add;
        }
    }
    DVector::zeros(dim)
}

/// Weighted least squares with an intercept; returns `[b0, b1, .., bd]`.
///
/// `rows` yields covariate rows of length `d`; zero weights are skipped.
pub fn weighted_ols<'a, I>(rows: I, y: &[f64], w: Option<&[f64]>, d: usize) -> Vec<f64>
where
    I: IntoIterator<Item = &'a [f64]>,
{
    let q = d + 1;
    let mut xtx = DMatrix::<f64>::zeros(q, q);
    let mut xty = DVector::<f64>::zeros(q);
    let mut z = vec![0.0; q];
    for (i, row) in rows.into_iter().enumerate() {
        let wi = w.map_or(1.0, |w| w[i]);
        if wi == 0.0 {
            continue;
        }
        z[0] = 1.0;
        z[1..].copy_from_slice(row);
        for r in 0..q {
            let zr = wi * z[r];
            xty[r] += zr * y[i];
            for c in r..q {
                xtx[(r, c)] += zr * z[c];
            }
        }
    }
    for r in 0..q {
        for c in 0..r {
            xtx[(r, c)] = xtx[(c, r)];
        }
    }
    solve_spd(xtx, &xty).iter().copied().collect()
}

/// Ordinary least squares on an explicit design matrix (no added intercept).
pub fn lstsq(design: &DMatrix<f64>, y: &[f64]) -> DVector<f64> {
    let yv = DVector::from_column_slice(y);
    let xtx = design.tr_mul(design);
    let xty = design.tr_mul(&yv);
    solve_spd(xtx, &xty)
}

pub fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        return 0.0;
    }
    v.iter().sum::<f64>() / v.len() as f64
}

/// Sample standard deviation with the `n - 1` divisor (0 for fewer than 2 values).
pub fn sd(v: &[f64]) -> f64 {
    if v.len() < 2 {
        return 0.0;
    }
    let m = mean(v);
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64).sqrt()
}

/// Empirical quantile with linear interpolation between order statistics.
pub fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
