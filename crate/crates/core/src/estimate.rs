//! Stratified ATE estimators, their variance components and Wald intervals.
//!
//! With per-unit predictions `h0_i = h(X_i, 0)` and `h1_i = h(X_i, 1)`, the
//! plug-in estimator is
//!
//! ```text
//! tau = sum_k p_k [ (Ybar_k1 - n_k1^-1 sum_{i in k} (A_i - pi_k) h1_i)
//!                 - (Ybar_k0 + n_k0^-1 sum_{i in k} (A_i - pi_k) h0_i) ]
//! ```
//!
//! where `pi_k` is the realized treated share of stratum `k`. Inference uses
//! the transformed outcomes `r_i = Y_i - ((1 - pi) h1_i + pi h0_i)` with the
//! target proportion `pi`.

use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::adjust::ProjectionFit;
use crate::data::{StratumStats, TrialDataset};
use crate::error::{Error, Result};

pub const DEFAULT_LEVEL: f64 = 0.95;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EffectEstimate {
    pub tau_hat: f64,
    /// Within-stratum residual variance component.
    pub var_r: f64,
    /// Between-stratum heterogeneity component.
    pub var_hr: f64,
    pub se: f64,
    pub n: usize,
    pub ci_level: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub method: String,
}

impl EffectEstimate {
    pub fn covers(&self, tau: f64) -> bool {
        self.ci_low <= tau && tau <= self.ci_high
    }

    /// Column names matching [`EffectEstimate::csv_row`].
    pub const CSV_HEADER: [&'static str; 9] =
        ["method", "tau", "se", "var_r", "var_hr", "n", "level", "ci_low", "ci_high"];

    pub fn csv_row(&self) -> Vec<String> {
        vec![
            self.method.clone(),
            self.tau_hat.to_string(),
            self.se.to_string(),
            self.var_r.to_string(),
            self.var_hr.to_string(),
            self.n.to_string(),
            self.ci_level.to_string(),
            self.ci_low.to_string(),
            self.ci_high.to_string(),
        ]
    }
}

/// Two-sided normal critical value, e.g. 1.959964 for `level = 0.95`.
pub fn z_critical(level: f64) -> f64 {
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    normal.inverse_cdf(0.5 + level / 2.0)
}

fn check_cells(stats: &StratumStats) -> Result<()> {
    if let Some((k, a)) = stats.first_empty_arm_cell() {
        let arm = if a == 1 { "treated" } else { "control" };
        return Err(Error::estimation(format!("stratum {} has no {arm} units", k + 1)));
    }
    Ok(())
}

/// `r_i = Y_i - ((1 - pi) h1_i + pi h0_i)` for the observed outcome of each unit.
pub fn transformed_outcomes(ds: &TrialDataset, h0: &[f64], h1: &[f64]) -> Vec<f64> {
    let pi = ds.pi_target;
    (0..ds.n()).map(|i| ds.y[i] - ((1.0 - pi) * h1[i] + pi * h0[i])).collect()
}

/// Sample variance components `(var_r, var_hr)` from transformed outcomes of
/// each unit's observed arm.
pub fn variance_components(ds: &TrialDataset, r: &[f64]) -> Result<(f64, f64)> {
    if r.len() != ds.n() {
        return Err(Error::data(format!("{} transformed outcomes for {} units", r.len(), ds.n())));
    }
    let stats = ds.stats();
    check_cells(&stats)?;
    let k_count = ds.n_strata;
    let mut sum = vec![[0.0f64; 2]; k_count];
    for i in 0..ds.n() {
        sum[ds.strata[i]][usize::from(ds.arms[i])] += r[i];
    }
    let mut mean_k = vec![[0.0f64; 2]; k_count];
    let mut total = [0.0f64; 2];
    let mut count = [0usize; 2];
    for (k, cell) in stats.cells.iter().enumerate() {
        mean_k[k] = [sum[k][0] / cell.n0 as f64, sum[k][1] / cell.n1 as f64];
        total[0] += sum[k][0];
        total[1] += sum[k][1];
        count[0] += cell.n0;
        count[1] += cell.n1;
    }
    let overall = [total[0] / count[0] as f64, total[1] / count[1] as f64];
    let mut ss = vec![[0.0f64; 2]; k_count];
    for i in 0..ds.n() {
        let (k, a) = (ds.strata[i], usize::from(ds.arms[i]));
        ss[k][a] += (r[i] - mean_k[k][a]).powi(2);
    }
    let pi = ds.pi_target;
    let (mut v1, mut v0, mut var_hr) = (0.0, 0.0, 0.0);
    for (k, cell) in stats.cells.iter().enumerate() {
        v1 += cell.p * ss[k][1] / cell.n1 as f64;
        v0 += cell.p * ss[k][0] / cell.n0 as f64;
        let diff = (mean_k[k][1] - overall[1]) - (mean_k[k][0] - overall[0]);
        var_hr += cell.p * diff * diff;
    }
    Ok((v1 / pi + v0 / (1.0 - pi), var_hr))
}

/// Plug-in estimate for arbitrary per-unit predictions of both arms.
pub fn plug_in_estimate(ds: &TrialDataset, h0: &[f64], h1: &[f64], method: &str) -> Result<EffectEstimate> {
    let n = ds.n();
    if h0.len() != n || h1.len() != n {
        return Err(Error::data(format!("predictions must have length n = {n}")));
    }
    let stats = ds.stats();
    check_cells(&stats)?;
    let k_count = ds.n_strata;
    let mut y_sum = vec![[0.0f64; 2]; k_count];
    let mut corr = vec![[0.0f64; 2]; k_count];
    for i in 0..n {
        let k = ds.strata[i];
        let a = ds.arms[i];
        y_sum[k][usize::from(a)] += ds.y[i];
        let dev = f64::from(a) - stats.cells[k].pi;
        corr[k][0] += dev * h0[i];
        corr[k][1] += dev * h1[i];
    }
    let mut tau = 0.0;
    for (k, cell) in stats.cells.iter().enumerate() {
        let (n1, n0) = (cell.n1 as f64, cell.n0 as f64);
        let arm1 = y_sum[k][1] / n1 - corr[k][1] / n1;
        let arm0 = y_sum[k][0] / n0 + corr[k][0] / n0;
        tau += cell.p * (arm1 - arm0);
    }
    let r = transformed_outcomes(ds, h0, h1);
    let (var_r, var_hr) = variance_components(ds, &r)?;
    let est = EffectEstimate {
        tau_hat: tau,
        var_r,
        var_hr,
        se: ((var_r + var_hr) / n as f64).sqrt(),
        n,
        ci_level: DEFAULT_LEVEL,
        ci_low: tau,
        ci_high: tau,
        method: method.to_string(),
    };
    Ok(wald_ci(est, DEFAULT_LEVEL))
}

/// Difference in arm means within strata, weighted by stratum shares.
pub fn naive_estimate(ds: &TrialDataset) -> Result<EffectEstimate> {
    let zeros = vec![0.0; ds.n()];
    plug_in_estimate(ds, &zeros, &zeros, "naive")
}

/// Plug-in estimator with the fitted projection functions.
pub fn adjusted_estimate(ds: &TrialDataset, fit: &ProjectionFit) -> Result<EffectEstimate> {
    let (h0, h1) = fit.predict_dataset(ds)?;
    let mut method = fit.kind.label().to_string();
    if fit.stratum_specific {
        method.push_str("_stratum");
    }
    plug_in_estimate(ds, &h0, &h1, &method)
}

/// Sets the interval to `tau_hat -/+ z * se` at the given level.
pub fn wald_ci(mut est: EffectEstimate, level: f64) -> EffectEstimate {
    let half = if est.se > 0.0 { z_critical(level) * est.se } else { 0.0 };
    est.ci_level = level;
    est.ci_low = est.tau_hat - half;
    est.ci_high = est.tau_hat + half;
    est
}
