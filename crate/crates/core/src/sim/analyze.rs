//! Effect estimation on an external dataset.

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::adjust::{self, AdjusterSpec, FitDiagnostics};
use crate::crossfit::crossfit_estimate;
use crate::data::{StratumStats, TrialDataset};
use crate::error::Result;
use crate::estimate::{adjusted_estimate, naive_estimate, wald_ci, EffectEstimate, DEFAULT_LEVEL};

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisOptions {
    pub adjuster: AdjusterSpec,
    pub crossfit: Option<usize>,
    pub level: f64,
    pub seed: u64,
}

impl AnalysisOptions {
    pub fn new(adjuster: AdjusterSpec) -> Self {
        Self { adjuster, crossfit: None, level: DEFAULT_LEVEL, seed: 1 }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct AnalysisReport {
    pub estimate: EffectEstimate,
    /// Unadjusted estimate on the same data, for reference.
    pub naive: EffectEstimate,
    pub stats: StratumStats,
    pub stratum_labels: Vec<String>,
    pub covariates: Vec<String>,
    pub pi_target: f64,
    /// Present for full-sample fits.
    pub diagnostics: Option<FitDiagnostics>,
    /// Present for cross-fitted estimates.
    pub folds: Option<usize>,
    pub partition_redraws: usize,
}

pub fn analyze(ds: &TrialDataset, opts: &AnalysisOptions) -> Result<AnalysisReport> {
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let naive = wald_ci(naive_estimate(ds)?, opts.level);
    let (estimate, diagnostics, redraws) = match opts.crossfit {
        Some(m) => {
            let cf = crossfit_estimate(ds, &opts.adjuster, m, &mut rng)?;
            (cf.estimate, None, cf.redraws)
        }
        None => {
            let fit = adjust::fit(&opts.adjuster, ds, &mut rng)?;
            (adjusted_estimate(ds, &fit)?, Some(fit.diagnostics), 0)
        }
    };
    Ok(AnalysisReport {
        estimate: wald_ci(estimate, opts.level),
        naive,
        stats: ds.stats(),
        stratum_labels: ds.meta.stratum_labels.clone(),
        covariates: ds.meta.covariate_names.clone(),
        pi_target: ds.pi_target,
        diagnostics,
        folds: opts.crossfit,
        partition_redraws: redraws,
    })
}

impl fmt::Display for AnalysisReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let e = &self.estimate;
        writeln!(f, "units: {}  strata: {}  covariates: {}  target pi: {}", self.stats.n, self.stats.n_strata(), self.covariates.len(), self.pi_target)?;
        writeln!(f, "stratum      n    n1    n0  share  treated")?;
        for (label, c) in self.stratum_labels.iter().zip(&self.stats.cells) {
            writeln!(f, "{label:<8} {:>5} {:>5} {:>5}  {:.3}  {:.3}", c.n, c.n1, c.n0, c.p, c.pi)?;
        }
        writeln!(f)?;
        match self.folds {
            Some(m) => writeln!(f, "estimator: {} ({m}-fold cross-fitting)", e.method)?,
            None => writeln!(f, "estimator: {}", e.method)?,
        }
        writeln!(f, "tau_hat:   {:.6}", e.tau_hat)?;
        writeln!(f, "se:        {:.6}", e.se)?;
        writeln!(f, "{:.0}% CI:    [{:.6}, {:.6}]", 100.0 * e.ci_level, e.ci_low, e.ci_high)?;
        writeln!(f, "var_r:     {:.6}", e.var_r)?;
        writeln!(f, "var_hr:    {:.6}", e.var_hr)?;
        if let Some(d) = &self.diagnostics {
            writeln!(f, "in-sample MSE: control {:.6}, treated {:.6}", d.in_sample_mse[0], d.in_sample_mse[1])?;
            writeln!(f, "model size: {}", d.model_size)?;
            if !d.fallback_cells.is_empty() {
                let cells: Vec<String> = d
                    .fallback_cells
                    .iter()
                    .map(|(k, a)| format!("{}/{}", self.stratum_labels.get(*k).map_or("?", String::as_str), a))
                    .collect();
                writeln!(f, "pooled fallback (stratum/arm): {}", cells.join(", "))?;
            }
        }
        if self.partition_redraws > 0 {
            writeln!(f, "partition redraws: {}", self.partition_redraws)?;
        }
        write!(f, "naive tau_hat: {:.6}  (se {:.6})", self.naive.tau_hat, self.naive.se)
    }
}
