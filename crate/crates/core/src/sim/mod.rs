//! Monte Carlo replication of simulation scenarios.
//!
//! Replication `r` draws everything (covariates, outcomes, assignment and
//! learner seeds) from a ChaCha8 stream `r` of the scenario's base seed, so
//! results do not depend on thread scheduling.

mod analyze;
mod config;
mod table;

use std::collections::HashMap;
use std::sync::{Mutex, OnceLock};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::adjust::{self, AdjusterKind, AdjusterSpec};
use crate::crossfit::crossfit_estimate;
use crate::data::TrialDataset;
use crate::datagen::{true_ate, AteTruth, Generator, ModelSpec, TruthMethod};
use crate::error::{Error, Result};
use crate::estimate::{adjusted_estimate, wald_ci, EffectEstimate, DEFAULT_LEVEL};
use crate::randomize::{randomize, RandomizerConfig};

pub use analyze::{analyze, AnalysisOptions, AnalysisReport};
pub use config::{load_config, parse_config};
pub use table::{emit_table, TableFormat};

/// Monte Carlo draws used for the reference ATE of models without a closed form.
pub const TRUTH_DRAWS: usize = 1_000_000;
const TRUTH_SEED: u64 = 0x7a0_5eed;

/// How one estimator is computed from a simulated trial.
#[derive(Debug, Clone, PartialEq)]
pub struct EstimatorSpec {
    pub adjuster: AdjusterSpec,
    /// Fold count for cross-fitting; `None` fits on the full sample.
    pub crossfit: Option<usize>,
}

impl EstimatorSpec {
    pub fn new(adjuster: AdjusterSpec) -> Self {
        Self { adjuster, crossfit: None }
    }

    pub fn crossfit(mut self, folds: usize) -> Self {
        self.crossfit = Some(folds);
        self
    }

    /// Table label, e.g. `rf`, `rf_ss`, `lasso_ss_stratum`.
    pub fn label(&self) -> String {
        let mut s = self.adjuster.kind.label().to_string();
        if self.crossfit.is_some() {
            s.push_str("_ss");
        }
        if self.adjuster.stratum_specific && !matches!(self.adjuster.kind, AdjusterKind::Zero | AdjusterKind::Oracle) {
            s.push_str("_stratum");
        }
        s
    }

    /// Fits and estimates on one dataset.
    pub fn estimate(&self, ds: &TrialDataset, seed: u64, level: f64) -> Result<EffectEstimate> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let est = match self.crossfit {
            Some(m) => crossfit_estimate(ds, &self.adjuster, m, &mut rng)?.estimate,
            None => {
                let fit = adjust::fit(&self.adjuster, ds, &mut rng)?;
                adjusted_estimate(ds, &fit)?
            }
        };
        let mut est = wald_ci(est, level);
        est.method = self.label();
        Ok(est)
    }
}

/// One simulation cell.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub model: u8,
    pub n: usize,
    /// Total covariate dimension; `None` uses the model default.
    pub p: Option<usize>,
    pub randomizer: RandomizerConfig,
    pub estimator: EstimatorSpec,
    pub replications: usize,
    pub level: f64,
    pub seed: u64,
    pub truth_draws: usize,
}

impl ScenarioConfig {
    pub fn new(model: u8, randomizer: RandomizerConfig, adjuster: AdjusterSpec) -> Self {
        Self {
            name: String::new(),
            model,
            n: 1000,
            p: None,
            randomizer,
            estimator: EstimatorSpec::new(adjuster),
            replications: 500,
            level: DEFAULT_LEVEL,
            seed: 1,
            truth_draws: TRUTH_DRAWS,
        }
    }

    pub fn pi(&self) -> f64 {
        self.randomizer.pi
    }

    pub fn model_spec(&self) -> Result<ModelSpec> {
        match self.p {
            Some(p) => ModelSpec::with_dim(self.model, self.n, p),
            None => ModelSpec::new(self.model, self.n),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications == 0 {
            return Err(Error::config("replications must be >= 1"));
        }
        if !(self.level > 0.0 && self.level < 1.0) {
            return Err(Error::config(format!("level must lie in (0, 1), got {}", self.level)));
        }
        if !(self.pi() > 0.0 && self.pi() < 1.0) {
            return Err(Error::config(format!("pi must lie in (0, 1), got {}", self.pi())));
        }
        if self.n < 2 {
            return Err(Error::config("n must be >= 2"));
        }
        self.model_spec()?;
        self.randomizer.validate()?;
        self.estimator.adjuster.params.validate()?;
        if let Some(m) = self.estimator.crossfit {
            if m < 2 || m > self.n {
                return Err(Error::config(format!("crossfit folds must satisfy 2 <= M <= n, got {m}")));
            }
        }
        Ok(())
    }
}

/// Aggregates over replications, in the columns of the result tables.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationSummary {
    pub scenario: String,
    pub model: u8,
    pub estimator: String,
    pub randomizer: String,
    pub pi: f64,
    pub n: usize,
    pub tau_true: f64,
    pub bias: f64,
    /// Sample SD of the estimates (`R - 1` divisor); NaN when `R = 1`.
    pub sd: f64,
    /// Mean estimated standard error.
    pub se: f64,
    /// Share of intervals covering the true effect.
    pub cp: f64,
    pub replications: usize,
    pub runtime_secs: f64,
}

impl SimulationSummary {
    pub fn se_over_sd(&self) -> f64 {
        self.se / self.sd
    }

    /// Monte Carlo standard error of the bias, `SD / sqrt(R)`.
    pub fn bias_mc_se(&self) -> f64 {
        self.sd / (self.replications as f64).sqrt()
    }

    /// Approximate Monte Carlo standard error of the SD, `SD / sqrt(2 (R - 1))`.
    pub fn sd_mc_se(&self) -> f64 {
        self.sd / (2.0 * (self.replications as f64 - 1.0)).sqrt()
    }
}

/// Bias, SD, mean SE and coverage of `estimates` against `tau_true`.
pub fn summarize(estimates: &[EffectEstimate], tau_true: f64) -> SimulationSummary {
    let r = estimates.len();
    let rf = r as f64;
    let mean_tau = estimates.iter().map(|e| e.tau_hat).sum::<f64>() / rf;
    let sd = if r > 1 {
        (estimates.iter().map(|e| (e.tau_hat - mean_tau).powi(2)).sum::<f64>() / (rf - 1.0)).sqrt()
    } else {
        log::warn!("a single replication has no sample SD; reporting NaN");
        f64::NAN
    };
    SimulationSummary {
        scenario: String::new(),
        model: 0,
        estimator: estimates.first().map(|e| e.method.clone()).unwrap_or_default(),
        randomizer: String::new(),
        pi: f64::NAN,
        n: estimates.first().map_or(0, |e| e.n),
        tau_true,
        bias: mean_tau - tau_true,
        sd,
        se: estimates.iter().map(|e| e.se).sum::<f64>() / rf,
        cp: estimates.iter().filter(|e| e.covers(tau_true)).count() as f64 / rf,
        replications: r,
        runtime_secs: 0.0,
    }
}

fn truth_cache() -> &'static Mutex<HashMap<(u8, usize), AteTruth>> {
    static CACHE: OnceLock<Mutex<HashMap<(u8, usize), AteTruth>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

/// Reference ATE of a model: closed form where available, otherwise a Monte
/// Carlo average over `draws` covariate draws, computed once per process.
pub fn reference_truth(spec: ModelSpec, draws: usize) -> Result<AteTruth> {
    if let Ok(t) = true_ate(spec, TruthMethod::ClosedForm) {
        return Ok(t);
    }
    let key = (spec.base_model(), draws);
    if let Some(t) = truth_cache().lock().expect("truth cache").get(&key) {
        return Ok(*t);
    }
    let t = true_ate(spec, TruthMethod::MonteCarlo { draws, seed: TRUTH_SEED })?;
    truth_cache().lock().expect("truth cache").insert(key, t);
    Ok(t)
}

/// The simulated trial of replication `r` and a generator positioned after
/// it, from which learner seeds are drawn.
pub fn replicate_dataset(
    gen: &Generator,
    randomizer: &RandomizerConfig,
    seed: u64,
    r: usize,
) -> Result<(TrialDataset, ChaCha8Rng)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(r as u64);
    let sample = gen.generate(&mut rng);
    let arms = randomize(randomizer, &sample.strata, &mut rng)?;
    let ds = sample.assign(arms, randomizer.pi)?;
    Ok((ds, rng))
}

/// Runs several estimators on the same simulated trials (common random
/// numbers) and summarizes each. `base` supplies everything but the estimator.
pub fn run_panel(base: &ScenarioConfig, estimators: &[EstimatorSpec]) -> Result<Vec<SimulationSummary>> {
    base.validate()?;
    let spec = base.model_spec()?;
    let gen = Generator::new(spec)?;
    let truth = reference_truth(spec, base.truth_draws)?;
    let estimators: Vec<EstimatorSpec> = estimators
        .iter()
        .map(|e| {
            let mut e = e.clone();
            if e.adjuster.kind == AdjusterKind::Oracle {
                e.adjuster.model = Some(spec);
            }
            e.adjuster.validate().map(|_| e)
        })
        .collect::<Result<_>>()?;
    let start = Instant::now();
    let per_rep: Vec<(Vec<EffectEstimate>, Vec<f64>)> = (0..base.replications)
        .into_par_iter()
        .map(|r| {
            let annotate = |e: Error| annotate_replication(e, r);
            let (ds, mut rng) = replicate_dataset(&gen, &base.randomizer, base.seed, r).map_err(annotate)?;
            let seeds: Vec<u64> = estimators.iter().map(|_| rng.random()).collect();
            let mut ests = Vec::with_capacity(estimators.len());
            let mut secs = Vec::with_capacity(estimators.len());
            for (e, s) in estimators.iter().zip(seeds) {
                let t0 = Instant::now();
                ests.push(e.estimate(&ds, s, base.level).map_err(annotate)?);
                secs.push(t0.elapsed().as_secs_f64());
            }
            Ok((ests, secs))
        })
        .collect::<Result<_>>()?;
    let wall = start.elapsed().as_secs_f64();
    let total_fit: f64 = per_rep.iter().flat_map(|(_, s)| s.iter()).sum();
    let out = estimators
        .iter()
        .enumerate()
        .map(|(j, e)| {
            let ests: Vec<EffectEstimate> = per_rep.iter().map(|(v, _)| v[j].clone()).collect();
            let fit_secs: f64 = per_rep.iter().map(|(_, s)| s[j]).sum();
            let mut s = summarize(&ests, truth.tau);
            s.scenario = base.name.clone();
            s.model = base.model;
            s.estimator = e.label();
            s.randomizer = base.randomizer.kind.name().to_string();
            s.pi = base.pi();
            s.n = base.n;
            // Wall time is split across estimators in proportion to their fitting time.
            s.runtime_secs = if total_fit > 0.0 { wall * fit_secs / total_fit } else { wall };
            s
        })
        .collect();
    Ok(out)
}

fn annotate_replication(e: Error, r: usize) -> Error {
    match e {
        Error::Data(m) => Error::Data(format!("replication {r}: {m}")),
        Error::Config(m) => Error::Config(format!("replication {r}: {m}")),
        Error::Estimation(m) => Error::Estimation(format!("replication {r}: {m}")),
        other => other,
    }
}

pub fn run_scenario(cfg: &ScenarioConfig) -> Result<SimulationSummary> {
    let mut out = run_panel(cfg, std::slice::from_ref(&cfg.estimator))?;
    Ok(out.remove(0))
}
