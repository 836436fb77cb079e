//! Projection-function learners `h_[k](x, a)`.
//!
//! Each arm is fitted on its own units only. With `stratum_specific` a
//! separate function is fitted in every stratum; cells that are too small
//! for the learner reuse the pooled fit of that arm.

mod boost;
mod forest;
mod kernel;
mod lasso;
mod linear;
mod mlp;
mod spline;
mod tree;

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, TrialDataset};
use crate::datagen::ModelSpec;
use crate::error::{Error, Result};

pub use boost::GradientBoosting;
pub use forest::RandomForest;
pub use kernel::{epanechnikov, rule_of_thumb, select_bandwidth, LocalLinearKernel};
pub use lasso::{soft_threshold, Lasso, LassoPath};
pub use linear::Linear;
pub use mlp::{loss_and_grad, param_count, Mlp, MlpParams};
pub use spline::{natural_spline_basis, NaturalSpline};
pub use tree::{Binned, Tree, TreeParams};

/// A fitted regression function of the covariates (and, for the oracle, the stratum).
pub trait Regressor: fmt::Debug + Send + Sync {
    fn predict(&self, x: &[f64], stratum: usize) -> f64;

    /// Number of fitted parameters, leaves or nodes; reported as a diagnostic.
    fn size(&self) -> usize;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AdjusterKind {
    Zero,
    Ols,
    Lasso,
    LocalLinearKernel,
    NaturalSpline,
    Cart,
    RandomForest,
    Gbrt,
    Mlp,
    Oracle,
}

impl AdjusterKind {
    pub const ALL: [AdjusterKind; 10] = [
        AdjusterKind::Zero,
        AdjusterKind::Ols,
        AdjusterKind::Lasso,
        AdjusterKind::LocalLinearKernel,
        AdjusterKind::NaturalSpline,
        AdjusterKind::Cart,
        AdjusterKind::RandomForest,
        AdjusterKind::Gbrt,
        AdjusterKind::Mlp,
        AdjusterKind::Oracle,
    ];

    pub fn parse(s: &str) -> Result<Self> {
        let kind = match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "zero" | "none" | "naive" => Self::Zero,
            "ols" | "linear" => Self::Ols,
            "lasso" => Self::Lasso,
            "local_linear_kernel" | "kernel" => Self::LocalLinearKernel,
            "natural_spline" | "spline" => Self::NaturalSpline,
            "cart" | "rpart" | "tree" => Self::Cart,
            "random_forest" | "rf" => Self::RandomForest,
            "gbrt" | "gbm" => Self::Gbrt,
            "mlp" | "nnet" => Self::Mlp,
            "oracle" => Self::Oracle,
            other => return Err(Error::config(format!("unknown adjuster '{other}'"))),
        };
        Ok(kind)
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Zero => "zero",
            Self::Ols => "ols",
            Self::Lasso => "lasso",
            Self::LocalLinearKernel => "local_linear_kernel",
            Self::NaturalSpline => "natural_spline",
            Self::Cart => "cart",
            Self::RandomForest => "random_forest",
            Self::Gbrt => "gbrt",
            Self::Mlp => "mlp",
            Self::Oracle => "oracle",
        }
    }

    /// Short label used in result tables.
    pub fn label(self) -> &'static str {
        match self {
            Self::Zero => "naive",
            Self::Ols => "linear",
            Self::Lasso => "lasso",
            Self::LocalLinearKernel => "kernel",
            Self::NaturalSpline => "spline",
            Self::Cart => "rpart",
            Self::RandomForest => "rf",
            Self::Gbrt => "gbrt",
            Self::Mlp => "nnet",
            Self::Oracle => "oracle",
        }
    }
}

impl fmt::Display for AdjusterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Learner settings. Defaults depend on the kind (tree depth and minimum node
/// size differ between CART, forests and boosting).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Hyperparams {
    /// Multiplier on the rule-of-thumb kernel bandwidth.
    pub bandwidth_scale: f64,
    /// Choose kernel bandwidths by leave-one-out cross-validation around the
    /// (scaled) rule of thumb instead of using it directly.
    pub bandwidth_cv: bool,
    /// Fixed lasso penalty; `None` selects it by cross-validation.
    pub lambda: Option<f64>,
    pub cv_folds: usize,
    pub lambda_grid: usize,
    pub lambda_ratio: f64,
    pub spline_df: usize,
    pub max_depth: usize,
    pub min_node: usize,
    pub trees: usize,
    /// Features tried per split; `None` means `ceil(p/3)` for forests, all otherwise.
    pub mtry: Option<usize>,
    pub rounds: usize,
    pub shrinkage: f64,
    pub width: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub weight_decay: f64,
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            bandwidth_scale: 1.0,
            bandwidth_cv: true,
            lambda: None,
            cv_folds: 5,
            lambda_grid: 50,
            lambda_ratio: 1e-4,
            spline_df: 5,
            max_depth: 6,
            min_node: 10,
            trees: 200,
            mtry: None,
            rounds: 200,
            shrinkage: 0.1,
            width: 10,
            epochs: 500,
            learning_rate: 0.01,
            weight_decay: 0.01,
        }
    }
}

impl Hyperparams {
    pub fn for_kind(kind: AdjusterKind) -> Self {
        let mut h = Self::default();
        match kind {
            AdjusterKind::RandomForest => {
                h.max_depth = usize::MAX;
                h.min_node = 5;
            }
            AdjusterKind::Gbrt => h.max_depth = 3,
            _ => {}
        }
        h
    }

    /// Applies one `key=value` override.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim().parse().map_err(|_| Error::config(format!("bad value '{v}' for hyperparameter '{key}'")))
        }
        match key.trim() {
            "bandwidth_scale" => self.bandwidth_scale = num(key, value)?,
            "bandwidth" => {
                self.bandwidth_cv = match value.trim() {
                    "cv" => true,
                    "rule" | "rule_of_thumb" => false,
                    other => return Err(Error::config(format!("bandwidth must be 'cv' or 'rule', got '{other}'"))),
                }
            }
            "lambda" => self.lambda = Some(num(key, value)?),
            "cv_folds" => self.cv_folds = num(key, value)?,
            "lambda_grid" => self.lambda_grid = num(key, value)?,
            "lambda_ratio" => self.lambda_ratio = num(key, value)?,
            "df" | "spline_df" => self.spline_df = num(key, value)?,
            "max_depth" => self.max_depth = num(key, value)?,
            "min_node" => self.min_node = num(key, value)?,
            "trees" => self.trees = num(key, value)?,
            "mtry" => self.mtry = Some(num(key, value)?),
            "rounds" => self.rounds = num(key, value)?,
            "shrinkage" => self.shrinkage = num(key, value)?,
            "width" => self.width = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "learning_rate" | "lr" => self.learning_rate = num(key, value)?,
            "weight_decay" | "decay" => self.weight_decay = num(key, value)?,
            other => return Err(Error::config(format!("unknown hyperparameter '{other}'"))),
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("hyperparameter out of range: {what}")));
        if !(self.bandwidth_scale > 0.0) {
            return bad("bandwidth_scale must be > 0");
        }
        if self.lambda.is_some_and(|l| !(l >= 0.0)) {
            return bad("lambda must be >= 0");
        }
        if self.cv_folds < 2 || self.lambda_grid < 2 || !(self.lambda_ratio > 0.0 && self.lambda_ratio < 1.0) {
            return bad("lasso path needs cv_folds >= 2, lambda_grid >= 2, 0 < lambda_ratio < 1");
        }
        if self.spline_df < 1 {
            return bad("spline df must be >= 1");
        }
        if self.max_depth == 0 || self.min_node == 0 || self.mtry == Some(0) {
            return bad("max_depth, min_node and mtry must be positive");
        }
        if !(self.shrinkage > 0.0 && self.shrinkage <= 1.0) {
            return bad("shrinkage must be in (0, 1]");
        }
        if self.width == 0 || !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("mlp needs width >= 1, learning_rate > 0, weight_decay >= 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdjusterSpec {
    pub kind: AdjusterKind,
    pub stratum_specific: bool,
    pub params: Hyperparams,
    /// Data-generating model; required by the oracle kind.
    pub model: Option<ModelSpec>,
}

impl AdjusterSpec {
    pub fn new(kind: AdjusterKind) -> Self {
        Self { kind, stratum_specific: false, params: Hyperparams::for_kind(kind), model: None }
    }

    pub fn stratum_specific(mut self, on: bool) -> Self {
        self.stratum_specific = on;
        self
    }

    pub fn with_model(mut self, model: ModelSpec) -> Self {
        self.model = Some(model);
        self
    }

    pub fn oracle(model: ModelSpec) -> Self {
        Self::new(AdjusterKind::Oracle).with_model(model)
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if self.kind == AdjusterKind::Oracle && self.model.is_none() {
            return Err(Error::config("oracle adjuster requires a model specification"));
        }
        Ok(())
    }

    /// Smallest training set the learner accepts for `d` covariates.
    pub fn min_train(&self, d: usize) -> usize {
        let h = &self.params;
        match self.kind {
            AdjusterKind::Zero | AdjusterKind::Oracle => 0,
            AdjusterKind::Ols | AdjusterKind::LocalLinearKernel => d + 2,
            AdjusterKind::Lasso => 2,
            AdjusterKind::NaturalSpline => h.spline_df * d + 2,
            AdjusterKind::Cart | AdjusterKind::RandomForest | AdjusterKind::Gbrt => 2 * h.min_node,
            AdjusterKind::Mlp => 20,
        }
    }

    /// Cell size below which a stratum-specific fit falls back to the pooled one.
    pub fn fallback_threshold(&self, d: usize) -> usize {
        self.min_train(d).max(d + 2).max(10)
    }
}

/// Per-arm training summaries.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct FitDiagnostics {
    /// In-sample mean squared error of the function used for each arm's units.
    pub in_sample_mse: [f64; 2],
    /// Total size of all fitted functions.
    pub model_size: usize,
    /// `(stratum, arm)` cells that reused the pooled fit.
    pub fallback_cells: Vec<(usize, u8)>,
}

/// Fitted projection functions for both arms.
#[derive(Debug, Clone)]
pub struct ProjectionFit {
    pub kind: AdjusterKind,
    pub stratum_specific: bool,
    dim: usize,
    n_strata: usize,
    pooled: [Option<Arc<dyn Regressor>>; 2],
    cells: Vec<[Option<Arc<dyn Regressor>>; 2]>,
    pub diagnostics: FitDiagnostics,
}

impl ProjectionFit {
    /// Wraps an explicit function `(x, arm, stratum) -> h`.
    pub fn from_fn<F>(dim: usize, n_strata: usize, f: F) -> Self
    where
        F: Fn(&[f64], u8, usize) -> f64 + Send + Sync + 'static,
    {
        let f = Arc::new(f);
        let arm = |a: u8| -> Option<Arc<dyn Regressor>> { Some(Arc::new(FnRegressor { f: f.clone(), arm: a })) };
        Self {
            kind: AdjusterKind::Oracle,
            stratum_specific: false,
            dim,
            n_strata,
            pooled: [arm(0), arm(1)],
            cells: Vec::new(),
            diagnostics: FitDiagnostics::default(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn regressor(&self, arm: u8, stratum: usize) -> &dyn Regressor {
        let a = usize::from(arm);
        if let Some(cell) = self.cells.get(stratum).and_then(|c| c[a].as_ref()) {
            return cell.as_ref();
        }
        self.pooled[a].as_deref().expect("pooled fit exists whenever a cell falls back")
    }

    /// `h_[k](x, a)`.
    pub fn predict(&self, x: &[f64], arm: u8, stratum: usize) -> Result<f64> {
        if x.len() != self.dim {
            return Err(Error::data(format!("covariate vector has {} entries, fit expects {}", x.len(), self.dim)));
        }
        if arm > 1 || stratum >= self.n_strata {
            return Err(Error::data(format!("no fit for arm {arm}, stratum {}", stratum + 1)));
        }
        Ok(self.regressor(arm, stratum).predict(x, stratum))
    }

    /// Predictions `(h(X_i, 0), h(X_i, 1))` for every unit of `ds`.
    pub fn predict_dataset(&self, ds: &TrialDataset) -> Result<(Vec<f64>, Vec<f64>)> {
        if ds.dim() != self.dim || ds.n_strata > self.n_strata {
            return Err(Error::data(format!(
                "dataset has p={} and K={}, fit expects p={} and K<={}",
                ds.dim(),
                ds.n_strata,
                self.dim,
                self.n_strata
            )));
        }
        let n = ds.n();
        let (mut h0, mut h1) = (Vec::with_capacity(n), Vec::with_capacity(n));
        for i in 0..n {
            let (x, k) = (ds.x.row(i), ds.strata[i]);
            h0.push(self.regressor(0, k).predict(x, k));
            h1.push(self.regressor(1, k).predict(x, k));
        }
        Ok((h0, h1))
    }
}

struct FnRegressor<F> {
    f: Arc<F>,
    arm: u8,
}

impl<F> fmt::Debug for FnRegressor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "FnRegressor(arm {})", self.arm)
    }
}

impl<F: Fn(&[f64], u8, usize) -> f64 + Send + Sync> Regressor for FnRegressor<F> {
    fn predict(&self, x: &[f64], stratum: usize) -> f64 {
        (self.f)(x, self.arm, stratum)
    }

    fn size(&self) -> usize {
        0
    }
}

#[derive(Debug)]
struct Constant(f64);

impl Regressor for Constant {
    fn predict(&self, _: &[f64], _: usize) -> f64 {
        self.0
    }

    fn size(&self) -> usize {
        1
    }
}

#[derive(Debug)]
struct Oracle {
    model: ModelSpec,
    arm: u8,
}

impl Regressor for Oracle {
    fn predict(&self, x: &[f64], stratum: usize) -> f64 {
        crate::datagen::outcome_mean(self.model.id, self.arm, x, stratum)
    }

    fn size(&self) -> usize {
        0
    }
}

/// Fits one learner on `(x, y)`.
pub fn fit_regressor(
    spec: &AdjusterSpec,
    arm: u8,
    x: &Covariates,
    y: &[f64],
    seed: u64,
) -> Result<Arc<dyn Regressor>> {
    let h = &spec.params;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let need = spec.min_train(x.cols());
    if y.len() < need {
        return Err(Error::estimation(format!(
            "{} adjuster needs at least {need} units in arm {arm}, got {}",
            spec.kind,
            y.len()
        )));
    }
    let r: Arc<dyn Regressor> = match spec.kind {
        AdjusterKind::Zero => Arc::new(Constant(0.0)),
        AdjusterKind::Oracle => {
            let model = spec.model.ok_or_else(|| Error::config("oracle adjuster requires a model specification"))?;
            if model.p != x.cols() {
                return Err(Error::data(format!("oracle model expects p={}, data has {}", model.p, x.cols())));
            }
            Arc::new(Oracle { model, arm })
        }
        AdjusterKind::Ols => Arc::new(Linear::fit(x, y)),
        AdjusterKind::Lasso => Arc::new(Lasso::fit(x, y, h, &mut rng)),
        AdjusterKind::LocalLinearKernel if h.bandwidth_cv => Arc::new(LocalLinearKernel::fit_cv(x, y, h.bandwidth_scale)),
        AdjusterKind::LocalLinearKernel => Arc::new(LocalLinearKernel::fit(x, y, h.bandwidth_scale)),
        AdjusterKind::NaturalSpline => Arc::new(NaturalSpline::fit(x, y, h.spline_df)),
        AdjusterKind::Cart => Arc::new(Tree::fit(x, y, &TreeParams::from_hyper(h, x.cols(), false), &mut rng)),
        AdjusterKind::RandomForest => Arc::new(RandomForest::fit(x, y, h, &mut rng)),
        AdjusterKind::Gbrt => Arc::new(GradientBoosting::fit(x, y, h)),
        AdjusterKind::Mlp => Arc::new(Mlp::fit(x, y, &MlpParams::from_hyper(h), &mut rng)),
    };
    Ok(r)
}

/// Fits `h(., a)` for both arms, pooled or per stratum.
pub fn fit<R: Rng + ?Sized>(spec: &AdjusterSpec, ds: &TrialDataset, rng: &mut R) -> Result<ProjectionFit> {
    spec.validate()?;
    let d = ds.dim();
    let k_count = ds.n_strata;
    // Seeds are drawn up front so each cell's fit is independent of the others.
    let pooled_seeds: [u64; 2] = [rng.random(), rng.random()];
    let cell_seeds: Vec<[u64; 2]> = (0..k_count).map(|_| [rng.random(), rng.random()]).collect();

    let data_free = matches!(spec.kind, AdjusterKind::Zero | AdjusterKind::Oracle);
    let specific = spec.stratum_specific && !data_free;
    let mut cells: Vec<[Option<Arc<dyn Regressor>>; 2]> = Vec::new();
    let mut fallback = Vec::new();
    if specific {
        let threshold = spec.fallback_threshold(d);
        for k in 0..k_count {
            let mut pair: [Option<Arc<dyn Regressor>>; 2] = [None, None];
            for a in 0..2u8 {
                let idx = ds.arm_indices(a, Some(k));
                if idx.len() < threshold {
                    fallback.push((k, a));
                    continue;
                }
                let y: Vec<f64> = idx.iter().map(|&i| ds.y[i]).collect();
                pair[usize::from(a)] = Some(fit_regressor(spec, a, &ds.x.select(&idx), &y, cell_seeds[k][usize::from(a)])?);
            }
            cells.push(pair);
        }
    }
    let need_pooled = !specific || !fallback.is_empty();
    let mut pooled: [Option<Arc<dyn Regressor>>; 2] = [None, None];
    if need_pooled {
        for a in 0..2u8 {
            if specific && !fallback.iter().any(|&(_, b)| b == a) {
                continue;
            }
            let idx = ds.arm_indices(a, None);
            let y: Vec<f64> = idx.iter().map(|&i| ds.y[i]).collect();
            pooled[usize::from(a)] = Some(fit_regressor(spec, a, &ds.x.select(&idx), &y, pooled_seeds[usize::from(a)])?);
        }
    }
    let mut out = ProjectionFit {
        kind: spec.kind,
        stratum_specific: specific,
        dim: d,
        n_strata: k_count,
        pooled,
        cells,
        diagnostics: FitDiagnostics { fallback_cells: fallback, ..Default::default() },
    };
    let mut size = out.pooled.iter().flatten().map(|r| r.size()).sum::<usize>();
    size += out.cells.iter().flat_map(|c| c.iter().flatten()).map(|r| r.size()).sum::<usize>();
    out.diagnostics.model_size = size;
    for a in 0..2u8 {
        let idx = ds.arm_indices(a, None);
        let sse: f64 = idx
            .iter()
            .map(|&i| (ds.y[i] - out.regressor(a, ds.strata[i]).predict(ds.x.row(i), ds.strata[i])).powi(2))
            .sum();
        out.diagnostics.in_sample_mse[usize::from(a)] = if idx.is_empty() { f64::NAN } else { sse / idx.len() as f64 };
    }
    if !out.diagnostics.fallback_cells.is_empty() {
        log::debug!("{} adjuster: pooled fallback for cells {:?}", spec.kind, out.diagnostics.fallback_cells);
    }
    Ok(out)
}
