//! Synthetic trial populations with known potential outcomes.
//!
//! Models 1-4 are low dimensional; models 5-8 reuse the outcome surfaces of
//! models 1-4 and append `p - base_dim` nuisance covariates.
//!
//! Potential outcomes follow `Y(a) = g_a(X) + sigma_a * eps_a` with
//! `sigma_0 = 1`, `sigma_1 = 3` and independent standard normal errors.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Beta, Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{Covariates, TrialDataset};
use crate::error::{Error, Result};

pub const SIGMA0: f64 = 1.0;
pub const SIGMA1: f64 = 3.0;

/// Default total dimension of the high-dimensional models.
pub const DEFAULT_HIGH_DIM: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub id: u8,
    pub n: usize,
    /// Total number of covariates.
    pub p: usize,
}

impl ModelSpec {
    /// Model `id` with its default dimension (fixed for 1-4, 200 for 5-8).
    pub fn new(id: u8, n: usize) -> Result<Self> {
        let p = match id {
            1..=4 => base_dim(id),
            5..=8 => DEFAULT_HIGH_DIM,
            _ => return Err(Error::config(format!("model id must be in 1..=8, got {id}"))),
        };
        Self::with_dim(id, n, p)
    }

    pub fn with_dim(id: u8, n: usize, p: usize) -> Result<Self> {
        if !(1..=8).contains(&id) {
            return Err(Error::config(format!("model id must be in 1..=8, got {id}")));
        }
        let base = base_dim(id);
        if id <= 4 && p != base {
            return Err(Error::config(format!("model {id} has exactly {base} covariates, got p = {p}")));
        }
        if p < base {
            return Err(Error::config(format!("model {id} needs p >= {base}, got {p}")));
        }
        Ok(Self { id, n, p })
    }

    /// The low-dimensional model whose outcome surface this model shares.
    pub fn base_model(&self) -> u8 {
        base_model(self.id)
    }

    pub fn base_dim(&self) -> usize {
        base_dim(self.id)
    }

    pub fn stratum_probs(&self) -> &'static [f64] {
        stratum_probs(self.id)
    }

    pub fn n_strata(&self) -> usize {
        self.stratum_probs().len()
    }

    /// Exact conditional mean `E[Y(a) | X = x, B = k]`.
    pub fn oracle_h(&self, arm: u8, x: &[f64], stratum: usize) -> Result<f64> {
        if x.len() != self.p {
            return Err(Error::data(format!("covariate vector has {} entries, model {} expects {}", x.len(), self.id, self.p)));
        }
        if stratum >= self.n_strata() {
            return Err(Error::data(format!("stratum {stratum} out of range for model {}", self.id)));
        }
        Ok(outcome_mean(self.id, arm, x, stratum))
    }
}

pub fn base_model(id: u8) -> u8 {
    if id > 4 {
        id - 4
    } else {
        id
    }
}

pub fn base_dim(id: u8) -> usize {
    match base_model(id) {
        1 | 3 => 4,
        _ => 2,
    }
}

pub fn stratum_probs(id: u8) -> &'static [f64] {
    match base_model(id) {
        1 | 2 => &[0.2, 0.3, 0.3, 0.2],
        3 => &[0.4, 0.6],
        _ => &[0.5, 0.5],
    }
}

/// Value of the model-4 stratification variable S for a stratum index.
/// Stratum 0 is `S = 1`, stratum 1 is `S = -1`.
pub fn model4_s(stratum: usize) -> f64 {
    if stratum == 0 {
        1.0
    } else {
        -1.0
    }
}

/// `g_a(x)` for model `id`; only the first `base_dim` coordinates matter.
pub fn outcome_mean(id: u8, arm: u8, x: &[f64], stratum: usize) -> f64 {
    match (base_model(id), arm) {
        (1, 0) => 1.0 + 75.0 * x[0] + 35.0 * x[1] + 125.0 * x[2] + 80.0 * x[3],
        (1, _) => 4.0 + 100.0 * x[0] + 80.0 * x[1] + 60.0 * x[2] + 40.0 * x[3],
        (2, 0) => {
            -3.0 + 10.0 * (x[0] + 1.0).ln() + 24.0 * x[0] * x[0] + 15.0 * x[1].exp() + 20.0 / (x[1] + 3.0)
        }
        (2, _) => 20.0 * (x[0] + 2.0).exp() + 17.0 / (x[0] + 1.0) + 10.0 * x[1] * x[1],
        (3, 0) => 5.0 + 42.0 * x[0] * x[1] / (x[0] + x[1] + 2.0) + 83.0 * x[0] * x[0] * (x[1] + x[2]),
        (3, _) => 2.0 + 30.0 * (x[1] + x[3]) + 75.0 * x[1] * x[1] / (x[0] + 2.0).exp(),
        (_, 0) => {
            let s = model4_s(stratum);
            let on = if s > 0.0 { 1.0 } else { 0.0 };
            5.0 + (20.0 * x[0] + 30.0 * x[1]) * s + 50.0 * (x[0] + 1.0).ln() * on
        }
        (_, _) => {
            let s = model4_s(stratum);
            let on = if s < 0.0 { 1.0 } else { 0.0 };
            5.0 + (20.0 * x[0] + 30.0 * x[1]) * s + 65.0 * x[1].exp() * on
        }
    }
}

/// One draw of a synthetic population before assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSample {
    pub model: ModelSpec,
    pub x: Covariates,
    pub strata: Vec<usize>,
    pub y0: Vec<f64>,
    pub y1: Vec<f64>,
    /// Models 6 and 8: `(column, 0|1)` for each extra covariate multiplied
    /// by `X1` (0) or `X2` (1).
    pub interactions: Vec<(usize, u8)>,
}

impl SyntheticSample {
    pub fn n(&self) -> usize {
        self.y0.len()
    }

    /// Reveals `Y = A*Y1 + (1-A)*Y0` under the given assignment.
    pub fn assign(&self, arms: Vec<u8>, pi_target: f64) -> Result<TrialDataset> {
        if arms.len() != self.n() {
            return Err(Error::data(format!("{} assignments for {} units", arms.len(), self.n())));
        }
        let y = arms
            .iter()
            .zip(self.y0.iter().zip(&self.y1))
            .map(|(&a, (&y0, &y1))| if a == 1 { y1 } else { y0 })
            .collect();
        let mut ds = TrialDataset::new(self.x.clone(), self.strata.clone(), self.model.n_strata(), arms, y, pi_target)?
            .with_potential(self.y0.clone(), self.y1.clone())?;
        ds.meta.notes.push(format!("synthetic model {} (n={}, p={})", self.model.id, self.model.n, self.model.p));
        if !self.interactions.is_empty() {
            let desc: Vec<String> =
                self.interactions.iter().map(|(c, w)| format!("x{}*x{}", c + 1, w + 1)).collect();
            ds.meta.notes.push(format!("interactions: {}", desc.join(" ")));
        }
        if base_model(self.model.id) == 4 {
            ds.meta.stratum_labels = vec!["1".into(), "-1".into()];
        }
        Ok(ds)
    }
}

/// Sampler for one model specification; the Toeplitz Cholesky factor of
/// model 7 is computed once here and reused for every draw.
#[derive(Debug, Clone)]
pub struct Generator {
    spec: ModelSpec,
    toeplitz_chol: Option<DMatrix<f64>>,
}

const EQUICORRELATION: f64 = 0.2;
const TOEPLITZ_RATIO: f64 = 0.5;

impl Generator {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let spec = ModelSpec::with_dim(spec.id, spec.n, spec.p)?;
        let extra = spec.p - spec.base_dim();
        let toeplitz_chol = if spec.id == 7 && extra > 0 {
            let cov = DMatrix::from_fn(extra, extra, |i, j| TOEPLITZ_RATIO.powi((i as i32 - j as i32).abs()));
            let chol = cov
                .cholesky()
                .ok_or_else(|| Error::config("Toeplitz covariance is not positive definite"))?;
            Some(chol.l())
        } else {
            None
        };
        Ok(Self { spec, toeplitz_chol })
    }

    pub fn spec(&self) -> ModelSpec {
        self.spec
    }

    fn draw_base<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let beta = Beta::new(3.0, 4.0).expect("valid beta shape");
        match self.spec.base_model() {
            1 => {
                out[0] = beta.sample(rng);
                out[1] = rng.random_range(-2.0..=2.0);
                out[2] = if rng.random::<f64>() < 0.5 { -1.0 } else { 1.0 };
                out[3] = if rng.random::<f64>() < 0.6 { 3.0 } else { 5.0 };
            }
            3 => {
                out[0] = beta.sample(rng);
                out[1] = rng.random_range(-2.0..=2.0);
                out[2] = StandardNormal.sample(rng);
                out[3] = rng.random_range(0.0..=2.0);
            }
            _ => {
                out[0] = beta.sample(rng);
                out[1] = rng.random_range(-2.0..=2.0);
            }
        }
    }

    fn draw_stratum<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        let u: f64 = rng.random();
        let probs = self.spec.stratum_probs();
        let mut acc = 0.0;
        for (k, p) in probs.iter().enumerate() {
            acc += p;
            if u < acc {
                return k;
            }
        }
        probs.len() - 1
    }

    fn draw_extra<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64], z: &mut [f64]) {
        if out.is_empty() {
            return;
        }
        match &self.toeplitz_chol {
            Some(l) => {
                for zi in z.iter_mut() {
                    *zi = StandardNormal.sample(rng);
                }
                for (i, o) in out.iter_mut().enumerate() {
                    *o = (0..=i).map(|j| l[(i, j)] * z[j]).sum();
                }
            }
            None => {
                // Equicorrelated normals: shared factor plus idiosyncratic part.
                let common: f64 = StandardNormal.sample(rng);
                let (a, b) = (EQUICORRELATION.sqrt(), (1.0 - EQUICORRELATION).sqrt());
                for o in out.iter_mut() {
                    let e: f64 = StandardNormal.sample(rng);
                    *o = a * common + b * e;
                }
            }
        }
    }

    /// Draws `n` i.i.d. units with both potential outcomes.
    pub fn generate<R: Rng + ?Sized>(&self, rng: &mut R) -> SyntheticSample {
        let spec = self.spec;
        let base = spec.base_dim();
        let extra = spec.p - base;
        let interactions: Vec<(usize, u8)> = if matches!(spec.id, 6 | 8) {
            let chosen = extra.min(spec.p / 3);
            let mut idx = sample(rng, extra, chosen).into_vec();
            idx.sort_unstable();
            idx.into_iter().map(|j| (base + j, u8::from(rng.random::<f64>() >= 0.5))).collect()
        } else {
            Vec::new()
        };
        let mut x = Covariates::zeros(spec.n, spec.p);
        let mut strata = Vec::with_capacity(spec.n);
        let mut y0 = Vec::with_capacity(spec.n);
        let mut y1 = Vec::with_capacity(spec.n);
        let mut z = vec![0.0; extra];
        for i in 0..spec.n {
            let row = x.row_mut(i);
            self.draw_base(rng, &mut row[..base]);
            let k = self.draw_stratum(rng);
            self.draw_extra(rng, &mut row[base..], &mut z);
            for &(c, w) in &interactions {
                row[c] *= row[w as usize];
            }
            let e0: f64 = StandardNormal.sample(rng);
            let e1: f64 = StandardNormal.sample(rng);
            y0.push(outcome_mean(spec.id, 0, row, k) + SIGMA0 * e0);
            y1.push(outcome_mean(spec.id, 1, row, k) + SIGMA1 * e1);
            strata.push(k);
        }
        SyntheticSample { model: spec, x, strata, y0, y1, interactions }
    }
}

pub fn generate<R: Rng + ?Sized>(spec: ModelSpec, rng: &mut R) -> Result<SyntheticSample> {
    Ok(Generator::new(spec)?.generate(rng))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TruthMethod {
    ClosedForm,
    MonteCarlo { draws: usize, seed: u64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AteTruth {
    pub tau: f64,
    /// Monte Carlo standard error; zero for closed forms.
    pub se: f64,
    pub draws: usize,
}

/// `E[X1] = 3/7` for Beta(3,4), `E[X4] = 3.8`, the rest centred.
pub const MODEL1_TAU: f64 = 3.0 + 25.0 * 3.0 / 7.0 - 40.0 * 3.8;

/// Population average treatment effect `E[g_1(X) - g_0(X)]`.
pub fn true_ate(spec: ModelSpec, method: TruthMethod) -> Result<AteTruth> {
    match method {
        TruthMethod::ClosedForm => match spec.base_model() {
            1 => Ok(AteTruth { tau: MODEL1_TAU, se: 0.0, draws: 0 }),
            _ => Err(Error::config(format!("no closed-form ATE for model {}", spec.id))),
        },
        TruthMethod::MonteCarlo { draws, seed } => {
            if draws < 2 {
                return Err(Error::config("Monte Carlo truth needs at least 2 draws"));
            }
            // Only the base covariates enter g_a.
            let base = ModelSpec::new(spec.base_model(), 1)?;
            let gen = Generator::new(base)?;
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut x = vec![0.0; base.p];
            let (mut mean, mut m2) = (0.0, 0.0);
            for t in 0..draws {
                gen.draw_base(&mut rng, &mut x);
                let k = gen.draw_stratum(&mut rng);
                let d = outcome_mean(base.id, 1, &x, k) - outcome_mean(base.id, 0, &x, k);
                let delta = d - mean;
                mean += delta / (t + 1) as f64;
                m2 += delta * (d - mean);
            }
            let var = m2 / (draws - 1) as f64;
            Ok(AteTruth { tau: mean, se: (var / draws as f64).sqrt(), draws })
        }
    }
}
