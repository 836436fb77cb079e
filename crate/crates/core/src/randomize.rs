//! Treatment assignment mechanisms.
//!
//! Every randomizer sees only the stratum labels (or stratification levels)
//! and its RNG, never covariates or outcomes, and processes units in arrival
//! order, which is the dataset order.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RandomizerKind {
    Simple,
    StratifiedBlock,
    EfronBiasedCoin,
    Minimization,
}

impl RandomizerKind {
    pub fn parse(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().replace('-', "_").as_str() {
            "simple" | "complete" => Ok(Self::Simple),
            "stratified_block" | "block" => Ok(Self::StratifiedBlock),
            "efron_biased_coin" | "biased_coin" | "efron" => Ok(Self::EfronBiasedCoin),
            "minimization" | "pocock_simon" => Ok(Self::Minimization),
            other => Err(Error::config(format!("unknown randomizer '{other}'"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Simple => "simple",
            Self::StratifiedBlock => "stratified_block",
            Self::EfronBiasedCoin => "efron_biased_coin",
            Self::Minimization => "minimization",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RandomizerConfig {
    pub kind: RandomizerKind,
    pub pi: f64,
    pub block_size: usize,
    /// Probability of choosing the preferred (imbalance-reducing) arm.
    pub coin_prob: f64,
    /// Weights of the stratification variables (minimization only).
    pub weights: Vec<f64>,
}

impl RandomizerConfig {
    /// Defaults: block size 6, coin probability 0.75, equal weights.
    pub fn new(kind: RandomizerKind, pi: f64) -> Self {
        let coin_prob = if kind == RandomizerKind::EfronBiasedCoin { 2.0 / 3.0 } else { 0.75 };
        Self { kind, pi, block_size: 6, coin_prob, weights: Vec::new() }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.pi > 0.0 && self.pi <= 1.0) {
            return Err(Error::config(format!("pi must lie in (0, 1], got {}", self.pi)));
        }
        match self.kind {
            RandomizerKind::Simple => {}
            RandomizerKind::StratifiedBlock => {
                if self.block_size == 0 {
                    return Err(Error::config("block_size must be positive"));
                }
                treated_per_block(self.block_size, self.pi)?;
            }
            RandomizerKind::EfronBiasedCoin | RandomizerKind::Minimization => {
                if !(self.coin_prob > 0.5 && self.coin_prob <= 1.0) {
                    return Err(Error::config(format!("coin_prob must lie in (0.5, 1], got {}", self.coin_prob)));
                }
                if self.kind == RandomizerKind::EfronBiasedCoin && (self.pi - 0.5).abs() > 1e-12 {
                    return Err(Error::config("efron_biased_coin requires pi = 1/2"));
                }
                if self.weights.iter().any(|w| !(*w >= 0.0)) {
                    return Err(Error::config("minimization weights must be nonnegative"));
                }
            }
        }
        Ok(())
    }
}

fn treated_per_block(block_size: usize, pi: f64) -> Result<usize> {
    let t = block_size as f64 * pi;
    if (t - t.round()).abs() > 1e-9 {
        return Err(Error::config(format!("block_size * pi = {t} is not an integer")));
    }
    Ok(t.round() as usize)
}

/// Independent Bernoulli(`pi`) assignments.
pub fn simple_randomize<R: Rng + ?Sized>(n: usize, pi: f64, rng: &mut R) -> Vec<u8> {
    (0..n).map(|_| u8::from(rng.random::<f64>() < pi)).collect()
}

/// Permuted blocks within each stratum.
///
/// Complete blocks hold exactly `block_size * pi` treated units; a trailing
/// incomplete block of size `s` holds `round_half_up(s * pi)`.
pub fn stratified_block<R: Rng + ?Sized>(strata: &[usize], cfg: &RandomizerConfig, rng: &mut R) -> Result<Vec<u8>> {
    if cfg.block_size == 0 {
        return Err(Error::config("block_size must be positive"));
    }
    let per_block = treated_per_block(cfg.block_size, cfg.pi)?;
    let k_max = strata.iter().copied().max().map_or(0, |k| k + 1);
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); k_max];
    for (i, &k) in strata.iter().enumerate() {
        members[k].push(i);
    }
    let mut out = vec![0u8; strata.len()];
    let mut block = Vec::with_capacity(cfg.block_size);
    for units in &members {
        for chunk in units.chunks(cfg.block_size) {
            let treated = if chunk.len() == cfg.block_size {
                per_block
            } else {
                (chunk.len() as f64 * cfg.pi + 0.5).floor() as usize
            };
            block.clear();
            block.extend((0..chunk.len()).map(|j| u8::from(j < treated)));
            block.shuffle(rng);
            for (&i, &a) in chunk.iter().zip(&block) {
                out[i] = a;
            }
        }
    }
    Ok(out)
}

/// Probability that the next unit is treated given the current treated-minus-control
/// imbalance in its stratum.
pub fn efron_treat_prob(imbalance: i64, coin_prob: f64) -> f64 {
    match imbalance.signum() {
        0 => 0.5,
        1 => 1.0 - coin_prob,
        _ => coin_prob,
    }
}

/// Efron's biased coin applied separately within each stratum.
pub fn efron_biased_coin<R: Rng + ?Sized>(strata: &[usize], cfg: &RandomizerConfig, rng: &mut R) -> Result<Vec<u8>> {
    if (cfg.pi - 0.5).abs() > 1e-12 {
        return Err(Error::config("efron_biased_coin requires pi = 1/2"));
    }
    if !(cfg.coin_prob > 0.5 && cfg.coin_prob <= 1.0) {
        return Err(Error::config(format!("coin_prob must lie in (0.5, 1], got {}", cfg.coin_prob)));
    }
    let k_max = strata.iter().copied().max().map_or(0, |k| k + 1);
    let mut imbalance = vec![0i64; k_max];
    Ok(strata
        .iter()
        .map(|&k| {
            let a = u8::from(rng.random::<f64>() < efron_treat_prob(imbalance[k], cfg.coin_prob));
            imbalance[k] += if a == 1 { 1 } else { -1 };
            a
        })
        .collect())
}

/// Weighted marginal imbalance if the incoming unit were given arm `arm`.
///
/// Per level the imbalance is `|T/pi - C/(1-pi)|`, which reduces to a
/// multiple of `|T - C|` under equal allocation.
pub fn minimization_imbalance(counts: &[[usize; 2]], weights: &[f64], pi: f64, arm: u8) -> f64 {
    counts
        .iter()
        .zip(weights)
        .map(|(c, w)| {
            let t = (c[1] + usize::from(arm == 1)) as f64;
            let ctl = (c[0] + usize::from(arm == 0)) as f64;
            w * (t / pi - ctl / (1.0 - pi)).abs()
        })
        .sum()
}

/// Probability of treatment for the incoming unit given its levels' current counts.
pub fn minimization_treat_prob(counts: &[[usize; 2]], weights: &[f64], pi: f64, coin_prob: f64) -> f64 {
    let imb1 = minimization_imbalance(counts, weights, pi, 1);
    let imb0 = minimization_imbalance(counts, weights, pi, 0);
    if (imb1 - imb0).abs() <= 1e-12 * (1.0 + imb1.abs().max(imb0.abs())) {
        pi
    } else if imb1 < imb0 {
        coin_prob
    } else {
        1.0 - coin_prob
    }
}

/// Pocock-Simon minimization over `q` categorical stratification variables.
///
/// `levels[i]` holds the level index of unit `i` for each variable. Empty
/// `cfg.weights` means equal weights.
pub fn pocock_simon_minimization<R: Rng + ?Sized>(
    levels: &[Vec<usize>],
    cfg: &RandomizerConfig,
    rng: &mut R,
) -> Result<Vec<u8>> {
    let q = levels.first().map_or(0, Vec::len);
    if q == 0 && !levels.is_empty() {
        return Err(Error::config("minimization needs at least one stratification variable"));
    }
    if levels.iter().any(|l| l.len() != q) {
        return Err(Error::config("every unit needs the same number of stratification levels"));
    }
    if !(cfg.pi > 0.0 && cfg.pi < 1.0) {
        return Err(Error::config(format!("minimization requires pi in (0,1), got {}", cfg.pi)));
    }
    if !(cfg.coin_prob > 0.5 && cfg.coin_prob <= 1.0) {
        return Err(Error::config(format!("coin_prob must lie in (0.5, 1], got {}", cfg.coin_prob)));
    }
    let weights = if cfg.weights.is_empty() {
        vec![1.0; q]
    } else if cfg.weights.len() == q {
        cfg.weights.clone()
    } else {
        return Err(Error::config(format!("{} weights given for {q} stratification variables", cfg.weights.len())));
    };
    let mut counts: Vec<Vec<[usize; 2]>> = (0..q)
        .map(|j| vec![[0, 0]; levels.iter().map(|l| l[j] + 1).max().unwrap_or(0)])
        .collect();
    let mut out = Vec::with_capacity(levels.len());
    let mut local = vec![[0usize; 2]; q];
    for unit in levels {
        for j in 0..q {
            local[j] = counts[j][unit[j]];
        }
        let p = minimization_treat_prob(&local, &weights, cfg.pi, cfg.coin_prob);
        let a = u8::from(rng.random::<f64>() < p);
        for j in 0..q {
            counts[j][unit[j]][a as usize] += 1;
        }
        out.push(a);
    }
    Ok(out)
}

/// Dispatches on `cfg.kind`. Minimization uses the stratum label as its
/// single stratification variable.
pub fn randomize<R: Rng + ?Sized>(cfg: &RandomizerConfig, strata: &[usize], rng: &mut R) -> Result<Vec<u8>> {
    cfg.validate()?;
    match cfg.kind {
        RandomizerKind::Simple => Ok(simple_randomize(strata.len(), cfg.pi, rng)),
        RandomizerKind::StratifiedBlock => stratified_block(strata, cfg, rng),
        RandomizerKind::EfronBiasedCoin => efron_biased_coin(strata, cfg, rng),
        RandomizerKind::Minimization => {
            let levels: Vec<Vec<usize>> = strata.iter().map(|&k| vec![k]).collect();
            pocock_simon_minimization(&levels, cfg, rng)
        }
    }
}
