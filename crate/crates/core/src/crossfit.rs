//! M-fold cross-fitted estimation: projection functions are fitted on the
//! complement of each fold and evaluated on the fold; fold estimates and
//! variances are averaged.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::adjust::{self, AdjusterSpec};
use crate::data::TrialDataset;
use crate::error::{Error, Result};
use crate::estimate::{plug_in_estimate, wald_ci, EffectEstimate, DEFAULT_LEVEL};

pub const DEFAULT_FOLDS: usize = 5;

/// Redraws allowed when a fold lacks an arm in some stratum.
pub const MAX_PARTITION_DRAWS: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPartition {
    pub folds: Vec<Vec<usize>>,
}

impl FoldPartition {
    pub fn m(&self) -> usize {
        self.folds.len()
    }

    /// Units outside fold `m`, in increasing order.
    pub fn complement(&self, m: usize) -> Vec<usize> {
        let mut out: Vec<usize> =
            self.folds.iter().enumerate().filter(|(j, _)| *j != m).flat_map(|(_, f)| f.iter().copied()).collect();
        out.sort_unstable();
        out
    }
}

/// Uniform random partition of `0..n` into `m` folds: the first `m - 1` have
/// `floor(n/m)` units and the last takes the remainder.
pub fn partition_folds<R: Rng + ?Sized>(n: usize, m: usize, rng: &mut R) -> Result<FoldPartition> {
    if m < 2 || m > n {
        return Err(Error::config(format!("fold count must satisfy 2 <= M <= n, got M={m}, n={n}")));
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(rng);
    let size = n / m;
    let folds = (0..m)
        .map(|j| {
            let end = if j + 1 == m { n } else { (j + 1) * size };
            let mut f = perm[j * size..end].to_vec();
            f.sort_unstable();
            f
        })
        .collect();
    Ok(FoldPartition { folds })
}

#[derive(Debug, Clone)]
pub struct CrossFitResult {
    pub estimate: EffectEstimate,
    pub fold_estimates: Vec<EffectEstimate>,
    pub partition: FoldPartition,
    /// Partitions discarded because a fold lacked an arm in some stratum.
    pub redraws: usize,
}

fn fold_is_usable(ds: &TrialDataset, fold: &[usize]) -> bool {
    let mut seen = vec![[false; 2]; ds.n_strata];
    for &i in fold {
        seen[ds.strata[i]][usize::from(ds.arms[i])] = true;
    }
    seen.iter().all(|s| s[0] && s[1])
}

/// Averages fold estimates: `tau = mean(tau_m)`, `sigma^2 = mean(sigma^2_m)`,
/// `se = sqrt(sigma^2 / n)`.
pub fn aggregate(folds: &[EffectEstimate], n: usize, method: &str) -> EffectEstimate {
    let m = folds.len() as f64;
    let tau = folds.iter().map(|e| e.tau_hat).sum::<f64>() / m;
    let var_r = folds.iter().map(|e| e.var_r).sum::<f64>() / m;
    let var_hr = folds.iter().map(|e| e.var_hr).sum::<f64>() / m;
    let sigma2 = folds.iter().map(|e| e.var_r + e.var_hr).sum::<f64>() / m;
    let est = EffectEstimate {
        tau_hat: tau,
        var_r,
        var_hr,
        se: (sigma2 / n as f64).sqrt(),
        n,
        ci_level: DEFAULT_LEVEL,
        ci_low: tau,
        ci_high: tau,
        method: method.to_string(),
    };
    wald_ci(est, DEFAULT_LEVEL)
}

/// Cross-fitted estimate over a given partition; fold `m` is fitted with `seeds[m]`.
pub fn crossfit_on_partition(
    ds: &TrialDataset,
    spec: &AdjusterSpec,
    partition: &FoldPartition,
    seeds: &[u64],
) -> Result<Vec<EffectEstimate>> {
    (0..partition.m())
        .into_par_iter()
        .map(|m| {
            let train = ds.subset(&partition.complement(m));
            let fit = adjust::fit(spec, &train, &mut ChaCha8Rng::seed_from_u64(seeds[m]))?;
            let fold = ds.subset(&partition.folds[m]);
            let (h0, h1) = fit.predict_dataset(&fold)?;
            plug_in_estimate(&fold, &h0, &h1, spec.kind.label())
        })
        .collect()
}

pub fn crossfit_estimate<R: Rng + ?Sized>(
    ds: &TrialDataset,
    spec: &AdjusterSpec,
    m: usize,
    rng: &mut R,
) -> Result<CrossFitResult> {
    spec.validate()?;
    let mut redraws = 0;
    let partition = loop {
        let p = partition_folds(ds.n(), m, rng)?;
        if p.folds.iter().all(|f| fold_is_usable(ds, f)) {
            break p;
        }
        redraws += 1;
        if redraws > MAX_PARTITION_DRAWS {
            return Err(Error::estimation(format!(
                "no {m}-fold partition with both arms in every stratum of every fold after {MAX_PARTITION_DRAWS} redraws"
            )));
        }
    };
    let seeds: Vec<u64> = (0..m).map(|_| rng.random()).collect();
    let fold_estimates = crossfit_on_partition(ds, spec, &partition, &seeds)?;
    let mut method = format!("{}_ss", spec.kind.label());
    if spec.stratum_specific {
        method.push_str("_stratum");
    }
    let estimate = aggregate(&fold_estimates, ds.n(), &method);
    Ok(CrossFitResult { estimate, fold_estimates, partition, redraws })
}
