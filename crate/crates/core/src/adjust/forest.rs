use rand::Rng;

use crate::adjust::tree::{Binned, Tree, TreeParams};
use crate::adjust::{Hyperparams, Regressor};
use crate::data::Covariates;

/// Bagged regression trees with per-split feature subsampling.
#[derive(Debug, Clone)]
pub struct RandomForest {
    trees: Vec<Tree>,
}

impl RandomForest {
    pub fn fit<R: Rng + ?Sized>(x: &Covariates, y: &[f64], h: &Hyperparams, rng: &mut R) -> Self {
        let params = TreeParams::from_hyper(h, x.cols(), true);
        let binned = Binned::new(x);
        let m = y.len();
        let mut counts = vec![0.0; m];
        let trees = (0..h.trees)
            .map(|_| {
                counts.fill(0.0);
                for _ in 0..m {
                    counts[rng.random_range(0..m)] += 1.0;
                }
                Tree::build(&binned, y, &counts, &params, rng)
            })
            .collect();
        Self { trees }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        if self.trees.is_empty() {
            return 0.0;
        }
        self.trees.iter().map(|t| t.eval(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn trees(&self) -> &[Tree] {
        &self.trees
    }
}

impl Regressor for RandomForest {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.trees.iter().map(Tree::leaves).sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::adjust::AdjusterKind;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn constant_outcome_gives_constant_forest() {
        let rows: Vec<Vec<f64>> = (0..50).map(|i| vec![i as f64, (i % 7) as f64]).collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let mut h = Hyperparams::for_kind(AdjusterKind::RandomForest);
        h.trees = 20;
        let f = RandomForest::fit(&x, &[-1.25; 50], &h, &mut ChaCha8Rng::seed_from_u64(3));
        assert_eq!(f.eval(&[10.0, 2.0]), -1.25);
    }

    #[test]
    fn mtry_defaults_to_a_third() {
        let h = Hyperparams::for_kind(AdjusterKind::RandomForest);
        assert_eq!(TreeParams::from_hyper(&h, 200, true).mtry, Some(67));
        assert_eq!(TreeParams::from_hyper(&h, 2, true).mtry, Some(1));
    }
}
