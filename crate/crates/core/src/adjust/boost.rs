use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::adjust::tree::{Binned, Tree, TreeParams};
use crate::adjust::{Hyperparams, Regressor};
use crate::data::Covariates;

/// Least-squares gradient boosting: shallow trees fitted stagewise to
/// residuals, each scaled by the shrinkage factor.
#[derive(Debug, Clone)]
pub struct GradientBoosting {
    base: f64,
    shrinkage: f64,
    trees: Vec<Tree>,
}

impl GradientBoosting {
    pub fn fit(x: &Covariates, y: &[f64], h: &Hyperparams) -> Self {
        let params = TreeParams::from_hyper(h, x.cols(), false);
        let binned = Binned::new(x);
        let m = y.len();
        let base = y.iter().sum::<f64>() / m as f64;
        let mut fitted = vec![base; m];
        let mut resid = vec![0.0; m];
        let weights = vec![1.0; m];
        // All features are searched, so the generator is never consulted.
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut trees = Vec::with_capacity(h.rounds);
        for _ in 0..h.rounds {
            for i in 0..m {
                resid[i] = y[i] - fitted[i];
            }
            let tree = Tree::build(&binned, &resid, &weights, &params, &mut rng);
            for i in 0..m {
                fitted[i] += h.shrinkage * tree.eval(x.row(i));
            }
            trees.push(tree);
        }
        Self { base, shrinkage: h.shrinkage, trees }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.base + self.shrinkage * self.trees.iter().map(|t| t.eval(x)).sum::<f64>()
    }
}

impl Regressor for GradientBoosting {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.trees.iter().map(Tree::leaves).sum::<usize>() + 1
    }
}
