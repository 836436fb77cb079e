//! Regression trees grown by greedy squared-error reduction on binned features.
//!
//! A feature with at most [`MAX_BINS`] distinct values keeps every value as
//! its own bin, so splits are exact; otherwise values are grouped into
//! quantile bins. Split thresholds sit halfway between neighbouring bins and
//! are applied to raw covariates at prediction time.

use rand::Rng;

use crate::adjust::{Hyperparams, Regressor};
use crate::data::Covariates;

pub const MAX_BINS: usize = 4096;

const LEAF: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_depth: usize,
    /// Minimum (weighted) number of training units in each child.
    pub min_node: f64,
    /// Nodes whose (weighted) size does not exceed this are not split.
    pub min_split: f64,
    /// Features examined per split; `None` examines all.
    pub mtry: Option<usize>,
}

impl TreeParams {
    pub fn from_hyper(h: &Hyperparams, p: usize, forest: bool) -> Self {
        let mtry = match h.mtry {
            Some(k) => Some(k.min(p)),
            None if forest => Some(p.div_ceil(3).max(1)),
            None => None,
        };
        if forest {
            // Forest node size limits splitting only, so leaves may be smaller.
            Self { max_depth: h.max_depth, min_node: 1.0, min_split: h.min_node as f64, mtry }
        } else {
            Self { max_depth: h.max_depth, min_node: h.min_node as f64, min_split: 0.0, mtry }
        }
    }
}

/// Feature codes and cut points shared by all trees fitted on one training set.
#[derive(Debug, Clone)]
pub struct Binned {
    codes: Vec<Vec<u16>>,
    cuts: Vec<Vec<f64>>,
    rows: usize,
}

impl Binned {
    pub fn new(x: &Covariates) -> Self {
        let mut codes = Vec::with_capacity(x.cols());
        let mut cuts = Vec::with_capacity(x.cols());
        for j in 0..x.cols() {
            let col = x.column(j);
            let mut uniq = col.clone();
            uniq.sort_by(f64::total_cmp);
            uniq.dedup();
            // Upper edge (largest member) of each bin.
            let uppers: Vec<f64> = if uniq.len() <= MAX_BINS {
                uniq.clone()
            } else {
                let mut u: Vec<f64> = (1..=MAX_BINS)
                    .map(|b| uniq[(b * uniq.len()).div_ceil(MAX_BINS) - 1])
                    .collect();
                u.dedup();
                u
            };
            let cut: Vec<f64> = uppers
                .windows(2)
                .map(|w| {
                    // First distinct value above the bin's upper edge.
                    let next = uniq[uniq.partition_point(|v| *v <= w[0])];
                    0.5 * (w[0] + next)
                })
                .collect();
            let code: Vec<u16> = col.iter().map(|v| uppers.partition_point(|u| u < v) as u16).collect();
            codes.push(code);
            cuts.push(cut);
        }
        Self { codes, cuts, rows: x.rows() }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn features(&self) -> usize {
        self.codes.len()
    }

    fn bins(&self, f: usize) -> usize {
        self.cuts[f].len() + 1
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Node {
    feature: usize,
    threshold: f64,
    left: usize,
    right: usize,
    value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tree {
    nodes: Vec<Node>,
}

struct Split {
    feature: usize,
    code: u16,
    score: f64,
}

/// Reusable per-bin accumulators.
struct Scratch {
    w: Vec<f64>,
    s: Vec<f64>,
    keys: Vec<u32>,
    features: Vec<usize>,
}

impl Tree {
    /// Fits a single tree on all units with unit weights.
    pub fn fit<R: Rng + ?Sized>(x: &Covariates, y: &[f64], params: &TreeParams, rng: &mut R) -> Self {
        let binned = Binned::new(x);
        let w = vec![1.0; y.len()];
        Self::build(&binned, y, &w, params, rng)
    }

    /// Grows a tree on units with positive weight.
    pub fn build<R: Rng + ?Sized>(binned: &Binned, y: &[f64], weights: &[f64], params: &TreeParams, rng: &mut R) -> Self {
        let p = binned.features();
        let mut scratch = Scratch {
            w: vec![0.0; MAX_BINS],
            s: vec![0.0; MAX_BINS],
            keys: Vec::new(),
            features: (0..p).collect(),
        };
        let root_rows: Vec<usize> = (0..binned.rows()).filter(|&i| weights[i] > 0.0).collect();
        let mut nodes = vec![Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value: 0.0 }];
        let mut stack = vec![(0usize, root_rows, 0usize)];
        while let Some((id, rows, depth)) = stack.pop() {
            let (mut wt, mut sum, mut sq) = (0.0, 0.0, 0.0);
            for &i in &rows {
                wt += weights[i];
                sum += weights[i] * y[i];
                sq += weights[i] * y[i] * y[i];
            }
            let value = if wt > 0.0 { sum / wt } else { 0.0 };
            nodes[id].value = value;
            let sse = sq - sum * value;
            if depth >= params.max_depth || wt < 2.0 * params.min_node || wt <= params.min_split || sse <= 1e-12 * sq.max(1e-300) {
                continue;
            }
            let Some(split) = best_split(binned, y, weights, &rows, wt, sum, params, rng, &mut scratch) else {
                continue;
            };
            let codes = &binned.codes[split.feature];
            let (left_rows, right_rows): (Vec<usize>, Vec<usize>) =
                rows.iter().partition(|&&i| codes[i] <= split.code);
            let (l, r) = (nodes.len(), nodes.len() + 1);
            let leaf = Node { feature: LEAF, threshold: 0.0, left: 0, right: 0, value: 0.0 };
            nodes.push(leaf);
            nodes.push(leaf);
            let node = &mut nodes[id];
            node.feature = split.feature;
            node.threshold = binned.cuts[split.feature][split.code as usize];
            node.left = l;
            node.right = r;
            stack.push((r, right_rows, depth + 1));
            stack.push((l, left_rows, depth + 1));
        }
        Self { nodes }
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        let mut id = 0;
        loop {
            let n = &self.nodes[id];
            if n.feature == LEAF {
                return n.value;
            }
            id = if x[n.feature] <= n.threshold { n.left } else { n.right };
        }
    }

    pub fn leaves(&self) -> usize {
        self.nodes.iter().filter(|n| n.feature == LEAF).count()
    }

    /// Feature and threshold of the root split, if any.
    pub fn root_split(&self) -> Option<(usize, f64)> {
        let n = &self.nodes[0];
        (n.feature != LEAF).then_some((n.feature, n.threshold))
    }
}

#[allow(clippy::too_many_arguments)]
fn best_split<R: Rng + ?Sized>(
    binned: &Binned,
    y: &[f64],
    weights: &[f64],
    rows: &[usize],
    wt: f64,
    sum: f64,
    params: &TreeParams,
    rng: &mut R,
    scratch: &mut Scratch,
) -> Option<Split> {
    let p = binned.features();
    let tried = params.mtry.map_or(p, |k| k.min(p));
    if tried < p {
        // Partial Fisher-Yates draw of the candidate features.
        for t in 0..tried {
            let j = rng.random_range(t..p);
            scratch.features.swap(t, j);
        }
    }
    let parent = sum * sum / wt;
    let mut best: Option<Split> = None;
    for t in 0..tried {
        let f = scratch.features[t];
        let codes = &binned.codes[f];
        let nb = binned.bins(f);
        if nb < 2 {
            continue;
        }
        let consider = |code: u16, wl: f64, sl: f64, best: &mut Option<Split>| {
            let wr = wt - wl;
            if wl < params.min_node || wr < params.min_node {
                return;
            }
            let sr = sum - sl;
            let score = sl * sl / wl + sr * sr / wr;
            if score > parent * (1.0 + 1e-12) + 1e-12 && best.as_ref().is_none_or(|b| score > b.score) {
                *best = Some(Split { feature: f, code, score });
            }
        };
        if rows.len() < nb {
            // Sort node positions by code; the key packs (code, position).
            scratch.keys.clear();
            scratch.keys.extend(rows.iter().enumerate().map(|(pos, &i)| (u32::from(codes[i]) << 16) | pos as u32));
            scratch.keys.sort_unstable();
            let (mut wl, mut sl) = (0.0, 0.0);
            let keys = &scratch.keys;
            for (idx, &key) in keys.iter().enumerate() {
                let i = rows[(key & 0xffff) as usize];
                wl += weights[i];
                sl += weights[i] * y[i];
                let c = (key >> 16) as u16;
                if idx + 1 < keys.len() && (keys[idx + 1] >> 16) as u16 != c {
                    consider(c, wl, sl, &mut best);
                }
            }
        } else {
            let (hw, hs) = (&mut scratch.w[..nb], &mut scratch.s[..nb]);
            hw.fill(0.0);
            hs.fill(0.0);
            for &i in rows {
                let c = codes[i] as usize;
                hw[c] += weights[i];
                hs[c] += weights[i] * y[i];
            }
            let (mut wl, mut sl) = (0.0, 0.0);
            for c in 0..nb - 1 {
                if hw[c] == 0.0 {
                    continue;
                }
                wl += hw[c];
                sl += hs[c];
                if wl < wt {
                    consider(c as u16, wl, sl, &mut best);
                }
            }
        }
    }
    best
}

impl Regressor for Tree {
    fn predict(&self, x: &[f64], _: usize) -> f64 {
        self.eval(x)
    }

    fn size(&self) -> usize {
        self.leaves()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn exact_bins_for_few_values() {
        let rows: Vec<Vec<f64>> = [3.0, 5.0, 3.0, 5.0, 4.0].iter().map(|v| vec![*v]).collect();
        let b = Binned::new(&Covariates::from_rows(&rows).unwrap());
        assert_eq!(b.cuts[0], vec![3.5, 4.5]);
        assert_eq!(b.codes[0], vec![0, 2, 0, 2, 1]);
    }

    #[test]
    fn quantile_bins_for_many_values() {
        let m = 3 * MAX_BINS;
        let rows: Vec<Vec<f64>> = (0..m).map(|i| vec![(i as f64).sqrt().sin()]).collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let b = Binned::new(&x);
        assert_eq!(b.bins(0), MAX_BINS);
        // Codes respect the cut points.
        for i in 0..m {
            let c = b.codes[0][i] as usize;
            let v = x.get(i, 0);
            assert!(c == 0 || v > b.cuts[0][c - 1]);
            assert!(c == MAX_BINS - 1 || v <= b.cuts[0][c]);
        }
    }

    #[test]
    fn depth_limit_and_constant_outcome() {
        let rows: Vec<Vec<f64>> = (0..100).map(|i| vec![i as f64]).collect();
        let x = Covariates::from_rows(&rows).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let stump = TreeParams { max_depth: 1, min_node: 1.0, min_split: 0.0, mtry: None };
        let y: Vec<f64> = (0..100).map(|i| (i as f64).powi(2)).collect();
        assert_eq!(Tree::fit(&x, &y, &stump, &mut rng).leaves(), 2);
        let flat = Tree::fit(&x, &[2.5; 100], &TreeParams { max_depth: 6, min_node: 1.0, min_split: 0.0, mtry: None }, &mut rng);
        assert_eq!(flat.leaves(), 1);
        assert_eq!(flat.eval(&[-7.0]), 2.5);
    }
}
