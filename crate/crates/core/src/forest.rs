//! Gini decision trees and a bagged random forest.
//!
//! Split quality is compared in exact integer arithmetic, so equal-quality
//! splits really tie and the tie rule (lowest feature, then lowest threshold)
//! is applied without floating-point noise.

use std::cmp::Ordering;

use rand::seq::index::sample;
use rand::Rng as _;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::PostureLabel;
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Rng};

const K: usize = PostureLabel::COUNT;

/// `1 - sum p_i^2` over the class proportions.
pub fn gini(counts: &[u64]) -> Result<f64> {
    let total: u64 = counts.iter().sum();
    if total == 0 {
        return Err(Error::Precondition("gini of an empty node".into()));
    }
    let sq: u128 = counts.iter().map(|&c| c as u128 * c as u128).sum();
    let t = total as u128;
    // Exact when the fraction is representable, e.g. 1/3 sums.
    Ok((t * t - sq) as f64 / (t * t) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TreeNode {
    /// `x[feature] <= threshold` goes left.
    Split {
        feature: usize,
        threshold: f64,
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf { counts: [u64; K], label: usize },
}

impl TreeNode {
    fn leaf(counts: [u64; K]) -> Self {
        TreeNode::Leaf {
            counts,
            label: majority(&counts),
        }
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        let mut node = self;
        loop {
            match node {
                TreeNode::Leaf { label, .. } => return *label,
                TreeNode::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => node = if x[*feature] <= *threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    pub fn node_count(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 1,
            TreeNode::Split { left, right, .. } => 1 + left.node_count() + right.node_count(),
        }
    }
}

/// Highest count, lowest class index on ties.
fn majority(counts: &[u64; K]) -> usize {
    let mut best = 0;
    for c in 1..K {
        if counts[c] > counts[best] {
            best = c;
        }
    }
    best
}

fn class_counts(labels: &[usize], idx: &[usize]) -> [u64; K] {
    let mut c = [0u64; K];
    for &i in idx {
        c[labels[i]] += 1;
    }
    c
}

fn sum_sq(c: &[u64; K]) -> u128 {
    c.iter().map(|&v| v as u128 * v as u128).sum()
}

/// Children purity score `sq_l / n_l + sq_r / n_r` kept as a fraction. Larger
/// means lower weighted impurity.
#[derive(Clone, Copy)]
struct Score {
    num: u128,
    den: u128,
}

impl Score {
    fn new(left: &[u64; K], right: &[u64; K]) -> Self {
        let nl: u128 = left.iter().map(|&v| v as u128).sum();
        let nr: u128 = right.iter().map(|&v| v as u128).sum();
        Self {
            num: sum_sq(left) * nr + sum_sq(right) * nl,
            den: nl * nr,
        }
    }

    fn cmp(&self, other: &Score) -> Ordering {
        (self.num * other.den).cmp(&(other.num * self.den))
    }
}

/// Splitting point between two consecutive distinct sorted values, kept
/// strictly below `hi` so `lo` goes left and `hi` right.
fn midpoint(lo: f64, hi: f64) -> f64 {
    let m = lo * 0.5 + hi * 0.5;
    if m >= lo && m < hi {
        m
    } else {
        lo
    }
}

/// Best Gini split of the samples `idx` over `candidates`. Returns `None` when
/// no split lowers the impurity.
pub fn best_split(x: &[Vec<f64>], labels: &[usize], idx: &[usize], candidates: &[usize]) -> Option<Split> {
    let parent = class_counts(labels, idx);
    let n = idx.len() as u128;
    let parent_sq = sum_sq(&parent);
    let mut feats = candidates.to_vec();
    feats.sort_unstable();
    feats.dedup();

    let mut best: Option<(Score, usize, f64)> = None;
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(idx.len());
    for &f in &feats {
        order.clear();
        order.extend(idx.iter().map(|&i| (x[i][f], labels[i])));
        order.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
        let mut left = [0u64; K];
        let mut right = parent;
        for j in 0..order.len() - 1 {
            let (v, l) = order[j];
            left[l] += 1;
            right[l] -= 1;
            let next = order[j + 1].0;
            if v >= next {
                continue;
            }
            let s = Score::new(&left, &right);
            // Positive decrease: sq/n weighted sum beats the parent's sq/n.
            if s.num * n <= parent_sq * s.den {
                continue;
            }
            if best.as_ref().is_none_or(|(b, _, _)| s.cmp(b) == Ordering::Greater) {
                best = Some((s, f, midpoint(v, next)));
            }
        }
    }
    best.map(|(s, feature, threshold)| {
        let nf = n as f64;
        let gain = (s.num as f64 / s.den as f64) / nf - parent_sq as f64 / (nf * nf);
        Split {
            feature,
            threshold,
            gain,
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Candidate features per node; `None` means `ceil(sqrt(d))`.
    pub max_features: Option<usize>,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_features: None,
            max_depth: None,
            min_samples_split: 2,
            bootstrap: true,
        }
    }
}

/// Tree growth settings with `max_features` resolved.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TreeParams {
    pub max_features: usize,
    pub max_depth: Option<usize>,
    pub min_samples_split: usize,
}

pub fn default_max_features(d: usize) -> usize {
    ((d as f64).sqrt().ceil() as usize).clamp(1, d.max(1))
}

fn check_inputs(x: &[Vec<f64>], labels: &[usize]) -> Result<usize> {
    if x.len() != labels.len() {
        return Err(Error::Dimension {
            expected: x.len(),
            actual: labels.len(),
        });
    }
    if x.is_empty() {
        return Err(Error::DegenerateData("no training samples".into()));
    }
    let d = x[0].len();
    if d == 0 {
        return Err(Error::DegenerateData("zero-dimensional features".into()));
    }
    for (row, &l) in x.iter().zip(labels) {
        if row.len() != d {
            return Err(Error::Dimension {
                expected: d,
                actual: row.len(),
            });
        }
        if l >= K {
            return Err(Error::Precondition(format!("class index {l} out of range")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(Error::Data("non-finite feature".into()));
        }
    }
    Ok(d)
}

/// Grows one tree on the samples `idx` (repeats allowed). `rng` picks the
/// candidate features at each node.
pub fn fit_tree(x: &[Vec<f64>], labels: &[usize], idx: &[usize], params: &TreeParams, rng: &mut Rng) -> Result<TreeNode> {
    let d = check_inputs(x, labels)?;
    if idx.is_empty() {
        return Err(Error::DegenerateData("tree needs at least one sample".into()));
    }
    if params.max_features == 0 || params.max_features > d {
        return Err(Error::Precondition(format!("max_features must be in 1..={d}, got {}", params.max_features)));
    }
    Ok(grow(x, labels, idx, params, d, 0, rng))
}

fn grow(x: &[Vec<f64>], labels: &[usize], idx: &[usize], p: &TreeParams, d: usize, depth: usize, rng: &mut Rng) -> TreeNode {
    let counts = class_counts(labels, idx);
    let pure = counts.iter().filter(|&&c| c > 0).count() <= 1;
    if pure || idx.len() < p.min_samples_split || p.max_depth.is_some_and(|m| depth >= m) {
        return TreeNode::leaf(counts);
    }
    let candidates: Vec<usize> = if p.max_features == d {
        (0..d).collect()
    } else {
        sample(rng, d, p.max_features).into_vec()
    };
    let Some(split) = best_split(x, labels, idx, &candidates) else {
        return TreeNode::leaf(counts);
    };
    // Stable partition keeps sample order independent of the split search.
    let (left, right): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| x[i][split.feature] <= split.threshold);
    TreeNode::Split {
        feature: split.feature,
        threshold: split.threshold,
        left: Box::new(grow(x, labels, &left, p, d, depth + 1, rng)),
        right: Box::new(grow(x, labels, &right, p, d, depth + 1, rng)),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ForestModel {
    pub trees: Vec<TreeNode>,
    pub max_features: usize,
    pub seed: u64,
    /// Accuracy of out-of-bag votes over samples left out by at least one
    /// tree; `None` without bootstrap or when every sample was drawn.
    pub oob_accuracy: Option<f64>,
}

impl ForestModel {
    pub fn n_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn votes(&self, x: &[f64]) -> [u64; K] {
        let mut v = [0u64; K];
        for t in &self.trees {
            v[t.predict_index(x)] += 1;
        }
        v
    }

    pub fn predict_index(&self, x: &[f64]) -> usize {
        majority(&self.votes(x))
    }

    pub fn predict(&self, x: &[f64]) -> PostureLabel {
        PostureLabel::from_index(self.predict_index(x))
    }
}

pub fn predict_forest(m: &ForestModel, x: &[f64]) -> PostureLabel {
    m.predict(x)
}

/// Bagged forest; tree `t` draws its bootstrap and feature candidates from
/// `derive_seed(seed, t)`, so the result does not depend on thread count.
pub fn fit_forest(x: &[Vec<f64>], labels: &[usize], params: &ForestParams, seed: u64) -> Result<ForestModel> {
    let d = check_inputs(x, labels)?;
    if params.n_trees == 0 {
        return Err(Error::Precondition("n_trees must be at least 1".into()));
    }
    let max_features = params.max_features.unwrap_or_else(|| default_max_features(d));
    let tp = TreeParams {
        max_features,
        max_depth: params.max_depth,
        min_samples_split: params.min_samples_split,
    };
    let n = x.len();
    let grown: Vec<Result<(TreeNode, Vec<usize>)>> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let mut rng = rng_from_seed(derive_seed(seed, t as u64));
            let idx: Vec<usize> = if params.bootstrap {
                (0..n).map(|_| rng.random_range(0..n)).collect()
            } else {
                (0..n).collect()
            };
            let tree = fit_tree(x, labels, &idx, &tp, &mut rng)?;
            Ok((tree, idx))
        })
        .collect();
    let mut trees = Vec::with_capacity(params.n_trees);
    let mut oob = vec![[0u64; K]; n];
    for g in grown {
        let (tree, idx) = g?;
        if params.bootstrap {
            let mut drawn = vec![false; n];
            idx.iter().for_each(|&i| drawn[i] = true);
            for (i, v) in oob.iter_mut().enumerate() {
                if !drawn[i] {
                    v[tree.predict_index(&x[i])] += 1;
                }
            }
        }
        trees.push(tree);
    }
    let mut seen = 0usize;
    let mut hit = 0usize;
    for (v, &l) in oob.iter().zip(labels) {
        if v.iter().any(|&c| c > 0) {
            seen += 1;
            hit += usize::from(majority(v) == l);
        }
    }
    Ok(ForestModel {
        trees,
        max_features,
        seed,
        oob_accuracy: (seen > 0).then(|| hit as f64 / seen as f64),
    })
}
