//! Isolation forest over feature vectors, with the two-phase incremental
//! fit: a first forest on observation features, then additional trees
//! built from forecast-concatenation subsamples the first forest already
//! isolates.

use ndarray::ArrayView2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

mod io;

pub use io::{load_forest, save_forest};

/// Euler–Mascheroni constant for the harmonic-number approximation.
const EULER_GAMMA: f64 = 0.577_215_664_9;

/// Average unsuccessful-search path length in a binary tree over `n`
/// points: `2 H(n-1) - 2 (n-1) / n`, with the harmonic number exact up to
/// 10 and `ln(i) + gamma` beyond. `c(0) = c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let i = n - 1;
    let harmonic = if i > 10 {
        (i as f64).ln() + EULER_GAMMA
    } else {
        (1..=i).map(|k| 1.0 / k as f64).sum()
    };
    2.0 * harmonic - 2.0 * i as f64 / n as f64
}

#[derive(Debug, Clone, PartialEq)]
enum TreeNode {
    Split {
        feature: u32,
        value: f64,
        left: u32,
        right: u32,
    },
    Leaf {
        count: u32,
    },
}

/// One randomized binary isolation tree stored as a node arena.
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<TreeNode>,
}

impl IsolationTree {
    /// Depth of the leaf `x` reaches plus the subtree adjustment
    /// `c(leaf count)`.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut at = 0usize;
        let mut depth = 0.0;
        loop {
            match &self.nodes[at] {
                TreeNode::Leaf { count } => return depth + average_path_length(*count as usize),
                TreeNode::Split {
                    feature,
                    value,
                    left,
                    right,
                } => {
                    at = if x[*feature as usize] < *value {
                        *left as usize
                    } else {
                        *right as usize
                    };
                    depth += 1.0;
                }
            }
        }
    }

    pub fn max_depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], at: usize) -> usize {
            match &nodes[at] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => {
                    1 + walk(nodes, *left as usize).max(walk(nodes, *right as usize))
                }
            }
        }
        walk(&self.nodes, 0)
    }
}

/// A fitted forest plus the scoring threshold and the feature-name binding
/// that ties it to a [`crate::features::FeatureMask`].
#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    psi: usize,
    gamma: usize,
    threshold: f64,
    feature_names: Vec<String>,
}

impl IsolationForest {
    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn num_trees(&self) -> usize {
        self.trees.len()
    }

    pub fn psi(&self) -> usize {
        self.psi
    }

    /// Trees per training phase; a forest holds `gamma` trees after `fit`
    /// and `2 gamma` after `incremental_fit`.
    pub fn gamma(&self) -> usize {
        self.gamma
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }

    pub fn feature_names(&self) -> &[String] {
        &self.feature_names
    }

    pub fn num_features(&self) -> usize {
        self.feature_names.len()
    }

    pub(crate) fn from_parts(
        trees: Vec<IsolationTree>,
        psi: usize,
        gamma: usize,
        threshold: f64,
        feature_names: Vec<String>,
    ) -> Self {
        Self {
            trees,
            psi,
            gamma,
            threshold,
            feature_names,
        }
    }
}

fn check_rows(rows: &ArrayView2<'_, f64>, feature_count: usize, psi: usize) -> Result<()> {
    if rows.ncols() != feature_count {
        return Err(Error::ShapeMismatch(format!(
            "rows have {} features, forest binds {feature_count}",
            rows.ncols()
        )));
    }
    if psi < 2 {
        return Err(Error::InvalidConfig("subsample size psi must be at least 2".into()));
    }
    if rows.nrows() < psi {
        return Err(Error::InvalidData(format!(
            "{} rows cannot fill a subsample of {psi}",
            rows.nrows()
        )));
    }
    Ok(())
}

fn height_limit(psi: usize) -> usize {
    (psi as f64).log2().ceil() as usize
}

/// Draws `count` distinct indices below `n` (partial Fisher–Yates).
fn subsample(n: usize, count: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..count {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(count);
    pool
}

fn build_tree(
    rows: &ArrayView2<'_, f64>,
    subset: &mut [usize],
    depth: usize,
    limit: usize,
    nodes: &mut Vec<TreeNode>,
    rng: &mut ChaCha8Rng,
) -> u32 {
    let n = subset.len();
    if depth >= limit || n <= 1 {
        nodes.push(TreeNode::Leaf { count: n as u32 });
        return (nodes.len() - 1) as u32;
    }

    // Candidate features are those non-constant over the subset; with none
    // left the node becomes a leaf.
    let d = rows.ncols();
    let mut ranges: Vec<(usize, f64, f64)> = Vec::new();
    for f in 0..d {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &r in subset.iter() {
            lo = lo.min(rows[[r, f]]);
            hi = hi.max(rows[[r, f]]);
        }
        if lo < hi {
            ranges.push((f, lo, hi));
        }
    }
    if ranges.is_empty() {
        nodes.push(TreeNode::Leaf { count: n as u32 });
        return (nodes.len() - 1) as u32;
    }
    let (feature, lo, hi) = ranges[rng.gen_range(0..ranges.len())];
    let value = rng.gen_range(lo..hi);

    let mut boundary = 0usize;
    for i in 0..n {
        if rows[[subset[i], feature]] < value {
            subset.swap(boundary, i);
            boundary += 1;
        }
    }
    let at = nodes.len();
    nodes.push(TreeNode::Leaf { count: 0 }); // patched below
    let (left_set, right_set) = subset.split_at_mut(boundary);
    let left = build_tree(rows, left_set, depth + 1, limit, nodes, rng);
    let right = build_tree(rows, right_set, depth + 1, limit, nodes, rng);
    nodes[at] = TreeNode::Split {
        feature: feature as u32,
        value,
        left,
        right,
    };
    at as u32
}

fn grow_tree(
    rows: &ArrayView2<'_, f64>,
    subset: &mut [usize],
    psi: usize,
    rng: &mut ChaCha8Rng,
) -> IsolationTree {
    let mut nodes = Vec::new();
    build_tree(rows, subset, 0, height_limit(psi), &mut nodes, rng);
    IsolationTree { nodes }
}

/// Fits `gamma` trees, each on a uniform `psi`-subsample drawn without
/// replacement. Per-tree rng streams are derived from the seed, so the
/// forest is deterministic.
pub fn fit(
    rows: ArrayView2<'_, f64>,
    feature_names: &[String],
    psi: usize,
    gamma: usize,
    threshold: f64,
    seed: u64,
) -> Result<IsolationForest> {
    check_rows(&rows, feature_names.len(), psi)?;
    if gamma == 0 {
        return Err(Error::InvalidConfig("need at least one tree".into()));
    }
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::InvalidConfig("threshold must lie in [0, 1]".into()));
    }
    let mut trees = Vec::with_capacity(gamma);
    for i in 0..gamma {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let mut subset = subsample(rows.nrows(), psi, &mut rng);
        trees.push(grow_tree(&rows, &mut subset, psi, &mut rng));
    }
    Ok(IsolationForest {
        trees,
        psi,
        gamma,
        threshold,
        feature_names: feature_names.to_vec(),
    })
}

/// Anomaly score in (0, 1): `2^(-E[path] / c(psi))`. Scores grow as the
/// mean path across trees shortens.
pub fn score(forest: &IsolationForest, x: &[f64]) -> Result<f64> {
    if x.len() != forest.num_features() {
        return Err(Error::ShapeMismatch(format!(
            "point has {} features, forest binds {}",
            x.len(),
            forest.num_features()
        )));
    }
    let total: f64 = forest.trees.iter().map(|t| t.path_length(x)).sum();
    let mean = total / forest.trees.len() as f64;
    Ok(2f64.powf(-mean / average_path_length(forest.psi)))
}

/// Flags `x` when its score reaches `threshold`; returns the score too.
pub fn detect(forest: &IsolationForest, x: &[f64], threshold: f64) -> Result<(u8, f64)> {
    let s = score(forest, x)?;
    Ok((u8::from(s >= threshold), s))
}

/// Second training phase: `gamma` more trees, each grown on the members of
/// a fresh `psi`-subsample of `rows` that the existing forest scores at or
/// above its threshold (falling back to the whole subsample when none
/// qualify, so the tree count is always `forest.num_trees() + gamma`).
/// The input forest is untouched.
pub fn incremental_fit(
    forest: &IsolationForest,
    rows: ArrayView2<'_, f64>,
    psi: usize,
    gamma: usize,
    seed: u64,
) -> Result<IsolationForest> {
    check_rows(&rows, forest.num_features(), psi)?;
    if gamma == 0 {
        return Err(Error::InvalidConfig("need at least one tree".into()));
    }
    let mut trees = forest.trees.clone();
    trees.reserve(gamma);
    for i in 0..gamma {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Streams disjoint from the initial fit's.
        rng.set_stream((1 << 32) | i as u64);
        let candidate = subsample(rows.nrows(), psi, &mut rng);
        let mut isolated: Vec<usize> = Vec::new();
        for &r in &candidate {
            let point: Vec<f64> = rows.row(r).to_vec();
            if score(forest, &point)? >= forest.threshold {
                isolated.push(r);
            }
        }
        let mut subset = if isolated.is_empty() { candidate } else { isolated };
        trees.push(grow_tree(&rows, &mut subset, psi, &mut rng));
    }
    Ok(IsolationForest {
        trees,
        psi,
        gamma: forest.gamma,
        threshold: forest.threshold,
        feature_names: forest.feature_names.clone(),
    })
}
