//! Small gradient-boosted regression trees, used only to rank features by
//! split gain. Exact greedy splits on variance reduction, squared-error
//! objective, no randomness.

use ndarray::ArrayView2;

pub(super) struct GbtParams {
    pub rounds: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
}

impl Default for GbtParams {
    fn default() -> Self {
        Self {
            rounds: 50,
            max_depth: 3,
            learning_rate: 0.1,
        }
    }
}

enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        value: f64,
    },
}

struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0usize;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] < *threshold { *left } else { *right };
                }
            }
        }
    }
}

fn sse(sum: f64, sum_sq: f64, n: f64) -> f64 {
    sum_sq - sum * sum / n
}

fn build(
    x: ArrayView2<'_, f64>,
    rows: &mut [usize],
    residuals: &[f64],
    depth: usize,
    params: &GbtParams,
    nodes: &mut Vec<Node>,
    importance: &mut [f64],
) -> usize {
    let n = rows.len();
    let total_sum: f64 = rows.iter().map(|&r| residuals[r]).sum();
    let mean = total_sum / n as f64;
    if depth >= params.max_depth || n < 2 {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    }
    let total_sq: f64 = rows.iter().map(|&r| residuals[r] * residuals[r]).sum();
    let parent_sse = sse(total_sum, total_sq, n as f64);

    let mut best: Option<(f64, usize, f64)> = None; // (gain, feature, threshold)
    for feature in 0..x.ncols() {
        let mut order: Vec<usize> = rows.to_vec();
        order.sort_by(|&a, &b| x[[a, feature]].partial_cmp(&x[[b, feature]]).unwrap());
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for split in 1..n {
            let r = order[split - 1];
            left_sum += residuals[r];
            left_sq += residuals[r] * residuals[r];
            let (lo, hi) = (x[[order[split - 1], feature]], x[[order[split], feature]]);
            if lo == hi {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let gain = parent_sse
                - sse(left_sum, left_sq, split as f64)
                - sse(right_sum, right_sq, (n - split) as f64);
            if gain > best.map_or(1e-12, |(g, _, _)| g) {
                best = Some((gain, feature, (lo + hi) / 2.0));
            }
        }
    }

    let Some((gain, feature, threshold)) = best else {
        nodes.push(Node::Leaf { value: mean });
        return nodes.len() - 1;
    };
    importance[feature] += gain;

    let split_at = itertools_partition(rows, |&r| x[[r, feature]] < threshold);
    let (left_rows, right_rows) = rows.split_at_mut(split_at);
    nodes.push(Node::Leaf { value: 0.0 }); // placeholder, replaced below
    let at = nodes.len() - 1;
    let left = build(x, left_rows, residuals, depth + 1, params, nodes, importance);
    let right = build(x, right_rows, residuals, depth + 1, params, nodes, importance);
    nodes[at] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    at
}

/// Stable partition; returns the boundary index.
fn itertools_partition<T, F: Fn(&T) -> bool>(slice: &mut [T], pred: F) -> usize
where
    T: Copy,
{
    let mut buf: Vec<T> = Vec::with_capacity(slice.len());
    let mut boundary = 0;
    for &v in slice.iter() {
        if pred(&v) {
            buf.insert(boundary, v);
            boundary += 1;
        } else {
            buf.push(v);
        }
    }
    slice.copy_from_slice(&buf);
    boundary
}

/// Boosts `params.rounds` trees against squared error and accumulates the
/// split gain per feature.
pub(super) fn fit_importance(x: ArrayView2<'_, f64>, y: &[f64], params: &GbtParams) -> Vec<f64> {
    let n = x.nrows();
    debug_assert_eq!(n, y.len());
    let mut importance = vec![0.0; x.ncols()];
    let base = y.iter().sum::<f64>() / n as f64;
    let mut pred = vec![base; n];
    for _ in 0..params.rounds {
        let residuals: Vec<f64> = y.iter().zip(&pred).map(|(y, p)| y - p).collect();
        let mut nodes = Vec::new();
        let mut rows: Vec<usize> = (0..n).collect();
        build(x, &mut rows, &residuals, 0, params, &mut nodes, &mut importance);
        let tree = Tree { nodes };
        for (i, p) in pred.iter_mut().enumerate() {
            let row: Vec<f64> = (0..x.ncols()).map(|c| x[[i, c]]).collect();
            *p += params.learning_rate * tree.predict(&row);
        }
    }
    importance
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn informative_feature_dominates_importance() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let n = 60;
        let mut x = Array2::zeros((n, 3));
        let mut y = vec![0.0; n];
        for i in 0..n {
            let label = (i % 2) as f64;
            x[[i, 0]] = rng.gen_range(-1.0..1.0); // noise
            x[[i, 1]] = label + rng.gen_range(-0.01..0.01); // near copy
            x[[i, 2]] = rng.gen_range(-1.0..1.0); // noise
            y[i] = label;
        }
        let imp = fit_importance(x.view(), &y, &GbtParams::default());
        assert!(imp[1] > imp[0] * 10.0 && imp[1] > imp[2] * 10.0, "{imp:?}");
    }

    #[test]
    fn constant_target_yields_no_importance() {
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i * 2 + j) as f64);
        let y = vec![1.5; 10];
        let imp = fit_importance(x.view(), &y, &GbtParams::default());
        assert!(imp.iter().all(|&v| v == 0.0));
    }
}
