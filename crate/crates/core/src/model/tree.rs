//! A single binary decision tree: entropy splits over a random feature subset,
//! thresholds at midpoints of sorted unique values, deterministic tie-breaks
//! (lowest feature index, then lowest threshold).

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Shannon entropy in bits of a binary class distribution.
pub fn entropy(n_ats: usize, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    let mut h = 0.0;
    for count in [n_ats, n - n_ats] {
        if count > 0 {
            let p = count as f64 / n as f64;
            h -= p * p.log2();
        }
    }
    h
}

/// Information gain of splitting `values` at `threshold` (`<=` goes left).
/// For binary labels the result lies in `[0, 1]`.
pub fn info_gain(values: &[f64], labels: &[bool], threshold: f64) -> f64 {
    let n = values.len();
    debug_assert_eq!(n, labels.len());
    if n == 0 {
        return 0.0;
    }
    let mut left = (0usize, 0usize);
    let mut right = (0usize, 0usize);
    for (v, &l) in values.iter().zip(labels) {
        let side = if *v <= threshold { &mut left } else { &mut right };
        side.1 += 1;
        if l {
            side.0 += 1;
        }
    }
    let total_ats = left.0 + right.0;
    let h = entropy(total_ats, n);
    let weighted = (left.1 as f64 / n as f64) * entropy(left.0, left.1)
        + (right.1 as f64 / n as f64) * entropy(right.0, right.1);
    h - weighted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum TreeNode {
    Split {
        feature: usize,
        threshold: f64,
        n: usize,
        class_counts: [usize; 2],
        left: Box<TreeNode>,
        right: Box<TreeNode>,
    },
    Leaf {
        n: usize,
        class_counts: [usize; 2],
    },
}

impl TreeNode {
    pub fn n(&self) -> usize {
        match self {
            TreeNode::Split { n, .. } | TreeNode::Leaf { n, .. } => *n,
        }
    }

    pub fn class_counts(&self) -> [usize; 2] {
        match self {
            TreeNode::Split { class_counts, .. } | TreeNode::Leaf { class_counts, .. } => {
                *class_counts
            }
        }
    }

    /// ATS probability of the samples that reached this node.
    pub fn prob_ats(&self) -> f64 {
        let counts = self.class_counts();
        let n = counts[0] + counts[1];
        if n == 0 {
            0.0
        } else {
            counts[1] as f64 / n as f64
        }
    }

    pub fn depth(&self) -> usize {
        match self {
            TreeNode::Leaf { .. } => 0,
            TreeNode::Split { left, right, .. } => 1 + left.depth().max(right.depth()),
        }
    }

    /// Leaf reached by `row`.
    pub fn leaf_for(&self, row: &[f64]) -> &TreeNode {
        match self {
            TreeNode::Leaf { .. } => self,
            TreeNode::Split { feature, threshold, left, right, .. } => {
                if row[*feature] <= *threshold {
                    left.leaf_for(row)
                } else {
                    right.leaf_for(row)
                }
            }
        }
    }

    /// Per-feature ATS-probability deltas along the decision path of `row`.
    pub fn path_contributions(&self, row: &[f64], out: &mut [f64]) -> f64 {
        match self {
            TreeNode::Leaf { .. } => self.prob_ats(),
            TreeNode::Split { feature, threshold, left, right, .. } => {
                let child: &TreeNode =
                    if row[*feature] <= *threshold { left } else { right };
                out[*feature] += child.prob_ats() - self.prob_ats();
                child.path_contributions(row, out)
            }
        }
    }

    /// Accumulates sample-weighted entropy decrease per feature, normalized by
    /// the root sample count elsewhere.
    pub fn accumulate_importance(&self, root_n: usize, out: &mut [f64]) {
        if let TreeNode::Split { feature, n, class_counts, left, right, .. } = self {
            let h = entropy(class_counts[1], *n);
            let (ln, lc) = (left.n(), left.class_counts());
            let (rn, rc) = (right.n(), right.class_counts());
            let child_h = (ln as f64 / *n as f64) * entropy(lc[1], ln)
                + (rn as f64 / *n as f64) * entropy(rc[1], rn);
            out[*feature] += (*n as f64 / root_n as f64) * (h - child_h);
            left.accumulate_importance(root_n, out);
            right.accumulate_importance(root_n, out);
        }
    }

    /// Every split must have strictly positive gain over its node sample.
    pub fn check_split_validity(&self) -> bool {
        match self {
            TreeNode::Leaf { .. } => true,
            TreeNode::Split { n, class_counts, left, right, .. } => {
                let h = entropy(class_counts[1], *n);
                let (ln, lc) = (left.n(), left.class_counts());
                let (rn, rc) = (right.n(), right.class_counts());
                let child_h = (ln as f64 / *n as f64) * entropy(lc[1], ln)
                    + (rn as f64 / *n as f64) * entropy(rc[1], rn);
                h - child_h > 0.0 && left.check_split_validity() && right.check_split_validity()
            }
        }
    }
}

/// Column-major training data shared by all trees of an ensemble.
pub struct TrainData<'a> {
    pub columns: &'a [Vec<f64>],
    pub labels: &'a [bool],
}

impl TrainData<'_> {
    pub fn n_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn n_features(&self) -> usize {
        self.columns.len()
    }
}

pub struct TreeParams {
    pub max_depth: usize,
    pub min_samples_split: usize,
    pub features_per_split: usize,
}

/// Builds one tree on the given sample of row indices.
pub fn build_tree(
    data: &TrainData,
    indices: &[usize],
    params: &TreeParams,
    rng: &mut impl Rng,
) -> TreeNode {
    grow(data, indices, params, rng, 0)
}

fn class_counts(data: &TrainData, indices: &[usize]) -> [usize; 2] {
    let ats = indices.iter().filter(|&&i| data.labels[i]).count();
    [indices.len() - ats, ats]
}

fn grow(
    data: &TrainData,
    indices: &[usize],
    params: &TreeParams,
    rng: &mut impl Rng,
    depth: usize,
) -> TreeNode {
    let counts = class_counts(data, indices);
    let n = indices.len();
    let leaf = TreeNode::Leaf { n, class_counts: counts };
    if depth >= params.max_depth || n < params.min_samples_split || counts[0] == 0 || counts[1] == 0
    {
        return leaf;
    }
    let candidates = sample_features(data.n_features(), params.features_per_split, rng);
    let mut best: Option<(f64, usize, f64)> = None;
    for &feature in &candidates {
        let column = &data.columns[feature];
        let mut pairs: Vec<(f64, bool)> =
            indices.iter().map(|&i| (column[i], data.labels[i])).collect();
        pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).expect("finite features"));
        let total_ats = counts[1];
        let h = entropy(total_ats, n);
        let mut left_n = 0usize;
        let mut left_ats = 0usize;
        let mut i = 0;
        while i < pairs.len() {
            // Advance over a run of equal values; a threshold can only sit
            // between distinct values.
            let v = pairs[i].0;
            while i < pairs.len() && pairs[i].0 == v {
                left_n += 1;
                if pairs[i].1 {
                    left_ats += 1;
                }
                i += 1;
            }
            if i == pairs.len() {
                break;
            }
            // Midpoint between distinct values; for adjacent floats the
            // midpoint can collapse onto `v`, which still separates since
            // the comparison is `<=`.
            let mid = v + (pairs[i].0 - v) / 2.0;
            let threshold = if mid > v && mid < pairs[i].0 { mid } else { v };
            let right_n = n - left_n;
            let right_ats = total_ats - left_ats;
            let weighted = (left_n as f64 / n as f64) * entropy(left_ats, left_n)
                + (right_n as f64 / n as f64) * entropy(right_ats, right_n);
            let gain = h - weighted;
            // Candidates arrive in ascending (feature, threshold) order, so a
            // strictly-greater test breaks ties toward the lowest feature
            // index and lowest threshold.
            if gain > 0.0 && best.is_none_or(|(bg, _, _)| gain > bg) {
                best = Some((gain, feature, threshold));
            }
        }
    }
    match best {
        None => leaf,
        Some((_, feature, threshold)) => {
            let column = &data.columns[feature];
            let (left_idx, right_idx): (Vec<usize>, Vec<usize>) =
                indices.iter().partition(|&&i| column[i] <= threshold);
            if left_idx.is_empty() || right_idx.is_empty() {
                return leaf;
            }
            let left = grow(data, &left_idx, params, rng, depth + 1);
            let right = grow(data, &right_idx, params, rng, depth + 1);
            TreeNode::Split {
                feature,
                threshold,
                n,
                class_counts: counts,
                left: Box::new(left),
                right: Box::new(right),
            }
        }
    }
}

/// Draws `m` distinct feature indices, returned sorted so the split search
/// scans them in a canonical order.
fn sample_features(n_features: usize, m: usize, rng: &mut impl Rng) -> Vec<usize> {
    let m = m.min(n_features).max(1);
    let mut all: Vec<usize> = (0..n_features).collect();
    for i in 0..m {
        let j = rng.gen_range(i..n_features);
        all.swap(i, j);
    }
    let mut chosen = all[..m].to_vec();
    chosen.sort_unstable();
    chosen
}
