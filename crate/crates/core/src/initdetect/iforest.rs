//! Isolation forest.
//!
//! Scores are `2^(-E[h(z)] / c(psi))`: short average isolation paths give
//! scores near 1, long ones scores near 0. The exponent carries the negative
//! sign so that easily isolated points rank as more anomalous.

use rand::seq::index;
use rand::Rng as _;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::scores::{Provenance, ScoreVector};
use crate::seed::{self, Rng};

pub const DEFAULT_TREES: usize = 100;
pub const DEFAULT_SUBSAMPLE: usize = 256;

const EULER_GAMMA: f64 = 0.5772156649;

/// Expected path length of an unsuccessful binary-search-tree lookup among
/// `n` points: `c(n) = 2 H(n-1) - 2 (n-1) / n`, `H(i) = ln i + γ`, `c(1) = 0`.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let n = n as f64;
    2.0 * ((n - 1.0).ln() + EULER_GAMMA) - 2.0 * (n - 1.0) / n
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        /// `x[feature] < threshold`
        left: usize,
        right: usize,
    },
    Leaf {
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationTree {
    nodes: Vec<Node>,
    /// Training rows the tree was grown on.
    sample: Vec<usize>,
}

impl IsolationTree {
    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn sample(&self) -> &[usize] {
        &self.sample
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[Node], i: usize) -> usize {
            match nodes[i] {
                Node::Leaf { .. } => 0,
                Node::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    /// Edges from the root to `x`'s leaf, plus `c(size)` for the points left
    /// unresolved in that leaf.
    pub fn path_length(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        let mut edges = 0.0;
        loop {
            match self.nodes[i] {
                Node::Leaf { size } => return edges + average_path_length(size),
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    i = if x[feature] < threshold { left } else { right };
                    edges += 1.0;
                }
            }
        }
    }

    fn grow(z: &Matrix, sample: Vec<usize>, height_limit: usize, rng: &mut Rng) -> Self {
        let mut nodes = Vec::new();
        let mut rows = sample.clone();
        build(z, &mut rows, 0, height_limit, rng, &mut nodes);
        Self { nodes, sample }
    }
}

fn build(
    z: &Matrix,
    rows: &mut [usize],
    depth: usize,
    height_limit: usize,
    rng: &mut Rng,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    nodes.push(Node::Leaf { size: rows.len() });
    if rows.len() <= 1 || depth >= height_limit {
        return id;
    }
    // features that still separate something at this node
    let ranges: Vec<(usize, f64, f64)> = (0..z.cols())
        .filter_map(|f| {
            let (lo, hi) = rows.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &r| {
                let v = z.get(r, f);
                (lo.min(v), hi.max(v))
            });
            (lo < hi).then_some((f, lo, hi))
        })
        .collect();
    if ranges.is_empty() {
        return id;
    }
    let (feature, lo, hi) = ranges[rng.random_range(0..ranges.len())];
    let threshold = loop {
        let t = lo + rng.random::<f64>() * (hi - lo);
        if t > lo && t < hi {
            break t;
        }
    };
    let mut split = 0;
    for i in 0..rows.len() {
        if z.get(rows[i], feature) < threshold {
            rows.swap(i, split);
            split += 1;
        }
    }
    let (l, r) = rows.split_at_mut(split);
    let left = build(z, l, depth + 1, height_limit, rng, nodes);
    let right = build(z, r, depth + 1, height_limit, rng, nodes);
    nodes[id] = Node::Split {
        feature,
        threshold,
        left,
        right,
    };
    id
}

#[derive(Debug, Clone, PartialEq)]
pub struct IsolationForest {
    trees: Vec<IsolationTree>,
    subsample_size: usize,
    height_limit: usize,
    dim: usize,
}

impl IsolationForest {
    pub fn trees(&self) -> &[IsolationTree] {
        &self.trees
    }

    pub fn subsample_size(&self) -> usize {
        self.subsample_size
    }

    pub fn height_limit(&self) -> usize {
        self.height_limit
    }

    pub fn average_path(&self, x: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.path_length(x)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn score_one(&self, x: &[f64]) -> f64 {
        let c = average_path_length(self.subsample_size);
        2f64.powf(-self.average_path(x) / c)
    }
}

/// Grows `n_trees` trees, each on its own uniform subsample of size
/// `min(subsample_size, K)` with height limit `ceil(log2 subsample)`.
pub fn iforest_fit(z: &Matrix, n_trees: usize, subsample_size: usize, seed: u64) -> Result<IsolationForest> {
    let k = z.rows();
    if k < 2 {
        return Err(Error::InsufficientData { needed: 2, have: k });
    }
    if n_trees == 0 || subsample_size < 2 {
        return Err(Error::InvalidArgument(
            "isolation forest needs at least one tree and a subsample of two".into(),
        ));
    }
    let psi = subsample_size.min(k);
    let height_limit = (psi as f64).log2().ceil() as usize;
    let mut rng = seed::rng(seed);
    let trees = (0..n_trees)
        .map(|_| {
            let mut sample = index::sample(&mut rng, k, psi).into_vec();
            sample.sort_unstable();
            IsolationTree::grow(z, sample, height_limit, &mut rng)
        })
        .collect();
    Ok(IsolationForest {
        trees,
        subsample_size: psi,
        height_limit,
        dim: z.cols(),
    })
}

pub fn iforest_score(forest: &IsolationForest, z: &Matrix) -> Result<ScoreVector> {
    if z.cols() != forest.dim {
        return Err(Error::DimensionMismatch {
            expected: forest.dim,
            found: z.cols(),
        });
    }
    let scores = (0..z.rows())
        .into_par_iter()
        .map(|i| forest.score_one(z.row(i)))
        .collect();
    ScoreVector::new(scores, Provenance::IForest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, StandardNormal};

    fn blob(k: usize, d: usize, s: u64) -> Matrix {
        let mut rng = seed::rng(s);
        Matrix::new(k, d, (0..k * d).map(|_| StandardNormal.sample(&mut rng)).collect())
    }

    #[test]
    fn c_of_two_matches_formula() {
        // 2 (ln 1 + γ) - 2 * 1/2
        let oracle = 2.0 * 0.5772156649 - 1.0;
        assert!((average_path_length(2) - oracle).abs() < 1e-15);
        assert!((average_path_length(2) - 0.15443).abs() < 1e-5);
        assert_eq!(average_path_length(1), 0.0);
        assert_eq!(average_path_length(0), 0.0);
    }

    #[test]
    fn identical_points_form_single_leaves() {
        let z = Matrix::new(10, 2, vec![1.5; 20]);
        let f = iforest_fit(&z, 20, 8, 3).unwrap();
        for t in f.trees() {
            assert_eq!(t.nodes(), &[Node::Leaf { size: 8 }]);
        }
        let s = iforest_score(&f, &z).unwrap();
        let first = s.values()[0];
        assert!(s.values().iter().all(|&v| v == first));
        // E(h) = c(psi) gives 2^-1
        assert!((first - 0.5).abs() < 1e-12);
    }

    #[test]
    fn same_seed_same_forest() {
        let z = blob(100, 3, 1);
        assert_eq!(iforest_fit(&z, 10, 64, 5).unwrap(), iforest_fit(&z, 10, 64, 5).unwrap());
        assert_ne!(iforest_fit(&z, 10, 64, 5).unwrap(), iforest_fit(&z, 10, 64, 6).unwrap());
    }

    #[test]
    fn thresholds_lie_strictly_inside_node_ranges() {
        let z = blob(300, 4, 2);
        let f = iforest_fit(&z, 25, 256, 7).unwrap();
        assert_eq!(f.height_limit(), 8);
        for t in f.trees() {
            assert!(t.depth() <= f.height_limit());
            let mut stack = vec![(0usize, t.sample().to_vec())];
            while let Some((i, rows)) = stack.pop() {
                match t.nodes()[i] {
                    Node::Leaf { size } => assert_eq!(size, rows.len()),
                    Node::Split { feature, threshold, left, right } => {
                        let vals: Vec<f64> = rows.iter().map(|&r| z.get(r, feature)).collect();
                        let lo = vals.iter().copied().fold(f64::INFINITY, f64::min);
                        let hi = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                        assert!(lo < threshold && threshold < hi);
                        let (l, r): (Vec<usize>, Vec<usize>) =
                            rows.iter().partition(|&&r| z.get(r, feature) < threshold);
                        stack.push((left, l));
                        stack.push((right, r));
                    }
                }
            }
        }
    }

    #[test]
    fn outlier_scores_above_blob_and_range() {
        let mut rows: Vec<Vec<f64>> = blob(500, 3, 9).iter_rows().map(|r| r.to_vec()).collect();
        rows.push(vec![8.0, 8.0, 8.0]);
        let z = Matrix::from_rows(&rows);
        let f = iforest_fit(&z, 100, 256, 1).unwrap();
        let s = iforest_score(&f, &z).unwrap();
        let v = s.values();
        assert!(v.iter().all(|&x| x > 0.0 && x <= 1.0));
        let blob_mean = v[..500].iter().sum::<f64>() / 500.0;
        assert!(v[500] > blob_mean);
        assert!(v[500] > 0.6 && blob_mean < 0.5, "outlier {} blob {}", v[500], blob_mean);
    }

    #[test]
    fn scoring_checks_dimension() {
        let f = iforest_fit(&blob(20, 3, 0), 2, 8, 0).unwrap();
        assert!(matches!(
            iforest_score(&f, &blob(2, 2, 0)),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(iforest_fit(&blob(1, 3, 0), 2, 8, 0).is_err());
    }
}
