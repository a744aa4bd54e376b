//! Sp: nearest-neighbour distance to a small random subsample, bagged.

use rand::seq::index;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::matrix::{squared_distance, Matrix};
use crate::scores::{Provenance, ScoreVector};
use crate::seed;

pub const DEFAULT_SUBSAMPLE: usize = 6;
pub const DEFAULT_BAGS: usize = 100;

/// Averages, over `m_bags` rounds, each point's Euclidean distance to its
/// nearest member of a fresh uniform subsample (drawn without replacement).
/// Members of the subsample score zero in that round.
pub fn sp_score(z: &Matrix, subsample_size: usize, m_bags: usize, seed: u64) -> Result<ScoreVector> {
    let k = z.rows();
    if subsample_size == 0 || subsample_size > k {
        return Err(Error::InvalidArgument(format!(
            "Sp subsample size {subsample_size} must lie in 1..={k}"
        )));
    }
    if m_bags == 0 {
        return Err(Error::InvalidArgument("Sp needs at least one bag".into()));
    }
    let mut rng = seed::rng(seed);
    let bags: Vec<Vec<usize>> = (0..m_bags)
        .map(|_| {
            let mut s = index::sample(&mut rng, k, subsample_size).into_vec();
            s.sort_unstable();
            s
        })
        .collect();
    let scores: Vec<f64> = (0..k)
        .into_par_iter()
        .map(|i| {
            let x = z.row(i);
            let total: f64 = bags
                .iter()
                .map(|bag| {
                    bag.iter()
                        .map(|&j| squared_distance(x, z.row(j)))
                        .fold(f64::INFINITY, f64::min)
                        .sqrt()
                })
                .sum();
            total / m_bags as f64
        })
        .collect();
    ScoreVector::new(scores, Provenance::Sp)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> Matrix {
        Matrix::new(points.len(), 1, points.to_vec())
    }

    #[test]
    fn full_subsample_scores_zero() {
        let z = line(&[0.0, 3.0, 4.0, -2.0, 9.0]);
        let s = sp_score(&z, 5, 3, 11).unwrap();
        assert!(s.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pair_subsamples_of_collinear_points() {
        // enumeration of the three two-element subsamples of {0, 1, 10};
        // a member of the subsample is at distance 0 from itself
        let expected: [([usize; 2], [f64; 3]); 3] = [
            ([0, 1], [0.0, 0.0, 9.0]),
            ([0, 2], [0.0, 1.0, 0.0]),
            ([1, 2], [1.0, 0.0, 0.0]),
        ];
        let z = line(&[0.0, 1.0, 10.0]);
        let mut seen = std::collections::HashSet::new();
        for seed in 0..64 {
            let mut rng = seed::rng(seed);
            let mut bag = index::sample(&mut rng, 3, 2).into_vec();
            bag.sort_unstable();
            let s = sp_score(&z, 2, 1, seed).unwrap();
            let (_, want) = expected.iter().find(|(b, _)| b.as_slice() == bag.as_slice()).unwrap();
            assert_eq!(s.values(), want.as_slice());
            seen.insert(bag);
        }
        assert_eq!(seen.len(), 3);
    }

    #[test]
    fn far_point_wins_once_bagged() {
        // expected per-round scores over uniform pairs: (1/3, 1/3, 3)
        let z = line(&[0.0, 1.0, 10.0]);
        let s = sp_score(&z, 2, 300, 9).unwrap();
        let v = s.values();
        assert!(v[2] > v[0] && v[2] > v[1]);
        assert!((v[2] - 3.0).abs() < 0.6);
    }

    #[test]
    fn scores_nonnegative_and_translation_invariant() {
        let mut rng = seed::rng(5);
        use rand_distr::{Distribution, StandardNormal};
        let data: Vec<f64> = (0..60 * 3).map(|_| StandardNormal.sample(&mut rng)).collect();
        let z = Matrix::new(60, 3, data.clone());
        let shifted = Matrix::new(60, 3, data.iter().enumerate().map(|(i, v)| v + [5.0, -3.0, 0.5][i % 3]).collect());
        let a = sp_score(&z, 8, 10, 2).unwrap();
        let b = sp_score(&shifted, 8, 10, 2).unwrap();
        assert!(a.values().iter().all(|&v| v >= 0.0));
        for (x, y) in a.values().iter().zip(b.values()) {
            assert!((x - y).abs() < 1e-9);
        }
    }

    #[test]
    fn rejects_oversized_subsample() {
        assert!(sp_score(&line(&[0.0, 1.0]), 3, 1, 0).is_err());
        assert!(sp_score(&line(&[0.0, 1.0]), 1, 0, 0).is_err());
    }
}
