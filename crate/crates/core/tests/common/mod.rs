//! Oracles shared by the integration tests and the acceptance runner. They
//! use only forward evaluation and brute force, never the code under test's
//! shortcuts.

#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use vadrank_core::dataset::FrameShape;
use vadrank_core::learner::{net_init, ArchKind, Architecture, ScoringModel};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn median(mut v: Vec<f64>) -> f64 {
    assert!(!v.is_empty());
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Fraction of (positive, negative) pairs ordered correctly, ties counting
/// one half.
pub fn pairwise_auc(scores: &[f64], labels: &[bool]) -> f64 {
    let mut wins = 0.0;
    let mut pairs = 0.0;
    for (i, &li) in labels.iter().enumerate() {
        if !li {
            continue;
        }
        for (j, &lj) in labels.iter().enumerate() {
            if lj {
                continue;
            }
            pairs += 1.0;
            if scores[i] > scores[j] {
                wins += 1.0;
            } else if scores[i] == scores[j] {
                wins += 0.5;
            }
        }
    }
    wins / pairs
}

/// Batch-mean absolute loss by forward passes alone.
pub fn batch_loss(m: &ScoringModel, batch: &[(Vec<f64>, f64)]) -> f64 {
    batch
        .iter()
        .map(|(x, y)| (m.forward_slice(x).unwrap() - y).abs())
        .sum::<f64>()
        / batch.len() as f64
}

#[derive(Debug, Clone, Copy)]
pub struct FdReport {
    pub max_rel_error: f64,
    pub checked: usize,
    pub excluded: usize,
}

/// Compares `analytic` with central differences at step `eps`.
///
/// With every other parameter fixed the loss is piecewise linear in any one
/// parameter, so the one-sided slopes agree unless a rectifier or the loss
/// switches inside `[θ-eps, θ+eps]`. Such parameters are skipped.
pub fn fd_check(m: &ScoringModel, batch: &[(Vec<f64>, f64)], analytic: &[f64], eps: f64) -> FdReport {
    let base = batch_loss(m, batch);
    let mut probe = m.clone();
    let mut report = FdReport {
        max_rel_error: 0.0,
        checked: 0,
        excluded: 0,
    };
    for i in 0..m.param_count() {
        let theta = m.params()[i];
        probe.params_mut()[i] = theta + eps;
        let up = batch_loss(&probe, batch);
        probe.params_mut()[i] = theta - eps;
        let down = batch_loss(&probe, batch);
        probe.params_mut()[i] = theta;
        let right = (up - base) / eps;
        let left = (base - down) / eps;
        if (right - left).abs() > 1e-7 * (1.0 + right.abs().max(left.abs())) {
            report.excluded += 1;
            continue;
        }
        let fd = (up - down) / (2.0 * eps);
        let a = analytic[i];
        let rel = if a == 0.0 && fd.abs() < 1e-10 {
            0.0
        } else {
            (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8)
        };
        report.max_rel_error = report.max_rel_error.max(rel);
        report.checked += 1;
    }
    report
}

/// The `i`-th of a rotating set of small architectures with a batch to match.
pub fn gradient_case(i: u64) -> (ScoringModel, Vec<(Vec<f64>, f64)>) {
    let mut r = rng(1000 + i);
    let (arch, len) = match i % 4 {
        0 => {
            let dim = r.random_range(2..8);
            (Architecture::standard(ArchKind::Mlp, FrameShape::Vector { dim }).unwrap(), dim)
        }
        1 => {
            let dim = r.random_range(2..6);
            let widths = vec![r.random_range(3..10), r.random_range(2..6)];
            (
                Architecture::new(ArchKind::Mlp, FrameShape::Vector { dim }, widths, Some(7)).unwrap(),
                dim,
            )
        }
        2 => {
            let shape = FrameShape::Image { height: 8, width: 8 };
            (Architecture::new(ArchKind::ConvGap, shape, vec![3, 4], Some(6)).unwrap(), 64)
        }
        _ => {
            let shape = FrameShape::Image { height: 9, width: 7 };
            (Architecture::new(ArchKind::ConvGapLinear, shape, vec![4, 3], None).unwrap(), 63)
        }
    };
    let m = net_init(&arch, 50 + i);
    let batch = (0..6)
        .map(|_| {
            let x: Vec<f64> = (0..len).map(|_| r.random_range(-1.0..1.0)).collect();
            (x, r.random_range(-0.5..1.5))
        })
        .collect();
    (m, batch)
}
