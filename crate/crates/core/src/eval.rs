//! Frame-level ROC / AUC.
//!
//! AUC is the Mann-Whitney statistic with midranks, i.e. the probability that
//! a random anomalous frame outscores a random normal one, ties counting ½.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::dataset::GroundTruth;
use crate::error::{Error, Result};
use crate::scores::ScoreVector;

#[derive(Debug, Clone, PartialEq)]
pub struct RocResult {
    pub auc: f64,
    /// (false-positive rate, true-positive rate), from (0,0) to (1,1).
    pub curve: Vec<(f64, f64)>,
}

fn class_counts(scores: &[f64], gt: &GroundTruth) -> Result<(usize, usize)> {
    if scores.len() != gt.len() {
        return Err(Error::LengthMismatch {
            left: scores.len(),
            right: gt.len(),
        });
    }
    if !gt.has_both_classes() {
        return Err(Error::SingleClass);
    }
    let p = gt.positives();
    Ok((p, gt.len() - p))
}

pub fn auc(scores: &ScoreVector, gt: &GroundTruth) -> Result<RocResult> {
    auc_values(scores.values(), gt)
}

pub fn auc_values(scores: &[f64], gt: &GroundTruth) -> Result<RocResult> {
    let (p, n) = class_counts(scores, gt)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // midranks (1-based) over ascending scores
    let mut positive_rank_sum = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j + 2) as f64 / 2.0;
        let positives = order[i..=j].iter().filter(|&&k| gt.is_anomaly(k)).count();
        positive_rank_sum += midrank * positives as f64;
        i = j + 1;
    }
    let (pf, nf) = (p as f64, n as f64);
    let u = positive_rank_sum - pf * (pf + 1.0) / 2.0;
    let auc = u / (pf * nf);

    // threshold sweep from the highest score down, one point per tie group
    let mut curve = vec![(0.0, 0.0)];
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = order.len();
    while i > 0 {
        let s = scores[order[i - 1]];
        while i > 0 && scores[order[i - 1]] == s {
            if gt.is_anomaly(order[i - 1]) {
                tp += 1;
            } else {
                fp += 1;
            }
            i -= 1;
        }
        curve.push((fp as f64 / nf, tp as f64 / pf));
    }
    Ok(RocResult { auc, curve })
}

/// O(P·N) pairwise reference implementation.
pub fn auc_bruteforce(scores: &[f64], gt: &GroundTruth) -> Result<f64> {
    let (p, n) = class_counts(scores, gt)?;
    let mut wins = 0.0;
    for (i, &si) in scores.iter().enumerate() {
        if !gt.is_anomaly(i) {
            continue;
        }
        for (j, &sj) in scores.iter().enumerate() {
            if gt.is_anomaly(j) {
                continue;
            }
            if si > sj {
                wins += 1.0;
            } else if si == sj {
                wins += 0.5;
            }
        }
    }
    Ok(wins / (p as f64 * n as f64))
}

pub fn curve_csv(roc: &RocResult) -> String {
    let mut out = String::from("fpr,tpr\n");
    for (f, t) in &roc.curve {
        let _ = writeln!(out, "{f},{t}");
    }
    out
}

/// One line of an experiment report.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub dataset: String,
    pub seed: u64,
    pub iteration: usize,
    pub auc: f64,
}

pub fn report_csv(rows: &[ReportRow]) -> String {
    let mut out = String::from("dataset,seed,iteration,auc\n");
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.dataset, r.seed, r.iteration, r.auc);
    }
    out
}

pub fn write_report(path: impl AsRef<Path>, rows: &[ReportRow]) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, report_csv(rows)).map_err(|e| Error::io(path, e))
}
