use std::fmt;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which scorer produced a [`ScoreVector`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Sp,
    IForest,
    Fused,
    Learner,
    Ensemble,
}

impl fmt::Display for Provenance {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Provenance::Sp => "sp",
            Provenance::IForest => "iforest",
            Provenance::Fused => "fused",
            Provenance::Learner => "learner",
            Provenance::Ensemble => "ensemble",
        })
    }
}

/// One anomaly score per frame, larger meaning more anomalous.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreVector {
    values: Vec<f64>,
    provenance: Provenance,
}

impl ScoreVector {
    pub fn new(values: Vec<f64>, provenance: Provenance) -> Result<Self> {
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite { frame: i });
        }
        Ok(Self { values, provenance })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Frame ids by descending score, ties broken by ascending id.
    pub fn ranking(&self) -> Vec<usize> {
        let mut ids: Vec<usize> = (0..self.values.len()).collect();
        ids.sort_by(|&a, &b| self.values[b].total_cmp(&self.values[a]).then(a.cmp(&b)));
        ids
    }

    /// Min-max rescale onto `[0, 1]`; a constant vector maps to all `0.5`.
    pub fn rescaled(&self) -> Vec<f64> {
        let (lo, hi) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let range = hi - lo;
        if !(range > 0.0) {
            return vec![0.5; self.values.len()];
        }
        self.values.iter().map(|v| (v - lo) / range).collect()
    }

    /// `frame_id,score` lines, no header.
    pub fn to_csv(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 24);
        for (i, v) in self.values.iter().enumerate() {
            out.push_str(&format!("{i},{v}\n"));
        }
        out
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }

    pub fn read_csv(path: impl AsRef<Path>, provenance: Provenance) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut values = Vec::new();
        for (n, line) in text.lines().map(str::trim).enumerate() {
            if line.is_empty() {
                continue;
            }
            let parsed = line.split_once(',').and_then(|(id, score)| {
                Some((id.trim().parse::<usize>().ok()?, score.trim().parse::<f64>().ok()?))
            });
            match parsed {
                Some((id, score)) if id == values.len() => values.push(score),
                _ => {
                    return Err(Error::format(
                        path,
                        format!("line {}: expected `{},<score>`", n + 1, values.len()),
                    ))
                }
            }
        }
        Self::new(values, provenance)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ranking_breaks_ties_by_id() {
        let s = ScoreVector::new(vec![0.5, 0.9, 0.5, 0.1], Provenance::Fused).unwrap();
        assert_eq!(s.ranking(), vec![1, 0, 2, 3]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let s = ScoreVector::new(vec![0.1, 1.0 / 3.0, -2.5e-17, 7.0], Provenance::Learner).unwrap();
        let p = dir.path().join("s.csv");
        s.write_csv(&p).unwrap();
        assert_eq!(ScoreVector::read_csv(&p, Provenance::Learner).unwrap(), s);
    }

    #[test]
    fn rejects_non_finite() {
        assert!(ScoreVector::new(vec![0.0, f64::INFINITY], Provenance::Sp).is_err());
    }
}
