//! Initial anomaly detection: PCA, Sp and an isolation forest, fused into the
//! scores that seed the first round of pseudo labels.

mod iforest;
mod pca;
mod sp;

pub use iforest::{
    average_path_length, iforest_fit, iforest_score, IsolationForest, IsolationTree, Node,
};
pub use pca::{pca_fit, PcaModel};
pub use sp::sp_score;

use crate::dataset::FrameSet;
use crate::error::{Error, Result};
use crate::scores::{Provenance, ScoreVector};
use crate::seed::{self, Stage};

#[derive(Debug, Clone, PartialEq)]
pub struct DetectConfig {
    pub pca_components: usize,
    pub sp_subsample: usize,
    pub sp_bags: usize,
    pub n_trees: usize,
    pub tree_subsample: usize,
}

impl Default for DetectConfig {
    fn default() -> Self {
        Self {
            pca_components: pca::DEFAULT_COMPONENTS,
            sp_subsample: sp::DEFAULT_SUBSAMPLE,
            sp_bags: sp::DEFAULT_BAGS,
            n_trees: iforest::DEFAULT_TREES,
            tree_subsample: iforest::DEFAULT_SUBSAMPLE,
        }
    }
}

/// Min-max rescales both inputs onto `[0, 1]` and averages them.
pub fn fuse_scores(s1: &ScoreVector, s2: &ScoreVector) -> Result<ScoreVector> {
    if s1.len() != s2.len() {
        return Err(Error::LengthMismatch {
            left: s1.len(),
            right: s2.len(),
        });
    }
    let fused = s1
        .rescaled()
        .into_iter()
        .zip(s2.rescaled())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    ScoreVector::new(fused, Provenance::Fused)
}

#[derive(Debug, Clone)]
pub struct InitialDetection {
    pub sp: ScoreVector,
    pub iforest: ScoreVector,
    pub fused: ScoreVector,
}

/// flatten → PCA → (Sp, isolation forest) → fuse.
pub fn initial_detection(fs: &FrameSet, cfg: &DetectConfig, seed: u64) -> Result<InitialDetection> {
    let x = fs.flatten();
    let pca = pca_fit(&x, cfg.pca_components)?;
    let z = pca.transform(&x)?;
    let sp = sp_score(
        &z,
        cfg.sp_subsample.min(z.rows()),
        cfg.sp_bags,
        seed::derive(seed, Stage::Sp, 0),
    )?;
    let forest = iforest_fit(&z, cfg.n_trees, cfg.tree_subsample, seed::derive(seed, Stage::IForest, 0))?;
    let iforest = iforest_score(&forest, &z)?;
    let fused = fuse_scores(&sp, &iforest)?;
    Ok(InitialDetection { sp, iforest, fused })
}

pub fn initial_scores(fs: &FrameSet, cfg: &DetectConfig, seed: u64) -> Result<ScoreVector> {
    initial_detection(fs, cfg, seed).map(|d| d.fused)
}
