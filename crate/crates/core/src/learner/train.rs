//! Mini-batch SGD on the absolute ordinal loss.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng as _;

use super::net::ScoringModel;
use crate::dataset::FrameSet;
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Target for pseudo-anomalous frames.
    pub c1: f64,
    /// Target for pseudo-normal frames.
    pub c2: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.005,
            batch_size: 128,
            epochs: 50,
            c1: 1.0,
            c2: 0.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.c1 > self.c2) {
            return Err(Error::InvalidArgument(format!(
                "ordinal targets need c1 > c2 (got {} and {})",
                self.c1, self.c2
            )));
        }
        if !(self.learning_rate > 0.0) || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::InvalidArgument(
                "learning rate, batch size and epochs must be positive".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    /// Mean absolute loss over the epoch's batches, before each update.
    pub mean_loss: f64,
}

/// Draws pseudo-anomalous frames with probability proportional to their
/// selection score shifted to be strictly positive.
#[derive(Debug, Clone)]
pub struct AnomalySampler {
    ids: Vec<usize>,
    index: Option<WeightedIndex<f64>>,
}

/// Added to `score - min(score)` so that every weight is positive.
pub const WEIGHT_FLOOR: f64 = 1e-6;

impl AnomalySampler {
    pub fn weighted(ids: &[usize], scores: &[f64]) -> Result<Self> {
        if ids.len() != scores.len() {
            return Err(Error::LengthMismatch {
                left: ids.len(),
                right: scores.len(),
            });
        }
        let lo = scores.iter().copied().fold(f64::INFINITY, f64::min);
        let weights: Vec<f64> = scores.iter().map(|s| s - lo + WEIGHT_FLOOR).collect();
        let index = WeightedIndex::new(&weights)
            .map_err(|e| Error::InvalidArgument(format!("sampling weights: {e}")))?;
        Ok(Self {
            ids: ids.to_vec(),
            index: Some(index),
        })
    }

    pub fn uniform(ids: &[usize]) -> Self {
        Self {
            ids: ids.to_vec(),
            index: None,
        }
    }

    pub fn draw(&self, rng: &mut Rng) -> usize {
        match &self.index {
            Some(w) => self.ids[w.sample(rng)],
            None => self.ids[rng.random_range(0..self.ids.len())],
        }
    }

    fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    fn len(&self) -> usize {
        self.ids.len()
    }
}

/// Batch composition for one training run.
#[derive(Debug, Clone)]
pub(crate) struct Plan {
    pub anomalies: AnomalySampler,
    pub normals: AnomalySampler,
    pub anomaly_target: f64,
    pub normal_target: f64,
}

/// Trains on pseudo-anomalies `anomalies` (target c1) and pseudo-normals
/// `normals` (target c2). Each epoch runs `ceil((|A|+|N|) / batch)` batches
/// of half anomalies, drawn with replacement in proportion to
/// `anomaly_scores`, and half normals drawn uniformly with replacement.
pub fn train(
    model: ScoringModel,
    fs: &FrameSet,
    anomalies: &[usize],
    normals: &[usize],
    anomaly_scores: &[f64],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<ScoringModel> {
    train_observed(model, fs, anomalies, normals, anomaly_scores, cfg, seed, &mut |_| {})
}

#[allow(clippy::too_many_arguments)]
pub fn train_observed(
    model: ScoringModel,
    fs: &FrameSet,
    anomalies: &[usize],
    normals: &[usize],
    anomaly_scores: &[f64],
    cfg: &TrainConfig,
    seed: u64,
    observer: &mut dyn FnMut(EpochStats),
) -> Result<ScoringModel> {
    cfg.validate()?;
    check_sets(fs, anomalies, normals, true)?;
    let plan = Plan {
        anomalies: AnomalySampler::weighted(anomalies, anomaly_scores)?,
        normals: AnomalySampler::uniform(normals),
        anomaly_target: cfg.c1,
        normal_target: cfg.c2,
    };
    run(model, fs, &plan, cfg, cfg.epochs, seed, observer)
}

/// Same mechanics with uniform sampling on both sides; either side may be
/// empty, in which case every batch comes from the other.
#[allow(clippy::too_many_arguments)]
pub fn train_uniform(
    model: ScoringModel,
    fs: &FrameSet,
    anomalies: &[usize],
    normals: &[usize],
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
    observer: &mut dyn FnMut(EpochStats),
) -> Result<ScoringModel> {
    cfg.validate()?;
    check_sets(fs, anomalies, normals, false)?;
    if anomalies.is_empty() && normals.is_empty() {
        return Ok(model);
    }
    let plan = Plan {
        anomalies: AnomalySampler::uniform(anomalies),
        normals: AnomalySampler::uniform(normals),
        anomaly_target: cfg.c1,
        normal_target: cfg.c2,
    };
    run(model, fs, &plan, cfg, epochs, seed, observer)
}

fn check_sets(fs: &FrameSet, anomalies: &[usize], normals: &[usize], nonempty: bool) -> Result<()> {
    if nonempty && (anomalies.is_empty() || normals.is_empty()) {
        return Err(Error::InvalidArgument(
            "training needs nonempty anomaly and normal sets".into(),
        ));
    }
    if let Some(&bad) = anomalies.iter().chain(normals).find(|&&i| i >= fs.len()) {
        return Err(Error::InvalidArgument(format!("frame {bad} out of range")));
    }
    let mut marks = vec![false; fs.len()];
    for &a in anomalies {
        marks[a] = true;
    }
    if let Some(&both) = normals.iter().find(|&&n| marks[n]) {
        return Err(Error::InvalidArgument(format!(
            "frame {both} is in both the anomaly and normal sets"
        )));
    }
    Ok(())
}

pub(crate) fn run(
    mut model: ScoringModel,
    fs: &FrameSet,
    plan: &Plan,
    cfg: &TrainConfig,
    epochs: usize,
    seed: u64,
    observer: &mut dyn FnMut(EpochStats),
) -> Result<ScoringModel> {
    if fs.shape() != model.arch().input() {
        return Err(Error::ArchMismatch {
            arch: model.arch().to_string(),
            input: fs.shape().to_string(),
        });
    }
    let mut rng = seed::rng(seed);
    let total = plan.anomalies.len() + plan.normals.len();
    let batches = total.div_ceil(cfg.batch_size);
    let n_anomalies = match (plan.anomalies.is_empty(), plan.normals.is_empty()) {
        (false, false) => cfg.batch_size / 2,
        (false, true) => cfg.batch_size,
        (true, _) => 0,
    };
    let mut ids = Vec::with_capacity(cfg.batch_size);
    for epoch in 0..epochs {
        let mut loss_sum = 0.0;
        for _ in 0..batches {
            ids.clear();
            for _ in 0..n_anomalies {
                ids.push((plan.anomalies.draw(&mut rng), plan.anomaly_target));
            }
            for _ in n_anomalies..cfg.batch_size {
                ids.push((plan.normals.draw(&mut rng), plan.normal_target));
            }
            let batch: Vec<(&[f64], f64)> = ids
                .iter()
                .map(|&(i, y)| (fs.frames()[i].data.as_slice(), y))
                .collect();
            let (grad, loss) = model.batch_gradient(&batch);
            loss_sum += loss;
            model.sgd_step(&grad, cfg.learning_rate);
        }
        observer(EpochStats {
            epoch,
            mean_loss: loss_sum / batches as f64,
        });
    }
    Ok(model)
}

/// Mean |φ(x) − y| over A ∪ N.
pub fn training_loss(
    model: &ScoringModel,
    fs: &FrameSet,
    anomalies: &[usize],
    normals: &[usize],
    cfg: &TrainConfig,
) -> Result<f64> {
    let scores = model.score_frames(fs)?;
    let s = scores.values();
    let total: f64 = anomalies.iter().map(|&i| (s[i] - cfg.c1).abs()).sum::<f64>()
        + normals.iter().map(|&i| (s[i] - cfg.c2).abs()).sum::<f64>();
    Ok(total / (anomalies.len() + normals.len()) as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_vector_scene, FrameShape};
    use crate::learner::{net_init, ArchKind, Architecture};

    fn fixture() -> (FrameSet, Vec<usize>, Vec<usize>, Vec<f64>) {
        let (fs, gt) = synth_vector_scene(120, 20, 6, 6.0, 4).unwrap();
        let a: Vec<usize> = (0..fs.len()).filter(|&i| gt.is_anomaly(i)).collect();
        let n: Vec<usize> = (0..fs.len()).filter(|&i| !gt.is_anomaly(i)).take(40).collect();
        let w = vec![1.0; a.len()];
        (fs, a, n, w)
    }

    fn arch(fs: &FrameSet) -> Architecture {
        Architecture::standard(ArchKind::Mlp, fs.shape()).unwrap()
    }

    #[test]
    fn loss_decreases_on_separable_fixture() {
        let (fs, a, n, w) = fixture();
        let cfg = TrainConfig::default();
        let m0 = net_init(&arch(&fs), 1);
        let before = training_loss(&m0, &fs, &a, &n, &cfg).unwrap();
        let mut epochs = Vec::new();
        let m1 = train_observed(m0, &fs, &a, &n, &w, &cfg, 2, &mut |s| epochs.push(s)).unwrap();
        let after = training_loss(&m1, &fs, &a, &n, &cfg).unwrap();
        assert_eq!(epochs.len(), 50);
        assert!(after < before, "{after} !< {before}");
    }

    #[test]
    fn same_seed_same_parameters() {
        let (fs, a, n, w) = fixture();
        let cfg = TrainConfig { epochs: 3, ..TrainConfig::default() };
        let m = net_init(&arch(&fs), 1);
        let x = train(m.clone(), &fs, &a, &n, &w, &cfg, 9).unwrap();
        let y = train(m.clone(), &fs, &a, &n, &w, &cfg, 9).unwrap();
        assert_eq!(x, y);
        let z = train(m, &fs, &a, &n, &w, &cfg, 10).unwrap();
        assert_ne!(x, z);
    }

    #[test]
    fn equal_weights_sample_uniformly() {
        let ids: Vec<usize> = (10..20).collect();
        let sampler = AnomalySampler::weighted(&ids, &[3.0; 10]).unwrap();
        let mut rng = seed::rng(77);
        let draws = 20_000;
        let mut counts = [0usize; 10];
        for _ in 0..draws {
            counts[sampler.draw(&mut rng) - 10] += 1;
        }
        let expected = draws as f64 / 10.0;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
        // chi-square with 9 degrees of freedom, 99.9th percentile
        assert!(chi2 < 27.88, "chi2 {chi2}");
    }

    #[test]
    fn weighted_sampling_follows_scores() {
        let ids = [0, 1];
        // shifted weights: 1e-6 and 3 + 1e-6
        let sampler = AnomalySampler::weighted(&ids, &[2.0, 5.0]).unwrap();
        let mut rng = seed::rng(1);
        let hits = (0..10_000).filter(|_| sampler.draw(&mut rng) == 1).count();
        assert!(hits > 9_990);
    }

    #[test]
    fn rejects_bad_sets_and_config() {
        let (fs, a, n, w) = fixture();
        let m = net_init(&arch(&fs), 1);
        let cfg = TrainConfig::default();
        assert!(train(m.clone(), &fs, &[], &n, &[], &cfg, 0).is_err());
        assert!(train(m.clone(), &fs, &a, &[], &w, &cfg, 0).is_err());
        let overlap = vec![a[0]];
        assert!(train(m.clone(), &fs, &a, &overlap, &w, &cfg, 0).is_err());
        let bad = TrainConfig { c1: 0.0, c2: 0.0, ..cfg.clone() };
        assert!(train(m, &fs, &a, &n, &w, &bad, 0).is_err());
    }

    #[test]
    fn inputs_are_untouched() {
        let (fs, a, n, w) = fixture();
        let (a0, n0, w0) = (a.clone(), n.clone(), w.clone());
        let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
        train(net_init(&arch(&fs), 3), &fs, &a, &n, &w, &cfg, 0).unwrap();
        assert_eq!((a, n, w), (a0, n0, w0));
    }

    #[test]
    fn equal_targets_flatten_the_output() {
        let (fs, a, n, _) = fixture();
        let m0 = net_init(&arch(&fs), 5);
        let spread = |m: &ScoringModel| {
            let s = m.score_frames(&fs).unwrap();
            let v = s.values();
            let mean = v.iter().sum::<f64>() / v.len() as f64;
            v.iter().map(|x| (x - mean).abs()).sum::<f64>() / v.len() as f64
        };
        let plan = Plan {
            anomalies: AnomalySampler::uniform(&a),
            normals: AnomalySampler::uniform(&n),
            anomaly_target: 0.5,
            normal_target: 0.5,
        };
        let cfg = TrainConfig { epochs: 200, ..TrainConfig::default() };
        let mean = |m: &ScoringModel| {
            let s = m.score_frames(&fs).unwrap();
            s.values().iter().sum::<f64>() / s.len() as f64
        };
        let (before, mean_before) = (spread(&m0), mean(&m0));
        let m1 = run(m0, &fs, &plan, &cfg, cfg.epochs, 3, &mut |_| {}).unwrap();
        let after = spread(&m1);
        assert!(after < before, "{after} !< {before}");
        assert!((mean(&m1) - 0.5).abs() < (mean_before - 0.5).abs());
    }

    #[test]
    fn uniform_fine_tune_allows_one_sided_sets() {
        let (fs, a, _, _) = fixture();
        let cfg = TrainConfig::default();
        let m = net_init(&Architecture::standard(ArchKind::Mlp, FrameShape::Vector { dim: 6 }).unwrap(), 1);
        let before = m.score_frames(&fs).unwrap();
        let tuned = train_uniform(m, &fs, &a[..3], &[], &cfg, 5, 0, &mut |_| {}).unwrap();
        let after = tuned.score_frames(&fs).unwrap();
        let gap = |s: &crate::scores::ScoreVector| a[..3].iter().map(|&i| (s.values()[i] - cfg.c1).abs()).sum::<f64>();
        assert!(gap(&after) < gap(&before));
    }
}
