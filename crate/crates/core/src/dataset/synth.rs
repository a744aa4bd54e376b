//! Seeded synthetic scenes with known ground truth.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

use super::{FrameSet, FrameShape, GroundTruth};
use crate::error::{Error, Result};
use crate::seed::{self, Rng, Stage};

/// Per-pixel Gaussian noise of the image scene.
pub const SCENE_NOISE_SIGMA: f64 = 0.02;
pub const SCENE_BACKGROUND: f64 = 0.2;
pub const DISC_INTENSITY: f64 = 0.6;
pub const SQUARE_INTENSITY: f64 = 0.95;

/// Normal frames come from a two-component unit-covariance Gaussian mixture
/// with means at ±1 on axis 0; anomalies from a unit Gaussian centred
/// `separation` standard deviations out on axis 1 (axis 0 when `d == 1`).
/// Rows are shuffled with the seed.
pub fn synth_vector_scene(
    k_normal: usize,
    k_anomaly: usize,
    d: usize,
    separation: f64,
    seed: u64,
) -> Result<(FrameSet, GroundTruth)> {
    if k_normal < 2 || k_anomaly < 1 || d < 1 || !(separation > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "synth_vector_scene needs k_normal >= 2, k_anomaly >= 1, d >= 1, separation > 0 \
             (got {k_normal}, {k_anomaly}, {d}, {separation})"
        )));
    }
    let mut rng = seed::stage_rng(seed, Stage::Scene, 0);
    let anomaly_axis = if d > 1 { 1 } else { 0 };
    let mut rows: Vec<(Vec<f64>, bool)> = Vec::with_capacity(k_normal + k_anomaly);
    for _ in 0..k_normal {
        let mut x = gaussian(&mut rng, d);
        x[0] += if rng.random_bool(0.5) { 1.0 } else { -1.0 };
        rows.push((x, false));
    }
    for _ in 0..k_anomaly {
        let mut x = gaussian(&mut rng, d);
        x[anomaly_axis] += separation;
        rows.push((x, true));
    }
    rows.shuffle(&mut rng);
    let (payloads, labels): (Vec<_>, Vec<_>) = rows.into_iter().unzip();
    Ok((
        FrameSet::new(FrameShape::Vector { dim: d }, payloads)?,
        GroundTruth::new(labels)?,
    ))
}

fn gaussian(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

/// Axis-aligned pixel rectangle.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BoundingBox {
    pub row: usize,
    pub col: usize,
    pub height: usize,
    pub width: usize,
}

impl BoundingBox {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        row >= self.row && row < self.row + self.height && col >= self.col && col < self.col + self.width
    }
}

#[derive(Debug, Clone)]
pub struct ImageScene {
    pub frames: FrameSet,
    pub truth: GroundTruth,
    /// Planted square per frame; `None` for normal frames.
    pub boxes: Vec<Option<BoundingBox>>,
    /// Disc centre column per frame.
    pub disc_cols: Vec<f64>,
}

/// Disc radius used by the image scene.
pub fn disc_radius(h: usize, w: usize) -> f64 {
    (h.min(w) as f64 / 8.0).max(2.0)
}

/// Renders one frame: background, a disc centred on the middle row at
/// `disc_col`, an optional square, then clamped Gaussian pixel noise.
pub fn render_scene_frame(
    h: usize,
    w: usize,
    disc_col: f64,
    square: Option<BoundingBox>,
    rng: &mut Rng,
) -> Vec<f64> {
    let radius = disc_radius(h, w);
    let centre_row = (h as f64 - 1.0) / 2.0;
    let mut px = Vec::with_capacity(h * w);
    for r in 0..h {
        for c in 0..w {
            let dr = r as f64 - centre_row;
            let dc = c as f64 - disc_col;
            let mut v = if dr * dr + dc * dc <= radius * radius {
                DISC_INTENSITY
            } else {
                SCENE_BACKGROUND
            };
            if square.is_some_and(|b| b.contains(r, c)) {
                v = SQUARE_INTENSITY;
            }
            let noise: f64 = StandardNormal.sample(rng);
            px.push((v + SCENE_NOISE_SIGMA * noise).clamp(0.0, 1.0));
        }
    }
    px
}

/// Temporal sequence of a disc sweeping back and forth along a horizontal
/// path. `k_anomaly` randomly chosen frames additionally carry a bright square
/// of side `w / 4` at a random position.
pub fn synth_image_scene(
    k_normal: usize,
    k_anomaly: usize,
    h: usize,
    w: usize,
    seed: u64,
) -> Result<ImageScene> {
    if h < 16 || w < 16 || k_normal < 1 || k_anomaly < 1 {
        return Err(Error::InvalidArgument(format!(
            "synth_image_scene needs h, w >= 16 and counts >= 1 (got {k_normal}, {k_anomaly}, {h}, {w})"
        )));
    }
    let k = k_normal + k_anomaly;
    let mut rng = seed::stage_rng(seed, Stage::Scene, 1);
    let mut order: Vec<usize> = (0..k).collect();
    order.shuffle(&mut rng);
    let mut is_anomaly = vec![false; k];
    for &i in &order[..k_anomaly] {
        is_anomaly[i] = true;
    }

    let radius = disc_radius(h, w);
    let lo = radius;
    let span = ((w as f64 - 1.0 - radius) - lo).max(1.0) as usize;
    let side = w / 4;
    let mut payloads = Vec::with_capacity(k);
    let mut boxes = Vec::with_capacity(k);
    let mut disc_cols = Vec::with_capacity(k);
    for (t, &anomalous) in is_anomaly.iter().enumerate() {
        let phase = t % (2 * span);
        let offset = if phase <= span { phase } else { 2 * span - phase };
        let disc_col = lo + offset as f64;
        let square = anomalous.then(|| BoundingBox {
            row: rng.random_range(0..=h - side),
            col: rng.random_range(0..=w - side),
            height: side,
            width: side,
        });
        payloads.push(render_scene_frame(h, w, disc_col, square, &mut rng));
        boxes.push(square);
        disc_cols.push(disc_col);
    }
    Ok(ImageScene {
        frames: FrameSet::new(FrameShape::Image { height: h, width: w }, payloads)?,
        truth: GroundTruth::new(is_anomaly)?,
        boxes,
        disc_cols,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_scene_counts() {
        let (fs, gt) = synth_vector_scene(200, 20, 16, 6.0, 1).unwrap();
        assert_eq!(fs.len(), 220);
        assert_eq!(gt.len(), 220);
        assert_eq!(gt.positives(), 20);
        assert_eq!(fs.shape(), FrameShape::Vector { dim: 16 });
    }

    #[test]
    fn vector_scene_is_deterministic() {
        let a = synth_vector_scene(200, 20, 16, 6.0, 1).unwrap();
        let b = synth_vector_scene(200, 20, 16, 6.0, 1).unwrap();
        assert_eq!(a, b);
        let bits = |fs: &FrameSet| {
            fs.frames()
                .iter()
                .flat_map(|f| f.data.iter().map(|v| v.to_bits()))
                .collect::<Vec<_>>()
        };
        assert_eq!(bits(&a.0), bits(&b.0));
        let c = synth_vector_scene(200, 20, 16, 6.0, 2).unwrap();
        assert_ne!(a.0, c.0);
    }

    #[test]
    fn vector_scene_anomalies_sit_out_on_axis_one() {
        let (fs, gt) = synth_vector_scene(300, 30, 4, 8.0, 3).unwrap();
        let mean_axis1 = |anom: bool| {
            let v: Vec<f64> = fs
                .frames()
                .iter()
                .filter(|f| gt.is_anomaly(f.id) == anom)
                .map(|f| f.data[1])
                .collect();
            v.iter().sum::<f64>() / v.len() as f64
        };
        assert!(mean_axis1(true) > 7.0);
        assert!(mean_axis1(false).abs() < 0.5);
    }

    #[test]
    fn vector_scene_rejects_bad_arguments() {
        assert!(synth_vector_scene(1, 1, 2, 1.0, 0).is_err());
        assert!(synth_vector_scene(2, 0, 2, 1.0, 0).is_err());
        assert!(synth_vector_scene(2, 1, 0, 1.0, 0).is_err());
        assert!(synth_vector_scene(2, 1, 2, 0.0, 0).is_err());
    }

    #[test]
    fn image_scene_counts_and_boxes() {
        let scene = synth_image_scene(100, 10, 32, 32, 7).unwrap();
        assert_eq!(scene.frames.len(), 110);
        assert_eq!(scene.truth.positives(), 10);
        for (i, b) in scene.boxes.iter().enumerate() {
            assert_eq!(b.is_some(), scene.truth.is_anomaly(i));
            if let Some(b) = b {
                assert_eq!((b.height, b.width), (8, 8));
                assert!(b.row + b.height <= 32 && b.col + b.width <= 32);
            }
        }
        let again = synth_image_scene(100, 10, 32, 32, 7).unwrap();
        assert_eq!(scene.frames, again.frames);
    }

    #[test]
    fn square_adds_brightness_at_same_disc_position() {
        let scene = synth_image_scene(100, 10, 32, 32, 7).unwrap();
        for (i, b) in scene.boxes.iter().enumerate() {
            let Some(b) = b else { continue };
            let col = scene.disc_cols[i];
            let mut r1 = seed::rng(i as u64);
            let mut r2 = seed::rng(i as u64);
            let normal = render_scene_frame(32, 32, col, None, &mut r1);
            let anomalous = render_scene_frame(32, 32, col, Some(*b), &mut r2);
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            assert!(mean(&anomalous) > mean(&normal));
            // the generated frame itself is brighter than the reconstructed normal one
            assert!(mean(&scene.frames.frame(i).unwrap().data) > mean(&normal));
        }
    }

    #[test]
    fn image_scene_rejects_small_frames() {
        assert!(synth_image_scene(10, 1, 8, 32, 0).is_err());
        assert!(synth_image_scene(0, 1, 32, 32, 0).is_err());
    }
}
