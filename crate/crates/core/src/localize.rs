//! Class activation maps for the conv-gap-linear scorer.
//!
//! With a single linear unit on globally pooled features the score splits
//! over spatial cells: the mean of the activation map plus the output bias
//! reproduces the forward pass exactly.

use std::path::Path;

use crate::dataset::{encode_pgm, Frame, FrameShape, GrayImage};
use crate::error::{Error, Result};
use crate::learner::{ArchKind, ScoringModel};

/// Per-cell contribution to a frame's score over the last conv grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationMap {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    /// Row-major, `height * width` values.
    pub grid: Vec<f64>,
    /// Output bias of the model the map came from.
    pub bias: f64,
}

impl ActivationMap {
    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.grid[row * self.width + col]
    }

    /// Mean over cells plus the bias, which equals the model's score.
    pub fn reconstructed_score(&self) -> f64 {
        self.grid.iter().sum::<f64>() / self.grid.len() as f64 + self.bias
    }

    /// Row and column of the largest cell (first one on ties).
    pub fn argmax(&self) -> (usize, usize) {
        argmax(&self.grid, self.width)
    }
}

/// An activation map resized to the frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    pub frame: usize,
    pub height: usize,
    pub width: usize,
    pub grid: Vec<f64>,
    /// `grid` min-max scaled into [0, 1]; a constant map becomes 0.5.
    pub normalized: Vec<f64>,
}

impl SaliencyMap {
    pub fn argmax(&self) -> (usize, usize) {
        argmax(&self.grid, self.width)
    }

    pub fn to_image(&self) -> GrayImage {
        GrayImage::from_unit(self.height, self.width, &self.normalized)
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        encode_pgm(&self.to_image())
    }

    pub fn write_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_pgm()).map_err(|e| Error::io(path, e))
    }

    /// Raw grid as CSV, one image row per line.
    pub fn to_csv(&self) -> String {
        grid_csv(&self.grid, self.width)
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_csv()).map_err(|e| Error::io(path, e))
    }
}

fn argmax(grid: &[f64], width: usize) -> (usize, usize) {
    let mut best = 0;
    for (i, v) in grid.iter().enumerate() {
        if *v > grid[best] {
            best = i;
        }
    }
    (best / width, best % width)
}

fn grid_csv(grid: &[f64], width: usize) -> String {
    let mut out = String::new();
    for row in grid.chunks(width) {
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// `M(i,j) = sum_k w_k p_k(i,j)` over the rectified maps of the last conv
/// layer.
pub fn cam(model: &ScoringModel, frame: &Frame) -> Result<ActivationMap> {
    if model.arch().kind() != ArchKind::ConvGapLinear {
        return Err(Error::ArchMismatch {
            arch: model.arch().to_string(),
            input: "class activation mapping (needs conv-gap-linear)".into(),
        });
    }
    let (channels, height, width, maps) = model.last_conv_maps(&frame.data)?;
    let (w, bias) = model.output_unit();
    let cells = height * width;
    let mut grid = vec![0.0; cells];
    for (k, wk) in w.iter().enumerate().take(channels) {
        let p = &maps[k * cells..(k + 1) * cells];
        for (m, v) in grid.iter_mut().zip(p) {
            *m += wk * v;
        }
    }
    Ok(ActivationMap {
        frame: frame.id,
        height,
        width,
        grid,
        bias,
    })
}

/// Mean of the members' maps. Because the mean score is linear in each
/// member's score, the mean map plus the mean bias still reproduces the
/// averaged score.
pub fn cam_mean(models: &[ScoringModel], frame: &Frame) -> Result<ActivationMap> {
    let (first, rest) = models.split_first().ok_or(Error::EmptyEnsemble)?;
    let mut acc = cam(first, frame)?;
    for m in rest {
        let next = cam(m, frame)?;
        for (a, v) in acc.grid.iter_mut().zip(&next.grid) {
            *a += v;
        }
        acc.bias += next.bias;
    }
    let t = models.len() as f64;
    for a in &mut acc.grid {
        *a /= t;
    }
    acc.bias /= t;
    Ok(acc)
}

/// Bilinear resize with aligned corners.
pub fn upsample(map: &ActivationMap, height: usize, width: usize) -> Result<SaliencyMap> {
    if height < map.height || width < map.width {
        return Err(Error::InvalidArgument(format!(
            "upsample cannot shrink a {}x{} map to {height}x{width}",
            map.height, map.width
        )));
    }
    let coord = |i: usize, out: usize, inp: usize| -> (usize, usize, f64) {
        if out == 1 || inp == 1 {
            return (0, 0, 0.0);
        }
        let pos = i as f64 * (inp - 1) as f64 / (out - 1) as f64;
        let lo = (pos.floor() as usize).min(inp - 1);
        let hi = (lo + 1).min(inp - 1);
        (lo, hi, pos - lo as f64)
    };
    let mut grid = Vec::with_capacity(height * width);
    for r in 0..height {
        let (r0, r1, fr) = coord(r, height, map.height);
        for c in 0..width {
            let (c0, c1, fc) = coord(c, width, map.width);
            let top = map.get(r0, c0) * (1.0 - fc) + map.get(r0, c1) * fc;
            let bottom = map.get(r1, c0) * (1.0 - fc) + map.get(r1, c1) * fc;
            grid.push(top * (1.0 - fr) + bottom * fr);
        }
    }
    let normalized = normalize(&grid);
    Ok(SaliencyMap {
        frame: map.frame,
        height,
        width,
        grid,
        normalized,
    })
}

fn normalize(grid: &[f64]) -> Vec<f64> {
    let lo = grid.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = grid.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        grid.iter().map(|v| (v - lo) / (hi - lo)).collect()
    } else {
        vec![0.5; grid.len()]
    }
}

/// CAM resized to the frame's own shape.
pub fn saliency(model: &ScoringModel, frame: &Frame, shape: FrameShape) -> Result<SaliencyMap> {
    let FrameShape::Image { height, width } = shape else {
        return Err(Error::ArchMismatch {
            arch: model.arch().to_string(),
            input: shape.to_string(),
        });
    };
    upsample(&cam(model, frame)?, height, width)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::FrameSet;
    use crate::learner::{net_init, Architecture};
    use crate::seed;
    use rand::Rng;

    fn image_model(seed: u64) -> (ScoringModel, FrameSet) {
        let shape = FrameShape::Image { height: 12, width: 10 };
        let arch = Architecture::standard(ArchKind::ConvGapLinear, shape).unwrap();
        let mut rng = seed::rng(seed ^ 0xabc);
        let frames = (0..3)
            .map(|_| (0..120).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        (net_init(&arch, seed), FrameSet::new(shape, frames).unwrap())
    }

    fn map(h: usize, w: usize, grid: Vec<f64>) -> ActivationMap {
        ActivationMap {
            frame: 0,
            height: h,
            width: w,
            grid,
            bias: 0.0,
        }
    }

    #[test]
    fn map_mean_plus_bias_recovers_score() {
        for s in 0..10 {
            let (mut m, fs) = image_model(s);
            let n = m.param_count();
            m.params_mut()[n - 1] = 0.25;
            for f in fs.frames() {
                let a = cam(&m, f).unwrap();
                let phi = m.forward(f).unwrap();
                assert!((a.reconstructed_score() - phi).abs() <= 1e-9 * phi.abs().max(1.0));
            }
        }
    }

    #[test]
    fn mean_map_recovers_the_mean_score() {
        let (a, fs) = image_model(11);
        let (b, _) = image_model(12);
        let f = &fs.frames()[2];
        let map = cam_mean(&[a.clone(), b.clone()], f).unwrap();
        let mean = (a.forward(f).unwrap() + b.forward(f).unwrap()) / 2.0;
        assert!((map.reconstructed_score() - mean).abs() < 1e-12);
    }

    #[test]
    fn zero_head_gives_zero_map() {
        let (mut m, fs) = image_model(3);
        let n = m.param_count();
        let channels = m.arch().feature_dim();
        for p in &mut m.params_mut()[n - 1 - channels..n - 1] {
            *p = 0.0;
        }
        m.params_mut()[n - 1] = 0.7;
        let a = cam(&m, &fs.frames()[0]).unwrap();
        assert!(a.grid.iter().all(|v| *v == 0.0));
        assert_eq!(m.forward(&fs.frames()[0]).unwrap(), 0.7);
    }

    #[test]
    fn single_channel_map_is_the_activation() {
        let shape = FrameShape::Image { height: 8, width: 8 };
        let arch = Architecture::new(ArchKind::ConvGapLinear, shape, vec![1], None).unwrap();
        let mut m = net_init(&arch, 9);
        let n = m.param_count();
        m.params_mut()[n - 2] = 1.0;
        let x: Vec<f64> = (0..64).map(|i| (i % 7) as f64 / 7.0).collect();
        let fs = FrameSet::new(shape, vec![x.clone()]).unwrap();
        let a = cam(&m, &fs.frames()[0]).unwrap();
        let (_, _, _, p) = m.last_conv_maps(&x).unwrap();
        assert_eq!(a.grid, p);
    }

    #[test]
    fn cam_is_linear_in_head_weights() {
        let (m, fs) = image_model(4);
        let n = m.param_count();
        let c = m.arch().feature_dim();
        let with_head = |w: &dyn Fn(usize) -> f64| {
            let mut mm = m.clone();
            for k in 0..c {
                mm.params_mut()[n - 1 - c + k] = w(k);
            }
            cam(&mm, &fs.frames()[1]).unwrap().grid
        };
        let w1 = |k: usize| k as f64 * 0.1 - 0.3;
        let w2 = |k: usize| 1.0 / (k as f64 + 1.0);
        let (a, b) = (1.5, -0.75);
        let mixed = with_head(&|k| a * w1(k) + b * w2(k));
        let (g1, g2) = (with_head(&w1), with_head(&w2));
        for i in 0..mixed.len() {
            assert!((mixed[i] - (a * g1[i] + b * g2[i])).abs() < 1e-12);
        }
    }

    #[test]
    fn rejects_other_architectures() {
        let shape = FrameShape::Image { height: 8, width: 8 };
        let m = net_init(&Architecture::standard(ArchKind::ConvGap, shape).unwrap(), 0);
        let fs = FrameSet::new(shape, vec![vec![0.5; 64]]).unwrap();
        assert!(matches!(cam(&m, &fs.frames()[0]), Err(Error::ArchMismatch { .. })));
    }

    #[test]
    fn one_cell_map_upsamples_to_a_constant() {
        let s = upsample(&map(1, 1, vec![0.3]), 5, 4).unwrap();
        assert!(s.grid.iter().all(|v| *v == 0.3));
        assert!(s.normalized.iter().all(|v| *v == 0.5));
    }

    #[test]
    fn constant_map_stays_constant() {
        let s = upsample(&map(2, 3, vec![1.25; 6]), 4, 6).unwrap();
        assert!(s.grid.iter().all(|v| (*v - 1.25).abs() < 1e-15));
    }

    #[test]
    fn corners_are_preserved() {
        let m = map(2, 2, vec![1.0, 2.0, 3.0, 4.0]);
        let s = upsample(&m, 5, 7).unwrap();
        assert_eq!(s.grid[0], 1.0);
        assert_eq!(s.grid[6], 2.0);
        assert_eq!(s.grid[28], 3.0);
        assert_eq!(s.grid[34], 4.0);
        // centre of a 2x2 map is the average of all four
        assert!((s.grid[2 * 7 + 3] - 2.5).abs() < 1e-12);
        assert_eq!(s.normalized[0], 0.0);
        assert_eq!(s.normalized[34], 1.0);
    }

    #[test]
    fn shrinking_is_rejected() {
        assert!(upsample(&map(2, 2, vec![0.0; 4]), 1, 4).is_err());
    }

    #[test]
    fn pgm_and_csv_exports() {
        let s = upsample(&map(1, 2, vec![0.0, 1.0]), 2, 3).unwrap();
        let pgm = s.to_pgm();
        assert!(pgm.starts_with(b"P5\n3 2\n255\n"));
        assert_eq!(&pgm[pgm.len() - 3..], &[0, 128, 255]);
        assert_eq!(s.to_csv().lines().next().unwrap(), "0,0.5,1");
    }
}
