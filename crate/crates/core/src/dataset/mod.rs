//! Frame collections, file ingestion and synthetic scenes.
//!
//! A [`FrameSet`] is the ordered universe of frames a run scores. Frame ids
//! are the temporal positions `0..K`; the human-feedback loop relies on that
//! order when it expands labels to adjacent frames.

mod pgm;
mod synth;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;

pub use pgm::{decode_pgm, encode_pgm, read_pgm, write_pgm, GrayImage};
pub use synth::{
    render_scene_frame, synth_image_scene, synth_vector_scene, BoundingBox, ImageScene,
    DISC_INTENSITY, SCENE_BACKGROUND, SCENE_NOISE_SIGMA, SQUARE_INTENSITY,
};

/// Shape shared by every frame of a set.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum FrameShape {
    Vector { dim: usize },
    Image { height: usize, width: usize },
}

impl FrameShape {
    pub fn len(&self) -> usize {
        match *self {
            FrameShape::Vector { dim } => dim,
            FrameShape::Image { height, width } => height * width,
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_image(&self) -> bool {
        matches!(self, FrameShape::Image { .. })
    }
}

impl fmt::Display for FrameShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FrameShape::Vector { dim } => write!(f, "vector[{dim}]"),
            FrameShape::Image { height, width } => write!(f, "image[{height}x{width}]"),
        }
    }
}

/// One frame. Image payloads are stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub id: usize,
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameSet {
    shape: FrameShape,
    frames: Vec<Frame>,
}

impl FrameSet {
    /// Builds a set from payloads in temporal order; ids are assigned `0..K`.
    pub fn new(shape: FrameShape, payloads: Vec<Vec<f64>>) -> Result<Self> {
        if payloads.is_empty() {
            return Err(Error::NoFrames);
        }
        let mut frames = Vec::with_capacity(payloads.len());
        for (id, data) in payloads.into_iter().enumerate() {
            if data.len() != shape.len() {
                return Err(Error::ShapeMismatch {
                    frame: id,
                    expected: shape.to_string(),
                    found: format!("{} values", data.len()),
                });
            }
            if data.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { frame: id });
            }
            if shape.is_image() {
                if let Some(&value) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
                    return Err(Error::PixelRange { frame: id, value });
                }
            }
            frames.push(Frame { id, data });
        }
        Ok(Self { shape, frames })
    }

    pub fn shape(&self) -> FrameShape {
        self.shape
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn frame(&self, id: usize) -> Option<&Frame> {
        self.frames.get(id)
    }

    /// Feature extraction for the initial detectors: identity for vectors,
    /// row-major flattening for images.
    pub fn flatten(&self) -> Matrix {
        let cols = self.shape.len();
        let mut data = Vec::with_capacity(self.len() * cols);
        for f in &self.frames {
            data.extend_from_slice(&f.data);
        }
        Matrix::new(self.len(), cols, data)
    }

    /// Subset of frames, re-indexed `0..ids.len()` in the given order.
    pub fn select(&self, ids: &[usize]) -> Result<Self> {
        let payloads = ids
            .iter()
            .map(|&i| {
                self.frame(i)
                    .map(|f| f.data.clone())
                    .ok_or_else(|| Error::InvalidArgument(format!("frame {i} out of range")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(self.shape, payloads)
    }
}

/// Frame-level ground truth; `true` marks an anomalous frame. Only the
/// evaluation code and the simulated expert read it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroundTruth {
    labels: Vec<bool>,
}

impl GroundTruth {
    pub fn new(labels: Vec<bool>) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::NoFrames);
        }
        Ok(Self { labels })
    }

    pub fn labels(&self) -> &[bool] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn is_anomaly(&self, id: usize) -> bool {
        self.labels[id]
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|&&l| l).count()
    }

    pub fn has_both_classes(&self) -> bool {
        let p = self.positives();
        p > 0 && p < self.labels.len()
    }

    pub fn select(&self, ids: &[usize]) -> Self {
        Self {
            labels: ids.iter().map(|&i| self.labels[i]).collect(),
        }
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Reads a headerless numeric CSV, one frame per row.
pub fn load_feature_csv(path: impl AsRef<Path>) -> Result<FrameSet> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut width = None;
    for (line_no, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let row = line_no + 1;
        let cells: Vec<&str> = line.split(',').map(str::trim).collect();
        let expected = *width.get_or_insert(cells.len());
        if cells.len() != expected {
            return Err(Error::RaggedRow {
                path: path.to_path_buf(),
                row,
                expected,
                found: cells.len(),
            });
        }
        let values = cells
            .iter()
            .enumerate()
            .map(|(c, cell)| {
                cell.parse::<f64>().map_err(|_| Error::ParseCell {
                    path: path.to_path_buf(),
                    row,
                    column: c + 1,
                    cell: cell.to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(values);
    }
    let dim = width.ok_or(Error::NoFrames)?;
    FrameSet::new(FrameShape::Vector { dim }, rows)
}

pub fn write_feature_csv(path: impl AsRef<Path>, fs: &FrameSet) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for f in fs.frames() {
        let cells: Vec<String> = f.data.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

/// Reads a manifest listing one PGM path per line (relative to the manifest's
/// directory) in temporal order.
pub fn load_image_frames(manifest: impl AsRef<Path>) -> Result<FrameSet> {
    let manifest = manifest.as_ref();
    let text = read_text(manifest)?;
    let base = manifest.parent().map(Path::to_path_buf).unwrap_or_default();
    let mut shape: Option<(usize, usize)> = None;
    let mut payloads = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let file: PathBuf = base.join(line);
        let img = read_pgm(&file)?;
        match shape {
            None => shape = Some((img.height, img.width)),
            Some((h, w)) if (h, w) != (img.height, img.width) => {
                return Err(Error::ShapeMismatch {
                    frame: payloads.len(),
                    expected: FrameShape::Image { height: h, width: w }.to_string(),
                    found: format!("image[{}x{}] ({})", img.height, img.width, file.display()),
                });
            }
            Some(_) => {}
        }
        payloads.push(img.to_unit());
    }
    let (height, width) = shape.ok_or(Error::NoFrames)?;
    FrameSet::new(FrameShape::Image { height, width }, payloads)
}

/// Writes every frame of an image set as `frame_XXXXX.pgm` plus a manifest.
pub fn write_image_frames(dir: impl AsRef<Path>, fs: &FrameSet) -> Result<PathBuf> {
    let dir = dir.as_ref();
    let FrameShape::Image { height, width } = fs.shape() else {
        return Err(Error::InvalidArgument("not an image frame set".into()));
    };
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::new();
    for f in fs.frames() {
        let name = format!("frame_{:05}.pgm", f.id);
        write_pgm(dir.join(&name), &GrayImage::from_unit(height, width, &f.data))?;
        manifest.push_str(&name);
        manifest.push('\n');
    }
    let path = dir.join("manifest.txt");
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// One `0`/`1` per line, aligned to frame order.
pub fn load_ground_truth(path: impl AsRef<Path>) -> Result<GroundTruth> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let labels = text
        .lines()
        .map(str::trim)
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| match l {
            "0" => Ok(false),
            "1" => Ok(true),
            other => Err(Error::format(
                path,
                format!("line {}: expected 0 or 1, found {other:?}", i + 1),
            )),
        })
        .collect::<Result<Vec<_>>>()?;
    GroundTruth::new(labels)
}

pub fn write_ground_truth(path: impl AsRef<Path>, gt: &GroundTruth) -> Result<()> {
    let path = path.as_ref();
    let out: String = gt
        .labels()
        .iter()
        .map(|&l| if l { "1\n" } else { "0\n" })
        .collect();
    fs::write(path, out).map_err(|e| Error::io(path, e))
}
