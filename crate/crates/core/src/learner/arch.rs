use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dataset::FrameShape;
use crate::error::{Error, Result};

/// Hidden width of the scoring head.
pub const HEAD_HIDDEN: usize = 100;
pub const MLP_WIDTHS: [usize; 2] = [64, 32];
pub const CONV_CHANNELS: [usize; 2] = [8, 16];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ArchKind {
    Mlp,
    ConvGap,
    /// Conv trunk with a single linear unit on the pooled features, for
    /// which class activation maps decompose the score exactly.
    ConvGapLinear,
}

impl ArchKind {
    pub fn is_conv(self) -> bool {
        !matches!(self, ArchKind::Mlp)
    }

    pub(crate) fn code(self) -> u8 {
        match self {
            ArchKind::Mlp => 0,
            ArchKind::ConvGap => 1,
            ArchKind::ConvGapLinear => 2,
        }
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ArchKind::Mlp,
            1 => ArchKind::ConvGap,
            2 => ArchKind::ConvGapLinear,
            _ => return None,
        })
    }
}

impl fmt::Display for ArchKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ArchKind::Mlp => "mlp",
            ArchKind::ConvGap => "conv-gap",
            ArchKind::ConvGapLinear => "conv-gap-linear",
        })
    }
}

impl FromStr for ArchKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mlp" => Ok(ArchKind::Mlp),
            "conv-gap" => Ok(ArchKind::ConvGap),
            "conv-gap-linear" => Ok(ArchKind::ConvGapLinear),
            other => Err(Error::InvalidArgument(format!("unknown architecture {other:?}"))),
        }
    }
}

/// One differentiable stage. Convolutions are 3×3, stride 2, zero padding 1,
/// followed by a rectifier.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Layer {
    Dense {
        inp: usize,
        out: usize,
        relu: bool,
    },
    Conv {
        in_ch: usize,
        out_ch: usize,
        in_h: usize,
        in_w: usize,
        out_h: usize,
        out_w: usize,
    },
    Gap {
        ch: usize,
        h: usize,
        w: usize,
    },
}

pub(crate) const KERNEL: usize = 3;

impl Layer {
    pub fn weight_count(&self) -> usize {
        match *self {
            Layer::Dense { inp, out, .. } => inp * out,
            Layer::Conv { in_ch, out_ch, .. } => out_ch * in_ch * KERNEL * KERNEL,
            Layer::Gap { .. } => 0,
        }
    }

    pub fn bias_count(&self) -> usize {
        match *self {
            Layer::Dense { out, .. } => out,
            Layer::Conv { out_ch, .. } => out_ch,
            Layer::Gap { .. } => 0,
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight_count() + self.bias_count()
    }

    pub fn fan_in(&self) -> usize {
        match *self {
            Layer::Dense { inp, .. } => inp,
            Layer::Conv { in_ch, .. } => in_ch * KERNEL * KERNEL,
            Layer::Gap { .. } => 0,
        }
    }
}

fn conv_out(n: usize) -> usize {
    (n + 2 - KERNEL) / 2 + 1
}

/// Network layout: backbone ψ followed by head η.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Architecture {
    kind: ArchKind,
    input: FrameShape,
    /// Hidden widths (mlp) or channel counts (conv).
    backbone: Vec<usize>,
    /// Rectified hidden units of the head; `None` for a single linear unit.
    head_hidden: Option<usize>,
}

impl Architecture {
    pub fn new(
        kind: ArchKind,
        input: FrameShape,
        backbone: Vec<usize>,
        head_hidden: Option<usize>,
    ) -> Result<Self> {
        let mismatch = || Error::ArchMismatch {
            arch: kind.to_string(),
            input: input.to_string(),
        };
        match (kind, input) {
            (ArchKind::Mlp, FrameShape::Vector { dim }) if dim > 0 => {}
            (ArchKind::Mlp, FrameShape::Image { .. }) => {}
            (ArchKind::ConvGap | ArchKind::ConvGapLinear, FrameShape::Image { height, width })
                if height > 0 && width > 0 => {}
            _ => return Err(mismatch()),
        }
        let needs_trunk = kind != ArchKind::Mlp;
        if (needs_trunk && backbone.is_empty()) || backbone.contains(&0) || head_hidden == Some(0) {
            return Err(Error::InvalidArgument("layer widths must be positive".into()));
        }
        if kind == ArchKind::ConvGapLinear && head_hidden.is_some() {
            return Err(Error::InvalidArgument("conv-gap-linear has no hidden head layer".into()));
        }
        Ok(Self {
            kind,
            input,
            backbone,
            head_hidden,
        })
    }

    /// Library defaults: D→64→32 for vectors, two conv layers (8, 16
    /// channels) for images, head 100 → 1 (none for conv-gap-linear).
    pub fn standard(kind: ArchKind, input: FrameShape) -> Result<Self> {
        match kind {
            ArchKind::Mlp => Self::new(kind, input, MLP_WIDTHS.to_vec(), Some(HEAD_HIDDEN)),
            ArchKind::ConvGap => Self::new(kind, input, CONV_CHANNELS.to_vec(), Some(HEAD_HIDDEN)),
            ArchKind::ConvGapLinear => Self::new(kind, input, CONV_CHANNELS.to_vec(), None),
        }
    }

    /// mlp for vector frames, conv-gap for images.
    pub fn default_for(input: FrameShape) -> Self {
        let kind = if input.is_image() {
            ArchKind::ConvGap
        } else {
            ArchKind::Mlp
        };
        Self::standard(kind, input).expect("standard architecture")
    }

    pub fn kind(&self) -> ArchKind {
        self.kind
    }

    pub fn input(&self) -> FrameShape {
        self.input
    }

    pub fn backbone(&self) -> &[usize] {
        &self.backbone
    }

    pub fn head_hidden(&self) -> Option<usize> {
        self.head_hidden
    }

    pub fn input_len(&self) -> usize {
        self.input.len()
    }

    pub(crate) fn layers(&self) -> Vec<Layer> {
        let mut layers = Vec::new();
        let features = match (self.kind, self.input) {
            (ArchKind::Mlp, input) => {
                let mut inp = input.len();
                for &out in &self.backbone {
                    layers.push(Layer::Dense { inp, out, relu: true });
                    inp = out;
                }
                inp
            }
            (_, FrameShape::Image { height, width }) => {
                let (mut in_ch, mut h, mut w) = (1, height, width);
                for &out_ch in &self.backbone {
                    let (out_h, out_w) = (conv_out(h), conv_out(w));
                    layers.push(Layer::Conv {
                        in_ch,
                        out_ch,
                        in_h: h,
                        in_w: w,
                        out_h,
                        out_w,
                    });
                    (in_ch, h, w) = (out_ch, out_h, out_w);
                }
                layers.push(Layer::Gap { ch: in_ch, h, w });
                in_ch
            }
            _ => unreachable!("validated in Architecture::new"),
        };
        match self.head_hidden {
            Some(hidden) => {
                layers.push(Layer::Dense {
                    inp: features,
                    out: hidden,
                    relu: true,
                });
                layers.push(Layer::Dense {
                    inp: hidden,
                    out: 1,
                    relu: false,
                });
            }
            None => layers.push(Layer::Dense {
                inp: features,
                out: 1,
                relu: false,
            }),
        }
        layers
    }

    /// Dimension of ψ's output.
    pub fn feature_dim(&self) -> usize {
        self.backbone.last().copied().unwrap_or_else(|| self.input.len())
    }

    pub fn param_count(&self) -> usize {
        self.layers().iter().map(Layer::param_count).sum()
    }
}

impl fmt::Display for Architecture {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}[{}; {:?}", self.kind, self.input, self.backbone)?;
        match self.head_hidden {
            Some(h) => write!(f, " -> {h} -> 1]"),
            None => write!(f, " -> 1]"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn conv_geometry() {
        let a = Architecture::standard(ArchKind::ConvGapLinear, FrameShape::Image { height: 32, width: 32 }).unwrap();
        let layers = a.layers();
        assert!(matches!(layers[0], Layer::Conv { out_h: 16, out_w: 16, out_ch: 8, .. }));
        assert!(matches!(layers[1], Layer::Conv { out_h: 8, out_w: 8, out_ch: 16, .. }));
        assert!(matches!(layers[2], Layer::Gap { ch: 16, h: 8, w: 8 }));
        assert!(matches!(layers[3], Layer::Dense { inp: 16, out: 1, relu: false }));
        assert_eq!(a.param_count(), 8 * 9 + 8 + 16 * 8 * 9 + 16 + 16 + 1);
    }

    #[test]
    fn mlp_layout() {
        let a = Architecture::standard(ArchKind::Mlp, FrameShape::Vector { dim: 16 }).unwrap();
        assert_eq!(a.feature_dim(), 32);
        assert_eq!(a.param_count(), 16 * 64 + 64 + 64 * 32 + 32 + 32 * 100 + 100 + 100 + 1);
    }

    #[test]
    fn conv_requires_images() {
        assert!(matches!(
            Architecture::standard(ArchKind::ConvGap, FrameShape::Vector { dim: 4 }),
            Err(Error::ArchMismatch { .. })
        ));
        assert_eq!("conv-gap-linear".parse::<ArchKind>().unwrap(), ArchKind::ConvGapLinear);
        assert!("resnet".parse::<ArchKind>().is_err());
    }
}
