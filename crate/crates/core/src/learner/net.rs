//! Forward and backward passes over the flat parameter vector.
//!
//! Parameters are laid out layer by layer, weights then biases. They are held
//! at `f32` precision (every update is rounded) while all arithmetic runs in
//! `f64`, so checkpoints round-trip bit-exactly.

use rand::Rng as _;
use rayon::prelude::*;

use super::arch::{Architecture, Layer, KERNEL};
use crate::dataset::{Frame, FrameSet};
use crate::error::{Error, Result};
use crate::scores::{Provenance, ScoreVector};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub struct ScoringModel {
    arch: Architecture,
    layers: Vec<Layer>,
    params: Vec<f64>,
    seed: u64,
}

/// Parameter-shaped gradient.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradient(pub Vec<f64>);

impl Gradient {
    pub fn zeros(n: usize) -> Self {
        Gradient(vec![0.0; n])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().fold(0.0, |m, g| m.max(g.abs()))
    }
}

pub(crate) fn round_f32(v: f64) -> f64 {
    v as f32 as f64
}

/// Activations recorded during a forward pass: `acts[0]` is the input,
/// `acts[i + 1]` the output of layer `i`.
pub(crate) struct Trace {
    pub acts: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> f64 {
        self.acts.last().expect("nonempty trace")[0]
    }
}

/// He-style scaled uniform draw in `±sqrt(6 / fan_in)`, zero biases.
pub fn net_init(arch: &Architecture, seed: u64) -> ScoringModel {
    let layers = arch.layers();
    let mut rng = seed::rng(seed);
    let mut params = Vec::with_capacity(arch.param_count());
    for l in &layers {
        if l.param_count() == 0 {
            continue;
        }
        let bound = (6.0 / l.fan_in() as f64).sqrt();
        for _ in 0..l.weight_count() {
            params.push(round_f32(rng.random_range(-bound..bound)));
        }
        params.extend(std::iter::repeat_n(0.0, l.bias_count()));
    }
    ScoringModel {
        arch: arch.clone(),
        layers,
        params,
        seed,
    }
}

impl ScoringModel {
    /// Rebuilds a model from stored parameters.
    pub fn from_params(arch: Architecture, params: Vec<f64>, seed: u64) -> Result<Self> {
        if params.len() != arch.param_count() {
            return Err(Error::DimensionMismatch {
                expected: arch.param_count(),
                found: params.len(),
            });
        }
        if params.iter().any(|p| !p.is_finite()) {
            return Err(Error::InvalidArgument("non-finite parameter".into()));
        }
        let layers = arch.layers();
        Ok(Self {
            arch,
            layers,
            params,
            seed,
        })
    }

    pub fn arch(&self) -> &Architecture {
        &self.arch
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    /// Direct parameter access; values written here are not rounded.
    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    /// `(weights, biases)` of each parametrized layer, in declaration order.
    pub fn blocks(&self) -> Vec<(&[f64], &[f64])> {
        let mut out = Vec::new();
        let mut off = 0;
        for l in &self.layers {
            if l.param_count() == 0 {
                continue;
            }
            let w = &self.params[off..off + l.weight_count()];
            let b = &self.params[off + l.weight_count()..off + l.param_count()];
            out.push((w, b));
            off += l.param_count();
        }
        out
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.arch.input_len() {
            return Err(Error::DimensionMismatch {
                expected: self.arch.input_len(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn forward(&self, frame: &Frame) -> Result<f64> {
        self.forward_slice(&frame.data)
    }

    pub fn forward_slice(&self, x: &[f64]) -> Result<f64> {
        self.check_input(x)?;
        Ok(self.trace(x).output())
    }

    /// Scores every frame. Frames are independent, so evaluation order does
    /// not affect the result.
    pub fn score_frames(&self, fs: &FrameSet) -> Result<ScoreVector> {
        if fs.shape() != self.arch.input() {
            return Err(Error::ArchMismatch {
                arch: self.arch.to_string(),
                input: fs.shape().to_string(),
            });
        }
        let scores = fs
            .frames()
            .par_iter()
            .map(|f| self.trace(&f.data).output())
            .collect();
        ScoreVector::new(scores, Provenance::Learner)
    }

    /// ψ(x): the backbone's output (pooled activations for conv kinds).
    pub fn features(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let t = self.trace(x);
        let head_layers = if self.arch.head_hidden().is_some() { 2 } else { 1 };
        Ok(t.acts[t.acts.len() - 1 - head_layers].clone())
    }

    /// Rectified activations of the last convolution, `(channels, h, w, data)`
    /// with data laid out channel-major.
    pub fn last_conv_maps(&self, x: &[f64]) -> Result<(usize, usize, usize, Vec<f64>)> {
        self.check_input(x)?;
        let idx = self
            .layers
            .iter()
            .rposition(|l| matches!(l, Layer::Conv { .. }))
            .ok_or_else(|| Error::ArchMismatch {
                arch: self.arch.to_string(),
                input: "a convolutional activation map request".into(),
            })?;
        let Layer::Conv { out_ch, out_h, out_w, .. } = self.layers[idx] else {
            unreachable!()
        };
        let mut t = self.trace(x);
        Ok((out_ch, out_h, out_w, std::mem::take(&mut t.acts[idx + 1])))
    }

    /// Weights and bias of the output unit.
    pub fn output_unit(&self) -> (&[f64], f64) {
        let (w, b) = *self.blocks().last().expect("output layer");
        (w, b[0])
    }

    pub(crate) fn trace(&self, x: &[f64]) -> Trace {
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.to_vec());
        let mut off = 0;
        for l in &self.layers {
            let p = &self.params[off..off + l.param_count()];
            let y = layer_forward(l, p, acts.last().expect("input"));
            acts.push(y);
            off += l.param_count();
        }
        Trace { acts }
    }

    /// Adds `scale * dφ/dθ` at the traced point into `grad`.
    pub(crate) fn backward(&self, trace: &Trace, scale: f64, grad: &mut [f64]) {
        let mut dy = vec![scale];
        let mut off = self.params.len();
        for (i, l) in self.layers.iter().enumerate().rev() {
            off -= l.param_count();
            let p = &self.params[off..off + l.param_count()];
            let g = &mut grad[off..off + l.param_count()];
            dy = layer_backward(l, p, &trace.acts[i], &trace.acts[i + 1], &dy, g, i > 0);
        }
    }

    /// Gradient of the batch-mean absolute loss. The subgradient at both the
    /// loss kink and the rectifier kink is 0.
    pub fn gradient(&self, batch: &[(&[f64], f64)]) -> Result<Gradient> {
        if batch.is_empty() {
            return Err(Error::InvalidArgument("empty batch".into()));
        }
        for (x, _) in batch {
            self.check_input(x)?;
        }
        Ok(self.batch_gradient(batch).0)
    }

    /// Gradient plus the batch-mean loss. Per-sample contributions are
    /// summed in fixed-size chunks and then in chunk order, so the result is
    /// independent of thread scheduling.
    pub(crate) fn batch_gradient(&self, batch: &[(&[f64], f64)]) -> (Gradient, f64) {
        const CHUNK: usize = 16;
        let n = self.params.len();
        let partial: Vec<(Vec<f64>, f64)> = batch
            .par_chunks(CHUNK)
            .map(|chunk| {
                let mut g = vec![0.0; n];
                let mut loss = 0.0;
                for (x, y) in chunk {
                    let t = self.trace(x);
                    let r = t.output() - y;
                    loss += r.abs();
                    let sign = if r > 0.0 {
                        1.0
                    } else if r < 0.0 {
                        -1.0
                    } else {
                        0.0
                    };
                    if sign != 0.0 {
                        self.backward(&t, sign, &mut g);
                    }
                }
                (g, loss)
            })
            .collect();
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        for (g, l) in partial {
            for (a, b) in grad.iter_mut().zip(g) {
                *a += b;
            }
            loss += l;
        }
        let m = batch.len() as f64;
        grad.iter_mut().for_each(|g| *g /= m);
        (Gradient(grad), loss / m)
    }

    /// θ ← θ − lr·g, stored at f32 precision.
    pub fn sgd_step(&mut self, grad: &Gradient, lr: f64) {
        assert_eq!(grad.0.len(), self.params.len(), "gradient shape");
        if lr == 0.0 {
            return;
        }
        for (p, g) in self.params.iter_mut().zip(&grad.0) {
            *p = round_f32(*p - lr * g);
        }
    }
}

/// |score − y|.
pub fn loss(score: f64, y: f64) -> f64 {
    (score - y).abs()
}

fn layer_forward(l: &Layer, p: &[f64], x: &[f64]) -> Vec<f64> {
    match *l {
        Layer::Dense { inp, out, relu } => {
            let (w, b) = p.split_at(inp * out);
            (0..out)
                .map(|o| {
                    let row = &w[o * inp..(o + 1) * inp];
                    let z = b[o] + row.iter().zip(x).map(|(a, v)| a * v).sum::<f64>();
                    if relu {
                        z.max(0.0)
                    } else {
                        z
                    }
                })
                .collect()
        }
        Layer::Conv {
            in_ch,
            out_ch,
            in_h,
            in_w,
            out_h,
            out_w,
        } => {
            let (w, b) = p.split_at(out_ch * in_ch * KERNEL * KERNEL);
            let mut y = vec![0.0; out_ch * out_h * out_w];
            for oc in 0..out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let mut z = b[oc];
                        for ic in 0..in_ch {
                            let kbase = (oc * in_ch + ic) * KERNEL * KERNEL;
                            let xbase = ic * in_h * in_w;
                            for ky in 0..KERNEL {
                                let iy = (2 * oy + ky) as isize - 1;
                                if iy < 0 || iy >= in_h as isize {
                                    continue;
                                }
                                for kx in 0..KERNEL {
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if ix < 0 || ix >= in_w as isize {
                                        continue;
                                    }
                                    z += w[kbase + ky * KERNEL + kx]
                                        * x[xbase + iy as usize * in_w + ix as usize];
                                }
                            }
                        }
                        y[(oc * out_h + oy) * out_w + ox] = z.max(0.0);
                    }
                }
            }
            y
        }
        Layer::Gap { ch, h, w } => {
            let cells = (h * w) as f64;
            (0..ch)
                .map(|c| x[c * h * w..(c + 1) * h * w].iter().sum::<f64>() / cells)
                .collect()
        }
    }
}

/// Accumulates parameter gradients into `g` and returns dL/dx (empty when
/// `need_input_grad` is false).
fn layer_backward(
    l: &Layer,
    p: &[f64],
    x: &[f64],
    y: &[f64],
    dy: &[f64],
    g: &mut [f64],
    need_input_grad: bool,
) -> Vec<f64> {
    match *l {
        Layer::Dense { inp, out, relu } => {
            let (w, _) = p.split_at(inp * out);
            let (gw, gb) = g.split_at_mut(inp * out);
            let mut dx = if need_input_grad { vec![0.0; inp] } else { Vec::new() };
            for o in 0..out {
                let dz = if relu && y[o] <= 0.0 { 0.0 } else { dy[o] };
                if dz == 0.0 {
                    continue;
                }
                gb[o] += dz;
                let row = &w[o * inp..(o + 1) * inp];
                let grow = &mut gw[o * inp..(o + 1) * inp];
                for i in 0..inp {
                    grow[i] += dz * x[i];
                }
                if need_input_grad {
                    for i in 0..inp {
                        dx[i] += dz * row[i];
                    }
                }
            }
            dx
        }
        Layer::Conv {
            in_ch,
            out_ch,
            in_h,
            in_w,
            out_h,
            out_w,
        } => {
            let nw = out_ch * in_ch * KERNEL * KERNEL;
            let (w, _) = p.split_at(nw);
            let (gw, gb) = g.split_at_mut(nw);
            let mut dx = if need_input_grad {
                vec![0.0; in_ch * in_h * in_w]
            } else {
                Vec::new()
            };
            for oc in 0..out_ch {
                for oy in 0..out_h {
                    for ox in 0..out_w {
                        let o = (oc * out_h + oy) * out_w + ox;
                        if y[o] <= 0.0 || dy[o] == 0.0 {
                            continue;
                        }
                        let dz = dy[o];
                        gb[oc] += dz;
                        for ic in 0..in_ch {
                            let kbase = (oc * in_ch + ic) * KERNEL * KERNEL;
                            let xbase = ic * in_h * in_w;
                            for ky in 0..KERNEL {
                                let iy = (2 * oy + ky) as isize - 1;
                                if iy < 0 || iy >= in_h as isize {
                                    continue;
                                }
                                for kx in 0..KERNEL {
                                    let ix = (2 * ox + kx) as isize - 1;
                                    if ix < 0 || ix >= in_w as isize {
                                        continue;
                                    }
                                    let xi = xbase + iy as usize * in_w + ix as usize;
                                    gw[kbase + ky * KERNEL + kx] += dz * x[xi];
                                    if need_input_grad {
                                        dx[xi] += dz * w[kbase + ky * KERNEL + kx];
                                    }
                                }
                            }
                        }
                    }
                }
            }
            dx
        }
        Layer::Gap { ch, h, w } => {
            let cells = (h * w) as f64;
            let mut dx = vec![0.0; ch * h * w];
            for c in 0..ch {
                let v = dy[c] / cells;
                dx[c * h * w..(c + 1) * h * w].iter_mut().for_each(|d| *d = v);
            }
            dx
        }
    }
}
