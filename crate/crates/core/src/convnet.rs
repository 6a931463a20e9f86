//! A small encoder-decoder convolutional network: forward and backward
//! passes, momentum SGD training on per-pixel binary cross-entropy, and
//! weight files.
//!
//! Only what the collision heuristic needs is supported: 3×3 same-padded
//! convolutions, 2×2 max-pooling, 2× nearest upsampling, U-style skip
//! concatenation, ReLU and a sigmoid output. Convolutions run as im2col
//! followed by a dense matrix product.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

/// One channel per 45° heading.
pub const OUTPUT_CHANNELS: usize = 8;

#[derive(Debug, Error)]
pub enum ConvError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("parameter count {actual} does not match spec ({expected})")]
    ParamCount { expected: usize, actual: usize },
    #[error("weights were trained for a different network (spec hash {found}, expected {expected})")]
    SpecMismatch { expected: String, found: String },
    #[error("training diverged at epoch {epoch}, batch {batch}: loss {loss}")]
    Diverged { epoch: usize, batch: usize, loss: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("malformed weights file: {0}")]
    Malformed(String),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

/// Dense `(batch, channels, rows, cols)` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor4 {
    dims: [usize; 4],
    data: Vec<f64>,
}

impl Tensor4 {
    pub fn new(dims: [usize; 4], data: Vec<f64>) -> Result<Self, ConvError> {
        if dims.contains(&0) {
            return Err(ConvError::Shape(format!("dims must be positive, got {dims:?}")));
        }
        if data.len() != dims.iter().product::<usize>() {
            return Err(ConvError::Shape(format!("{} values for dims {dims:?}", data.len())));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(ConvError::Shape("tensor values must be finite".into()));
        }
        Ok(Self { dims, data })
    }

    pub fn zeros(dims: [usize; 4]) -> Self {
        Self { dims, data: vec![0.0; dims.iter().product()] }
    }

    pub fn dims(&self) -> [usize; 4] {
        self.dims
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    fn sample_len(&self) -> usize {
        self.dims[1] * self.dims[2] * self.dims[3]
    }

    fn sample(&self, b: usize) -> &[f64] {
        let n = self.sample_len();
        &self.data[b * n..(b + 1) * n]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum NetLayer {
    /// 3×3, stride 1, zero padding 1.
    Conv { in_ch: usize, out_ch: usize },
    Relu,
    Sigmoid,
    /// 2×2 max-pool.
    Downsample,
    /// 2× nearest-neighbour.
    Upsample,
    /// Remember the current activation for a later `ConcatSkip`.
    SaveSkip,
    /// Concatenate `[current, most recently saved]` along channels.
    ConcatSkip,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub layers: Vec<NetLayer>,
}

impl NetworkSpec {
    /// Depth-2 U shape with widths 8 → 16 → 32 (about 30k parameters).
    pub fn unet_small() -> Self {
        use NetLayer::*;
        let block = |i, o| [Conv { in_ch: i, out_ch: o }, Relu, Conv { in_ch: o, out_ch: o }, Relu];
        let mut layers = Vec::new();
        layers.extend(block(1, 8));
        layers.extend([SaveSkip, Downsample]);
        layers.extend(block(8, 16));
        layers.extend([SaveSkip, Downsample]);
        layers.extend(block(16, 32));
        layers.extend([Upsample, ConcatSkip]);
        layers.extend(block(48, 16));
        layers.extend([Upsample, ConcatSkip]);
        layers.extend(block(24, 8));
        layers.extend([Conv { in_ch: 8, out_ch: OUTPUT_CHANNELS }, Sigmoid]);
        Self { input_channels: 1, layers }
    }

    /// Checks channel bookkeeping and returns the spatial divisor inputs
    /// must respect.
    pub fn validate(&self) -> Result<usize, ConvError> {
        let bad = |m: String| Err(ConvError::InvalidSpec(m));
        if self.input_channels == 0 {
            return bad("input_channels must be positive".into());
        }
        let mut ch = self.input_channels;
        let mut level = 0usize;
        let mut deepest = 0usize;
        let mut stack: Vec<(usize, usize)> = Vec::new();
        for (i, layer) in self.layers.iter().enumerate() {
            match *layer {
                NetLayer::Conv { in_ch, out_ch } => {
                    if in_ch != ch {
                        return bad(format!("layer {i}: conv expects {in_ch} channels, receives {ch}"));
                    }
                    if out_ch == 0 {
                        return bad(format!("layer {i}: conv with zero outputs"));
                    }
                    ch = out_ch;
                }
                NetLayer::Downsample => {
                    level += 1;
                    deepest = deepest.max(level);
                }
                NetLayer::Upsample => {
                    if level == 0 {
                        return bad(format!("layer {i}: upsample above input resolution"));
                    }
                    level -= 1;
                }
                NetLayer::SaveSkip => stack.push((ch, level)),
                NetLayer::ConcatSkip => match stack.pop() {
                    Some((skip_ch, skip_level)) if skip_level == level => ch += skip_ch,
                    Some(_) => return bad(format!("layer {i}: skip junction resolution mismatch")),
                    None => return bad(format!("layer {i}: concat without a saved skip")),
                },
                NetLayer::Relu | NetLayer::Sigmoid => {}
            }
        }
        if level != 0 {
            return bad("output resolution differs from input".into());
        }
        if !stack.is_empty() {
            return bad("unused skip connection".into());
        }
        if ch != OUTPUT_CHANNELS {
            return bad(format!("network emits {ch} channels, expected {OUTPUT_CHANNELS}"));
        }
        if self.layers.last() != Some(&NetLayer::Sigmoid) {
            return bad("last layer must be a sigmoid".into());
        }
        Ok(1 << deepest)
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| match *l {
                NetLayer::Conv { in_ch, out_ch } => out_ch * in_ch * 9 + out_ch,
                _ => 0,
            })
            .sum()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("spec serializes");
        hex::encode(Sha256::digest(json.as_bytes()))
    }
}

/// Flattened parameters as persisted: per conv layer, weights
/// `[out][in][3][3]` then biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    pub spec: NetworkSpec,
    #[serde(skip)]
    pub values: Vec<f32>,
    pub metadata: serde_json::Value,
}

#[derive(Debug, Serialize, Deserialize)]
struct WeightsManifest {
    spec: NetworkSpec,
    spec_hash: String,
    parameter_count: usize,
    metadata: serde_json::Value,
}

impl ModelWeights {
    pub fn save(&self, stem: impl AsRef<Path>) -> Result<(), ConvError> {
        let (json_path, payload_path) = weight_paths(stem.as_ref());
        let manifest = WeightsManifest {
            spec: self.spec.clone(),
            spec_hash: self.spec.hash(),
            parameter_count: self.values.len(),
            metadata: self.metadata.clone(),
        };
        let json = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        fs::write(&json_path, json).map_err(|source| ConvError::Io { path: json_path.clone(), source })?;
        let bytes: Vec<u8> = self.values.iter().flat_map(|v| v.to_le_bytes()).collect();
        fs::write(&payload_path, bytes).map_err(|source| ConvError::Io { path: payload_path.clone(), source })
    }

    pub fn load(stem: impl AsRef<Path>) -> Result<Self, ConvError> {
        let (json_path, payload_path) = weight_paths(stem.as_ref());
        let text = fs::read_to_string(&json_path).map_err(|source| ConvError::Io { path: json_path.clone(), source })?;
        let manifest: WeightsManifest = serde_json::from_str(&text).map_err(|e| ConvError::Malformed(e.to_string()))?;
        let recomputed = manifest.spec.hash();
        if recomputed != manifest.spec_hash {
            return Err(ConvError::SpecMismatch { expected: recomputed, found: manifest.spec_hash });
        }
        manifest.spec.validate()?;
        let bytes = fs::read(&payload_path).map_err(|source| ConvError::Io { path: payload_path.clone(), source })?;
        if bytes.len() % 4 != 0 {
            return Err(ConvError::Malformed("payload length is not a multiple of 4".into()));
        }
        let values: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
        let expected = manifest.spec.parameter_count();
        if values.len() != expected || manifest.parameter_count != expected {
            return Err(ConvError::ParamCount { expected, actual: values.len() });
        }
        Ok(Self { spec: manifest.spec, values, metadata: manifest.metadata })
    }

    /// Loads weights and insists they belong to `spec`.
    pub fn load_for(stem: impl AsRef<Path>, spec: &NetworkSpec) -> Result<Self, ConvError> {
        let w = Self::load(stem)?;
        if w.spec.hash() != spec.hash() {
            return Err(ConvError::SpecMismatch { expected: spec.hash(), found: w.spec.hash() });
        }
        Ok(w)
    }
}

fn weight_paths(stem: &Path) -> (PathBuf, PathBuf) {
    let base = match stem.extension().and_then(|e| e.to_str()) {
        Some("json") | Some("f32") => stem.with_extension(""),
        _ => stem.to_path_buf(),
    };
    let name = base.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    (base.with_file_name(format!("{name}.json")), base.with_file_name(format!("{name}.f32")))
}

pub fn save_weights(weights: &ModelWeights, stem: impl AsRef<Path>) -> Result<(), ConvError> {
    weights.save(stem)
}

pub fn load_weights(stem: impl AsRef<Path>) -> Result<ModelWeights, ConvError> {
    ModelWeights::load(stem)
}

/// Activation shape of a single sample.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Shape {
    c: usize,
    h: usize,
    w: usize,
}

impl Shape {
    fn len(&self) -> usize {
        self.c * self.h * self.w
    }
}

/// Saved inputs of every layer for one sample's forward pass.
pub struct ForwardCache {
    inputs: Vec<Vec<f64>>,
    shapes: Vec<Shape>,
    output: Vec<f64>,
    out_shape: Shape,
}

impl ForwardCache {
    pub fn output(&self) -> &[f64] {
        &self.output
    }

    /// Pre-sigmoid outputs (the input of the final sigmoid layer).
    pub fn logits(&self) -> &[f64] {
        self.inputs.last().expect("network has layers")
    }
}

/// Gradients of a scalar loss.
#[derive(Debug, Clone)]
pub struct Gradients {
    pub params: Vec<f64>,
    pub input: Tensor4,
}

/// A network with `f64` parameters ready for compute.
#[derive(Debug, Clone)]
pub struct Network {
    spec: NetworkSpec,
    params: Vec<f64>,
    conv_offsets: Vec<usize>,
    divisor: usize,
}

impl Network {
    pub fn new(spec: NetworkSpec, params: Vec<f64>) -> Result<Self, ConvError> {
        let divisor = spec.validate()?;
        let expected = spec.parameter_count();
        if params.len() != expected {
            return Err(ConvError::ParamCount { expected, actual: params.len() });
        }
        let mut conv_offsets = Vec::new();
        let mut off = 0;
        for layer in &spec.layers {
            conv_offsets.push(off);
            if let NetLayer::Conv { in_ch, out_ch } = *layer {
                off += out_ch * in_ch * 9 + out_ch;
            }
        }
        Ok(Self { spec, params, conv_offsets, divisor })
    }

    /// He-style fan-in initialization from a seeded generator; zero biases.
    pub fn init(spec: NetworkSpec, seed: u64) -> Result<Self, ConvError> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(spec.parameter_count());
        for layer in &spec.layers {
            if let NetLayer::Conv { in_ch, out_ch } = *layer {
                let std = (2.0 / (in_ch * 9) as f64).sqrt();
                let normal = Normal::new(0.0, std).expect("valid std");
                params.extend((0..out_ch * in_ch * 9).map(|_| normal.sample(&mut rng)));
                params.extend(std::iter::repeat_n(0.0, out_ch));
            }
        }
        Self::new(spec, params)
    }

    pub fn zeros(spec: NetworkSpec) -> Result<Self, ConvError> {
        let n = spec.parameter_count();
        Self::new(spec, vec![0.0; n])
    }

    pub fn from_weights(weights: &ModelWeights) -> Result<Self, ConvError> {
        Self::new(weights.spec.clone(), weights.values.iter().map(|&v| v as f64).collect())
    }

    pub fn to_weights(&self, metadata: serde_json::Value) -> ModelWeights {
        ModelWeights {
            spec: self.spec.clone(),
            values: self.params.iter().map(|&v| v as f32).collect(),
            metadata,
        }
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Spatial size inputs must be divisible by.
    pub fn divisor(&self) -> usize {
        self.divisor
    }

    fn check_input(&self, dims: [usize; 4]) -> Result<(), ConvError> {
        if dims[1] != self.spec.input_channels {
            return Err(ConvError::Shape(format!(
                "input has {} channels, network expects {}",
                dims[1], self.spec.input_channels
            )));
        }
        if !dims[2].is_multiple_of(self.divisor) || !dims[3].is_multiple_of(self.divisor) {
            return Err(ConvError::Shape(format!(
                "input {}x{} is not divisible by {}",
                dims[2], dims[3], self.divisor
            )));
        }
        Ok(())
    }

    pub fn forward(&self, input: &Tensor4) -> Result<Tensor4, ConvError> {
        self.check_input(input.dims)?;
        let [b, _, h, w] = input.dims;
        let mut out = Vec::with_capacity(b * OUTPUT_CHANNELS * h * w);
        for i in 0..b {
            out.extend(self.forward_sample(input.sample(i), h, w, false).output);
        }
        Ok(Tensor4 { dims: [b, OUTPUT_CHANNELS, h, w], data: out })
    }

    /// Forward pass of a single `(channels, h, w)` sample.
    pub fn forward_cached(&self, sample: &[f64], h: usize, w: usize) -> Result<ForwardCache, ConvError> {
        self.check_input([1, self.spec.input_channels, h, w])?;
        if sample.len() != self.spec.input_channels * h * w {
            return Err(ConvError::Shape(format!("sample holds {} values", sample.len())));
        }
        Ok(self.forward_sample(sample, h, w, true))
    }

    fn forward_sample(&self, sample: &[f64], h: usize, w: usize, keep: bool) -> ForwardCache {
        let mut x = sample.to_vec();
        let mut shape = Shape { c: self.spec.input_channels, h, w };
        let mut inputs = Vec::new();
        let mut shapes = Vec::new();
        let mut skips: Vec<(Vec<f64>, Shape)> = Vec::new();
        let n_layers = self.spec.layers.len();
        for (li, layer) in self.spec.layers.iter().enumerate() {
            // The final sigmoid's input is the logits; always keep it.
            if keep || li + 1 == n_layers {
                inputs.push(x.clone());
                shapes.push(shape);
            }
            let (nx, ns) = match *layer {
                NetLayer::Conv { in_ch, out_ch } => {
                    let (wts, bias) = self.conv_params(li, in_ch, out_ch);
                    (conv_forward(&x, shape, wts, bias, out_ch), Shape { c: out_ch, ..shape })
                }
                NetLayer::Relu => (x.iter().map(|&v| v.max(0.0)).collect(), shape),
                NetLayer::Sigmoid => (x.iter().map(|&v| sigmoid(v)).collect(), shape),
                NetLayer::Downsample => maxpool_forward(&x, shape),
                NetLayer::Upsample => upsample_forward(&x, shape),
                NetLayer::SaveSkip => {
                    skips.push((x.clone(), shape));
                    (x, shape)
                }
                NetLayer::ConcatSkip => {
                    let (s, ss) = skips.pop().expect("validated spec");
                    let mut joined = x;
                    joined.extend_from_slice(&s);
                    (joined, Shape { c: shape.c + ss.c, ..shape })
                }
            };
            x = nx;
            shape = ns;
        }
        ForwardCache { inputs, shapes, output: x, out_shape: shape }
    }

    fn conv_params(&self, layer: usize, in_ch: usize, out_ch: usize) -> (&[f64], &[f64]) {
        let off = self.conv_offsets[layer];
        let nw = out_ch * in_ch * 9;
        (&self.params[off..off + nw], &self.params[off + nw..off + nw + out_ch])
    }

    /// Backpropagates `grad_output` (w.r.t. the sigmoid outputs) through a
    /// cached forward pass, accumulating into `param_grads`. Returns the
    /// input gradient when `want_input` is set.
    pub fn backward_cached(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        param_grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        self.backward_from(cache, self.spec.layers.len(), grad_output.to_vec(), param_grads, want_input)
    }

    /// Like [`Network::backward_cached`] but starting from gradients w.r.t.
    /// the logits, skipping the final sigmoid.
    pub fn backward_logits(
        &self,
        cache: &ForwardCache,
        grad_logits: &[f64],
        param_grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        self.backward_from(cache, self.spec.layers.len() - 1, grad_logits.to_vec(), param_grads, want_input)
    }

    fn backward_from(
        &self,
        cache: &ForwardCache,
        end: usize,
        mut grad: Vec<f64>,
        param_grads: &mut [f64],
        want_input: bool,
    ) -> Option<Vec<f64>> {
        assert_eq!(cache.inputs.len(), self.spec.layers.len(), "forward cache was not kept");
        assert_eq!(grad.len(), cache.out_shape.len().min(grad.len()));
        let mut skip_grads: Vec<Vec<f64>> = Vec::new();
        // The first conv's input gradient is never needed for training.
        let first_conv = self.spec.layers.iter().position(|l| matches!(l, NetLayer::Conv { .. }));
        for li in (0..end).rev() {
            let x = &cache.inputs[li];
            let shape = cache.shapes[li];
            grad = match self.spec.layers[li] {
                NetLayer::Conv { in_ch, out_ch } => {
                    let off = self.conv_offsets[li];
                    let nw = out_ch * in_ch * 9;
                    let wts = &self.params[off..off + nw];
                    let (gw, gb) = param_grads[off..off + nw + out_ch].split_at_mut(nw);
                    let need_dx = want_input || Some(li) != first_conv;
                    conv_backward(x, shape, wts, out_ch, &grad, gw, gb, need_dx)
                }
                NetLayer::Relu => grad.iter().zip(x).map(|(&g, &v)| if v > 0.0 { g } else { 0.0 }).collect(),
                NetLayer::Sigmoid => grad
                    .iter()
                    .zip(x)
                    .map(|(&g, &v)| {
                        let s = sigmoid(v);
                        g * s * (1.0 - s)
                    })
                    .collect(),
                NetLayer::Downsample => maxpool_backward(x, shape, &grad),
                NetLayer::Upsample => upsample_backward(shape, &grad),
                NetLayer::ConcatSkip => {
                    let own = shape.len();
                    skip_grads.push(grad[own..].to_vec());
                    grad.truncate(own);
                    grad
                }
                NetLayer::SaveSkip => {
                    let sg = skip_grads.pop().expect("validated spec");
                    for (g, s) in grad.iter_mut().zip(sg) {
                        *g += s;
                    }
                    grad
                }
            };
        }
        want_input.then_some(grad)
    }
}

#[inline]
pub fn sigmoid(v: f64) -> f64 {
    if v >= 0.0 {
        1.0 / (1.0 + (-v).exp())
    } else {
        let e = v.exp();
        e / (1.0 + e)
    }
}

/// Binary cross-entropy of `sigmoid(logits)` against 0/1 targets, averaged,
/// together with its gradient w.r.t. the logits.
pub fn bce_with_logits(logits: &[f64], targets: &[u8]) -> (f64, Vec<f64>) {
    let n = logits.len() as f64;
    let mut loss = 0.0;
    let grad = logits
        .iter()
        .zip(targets)
        .map(|(&z, &t)| {
            let y = t as f64;
            // log(1 + e^z) - y z, stable in both tails.
            loss += z.max(0.0) - z * y + (-z.abs()).exp().ln_1p();
            (sigmoid(z) - y) / n
        })
        .collect();
    (loss / n, grad)
}

fn im2col(x: &[f64], s: Shape) -> Vec<f64> {
    let hw = s.h * s.w;
    let mut col = vec![0.0; s.c * 9 * hw];
    for c in 0..s.c {
        let plane = &x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &mut col[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..s.h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    let src = &plane[sy as usize * s.w..(sy as usize + 1) * s.w];
                    let dst = &mut row[y * s.w..(y + 1) * s.w];
                    match kx {
                        0 => dst[1..].copy_from_slice(&src[..s.w - 1]),
                        1 => dst.copy_from_slice(src),
                        _ => dst[..s.w - 1].copy_from_slice(&src[1..]),
                    }
                }
            }
        }
    }
    col
}

fn col2im(col: &[f64], s: Shape) -> Vec<f64> {
    let hw = s.h * s.w;
    let mut x = vec![0.0; s.c * hw];
    for c in 0..s.c {
        let plane = &mut x[c * hw..(c + 1) * hw];
        for ky in 0..3 {
            for kx in 0..3 {
                let row = &col[((c * 9) + ky * 3 + kx) * hw..((c * 9) + ky * 3 + kx + 1) * hw];
                for y in 0..s.h {
                    let sy = y as isize + ky as isize - 1;
                    if sy < 0 || sy >= s.h as isize {
                        continue;
                    }
                    let dst = &mut plane[sy as usize * s.w..(sy as usize + 1) * s.w];
                    let src = &row[y * s.w..(y + 1) * s.w];
                    let (d, r) = match kx {
                        0 => (&mut dst[..s.w - 1], &src[1..]),
                        1 => (&mut dst[..], src),
                        _ => (&mut dst[1..], &src[..s.w - 1]),
                    };
                    for (a, b) in d.iter_mut().zip(r) {
                        *a += b;
                    }
                }
            }
        }
    }
    x
}

/// `c (m×n) = alpha·a·b + beta·c` with explicit strides.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], rsa: isize, csa: isize, b: &[f64], rsb: isize, csb: isize, beta: f64, c: &mut [f64]) {
    debug_assert!(c.len() >= m * n);
    // SAFETY: the slices cover every index the strides reach for the given
    // dimensions; callers pass row- or column-major views of whole buffers.
    unsafe {
        matrixmultiply::dgemm(m, k, n, 1.0, a.as_ptr(), rsa, csa, b.as_ptr(), rsb, csb, beta, c.as_mut_ptr(), n as isize, 1);
    }
}

fn conv_forward(x: &[f64], s: Shape, wts: &[f64], bias: &[f64], out_ch: usize) -> Vec<f64> {
    let hw = s.h * s.w;
    let k = s.c * 9;
    let col = im2col(x, s);
    let mut out = vec![0.0; out_ch * hw];
    for (o, chunk) in out.chunks_mut(hw).enumerate() {
        chunk.fill(bias[o]);
    }
    gemm(out_ch, k, hw, wts, k as isize, 1, &col, hw as isize, 1, 1.0, &mut out);
    out
}

#[allow(clippy::too_many_arguments)]
fn conv_backward(
    x: &[f64],
    s: Shape,
    wts: &[f64],
    out_ch: usize,
    dout: &[f64],
    gw: &mut [f64],
    gb: &mut [f64],
    need_dx: bool,
) -> Vec<f64> {
    let hw = s.h * s.w;
    let k = s.c * 9;
    let col = im2col(x, s);
    // dW += dout · colᵀ
    gemm(out_ch, hw, k, dout, hw as isize, 1, &col, 1, hw as isize, 1.0, gw);
    for (o, g) in gb.iter_mut().enumerate() {
        *g += dout[o * hw..(o + 1) * hw].iter().sum::<f64>();
    }
    if !need_dx {
        return Vec::new();
    }
    // dcol = Wᵀ · dout
    let mut dcol = vec![0.0; k * hw];
    gemm(k, out_ch, hw, wts, 1, k as isize, dout, hw as isize, 1, 0.0, &mut dcol);
    col2im(&dcol, s)
}

fn maxpool_forward(x: &[f64], s: Shape) -> (Vec<f64>, Shape) {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut out = Vec::with_capacity(s.c * oh * ow);
    for c in 0..s.c {
        let plane = &x[c * s.h * s.w..(c + 1) * s.h * s.w];
        for y in 0..oh {
            for xx in 0..ow {
                let i = 2 * y * s.w + 2 * xx;
                out.push(plane[i].max(plane[i + 1]).max(plane[i + s.w]).max(plane[i + s.w + 1]));
            }
        }
    }
    (out, Shape { c: s.c, h: oh, w: ow })
}

fn maxpool_backward(x: &[f64], s: Shape, grad: &[f64]) -> Vec<f64> {
    let (oh, ow) = (s.h / 2, s.w / 2);
    let mut dx = vec![0.0; s.len()];
    for c in 0..s.c {
        let base = c * s.h * s.w;
        for y in 0..oh {
            for xx in 0..ow {
                let i = base + 2 * y * s.w + 2 * xx;
                // First maximum in scan order receives the gradient.
                let mut best = i;
                for j in [i + 1, i + s.w, i + s.w + 1] {
                    if x[j] > x[best] {
                        best = j;
                    }
                }
                dx[best] += grad[c * oh * ow + y * ow + xx];
            }
        }
    }
    dx
}

fn upsample_forward(x: &[f64], s: Shape) -> (Vec<f64>, Shape) {
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut out = vec![0.0; s.c * oh * ow];
    for c in 0..s.c {
        for y in 0..oh {
            for xx in 0..ow {
                out[c * oh * ow + y * ow + xx] = x[c * s.h * s.w + (y / 2) * s.w + xx / 2];
            }
        }
    }
    (out, Shape { c: s.c, h: oh, w: ow })
}

fn upsample_backward(s: Shape, grad: &[f64]) -> Vec<f64> {
    let (oh, ow) = (s.h * 2, s.w * 2);
    let mut dx = vec![0.0; s.len()];
    for c in 0..s.c {
        for y in 0..oh {
            for xx in 0..ow {
                dx[c * s.h * s.w + (y / 2) * s.w + xx / 2] += grad[c * oh * ow + y * ow + xx];
            }
        }
    }
    dx
}

pub fn forward(spec: &NetworkSpec, weights: &ModelWeights, input: &Tensor4) -> Result<Tensor4, ConvError> {
    if weights.spec != *spec {
        return Err(ConvError::SpecMismatch { expected: spec.hash(), found: weights.spec.hash() });
    }
    Network::from_weights(weights)?.forward(input)
}

/// Gradients of `Σ grad_output · output` w.r.t. parameters and input.
pub fn backward(spec: &NetworkSpec, weights: &ModelWeights, input: &Tensor4, grad_output: &Tensor4) -> Result<Gradients, ConvError> {
    if weights.spec != *spec {
        return Err(ConvError::SpecMismatch { expected: spec.hash(), found: weights.spec.hash() });
    }
    let net = Network::from_weights(weights)?;
    net.check_input(input.dims)?;
    let [b, c, h, w] = input.dims;
    if grad_output.dims != [b, OUTPUT_CHANNELS, h, w] {
        return Err(ConvError::Shape(format!(
            "grad_output dims {:?} do not match output dims {:?}",
            grad_output.dims,
            [b, OUTPUT_CHANNELS, h, w]
        )));
    }
    let mut params = vec![0.0; net.params.len()];
    let mut dinput = Vec::with_capacity(b * c * h * w);
    for i in 0..b {
        let cache = net.forward_sample(input.sample(i), h, w, true);
        let g = net.backward_cached(&cache, grad_output.sample(i), &mut params, true).expect("requested");
        dinput.extend(g);
    }
    Ok(Gradients { params, input: Tensor4 { dims: input.dims, data: dinput } })
}

/// A single training tile: `input_channels × rows × cols` inputs and
/// `8 × rows × cols` binary targets.
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub rows: usize,
    pub cols: usize,
    pub input: Vec<f32>,
    pub target: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub momentum: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self { lr: 0.05, momentum: 0.9, batch: 8, epochs: 20, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub log: Vec<EpochLog>,
}

/// Mean loss and accuracy (thresholded at 0.5) of a network over examples.
pub fn evaluate(net: &Network, examples: &[Example]) -> (f64, f64) {
    if examples.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let (mut loss, mut correct, mut total) = (0.0, 0usize, 0usize);
    for ex in examples {
        let input: Vec<f64> = ex.input.iter().map(|&v| v as f64).collect();
        let cache = net.forward_sample(&input, ex.rows, ex.cols, false);
        let (l, _) = bce_with_logits(cache.logits(), &ex.target);
        loss += l;
        correct += cache.output.iter().zip(&ex.target).filter(|(&p, &t)| (p > 0.5) == (t == 1)).count();
        total += ex.target.len();
    }
    (loss / examples.len() as f64, correct as f64 / total as f64)
}

/// Momentum SGD on mean per-pixel binary cross-entropy. Deterministic for
/// a fixed seed; the network is initialized from the same seed.
pub fn train(
    spec: &NetworkSpec,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome, ConvError> {
    let mut net = Network::init(spec.clone(), cfg.seed)?;
    let log = train_network(&mut net, train_set, val_set, cfg, &mut on_epoch)?;
    let last = log.last().copied();
    let metadata = serde_json::json!({
        "train_config": cfg,
        "train_examples": train_set.len(),
        "val_examples": val_set.len(),
        "final_epoch": last,
    });
    Ok(TrainOutcome { weights: net.to_weights(metadata), log })
}

/// Trains an existing network in place.
pub fn train_network(
    net: &mut Network,
    train_set: &[Example],
    val_set: &[Example],
    cfg: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochLog),
) -> Result<Vec<EpochLog>, ConvError> {
    if train_set.is_empty() {
        return Err(ConvError::EmptyDataset);
    }
    for ex in train_set.iter().chain(val_set) {
        net.check_input([1, net.spec.input_channels, ex.rows, ex.cols])?;
        if ex.input.len() != net.spec.input_channels * ex.rows * ex.cols || ex.target.len() != OUTPUT_CHANNELS * ex.rows * ex.cols {
            return Err(ConvError::Shape("example buffers do not match their dimensions".into()));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x005e_ed0f_7ea1);
    let mut velocity = vec![0.0; net.params.len()];
    let mut grads = vec![0.0; net.params.len()];
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let batch = cfg.batch.max(1);
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for (bi, chunk) in order.chunks(batch).enumerate() {
            grads.fill(0.0);
            let mut batch_loss = 0.0;
            for &i in chunk {
                let ex = &train_set[i];
                let input: Vec<f64> = ex.input.iter().map(|&v| v as f64).collect();
                let cache = net.forward_sample(&input, ex.rows, ex.cols, true);
                let (loss, mut g) = bce_with_logits(cache.logits(), &ex.target);
                let scale = 1.0 / chunk.len() as f64;
                g.iter_mut().for_each(|v| *v *= scale);
                net.backward_logits(&cache, &g, &mut grads, false);
                batch_loss += loss;
            }
            batch_loss /= chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(ConvError::Diverged { epoch, batch: bi, loss: batch_loss });
            }
            epoch_loss += batch_loss * chunk.len() as f64;
            for ((p, v), g) in net.params.iter_mut().zip(&mut velocity).zip(&grads) {
                *v = cfg.momentum * *v - cfg.lr * g;
                *p += *v;
            }
        }
        let train_loss = epoch_loss / train_set.len() as f64;
        let (val_loss, val_accuracy) = if val_set.is_empty() { (f64::NAN, f64::NAN) } else { evaluate(net, val_set) };
        let entry = EpochLog { epoch, train_loss, val_loss, val_accuracy };
        on_epoch(&entry);
        log.push(entry);
    }
    Ok(log)
}

/// Training log as CSV: `epoch,train_loss,val_loss,val_accuracy`.
pub fn write_training_log(log: &[EpochLog], path: impl AsRef<Path>) -> Result<(), ConvError> {
    let path = path.as_ref();
    let mut text = String::from("epoch,train_loss,val_loss,val_accuracy\n");
    for e in log {
        text.push_str(&format!("{},{},{},{}\n", e.epoch, e.train_loss, e.val_loss, e.val_accuracy));
    }
    fs::write(path, text).map_err(|source| ConvError::Io { path: path.to_path_buf(), source })
}
