//! Desk-scale audio emotion classifier.
//!
//! Two architectures over a `[frames × bins]` log-mel input:
//!
//! * `linear`: flattened input → logits.
//! * `small_cnn`: a stack of `k×k`, stride-2, zero-padded ("same") conv
//!   layers with ReLU, global average pooling over time and frequency, and
//!   a linear head.
//!
//! Everything runs in `f64`. Per-example work is data-parallel; per-example
//! gradients are summed in example order so results do not depend on the
//! thread count.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::Taxonomy;
use crate::dsp::{FeatureStats, MelConfig};
use crate::error::{Error, Result};
use crate::par;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Architecture {
    Linear,
    SmallCnn {
        channels: Vec<usize>,
        kernel: usize,
        stride: usize,
    },
}

impl Architecture {
    /// Two 5×5 stride-2 blocks of 8 and 16 channels.
    pub fn small_cnn() -> Self {
        Architecture::SmallCnn {
            channels: vec![8, 16],
            kernel: 5,
            stride: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub input_frames: usize,
    pub input_bins: usize,
    pub architecture: Architecture,
    pub num_classes: usize,
    pub seed: u64,
}

impl ModelConfig {
    pub fn new(input_frames: usize, num_classes: usize, architecture: Architecture, seed: u64) -> Self {
        ModelConfig {
            input_frames,
            input_bins: 50,
            architecture,
            num_classes,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::ModelConfig("num_classes must be at least 2".into()));
        }
        if self.input_frames == 0 || self.input_bins == 0 {
            return Err(Error::ModelConfig("input dimensions must be positive".into()));
        }
        if let Architecture::SmallCnn {
            channels,
            kernel,
            stride,
        } = &self.architecture
        {
            if channels.is_empty() || channels.contains(&0) || *kernel == 0 || *stride == 0 {
                return Err(Error::ModelConfig("conv channels, kernel and stride must be positive".into()));
            }
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.input_frames * self.input_bins
    }

    fn conv_layers(&self) -> Vec<ConvShape> {
        let Architecture::SmallCnn {
            channels,
            kernel,
            stride,
        } = &self.architecture
        else {
            return Vec::new();
        };
        let mut layers = Vec::new();
        let (mut c, mut h, mut w) = (1, self.input_frames, self.input_bins);
        let pad = (kernel - 1) / 2;
        for &out in channels {
            let shape = ConvShape {
                c_in: c,
                h_in: h,
                w_in: w,
                c_out: out,
                kernel: *kernel,
                stride: *stride,
                pad,
                h_out: (h + 2 * pad).saturating_sub(*kernel) / stride + 1,
                w_out: (w + 2 * pad).saturating_sub(*kernel) / stride + 1,
            };
            (c, h, w) = (out, shape.h_out, shape.w_out);
            layers.push(shape);
        }
        layers
    }

    fn head_inputs(&self) -> usize {
        match &self.architecture {
            Architecture::Linear => self.input_len(),
            Architecture::SmallCnn { channels, .. } => *channels.last().expect("validated"),
        }
    }

    /// `(name, shape, fan_in)` for every parameter tensor, in storage order.
    fn tensor_specs(&self) -> Vec<(String, Vec<usize>, usize)> {
        let mut specs = Vec::new();
        for (l, c) in self.conv_layers().iter().enumerate() {
            let fan_in = c.c_in * c.kernel * c.kernel;
            specs.push((format!("conv{l}.weight"), vec![c.c_out, c.c_in, c.kernel, c.kernel], fan_in));
            specs.push((format!("conv{l}.bias"), vec![c.c_out], fan_in));
        }
        let d = self.head_inputs();
        specs.push(("head.weight".into(), vec![self.num_classes, d], d));
        specs.push(("head.bias".into(), vec![self.num_classes], d));
        specs
    }
}

#[derive(Debug, Clone, Copy)]
struct ConvShape {
    c_in: usize,
    h_in: usize,
    w_in: usize,
    c_out: usize,
    kernel: usize,
    stride: usize,
    pad: usize,
    h_out: usize,
    w_out: usize,
}

impl ConvShape {
    fn out_len(&self) -> usize {
        self.c_out * self.h_out * self.w_out
    }

    /// Input row for output row `i` and kernel row `u`, if inside the image.
    #[inline]
    fn src(&self, out_idx: usize, k: usize, limit: usize) -> Option<usize> {
        let pos = (out_idx * self.stride + k) as isize - self.pad as isize;
        (pos >= 0 && (pos as usize) < limit).then_some(pos as usize)
    }

    fn forward(&self, x: &[f64], weight: &[f64], bias: &[f64]) -> Vec<f64> {
        let k = self.kernel;
        let mut z = vec![0.0; self.out_len()];
        for o in 0..self.c_out {
            for i in 0..self.h_out {
                for j in 0..self.w_out {
                    let mut acc = bias[o];
                    for c in 0..self.c_in {
                        for u in 0..k {
                            let Some(r) = self.src(i, u, self.h_in) else { continue };
                            let xrow = &x[(c * self.h_in + r) * self.w_in..];
                            let wrow = &weight[((o * self.c_in + c) * k + u) * k..];
                            for v in 0..k {
                                if let Some(col) = self.src(j, v, self.w_in) {
                                    acc += wrow[v] * xrow[col];
                                }
                            }
                        }
                    }
                    z[(o * self.h_out + i) * self.w_out + j] = acc;
                }
            }
        }
        z
    }

    /// Accumulates weight/bias gradients and returns the input gradient.
    fn backward(&self, x: &[f64], weight: &[f64], dz: &[f64], dweight: &mut [f64], dbias: &mut [f64]) -> Vec<f64> {
        let k = self.kernel;
        let mut dx = vec![0.0; x.len()];
        for o in 0..self.c_out {
            for i in 0..self.h_out {
                for j in 0..self.w_out {
                    let g = dz[(o * self.h_out + i) * self.w_out + j];
                    if g == 0.0 {
                        continue;
                    }
                    dbias[o] += g;
                    for c in 0..self.c_in {
                        for u in 0..k {
                            let Some(r) = self.src(i, u, self.h_in) else { continue };
                            let base_x = (c * self.h_in + r) * self.w_in;
                            let base_w = ((o * self.c_in + c) * k + u) * k;
                            for v in 0..k {
                                if let Some(col) = self.src(j, v, self.w_in) {
                                    dweight[base_w + v] += g * x[base_x + col];
                                    dx[base_x + col] += g * weight[base_w + v];
                                }
                            }
                        }
                    }
                }
            }
        }
        dx
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

/// Named tensors in a fixed order determined by the [`ModelConfig`].
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    tensors: Vec<Tensor>,
}

impl ModelParams {
    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.iter_mut().find(|t| t.name == name)
    }

    pub fn zeros_like(&self) -> ModelParams {
        ModelParams {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    data: vec![0.0; t.data.len()],
                })
                .collect(),
        }
    }

    pub fn num_values(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    fn add_assign(&mut self, other: &ModelParams) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y;
            }
        }
    }

    fn check_against(&self, cfg: &ModelConfig) -> Result<()> {
        let specs = cfg.tensor_specs();
        if specs.len() != self.tensors.len() {
            return Err(Error::Shape(format!(
                "expected {} tensors, found {}",
                specs.len(),
                self.tensors.len()
            )));
        }
        for ((name, shape, _), t) in specs.iter().zip(&self.tensors) {
            if *name != t.name || *shape != t.shape || t.data.len() != shape.iter().product::<usize>() {
                return Err(Error::Shape(format!(
                    "tensor {:?} {:?} does not match expected {name:?} {shape:?}",
                    t.name, t.shape
                )));
            }
            if t.data.iter().any(|v| !v.is_finite()) {
                return Err(Error::Shape(format!("tensor {:?} has non-finite values", t.name)));
            }
        }
        Ok(())
    }
}

fn init_tensor(rng: &mut ChaCha8Rng, name: &str, shape: &[usize], fan_in: usize) -> Tensor {
    let n = shape.iter().product();
    let data = if name.ends_with(".bias") {
        vec![0.0; n]
    } else {
        let bound = (1.0 / fan_in as f64).sqrt();
        (0..n).map(|_| rng.random_range(-bound..bound)).collect()
    };
    Tensor {
        name: name.to_string(),
        shape: shape.to_vec(),
        data,
    }
}

/// Uniform `±1/sqrt(fan_in)` weights and zero biases, seeded by `cfg.seed`.
pub fn init_params(cfg: &ModelConfig) -> Result<ModelParams> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let tensors = cfg
        .tensor_specs()
        .iter()
        .map(|(name, shape, fan_in)| init_tensor(&mut rng, name, shape, *fan_in))
        .collect();
    Ok(ModelParams { tensors })
}

/// Mean softmax cross-entropy and its gradient `(softmax - onehot) / B`.
pub fn cross_entropy(logits: &[f64], num_classes: usize, labels: &[usize]) -> Result<(f64, Vec<f64>)> {
    if labels.is_empty() || logits.len() != labels.len() * num_classes {
        return Err(Error::Shape(format!(
            "{} logits for {} labels × {num_classes} classes",
            logits.len(),
            labels.len()
        )));
    }
    let b = labels.len() as f64;
    let mut loss = 0.0;
    let mut grad = vec![0.0; logits.len()];
    for (row, (z, &y)) in logits.chunks(num_classes).zip(labels).enumerate() {
        if y >= num_classes {
            return Err(Error::LabelOutOfRange {
                label: y,
                num_classes,
            });
        }
        let max = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = z.iter().map(|v| (v - max).exp()).sum();
        let lse = max + sum.ln();
        loss += lse - z[y];
        for (k, v) in z.iter().enumerate() {
            let p = (v - lse).exp();
            grad[row * num_classes + k] = (p - if k == y { 1.0 } else { 0.0 }) / b;
        }
    }
    Ok((loss / b, grad))
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

/// First index of the maximum.
pub fn argmax(values: &[f64]) -> usize {
    values
        .iter()
        .enumerate()
        .fold(0, |best, (i, &v)| if v > values[best] { i } else { best })
}

/// Cached activations for one example.
struct Trace {
    /// Input to each conv layer (post-ReLU of the previous one).
    inputs: Vec<Vec<f64>>,
    /// Post-ReLU output of the last conv layer.
    last: Vec<f64>,
    /// Head input.
    features: Vec<f64>,
    logits: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: ModelParams,
}

impl Model {
    pub fn new(config: ModelConfig) -> Result<Self> {
        let params = init_params(&config)?;
        Ok(Model { config, params })
    }

    pub fn from_parts(config: ModelConfig, params: ModelParams) -> Result<Self> {
        config.validate()?;
        params.check_against(&config)?;
        Ok(Model { config, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ModelParams {
        &mut self.params
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    /// Replaces the head with a fresh one for `num_classes` outputs; the
    /// backbone is kept.
    pub fn reinit_head(&mut self, num_classes: usize, seed: u64) -> Result<()> {
        let mut cfg = self.config.clone();
        cfg.num_classes = num_classes;
        cfg.seed = seed;
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x4ead_0000);
        let d = cfg.head_inputs();
        let n = self.params.tensors.len();
        self.params.tensors[n - 2] = init_tensor(&mut rng, "head.weight", &[num_classes, d], d);
        self.params.tensors[n - 1] = init_tensor(&mut rng, "head.bias", &[num_classes], d);
        self.config = cfg;
        Ok(())
    }

    /// Reorders head rows: output `i` of the result is output `order[i]` of `self`.
    pub fn permute_head(&mut self, order: &[usize]) -> Result<()> {
        let k = self.config.num_classes;
        if order.len() != k {
            return Err(Error::Shape(format!("head permutation of length {} for {k} classes", order.len())));
        }
        let n = self.params.tensors.len();
        let d = self.config.head_inputs();
        let w = self.params.tensors[n - 2].data.clone();
        let b = self.params.tensors[n - 1].data.clone();
        for (i, &src) in order.iter().enumerate() {
            self.params.tensors[n - 2].data[i * d..(i + 1) * d].copy_from_slice(&w[src * d..(src + 1) * d]);
            self.params.tensors[n - 1].data[i] = b[src];
        }
        Ok(())
    }

    fn check_batch(&self, inputs: &[f64], batch: usize) -> Result<()> {
        if batch == 0 || inputs.len() != batch * self.config.input_len() {
            return Err(Error::Shape(format!(
                "batch of {} values is not {batch} × {} × {}",
                inputs.len(),
                self.config.input_frames,
                self.config.input_bins
            )));
        }
        Ok(())
    }

    fn trace(&self, x: &[f64]) -> Trace {
        let t = &self.params.tensors;
        let mut inputs = Vec::new();
        let mut cur = x.to_vec();
        for (l, shape) in self.config.conv_layers().iter().enumerate() {
            let mut z = shape.forward(&cur, &t[2 * l].data, &t[2 * l + 1].data);
            z.iter_mut().for_each(|v| *v = v.max(0.0));
            inputs.push(std::mem::replace(&mut cur, z));
        }
        let features = match self.config.architecture {
            Architecture::Linear => cur.clone(),
            Architecture::SmallCnn { .. } => {
                let last = self.config.conv_layers().last().copied().expect("validated");
                let area = last.h_out * last.w_out;
                cur.chunks(area).map(|c| c.iter().sum::<f64>() / area as f64).collect()
            }
        };
        let n = t.len();
        let (w, b) = (&t[n - 2].data, &t[n - 1].data);
        let d = features.len();
        let logits = (0..self.config.num_classes)
            .map(|k| b[k] + w[k * d..(k + 1) * d].iter().zip(&features).map(|(a, f)| a * f).sum::<f64>())
            .collect();
        Trace {
            inputs,
            last: cur,
            features,
            logits,
        }
    }

    /// Logits `[batch × num_classes]` for row-major inputs `[batch × frames × bins]`.
    pub fn forward(&self, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
        self.check_batch(inputs, batch)?;
        let d = self.config.input_len();
        let rows = par::map_range(batch, |i| self.trace(&inputs[i * d..(i + 1) * d]).logits);
        Ok(rows.concat())
    }

    pub fn predict(&self, inputs: &[f64], batch: usize) -> Result<Vec<usize>> {
        let k = self.config.num_classes;
        Ok(self.forward(inputs, batch)?.chunks(k).map(argmax).collect())
    }

    /// Gradients for one example given `dlogits` for that example.
    fn backprop(&self, x: &[f64], trace: &Trace, dlogits: &[f64]) -> ModelParams {
        let mut grads = self.params.zeros_like();
        let t = &self.params.tensors;
        let n = t.len();
        let d = trace.features.len();
        let mut dfeat = vec![0.0; d];
        {
            let (gw, rest) = grads.tensors[n - 2..].split_at_mut(1);
            let w = &t[n - 2].data;
            for (k, &g) in dlogits.iter().enumerate() {
                rest[0].data[k] += g;
                for j in 0..d {
                    gw[0].data[k * d + j] += g * trace.features[j];
                    dfeat[j] += g * w[k * d + j];
                }
            }
        }
        let layers = self.config.conv_layers();
        if layers.is_empty() {
            return grads;
        }
        let last = layers[layers.len() - 1];
        let area = last.h_out * last.w_out;
        let mut dout: Vec<f64> = (0..last.out_len()).map(|i| dfeat[i / area] / area as f64).collect();
        for (l, shape) in layers.iter().enumerate().rev() {
            let post = if l + 1 == layers.len() {
                &trace.last
            } else {
                &trace.inputs[l + 1]
            };
            for (g, a) in dout.iter_mut().zip(post) {
                if *a <= 0.0 {
                    *g = 0.0;
                }
            }
            let input = if l == 0 { x } else { &trace.inputs[l][..] };
            let (w_part, b_part) = grads.tensors[2 * l..2 * l + 2].split_at_mut(1);
            dout = shape.backward(input, &t[2 * l].data, &dout, &mut w_part[0].data, &mut b_part[0].data);
        }
        grads
    }

    /// Mean cross-entropy over the batch and its exact gradient.
    pub fn loss_and_grad(&self, inputs: &[f64], labels: &[usize]) -> Result<(f64, ModelParams)> {
        let batch = labels.len();
        self.check_batch(inputs, batch)?;
        let k = self.config.num_classes;
        if let Some(&bad) = labels.iter().find(|&&y| y >= k) {
            return Err(Error::LabelOutOfRange {
                label: bad,
                num_classes: k,
            });
        }
        let d = self.config.input_len();
        let per_example = par::map_range(batch, |i| {
            let x = &inputs[i * d..(i + 1) * d];
            let trace = self.trace(x);
            let (loss, dlogits) = cross_entropy(&trace.logits, k, &[labels[i]]).expect("checked labels");
            (loss, self.backprop(x, &trace, &dlogits))
        });
        let mut total = 0.0;
        let mut grads = self.params.zeros_like();
        for (loss, g) in &per_example {
            total += loss;
            grads.add_assign(g);
        }
        let scale = 1.0 / batch as f64;
        for t in &mut grads.tensors {
            t.data.iter_mut().for_each(|v| *v *= scale);
        }
        Ok((total * scale, grads))
    }
}

pub fn forward(model: &Model, inputs: &[f64], batch: usize) -> Result<Vec<f64>> {
    model.forward(inputs, batch)
}

pub fn backward(model: &Model, inputs: &[f64], labels: &[usize]) -> Result<ModelParams> {
    Ok(model.loss_and_grad(inputs, labels)?.1)
}

/// Provenance carried alongside a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct TrainingMeta {
    pub iterations: usize,
    #[serde(default)]
    pub schedule: serde_json::Value,
    #[serde(default)]
    pub dataset_id: String,
    #[serde(default)]
    pub selected_step: Option<usize>,
    #[serde(default)]
    pub valid_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub model: Model,
    pub taxonomy: Taxonomy,
    pub dsp: MelConfig,
    pub feature_stats: Option<FeatureStats>,
    pub meta: TrainingMeta,
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"WSERCKPT";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    dtype: String,
    offset: usize,
    len: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointHeader {
    version: u32,
    config: ModelConfig,
    taxonomy_name: String,
    taxonomy: Vec<String>,
    dsp: MelConfig,
    feature_stats: Option<FeatureStats>,
    meta: TrainingMeta,
    tensors: Vec<TensorEntry>,
}

impl ModelCheckpoint {
    pub fn new(model: Model, taxonomy: Taxonomy, dsp: MelConfig) -> Result<Self> {
        if model.num_classes() != taxonomy.len() {
            return Err(Error::Checkpoint(format!(
                "model has {} outputs but taxonomy {:?} has {} labels",
                model.num_classes(),
                taxonomy.name(),
                taxonomy.len()
            )));
        }
        Ok(ModelCheckpoint {
            model,
            taxonomy,
            dsp,
            feature_stats: None,
            meta: TrainingMeta::default(),
        })
    }

    /// Layout: magic, u32 LE version, u64 LE header length, JSON header,
    /// then every tensor as raw little-endian `f64`.
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut offset = 0;
        let tensors = self
            .model
            .params
            .tensors
            .iter()
            .map(|t| {
                let e = TensorEntry {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    dtype: "f64le".into(),
                    offset,
                    len: t.data.len(),
                };
                offset += t.data.len() * 8;
                e
            })
            .collect();
        let header = CheckpointHeader {
            version: CHECKPOINT_VERSION,
            config: self.model.config.clone(),
            taxonomy_name: self.taxonomy.name().to_string(),
            taxonomy: self.taxonomy.labels().to_vec(),
            dsp: self.dsp.clone(),
            feature_stats: self.feature_stats.clone(),
            meta: self.meta.clone(),
            tensors,
        };
        let json = serde_json::to_vec(&header)?;
        let mut out = Vec::with_capacity(20 + json.len() + offset);
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for t in &self.model.params.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Checkpoint(m.to_string());
        if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(bad("not a checkpoint file"));
        }
        let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}")));
        }
        let header_len = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
        let header_end = 20usize.checked_add(header_len).filter(|&e| e <= bytes.len()).ok_or_else(|| bad("truncated header"))?;
        let header: CheckpointHeader = serde_json::from_slice(&bytes[20..header_end])?;
        let data = &bytes[header_end..];
        let mut tensors = Vec::with_capacity(header.tensors.len());
        for e in &header.tensors {
            if e.dtype != "f64le" {
                return Err(Error::Checkpoint(format!("unsupported dtype {:?}", e.dtype)));
            }
            let end = e.offset + e.len * 8;
            if end > data.len() {
                return Err(bad("truncated tensor data"));
            }
            let values = data[e.offset..end]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            tensors.push(Tensor {
                name: e.name.clone(),
                shape: e.shape.clone(),
                data: values,
            });
        }
        let taxonomy = Taxonomy::new(header.taxonomy_name, &header.taxonomy)?;
        let model = Model::from_parts(header.config, ModelParams { tensors })?;
        let mut ckpt = ModelCheckpoint::new(model, taxonomy, header.dsp)?;
        ckpt.feature_stats = header.feature_stats;
        ckpt.meta = header.meta;
        Ok(ckpt)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = self.to_bytes()?;
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(&bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        ModelCheckpoint::from_bytes(&bytes)
    }
}
