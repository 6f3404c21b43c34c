//! The shared encoder, end-task decoder, image-translation decoder and the
//! frozen teacher, at fixed desk-scale widths (16/32/64 channels).
//!
//! Parameters live in a [`ModelParams`] map keyed by path
//! (`encoder.conv1.kernels`, ...). The architecture manifest enumerates the
//! expected `(path, shape)` pairs for checkpoint validation. The end-task
//! forward (`encoder_forward` + `eel_decoder_forward`) never touches the
//! translation decoder or teacher parameters, so those can be dropped
//! without changing inference output in any way.

use std::collections::BTreeMap;

use rand_distr::{Distribution, Normal};
use thiserror::Error;

use crate::autodiff::{Tensor, TensorError, UpsampleMode};
use crate::rng;

/// Which end-task the decoder head produces.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Segmentation,
    Depth,
}

impl Task {
    pub fn name(self) -> &'static str {
        match self {
            Task::Segmentation => "segmentation",
            Task::Depth => "depth",
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("missing parameter {0}")]
    MissingParam(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

pub type Result<T> = std::result::Result<T, ModelError>;

/// Named map from parameter path to tensor. Paths are unique and iterate
/// in sorted order, which makes checkpoints and updates deterministic.
#[derive(Default)]
pub struct ModelParams {
    entries: BTreeMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) {
        let path = path.into();
        assert!(
            self.entries.insert(path.clone(), tensor).is_none(),
            "duplicate parameter path {path}"
        );
    }

    pub fn get(&self, path: &str) -> Result<&Tensor> {
        self.entries
            .get(path)
            .ok_or_else(|| ModelError::MissingParam(path.to_string()))
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn remove_prefix(&mut self, prefix: &str) {
        self.entries.retain(|k, _| !k.starts_with(prefix));
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// A non-trainable copy holding the same values (used for the teacher).
    pub fn frozen_clone(&self) -> ModelParams {
        let mut out = ModelParams::new();
        for (path, t) in &self.entries {
            out.insert(path.clone(), Tensor::constant(t.shape(), t.values()));
        }
        out
    }

    /// A trainable copy holding the same values.
    pub fn trainable_clone(&self) -> ModelParams {
        let mut out = ModelParams::new();
        for (path, t) in &self.entries {
            out.insert(path.clone(), Tensor::param(t.shape(), t.values()));
        }
        out
    }

    pub fn zero_grads(&self) {
        for t in self.entries.values() {
            t.zero_grad();
        }
    }
}

/// Deterministic listing of `(path, shape)` pairs for one architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchManifest {
    pub entries: Vec<(String, Vec<usize>)>,
}

impl ArchManifest {
    pub fn lines(&self) -> String {
        let mut s = String::new();
        for (path, shape) in &self.entries {
            let dims: Vec<String> = shape.iter().map(|d| d.to_string()).collect();
            s.push_str(&format!("{path} {}\n", dims.join("x")));
        }
        s
    }
}

/// Encoder output channel count.
pub const LATENT_CHANNELS: usize = 64;
/// Channel count of both penultimate feature maps (the transfer tap).
pub const PENULTIMATE_CHANNELS: usize = 64;

fn conv_entry(path: &str, c_out: usize, c_in: usize, k: usize) -> [(String, Vec<usize>); 2] {
    [
        (format!("{path}.kernels"), vec![c_out, c_in, k, k]),
        (format!("{path}.bias"), vec![c_out]),
    ]
}

fn backbone_entries(c_in: usize, head_channels: usize) -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    v.extend(conv_entry("encoder.conv1", 16, c_in, 3));
    v.extend(conv_entry("encoder.conv2", 32, 16, 3));
    v.extend(conv_entry("encoder.conv3", 64, 32, 3));
    v.extend(conv_entry("eel.penultimate", PENULTIMATE_CHANNELS, LATENT_CHANNELS, 3));
    v.extend(conv_entry("eel.head", head_channels, PENULTIMATE_CHANNELS, 1));
    v
}

fn eit_entries() -> Vec<(String, Vec<usize>)> {
    let mut v = Vec::new();
    v.extend(conv_entry("eit.res1.conv1", 64, 64, 3));
    v.extend(conv_entry("eit.res1.conv2", 64, 64, 3));
    v.extend(conv_entry("eit.up1", 32, 64, 3));
    v.extend(conv_entry("eit.res2.conv1", 32, 32, 3));
    v.extend(conv_entry("eit.res2.conv2", 32, 32, 3));
    v.extend(conv_entry("eit.up2", 16, 32, 3));
    v.extend(conv_entry("eit.head", 1, 16, 3));
    v
}

/// Student architecture: shared encoder, end-task decoder and translation
/// decoder. `head_channels` is the class count for segmentation or 1 for
/// depth.
pub fn student_manifest(c_in: usize, head_channels: usize) -> ArchManifest {
    let mut entries = backbone_entries(c_in, head_channels);
    entries.extend(eit_entries());
    entries.sort();
    ArchManifest { entries }
}

/// Teacher architecture: the same backbone on single-channel images.
pub fn teacher_manifest(head_channels: usize) -> ArchManifest {
    let mut entries = backbone_entries(1, head_channels);
    entries.sort();
    ArchManifest { entries }
}

/// Kaiming-style fan-in initialization, one named stream per parameter so
/// values are independent of insertion order. Biases are zero.
pub fn init_params(manifest: &ArchManifest, seed: u64) -> ModelParams {
    let mut params = ModelParams::new();
    for (path, shape) in &manifest.entries {
        let n: usize = shape.iter().product();
        let values = if path.ends_with(".bias") {
            vec![0.0; n]
        } else {
            let fan_in: usize = shape[1..].iter().product();
            let std = (2.0 / fan_in as f64).sqrt();
            let normal = Normal::new(0.0, std).expect("valid std");
            let mut stream = rng::stream(seed, path);
            (0..n).map(|_| normal.sample(&mut stream)).collect()
        };
        params.insert(path.clone(), Tensor::param(shape, values));
    }
    params
}

fn conv_layer(
    params: &ModelParams,
    path: &str,
    x: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let kernels = params.get(&format!("{path}.kernels"))?;
    let bias = params.get(&format!("{path}.bias"))?;
    Ok(x.conv2d(kernels, bias, stride, pad)?)
}

/// Shared encoder: three 3×3 convolutions (stride 1, 2, 2) with ReLU,
/// mapping C_in×H×W to 64×H/4×W/4.
pub fn encoder_forward(params: &ModelParams, x: &Tensor) -> Result<Tensor> {
    let a = conv_layer(params, "encoder.conv1", x, 1, 1)?.relu();
    let b = conv_layer(params, "encoder.conv2", &a, 2, 1)?.relu();
    Ok(conv_layer(params, "encoder.conv3", &b, 2, 1)?.relu())
}

/// End-task decoder output: the penultimate feature map (the transfer tap)
/// and the full-resolution prediction.
pub struct EelOutput {
    /// 64×H/4×W/4 features feeding both the head and the translation
    /// decoder.
    pub penultimate: Tensor,
    /// K×H×W logits for segmentation, or strictly positive 1×H×W depth.
    pub prediction: Tensor,
}

/// End-task decoder: a 3×3 conv + ReLU producing the penultimate map, a
/// 1×1 head at quarter resolution, then two bilinear 2x upsamplings. Depth
/// passes through softplus to stay positive.
pub fn eel_decoder_forward(params: &ModelParams, latent: &Tensor, task: Task) -> Result<EelOutput> {
    let penultimate = conv_layer(params, "eel.penultimate", latent, 1, 1)?.relu();
    let low = conv_layer(params, "eel.head", &penultimate, 1, 0)?;
    let up = low
        .upsample2x(UpsampleMode::Bilinear)?
        .upsample2x(UpsampleMode::Bilinear)?;
    let prediction = match task {
        Task::Segmentation => up,
        Task::Depth => up.softplus(),
    };
    Ok(EelOutput {
        penultimate,
        prediction,
    })
}

/// Translation decoder output.
pub struct EitOutput {
    /// First residual block output, 64×H/4×W/4: the feature tap matched
    /// against the end-task penultimate map.
    pub penultimate: Tensor,
    /// 1×H×W reconstructed intensity image in (-1, 1).
    pub image: Tensor,
}

fn res_block(params: &ModelParams, prefix: &str, x: &Tensor) -> Result<Tensor> {
    let inner = conv_layer(params, &format!("{prefix}.conv1"), x, 1, 1)?.relu();
    let out = conv_layer(params, &format!("{prefix}.conv2"), &inner, 1, 1)?;
    Ok(x.add(&out)?)
}

/// Translation decoder: ResBlock(64) → up+conv(32)+ReLU → ResBlock(32) →
/// up+conv(16)+ReLU → conv(1) → tanh, upsampling via nearest + 3×3 conv.
pub fn eit_decoder_forward(params: &ModelParams, penultimate: &Tensor) -> Result<EitOutput> {
    let r1 = res_block(params, "eit.res1", penultimate)?;
    let u1 = conv_layer(params, "eit.up1", &r1.upsample2x(UpsampleMode::Nearest)?, 1, 1)?.relu();
    let r2 = res_block(params, "eit.res2", &u1)?;
    let u2 = conv_layer(params, "eit.up2", &r2.upsample2x(UpsampleMode::Nearest)?, 1, 1)?.relu();
    let image = conv_layer(params, "eit.head", &u2, 1, 1)?.tanh();
    Ok(EitOutput {
        penultimate: r1,
        image,
    })
}

/// Frozen teacher on a 1×H×W image in [-1, 1]: per-pixel class
/// probabilities for segmentation, positive depth otherwise. The pass is
/// differentiable with respect to its input; the teacher's own parameters
/// are non-trainable constants and never accumulate gradients.
pub fn teacher_forward(teacher: &ModelParams, image: &Tensor, task: Task) -> Result<Tensor> {
    let latent = encoder_forward(teacher, image)?;
    let out = eel_decoder_forward(teacher, &latent, task)?;
    match task {
        Task::Segmentation => Ok(out.prediction.softmax(0)?),
        Task::Depth => Ok(out.prediction),
    }
}
