//! Two-stream event detector: per-stream window encoders, bi-modal
//! cross-attention fusion over a sequence of frames, and a multi-label
//! per-frame head.

mod input;
mod net;
mod predict;
mod train;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use input::{
    build_windows, depth_features, fit_feature_norm, mask_features, normalize_depth, one_hot_mask, patch_pool,
    window_features, DigitalTwinWindow, FeatureNorm, TrialFeatures,
};
pub use net::{bimodal_fuse, classify, encode_stream, encode_window, forward_chunks, sinusoidal, Bound, ChunkBatch};
pub use predict::{chunk_starts, detect_trial, predict_features, predict_trial};
pub use train::{frame_labels, train, EpochLog, TrainLog};

use crate::error::{Error, Result};
use crate::events::ExtractionConfig;
use crate::io::{ParamContainer, ParamEntry};
use crate::sim::rng::SimRng;
use crate::sim::{N_EVENT_CLASSES, N_MASK_CHANNELS};
use crate::tensor::Tensor;

/// Which input streams the model sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Streams {
    Mask,
    Depth,
    Both,
}

impl Streams {
    pub fn uses_mask(self) -> bool {
        self != Streams::Depth
    }

    pub fn uses_depth(self) -> bool {
        self != Streams::Mask
    }

    pub fn name(self) -> &'static str {
        match self {
            Streams::Mask => "mask",
            Streams::Depth => "depth",
            Streams::Both => "both",
        }
    }

    fn code(self) -> f32 {
        match self {
            Streams::Mask => 0.0,
            Streams::Depth => 1.0,
            Streams::Both => 2.0,
        }
    }

    fn from_code(c: f32) -> Option<Self> {
        [Streams::Mask, Streams::Depth, Streams::Both]
            .into_iter()
            .find(|s| s.code() == c)
    }
}

impl std::str::FromStr for Streams {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mask" => Ok(Streams::Mask),
            "depth" => Ok(Streams::Depth),
            "both" => Ok(Streams::Both),
            _ => Err(Error::Validation(format!(
                "streams must be mask, depth or both, got {s:?}"
            ))),
        }
    }
}

/// Shape-determining settings, saved alongside the weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Arch {
    /// Frames per temporal window (odd).
    pub window: usize,
    /// Frames per fused sequence.
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    /// Side of the square spatial patches.
    pub patch: usize,
    pub streams: Streams,
}

impl Arch {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.window.is_multiple_of(2) {
            return bad(format!("window {} must be odd", self.window));
        }
        if self.seq_len == 0 || self.d_model == 0 || self.n_heads == 0 || self.patch == 0 {
            return bad("seq_len, d_model, n_heads and patch must be positive".into());
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return bad(format!(
                "d_model {} not divisible by {} heads",
                self.d_model, self.n_heads
            ));
        }
        Ok(())
    }

    pub fn mask_dim(&self) -> usize {
        self.patch * self.patch * N_MASK_CHANNELS
    }

    pub fn depth_dim(&self) -> usize {
        self.patch * self.patch
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub window: usize,
    pub seq_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub patch: usize,
    pub lr: f64,
    pub epochs: usize,
    /// Sequences per optimizer step.
    pub batch_size: usize,
    pub seed: u64,
    pub extraction: ExtractionConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            window: 9,
            seq_len: 32,
            d_model: 64,
            n_heads: 4,
            patch: 8,
            lr: 1e-3,
            epochs: 30,
            batch_size: 8,
            seed: 7,
            extraction: ExtractionConfig::default(),
        }
    }
}

impl ModelConfig {
    pub fn arch(&self, streams: Streams) -> Arch {
        Arch {
            window: self.window,
            seq_len: self.seq_len,
            d_model: self.d_model,
            n_heads: self.n_heads,
            patch: self.patch,
            streams,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.arch(Streams::Both).validate()?;
        self.extraction.validate()?;
        if !(self.lr.is_finite() && self.lr > 0.0) {
            return Err(Error::Config(format!("lr {} must be positive", self.lr)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Init {
    Xavier,
    Zeros,
    Ones,
}

type Spec = (String, Vec<usize>, Init);

fn ln_specs(out: &mut Vec<Spec>, p: &str, d: usize) {
    out.push((format!("{p}.g"), vec![d], Init::Ones));
    out.push((format!("{p}.b"), vec![d], Init::Zeros));
}

fn attn_specs(out: &mut Vec<Spec>, p: &str, d: usize) {
    for m in ["q", "k", "v", "o"] {
        out.push((format!("{p}.w{m}"), vec![d, d], Init::Xavier));
        out.push((format!("{p}.b{m}"), vec![d], Init::Zeros));
    }
}

fn mlp_specs(out: &mut Vec<Spec>, p: &str, d: usize) {
    out.push((format!("{p}.w1"), vec![d, 2 * d], Init::Xavier));
    out.push((format!("{p}.b1"), vec![2 * d], Init::Zeros));
    out.push((format!("{p}.w2"), vec![2 * d, d], Init::Xavier));
    out.push((format!("{p}.b2"), vec![d], Init::Zeros));
}

/// Names, shapes and initializers of every trainable tensor, in a fixed order.
fn param_specs(a: &Arch) -> Vec<Spec> {
    let d = a.d_model;
    let mut out = Vec::new();
    let mut streams = Vec::new();
    if a.streams.uses_mask() {
        streams.push(("mask", a.mask_dim()));
    }
    if a.streams.uses_depth() {
        streams.push(("depth", a.depth_dim()));
    }
    for &(s, f) in &streams {
        out.push((format!("{s}.patch.w"), vec![f, d], Init::Xavier));
        out.push((format!("{s}.patch.b"), vec![d], Init::Zeros));
        ln_specs(&mut out, &format!("{s}.block.ln1"), d);
        attn_specs(&mut out, &format!("{s}.block.attn"), d);
        ln_specs(&mut out, &format!("{s}.block.ln2"), d);
        mlp_specs(&mut out, &format!("{s}.block.mlp"), d);
    }
    for &(s, _) in &streams {
        if a.streams == Streams::Both {
            attn_specs(&mut out, &format!("fusion.{s}.attn"), d);
        }
        ln_specs(&mut out, &format!("fusion.{s}.ln"), d);
        mlp_specs(&mut out, &format!("fusion.{s}.mlp"), d);
    }
    out.push(("head.w".into(), vec![2 * d, N_EVENT_CLASSES], Init::Xavier));
    out.push(("head.b".into(), vec![N_EVENT_CLASSES], Init::Zeros));
    out
}

/// Trainable tensors plus the fixed feature standardization and settings
/// needed to run them.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub arch: Arch,
    pub extraction: ExtractionConfig,
    pub names: Vec<String>,
    pub tensors: Vec<Tensor>,
    pub norm: FeatureNorm,
    index: BTreeMap<String, usize>,
}

impl ModelParams {
    /// Xavier-uniform weights, zero biases, unit layer-norm gains. Draws are
    /// taken from a stream seeded with `seed`, in parameter order.
    pub fn init(arch: Arch, extraction: ExtractionConfig, norm: FeatureNorm, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = SimRng::new(seed);
        let mut names = Vec::new();
        let mut tensors = Vec::new();
        for (name, shape, init) in param_specs(&arch) {
            let n: usize = shape.iter().product();
            let data = match init {
                Init::Zeros => vec![0.0; n],
                Init::Ones => vec![1.0; n],
                Init::Xavier => {
                    let a = (6.0 / (shape[0] + shape[1]) as f64).sqrt();
                    (0..n).map(|_| rng.uniform(-a, a)).collect()
                }
            };
            names.push(name);
            tensors.push(Tensor::new(shape, data)?);
        }
        Self::assemble(arch, extraction, names, tensors, norm)
    }

    fn assemble(
        arch: Arch,
        extraction: ExtractionConfig,
        names: Vec<String>,
        tensors: Vec<Tensor>,
        norm: FeatureNorm,
    ) -> Result<Self> {
        norm.check(&arch)?;
        let index = names.iter().enumerate().map(|(i, n)| (n.clone(), i)).collect();
        Ok(Self {
            arch,
            extraction,
            names,
            tensors,
            norm,
            index,
        })
    }

    pub fn param_count(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index_of(name).map(|i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index_of(name).map(|i| &mut self.tensors[i])
    }

    /// Serializes weights, standardization vectors (`norm.*`) and settings
    /// (`meta.*`, one value each) into a parameter container.
    pub fn to_container(&self) -> Result<ParamContainer> {
        let mut c = ParamContainer::new();
        for (n, t) in self.names.iter().zip(&self.tensors) {
            c.push_tensor(n, t)?;
        }
        for (name, v) in self.norm.entries() {
            c.push(ParamEntry {
                name: name.into(),
                shape: vec![v.len()],
                values: v.iter().map(|&x| x as f32).collect(),
            })?;
        }
        let a = &self.arch;
        let e = &self.extraction;
        let meta: [(&str, f32); 10] = [
            ("meta.window", a.window as f32),
            ("meta.seq_len", a.seq_len as f32),
            ("meta.d_model", a.d_model as f32),
            ("meta.n_heads", a.n_heads as f32),
            ("meta.patch", a.patch as f32),
            ("meta.streams", a.streams.code()),
            ("meta.threshold", e.threshold as f32),
            ("meta.smooth_width", e.smooth_width as f32),
            ("meta.merge_gap", e.merge_gap as f32),
            ("meta.min_len", e.min_len as f32),
        ];
        for (name, v) in meta {
            c.push(ParamEntry {
                name: name.into(),
                shape: vec![1],
                values: vec![v],
            })?;
        }
        Ok(c)
    }

    pub fn from_container(c: &ParamContainer) -> Result<Self> {
        let bad = |m: String| Error::Validation(format!("parameter file: {m}"));
        let scalar = |name: &str| -> Result<f32> {
            match c.get(name) {
                Some(e) if e.values.len() == 1 => Ok(e.values[0]),
                _ => Err(bad(format!("missing scalar {name}"))),
            }
        };
        let count = |name: &str| -> Result<usize> {
            let v = scalar(name)?;
            if v >= 0.0 && v.fract() == 0.0 {
                Ok(v as usize)
            } else {
                Err(bad(format!("{name} = {v} is not a count")))
            }
        };
        let streams = Streams::from_code(scalar("meta.streams")?).ok_or_else(|| bad("unknown meta.streams".into()))?;
        let arch = Arch {
            window: count("meta.window")?,
            seq_len: count("meta.seq_len")?,
            d_model: count("meta.d_model")?,
            n_heads: count("meta.n_heads")?,
            patch: count("meta.patch")?,
            streams,
        };
        arch.validate()?;
        let extraction = ExtractionConfig {
            threshold: scalar("meta.threshold")? as f64,
            smooth_width: count("meta.smooth_width")?,
            merge_gap: count("meta.merge_gap")?,
            min_len: count("meta.min_len")?,
        };
        extraction.validate()?;
        let widen = |name: &str| {
            c.get(name)
                .map(|e| e.values.iter().map(|&v| v as f64).collect::<Vec<f64>>())
        };
        let norm = FeatureNorm {
            mask_mean: widen("norm.mask.mean"),
            mask_std: widen("norm.mask.std"),
            depth_mean: widen("norm.depth.mean"),
            depth_std: widen("norm.depth.std"),
        };
        let specs = param_specs(&arch);
        let mut names = Vec::with_capacity(specs.len());
        let mut tensors = Vec::with_capacity(specs.len());
        for (name, shape, _) in &specs {
            let e = c.get(name).ok_or_else(|| bad(format!("missing tensor {name}")))?;
            if &e.shape != shape {
                return Err(bad(format!("{name} has shape {:?}, expected {shape:?}", e.shape)));
            }
            names.push(name.clone());
            tensors.push(c.tensor(name).expect("present"));
        }
        let known = specs.len() + norm.entries().len() + 10;
        if c.entries.len() != known {
            let extra: Vec<&str> = c
                .entries
                .iter()
                .map(|e| e.name.as_str())
                .filter(|n| !n.starts_with("meta.") && !n.starts_with("norm.") && !names.iter().any(|m| m == n))
                .collect();
            return Err(bad(format!("unexpected entries {extra:?}")));
        }
        let p = Self::assemble(arch, extraction, names, tensors, norm)?;
        if p.tensors.iter().any(|t| !t.all_finite()) {
            return Err(bad("non-finite weights".into()));
        }
        Ok(p)
    }
}
