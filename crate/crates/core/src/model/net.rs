use super::{ModelParams, Streams};
use crate::error::{Error, Result};
use crate::sim::N_EVENT_CLASSES;
use crate::tensor::{Graph, Tensor, Var};

const LN_EPS: f64 = 1e-5;

/// Standard sinusoidal position table `[n, d]`: even columns `sin`, odd
/// columns `cos`, wavelengths growing geometrically up to 10000·2π.
pub fn sinusoidal(n: usize, d: usize) -> Tensor {
    let mut data = Vec::with_capacity(n * d);
    for pos in 0..n {
        for i in 0..d {
            let freq = 1.0 / 10000f64.powf((i - i % 2) as f64 / d as f64);
            let a = pos as f64 * freq;
            data.push(if i % 2 == 0 { a.sin() } else { a.cos() });
        }
    }
    Tensor::new(vec![n, d], data).expect("consistent shape")
}

/// Model parameters placed on a graph.
pub struct Bound<'p> {
    pub params: &'p ModelParams,
    pub vars: Vec<Var>,
}

impl<'p> Bound<'p> {
    /// Trainable leaves when `trainable`, constants otherwise.
    pub fn new(g: &mut Graph, params: &'p ModelParams, trainable: bool) -> Self {
        let vars = params.tensors.iter().map(|t| g.leaf(t.clone(), trainable)).collect();
        Self { params, vars }
    }

    pub fn var(&self, name: &str) -> Var {
        let i = self
            .params
            .index_of(name)
            .unwrap_or_else(|| panic!("parameter {name} missing for {:?}", self.params.arch.streams));
        self.vars[i]
    }
}

fn linear(g: &mut Graph, b: &Bound, x: Var, w: &str, bias: &str) -> Result<Var> {
    let y = g.matmul(x, b.var(w))?;
    Ok(g.add(y, b.var(bias))?)
}

fn layer_norm(g: &mut Graph, b: &Bound, x: Var, p: &str) -> Result<Var> {
    Ok(g.layer_norm(x, b.var(&format!("{p}.g")), b.var(&format!("{p}.b")), LN_EPS)?)
}

fn mlp(g: &mut Graph, b: &Bound, x: Var, p: &str) -> Result<Var> {
    let h = linear(g, b, x, &format!("{p}.w1"), &format!("{p}.b1"))?;
    let h = g.gelu(h)?;
    linear(g, b, h, &format!("{p}.w2"), &format!("{p}.b2"))
}

/// Multi-head attention over the second-to-last axis. `q_in` and `kv_in`
/// have shape `[.., n, d]` (rank 2 or 3, matching leading extents).
fn mha(g: &mut Graph, b: &Bound, p: &str, q_in: Var, kv_in: Var) -> Result<Var> {
    let heads = b.params.arch.n_heads;
    let d = b.params.arch.d_model;
    let dh = d / heads;
    let q = linear(g, b, q_in, &format!("{p}.wq"), &format!("{p}.bq"))?;
    let k = linear(g, b, kv_in, &format!("{p}.wk"), &format!("{p}.bk"))?;
    let v = linear(g, b, kv_in, &format!("{p}.wv"), &format!("{p}.bv"))?;
    let axis = g.shape(q).len() - 1;
    let mut outs = Vec::with_capacity(heads);
    for h in 0..heads {
        let (lo, hi) = (h * dh, (h + 1) * dh);
        let qh = g.slice(q, axis, lo, hi)?;
        let kh = g.slice(k, axis, lo, hi)?;
        let vh = g.slice(v, axis, lo, hi)?;
        let kt = g.transpose(kh)?;
        let s = g.matmul(qh, kt)?;
        let s = g.scale(s, 1.0 / (dh as f64).sqrt())?;
        let a = g.softmax(s)?;
        outs.push(g.matmul(a, vh)?);
    }
    let cat = g.concat(&outs, axis)?;
    linear(g, b, cat, &format!("{p}.wo"), &format!("{p}.bo"))
}

/// Pre-norm transformer block over the frame tokens of each window.
fn encoder_block(g: &mut Graph, b: &Bound, p: &str, x: Var) -> Result<Var> {
    let h = layer_norm(g, b, x, &format!("{p}.ln1"))?;
    let a = mha(g, b, &format!("{p}.attn"), h, h)?;
    let x = g.add(x, a)?;
    let h = layer_norm(g, b, x, &format!("{p}.ln2"))?;
    let m = mlp(g, b, h, &format!("{p}.mlp"))?;
    Ok(g.add(x, m)?)
}

/// Encodes `len` consecutive windows of one stream.
///
/// `feats` is `[B, len + T - 1, F]`: pooled features of every frame the
/// windows touch. Each frame is projected once; window `i` takes token rows
/// `i..i+T`, adds within-window positions, runs one attention block and is
/// mean-pooled over time. Output `[B, len, d]`.
pub fn encode_stream(g: &mut Graph, b: &Bound, stream: &str, feats: Var, len: usize) -> Result<Var> {
    let arch = b.params.arch;
    let (t, d) = (arch.window, arch.d_model);
    let shape = g.shape(feats).to_vec();
    if shape.len() != 3 || shape[1] != len + t - 1 {
        return Err(Error::Validation(format!(
            "{stream} features have shape {shape:?}, expected [B, {}, F]",
            len + t - 1
        )));
    }
    let batch = shape[0];
    let tok = linear(g, b, feats, &format!("{stream}.patch.w"), &format!("{stream}.patch.b"))?;
    let mut cols = Vec::with_capacity(t);
    for j in 0..t {
        let s = g.slice(tok, 1, j, j + len)?;
        cols.push(g.reshape(s, &[batch, len, 1, d])?);
    }
    let win = g.concat(&cols, 2)?;
    let win = g.reshape(win, &[batch * len, t, d])?;
    let pos = g.constant(sinusoidal(t, d));
    let win = g.add(win, pos)?;
    let y = encoder_block(g, b, &format!("{stream}.block"), win)?;
    let pooled = g.mean_axis(y, 1)?;
    Ok(g.reshape(pooled, &[batch, len, d])?)
}

/// One window `[T, F]` of one stream to a `[d]` embedding.
pub fn encode_window(g: &mut Graph, b: &Bound, stream: &str, feats: Var) -> Result<Var> {
    let shape = g.shape(feats).to_vec();
    if shape.len() != 2 || shape[0] != b.params.arch.window {
        return Err(Error::Validation(format!("window features have shape {shape:?}")));
    }
    let x = g.reshape(feats, &[1, shape[0], shape[1]])?;
    let e = encode_stream(g, b, stream, x, 1)?;
    Ok(g.reshape(e, &[b.params.arch.d_model])?)
}

/// Bi-modal fusion of aligned stream embeddings `[.., len, d]` with sequence
/// positions `pos` `[len, d]`. Output `[.., len, 2d]`, mask half first.
///
/// With both streams each one attends to the other and keeps a residual;
/// a single stream passes its position-encoded embedding straight to the
/// residual MLP and the missing half is zeros.
pub fn bimodal_fuse(g: &mut Graph, b: &Bound, e_m: Option<Var>, e_d: Option<Var>, pos: Var) -> Result<Var> {
    let streams = b.params.arch.streams;
    let present = match (streams, e_m, e_d) {
        (Streams::Both, Some(m), Some(d)) => {
            if g.shape(m) != g.shape(d) {
                return Err(Error::Validation(format!(
                    "stream embeddings differ in shape: {:?} vs {:?}",
                    g.shape(m),
                    g.shape(d)
                )));
            }
            vec![m, d]
        }
        (Streams::Mask, Some(m), _) => vec![m],
        (Streams::Depth, _, Some(d)) => vec![d],
        _ => return Err(Error::Validation("fusion is missing a stream embedding".into())),
    };
    let with_pos = present
        .iter()
        .map(|&e| g.add(e, pos))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let names: Vec<&str> = match streams {
        Streams::Both => vec!["mask", "depth"],
        Streams::Mask => vec!["mask"],
        Streams::Depth => vec!["depth"],
    };
    let mut fused = Vec::with_capacity(2);
    for (i, s) in names.iter().enumerate() {
        let mut y = with_pos[i];
        if streams == Streams::Both {
            let other = with_pos[1 - i];
            let a = mha(g, b, &format!("fusion.{s}.attn"), y, other)?;
            y = g.add(y, a)?;
        }
        let h = layer_norm(g, b, y, &format!("fusion.{s}.ln"))?;
        let m = mlp(g, b, h, &format!("fusion.{s}.mlp"))?;
        fused.push(g.add(y, m)?);
    }
    if streams != Streams::Both {
        let zeros = g.constant(Tensor::zeros(g.shape(fused[0])));
        if streams == Streams::Mask {
            fused.push(zeros);
        } else {
            fused.insert(0, zeros);
        }
    }
    let axis = g.shape(fused[0]).len() - 1;
    Ok(g.concat(&fused, axis)?)
}

/// Per-frame logits `[.., len, 5]`.
pub fn classify(g: &mut Graph, b: &Bound, fused: Var) -> Result<Var> {
    linear(g, b, fused, "head.w", "head.b")
}

/// A batch of equal-length chunks: `len` window centers each, with the
/// features of the `len + T - 1` frames they touch.
#[derive(Debug, Clone, PartialEq)]
pub struct ChunkBatch {
    pub batch: usize,
    pub len: usize,
    /// `[B, len + T - 1, 15·patch²]` when the mask stream is used.
    pub mask: Option<Tensor>,
    /// `[B, len + T - 1, patch²]` when the depth stream is used.
    pub depth: Option<Tensor>,
}

/// Full forward pass to logits `[B, len, 5]`.
pub fn forward_chunks(g: &mut Graph, b: &Bound, x: &ChunkBatch) -> Result<Var> {
    let arch = b.params.arch;
    let mut enc = |feats: &Option<Tensor>, name: &str, used: bool| -> Result<Option<Var>> {
        if !used {
            return Ok(None);
        }
        let f = feats
            .as_ref()
            .ok_or_else(|| Error::Validation(format!("{name} features missing")))?;
        let v = g.constant(f.clone());
        encode_stream(g, b, name, v, x.len).map(Some)
    };
    let e_m = enc(&x.mask, "mask", arch.streams.uses_mask())?;
    let e_d = enc(&x.depth, "depth", arch.streams.uses_depth())?;
    let pos = g.constant(sinusoidal(x.len, arch.d_model));
    let fused = bimodal_fuse(g, b, e_m, e_d, pos)?;
    let logits = classify(g, b, fused)?;
    debug_assert_eq!(g.shape(logits), &[x.batch, x.len, N_EVENT_CLASSES]);
    Ok(logits)
}
