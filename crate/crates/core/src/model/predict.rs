use super::input::gather_chunk;
use super::net::{forward_chunks, Bound, ChunkBatch};
use super::{ModelParams, TrialFeatures};
use crate::error::{Error, Result};
use crate::events::{extract_segments, DetectionSegment};
use crate::sim::{TrialRecording, N_EVENT_CLASSES};
use crate::tensor::{sigmoid, Graph, Tensor};

/// Chunk start frames for inference: stride `seq_len`, with the last chunk
/// right-aligned to the trial end. Every chunk has `min(seq_len, n)` frames.
pub fn chunk_starts(n_frames: usize, seq_len: usize) -> Vec<usize> {
    if n_frames <= seq_len {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..)
        .map(|k| k * seq_len)
        .take_while(|s| s + seq_len <= n_frames)
        .collect();
    if starts.last().is_some_and(|&s| s + seq_len < n_frames) {
        starts.push(n_frames - seq_len);
    }
    starts
}

/// Assembles equal-length chunks `(trial, start, len)` into one batch.
pub(crate) fn make_batch(params: &ModelParams, chunks: &[(&TrialFeatures, usize, usize)]) -> Result<ChunkBatch> {
    let arch = params.arch;
    let len = chunks.first().map_or(0, |c| c.2);
    if chunks.iter().any(|c| c.2 != len) {
        return Err(Error::Validation("chunks in a batch must have equal length".into()));
    }
    let rows = len + arch.window - 1;
    let stack = |used: bool, pick: fn(&TrialFeatures) -> &Option<Vec<f64>>, dim: usize| -> Result<Option<Tensor>> {
        if !used {
            return Ok(None);
        }
        let mut data = Vec::with_capacity(chunks.len() * rows * dim);
        for &(feats, s, l) in chunks {
            let f = pick(feats)
                .as_ref()
                .ok_or_else(|| Error::Validation(format!("trial {} lacks features for this model", feats.trial_id)))?;
            data.extend(gather_chunk(f, dim, feats.n_frames, s, l, arch.window));
        }
        Ok(Some(Tensor::new(vec![chunks.len(), rows, dim], data)?))
    };
    Ok(ChunkBatch {
        batch: chunks.len(),
        len,
        mask: stack(arch.streams.uses_mask(), |f| &f.mask, arch.mask_dim())?,
        depth: stack(arch.streams.uses_depth(), |f| &f.depth, arch.depth_dim())?,
    })
}

/// Per-frame class probabilities `n_frames × 5` from precomputed features.
pub fn predict_features(feats: &TrialFeatures, params: &ModelParams) -> Result<Vec<[f64; N_EVENT_CLASSES]>> {
    let n = feats.n_frames;
    if n == 0 {
        return Err(Error::Validation("cannot predict an empty trial".into()));
    }
    let len = params.arch.seq_len.min(n);
    let starts: Vec<(usize, usize)> = chunk_starts(n, params.arch.seq_len)
        .into_iter()
        .map(|s| (s, len))
        .collect();
    let chunks: Vec<_> = starts.iter().map(|&(s, l)| (feats, s, l)).collect();
    let batch = make_batch(params, &chunks)?;
    let mut g = Graph::new();
    let b = Bound::new(&mut g, params, false);
    let logits = forward_chunks(&mut g, &b, &batch)?;
    let z = g.value(logits).data();
    let mut out = vec![[0.0; N_EVENT_CLASSES]; n];
    let mut filled = vec![false; n];
    for (ci, &(s, l)) in starts.iter().enumerate() {
        for i in 0..l {
            let f = s + i;
            if filled[f] {
                continue;
            }
            filled[f] = true;
            for c in 0..N_EVENT_CLASSES {
                out[f][c] = sigmoid(z[(ci * l + i) * N_EVENT_CLASSES + c]);
            }
        }
    }
    Ok(out)
}

pub fn predict_trial(rec: &TrialRecording, params: &ModelParams) -> Result<Vec<[f64; N_EVENT_CLASSES]>> {
    let feats = TrialFeatures::new(rec, &params.arch, &params.norm)?;
    predict_features(&feats, params)
}

/// Probabilities turned into scored segments with the model's extraction settings.
pub fn detect_trial(feats: &TrialFeatures, params: &ModelParams) -> Result<Vec<DetectionSegment>> {
    let probs = predict_features(feats, params)?;
    extract_segments(&probs, &params.extraction, feats.fps, feats.trial_id)
}
