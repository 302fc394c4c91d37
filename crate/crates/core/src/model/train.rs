use serde::{Deserialize, Serialize};

use super::net::{forward_chunks, Bound};
use super::predict::{detect_trial, make_batch};
use super::{fit_feature_norm, ModelConfig, ModelParams, Streams, TrialFeatures};
use crate::error::{Error, Result};
use crate::metrics::{map_at, GtSegment, DEFAULT_THRESHOLDS};
use crate::sim::rng::SimRng;
use crate::sim::{EventSegment, TrialRecording, N_EVENT_CLASSES};
use crate::tensor::{AdamConfig, AdamState, Graph, Tensor, TensorError};

/// Multi-hot per-frame targets: frame `f` is positive for a class when its
/// midpoint `(f + 0.5) / fps` lies in `[start, end)` of an event of that class.
pub fn frame_labels(events: &[EventSegment], fps: f64, n_frames: usize) -> Vec<[f64; N_EVENT_CLASSES]> {
    let mut out = vec![[0.0; N_EVENT_CLASSES]; n_frames];
    for (f, row) in out.iter_mut().enumerate() {
        let t = (f as f64 + 0.5) / fps;
        for e in events {
            if e.start_s <= t && t < e.end_s {
                row[e.class.index()] = 1.0;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    /// Mean BCE over the epoch's optimizer steps.
    pub train_loss: f64,
    /// Bias-corrected moving average of the step losses at epoch end.
    pub smoothed_loss: f64,
    /// Average mAP on the validation trials, when they hold any events.
    pub val_avg_map: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub streams: Streams,
    pub param_count: usize,
    pub epochs: Vec<EpochLog>,
    /// Epoch whose weights were kept (1-based).
    pub best_epoch: usize,
    pub warnings: Vec<String>,
}

const EMA_DECAY: f64 = 0.9;

struct Sample {
    feats: TrialFeatures,
    labels: Vec<[f64; N_EVENT_CLASSES]>,
}

/// `(start, len)` training chunks of one trial. Full chunks follow a grid
/// offset by `phase`; frames before the first grid chunk and after the last
/// are covered by extra chunks aligned to either end.
fn epoch_chunks(n: usize, seq_len: usize, phase: usize) -> Vec<(usize, usize)> {
    if n <= seq_len {
        return vec![(0, n)];
    }
    let phase = phase % seq_len;
    let mut out = Vec::new();
    if phase > 0 {
        out.push((0, seq_len));
    }
    let mut s = phase;
    while s + seq_len <= n {
        out.push((s, seq_len));
        s += seq_len;
    }
    if s < n {
        out.push((n - seq_len, seq_len));
    }
    out
}

fn divergence(epoch: usize, batch: usize, loss: f64) -> Error {
    Error::Divergence { epoch, batch, loss }
}

/// Trains a model on `train` with Adam on per-frame BCE. Feature
/// standardization is fit on `train`. After each epoch the model is scored on
/// `val`, and the weights with the best validation average mAP are returned
/// (the last epoch's when `val` has no events).
pub fn train(
    train: &[TrialRecording],
    val: &[TrialRecording],
    config: &ModelConfig,
    streams: Streams,
) -> Result<(ModelParams, TrainLog)> {
    config.validate()?;
    if train.is_empty() {
        return Err(Error::Validation("no training trials".into()));
    }
    let arch = config.arch(streams);
    let norm = fit_feature_norm(train, &arch)?;
    let params = ModelParams::init(arch, config.extraction, norm, config.seed)?;
    train_from(params, train, val, config)
}

pub(crate) fn train_from(
    mut params: ModelParams,
    train: &[TrialRecording],
    val: &[TrialRecording],
    config: &ModelConfig,
) -> Result<(ModelParams, TrainLog)> {
    let arch = params.arch;
    let samples: Vec<Sample> = train
        .iter()
        .map(|r| {
            Ok(Sample {
                feats: TrialFeatures::new(r, &arch, &params.norm)?,
                labels: frame_labels(&r.events, r.fps, r.n_frames()),
            })
        })
        .collect::<Result<_>>()?;
    let val_feats: Vec<TrialFeatures> = val
        .iter()
        .map(|r| TrialFeatures::new(r, &arch, &params.norm))
        .collect::<Result<_>>()?;
    let val_gt: Vec<GtSegment> = val
        .iter()
        .flat_map(|r| GtSegment::from_events(r.trial_id, &r.events))
        .collect();

    let param_count = params.param_count();
    log::info!("training {} model with {param_count} parameters", arch.streams.name());

    let mut adam = AdamState::new(
        AdamConfig {
            lr: config.lr,
            ..AdamConfig::default()
        },
        &params.tensors,
    );
    let mut rng = SimRng::new(config.seed ^ 0x7472_6169_6e00_0000);
    let mut grads: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.len()]).collect();
    let mut ema = 0.0;
    let mut ema_steps = 0i32;
    let mut epochs = Vec::new();
    let mut warnings = Vec::new();
    let mut best: Option<(f64, usize, Vec<Tensor>)> = None;

    for epoch in 1..=config.epochs {
        let mut chunks: Vec<(usize, usize, usize)> = Vec::new();
        for (i, s) in samples.iter().enumerate() {
            let phase = rng.uniform_int(0, arch.seq_len as i64 - 1) as usize;
            chunks.extend(
                epoch_chunks(s.feats.n_frames, arch.seq_len, phase)
                    .into_iter()
                    .map(|(a, l)| (i, a, l)),
            );
        }
        rng.shuffle(&mut chunks);

        let mut loss_sum = 0.0;
        let mut n_steps = 0usize;
        for (bi, batch) in chunks.chunks(config.batch_size).enumerate() {
            grads.iter_mut().for_each(|g| g.fill(0.0));
            let total_frames: usize = batch.iter().map(|c| c.2).sum();
            let mut lens: Vec<usize> = batch.iter().map(|c| c.2).collect();
            lens.sort_unstable();
            lens.dedup();
            let mut batch_loss = 0.0;
            for len in lens {
                let group: Vec<(&TrialFeatures, usize, usize)> = batch
                    .iter()
                    .filter(|c| c.2 == len)
                    .map(|&(i, s, l)| (&samples[i].feats, s, l))
                    .collect();
                let weight = (group.len() * len) as f64 / total_frames as f64;
                let x = make_batch(&params, &group)?;
                let mut targets = Vec::with_capacity(group.len() * len * N_EVENT_CLASSES);
                for &(i, s, l) in batch.iter().filter(|c| c.2 == len) {
                    targets.extend(samples[i].labels[s..s + l].iter().flatten());
                }
                let mut g = Graph::new();
                let b = Bound::new(&mut g, &params, true);
                let step = |g: &mut Graph| -> std::result::Result<f64, TensorError> {
                    let logits = forward_chunks(g, &b, &x).map_err(|e| match e {
                        Error::Tensor(t) => t,
                        other => TensorError::InvalidShape {
                            shape: vec![],
                            reason: other.to_string(),
                        },
                    })?;
                    let t = g.constant(Tensor::new(vec![group.len(), len, N_EVENT_CLASSES], targets.clone())?);
                    let loss = g.bce_with_logits(logits, t)?;
                    let loss = g.scale(loss, weight)?;
                    g.backward(loss)?;
                    Ok(g.value(loss).item())
                };
                let loss = match step(&mut g) {
                    Ok(l) => l,
                    Err(TensorError::NonFinite { .. }) => return Err(divergence(epoch, bi, f64::NAN)),
                    Err(e) => return Err(e.into()),
                };
                batch_loss += loss;
                for (acc, &v) in grads.iter_mut().zip(&b.vars) {
                    if let Some(gr) = g.grad(v) {
                        acc.iter_mut().zip(gr).for_each(|(a, x)| *a += x);
                    }
                }
            }
            if !batch_loss.is_finite() || grads.iter().flatten().any(|v| !v.is_finite()) {
                return Err(divergence(epoch, bi, batch_loss));
            }
            let mut refs: Vec<&mut Tensor> = params.tensors.iter_mut().collect();
            let grefs: Vec<&[f64]> = grads.iter().map(Vec::as_slice).collect();
            adam.step(&mut refs, &grefs)?;
            if params.tensors.iter().any(|t| !t.all_finite()) {
                return Err(divergence(epoch, bi, batch_loss));
            }
            loss_sum += batch_loss;
            n_steps += 1;
            ema = EMA_DECAY * ema + (1.0 - EMA_DECAY) * batch_loss;
            ema_steps += 1;
        }

        let smoothed = ema / (1.0 - EMA_DECAY.powi(ema_steps));
        if let Some(prev) = epochs.last().map(|e: &EpochLog| e.smoothed_loss) {
            if smoothed > prev {
                let w = format!("smoothed training loss rose in epoch {epoch}: {prev:.6} -> {smoothed:.6}");
                log::warn!("{w}");
                warnings.push(w);
            }
        }
        let val_avg_map = validate(&params, &val_feats, &val_gt)?;
        let train_loss = loss_sum / n_steps.max(1) as f64;
        log::info!(
            "epoch {epoch}: loss {train_loss:.5} smoothed {smoothed:.5} val avg mAP {}",
            val_avg_map.map_or("n/a".to_string(), |m| format!("{:.2}", 100.0 * m))
        );
        if let Some(m) = val_avg_map {
            if best.as_ref().is_none_or(|(b, _, _)| m > *b) {
                best = Some((m, epoch, params.tensors.clone()));
            }
        }
        epochs.push(EpochLog {
            epoch,
            train_loss,
            smoothed_loss: smoothed,
            val_avg_map,
        });
    }

    let mut best_epoch = config.epochs;
    if let Some((_, e, tensors)) = best {
        best_epoch = e;
        params.tensors = tensors;
    }
    let log = TrainLog {
        streams: arch.streams,
        param_count,
        epochs,
        best_epoch,
        warnings,
    };
    Ok((params, log))
}

fn validate(params: &ModelParams, feats: &[TrialFeatures], gts: &[GtSegment]) -> Result<Option<f64>> {
    if gts.is_empty() {
        return Ok(None);
    }
    let mut dets = Vec::new();
    for f in feats {
        dets.extend(detect_trial(f, params)?);
    }
    Ok(Some(map_at(&dets, gts, &DEFAULT_THRESHOLDS)?.avg_map))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::{extract_segments, ExtractionConfig};
    use crate::sim::{generate_trial, EventClass, TrialConfig};
    use proptest::prelude::*;

    #[test]
    fn labels_use_frame_midpoints() {
        let ev = [EventSegment {
            class: EventClass::GurneyEntering,
            start_s: 1.0,
            end_s: 2.6,
        }];
        let l = frame_labels(&ev, 2.0, 6);
        let col: Vec<f64> = l.iter().map(|r| r[EventClass::GurneyEntering.index()]).collect();
        assert_eq!(col, vec![0.0, 0.0, 1.0, 1.0, 1.0, 0.0]);
        assert!(l.iter().all(|r| r.iter().filter(|&&v| v > 0.0).count() <= 1));
    }

    #[test]
    fn chunk_cover() {
        assert_eq!(epoch_chunks(5, 8, 3), vec![(0, 5)]);
        assert_eq!(epoch_chunks(20, 8, 0), vec![(0, 8), (8, 8), (12, 8)]);
        assert_eq!(epoch_chunks(20, 8, 3), vec![(0, 8), (3, 8), (11, 8), (12, 8)]);
        for phase in 0..8 {
            let mut hit = [false; 37];
            for (s, l) in epoch_chunks(37, 8, phase) {
                assert_eq!(l, 8);
                hit[s..s + l].iter_mut().for_each(|h| *h = true);
            }
            assert!(hit.iter().all(|&h| h));
        }
    }

    proptest! {
        #[test]
        fn hard_labels_round_trip(
            bits in prop::collection::vec(prop::collection::vec(any::<bool>(), 5), 1..60),
            fps in prop::sample::select(vec![0.5, 1.0, 2.0, 4.0]),
        ) {
            let probs: Vec<[f64; 5]> = bits
                .iter()
                .map(|r| std::array::from_fn(|c| if r[c] { 1.0 } else { 0.0 }))
                .collect();
            let cfg = ExtractionConfig { threshold: 0.5, smooth_width: 1, merge_gap: 0, min_len: 1 };
            let segs = extract_segments(&probs, &cfg, fps, 0).unwrap();
            let events: Vec<EventSegment> = segs
                .iter()
                .map(|s| EventSegment { class: s.class, start_s: s.start_s, end_s: s.end_s })
                .collect();
            prop_assert_eq!(frame_labels(&events, fps, probs.len()), probs);
        }
    }

    fn tiny_data() -> (Vec<TrialRecording>, Vec<TrialRecording>) {
        let cfg = |seed| TrialConfig {
            seed,
            height: 16,
            width: 16,
            ..TrialConfig::default()
        };
        let mut tr: Vec<TrialRecording> = (0..2)
            .map(|i| generate_trial(i, &cfg(11 + i as u64)).unwrap())
            .collect();
        for r in &mut tr {
            r.frames.truncate(60);
        }
        let mut va = vec![generate_trial(9, &cfg(40)).unwrap()];
        va[0].frames.truncate(40);
        (tr, va)
    }

    fn tiny_config() -> ModelConfig {
        ModelConfig {
            window: 3,
            seq_len: 8,
            d_model: 8,
            n_heads: 2,
            patch: 4,
            epochs: 2,
            batch_size: 4,
            lr: 3e-3,
            ..ModelConfig::default()
        }
    }

    #[test]
    fn seeded_training_is_bit_identical() {
        let (tr, va) = tiny_data();
        let (p1, l1) = train(&tr, &va, &tiny_config(), Streams::Both).unwrap();
        let (p2, l2) = train(&tr, &va, &tiny_config(), Streams::Both).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(l1, l2);
        assert_eq!(l1.param_count, p1.param_count());
        let mut other = tiny_config();
        other.seed = 8;
        let (p3, _) = train(&tr, &va, &other, Streams::Both).unwrap();
        assert_ne!(p1.tensors, p3.tensors);
    }

    #[test]
    fn two_epoch_loss_is_monotone_or_flagged() {
        let (tr, va) = tiny_data();
        let (_, log) = train(&tr, &va, &tiny_config(), Streams::Mask).unwrap();
        assert_eq!(log.epochs.len(), 2);
        let s: Vec<f64> = log.epochs.iter().map(|e| e.smoothed_loss).collect();
        assert!(s[1] <= s[0] || !log.warnings.is_empty());
        assert!(log.epochs.iter().all(|e| e.train_loss.is_finite()));
    }

    #[test]
    fn nan_weights_abort_with_divergence() {
        let (tr, va) = tiny_data();
        let cfg = tiny_config();
        let arch = cfg.arch(Streams::Depth);
        let norm = fit_feature_norm(&tr, &arch).unwrap();
        let mut p = ModelParams::init(arch, cfg.extraction, norm, 1).unwrap();
        p.get_mut("head.w").unwrap().data_mut()[0] = f64::NAN;
        match train_from(p, &tr, &va, &cfg) {
            Err(Error::Divergence { epoch, .. }) => assert_eq!(epoch, 1),
            other => panic!("expected divergence, got {other:?}"),
        }
    }

    #[test]
    fn empty_training_set_is_rejected() {
        assert!(train(&[], &[], &tiny_config(), Streams::Both).is_err());
    }
}
