use super::Arch;
use crate::error::{Error, Result};
use crate::sim::{DigitalTwinFrame, TrialRecording, MAX_DEPTH_M, N_MASK_CHANNELS};
use crate::tensor::Tensor;

/// Channel-major one-hot encoding (`15 × H × W`) of a class-ID mask.
pub fn one_hot_mask(mask: &[u8], height: usize, width: usize) -> Result<Vec<f64>> {
    let n = height * width;
    if mask.len() != n {
        return Err(Error::Validation(format!(
            "mask has {} cells, expected {n}",
            mask.len()
        )));
    }
    let mut out = vec![0.0; N_MASK_CHANNELS * n];
    for (i, &c) in mask.iter().enumerate() {
        if c as usize >= N_MASK_CHANNELS {
            return Err(Error::Validation(format!("mask class {c} out of range")));
        }
        out[c as usize * n + i] = 1.0;
    }
    Ok(out)
}

/// Depth divided by the 20 m range and clamped to `[0, 1]`.
pub fn normalize_depth(depth: &[f64]) -> Result<Vec<f64>> {
    depth
        .iter()
        .map(|&d| {
            if d.is_finite() && d >= 0.0 {
                Ok((d / MAX_DEPTH_M).min(1.0))
            } else {
                Err(Error::Validation(format!("depth {d} must be finite and non-negative")))
            }
        })
        .collect()
}

/// Mean over all non-overlapping `patch × patch` patches of the flattened
/// patch vectors. Patch vector layout is `[channel][dy][dx]`.
///
/// A linear patch projection followed by spatial mean-pooling equals the
/// projection of this vector, which is how the model consumes frames.
pub fn patch_pool(x: &[f64], channels: usize, height: usize, width: usize, patch: usize) -> Result<Vec<f64>> {
    check_grid(height, width, patch)?;
    if x.len() != channels * height * width {
        return Err(Error::Validation("channel grid size mismatch".into()));
    }
    let inv = 1.0 / ((height / patch) * (width / patch)) as f64;
    let mut out = vec![0.0; channels * patch * patch];
    for c in 0..channels {
        for r in 0..height {
            for col in 0..width {
                out[(c * patch + r % patch) * patch + col % patch] += x[(c * height + r) * width + col] * inv;
            }
        }
    }
    Ok(out)
}

fn check_grid(height: usize, width: usize, patch: usize) -> Result<()> {
    if patch == 0 || !height.is_multiple_of(patch) || !width.is_multiple_of(patch) {
        return Err(Error::Validation(format!(
            "{height}x{width} grid is not divisible into {patch}x{patch} patches"
        )));
    }
    Ok(())
}

/// Pooled one-hot mask features of one frame, `15 · patch²` values.
pub fn mask_features(frame: &DigitalTwinFrame, patch: usize) -> Result<Vec<f64>> {
    check_grid(frame.height, frame.width, patch)?;
    let inv = 1.0 / ((frame.height / patch) * (frame.width / patch)) as f64;
    let mut out = vec![0.0; N_MASK_CHANNELS * patch * patch];
    for r in 0..frame.height {
        for col in 0..frame.width {
            let c = frame.mask[r * frame.width + col] as usize;
            if c >= N_MASK_CHANNELS {
                return Err(Error::Validation(format!("mask class {c} out of range")));
            }
            out[(c * patch + r % patch) * patch + col % patch] += inv;
        }
    }
    Ok(out)
}

/// Pooled normalized depth features of one frame, `patch²` values.
pub fn depth_features(frame: &DigitalTwinFrame, patch: usize) -> Result<Vec<f64>> {
    patch_pool(&normalize_depth(&frame.depth)?, 1, frame.height, frame.width, patch)
}

/// Per-dimension standardization applied to pooled features before the patch
/// projection. Absent streams have `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureNorm {
    pub mask_mean: Option<Vec<f64>>,
    pub mask_std: Option<Vec<f64>>,
    pub depth_mean: Option<Vec<f64>>,
    pub depth_std: Option<Vec<f64>>,
}

impl FeatureNorm {
    /// Zero mean, unit scale for the streams `arch` uses.
    pub fn identity(arch: &Arch) -> Self {
        let (m, d) = (arch.mask_dim(), arch.depth_dim());
        let on = |used: bool, n: usize, v: f64| used.then(|| vec![v; n]);
        Self {
            mask_mean: on(arch.streams.uses_mask(), m, 0.0),
            mask_std: on(arch.streams.uses_mask(), m, 1.0),
            depth_mean: on(arch.streams.uses_depth(), d, 0.0),
            depth_std: on(arch.streams.uses_depth(), d, 1.0),
        }
    }

    pub(crate) fn check(&self, arch: &Arch) -> Result<()> {
        let ok = |v: &Option<Vec<f64>>, used: bool, n: usize, positive: bool| match v {
            Some(v) => used && v.len() == n && v.iter().all(|x| x.is_finite() && (!positive || *x > 0.0)),
            None => !used,
        };
        let (m, d) = (arch.streams.uses_mask(), arch.streams.uses_depth());
        if ok(&self.mask_mean, m, arch.mask_dim(), false)
            && ok(&self.mask_std, m, arch.mask_dim(), true)
            && ok(&self.depth_mean, d, arch.depth_dim(), false)
            && ok(&self.depth_std, d, arch.depth_dim(), true)
        {
            Ok(())
        } else {
            Err(Error::Validation(
                "feature standardization does not match the streams".into(),
            ))
        }
    }

    pub(crate) fn entries(&self) -> Vec<(&'static str, &Vec<f64>)> {
        [
            ("norm.mask.mean", &self.mask_mean),
            ("norm.mask.std", &self.mask_std),
            ("norm.depth.mean", &self.depth_mean),
            ("norm.depth.std", &self.depth_std),
        ]
        .into_iter()
        .filter_map(|(n, v)| v.as_ref().map(|v| (n, v)))
        .collect()
    }
}

fn mean_std(rows: &[Vec<f64>], dim: usize) -> (Vec<f64>, Vec<f64>) {
    let n = rows.len().max(1) as f64;
    let mut mean = vec![0.0; dim];
    for r in rows {
        mean.iter_mut().zip(r).for_each(|(m, x)| *m += x / n);
    }
    let mut var = vec![0.0; dim];
    for r in rows {
        var.iter_mut()
            .zip(r)
            .zip(&mean)
            .for_each(|((v, x), m)| *v += (x - m) * (x - m) / n);
    }
    // The floor keeps never-varying dimensions finite and near zero.
    let std = var.iter().map(|v| (v + 1e-8).sqrt()).collect();
    (mean, std)
}

/// Per-dimension mean and standard deviation of the pooled features over
/// every frame of `trials`.
pub fn fit_feature_norm(trials: &[TrialRecording], arch: &Arch) -> Result<FeatureNorm> {
    if trials.iter().all(|t| t.frames.is_empty()) {
        return Err(Error::Validation("no frames to fit feature statistics".into()));
    }
    let frames = trials.iter().flat_map(|t| &t.frames);
    let mut norm = FeatureNorm {
        mask_mean: None,
        mask_std: None,
        depth_mean: None,
        depth_std: None,
    };
    if arch.streams.uses_mask() {
        let rows = frames
            .clone()
            .map(|f| mask_features(f, arch.patch))
            .collect::<Result<Vec<_>>>()?;
        let (m, s) = mean_std(&rows, arch.mask_dim());
        norm.mask_mean = Some(m);
        norm.mask_std = Some(s);
    }
    if arch.streams.uses_depth() {
        let rows = frames
            .map(|f| depth_features(f, arch.patch))
            .collect::<Result<Vec<_>>>()?;
        let (m, s) = mean_std(&rows, arch.depth_dim());
        norm.depth_mean = Some(m);
        norm.depth_std = Some(s);
    }
    Ok(norm)
}

/// Standardized per-frame features of one trial, row-major `n_frames × dim`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialFeatures {
    pub trial_id: u32,
    pub fps: f64,
    pub n_frames: usize,
    pub mask: Option<Vec<f64>>,
    pub depth: Option<Vec<f64>>,
}

fn standardize(mut row: Vec<f64>, mean: &[f64], std: &[f64]) -> Vec<f64> {
    for ((x, m), s) in row.iter_mut().zip(mean).zip(std) {
        *x = (*x - m) / s;
    }
    row
}

impl TrialFeatures {
    pub fn new(rec: &TrialRecording, arch: &Arch, norm: &FeatureNorm) -> Result<Self> {
        norm.check(arch)?;
        if rec.frames.is_empty() {
            return Err(Error::Validation(format!("trial {} has no frames", rec.trial_id)));
        }
        let stream = |mean: &Option<Vec<f64>>,
                      std: &Option<Vec<f64>>,
                      f: fn(&DigitalTwinFrame, usize) -> Result<Vec<f64>>|
         -> Result<Option<Vec<f64>>> {
            let (Some(mean), Some(std)) = (mean, std) else {
                return Ok(None);
            };
            let mut out = Vec::with_capacity(rec.frames.len() * mean.len());
            for fr in &rec.frames {
                out.extend(standardize(f(fr, arch.patch)?, mean, std));
            }
            Ok(Some(out))
        };
        Ok(Self {
            trial_id: rec.trial_id,
            fps: rec.fps,
            n_frames: rec.frames.len(),
            mask: stream(&norm.mask_mean, &norm.mask_std, mask_features)?,
            depth: stream(&norm.depth_mean, &norm.depth_std, depth_features)?,
        })
    }
}

/// Rows for a chunk of `len` window centers starting at `start`: the
/// `len + window - 1` frames those windows touch, with edge replication.
pub(crate) fn gather_chunk(
    feats: &[f64],
    dim: usize,
    n_frames: usize,
    start: usize,
    len: usize,
    window: usize,
) -> Vec<f64> {
    let half = (window / 2) as i64;
    let mut out = Vec::with_capacity((len + window - 1) * dim);
    for j in 0..(len + window - 1) as i64 {
        let f = (start as i64 - half + j).clamp(0, n_frames as i64 - 1) as usize;
        out.extend_from_slice(&feats[f * dim..(f + 1) * dim]);
    }
    out
}

/// The `window` frames around one center frame, edge-replicated, as model
/// inputs: one-hot masks `window × 15 × H × W` and normalized depth
/// `window × H × W`.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalTwinWindow {
    pub center: usize,
    pub frames: Vec<usize>,
    pub height: usize,
    pub width: usize,
    pub mask: Vec<f64>,
    pub depth: Vec<f64>,
}

/// One window per frame, centered on it.
pub fn build_windows(frames: &[DigitalTwinFrame], window: usize) -> Result<Vec<DigitalTwinWindow>> {
    if window.is_multiple_of(2) {
        return Err(Error::Config(format!("window {window} must be odd")));
    }
    if frames.is_empty() {
        return Err(Error::Validation("cannot window an empty trial".into()));
    }
    let (h, w) = (frames[0].height, frames[0].width);
    let onehot = frames
        .iter()
        .map(|f| one_hot_mask(&f.mask, h, w))
        .collect::<Result<Vec<_>>>()?;
    let depth = frames
        .iter()
        .map(|f| normalize_depth(&f.depth))
        .collect::<Result<Vec<_>>>()?;
    let half = (window / 2) as i64;
    let last = frames.len() as i64 - 1;
    Ok((0..frames.len())
        .map(|center| {
            let idx: Vec<usize> = (-half..=half)
                .map(|o| (center as i64 + o).clamp(0, last) as usize)
                .collect();
            DigitalTwinWindow {
                center,
                height: h,
                width: w,
                mask: idx.iter().flat_map(|&i| onehot[i].iter().copied()).collect(),
                depth: idx.iter().flat_map(|&i| depth[i].iter().copied()).collect(),
                frames: idx,
            }
        })
        .collect())
}

/// Unstandardized pooled features of a window: `[T, 15·patch²]` and `[T, patch²]`.
pub fn window_features(win: &DigitalTwinWindow, patch: usize) -> Result<(Tensor, Tensor)> {
    let t = win.frames.len();
    let (h, w) = (win.height, win.width);
    let mut m = Vec::new();
    let mut d = Vec::new();
    for i in 0..t {
        let n = h * w;
        m.extend(patch_pool(
            &win.mask[i * N_MASK_CHANNELS * n..(i + 1) * N_MASK_CHANNELS * n],
            N_MASK_CHANNELS,
            h,
            w,
            patch,
        )?);
        d.extend(patch_pool(&win.depth[i * n..(i + 1) * n], 1, h, w, patch)?);
    }
    let pm = N_MASK_CHANNELS * patch * patch;
    Ok((Tensor::new(vec![t, pm], m)?, Tensor::new(vec![t, patch * patch], d)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn frame(mask: Vec<u8>, depth: Vec<f64>, h: usize, w: usize) -> DigitalTwinFrame {
        DigitalTwinFrame {
            height: h,
            width: w,
            mask,
            depth,
            timestamp_s: 0.0,
        }
    }

    #[test]
    fn one_hot_fixtures() {
        let oh = one_hot_mask(&[0; 4], 2, 2).unwrap();
        assert!(oh[..4].iter().all(|&v| v == 1.0));
        assert!(oh[4..].iter().all(|&v| v == 0.0));
        let oh = one_hot_mask(&[5, 0, 14, 3], 2, 2).unwrap();
        assert_eq!(oh[5 * 4], 1.0);
        assert_eq!(oh[14 * 4 + 2], 1.0);
        for i in 0..4 {
            assert_eq!((0..15).map(|c| oh[c * 4 + i]).sum::<f64>(), 1.0);
        }
        assert!(one_hot_mask(&[15], 1, 1).is_err());
    }

    #[test]
    fn depth_normalization() {
        assert_eq!(
            normalize_depth(&[0.0, 20.0, 5.0, 30.0]).unwrap(),
            vec![0.0, 1.0, 0.25, 1.0]
        );
        assert!(normalize_depth(&[-0.1]).is_err());
    }

    #[test]
    fn direct_mask_features_match_one_hot_pooling() {
        let mask: Vec<u8> = (0..8 * 16).map(|i| ((i * 7 + i / 5) % 15) as u8).collect();
        let f = frame(mask.clone(), vec![1.0; 128], 8, 16);
        let direct = mask_features(&f, 4).unwrap();
        let pooled = patch_pool(&one_hot_mask(&mask, 8, 16).unwrap(), 15, 8, 16, 4).unwrap();
        assert_eq!(direct.len(), 240);
        for (a, b) in direct.iter().zip(&pooled) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(mask_features(&f, 3).is_err());
    }

    #[test]
    fn windows_replicate_edges() {
        let fr: Vec<_> = (0..4)
            .map(|i| frame(vec![i as u8; 4], vec![i as f64; 4], 2, 2))
            .collect();
        let single = build_windows(&fr[..1], 3).unwrap();
        assert_eq!(single.len(), 1);
        assert_eq!(single[0].frames, vec![0, 0, 0]);
        let wins = build_windows(&fr, 3).unwrap();
        assert_eq!(wins.len(), 4);
        for (k, w) in wins.iter().enumerate() {
            assert_eq!(w.center, k);
            assert_eq!(w.frames[1], k);
        }
        assert_eq!(wins[3].frames, vec![2, 3, 3]);
        assert_eq!(&wins[0].depth[..4], &[0.0; 4]);
        assert!(build_windows(&fr, 2).is_err());
        assert!(build_windows(&[], 3).is_err());
    }

    #[test]
    fn gather_matches_windows() {
        let feats: Vec<f64> = (0..5).map(|i| i as f64).collect();
        assert_eq!(gather_chunk(&feats, 1, 5, 0, 2, 5), vec![0.0, 0.0, 0.0, 1.0, 2.0, 3.0]);
        assert_eq!(gather_chunk(&feats, 1, 5, 3, 2, 3), vec![2.0, 3.0, 4.0, 4.0]);
    }
}
