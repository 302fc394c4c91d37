//! Turning per-frame class probabilities into scored event segments.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::sim::{EventClass, N_EVENT_CLASSES};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExtractionConfig {
    pub threshold: f64,
    /// Moving-average width in frames, odd.
    pub smooth_width: usize,
    /// Runs separated by at most this many below-threshold frames are merged.
    pub merge_gap: usize,
    /// Merged runs shorter than this many frames are dropped.
    pub min_len: usize,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            threshold: 0.5,
            smooth_width: 5,
            merge_gap: 2,
            min_len: 3,
        }
    }
}

impl ExtractionConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold > 0.0 && self.threshold < 1.0) {
            return Err(Error::Config(format!("threshold {} must be in (0, 1)", self.threshold)));
        }
        if self.smooth_width.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "smoothing width {} must be odd",
                self.smooth_width
            )));
        }
        if self.min_len == 0 {
            return Err(Error::Config("min_len must be at least 1".into()));
        }
        Ok(())
    }
}

/// A scored predicted interval. Serialized as one predictions-file line.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DetectionSegment {
    #[serde(rename = "trial")]
    pub trial_id: u32,
    pub class: EventClass,
    pub start_s: f64,
    pub end_s: f64,
    pub score: f64,
}

impl DetectionSegment {
    pub fn validate(&self) -> Result<()> {
        if !(self.start_s.is_finite() && self.end_s.is_finite() && self.start_s < self.end_s) {
            return Err(Error::Validation(format!(
                "segment [{}, {}) is empty or not finite",
                self.start_s, self.end_s
            )));
        }
        if !(0.0..=1.0).contains(&self.score) {
            return Err(Error::Validation(format!("score {} outside [0, 1]", self.score)));
        }
        Ok(())
    }
}

/// Centered moving average of one series. Near the edges the window is
/// truncated and the mean taken over the frames that exist.
pub fn smooth_series(x: &[f64], width: usize) -> Vec<f64> {
    assert!(width % 2 == 1, "smoothing width must be odd");
    let half = width / 2;
    let mut prefix = Vec::with_capacity(x.len() + 1);
    prefix.push(0.0);
    for &v in x {
        prefix.push(prefix.last().unwrap() + v);
    }
    (0..x.len())
        .map(|i| {
            let lo = i.saturating_sub(half);
            let hi = (i + half + 1).min(x.len());
            if width == 1 {
                x[i]
            } else {
                (prefix[hi] - prefix[lo]) / (hi - lo) as f64
            }
        })
        .collect()
}

/// Smooths every column of a frame-major `n_frames × 5` probability matrix.
pub fn smooth(probs: &[[f64; N_EVENT_CLASSES]], width: usize) -> Vec<[f64; N_EVENT_CLASSES]> {
    let mut out = vec![[0.0; N_EVENT_CLASSES]; probs.len()];
    for c in 0..N_EVENT_CLASSES {
        let col: Vec<f64> = probs.iter().map(|p| p[c]).collect();
        for (row, v) in out.iter_mut().zip(smooth_series(&col, width)) {
            row[c] = v;
        }
    }
    out
}

/// Frame runs `(first, last_inclusive, score)` of one already-smoothed series.
pub fn extract_runs(s: &[f64], cfg: &ExtractionConfig) -> Vec<(usize, usize, f64)> {
    let mut runs: Vec<(usize, usize)> = Vec::new();
    for (f, &p) in s.iter().enumerate() {
        if p < cfg.threshold {
            continue;
        }
        match runs.last_mut() {
            Some(last) if f - last.1 - 1 <= cfg.merge_gap => last.1 = f,
            _ => runs.push((f, f)),
        }
    }
    runs.into_iter()
        .filter(|&(a, b)| b - a + 1 >= cfg.min_len)
        .map(|(a, b)| {
            let above: Vec<f64> = s[a..=b].iter().copied().filter(|&p| p >= cfg.threshold).collect();
            (a, b, above.iter().sum::<f64>() / above.len() as f64)
        })
        .collect()
}

/// Scored segments for one trial, ordered by class then start.
pub fn extract_segments(
    probs: &[[f64; N_EVENT_CLASSES]],
    cfg: &ExtractionConfig,
    fps: f64,
    trial_id: u32,
) -> Result<Vec<DetectionSegment>> {
    cfg.validate()?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::Config(format!("fps {fps} must be positive")));
    }
    if let Some(p) = probs.iter().flatten().find(|p| !(0.0..=1.0).contains(*p)) {
        return Err(Error::Validation(format!("probability {p} outside [0, 1]")));
    }
    let smoothed = smooth(probs, cfg.smooth_width);
    let mut out = Vec::new();
    for class in EventClass::ALL {
        let col: Vec<f64> = smoothed.iter().map(|p| p[class.index()]).collect();
        for (a, b, score) in extract_runs(&col, cfg) {
            out.push(DetectionSegment {
                trial_id,
                class,
                start_s: a as f64 / fps,
                end_s: (b + 1) as f64 / fps,
                score,
            });
        }
    }
    Ok(out)
}
