//! On-disk formats: trial directories, JSON/JSONL annotations, the parameter
//! container, and SVG timelines.

pub mod params;
pub mod pgm;
mod svg;

use std::fs;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub use params::{ParamContainer, ParamEntry};
pub use svg::render_timeline_svg;

use crate::error::{Error, Result};
use crate::events::DetectionSegment;
use crate::sim::{DatasetManifest, DigitalTwinFrame, EventSegment, TrialRecording, MAX_DEPTH_M};
use pgm::Pgm;

pub const DEFAULT_DEPTH_SCALE: f64 = 0.001;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const META_FILE: &str = "meta.json";
pub const EVENTS_FILE: &str = "events.jsonl";

/// Largest class ID a mask file may hold.
const MAX_MASK_ID: u16 = 254;

pub fn trial_dir_name(trial_id: u32) -> String {
    format!("trial_{trial_id:04}")
}

fn frame_file(index: usize) -> String {
    format!("frame_{index:06}.pgm")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialMeta {
    pub trial_id: u32,
    pub room_id: u8,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub depth_scale: f64,
    pub seed: u64,
    pub n_frames: usize,
}

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = temp_sibling(path);
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn temp_sibling(path: &Path) -> PathBuf {
    let name = path
        .file_name()
        .map_or_else(Default::default, |n| n.to_string_lossy().into_owned());
    path.with_file_name(format!(".{name}.tmp{}", std::process::id()))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: DeserializeOwned>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(path, e.to_string()))
}

pub fn to_jsonl<T: Serialize>(items: &[T]) -> String {
    let mut out = String::new();
    for it in items {
        out.push_str(&serde_json::to_string(it).expect("serializable value"));
        out.push('\n');
    }
    out
}

/// Parses one object per non-blank line; errors name the 1-based line.
pub fn parse_jsonl<T: DeserializeOwned>(text: &str) -> std::result::Result<Vec<T>, String> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| format!("line {}: {e}", i + 1)))
        .collect()
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_jsonl(&text).map_err(|msg| Error::Validation(format!("{}: {msg}", path.display())))
}

pub fn write_predictions(path: &Path, dets: &[DetectionSegment]) -> Result<()> {
    write_atomic(path, to_jsonl(dets).as_bytes())
}

pub fn read_predictions(path: &Path) -> Result<Vec<DetectionSegment>> {
    let dets: Vec<DetectionSegment> = read_jsonl(path)?;
    for (i, d) in dets.iter().enumerate() {
        d.validate()
            .map_err(|e| Error::Validation(format!("{}: detection {}: {e}", path.display(), i + 1)))?;
    }
    Ok(dets)
}

pub fn write_events(path: &Path, events: &[EventSegment]) -> Result<()> {
    write_atomic(path, to_jsonl(events).as_bytes())
}

pub fn read_events(path: &Path) -> Result<Vec<EventSegment>> {
    read_jsonl(path)
}

fn encode_mask(frame: &DigitalTwinFrame) -> Vec<u8> {
    pgm::encode(&Pgm {
        width: frame.width,
        height: frame.height,
        maxval: 255,
        data: frame.mask.iter().map(|&m| m as u16).collect(),
    })
}

fn encode_depth(frame: &DigitalTwinFrame, scale: f64) -> Result<Vec<u8>> {
    let data = frame
        .depth
        .iter()
        .map(|&d| {
            let q = (d / scale).round();
            if (0.0..=65535.0).contains(&q) {
                Ok(q as u16)
            } else {
                Err(Error::Validation(format!(
                    "depth {d} m not representable at scale {scale}"
                )))
            }
        })
        .collect::<Result<Vec<u16>>>()?;
    Ok(pgm::encode(&Pgm {
        width: frame.width,
        height: frame.height,
        maxval: 65535,
        data,
    }))
}

/// Writes a trial directory. The content is assembled in a temporary sibling
/// directory and renamed into place, replacing any previous trial there.
pub fn write_trial(dir: &Path, rec: &TrialRecording, depth_scale: f64) -> Result<()> {
    rec.validate()?;
    if !(depth_scale > 0.0 && 65535.0 * depth_scale >= MAX_DEPTH_M) {
        return Err(Error::Config(format!(
            "depth_scale {depth_scale} cannot cover 0..{MAX_DEPTH_M} m"
        )));
    }
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(|e| Error::io(&tmp, e))?;
    }
    for sub in ["masks", "depth"] {
        let p = tmp.join(sub);
        fs::create_dir_all(&p).map_err(|e| Error::io(&p, e))?;
    }
    for (i, f) in rec.frames.iter().enumerate() {
        let p = tmp.join("masks").join(frame_file(i));
        fs::write(&p, encode_mask(f)).map_err(|e| Error::io(&p, e))?;
        let p = tmp.join("depth").join(frame_file(i));
        fs::write(&p, encode_depth(f, depth_scale)?).map_err(|e| Error::io(&p, e))?;
    }
    let meta = TrialMeta {
        trial_id: rec.trial_id,
        room_id: rec.room_id,
        fps: rec.fps,
        width: rec.width(),
        height: rec.height(),
        depth_scale,
        seed: rec.seed,
        n_frames: rec.n_frames(),
    };
    write_json(&tmp.join(META_FILE), &meta)?;
    write_events(&tmp.join(EVENTS_FILE), &rec.events)?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::rename(&tmp, dir).map_err(|e| Error::io(dir, e))
}

fn read_pgm(path: &Path, meta: &TrialMeta) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let img = pgm::decode(&bytes).map_err(|msg| Error::format(path, msg))?;
    if img.width != meta.width || img.height != meta.height {
        return Err(Error::format(
            path,
            format!(
                "{}x{} image in a {}x{} trial",
                img.width, img.height, meta.width, meta.height
            ),
        ));
    }
    Ok(img)
}

pub fn read_meta(dir: &Path) -> Result<TrialMeta> {
    let path = dir.join(META_FILE);
    let meta: TrialMeta = read_json(&path)?;
    if !(meta.fps > 0.0 && meta.depth_scale > 0.0 && meta.width > 0 && meta.height > 0) {
        return Err(Error::format(&path, "fps, depth_scale and grid size must be positive"));
    }
    Ok(meta)
}

pub fn read_trial(dir: &Path) -> Result<TrialRecording> {
    let meta = read_meta(dir)?;
    let max_depth = 65535.0 * meta.depth_scale;
    let mut frames = Vec::with_capacity(meta.n_frames);
    for i in 0..meta.n_frames {
        let mpath = dir.join("masks").join(frame_file(i));
        let m = read_pgm(&mpath, &meta)?;
        if m.maxval != 255 {
            return Err(Error::format(&mpath, format!("mask maxval {} is not 255", m.maxval)));
        }
        if let Some(v) = m.data.iter().find(|&&v| v > MAX_MASK_ID) {
            return Err(Error::format(&mpath, format!("class ID {v} exceeds {MAX_MASK_ID}")));
        }
        let dpath = dir.join("depth").join(frame_file(i));
        let d = read_pgm(&dpath, &meta)?;
        if d.maxval != 65535 {
            return Err(Error::format(&dpath, format!("depth maxval {} is not 65535", d.maxval)));
        }
        let depth: Vec<f64> = d.data.iter().map(|&v| v as f64 * meta.depth_scale).collect();
        if let Some(x) = depth.iter().find(|&&x| x > max_depth) {
            return Err(Error::format(&dpath, format!("depth {x} exceeds {max_depth}")));
        }
        frames.push(DigitalTwinFrame {
            height: meta.height,
            width: meta.width,
            mask: m.data.iter().map(|&v| v as u8).collect(),
            depth,
            timestamp_s: i as f64 / meta.fps,
        });
    }
    let rec = TrialRecording {
        trial_id: meta.trial_id,
        room_id: meta.room_id,
        fps: meta.fps,
        seed: meta.seed,
        frames,
        events: read_events(&dir.join(EVENTS_FILE))?,
    };
    rec.validate().map_err(|e| Error::format(dir, e.to_string()))?;
    Ok(rec)
}

pub fn read_manifest(data_dir: &Path) -> Result<DatasetManifest> {
    read_json(&data_dir.join(MANIFEST_FILE))
}
