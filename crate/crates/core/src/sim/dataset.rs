use std::path::Path;

use serde::{Deserialize, Serialize};

use super::render::{render_frame, RoomLayout};
use super::scenario::{script_trial, ScenarioKind, ScenarioScript};
use super::{TrialRecording, N_ROOMS};
use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialConfig {
    pub seed: u64,
    pub room_id: u8,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    #[serde(default)]
    pub scenario: ScenarioKind,
}

impl Default for TrialConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            room_id: 0,
            fps: 1.0,
            height: 48,
            width: 64,
            scenario: ScenarioKind::Default,
        }
    }
}

impl TrialConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Config(format!("fps must be positive, got {}", self.fps)));
        }
        if self.height < 16 || self.width < 16 {
            return Err(Error::Config(format!(
                "grid {}x{} is below the 16x16 minimum",
                self.height, self.width
            )));
        }
        if self.room_id >= N_ROOMS {
            return Err(Error::Config(format!(
                "room_id {} must be below {N_ROOMS}",
                self.room_id
            )));
        }
        Ok(())
    }
}

/// Scripts and renders one complete trial.
pub fn generate_trial(trial_id: u32, config: &TrialConfig) -> Result<TrialRecording> {
    config.validate()?;
    let script = ScenarioScript::for_kind(config.scenario);
    let timeline = script_trial(config.seed, config.room_id, &script)?;
    let layout = RoomLayout::new(config.room_id, config.height, config.width);
    let n_frames = (timeline.duration_s * config.fps).round() as usize;
    let frames = (0..n_frames)
        .map(|f| {
            let t = f as f64 / config.fps;
            render_frame(&timeline.scene_at(t, &layout.geometry), &layout)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(TrialRecording {
        trial_id,
        room_id: config.room_id,
        fps: config.fps,
        seed: config.seed,
        frames,
        events: timeline.events,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    pub n_trials: u32,
    pub n_rooms: u8,
    pub base_seed: u64,
    pub fps: f64,
    pub height: usize,
    pub width: usize,
    /// Train / val / test trial counts; must sum to `n_trials`.
    pub split: [u32; 3],
    pub scenario: ScenarioKind,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            n_trials: 38,
            n_rooms: 7,
            base_seed: 7,
            fps: 1.0,
            height: 48,
            width: 64,
            split: [24, 6, 8],
            scenario: ScenarioKind::Default,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_rooms == 0 || self.n_rooms > N_ROOMS {
            return Err(Error::Config(format!("n_rooms must be in 1..={N_ROOMS}")));
        }
        if u32::from(self.n_rooms) > self.n_trials {
            return Err(Error::Config("n_rooms exceeds n_trials".into()));
        }
        if self.split.iter().sum::<u32>() != self.n_trials {
            return Err(Error::Config(format!(
                "split {:?} does not sum to {} trials",
                self.split, self.n_trials
            )));
        }
        self.trial_config(0).validate()
    }

    /// Contiguous split by trial id: the first `split[0]` trials train, and so on.
    pub fn split_of(&self, trial_id: u32) -> Split {
        if trial_id < self.split[0] {
            Split::Train
        } else if trial_id < self.split[0] + self.split[1] {
            Split::Val
        } else {
            Split::Test
        }
    }

    pub fn trial_config(&self, trial_id: u32) -> TrialConfig {
        TrialConfig {
            seed: self.base_seed ^ u64::from(trial_id),
            room_id: (trial_id % u32::from(self.n_rooms.max(1))) as u8,
            fps: self.fps,
            height: self.height,
            width: self.width,
            scenario: self.scenario,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrialEntry {
    pub trial_id: u32,
    pub room_id: u8,
    pub seed: u64,
    pub split: Split,
    pub dir: String,
    pub n_frames: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub config: SimConfig,
    pub trials: Vec<TrialEntry>,
}

impl DatasetManifest {
    pub fn trials_in(&self, split: Split) -> impl Iterator<Item = &TrialEntry> {
        self.trials.iter().filter(move |t| t.split == split)
    }
}

/// Generates every trial, writes each as a trial directory under `out_dir`,
/// and writes `manifest.json` last.
pub fn generate_dataset(config: &SimConfig, out_dir: &Path) -> Result<DatasetManifest> {
    config.validate()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut trials = Vec::with_capacity(config.n_trials as usize);
    for trial_id in 0..config.n_trials {
        let tc = config.trial_config(trial_id);
        let rec = generate_trial(trial_id, &tc)?;
        let dir = io::trial_dir_name(trial_id);
        io::write_trial(&out_dir.join(&dir), &rec, io::DEFAULT_DEPTH_SCALE)?;
        trials.push(TrialEntry {
            trial_id,
            room_id: tc.room_id,
            seed: tc.seed,
            split: config.split_of(trial_id),
            dir,
            n_frames: rec.n_frames(),
        });
    }
    let manifest = DatasetManifest {
        config: config.clone(),
        trials,
    };
    io::write_json(&out_dir.join(io::MANIFEST_FILE), &manifest)?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{EventClass, ObjectClass};

    #[test]
    fn config_validation() {
        let bad_fps = TrialConfig {
            fps: 0.0,
            ..TrialConfig::default()
        };
        assert!(generate_trial(0, &bad_fps).is_err());
        let small = TrialConfig {
            height: 15,
            ..TrialConfig::default()
        };
        assert!(generate_trial(0, &small).is_err());
        let cfg = SimConfig {
            split: [24, 6, 7],
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
        let cfg = SimConfig {
            n_trials: 5,
            n_rooms: 7,
            split: [3, 1, 1],
            ..SimConfig::default()
        };
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn rooms_cycle_and_seeds_xor() {
        let cfg = SimConfig::default();
        for id in 0..38 {
            let tc = cfg.trial_config(id);
            assert_eq!(tc.room_id as u32, id % 7);
            assert_eq!(tc.seed, 7 ^ id as u64);
        }
        let counts = [Split::Train, Split::Val, Split::Test].map(|s| (0..38).filter(|&i| cfg.split_of(i) == s).count());
        assert_eq!(counts, [24, 6, 8]);
    }

    #[test]
    fn frame_count_follows_duration() {
        let rec = generate_trial(0, &TrialConfig::default()).unwrap();
        assert_eq!(rec.n_frames() as f64, rec.duration_s());
        rec.validate().unwrap();
        let half = TrialConfig {
            fps: 0.5,
            ..TrialConfig::default()
        };
        let rec2 = generate_trial(0, &half).unwrap();
        assert_eq!(rec2.n_frames() * 2, rec.n_frames());
        assert_eq!(rec2.events, rec.events);
    }

    #[test]
    fn gurney_visibility_matches_events() {
        for seed in [1u64, 2, 3] {
            let tc = TrialConfig {
                seed,
                room_id: (seed % 7) as u8,
                ..TrialConfig::default()
            };
            let rec = generate_trial(0, &tc).unwrap();
            let geo = RoomLayout::new(tc.room_id, tc.height, tc.width).geometry;
            let [r0, c0, r1, c1] = geo.door_region;
            let gurney_in_door = |f: &crate::sim::DigitalTwinFrame| {
                (r0..r1)
                    .any(|r| (c0..c1).any(|c| f.mask[(r as usize) * f.width + c as usize] == ObjectClass::Gurney.id()))
            };
            let ge = rec
                .events
                .iter()
                .find(|e| e.class == EventClass::GurneyEntering)
                .unwrap();
            let out = rec
                .events
                .iter()
                .find(|e| e.class == EventClass::PatientOutOfRoom)
                .unwrap();
            let in_ge = rec
                .frames
                .iter()
                .filter(|f| f.timestamp_s >= ge.start_s && f.timestamp_s < ge.end_s)
                .any(gurney_in_door);
            assert!(in_ge);
            for f in &rec.frames {
                if f.timestamp_s < ge.start_s || f.timestamp_s > out.end_s {
                    assert!(!gurney_in_door(f), "gurney in door at {}", f.timestamp_s);
                }
            }
        }
    }
}
