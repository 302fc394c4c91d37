//! Procedural operating-room simulator producing de-identified digital-twin
//! trials: per-frame semantic mask grids, metric depth grids, and scripted
//! ground-truth events.
//!
//! Scene content (room layout, object set, scripts) is synthetic. It stands in
//! for the output of a segmentation + depth-estimation front end and does not
//! reproduce any real recording.

mod dataset;
mod render;
pub mod rng;
mod scenario;

pub use dataset::{generate_dataset, generate_trial, DatasetManifest, SimConfig, Split, TrialConfig, TrialEntry};
pub use render::{render_frame, Actor, RoomLayout, SceneState};
pub use scenario::{
    script_trial, Move, Phase, PhaseKind, RoomGeometry, ScenarioKind, ScenarioScript, Timeline, TABLE_RAISE_M,
};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Number of object classes; mask IDs run `1..=14`, 0 is background.
pub const N_OBJECT_CLASSES: usize = 14;
/// One-hot channels per mask pixel (object classes plus background).
pub const N_MASK_CHANNELS: usize = N_OBJECT_CLASSES + 1;
pub const N_EVENT_CLASSES: usize = 5;
pub const N_ROOMS: u8 = 7;
/// Largest representable depth in meters.
pub const MAX_DEPTH_M: f64 = 20.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum ObjectClass {
    Gurney = 1,
    Patient,
    Staff,
    OrTable,
    AnesthesiaCart,
    Door,
    InstrumentTable,
    Monitor,
    Light,
    Stool,
    Machine,
    Cabinet,
    TrashBin,
    IvPole,
}

impl ObjectClass {
    pub const ALL: [ObjectClass; N_OBJECT_CLASSES] = [
        Self::Gurney,
        Self::Patient,
        Self::Staff,
        Self::OrTable,
        Self::AnesthesiaCart,
        Self::Door,
        Self::InstrumentTable,
        Self::Monitor,
        Self::Light,
        Self::Stool,
        Self::Machine,
        Self::Cabinet,
        Self::TrashBin,
        Self::IvPole,
    ];

    pub fn id(self) -> u8 {
        self as u8
    }

    pub fn from_id(id: u8) -> Option<Self> {
        Self::ALL.get((id as usize).checked_sub(1)?).copied()
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Gurney => "gurney",
            Self::Patient => "patient",
            Self::Staff => "staff",
            Self::OrTable => "or_table",
            Self::AnesthesiaCart => "anesthesia_cart",
            Self::Door => "door",
            Self::InstrumentTable => "instrument_table",
            Self::Monitor => "monitor",
            Self::Light => "light",
            Self::Stool => "stool",
            Self::Machine => "machine",
            Self::Cabinet => "cabinet",
            Self::TrashBin => "trash_bin",
            Self::IvPole => "iv_pole",
        }
    }

    /// Height of the object's top surface above the floor, in meters.
    pub fn height_m(self) -> f64 {
        match self {
            Self::Gurney => 0.9,
            Self::Patient => 1.15,
            Self::Staff => 1.7,
            Self::OrTable => 0.9,
            Self::AnesthesiaCart => 1.1,
            Self::Door => 2.1,
            Self::InstrumentTable => 0.9,
            Self::Monitor => 1.5,
            Self::Light => 2.2,
            Self::Stool => 0.6,
            Self::Machine => 1.4,
            Self::Cabinet => 2.0,
            Self::TrashBin => 0.7,
            Self::IvPole => 1.9,
        }
    }
}

/// The five annotated event classes, in reporting order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventClass {
    PatientPreparation,
    GurneyEntering,
    LoadingPatientToGurney,
    PreparingPatientToLeave,
    PatientOutOfRoom,
}

impl EventClass {
    pub const ALL: [EventClass; N_EVENT_CLASSES] = [
        Self::PatientPreparation,
        Self::GurneyEntering,
        Self::LoadingPatientToGurney,
        Self::PreparingPatientToLeave,
        Self::PatientOutOfRoom,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(i: usize) -> Option<Self> {
        Self::ALL.get(i).copied()
    }

    /// Display name used in every file format.
    pub fn name(self) -> &'static str {
        match self {
            Self::PatientPreparation => "Patient Preparation",
            Self::GurneyEntering => "Gurney Entering",
            Self::LoadingPatientToGurney => "Loading patient to gurney",
            Self::PreparingPatientToLeave => "Preparing patient to leave",
            Self::PatientOutOfRoom => "Patient out of the room",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|c| c.name() == name)
    }

    /// Rank in the canonical script order
    /// (entering, preparation, preparing to leave, loading, out of room).
    pub fn script_rank(self) -> u8 {
        match self {
            Self::GurneyEntering => 0,
            Self::PatientPreparation => 1,
            Self::PreparingPatientToLeave => 2,
            Self::LoadingPatientToGurney => 3,
            Self::PatientOutOfRoom => 4,
        }
    }
}

impl Serialize for EventClass {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.name())
    }
}

impl<'de> Deserialize<'de> for EventClass {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let name = String::deserialize(d)?;
        Self::from_name(&name).ok_or_else(|| serde::de::Error::custom(format!("unknown event class {name:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EventSegment {
    pub class: EventClass,
    pub start_s: f64,
    pub end_s: f64,
}

impl EventSegment {
    pub fn duration_s(&self) -> f64 {
        self.end_s - self.start_s
    }
}

/// One timestep of the digital twin: class-ID mask plus metric depth, both
/// row-major `height × width`.
#[derive(Debug, Clone, PartialEq)]
pub struct DigitalTwinFrame {
    pub height: usize,
    pub width: usize,
    pub mask: Vec<u8>,
    pub depth: Vec<f64>,
    pub timestamp_s: f64,
}

impl DigitalTwinFrame {
    pub fn validate(&self) -> Result<()> {
        let n = self.height * self.width;
        if self.mask.len() != n || self.depth.len() != n {
            return Err(Error::Validation(format!(
                "frame grids do not match {}x{}",
                self.height, self.width
            )));
        }
        if let Some(&c) = self.mask.iter().find(|&&c| c as usize > N_OBJECT_CLASSES) {
            return Err(Error::Validation(format!("mask class id {c} out of range")));
        }
        if let Some(&d) = self
            .depth
            .iter()
            .find(|d| !d.is_finite() || !(0.0..=MAX_DEPTH_M).contains(*d))
        {
            return Err(Error::Validation(format!("depth {d} outside [0, {MAX_DEPTH_M}]")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecording {
    pub trial_id: u32,
    pub room_id: u8,
    pub fps: f64,
    pub seed: u64,
    pub frames: Vec<DigitalTwinFrame>,
    pub events: Vec<EventSegment>,
}

impl TrialRecording {
    pub fn n_frames(&self) -> usize {
        self.frames.len()
    }

    pub fn duration_s(&self) -> f64 {
        self.frames.len() as f64 / self.fps
    }

    pub fn height(&self) -> usize {
        self.frames.first().map_or(0, |f| f.height)
    }

    pub fn width(&self) -> usize {
        self.frames.first().map_or(0, |f| f.width)
    }

    /// Checks frame invariants, uniform timestamps, and event bounds.
    pub fn validate(&self) -> Result<()> {
        if !(self.fps.is_finite() && self.fps > 0.0) {
            return Err(Error::Validation(format!("fps {} must be positive", self.fps)));
        }
        for (i, f) in self.frames.iter().enumerate() {
            f.validate()?;
            if f.height != self.height() || f.width != self.width() {
                return Err(Error::Validation(format!("frame {i} changes grid size")));
            }
            if (f.timestamp_s - i as f64 / self.fps).abs() > 1e-9 {
                return Err(Error::Validation(format!("frame {i} timestamp {}", f.timestamp_s)));
            }
        }
        let duration = self.duration_s();
        for e in &self.events {
            if !(0.0 <= e.start_s && e.start_s < e.end_s && e.end_s <= duration + 1e-9) {
                return Err(Error::Validation(format!(
                    "event {} [{}, {}) outside trial of {duration} s",
                    e.class.name(),
                    e.start_s,
                    e.end_s
                )));
            }
        }
        for c in EventClass::ALL {
            let mut same: Vec<_> = self.events.iter().filter(|e| e.class == c).collect();
            same.sort_by(|a, b| a.start_s.total_cmp(&b.start_s));
            if same.windows(2).any(|w| w[1].start_s < w[0].end_s) {
                return Err(Error::Validation(format!("overlapping {} events", c.name())));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn class_tables_round_trip() {
        for c in ObjectClass::ALL {
            assert_eq!(ObjectClass::from_id(c.id()), Some(c));
        }
        assert_eq!(ObjectClass::from_id(0), None);
        assert_eq!(ObjectClass::from_id(15), None);
        for (i, c) in EventClass::ALL.into_iter().enumerate() {
            assert_eq!(c.index(), i);
            assert_eq!(EventClass::from_name(c.name()), Some(c));
        }
    }

    #[test]
    fn frame_validation_catches_bad_values() {
        let mut f = DigitalTwinFrame {
            height: 1,
            width: 2,
            mask: vec![0, 14],
            depth: vec![0.0, 20.0],
            timestamp_s: 0.0,
        };
        assert!(f.validate().is_ok());
        f.mask[0] = 15;
        assert!(f.validate().is_err());
        f.mask[0] = 0;
        f.depth[1] = f64::NAN;
        assert!(f.validate().is_err());
    }
}
