//! Trial scripts: phase timing, actor trajectories, and the resulting
//! ground-truth event segments.
//!
//! Geometry is authored on a 48×64 reference grid and scaled to the output
//! grid. The table, door, gurney lane, and a second "instrument table" lane
//! sit at fixed places in every room; decor positions and the depth tilt vary
//! with the room id.
//!
//! Cues by construction:
//! - Patient Preparation raises the OR table by 0.4 m. Nothing on the table
//!   changes in the mask, so the cue is depth-only.
//! - Gurney Entering is a gurney crossing the door region. An instrument table
//!   with the same footprint and height travels an identical path in its own
//!   lane at unrelated times, so depth alone cannot tell the two apart while
//!   the mask can.

use serde::{Deserialize, Serialize};

use super::render::{Actor, SceneState};
use super::rng::SimRng;
use super::{EventClass, EventSegment, ObjectClass, N_ROOMS};
use crate::error::{Error, Result};

/// Raise applied to the OR table during patient preparation, meters.
pub const TABLE_RAISE_M: f64 = 0.4;
/// Patient thickness above whatever surface they lie on, meters.
const PATIENT_THICKNESS_M: f64 = 0.25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScenarioKind {
    /// One instance of every event.
    #[default]
    Default,
    /// The gurney enters, leaves, and enters again before preparation.
    Busy,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PhaseKind {
    Idle,
    Event(EventClass),
    /// Gurney rolls back out through the door (not an annotated event).
    GurneyLeaves,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Phase {
    pub kind: PhaseKind,
    /// Inclusive range of whole seconds.
    pub duration_s: (i64, i64),
    /// When set, the phase starts this many seconds before the previous one ends.
    pub overlap_s: Option<(i64, i64)>,
}

impl Phase {
    fn new(kind: PhaseKind, lo: i64, hi: i64) -> Self {
        Self {
            kind,
            duration_s: (lo, hi),
            overlap_s: None,
        }
    }

    fn idle(lo: i64, hi: i64) -> Self {
        Self::new(PhaseKind::Idle, lo, hi)
    }

    fn event(class: EventClass, lo: i64, hi: i64) -> Self {
        Self::new(PhaseKind::Event(class), lo, hi)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioScript {
    pub kind: ScenarioKind,
    pub phases: Vec<Phase>,
    /// Target trial length; the final idle phase is stretched to reach it.
    pub total_s: (i64, i64),
    /// Duration of each instrument-table trip through the door.
    pub decoy_move_s: (i64, i64),
    pub wandering_staff: (i64, i64),
}

impl ScenarioScript {
    pub fn for_kind(kind: ScenarioKind) -> Self {
        use EventClass::*;
        let mut loading = Phase::event(LoadingPatientToGurney, 15, 30);
        loading.overlap_s = Some((0, 8));
        let tail_events = [
            Phase::event(PreparingPatientToLeave, 20, 45),
            loading,
            Phase::idle(5, 20),
            Phase::event(PatientOutOfRoom, 20, 35),
        ];
        let phases: Vec<Phase> = match kind {
            ScenarioKind::Default => [
                Phase::idle(20, 50),
                Phase::event(GurneyEntering, 20, 35),
                Phase::idle(10, 35),
                Phase::event(PatientPreparation, 30, 60),
                Phase::idle(50, 120),
            ]
            .into_iter()
            .chain(tail_events)
            .chain([Phase::idle(20, 50)])
            .collect(),
            ScenarioKind::Busy => [
                Phase::idle(20, 40),
                Phase::event(GurneyEntering, 20, 35),
                Phase::idle(10, 20),
                Phase::new(PhaseKind::GurneyLeaves, 15, 25),
                Phase::idle(10, 20),
                Phase::event(GurneyEntering, 20, 35),
                Phase::idle(10, 25),
                Phase::event(PatientPreparation, 30, 60),
                Phase::idle(30, 60),
            ]
            .into_iter()
            .chain(tail_events)
            .chain([Phase::idle(10, 30)])
            .collect(),
        };
        Self {
            kind,
            phases,
            total_s: (240, 480),
            decoy_move_s: (20, 35),
            wandering_staff: (2, 3),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(format!("scenario: {msg}")));
        let positive = |(lo, hi): (i64, i64)| lo > 0 && lo <= hi;
        if !positive(self.total_s) || !positive(self.decoy_move_s) || !positive(self.wandering_staff) {
            return bad("ranges must be positive and ordered".into());
        }
        let mut rank = 0;
        let mut gurney_in = false;
        let mut max_total = 0;
        for (i, p) in self.phases.iter().enumerate() {
            if !positive(p.duration_s) {
                return bad(format!("phase {i} has duration range {:?}", p.duration_s));
            }
            max_total += p.duration_s.1;
            if let Some((lo, hi)) = p.overlap_s {
                let prev_min = match i.checked_sub(1).map(|j| self.phases[j]) {
                    Some(prev) if matches!(prev.kind, PhaseKind::Event(_)) => prev.duration_s.0,
                    _ => return bad(format!("phase {i} overlaps a non-event phase")),
                };
                if lo < 0 || lo > hi || hi >= prev_min || hi >= p.duration_s.0 {
                    return bad(format!("phase {i} overlap {lo}..{hi} too long"));
                }
            }
            match p.kind {
                PhaseKind::Event(c) => {
                    if c.script_rank() < rank {
                        return bad(format!("{} out of canonical order", c.name()));
                    }
                    rank = c.script_rank();
                    match c {
                        EventClass::GurneyEntering if gurney_in => {
                            return bad("gurney enters twice without leaving".into())
                        }
                        EventClass::GurneyEntering => gurney_in = true,
                        EventClass::PatientOutOfRoom => gurney_in = false,
                        EventClass::LoadingPatientToGurney if !gurney_in => {
                            return bad("loading without a gurney in the room".into())
                        }
                        _ => {}
                    }
                }
                PhaseKind::GurneyLeaves => {
                    if !gurney_in || rank > EventClass::GurneyEntering.script_rank() {
                        return bad("gurney can only leave before preparation".into());
                    }
                    gurney_in = false;
                }
                PhaseKind::Idle => {}
            }
        }
        if !matches!(self.phases.last().map(|p| p.kind), Some(PhaseKind::Idle)) {
            return bad("last phase must be idle".into());
        }
        if max_total > self.total_s.1 {
            return bad(format!("phases can last {max_total} s, above {}", self.total_s.1));
        }
        Ok(())
    }
}

/// A straight trip through the door along a lane.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Move {
    pub start_s: f64,
    pub end_s: f64,
    /// `true`: outside → parked; `false`: parked → outside.
    pub entering: bool,
}

/// Everything that happens in one trial, independent of grid resolution.
#[derive(Debug, Clone, PartialEq)]
pub struct Timeline {
    pub duration_s: f64,
    pub events: Vec<EventSegment>,
    pub gurney_moves: Vec<Move>,
    pub decoy_moves: Vec<Move>,
    pub table_raised: Vec<(f64, f64)>,
    pub prep_staff: Vec<(f64, f64)>,
    pub loading: Vec<(f64, f64)>,
    /// Per wandering staff member, top-left reference-grid cell at each whole second.
    pub staff_walks: Vec<Vec<(i32, i32)>>,
}

// Reference-grid geometry (48×64).
const REF_H: f64 = 48.0;
const REF_W: f64 = 64.0;
const DOOR_REGION: [f64; 4] = [18.0, 0.0, 38.0, 6.0];
const DOOR_CLOSED: [f64; 4] = [18.0, 0.0, 38.0, 1.0];
const DOOR_OPEN: [f64; 4] = [15.0, 0.0, 18.0, 6.0];
const TABLE: [f64; 4] = [8.0, 10.0, 16.0, 26.0];
const PATIENT_SIZE: (f64, f64) = (3.0, 7.0);
const PATIENT_ON_TABLE: (f64, f64) = (10.0, 14.0);
const CART_SIZE: (f64, f64) = (4.0, 8.0);
const GURNEY_ROW: f64 = 20.0;
const DECOY_ROW: f64 = 28.0;
const LANE_OUTSIDE_COL: f64 = -8.0;
const LANE_PARK_COL: f64 = 12.0;
const PREP_STAFF: [(f64, f64); 2] = [(4.0, 14.0), (4.0, 20.0)];
const STAFF_SIZE: f64 = 3.0;
const WANDER_ROWS: (i32, i32) = (36, 42);
const WANDER_COLS: (i32, i32) = (24, 57);
const DECOR: [(ObjectClass, [f64; 4]); 8] = [
    (ObjectClass::Cabinet, [0.0, 48.0, 4.0, 62.0]),
    (ObjectClass::Machine, [40.0, 2.0, 46.0, 9.0]),
    (ObjectClass::TrashBin, [42.0, 14.0, 45.0, 17.0]),
    (ObjectClass::Monitor, [2.0, 30.0, 5.0, 34.0]),
    (ObjectClass::IvPole, [9.0, 28.0, 11.0, 30.0]),
    (ObjectClass::AnesthesiaCart, [2.0, 2.0, 7.0, 7.0]),
    (ObjectClass::Stool, [18.0, 34.0, 20.0, 36.0]),
    (ObjectClass::Light, [10.0, 40.0, 15.0, 45.0]),
];
const ROOM_SHIFT: [(f64, f64); N_ROOMS as usize] = [
    (0.0, 0.0),
    (1.0, 1.0),
    (-1.0, 1.0),
    (1.0, -1.0),
    (-1.0, -1.0),
    (0.0, 1.0),
    (1.0, 0.0),
];

/// Cell rectangles of one room, scaled to the output grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomGeometry {
    sy: f64,
    sx: f64,
    pub door_region: [i32; 4],
    door_closed: [i32; 4],
    door_open: [i32; 4],
    pub table: [i32; 4],
    decor: Vec<(ObjectClass, [i32; 4])>,
}

impl RoomGeometry {
    pub fn new(room_id: u8, height: usize, width: usize) -> Self {
        let sy = height as f64 / REF_H;
        let sx = width as f64 / REF_W;
        let (dr, dc) = ROOM_SHIFT[room_id as usize % ROOM_SHIFT.len()];
        let mut g = Self {
            sy,
            sx,
            door_region: [0; 4],
            door_closed: [0; 4],
            door_open: [0; 4],
            table: [0; 4],
            decor: Vec::new(),
        };
        g.door_region = g.rect(DOOR_REGION);
        g.door_closed = g.rect(DOOR_CLOSED);
        g.door_open = g.rect(DOOR_OPEN);
        g.table = g.rect(TABLE);
        g.decor = DECOR
            .iter()
            .map(|&(c, [r0, c0, r1, c1])| (c, g.rect([r0 + dr, c0 + dc, r1 + dr, c1 + dc])))
            .collect();
        g
    }

    fn row(&self, r: f64) -> i32 {
        (r * self.sy).round() as i32
    }

    fn col(&self, c: f64) -> i32 {
        (c * self.sx).round() as i32
    }

    /// Scales a reference rectangle, keeping at least one cell per axis.
    fn rect(&self, [r0, c0, r1, c1]: [f64; 4]) -> [i32; 4] {
        let (a, b) = (self.row(r0), self.col(c0));
        [a, b, self.row(r1).max(a + 1), self.col(c1).max(b + 1)]
    }

    fn sized(&self, r: f64, c: f64, (h, w): (f64, f64)) -> [i32; 4] {
        self.rect([r, c, r + h, c + w])
    }

    fn lane_col(&self, moves: &[Move], t: f64) -> Option<f64> {
        let mut col = None;
        for m in moves.iter().filter(|m| m.start_s <= t) {
            let (from, to) = if m.entering {
                (LANE_OUTSIDE_COL, LANE_PARK_COL)
            } else {
                (LANE_PARK_COL, LANE_OUTSIDE_COL)
            };
            if t < m.end_s {
                let frac = (t - m.start_s) / (m.end_s - m.start_s);
                col = Some(from + (to - from) * frac);
            } else {
                col = m.entering.then_some(LANE_PARK_COL);
            }
        }
        col
    }

    fn actor(&self, class: ObjectClass, [r0, c0, r1, c1]: [i32; 4]) -> Actor {
        Actor::new(class, r0, c0, r1, c1)
    }
}

fn within(intervals: &[(f64, f64)], t: f64) -> Option<(f64, f64)> {
    intervals.iter().copied().find(|&(a, b)| a <= t && t < b)
}

impl Timeline {
    /// Actors at time `t`, in painter's order.
    pub fn scene_at(&self, t: f64, geo: &RoomGeometry) -> SceneState {
        let mut actors: Vec<Actor> = geo
            .decor
            .iter()
            .filter(|(c, _)| *c != ObjectClass::Light)
            .map(|&(c, r)| geo.actor(c, r))
            .collect();

        let door_open = self
            .gurney_moves
            .iter()
            .chain(&self.decoy_moves)
            .any(|m| m.start_s <= t && t < m.end_s);
        let door = if door_open { geo.door_open } else { geo.door_closed };
        actors.push(geo.actor(ObjectClass::Door, door));

        let raised = within(&self.table_raised, t).is_some();
        let table_h = ObjectClass::OrTable.height_m() + if raised { TABLE_RAISE_M } else { 0.0 };
        actors.push(geo.actor(ObjectClass::OrTable, geo.table).with_height(table_h));

        if let Some(col) = geo.lane_col(&self.decoy_moves, t) {
            let r = geo.sized(DECOY_ROW, col, CART_SIZE);
            actors.push(geo.actor(ObjectClass::InstrumentTable, r));
        }

        let gurney_col = geo.lane_col(&self.gurney_moves, t);
        if let Some(col) = gurney_col {
            let r = geo.sized(GURNEY_ROW, col, CART_SIZE);
            actors.push(geo.actor(ObjectClass::Gurney, r));
        }

        let on_gurney_at = |col: f64| (GURNEY_ROW, col + 1.0);
        let patient_h_on_cart = ObjectClass::Gurney.height_m() + PATIENT_THICKNESS_M;
        let loaded = self.loading.last().is_some_and(|&(_, end)| t >= end);
        let patient = if let Some((a, b)) = within(&self.loading, t) {
            let frac = (t - a) / (b - a);
            let (r0, c0) = PATIENT_ON_TABLE;
            let (r1, c1) = on_gurney_at(LANE_PARK_COL);
            Some(((r0 + (r1 - r0) * frac, c0 + (c1 - c0) * frac), patient_h_on_cart))
        } else if loaded {
            gurney_col.map(|col| (on_gurney_at(col), patient_h_on_cart))
        } else {
            Some((PATIENT_ON_TABLE, table_h + PATIENT_THICKNESS_M))
        };
        if let Some(((r, c), h)) = patient {
            let rect = geo.sized(r, c, PATIENT_SIZE);
            actors.push(geo.actor(ObjectClass::Patient, rect).with_height(h));
        }

        let second = (t.max(0.0).floor() as usize).min(self.duration_s as usize);
        for walk in &self.staff_walks {
            let (r, c) = walk[second.min(walk.len() - 1)];
            let rect = geo.sized(r as f64, c as f64, (STAFF_SIZE, STAFF_SIZE));
            actors.push(geo.actor(ObjectClass::Staff, rect));
        }
        if within(&self.prep_staff, t).is_some() {
            for (r, c) in PREP_STAFF {
                let rect = geo.sized(r, c, (STAFF_SIZE, STAFF_SIZE));
                actors.push(geo.actor(ObjectClass::Staff, rect));
            }
        }

        actors.extend(
            geo.decor
                .iter()
                .filter(|(c, _)| *c == ObjectClass::Light)
                .map(|&(c, r)| geo.actor(c, r)),
        );
        SceneState { t_s: t, actors }
    }
}

/// Lays out one trial.
///
/// Random draws, in order: target length `total_s`; per phase its duration
/// then (if any) its overlap; instrument-table entry duration, slot index,
/// offset; exit duration, slot index, offset; staff count; per staff member
/// the start row and column, then one row step and one column step (each in
/// `-1..=1`) per second.
pub fn script_trial(seed: u64, room_id: u8, scenario: &ScenarioScript) -> Result<Timeline> {
    if room_id >= N_ROOMS {
        return Err(Error::Config(format!("room_id {room_id} must be below {N_ROOMS}")));
    }
    scenario.validate()?;
    let mut rng = SimRng::new(seed);
    let target = rng.uniform_int(scenario.total_s.0, scenario.total_s.1);

    let mut spans: Vec<(PhaseKind, i64, i64)> = Vec::with_capacity(scenario.phases.len());
    let mut cursor = 0i64;
    for p in &scenario.phases {
        let d = rng.uniform_int(p.duration_s.0, p.duration_s.1);
        let start = match p.overlap_s {
            Some((lo, hi)) => cursor - rng.uniform_int(lo, hi),
            None => cursor,
        };
        spans.push((p.kind, start, start + d));
        cursor = start + d;
    }
    if cursor < target {
        let last = spans.last_mut().expect("validated non-empty");
        last.2 += target - cursor;
        cursor = target;
    }

    let mut tl = Timeline {
        duration_s: cursor as f64,
        events: Vec::new(),
        gurney_moves: Vec::new(),
        decoy_moves: Vec::new(),
        table_raised: Vec::new(),
        prep_staff: Vec::new(),
        loading: Vec::new(),
        staff_walks: Vec::new(),
    };
    for &(kind, a, b) in &spans {
        let iv = (a as f64, b as f64);
        match kind {
            PhaseKind::Idle => {}
            PhaseKind::GurneyLeaves => tl.gurney_moves.push(Move {
                start_s: iv.0,
                end_s: iv.1,
                entering: false,
            }),
            PhaseKind::Event(class) => {
                tl.events.push(EventSegment {
                    class,
                    start_s: iv.0,
                    end_s: iv.1,
                });
                match class {
                    EventClass::GurneyEntering | EventClass::PatientOutOfRoom => tl.gurney_moves.push(Move {
                        start_s: iv.0,
                        end_s: iv.1,
                        entering: class == EventClass::GurneyEntering,
                    }),
                    EventClass::PatientPreparation => tl.table_raised.push(iv),
                    EventClass::PreparingPatientToLeave => tl.prep_staff.push(iv),
                    EventClass::LoadingPatientToGurney => tl.loading.push(iv),
                }
            }
        }
    }

    let idle: Vec<(i64, i64)> = spans
        .iter()
        .filter(|s| s.0 == PhaseKind::Idle)
        .map(|&(_, a, b)| (a, b))
        .collect();
    let mut earliest = 0i64;
    for entering in [true, false] {
        let d = rng.uniform_int(scenario.decoy_move_s.0, scenario.decoy_move_s.1);
        let slots: Vec<(i64, i64)> = idle
            .iter()
            .map(|&(a, b)| (a.max(earliest), b))
            .filter(|&(a, b)| b - a >= d + 4)
            .collect();
        if slots.is_empty() {
            break;
        }
        let (a, b) = slots[rng.uniform_int(0, slots.len() as i64 - 1) as usize];
        let start = a + 2 + rng.uniform_int(0, b - a - d - 4);
        tl.decoy_moves.push(Move {
            start_s: start as f64,
            end_s: (start + d) as f64,
            entering,
        });
        earliest = start + d;
    }

    let n_staff = rng.uniform_int(scenario.wandering_staff.0, scenario.wandering_staff.1);
    for _ in 0..n_staff {
        let mut r = rng.uniform_int(WANDER_ROWS.0 as i64, WANDER_ROWS.1 as i64) as i32;
        let mut c = rng.uniform_int(WANDER_COLS.0 as i64, WANDER_COLS.1 as i64) as i32;
        let mut walk = Vec::with_capacity(cursor as usize + 1);
        walk.push((r, c));
        for _ in 0..cursor {
            r = (r + rng.uniform_int(-1, 1) as i32).clamp(WANDER_ROWS.0, WANDER_ROWS.1);
            c = (c + rng.uniform_int(-1, 1) as i32).clamp(WANDER_COLS.0, WANDER_COLS.1);
            walk.push((r, c));
        }
        tl.staff_walks.push(walk);
    }
    Ok(tl)
}

#[cfg(test)]
mod tests {
    use super::super::render::{render_frame, RoomLayout};
    use super::*;

    fn event(tl: &Timeline, c: EventClass) -> EventSegment {
        *tl.events.iter().find(|e| e.class == c).unwrap()
    }

    #[test]
    fn scripts_validate() {
        ScenarioScript::for_kind(ScenarioKind::Default).validate().unwrap();
        ScenarioScript::for_kind(ScenarioKind::Busy).validate().unwrap();
    }

    #[test]
    fn out_of_order_script_is_rejected() {
        let mut s = ScenarioScript::for_kind(ScenarioKind::Default);
        s.phases.swap(1, 3);
        assert!(s.validate().is_err());
    }

    #[test]
    fn same_inputs_same_timeline() {
        let s = ScenarioScript::for_kind(ScenarioKind::Default);
        assert_eq!(script_trial(11, 3, &s).unwrap(), script_trial(11, 3, &s).unwrap());
        assert_ne!(script_trial(11, 3, &s).unwrap(), script_trial(12, 3, &s).unwrap());
    }

    #[test]
    fn invalid_room_is_rejected() {
        let s = ScenarioScript::for_kind(ScenarioKind::Default);
        assert!(script_trial(1, 7, &s).is_err());
    }

    #[test]
    fn seed_seven_fixture() {
        let s = ScenarioScript::for_kind(ScenarioKind::Default);
        let tl = script_trial(7, 0, &s).unwrap();
        assert_eq!(tl.events.len(), 5);
        for c in EventClass::ALL {
            assert_eq!(tl.events.iter().filter(|e| e.class == c).count(), 1);
        }
        for e in &tl.events {
            assert!(0.0 <= e.start_s && e.end_s <= tl.duration_s);
        }
        let got: Vec<(f64, f64)> = tl.events.iter().map(|e| (e.start_s, e.end_s)).collect();
        assert_eq!(got, SEED_SEVEN_EVENTS);
        assert_eq!(tl.duration_s, SEED_SEVEN_DURATION);
    }

    // Pinned from the generator; order is script order.
    const SEED_SEVEN_EVENTS: [(f64, f64); 5] = [
        (28.0, 61.0),
        (96.0, 156.0),
        (267.0, 288.0),
        (285.0, 301.0),
        (308.0, 336.0),
    ];
    const SEED_SEVEN_DURATION: f64 = 408.0;

    #[test]
    fn canonical_order_holds_across_seeds() {
        for kind in [ScenarioKind::Default, ScenarioKind::Busy] {
            let s = ScenarioScript::for_kind(kind);
            for seed in 0..200 {
                let tl = script_trial(seed, (seed % 7) as u8, &s).unwrap();
                assert!((240.0..=480.0).contains(&tl.duration_s));
                let ge_end = tl
                    .events
                    .iter()
                    .filter(|e| e.class == EventClass::GurneyEntering)
                    .map(|e| e.end_s)
                    .fold(0.0, f64::max);
                let load = event(&tl, EventClass::LoadingPatientToGurney);
                assert!(ge_end <= load.start_s);
                let pp = event(&tl, EventClass::PatientPreparation);
                let pptl = event(&tl, EventClass::PreparingPatientToLeave);
                let out = event(&tl, EventClass::PatientOutOfRoom);
                assert!(ge_end <= pp.start_s && pp.end_s <= pptl.start_s);
                assert!(pptl.start_s < load.start_s && load.end_s <= out.start_s);
                let n_ge = tl
                    .events
                    .iter()
                    .filter(|e| e.class == EventClass::GurneyEntering)
                    .count();
                assert_eq!(n_ge, if kind == ScenarioKind::Busy { 2 } else { 1 });
            }
        }
    }

    #[test]
    fn preparation_is_depth_only_on_table_cells() {
        let s = ScenarioScript::for_kind(ScenarioKind::Default);
        let tl = script_trial(5, 1, &s).unwrap();
        let layout = RoomLayout::new(1, 48, 64);
        let pp = event(&tl, EventClass::PatientPreparation);
        let before = render_frame(&tl.scene_at(pp.start_s - 1.0, &layout.geometry), &layout).unwrap();
        let during = render_frame(&tl.scene_at(pp.start_s + 1.0, &layout.geometry), &layout).unwrap();
        let table_id = ObjectClass::OrTable.id();
        let mut n = 0;
        for i in 0..before.mask.len() {
            if before.mask[i] == table_id || during.mask[i] == table_id {
                assert_eq!(before.mask[i], during.mask[i]);
                assert!((before.depth[i] - during.depth[i] - TABLE_RAISE_M).abs() < 1e-9);
                n += 1;
            }
        }
        assert!(n > 0);
    }
}
