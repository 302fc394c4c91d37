use super::scenario::RoomGeometry;
use super::{DigitalTwinFrame, ObjectClass};
use crate::error::{Error, Result};

/// Axis-aligned footprint of one object, half-open cell ranges
/// `rows r0..r1`, `cols c0..c1`. Parts outside the grid are clipped.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Actor {
    pub class: ObjectClass,
    pub r0: i32,
    pub c0: i32,
    pub r1: i32,
    pub c1: i32,
    /// Top-surface height above the floor, meters.
    pub height_m: f64,
}

impl Actor {
    pub fn new(class: ObjectClass, r0: i32, c0: i32, r1: i32, c1: i32) -> Self {
        Self {
            class,
            r0,
            c0,
            r1,
            c1,
            height_m: class.height_m(),
        }
    }

    pub fn with_height(mut self, height_m: f64) -> Self {
        self.height_m = height_m;
        self
    }
}

/// Objects visible at one instant, in painter's order (later occludes earlier).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SceneState {
    pub t_s: f64,
    pub actors: Vec<Actor>,
}

/// Grid geometry and the empty-room depth field of one operating room.
#[derive(Debug, Clone, PartialEq)]
pub struct RoomLayout {
    pub room_id: u8,
    pub height: usize,
    pub width: usize,
    /// Camera-to-floor distance per cell, meters.
    pub background: Vec<f64>,
    /// Actors may extend this many cells past the grid edge (doorway corridor).
    pub margin: i32,
    pub geometry: RoomGeometry,
}

impl RoomLayout {
    /// Overhead camera at 3 m with a small room-specific tilt.
    pub fn new(room_id: u8, height: usize, width: usize) -> Self {
        let tilt_r = 0.06 * (room_id as f64 - 3.0) / 3.0;
        let tilt_c = 0.04 * (((room_id as usize * 5) % 7) as f64 - 3.0) / 3.0;
        let mut background = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                let fr = (r as f64 + 0.5) / height as f64 - 0.5;
                let fc = (c as f64 + 0.5) / width as f64 - 0.5;
                background.push(3.0 + tilt_r * fr + tilt_c * fc);
            }
        }
        Self {
            room_id,
            height,
            width,
            background,
            margin: height.max(width) as i32,
            geometry: RoomGeometry::new(room_id, height, width),
        }
    }
}

/// Rasterizes `scene` top-down: each actor paints its class ID into the mask
/// and `background - height` into the depth grid, in order.
pub fn render_frame(scene: &SceneState, layout: &RoomLayout) -> Result<DigitalTwinFrame> {
    let (h, w) = (layout.height as i32, layout.width as i32);
    let mut mask = vec![0u8; layout.height * layout.width];
    let mut depth = layout.background.clone();
    for a in &scene.actors {
        let m = layout.margin;
        if a.r0 >= a.r1 || a.c0 >= a.c1 || a.r0 < -m || a.c0 < -m || a.r1 > h + m || a.c1 > w + m {
            return Err(Error::Validation(format!(
                "{} at rows {}..{} cols {}..{} is outside the room",
                a.class.name(),
                a.r0,
                a.r1,
                a.c0,
                a.c1
            )));
        }
        for r in a.r0.max(0)..a.r1.min(h) {
            for c in a.c0.max(0)..a.c1.min(w) {
                let i = (r * w + c) as usize;
                mask[i] = a.class.id();
                depth[i] = layout.background[i] - a.height_m;
            }
        }
    }
    Ok(DigitalTwinFrame {
        height: layout.height,
        width: layout.width,
        mask,
        depth,
        timestamp_s: scene.t_s,
    })
}
