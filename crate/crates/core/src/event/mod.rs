//! Event-camera data model: events, streams, fixed-count windows, voxel
//! grids, the brightness-threshold simulator and the binary file formats.

pub mod io;
mod simulate;
mod voxel;
mod window;

pub use simulate::{reconstruct_log_change, simulate_events, simulate_log_frames, SimulatorConfig, LOG_EPS};
pub use voxel::{build_voxel_grid, temporal_weights, TemporalWeights, VoxelGrid, DEFAULT_BINS};
pub use window::{window_by_count, EventWindow};

use crate::error::{Error, Result};

/// Sign of a brightness change.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Polarity {
    Negative,
    Positive,
}

impl Polarity {
    pub fn sign(self) -> i8 {
        match self {
            Polarity::Negative => -1,
            Polarity::Positive => 1,
        }
    }

    pub fn from_sign(p: i8) -> Option<Self> {
        match p {
            -1 => Some(Polarity::Negative),
            1 => Some(Polarity::Positive),
            _ => None,
        }
    }
}

/// A single event: pixel column `x`, row `y`, timestamp in microseconds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub t: u64,
    pub p: Polarity,
}

impl Event {
    pub fn new(x: u16, y: u16, t: u64, p: Polarity) -> Self {
        Event { x, y, t, p }
    }
}

/// Events of one sensor, sorted by timestamp.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
}

impl EventStream {
    /// Validates bounds and temporal order.
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        let s = Self::from_parts_unchecked(width, height, events);
        s.check_bounds()?;
        if !s.is_sorted() {
            return Err(Error::validation("events are not sorted by timestamp"));
        }
        Ok(s)
    }

    /// Builds a stream without checking order; bounds are still enforced by
    /// every consumer. Used by decoders and by tests of the validation paths.
    pub fn from_parts_unchecked(width: u16, height: u16, events: Vec<Event>) -> Self {
        EventStream { width, height, events }
    }

    pub fn empty(width: u16, height: u16) -> Self {
        EventStream {
            width,
            height,
            events: Vec::new(),
        }
    }

    pub fn width(&self) -> u16 {
        self.width
    }

    pub fn height(&self) -> u16 {
        self.height
    }

    pub fn events(&self) -> &[Event] {
        &self.events
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn is_sorted(&self) -> bool {
        self.events.windows(2).all(|w| w[0].t <= w[1].t)
    }

    pub fn check_bounds(&self) -> Result<()> {
        if let Some(e) = self.events.iter().find(|e| e.x >= self.width || e.y >= self.height) {
            return Err(Error::validation(format!(
                "event at ({}, {}) outside {}x{} sensor",
                e.x, e.y, self.width, self.height
            )));
        }
        Ok(())
    }

    /// The last `count` events (all of them if fewer exist).
    pub fn tail(&self, count: usize) -> EventStream {
        let start = self.events.len().saturating_sub(count);
        EventStream {
            width: self.width,
            height: self.height,
            events: self.events[start..].to_vec(),
        }
    }

    pub fn polarity_sum(&self) -> i64 {
        self.events.iter().map(|e| e.p.sign() as i64).sum()
    }
}
