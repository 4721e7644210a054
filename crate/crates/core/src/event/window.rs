use crate::error::{Error, Result};
use crate::event::{Event, EventStream};

/// A run of consecutive events with a fixed count.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct EventWindow {
    events: Vec<Event>,
    t0: u64,
    duration: u64,
}

impl EventWindow {
    /// Builds a window from time-ordered events; `t0` is the first timestamp
    /// and the duration is `t_last - t0`.
    pub fn new(events: Vec<Event>) -> Result<Self> {
        let (first, last) = match (events.first(), events.last()) {
            (Some(f), Some(l)) => (f.t, l.t),
            _ => return Err(Error::validation("an event window cannot be empty")),
        };
        if events.windows(2).any(|w| w[0].t > w[1].t) {
            return Err(Error::validation("window events are not sorted by timestamp"));
        }
        Ok(EventWindow {
            events,
            t0: first,
            duration: last - first,
        })
    }

    /// Builds a window from events in any order; `t0` is the earliest
    /// timestamp and the duration spans to the latest. Agrees with
    /// [`EventWindow::new`] on sorted input.
    pub fn unordered(events: Vec<Event>) -> Result<Self> {
        let lo = events.iter().map(|e| e.t).min();
        let hi = events.iter().map(|e| e.t).max();
        match (lo, hi) {
            (Some(lo), Some(hi)) => Ok(EventWindow {
                events,
                t0: lo,
                duration: hi - lo,
            }),
            _ => Err(Error::validation("an event window cannot be empty")),
        }
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

    pub fn t0(&self) -> u64 {
        self.t0
    }

    /// `t_last - t0` in microseconds.
    pub fn duration(&self) -> u64 {
        self.duration
    }
}

/// Splits a stream into consecutive, non-overlapping windows of exactly
/// `n` events. A trailing remainder shorter than `n` is dropped.
pub fn window_by_count(stream: &EventStream, n: usize) -> Result<Vec<EventWindow>> {
    if n == 0 {
        return Err(Error::validation("events per window must be at least 1"));
    }
    if !stream.is_sorted() {
        return Err(Error::validation("cannot window an unsorted event stream"));
    }
    stream
        .events()
        .chunks_exact(n)
        .map(|chunk| EventWindow::new(chunk.to_vec()))
        .collect()
}
