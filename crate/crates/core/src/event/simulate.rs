use crate::error::{Error, Result};
use crate::event::{Event, EventStream, Polarity};
use crate::image::GrayImage;

/// Offset inside `log(I + eps)`.
pub const LOG_EPS: f64 = 1e-3;

/// Slack for deciding that a threshold was reached, absorbing rounding in
/// repeated additions of the threshold.
const CROSSING_SLACK: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SimulatorConfig {
    /// Contrast threshold on log-intensity.
    pub threshold: f64,
}

impl Default for SimulatorConfig {
    fn default() -> Self {
        SimulatorConfig { threshold: 0.15 }
    }
}

impl SimulatorConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.threshold.is_finite() && self.threshold > 0.0) {
            return Err(Error::validation(format!(
                "contrast threshold must be positive, got {}",
                self.threshold
            )));
        }
        Ok(())
    }
}

/// Converts timestamped intensity frames into events.
pub fn simulate_events(frames: &[(u64, GrayImage)], config: &SimulatorConfig) -> Result<EventStream> {
    let logs: Vec<(u64, Vec<f64>)> = frames
        .iter()
        .map(|(t, img)| (*t, img.data.iter().map(|&v| (v as f64 + LOG_EPS).ln()).collect()))
        .collect();
    let (h, w) = match frames.first() {
        Some((_, img)) => (img.height, img.width),
        None => return Err(Error::validation("simulation needs at least one frame")),
    };
    if frames.iter().any(|(_, f)| (f.height, f.width) != (h, w)) {
        return Err(Error::validation("all frames must share one resolution"));
    }
    simulate_log_frames(&logs, w, h, config)
}

/// Core simulator over log-intensity maps of `width x height` pixels.
///
/// Per pixel the reference level starts at the first frame. Between frames
/// the log-intensity is linear in time; each crossing of
/// `reference +- k * threshold` emits one event at the interpolated time,
/// rounded to whole microseconds, and moves the reference to that level.
pub fn simulate_log_frames(
    frames: &[(u64, Vec<f64>)],
    width: usize,
    height: usize,
    config: &SimulatorConfig,
) -> Result<EventStream> {
    config.validate()?;
    if width > u16::MAX as usize || height > u16::MAX as usize {
        return Err(Error::validation("sensor dimensions must fit in 16 bits"));
    }
    let pixels = width * height;
    let Some((_, first)) = frames.first() else {
        return Err(Error::validation("simulation needs at least one frame"));
    };
    for (i, (t, f)) in frames.iter().enumerate() {
        if f.len() != pixels {
            return Err(Error::validation(format!("frame {i} has {} pixels, expected {pixels}", f.len())));
        }
        if f.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(format!("frame {i} contains non-finite values")));
        }
        if i > 0 && *t < frames[i - 1].0 {
            return Err(Error::validation("frame timestamps must be non-decreasing"));
        }
    }
    let c = config.threshold;
    let mut reference = first.clone();
    let mut events = Vec::new();
    for pair in frames.windows(2) {
        let (ta, la) = (&pair[0].0, &pair[0].1);
        let (tb, lb) = (&pair[1].0, &pair[1].1);
        let span = (tb - ta) as f64;
        let start = events.len();
        for pix in 0..pixels {
            let (a, b) = (la[pix], lb[pix]);
            let r = &mut reference[pix];
            let (x, y) = ((pix % width) as u16, (pix / width) as u16);
            let emit_at = |level: f64| {
                let frac = if b == a { 1.0 } else { ((level - a) / (b - a)).clamp(0.0, 1.0) };
                ta + (frac * span).round() as u64
            };
            while b - *r >= c - CROSSING_SLACK {
                *r += c;
                events.push(Event::new(x, y, emit_at(*r), Polarity::Positive));
            }
            while *r - b >= c - CROSSING_SLACK {
                *r -= c;
                events.push(Event::new(x, y, emit_at(*r), Polarity::Negative));
            }
        }
        // Stable: ties keep pixel order.
        events[start..].sort_by_key(|e| e.t);
    }
    EventStream::new(width as u16, height as u16, events)
}

/// Per-pixel log-intensity change implied by a stream: `threshold * sum(p)`.
pub fn reconstruct_log_change(stream: &EventStream, threshold: f64) -> Result<Vec<f64>> {
    stream.check_bounds()?;
    let w = stream.width() as usize;
    let mut acc = vec![0i64; w * stream.height() as usize];
    for e in stream.events() {
        acc[e.y as usize * w + e.x as usize] += e.p.sign() as i64;
    }
    Ok(acc.into_iter().map(|s| s as f64 * threshold).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_pixel_ramp_emits_three_events() {
        let frames = vec![(0u64, vec![0.0]), (1000u64, vec![0.45])];
        let s = simulate_log_frames(&frames, 1, 1, &SimulatorConfig::default()).unwrap();
        let ts: Vec<u64> = s.events().iter().map(|e| e.t).collect();
        assert_eq!(ts, vec![333, 667, 1000]);
        assert!(s.events().iter().all(|e| e.p == Polarity::Positive));
    }

    #[test]
    fn falling_ramp_emits_negative_events() {
        let frames = vec![(0u64, vec![0.0]), (100u64, vec![-0.31])];
        let s = simulate_log_frames(&frames, 1, 1, &SimulatorConfig::default()).unwrap();
        assert_eq!(s.len(), 2);
        assert!(s.events().iter().all(|e| e.p == Polarity::Negative));
        assert_eq!(s.events()[0].t, 48);
    }

    #[test]
    fn reference_carries_across_frames() {
        // 0 -> 0.1 -> 0.2: only the second interval crosses 0.15.
        let frames = vec![(0u64, vec![0.0]), (10, vec![0.1]), (20, vec![0.2])];
        let s = simulate_log_frames(&frames, 1, 1, &SimulatorConfig::default()).unwrap();
        assert_eq!(s.len(), 1);
        assert_eq!(s.events()[0].t, 15);
    }

    #[test]
    fn output_is_time_sorted_across_pixels() {
        let frames = vec![(0u64, vec![0.0, 0.0]), (90, vec![0.3, 0.6])];
        let s = simulate_log_frames(&frames, 2, 1, &SimulatorConfig::default()).unwrap();
        assert!(s.is_sorted());
        assert_eq!(s.len(), 6);
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let bad = SimulatorConfig { threshold: 0.0 };
        assert!(simulate_log_frames(&[(0, vec![0.0])], 1, 1, &bad).is_err());
        assert!(simulate_log_frames(&[], 1, 1, &SimulatorConfig::default()).is_err());
        let frames = vec![(10u64, vec![0.0]), (5, vec![1.0])];
        assert!(simulate_log_frames(&frames, 1, 1, &SimulatorConfig::default()).is_err());
    }
}
