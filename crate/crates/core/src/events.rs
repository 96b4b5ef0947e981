//! Event data model, threshold-crossing simulation from frame sequences,
//! uniform noise injection, temporal selection, and CSV I/O.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::imaging::FrameSequence;

/// A single polarity event: the pixel `(x, y)` crossed the contrast
/// threshold at time `t` in direction `p` (+1 brighter, -1 darker).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub t: f64,
    pub x: u16,
    pub y: u16,
    pub p: i8,
}

/// Which side of a query time [`nearest_events`] selects from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Events with `t_i >= t`, earliest first.
    After,
    /// Events with `t_i < t`, the latest ones, returned in ascending order.
    Before,
}

/// Time-sorted polarity events over a fixed sensor grid and exposure span.
///
/// Streams are immutable after construction; every operation returns a new
/// stream.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    width: usize,
    height: usize,
    t_start: f64,
    t_end: f64,
    events: Vec<Event>,
}

impl EventStream {
    pub fn new(
        width: usize,
        height: usize,
        t_start: f64,
        t_end: f64,
        events: Vec<Event>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("sensor dimensions must be positive"));
        }
        if !t_start.is_finite() || !t_end.is_finite() || t_start > t_end {
            return Err(Error::invalid("event stream requires t_start <= t_end"));
        }
        let mut prev = f64::NEG_INFINITY;
        for (i, e) in events.iter().enumerate() {
            if e.p != 1 && e.p != -1 {
                return Err(Error::invalid(format!("event {i}: polarity must be +1/-1")));
            }
            if (e.x as usize) >= width || (e.y as usize) >= height {
                return Err(Error::invalid(format!("event {i}: pixel out of bounds")));
            }
            if !e.t.is_finite() || e.t < t_start || e.t > t_end {
                return Err(Error::invalid(format!(
                    "event {i}: timestamp outside [{t_start}, {t_end}]"
                )));
            }
            if e.t < prev {
                return Err(Error::invalid(format!("event {i}: timestamps not sorted")));
            }
            prev = e.t;
        }
        Ok(EventStream {
            width,
            height,
            t_start,
            t_end,
            events,
        })
    }

    pub fn empty(width: usize, height: usize, t_start: f64, t_end: f64) -> Result<Self> {
        EventStream::new(width, height, t_start, t_end, Vec::new())
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn t_start(&self) -> f64 {
        self.t_start
    }

    pub fn t_end(&self) -> f64 {
        self.t_end
    }

    pub fn span(&self) -> f64 {
        self.t_end - self.t_start
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

    /// Events with `t` in `[t0, t1)`; the upper bound closes when `t1` is the
    /// stream's own end so that a full-span slice is the identity.
    pub fn slice(&self, t0: f64, t1: f64) -> Result<EventStream> {
        if t0 > t1 {
            return Err(Error::invalid("slice requires t0 <= t1"));
        }
        if t0 < self.t_start || t1 > self.t_end {
            return Err(Error::invalid("slice bounds outside the exposure span"));
        }
        let lo = self.events.partition_point(|e| e.t < t0);
        let hi = if t1 == self.t_end {
            self.events.len()
        } else {
            self.events.partition_point(|e| e.t < t1)
        };
        EventStream::new(
            self.width,
            self.height,
            t0,
            t1,
            self.events[lo..hi].to_vec(),
        )
    }

    /// The `min(P, available)` events temporally nearest to `t` on one side.
    /// Polarities are passed through untouched; the result keeps the parent
    /// stream's exposure span.
    pub fn nearest_events(&self, t: f64, p: usize, direction: Direction) -> Result<EventStream> {
        if p == 0 {
            return Err(Error::invalid("nearest_events requires P >= 1"));
        }
        if t < self.t_start || t > self.t_end {
            return Err(Error::invalid("query time outside the exposure span"));
        }
        let split = self.events.partition_point(|e| e.t < t);
        let selected = match direction {
            Direction::After => &self.events[split..(split + p).min(self.events.len())],
            Direction::Before => &self.events[split.saturating_sub(p)..split],
        };
        EventStream::new(
            self.width,
            self.height,
            self.t_start,
            self.t_end,
            selected.to_vec(),
        )
    }

    /// Mirror all events horizontally on the sensor grid.
    pub fn hflip(&self) -> EventStream {
        let w = self.width as u16;
        EventStream {
            events: self
                .events
                .iter()
                .map(|e| Event {
                    x: w - 1 - e.x,
                    ..*e
                })
                .collect(),
            ..self.clone()
        }
    }

    /// Serialize as CSV: header `t,x,y,p`, one event per line, timestamps at
    /// full round-trip precision, LF line endings.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = String::with_capacity(16 + 24 * self.events.len());
        out.push_str("t,x,y,p\n");
        for e in &self.events {
            writeln!(out, "{},{},{},{}", e.t, e.x, e.y, e.p).expect("string write");
        }
        fs::write(path, out)?;
        Ok(())
    }

    /// Parse the CSV format written by [`EventStream::write_csv`]. The file
    /// stores only events, so the sensor geometry and exposure span are
    /// supplied by the caller.
    pub fn read_csv(
        path: impl AsRef<Path>,
        width: usize,
        height: usize,
        t_start: f64,
        t_end: f64,
    ) -> Result<EventStream> {
        let path = path.as_ref();
        let name = path.display().to_string();
        let text = fs::read_to_string(path)?;
        let err = |line: usize, message: String| Error::Parse {
            path: name.clone(),
            line,
            message,
        };

        let mut lines = text.lines().enumerate();
        match lines.next() {
            Some((_, "t,x,y,p")) => {}
            _ => return Err(err(1, "expected header 't,x,y,p'".into())),
        }
        let mut events = Vec::new();
        let mut prev = f64::NEG_INFINITY;
        for (idx, line) in lines {
            let lineno = idx + 1;
            let mut fields = line.split(',');
            let mut next = |what: &str| {
                fields
                    .next()
                    .ok_or_else(|| err(lineno, format!("missing field '{what}'")))
            };
            let t: f64 = next("t")?
                .parse()
                .map_err(|_| err(lineno, "bad timestamp".into()))?;
            let x: u16 = next("x")?
                .parse()
                .map_err(|_| err(lineno, "bad x coordinate".into()))?;
            let y: u16 = next("y")?
                .parse()
                .map_err(|_| err(lineno, "bad y coordinate".into()))?;
            let p: i8 = next("p")?
                .parse()
                .map_err(|_| err(lineno, "bad polarity".into()))?;
            if fields.next().is_some() {
                return Err(err(lineno, "too many fields".into()));
            }
            if p != 1 && p != -1 {
                return Err(err(lineno, format!("polarity must be 1 or -1, got {p}")));
            }
            if (x as usize) >= width || (y as usize) >= height {
                return Err(err(lineno, format!("pixel ({x},{y}) out of bounds")));
            }
            if !t.is_finite() || t < t_start || t > t_end {
                return Err(err(lineno, "timestamp outside the exposure span".into()));
            }
            if t < prev {
                return Err(err(lineno, "timestamps not sorted".into()));
            }
            prev = t;
            events.push(Event { t, x, y, p });
        }
        EventStream::new(width, height, t_start, t_end, events)
    }
}

fn sort_by_time(events: &mut [Event]) {
    // Timestamps are finite by construction; stable sort keeps ties in
    // insertion order.
    events.sort_by(|a, b| a.t.partial_cmp(&b.t).expect("finite timestamps"));
}

/// Simulate events from a high-rate frame sequence with a per-pixel
/// reference-level crossing model.
///
/// Each pixel tracks a reference log intensity starting at
/// `ln(I_0 + log_eps)`. Between consecutive frames the log intensity is
/// interpolated linearly; every crossing of `reference +/- threshold_c`
/// emits one event at the interpolated crossing instant and moves the
/// reference by one threshold step. There is no refractory period, and the
/// model is deterministic: `_seed` is accepted for call-site stability only.
pub fn simulate_events(
    frames: &FrameSequence,
    threshold_c: f64,
    log_eps: f64,
    _seed: u64,
) -> Result<EventStream> {
    if frames.len() < 2 {
        return Err(Error::invalid("event simulation needs at least 2 frames"));
    }
    if !(threshold_c > 0.0) {
        return Err(Error::invalid("contrast threshold must be positive"));
    }
    if !(log_eps > 0.0) {
        return Err(Error::invalid("log_eps must be positive"));
    }
    let (w, h) = (frames.width(), frames.height());
    if w > u16::MAX as usize || h > u16::MAX as usize {
        return Err(Error::invalid("sensor dimensions exceed u16 range"));
    }
    let (t_start, t_end) = frames.span();

    let log_frames: Vec<Vec<f64>> = frames
        .frames()
        .iter()
        .map(|f| f.pixels().iter().map(|&v| (v + log_eps).ln()).collect())
        .collect();

    let mut events = Vec::new();
    let mut reference: Vec<f64> = log_frames[0].clone();
    for (pair, times) in log_frames.windows(2).zip(frames.frames().windows(2)) {
        let (t_a, t_b) = (times[0].timestamp(), times[1].timestamp());
        let dt = t_b - t_a;
        for y in 0..h {
            for x in 0..w {
                let idx = y * w + x;
                let l_a = pair[0][idx];
                let l_b = pair[1][idx];
                let delta = l_b - l_a;
                let r = &mut reference[idx];
                if delta > 0.0 {
                    while *r + threshold_c <= l_b {
                        let cross = *r + threshold_c;
                        let t = t_a + dt * (cross - l_a) / delta;
                        events.push(Event {
                            t: t.clamp(t_a, t_b),
                            x: x as u16,
                            y: y as u16,
                            p: 1,
                        });
                        *r = cross;
                    }
                } else if delta < 0.0 {
                    while *r - threshold_c >= l_b {
                        let cross = *r - threshold_c;
                        let t = t_a + dt * (cross - l_a) / delta;
                        events.push(Event {
                            t: t.clamp(t_a, t_b),
                            x: x as u16,
                            y: y as u16,
                            p: -1,
                        });
                        *r = cross;
                    }
                }
            }
        }
    }
    sort_by_time(&mut events);
    EventStream::new(w, h, t_start, t_end, events)
}

/// Add `floor(level * |events|)` uniformly distributed noise events.
///
/// Noise timestamps, pixels, and polarities are drawn uniformly over the
/// exposure span and sensor grid. The original events survive as a
/// subsequence (ties broken by stable sort), and the output is a pure
/// function of `(stream, level, seed)`.
pub fn inject_noise(stream: &EventStream, level: f64, seed: u64) -> Result<EventStream> {
    if !(0.0..=10.0).contains(&level) {
        return Err(Error::invalid("noise level must lie in [0, 10]"));
    }
    let n_noise = (level * stream.len() as f64).floor() as usize;
    if n_noise == 0 {
        return Ok(stream.clone());
    }
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut events = stream.events().to_vec();
    events.reserve(n_noise);
    for _ in 0..n_noise {
        let t = rng.gen_range(stream.t_start()..=stream.t_end());
        let x = rng.gen_range(0..stream.width()) as u16;
        let y = rng.gen_range(0..stream.height()) as u16;
        let p = if rng.gen::<bool>() { 1 } else { -1 };
        events.push(Event { t, x, y, p });
    }
    sort_by_time(&mut events);
    EventStream::new(
        stream.width(),
        stream.height(),
        stream.t_start(),
        stream.t_end(),
        events,
    )
}
