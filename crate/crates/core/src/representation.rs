//! Fixed-shape network inputs derived from event streams: per-segment
//! accumulation frames and time surfaces, Fourier time encodings, and the
//! multi-scale nearest-event channel stacks used by the refinement network.

use crate::error::{Error, Result};
use crate::events::{Direction, EventStream};

/// Stacked event tensor: for each of `segments` equal time intervals, one
/// signed accumulation channel followed by one time-surface channel.
/// Channel layout: `[A_0, T_0, A_1, T_1, ...]`, row-major spatial data.
#[derive(Debug, Clone, PartialEq)]
pub struct EventTensor {
    segments: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl EventTensor {
    pub fn channels(&self) -> usize {
        2 * self.segments
    }

    pub fn segments(&self) -> usize {
        self.segments
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    /// Raw channel-major data, length `channels * height * width`.
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn accumulation(&self, segment: usize, x: usize, y: usize) -> f64 {
        self.at(2 * segment, x, y)
    }

    pub fn time_surface(&self, segment: usize, x: usize, y: usize) -> f64 {
        self.at(2 * segment + 1, x, y)
    }
}

/// Split the exposure into equal half-open segments (the last one closed)
/// and stack each into a signed accumulation frame plus a time surface.
///
/// The accumulation sums polarities per pixel; the time surface holds the
/// exposure-normalized timestamp of the most recent event per pixel, zero
/// where no event fell.
pub fn stack_events(stream: &EventStream, segments: usize) -> Result<EventTensor> {
    if segments == 0 {
        return Err(Error::invalid("stack_events requires at least 1 segment"));
    }
    let (w, h) = (stream.width(), stream.height());
    let mut data = vec![0.0f64; 2 * segments * w * h];
    let span = stream.span();
    for e in stream.events() {
        let norm = if span > 0.0 {
            ((e.t - stream.t_start()) / span).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let seg = ((norm * segments as f64) as usize).min(segments - 1);
        let pix = e.y as usize * w + e.x as usize;
        data[(2 * seg * h * w) + pix] += e.p as f64;
        // Events are time-sorted, so the last write wins.
        data[((2 * seg + 1) * h * w) + pix] = norm;
    }
    Ok(EventTensor {
        segments,
        width: w,
        height: h,
        data,
    })
}

/// Fourier encoding of a normalized timestamp:
/// `(cos(2^l pi t), sin(2^l pi t))` for `l = 0 .. L-1`.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeEncoding {
    values: Vec<f64>,
}

impl TimeEncoding {
    pub fn frequencies(&self) -> usize {
        self.values.len() / 2
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn cos(&self, l: usize) -> f64 {
        self.values[2 * l]
    }

    pub fn sin(&self, l: usize) -> f64 {
        self.values[2 * l + 1]
    }
}

pub fn fourier_encode(t: f64, frequencies: usize) -> Result<TimeEncoding> {
    if frequencies == 0 {
        return Err(Error::invalid("fourier_encode requires L >= 1"));
    }
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::invalid("fourier_encode expects t in [0, 1]"));
    }
    let mut values = Vec::with_capacity(2 * frequencies);
    for l in 0..frequencies {
        let arg = (1u64 << l) as f64 * std::f64::consts::PI * t;
        values.push(arg.cos());
        values.push(arg.sin());
    }
    Ok(TimeEncoding { values })
}

/// Multi-scale nearest-event stacks around a query time: for each event
/// budget `P` in ascending order, one signed accumulation of the nearest `P`
/// events after `t` and one of the nearest `P` events before `t`.
/// Channel layout: `[after_P1, before_P1, after_P2, before_P2, ...]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SubtleSegmentTensor {
    scales: usize,
    width: usize,
    height: usize,
    data: Vec<f64>,
}

impl SubtleSegmentTensor {
    pub fn channels(&self) -> usize {
        2 * self.scales
    }

    pub fn scales(&self) -> usize {
        self.scales
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn at(&self, channel: usize, x: usize, y: usize) -> f64 {
        self.data[(channel * self.height + y) * self.width + x]
    }

    pub fn after(&self, scale: usize, x: usize, y: usize) -> f64 {
        self.at(2 * scale, x, y)
    }

    pub fn before(&self, scale: usize, x: usize, y: usize) -> f64 {
        self.at(2 * scale + 1, x, y)
    }
}

pub fn subtle_segments(
    stream: &EventStream,
    t: f64,
    p_list: &[usize],
) -> Result<SubtleSegmentTensor> {
    if p_list.is_empty() {
        return Err(Error::invalid("subtle_segments requires a non-empty P list"));
    }
    if !p_list.windows(2).all(|w| w[0] < w[1]) || p_list[0] == 0 {
        return Err(Error::invalid(
            "subtle_segments requires strictly ascending positive P values",
        ));
    }
    let (w, h) = (stream.width(), stream.height());
    let mut data = vec![0.0f64; 2 * p_list.len() * w * h];
    for (scale, &p) in p_list.iter().enumerate() {
        for (offset, direction) in [(0, Direction::After), (1, Direction::Before)] {
            let subset = stream.nearest_events(t, p, direction)?;
            let base = (2 * scale + offset) * h * w;
            for e in subset.events() {
                data[base + e.y as usize * w + e.x as usize] += e.p as f64;
            }
        }
    }
    Ok(SubtleSegmentTensor {
        scales: p_list.len(),
        width: w,
        height: h,
        data,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::events::Event;

    fn stream_of(events: Vec<Event>) -> EventStream {
        EventStream::new(8, 6, 0.0, 1.0, events).unwrap()
    }

    #[test]
    fn empty_stream_stacks_to_zero() {
        let tensor = stack_events(&stream_of(vec![]), 6).unwrap();
        assert_eq!(tensor.channels(), 12);
        assert!(tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn single_event_lands_in_first_segment() {
        let tensor = stack_events(
            &stream_of(vec![Event {
                t: 0.05,
                x: 2,
                y: 3,
                p: 1,
            }]),
            6,
        )
        .unwrap();
        assert_eq!(tensor.accumulation(0, 2, 3), 1.0);
        assert_eq!(tensor.time_surface(0, 2, 3), 0.05);
        let nonzero = tensor.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn cancellation_keeps_latest_time() {
        let tensor = stack_events(
            &stream_of(vec![
                Event {
                    t: 0.01,
                    x: 1,
                    y: 1,
                    p: 1,
                },
                Event {
                    t: 0.12,
                    x: 1,
                    y: 1,
                    p: -1,
                },
            ]),
            6,
        )
        .unwrap();
        assert_eq!(tensor.accumulation(0, 1, 1), 0.0);
        assert_eq!(tensor.time_surface(0, 1, 1), 0.12);
    }

    #[test]
    fn final_instant_falls_in_last_segment() {
        let tensor = stack_events(
            &stream_of(vec![Event {
                t: 1.0,
                x: 0,
                y: 0,
                p: -1,
            }]),
            6,
        )
        .unwrap();
        assert_eq!(tensor.accumulation(5, 0, 0), -1.0);
        assert_eq!(tensor.time_surface(5, 0, 0), 1.0);
    }

    #[test]
    fn accumulation_partition_is_complete() {
        let events: Vec<Event> = (0..50)
            .map(|i| Event {
                t: i as f64 / 49.0,
                x: (i * 3 % 8) as u16,
                y: (i * 5 % 6) as u16,
                p: if i % 3 == 0 { -1 } else { 1 },
            })
            .collect();
        let total: f64 = events.iter().map(|e| e.p as f64).sum();
        let tensor = stack_events(&stream_of(events), 6).unwrap();
        let mut acc = 0.0;
        for seg in 0..6 {
            for y in 0..6 {
                for x in 0..8 {
                    acc += tensor.accumulation(seg, x, y);
                }
            }
        }
        assert_eq!(acc, total);
    }

    #[test]
    fn fourier_boundary_values() {
        let l = 8;
        let zero = fourier_encode(0.0, l).unwrap();
        for i in 0..l {
            assert_eq!(zero.cos(i), 1.0);
            assert_eq!(zero.sin(i), 0.0);
        }
        let one = fourier_encode(1.0, l).unwrap();
        assert!((one.cos(0) - (-1.0)).abs() < 1e-12);
        for i in 1..l {
            assert!((one.cos(i) - 1.0).abs() < 1e-12, "cos l={i}");
            assert!(one.sin(i).abs() < 1e-12, "sin l={i}");
        }
    }

    #[test]
    fn fourier_half_matches_direct_evaluation() {
        // cos/sin at multiples of pi/2: (0,1,-1,0,1,0,1,0,...).
        let enc = fourier_encode(0.5, 8).unwrap();
        let expect = [
            0.0, 1.0, -1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0,
        ];
        for (got, want) in enc.values().iter().zip(expect) {
            assert!((got - want).abs() < 1e-12, "got {got}, want {want}");
        }
    }

    #[test]
    fn fourier_unit_norm_per_frequency() {
        let l = 8;
        for i in 0..1000 {
            let t = i as f64 / 999.0;
            let enc = fourier_encode(t, l).unwrap();
            let mut total = 0.0;
            for f in 0..l {
                let norm = enc.cos(f) * enc.cos(f) + enc.sin(f) * enc.sin(f);
                assert!((norm - 1.0).abs() < 1e-12);
                total += norm;
            }
            assert!((total - l as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn fourier_rejects_bad_args() {
        assert!(fourier_encode(0.5, 0).is_err());
        assert!(fourier_encode(1.5, 4).is_err());
    }

    #[test]
    fn subtle_segments_empty_stream_is_zero() {
        let tensor = subtle_segments(&stream_of(vec![]), 0.5, &[4, 16]).unwrap();
        assert_eq!(tensor.channels(), 4);
        assert!(tensor.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn subtle_segments_at_stream_start_has_empty_before() {
        let events: Vec<Event> = (0..10)
            .map(|i| Event {
                t: 0.05 + i as f64 / 20.0,
                x: i as u16 % 8,
                y: 0,
                p: 1,
            })
            .collect();
        let tensor = subtle_segments(&stream_of(events), 0.0, &[2, 4]).unwrap();
        for scale in 0..2 {
            for x in 0..8 {
                assert_eq!(tensor.before(scale, x, 0), 0.0);
            }
        }
        // After channels accumulate the nearest P events.
        let sum_after0: f64 = (0..8).map(|x| tensor.after(0, x, 0)).sum();
        assert_eq!(sum_after0, 2.0);
    }

    #[test]
    fn subtle_segments_single_budget_single_pixel() {
        let events = vec![
            Event {
                t: 0.3,
                x: 2,
                y: 2,
                p: -1,
            },
            Event {
                t: 0.7,
                x: 5,
                y: 1,
                p: 1,
            },
        ];
        let tensor = subtle_segments(&stream_of(events), 0.5, &[1]).unwrap();
        assert_eq!(tensor.after(0, 5, 1), 1.0);
        assert_eq!(tensor.before(0, 2, 2), -1.0);
        let nonzero = tensor.data().iter().filter(|&&v| v != 0.0).count();
        assert_eq!(nonzero, 2);
    }

    #[test]
    fn subtle_segments_support_grows_with_budget() {
        let events: Vec<Event> = (0..40)
            .map(|i| Event {
                t: i as f64 / 39.0,
                x: (i % 8) as u16,
                y: (i % 6) as u16,
                p: 1,
            })
            .collect();
        let tensor = subtle_segments(&stream_of(events), 0.4, &[1, 4, 16]).unwrap();
        let support = |scale: usize| {
            let mut n = 0;
            for y in 0..6 {
                for x in 0..8 {
                    if tensor.after(scale, x, y) != 0.0 {
                        n += 1;
                    }
                }
            }
            n
        };
        assert!(support(0) <= support(1) && support(1) <= support(2));
    }

    #[test]
    fn subtle_segments_validates_p_list() {
        let s = stream_of(vec![]);
        assert!(subtle_segments(&s, 0.5, &[]).is_err());
        assert!(subtle_segments(&s, 0.5, &[4, 4]).is_err());
        assert!(subtle_segments(&s, 0.5, &[0, 2]).is_err());
    }
}
