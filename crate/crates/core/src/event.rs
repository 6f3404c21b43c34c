//! Raw event streams: parsing, validation, windowing and the canonical
//! text file format.
//!
//! The file format is line-oriented UTF-8 text. The first line carries the
//! sensor geometry `W H`; every following line is one event `t x y p` with
//! `t` in decimal seconds (written with six fractional digits), integer
//! pixel coordinates and polarity `1` or `-1`, single-space separated.

use std::io::{BufRead, BufReader, Read, Write};

use thiserror::Error;

/// A single sensor event: at time `t`, pixel `(x, y)` reported a brightness
/// change of sign `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    /// Timestamp in seconds, non-negative.
    pub t: f64,
    /// Column index, `0 <= x < sensor_width`.
    pub x: u16,
    /// Row index, `0 <= y < sensor_height`.
    pub y: u16,
    /// Polarity, exactly `+1` or `-1`.
    pub p: i8,
}

/// An ordered event sequence together with the sensor geometry it was
/// recorded on. Timestamps are non-decreasing.
#[derive(Debug, Clone, PartialEq)]
pub struct EventStream {
    pub sensor_width: usize,
    pub sensor_height: usize,
    pub events: Vec<Event>,
}

/// The events of a stream falling in the half-open interval
/// `[t_start, t_start + duration)`, in stream order.
#[derive(Debug, Clone, PartialEq)]
pub struct EventWindow {
    pub t_start: f64,
    pub duration: f64,
    pub sensor_width: usize,
    pub sensor_height: usize,
    pub events: Vec<Event>,
}

/// Default window length in seconds.
pub const DEFAULT_WINDOW: f64 = 0.05;

#[derive(Debug, Error)]
pub enum EventIoError {
    #[error("line {line}: malformed line: {msg}")]
    MalformedLine { line: usize, msg: String },
    #[error("line {line}: pixel ({x}, {y}) outside sensor geometry {width}x{height}")]
    OutOfBounds {
        line: usize,
        x: i64,
        y: i64,
        width: usize,
        height: usize,
    },
    #[error("line {line}: polarity must be 1 or -1, got {value}")]
    BadPolarity { line: usize, value: i64 },
    #[error("line {line}: timestamp {t} decreases below previous {prev}")]
    UnsortedStream { line: usize, prev: f64, t: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl EventStream {
    /// An empty stream over the given geometry.
    pub fn empty(sensor_width: usize, sensor_height: usize) -> Self {
        EventStream {
            sensor_width,
            sensor_height,
            events: Vec::new(),
        }
    }
}

/// Parse the canonical text format, validating geometry, polarity and
/// timestamp order. Input must already be sorted; out-of-order timestamps
/// are an error rather than silently reordered.
pub fn parse_events(
    source: impl Read,
    sensor_width: usize,
    sensor_height: usize,
) -> Result<EventStream, EventIoError> {
    let reader = BufReader::new(source);
    let mut lines = reader.lines();

    let header = match lines.next() {
        Some(line) => line?,
        None => {
            return Err(EventIoError::MalformedLine {
                line: 1,
                msg: "missing geometry header".into(),
            })
        }
    };
    let dims: Vec<&str> = header.split_whitespace().collect();
    if dims.len() != 2 {
        return Err(EventIoError::MalformedLine {
            line: 1,
            msg: format!("header must be `W H`, got {header:?}"),
        });
    }
    let w: usize = dims[0].parse().map_err(|_| EventIoError::MalformedLine {
        line: 1,
        msg: format!("non-numeric width {:?}", dims[0]),
    })?;
    let h: usize = dims[1].parse().map_err(|_| EventIoError::MalformedLine {
        line: 1,
        msg: format!("non-numeric height {:?}", dims[1]),
    })?;
    if w != sensor_width || h != sensor_height {
        return Err(EventIoError::MalformedLine {
            line: 1,
            msg: format!("header geometry {w}x{h} does not match declared {sensor_width}x{sensor_height}"),
        });
    }

    let mut events = Vec::new();
    let mut prev_t = f64::NEG_INFINITY;
    for (idx, line) in lines.enumerate() {
        let line_no = idx + 2;
        let line = line?;
        if line.is_empty() {
            continue;
        }
        let tokens: Vec<&str> = line.split(' ').collect();
        if tokens.len() != 4 {
            return Err(EventIoError::MalformedLine {
                line: line_no,
                msg: format!("expected 4 tokens, got {}", tokens.len()),
            });
        }
        let t: f64 = tokens[0].parse().map_err(|_| EventIoError::MalformedLine {
            line: line_no,
            msg: format!("non-numeric timestamp {:?}", tokens[0]),
        })?;
        if !t.is_finite() || t < 0.0 {
            return Err(EventIoError::MalformedLine {
                line: line_no,
                msg: format!("timestamp must be finite and non-negative, got {t}"),
            });
        }
        let x: i64 = tokens[1].parse().map_err(|_| EventIoError::MalformedLine {
            line: line_no,
            msg: format!("non-numeric x {:?}", tokens[1]),
        })?;
        let y: i64 = tokens[2].parse().map_err(|_| EventIoError::MalformedLine {
            line: line_no,
            msg: format!("non-numeric y {:?}", tokens[2]),
        })?;
        let p: i64 = tokens[3].parse().map_err(|_| EventIoError::MalformedLine {
            line: line_no,
            msg: format!("non-numeric polarity {:?}", tokens[3]),
        })?;
        if x < 0 || y < 0 || x as usize >= sensor_width || y as usize >= sensor_height {
            return Err(EventIoError::OutOfBounds {
                line: line_no,
                x,
                y,
                width: sensor_width,
                height: sensor_height,
            });
        }
        if p != 1 && p != -1 {
            return Err(EventIoError::BadPolarity { line: line_no, value: p });
        }
        if t < prev_t {
            return Err(EventIoError::UnsortedStream {
                line: line_no,
                prev: prev_t,
                t,
            });
        }
        prev_t = t;
        events.push(Event {
            t,
            x: x as u16,
            y: y as u16,
            p: p as i8,
        });
    }

    Ok(EventStream {
        sensor_width,
        sensor_height,
        events,
    })
}

/// Extract the events with `t` in `[t_start, t_start + duration)`,
/// preserving order. An empty window is valid.
pub fn window_events(stream: &EventStream, t_start: f64, duration: f64) -> EventWindow {
    assert!(duration > 0.0, "window duration must be positive");
    let t_end = t_start + duration;
    let events = stream
        .events
        .iter()
        .filter(|e| e.t >= t_start && e.t < t_end)
        .copied()
        .collect();
    EventWindow {
        t_start,
        duration,
        sensor_width: stream.sensor_width,
        sensor_height: stream.sensor_height,
        events,
    }
}

/// Emit the canonical text format. `parse_events(write_events(s))`
/// reproduces `s` exactly for streams with microsecond-quantized
/// timestamps (all streams produced by the simulator are).
pub fn write_events(stream: &EventStream, sink: &mut impl Write) -> Result<(), EventIoError> {
    writeln!(sink, "{} {}", stream.sensor_width, stream.sensor_height)?;
    for e in &stream.events {
        writeln!(sink, "{:.6} {} {} {}", e.t, e.x, e.y, e.p)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_single_record() {
        let src = "64 64\n0.000000 3 5 1\n";
        let s = parse_events(src.as_bytes(), 64, 64).unwrap();
        assert_eq!(s.events.len(), 1);
        assert_eq!(
            s.events[0],
            Event {
                t: 0.0,
                x: 3,
                y: 5,
                p: 1
            }
        );
    }

    #[test]
    fn parses_header_only_as_empty_stream() {
        let s = parse_events("32 24\n".as_bytes(), 32, 24).unwrap();
        assert!(s.events.is_empty());
        assert_eq!((s.sensor_width, s.sensor_height), (32, 24));
    }

    #[test]
    fn rejects_unsorted_timestamps() {
        let src = "8 8\n0.002000 1 1 1\n0.001000 1 1 1\n";
        match parse_events(src.as_bytes(), 8, 8) {
            Err(EventIoError::UnsortedStream { line, .. }) => assert_eq!(line, 3),
            other => panic!("expected UnsortedStream, got {other:?}"),
        }
    }

    #[test]
    fn rejects_out_of_bounds_pixel() {
        let src = "8 8\n0.001000 8 0 1\n";
        assert!(matches!(
            parse_events(src.as_bytes(), 8, 8),
            Err(EventIoError::OutOfBounds { .. })
        ));
    }

    #[test]
    fn rejects_bad_polarity() {
        let src = "8 8\n0.001000 1 1 0\n";
        assert!(matches!(
            parse_events(src.as_bytes(), 8, 8),
            Err(EventIoError::BadPolarity { value: 0, .. })
        ));
    }

    #[test]
    fn rejects_wrong_token_count() {
        let src = "8 8\n0.001000 1 1\n";
        assert!(matches!(
            parse_events(src.as_bytes(), 8, 8),
            Err(EventIoError::MalformedLine { line: 2, .. })
        ));
    }

    #[test]
    fn windowing_is_half_open() {
        let stream = EventStream {
            sensor_width: 8,
            sensor_height: 8,
            events: [0.01, 0.03, 0.06]
                .iter()
                .map(|&t| Event { t, x: 0, y: 0, p: 1 })
                .collect(),
        };
        let w = window_events(&stream, 0.0, 0.05);
        assert_eq!(w.events.len(), 2);
        let empty = window_events(&stream, 0.1, 0.05);
        assert!(empty.events.is_empty());
    }

    #[test]
    fn write_empty_stream_is_header_only() {
        let mut buf = Vec::new();
        write_events(&EventStream::empty(16, 12), &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "16 12\n");
    }

    #[test]
    fn write_formats_fixed_six_decimals() {
        let s = EventStream {
            sensor_width: 4,
            sensor_height: 4,
            events: vec![Event {
                t: 0.5,
                x: 1,
                y: 2,
                p: -1,
            }],
        };
        let mut buf = Vec::new();
        write_events(&s, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "4 4\n0.500000 1 2 -1\n");
    }

    /// Microsecond-quantized streams (the simulator's output resolution).
    fn arb_stream() -> impl Strategy<Value = EventStream> {
        let ev = (0u64..2_000_000, 0u16..32, 0u16..24, prop_oneof![Just(1i8), Just(-1i8)]).prop_map(
            |(us, x, y, p)| Event {
                t: us as f64 / 1e6,
                x,
                y,
                p,
            },
        );
        proptest::collection::vec(ev, 0..300).prop_map(|mut events| {
            events.sort_by(|a, b| a.t.partial_cmp(&b.t).unwrap());
            EventStream {
                sensor_width: 32,
                sensor_height: 24,
                events,
            }
        })
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(stream in arb_stream()) {
            let mut buf = Vec::new();
            write_events(&stream, &mut buf).unwrap();
            let back = parse_events(buf.as_slice(), 32, 24).unwrap();
            prop_assert_eq!(back, stream);
        }

        #[test]
        fn consecutive_windows_partition_the_stream(stream in arb_stream()) {
            let window = 0.25;
            let mut total = 0usize;
            for k in 0..9 {
                let w = window_events(&stream, k as f64 * window, window);
                total += w.events.len();
                for e in &w.events {
                    prop_assert!(e.t >= k as f64 * window && e.t < (k + 1) as f64 * window);
                }
            }
            // nine windows of 0.25 s cover [0, 2.25) which contains every
            // generated timestamp (< 2 s)
            prop_assert_eq!(total, stream.events.len());
        }
    }
}
