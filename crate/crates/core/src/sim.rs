//! Deterministic synthetic world: moving shapes over a textured
//! background, rendered as intensity/label/depth frames, with the event
//! stream simulated through a per-pixel log-intensity contrast threshold.
//!
//! Shape appearance correlates with class: each kind has its own gray band
//! and depth band (nearer shapes render larger), so the end tasks are
//! learnable from clean frames and — through edge contrast and motion —
//! from events.

use rand::Rng;

use crate::event::{Event, EventStream, EventWindow, window_events};
use crate::rng;

/// Background class id; shape kinds map to ids 1..=3.
pub const NUM_CLASSES: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub fn class_id(self) -> u8 {
        match self {
            ShapeKind::Circle => 1,
            ShapeKind::Square => 2,
            ShapeKind::Triangle => 3,
        }
    }
}

/// One moving shape: gray level in [0.2, 0.9], velocity in px/s, a fixed
/// depth plane in meters, and a start position on the torus.
#[derive(Debug, Clone, Copy)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub gray: f64,
    pub velocity: (f64, f64),
    pub depth: f64,
    pub start: (f64, f64),
    pub radius: f64,
}

/// Generation knobs for a scene.
#[derive(Debug, Clone)]
pub struct SceneConfig {
    pub seed: u64,
    pub width: usize,
    pub height: usize,
    pub shape_count: usize,
    pub frame_rate: f64,
    pub duration: f64,
    pub contrast: f64,
    pub background_gray: f64,
    pub noise_amp: f64,
    /// Multiplies every shape velocity; events grow with scene speed.
    pub speed_scale: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            seed: 0,
            width: 64,
            height: 64,
            shape_count: 3,
            frame_rate: 100.0,
            duration: 60.0,
            contrast: 0.15,
            background_gray: 0.45,
            noise_amp: 0.03,
            speed_scale: 1.0,
        }
    }
}

/// A fully materialized scene: configuration plus the concrete shapes and
/// background texture drawn from the seed.
#[derive(Debug, Clone)]
pub struct SceneSpec {
    pub config: SceneConfig,
    pub shapes: Vec<ShapeSpec>,
    pub background_depth: f64,
    /// Static per-pixel background intensity in [0, 1].
    background: Vec<f64>,
}

impl SceneSpec {
    /// Materialize a scene from its configuration. Shape kinds cycle
    /// through circle/square/triangle so every class appears; gray level
    /// and depth are drawn from per-kind bands.
    pub fn generate(config: SceneConfig) -> SceneSpec {
        let mut r = rng::stream(config.seed, "scene");
        let mut shapes = Vec::with_capacity(config.shape_count);
        for i in 0..config.shape_count {
            let kind = match i % 3 {
                0 => ShapeKind::Circle,
                1 => ShapeKind::Square,
                _ => ShapeKind::Triangle,
            };
            let (gray_base, depth_base, radius_base): (f64, f64, f64) = match kind {
                ShapeKind::Circle => (0.24, 1.5, 8.5),
                ShapeKind::Square => (0.66, 2.4, 9.0),
                ShapeKind::Triangle => (0.88, 3.3, 12.0),
            };
            let gray = (gray_base + r.gen_range(-0.03..0.03)).clamp(0.2, 0.9);
            let depth = depth_base * r.gen_range(0.9..1.1);
            let speed = r.gen_range(60.0..120.0) * config.speed_scale;
            let angle = r.gen_range(0.0..std::f64::consts::TAU);
            let start = (
                r.gen_range(0.0..config.width as f64),
                r.gen_range(0.0..config.height as f64),
            );
            // projective sizing: nearer planes render larger
            let radius = radius_base * (depth_base / depth) * (config.height as f64 / 64.0);
            shapes.push(ShapeSpec {
                kind,
                gray,
                velocity: (speed * angle.cos(), speed * angle.sin()),
                depth,
                start,
                radius,
            });
        }
        let waves: Vec<(f64, f64, f64, f64)> = (0..3)
            .map(|_| {
                (
                    r.gen_range(0.04..0.22),
                    r.gen_range(0.04..0.22),
                    r.gen_range(0.0..std::f64::consts::TAU),
                    r.gen_range(0.4..1.0),
                )
            })
            .collect();
        let mut background = vec![0.0; config.width * config.height];
        for py in 0..config.height {
            for px in 0..config.width {
                let (x, y) = (px as f64 + 0.5, py as f64 + 0.5);
                let mut n = 0.0;
                for &(fy, fx, phase, amp) in &waves {
                    n += amp * (fx * x + fy * y + phase).sin();
                }
                background[py * config.width + px] =
                    (config.background_gray + config.noise_amp * n).clamp(0.0, 1.0);
            }
        }
        SceneSpec {
            config,
            shapes,
            background_depth: 9.0,
            background,
        }
    }
}

/// One rendered sample: intensity in [-1, 1], per-pixel class labels,
/// per-pixel depth in meters, all at one timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameTriple {
    pub intensity: Vec<f64>,
    pub labels: Vec<u8>,
    pub depth: Vec<f64>,
    pub timestamp: f64,
}

/// Signed inside-distance (px) from a point to a shape outline at time t,
/// on the torus. Positive inside.
fn shape_distance(shape: &ShapeSpec, spec: &SceneSpec, x: f64, y: f64, t: f64) -> f64 {
    let w = spec.config.width as f64;
    let h = spec.config.height as f64;
    let cx = (shape.start.0 + shape.velocity.0 * t).rem_euclid(w);
    let cy = (shape.start.1 + shape.velocity.1 * t).rem_euclid(h);
    // nearest toroidal image of the center
    let mut dx = x - cx;
    let mut dy = y - cy;
    if dx > w / 2.0 {
        dx -= w;
    } else if dx < -w / 2.0 {
        dx += w;
    }
    if dy > h / 2.0 {
        dy -= h;
    } else if dy < -h / 2.0 {
        dy += h;
    }
    match shape.kind {
        ShapeKind::Circle => shape.radius - (dx * dx + dy * dy).sqrt(),
        ShapeKind::Square => {
            let half = shape.radius * 0.9;
            half - dx.abs().max(dy.abs())
        }
        ShapeKind::Triangle => {
            // equilateral, apex up (negative y), circumradius = radius
            let r = shape.radius * 1.15;
            let mut d = f64::INFINITY;
            for i in 0..3 {
                let ang = std::f64::consts::FRAC_PI_2 + i as f64 * std::f64::consts::TAU / 3.0;
                // outward edge normals point opposite the vertices
                let (nx, ny) = (-ang.cos(), ang.sin());
                d = d.min(r / 2.0 - (dx * nx + dy * ny));
            }
            d
        }
    }
}

/// Anti-aliasing half-width in pixels for intensity rendering.
const EDGE_SOFTNESS: f64 = 0.6;

/// Render the scene at time `t`: painter's algorithm far-to-near with soft
/// intensity edges; labels and depth take the front-most covering shape.
pub fn render(spec: &SceneSpec, t: f64) -> FrameTriple {
    let (w, h) = (spec.config.width, spec.config.height);
    let mut intensity = vec![0.0f64; w * h];
    let mut labels = vec![0u8; w * h];
    let mut depth = vec![spec.background_depth; w * h];

    let mut order: Vec<usize> = (0..spec.shapes.len()).collect();
    // far to near; ties broken by index for determinism
    order.sort_by(|&a, &b| {
        spec.shapes[b]
            .depth
            .partial_cmp(&spec.shapes[a].depth)
            .unwrap()
            .then(a.cmp(&b))
    });

    for py in 0..h {
        for px in 0..w {
            let x = px as f64 + 0.5;
            let y = py as f64 + 0.5;
            let mut value = spec.background[py * w + px];
            let mut label = 0u8;
            let mut d_front = spec.background_depth;
            for &si in &order {
                let shape = &spec.shapes[si];
                let dist = shape_distance(shape, spec, x, y, t);
                if dist <= -EDGE_SOFTNESS {
                    continue;
                }
                let coverage = ((dist / EDGE_SOFTNESS + 1.0) / 2.0).clamp(0.0, 1.0);
                value = value * (1.0 - coverage) + shape.gray * coverage;
                if dist >= 0.0 && shape.depth < d_front {
                    label = shape.kind.class_id();
                    d_front = shape.depth;
                }
            }
            let idx = py * w + px;
            intensity[idx] = 2.0 * value - 1.0;
            labels[idx] = label;
            depth[idx] = d_front;
        }
    }
    FrameTriple {
        intensity,
        labels,
        depth,
        timestamp: t,
    }
}

/// Log intensity with a floor that keeps black pixels finite.
#[inline]
pub fn log_intensity(intensity_pm1: f64) -> f64 {
    (0.01 + (intensity_pm1 + 1.0) / 2.0).ln()
}

/// Tolerance that lets a change of exactly k·C fire k crossings despite
/// accumulated rounding in the reference level.
const CROSSING_TOL: f64 = 1e-12;

/// Crossings of the reference level as the log intensity moves linearly
/// from `l0` to `l1`: each crossing advances `l_ref` by ±C and reports the
/// fraction of the segment at which it happened, with its polarity.
fn segment_crossings(l0: f64, l1: f64, l_ref: &mut f64, c: f64, out: &mut Vec<(f64, i8)>) {
    let slope = l1 - l0;
    loop {
        let rise = l1 - *l_ref;
        let (polarity, target) = if rise >= c - CROSSING_TOL {
            (1i8, *l_ref + c)
        } else if rise <= -(c - CROSSING_TOL) {
            (-1i8, *l_ref - c)
        } else {
            break;
        };
        let frac = if slope != 0.0 {
            ((target - l0) / slope).clamp(0.0, 1.0)
        } else {
            1.0
        };
        out.push((frac, polarity));
        *l_ref = target;
    }
}

/// Simulate the event stream: per pixel, a reference log intensity
/// advances by ±C every time the linear inter-frame interpolant crosses
/// it, emitting an event at the interpolated, microsecond-quantized
/// timestamp. Events are merged in (t, y, x, p) order.
pub fn simulate_events(spec: &SceneSpec) -> EventStream {
    let cfg = &spec.config;
    assert!(cfg.frame_rate >= 2.0, "frame rate must be at least 2 Hz");
    let (w, h) = (cfg.width, cfg.height);
    let c = cfg.contrast;
    let frame_count = (cfg.duration * cfg.frame_rate).round() as usize;
    let dt = 1.0 / cfg.frame_rate;

    let mut log_prev: Vec<f64> = render(spec, 0.0)
        .intensity
        .iter()
        .map(|&v| log_intensity(v))
        .collect();
    let mut l_ref = log_prev.clone();
    let mut events: Vec<Event> = Vec::new();
    let mut crossings: Vec<(f64, i8)> = Vec::new();

    for k in 1..=frame_count {
        let t0 = (k - 1) as f64 * dt;
        let frame = render(spec, k as f64 * dt);
        for idx in 0..w * h {
            let l0 = log_prev[idx];
            let l1 = log_intensity(frame.intensity[idx]);
            log_prev[idx] = l1;
            if l0 == l1 {
                // the reference always sits within C of the segment start
                continue;
            }
            crossings.clear();
            segment_crossings(l0, l1, &mut l_ref[idx], c, &mut crossings);
            let (x, y) = ((idx % w) as u16, (idx / w) as u16);
            for &(frac, polarity) in &crossings {
                events.push(Event {
                    t: quantize_us(t0 + frac * dt),
                    x,
                    y,
                    p: polarity,
                });
            }
        }
    }

    events.sort_by(|a, b| {
        a.t.partial_cmp(&b.t)
            .unwrap()
            .then(a.y.cmp(&b.y))
            .then(a.x.cmp(&b.x))
            .then(a.p.cmp(&b.p))
    });
    EventStream {
        sensor_width: w,
        sensor_height: h,
        events,
    }
}

#[inline]
fn quantize_us(t: f64) -> f64 {
    (t * 1e6).round() / 1e6
}

/// Final per-pixel reference log intensities after simulation; used to
/// verify that integrated events reconstruct the intensity change.
pub fn integrate_reference(spec: &SceneSpec, stream: &EventStream) -> Vec<f64> {
    let first = render(spec, 0.0);
    let mut l_ref: Vec<f64> = first.intensity.iter().map(|&v| log_intensity(v)).collect();
    let c = spec.config.contrast;
    let w = spec.config.width;
    for e in &stream.events {
        l_ref[e.y as usize * w + e.x as usize] += f64::from(e.p) * c;
    }
    l_ref
}

/// One training sample: the events of a window paired with the frame
/// rendered at the window's end time.
#[derive(Debug, Clone)]
pub struct DatasetSample {
    pub window: EventWindow,
    pub frame: FrameTriple,
}

/// Tile `[0, duration)` with windows and pair each with the frame at its
/// end. The window length must divide the scene duration.
pub fn make_dataset(spec: &SceneSpec, window: f64) -> Vec<DatasetSample> {
    assert!(window > 0.0, "window must be positive");
    let ratio = spec.config.duration / window;
    let count = ratio.round();
    assert!(
        (ratio - count).abs() < 1e-9 && count >= 1.0,
        "window {window} must divide duration {}",
        spec.config.duration
    );
    let stream = simulate_events(spec);
    (0..count as usize)
        .map(|k| {
            let t_start = k as f64 * window;
            DatasetSample {
                window: window_events(&stream, t_start, window),
                frame: render(spec, t_start + window),
            }
        })
        .collect()
}
