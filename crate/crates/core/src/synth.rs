//! Synthetic event streams from a fixed library of moving shapes.
//!
//! A bright shape moves over a dark background. The shape is rasterized at a
//! sequence of time steps fine enough that it never moves more than half a
//! pixel between steps; pixels the shape enters fire ON events and pixels it
//! leaves fire OFF events. Uniform background noise is mixed in afterwards.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::TAU;

use rand::Rng;

use crate::error::{Error, Result};
use crate::events::{Event, EventStream, Polarity};
use crate::rng;

/// Default clip length: five seconds.
pub const DEFAULT_DURATION_US: u64 = 5_000_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Motion {
    DotRight,
    DotLeft,
    DotUp,
    DotDown,
    DotDiagonal,
    ExpandingRing,
    ContractingRing,
    TwoDotCrossing,
    OscillatingBar,
    RotatingBar,
    CirclingDot,
    BlinkingSquare,
}

impl Motion {
    /// Class library in label order.
    pub const ALL: [Motion; 12] = [
        Motion::DotRight,
        Motion::DotLeft,
        Motion::DotUp,
        Motion::DotDown,
        Motion::DotDiagonal,
        Motion::ExpandingRing,
        Motion::ContractingRing,
        Motion::TwoDotCrossing,
        Motion::OscillatingBar,
        Motion::RotatingBar,
        Motion::CirclingDot,
        Motion::BlinkingSquare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Motion::DotRight => "dot-moving-right",
            Motion::DotLeft => "dot-moving-left",
            Motion::DotUp => "dot-moving-up",
            Motion::DotDown => "dot-moving-down",
            Motion::DotDiagonal => "dot-moving-diagonal",
            Motion::ExpandingRing => "expanding-ring",
            Motion::ContractingRing => "contracting-ring",
            Motion::TwoDotCrossing => "two-dot-crossing",
            Motion::OscillatingBar => "oscillating-bar",
            Motion::RotatingBar => "rotating-bar",
            Motion::CirclingDot => "circling-dot",
            Motion::BlinkingSquare => "blinking-square",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == name)
            .ok_or_else(|| Error::Config(format!("unknown motion class {name:?}")))
    }

    /// Position in [`Motion::ALL`], used as the class label.
    pub fn label(self) -> usize {
        Self::ALL.iter().position(|&m| m == self).unwrap()
    }
}

/// What to generate.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorSpec {
    pub motion: Motion,
    /// Multiplies the nominal speed of the motion.
    pub speed: f64,
    pub duration_us: u64,
    /// Background noise events per second over the whole sensor.
    pub noise_rate: f64,
    pub width: u16,
    pub height: u16,
}

impl GeneratorSpec {
    pub fn new(class: &str, width: u16, height: u16) -> Result<Self> {
        Ok(Self {
            motion: Motion::from_name(class)?,
            speed: 1.0,
            duration_us: DEFAULT_DURATION_US,
            noise_rate: 0.0,
            width,
            height,
        })
    }

    fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::Config(format!("sensor size {}x{} must be positive", self.width, self.height)));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config(format!("speed multiplier {} must be positive", self.speed)));
        }
        if !(self.noise_rate >= 0.0 && self.noise_rate.is_finite()) {
            return Err(Error::Config(format!("noise rate {} must be nonnegative", self.noise_rate)));
        }
        if self.duration_us == 0 {
            return Err(Error::Config("duration must be positive".into()));
        }
        Ok(())
    }
}

/// Per-sample geometry drawn from the seed. All lengths in pixels; the
/// motion parameter `u = t / duration` runs over `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MotionPlan {
    pub motion: Motion,
    /// Anchor point (start of a translation, center of rings/orbits/bars).
    pub origin: (f64, f64),
    /// Displacement over the clip for translations.
    pub travel: (f64, f64),
    /// Dot radius, ring half-thickness, bar half-width or square half-side.
    pub size: f64,
    /// Ring radius range, orbit radius, bar half-length or oscillation amplitude.
    pub extent: f64,
    /// Cycles over the clip for periodic motions (already speed-scaled).
    pub cycles: f64,
    pub phase: f64,
}

#[derive(Debug, Clone, Copy)]
enum Shape {
    Disk { c: (f64, f64), r: f64 },
    Ring { c: (f64, f64), radius: f64, half: f64 },
    Segment { a: (f64, f64), b: (f64, f64), half: f64 },
    Square { c: (f64, f64), half: f64 },
}

impl Shape {
    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Disk { c, r } => sq(x - c.0) + sq(y - c.1) <= r * r,
            Shape::Ring { c, radius, half } => {
                let d = libm::sqrt(sq(x - c.0) + sq(y - c.1));
                libm::fabs(d - radius) <= half
            }
            Shape::Segment { a, b, half } => {
                let (dx, dy) = (b.0 - a.0, b.1 - a.1);
                let len2 = dx * dx + dy * dy;
                let s = if len2 == 0.0 { 0.0 } else { (((x - a.0) * dx + (y - a.1) * dy) / len2).clamp(0.0, 1.0) };
                sq(x - a.0 - s * dx) + sq(y - a.1 - s * dy) <= half * half
            }
            Shape::Square { c, half } => libm::fabs(x - c.0) <= half && libm::fabs(y - c.1) <= half,
        }
    }

    fn bbox(&self) -> (f64, f64, f64, f64) {
        match *self {
            Shape::Disk { c, r } => (c.0 - r, c.1 - r, c.0 + r, c.1 + r),
            Shape::Ring { c, radius, half } => {
                let r = radius + half;
                (c.0 - r, c.1 - r, c.0 + r, c.1 + r)
            }
            Shape::Segment { a, b, half } => {
                (a.0.min(b.0) - half, a.1.min(b.1) - half, a.0.max(b.0) + half, a.1.max(b.1) + half)
            }
            Shape::Square { c, half } => (c.0 - half, c.1 - half, c.0 + half, c.1 + half),
        }
    }
}

fn sq(v: f64) -> f64 {
    v * v
}

impl MotionPlan {
    /// Draws the geometry of one sample.
    pub fn sample(spec: &GeneratorSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = rng::seeded(rng::mix(&[seed, spec.motion.label() as u64, 0x5eed]));
        let (w, h) = (spec.width as f64, spec.height as f64);
        let m = w.min(h);
        let s = spec.speed;
        let jitter = |rng: &mut rng::SeededRng, v: f64| v * rng::uniform(rng, 0.85, 1.15);
        let size = (0.06 * m).max(1.5);
        let mut plan = MotionPlan {
            motion: spec.motion,
            origin: (w / 2.0, h / 2.0),
            travel: (0.0, 0.0),
            size: jitter(&mut rng, size),
            extent: 0.0,
            cycles: 0.0,
            phase: rng::uniform(&mut rng, 0.0, TAU),
        };
        let lo = |rng: &mut rng::SeededRng, len: f64| rng::uniform(rng, 0.15, 0.3) * len;
        let mid = |rng: &mut rng::SeededRng, len: f64| rng::uniform(rng, 0.35, 0.65) * len;
        match spec.motion {
            Motion::DotRight => {
                plan.origin = (lo(&mut rng, w), mid(&mut rng, h));
                plan.travel = (0.5 * w * s, 0.0);
            }
            Motion::DotLeft => {
                plan.origin = (w - lo(&mut rng, w), mid(&mut rng, h));
                plan.travel = (-0.5 * w * s, 0.0);
            }
            Motion::DotUp => {
                plan.origin = (mid(&mut rng, w), h - lo(&mut rng, h));
                plan.travel = (0.0, -0.5 * h * s);
            }
            Motion::DotDown => {
                plan.origin = (mid(&mut rng, w), lo(&mut rng, h));
                plan.travel = (0.0, 0.5 * h * s);
            }
            Motion::DotDiagonal => {
                plan.origin = (lo(&mut rng, w), lo(&mut rng, h));
                plan.travel = (0.45 * w * s, 0.45 * h * s);
            }
            Motion::ExpandingRing | Motion::ContractingRing => {
                plan.origin = (mid(&mut rng, w), mid(&mut rng, h));
                plan.size = 0.75;
                plan.extent = jitter(&mut rng, 0.35 * m);
                plan.cycles = s;
            }
            Motion::TwoDotCrossing => {
                plan.origin = (lo(&mut rng, w), lo(&mut rng, h));
                plan.travel = (0.5 * w * s, 0.5 * h * s);
            }
            Motion::OscillatingBar => {
                plan.origin = (mid(&mut rng, w), h / 2.0);
                plan.size = 1.0;
                plan.extent = jitter(&mut rng, 0.25 * w);
                plan.cycles = 2.0 * s;
            }
            Motion::RotatingBar => {
                plan.origin = (mid(&mut rng, w), mid(&mut rng, h));
                plan.size = 1.0;
                plan.extent = jitter(&mut rng, 0.3 * m);
                plan.cycles = 0.5 * s;
            }
            Motion::CirclingDot => {
                plan.origin = (mid(&mut rng, w), mid(&mut rng, h));
                plan.extent = jitter(&mut rng, 0.25 * m);
                plan.cycles = s;
            }
            Motion::BlinkingSquare => {
                plan.origin = (mid(&mut rng, w), mid(&mut rng, h));
                plan.size = jitter(&mut rng, 0.12 * m).max(1.0);
                plan.cycles = 3.0 * s;
            }
        }
        Ok(plan)
    }

    /// Center of the (first) moving dot at `u`, for translating motions.
    pub fn dot_center(&self, u: f64) -> (f64, f64) {
        (self.origin.0 + self.travel.0 * u, self.origin.1 + self.travel.1 * u)
    }

    /// Upper bound on how far any shape point moves per unit of `u`.
    fn max_speed(&self) -> f64 {
        let trans = libm::hypot(self.travel.0, self.travel.1);
        match self.motion {
            Motion::ExpandingRing | Motion::ContractingRing => self.extent * self.cycles,
            Motion::OscillatingBar => TAU * self.cycles * self.extent,
            Motion::RotatingBar => TAU * self.cycles * self.extent,
            Motion::CirclingDot => TAU * self.cycles * self.extent,
            // Blinks are instantaneous; a few steps per half period suffice.
            Motion::BlinkingSquare => 8.0 * self.cycles,
            _ => trans,
        }
    }

    fn shapes(&self, u: f64, out: &mut Vec<Shape>) {
        out.clear();
        let (cx, cy) = self.origin;
        match self.motion {
            Motion::DotRight | Motion::DotLeft | Motion::DotUp | Motion::DotDown | Motion::DotDiagonal => {
                out.push(Shape::Disk { c: self.dot_center(u), r: self.size });
            }
            Motion::TwoDotCrossing => {
                out.push(Shape::Disk { c: self.dot_center(u), r: self.size });
                // second dot mirrors the first about the vertical through the crossing point
                let x2 = self.origin.0 + self.travel.0 - self.travel.0 * u;
                out.push(Shape::Disk { c: (x2, self.origin.1 + self.travel.1 * u), r: self.size });
            }
            Motion::ExpandingRing | Motion::ContractingRing => {
                let phase = self.cycles * u;
                let frac = phase - libm::floor(phase);
                let grow = if self.motion == Motion::ExpandingRing { frac } else { 1.0 - frac };
                let radius = 1.0 + (self.extent - 1.0).max(0.0) * grow;
                out.push(Shape::Ring { c: (cx, cy), radius, half: self.size });
            }
            Motion::OscillatingBar => {
                let x = cx + self.extent * libm::sin(TAU * self.cycles * u + self.phase);
                // origin sits on the horizontal midline, so the bar spans half the sensor height
                let half_len = 0.5 * cy;
                out.push(Shape::Segment { a: (x, cy - half_len), b: (x, cy + half_len), half: self.size });
            }
            Motion::RotatingBar => {
                let th = self.phase + TAU * self.cycles * u;
                let (dx, dy) = (self.extent * libm::cos(th), self.extent * libm::sin(th));
                out.push(Shape::Segment { a: (cx - dx, cy - dy), b: (cx + dx, cy + dy), half: self.size });
            }
            Motion::CirclingDot => {
                let th = self.phase + TAU * self.cycles * u;
                let c = (cx + self.extent * libm::cos(th), cy + self.extent * libm::sin(th));
                out.push(Shape::Disk { c, r: self.size });
            }
            Motion::BlinkingSquare => {
                if ((2.0 * self.cycles * u) as u64) % 2 == 0 {
                    out.push(Shape::Square { c: (cx, cy), half: self.size });
                }
            }
        }
    }
}

/// Sorted linear pixel indices covered by `shapes`.
fn rasterize(shapes: &[Shape], width: u16, height: u16, out: &mut Vec<u32>) {
    out.clear();
    let (w, h) = (width as i64, height as i64);
    for s in shapes {
        let (x0, y0, x1, y1) = s.bbox();
        let xa = (libm::floor(x0) as i64).max(0);
        let ya = (libm::floor(y0) as i64).max(0);
        let xb = (libm::ceil(x1) as i64).min(w - 1);
        let yb = (libm::ceil(y1) as i64).min(h - 1);
        for y in ya..=yb {
            for x in xa..=xb {
                if s.contains(x as f64, y as f64) {
                    out.push((y * w + x) as u32);
                }
            }
        }
    }
    out.sort_unstable();
    out.dedup();
}

/// Generates one labeled stream; identical `(spec, seed)` give identical streams.
pub fn synth_generate(spec: &GeneratorSpec, seed: u64) -> Result<EventStream> {
    let plan = MotionPlan::sample(spec, seed)?;
    let steps = libm::ceil(2.0 * plan.max_speed()).clamp(16.0, 200_000.0) as u64;
    let (w, dur) = (spec.width as u32, spec.duration_us);

    let mut events = Vec::new();
    let mut shapes = Vec::new();
    let (mut prev, mut cur) = (Vec::new(), Vec::new());
    plan.shapes(0.0, &mut shapes);
    rasterize(&shapes, spec.width, spec.height, &mut prev);
    for k in 1..=steps {
        let u = k as f64 / steps as f64;
        let t = (dur as u128 * k as u128 / steps as u128) as u64;
        plan.shapes(u, &mut shapes);
        rasterize(&shapes, spec.width, spec.height, &mut cur);
        // merge-diff of two sorted index lists
        let (mut i, mut j) = (0, 0);
        while i < prev.len() || j < cur.len() {
            let (idx, p) = match (prev.get(i), cur.get(j)) {
                (Some(&a), Some(&b)) if a == b => {
                    i += 1;
                    j += 1;
                    continue;
                }
                (Some(&a), Some(&b)) if a < b => {
                    i += 1;
                    (a, Polarity::Off)
                }
                (Some(&a), None) => {
                    i += 1;
                    (a, Polarity::Off)
                }
                (_, Some(&b)) => {
                    j += 1;
                    (b, Polarity::On)
                }
                (None, None) => unreachable!(),
            };
            events.push(Event { t, x: (idx % w) as u16, y: (idx / w) as u16, p });
        }
        core::mem::swap(&mut prev, &mut cur);
    }

    let mut rng = rng::seeded(rng::mix(&[seed, spec.motion.label() as u64, 0x0015e]));
    let noise = libm::round(spec.noise_rate * dur as f64 / 1e6) as usize;
    for _ in 0..noise {
        events.push(Event {
            t: rng.random_range(0..=dur),
            x: rng.random_range(0..spec.width),
            y: rng.random_range(0..spec.height),
            p: if rng.random::<bool>() { Polarity::On } else { Polarity::Off },
        });
    }
    events.sort_by_key(|e| e.t);
    Ok(EventStream::new(spec.width, spec.height, events)?.with_label(spec.motion.label()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_class_is_config_error() {
        assert!(matches!(GeneratorSpec::new("moonwalk", 64, 64), Err(Error::Config(_))));
    }

    #[test]
    fn labels_follow_library_order() {
        for (i, m) in Motion::ALL.iter().enumerate() {
            assert_eq!(m.label(), i);
            assert_eq!(Motion::from_name(m.name()).unwrap(), *m);
        }
    }

    #[test]
    fn every_class_emits_events() {
        for m in Motion::ALL {
            let spec = GeneratorSpec::new(m.name(), 64, 64).unwrap();
            let s = synth_generate(&spec, 11).unwrap();
            assert!(s.len() > 20, "{} produced {} events", m.name(), s.len());
            assert_eq!(s.label, Some(m.label()));
            assert!(s.events().iter().any(|e| e.p == Polarity::On));
            assert!(s.events().iter().any(|e| e.p == Polarity::Off));
        }
    }

    #[test]
    fn noise_count_follows_rate() {
        let mut spec = GeneratorSpec::new("dot-moving-up", 32, 32).unwrap();
        let clean = synth_generate(&spec, 4).unwrap().len();
        spec.noise_rate = 100.0;
        assert_eq!(synth_generate(&spec, 4).unwrap().len(), clean + 500);
    }
}
