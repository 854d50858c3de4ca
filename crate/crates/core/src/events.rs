//! Event streams and their conversion into synchronous frame stacks.

use alloc::format;
use alloc::string::ToString;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Sign of the brightness change that triggered an event.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Polarity {
    /// +1, brightness increase.
    On,
    /// −1, brightness decrease.
    Off,
}

impl Polarity {
    pub fn from_i8(p: i8) -> Option<Self> {
        match p {
            1 => Some(Polarity::On),
            -1 => Some(Polarity::Off),
            _ => None,
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Polarity::On => 1,
            Polarity::Off => -1,
        }
    }

    /// Frame channel: 0 for ON, 1 for OFF.
    pub fn channel(self) -> usize {
        match self {
            Polarity::On => 0,
            Polarity::Off => 1,
        }
    }
}

/// One sensor spike. `t` is in microseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Event {
    pub t: u64,
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
}

/// A validated event stream: every event inside the sensor, timestamps
/// nondecreasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EventStream {
    width: u16,
    height: u16,
    events: Vec<Event>,
    pub label: Option<usize>,
}

impl EventStream {
    pub fn new(width: u16, height: u16, events: Vec<Event>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Config(format!("sensor size {width}x{height} must be positive")));
        }
        let mut last = 0u64;
        for (index, e) in events.iter().enumerate() {
            check_event(width, height, last, index, e)?;
            last = e.t;
        }
        Ok(Self { width, height, events, label: None })
    }

    pub fn with_label(mut self, label: usize) -> Self {
        self.label = Some(label);
        self
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

    /// `t_last − t_first`, zero for an empty stream.
    pub fn duration(&self) -> u64 {
        match (self.events.first(), self.events.last()) {
            (Some(a), Some(b)) => b.t - a.t,
            _ => 0,
        }
    }
}

/// Validates one event against the sensor bounds and the previous timestamp.
pub fn check_event(width: u16, height: u16, prev_t: u64, index: usize, e: &Event) -> Result<()> {
    if e.x >= width || e.y >= height {
        return Err(Error::Event {
            index,
            reason: format!("coordinate ({}, {}) outside {width}x{height} sensor", e.x, e.y),
        });
    }
    if e.t < prev_t {
        return Err(Error::Event { index, reason: format!("timestamp {} precedes previous {prev_t}", e.t) });
    }
    Ok(())
}

/// Window index of every event when `[t_first, t_last]` is cut into `frames`
/// equal windows, the last one closed on the right.
pub fn window_indices(stream: &EventStream, frames: usize) -> Result<Vec<usize>> {
    if frames == 0 {
        return Err(Error::Config("frame count must be at least 1".to_string()));
    }
    let Some(first) = stream.events.first() else {
        return Ok(Vec::new());
    };
    let t0 = first.t;
    let span = stream.duration() as u128;
    Ok(stream
        .events
        .iter()
        .map(|e| {
            if span == 0 {
                0
            } else {
                let k = (e.t - t0) as u128 * frames as u128 / span;
                (k as usize).min(frames - 1)
            }
        })
        .collect())
}

/// Events grouped by window, in stream order within each window.
pub fn partition_windows(stream: &EventStream, frames: usize) -> Result<Vec<Vec<Event>>> {
    let idx = window_indices(stream, frames)?;
    let mut out = vec![Vec::new(); frames];
    for (e, k) in stream.events.iter().zip(idx) {
        out[k].push(*e);
    }
    Ok(out)
}

/// `T` synchronous two-channel count images: channel 0 counts ON events,
/// channel 1 counts OFF events. `frames` has shape `[T, 2, H, W]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EventFrameStack {
    pub frames: Tensor,
    /// Microseconds covered by each window.
    pub window_us: f64,
}

impl EventFrameStack {
    pub fn num_frames(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.frames.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.frames.shape()[3]
    }

    /// One frame as a `[2, H, W]` tensor.
    pub fn frame(&self, t: usize) -> Tensor {
        let per = 2 * self.height() * self.width();
        Tensor::new(&[2, self.height(), self.width()], self.frames.data()[t * per..(t + 1) * per].to_vec())
            .expect("frame slice has frame shape")
    }
}

/// Accumulates the stream into `frames` equal-duration count images.
pub fn stack_to_frames(stream: &EventStream, frames: usize) -> Result<EventFrameStack> {
    let idx = window_indices(stream, frames)?;
    let (h, w) = (stream.height as usize, stream.width as usize);
    let mut stack = Tensor::zeros(&[frames, 2, h, w]);
    let data = stack.data_mut();
    for (e, k) in stream.events.iter().zip(idx) {
        data[((k * 2 + e.p.channel()) * h + e.y as usize) * w + e.x as usize] += 1.0;
    }
    Ok(EventFrameStack { frames: stack, window_us: stream.duration() as f64 / frames as f64 })
}

/// Count rescaling applied before the stem.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Normalization {
    None,
    /// Each frame (both channels) divided by its largest entry.
    PerFrameMax,
    /// `ln(1 + count)`.
    #[default]
    Log1p,
}

impl Normalization {
    pub fn name(self) -> &'static str {
        match self {
            Normalization::None => "none",
            Normalization::PerFrameMax => "per-frame-max",
            Normalization::Log1p => "log1p",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "none" => Some(Normalization::None),
            "per-frame-max" => Some(Normalization::PerFrameMax),
            "log1p" => Some(Normalization::Log1p),
            _ => None,
        }
    }
}

pub fn normalize_frames(stack: &EventFrameStack, mode: Normalization) -> EventFrameStack {
    let mut out = stack.clone();
    match mode {
        Normalization::None => {}
        Normalization::Log1p => out.frames.data_mut().iter_mut().for_each(|v| *v = libm::log1p(*v)),
        Normalization::PerFrameMax => {
            let per = 2 * stack.height() * stack.width();
            for frame in out.frames.data_mut().chunks_exact_mut(per) {
                let m = frame.iter().copied().fold(0.0, f64::max);
                if m > 0.0 {
                    frame.iter_mut().for_each(|v| *v /= m);
                }
            }
        }
    }
    out
}

/// Center-crops or zero-pads every frame to `height × width`.
pub fn fit_frames(stack: &EventFrameStack, height: usize, width: usize) -> Result<EventFrameStack> {
    if height == 0 || width == 0 {
        return Err(Error::Config(format!("target frame size {height}x{width} must be positive")));
    }
    let (t, sh, sw) = (stack.num_frames(), stack.height(), stack.width());
    if (sh, sw) == (height, width) {
        return Ok(stack.clone());
    }
    // Offset of the source origin inside the target; negative means crop.
    let oy = (height as isize - sh as isize).div_euclid(2);
    let ox = (width as isize - sw as isize).div_euclid(2);
    let mut out = Tensor::zeros(&[t, 2, height, width]);
    let src = stack.frames.data();
    let dst = out.data_mut();
    for plane in 0..t * 2 {
        for y in 0..sh {
            let ty = y as isize + oy;
            if ty < 0 || ty >= height as isize {
                continue;
            }
            for x in 0..sw {
                let tx = x as isize + ox;
                if tx < 0 || tx >= width as isize {
                    continue;
                }
                dst[(plane * height + ty as usize) * width + tx as usize] = src[(plane * sh + y) * sw + x];
            }
        }
    }
    Ok(EventFrameStack { frames: out, window_us: stack.window_us })
}
