//! Grayscale frames, blur synthesis, backward warping, quality metrics,
//! parametric scenes with analytic flow, and PGM file I/O.

mod metrics;
mod pgm;
mod scene;

pub use metrics::{mse, psnr, ssim};
pub use pgm::{read_pgm, write_pgm};
pub use scene::{
    analytic_flow, demo_moving_square, render_scene, Primitive, PrimitiveShape, SceneSpec,
};

use crate::error::{Error, Result};

/// A grayscale intensity image with a timestamp in normalized seconds.
///
/// Pixels are stored row-major as `f64` and are finite by construction.
/// Operations that promise a clamped range do so explicitly via
/// [`Frame::clamp01`].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    width: usize,
    height: usize,
    timestamp: f64,
    pixels: Vec<f64>,
}

impl Frame {
    pub fn new(width: usize, height: usize, timestamp: f64, pixels: Vec<f64>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::invalid("frame dimensions must be positive"));
        }
        if pixels.len() != width * height {
            return Err(Error::shape(format!(
                "frame expects {} pixels, got {}",
                width * height,
                pixels.len()
            )));
        }
        if !timestamp.is_finite() || pixels.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("frame contains non-finite values"));
        }
        Ok(Frame {
            width,
            height,
            timestamp,
            pixels,
        })
    }

    /// Uniform frame filled with `value`.
    pub fn filled(width: usize, height: usize, timestamp: f64, value: f64) -> Self {
        Frame::new(width, height, timestamp, vec![value; width * height])
            .expect("uniform frame is valid")
    }

    /// Build a frame by evaluating `f(x, y)` at every pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        timestamp: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Self {
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Frame::new(width, height, timestamp, pixels).expect("generated frame is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn timestamp(&self) -> f64 {
        self.timestamp
    }

    pub fn pixels(&self) -> &[f64] {
        &self.pixels
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.pixels[y * self.width + x]
    }

    pub fn with_timestamp(mut self, timestamp: f64) -> Self {
        self.timestamp = timestamp;
        self
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Frame {
        Frame {
            width: self.width,
            height: self.height,
            timestamp: self.timestamp,
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Clamp every pixel into `[0, 1]`.
    pub fn clamp01(&self) -> Frame {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    /// Mirror the frame horizontally.
    pub fn hflip(&self) -> Frame {
        Frame::from_fn(self.width, self.height, self.timestamp, |x, y| {
            self.at(self.width - 1 - x, y)
        })
    }

    pub fn same_dims(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

/// An ordered set of frames with strictly increasing timestamps and uniform
/// dimensions. Never empty.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameSequence {
    frames: Vec<Frame>,
}

impl FrameSequence {
    pub fn new(frames: Vec<Frame>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frame sequence must contain at least one frame"))?;
        let (w, h) = (first.width(), first.height());
        for pair in frames.windows(2) {
            if pair[1].timestamp() <= pair[0].timestamp() {
                return Err(Error::invalid(
                    "frame timestamps must be strictly increasing",
                ));
            }
        }
        if frames.iter().any(|f| f.width() != w || f.height() != h) {
            return Err(Error::shape("frame sequence has mixed dimensions"));
        }
        Ok(FrameSequence { frames })
    }

    pub fn frames(&self) -> &[Frame] {
        &self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn get(&self, index: usize) -> &Frame {
        &self.frames[index]
    }

    pub fn width(&self) -> usize {
        self.frames[0].width()
    }

    pub fn height(&self) -> usize {
        self.frames[0].height()
    }

    /// First and last timestamps.
    pub fn span(&self) -> (f64, f64) {
        (
            self.frames[0].timestamp(),
            self.frames[self.frames.len() - 1].timestamp(),
        )
    }
}

/// Per-pixel displacement field in pixels.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    width: usize,
    height: usize,
    dx: Vec<f64>,
    dy: Vec<f64>,
}

impl FlowField {
    pub fn new(width: usize, height: usize, dx: Vec<f64>, dy: Vec<f64>) -> Result<Self> {
        if dx.len() != width * height || dy.len() != width * height {
            return Err(Error::shape("flow planes must match width*height"));
        }
        if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            return Err(Error::numeric("flow field contains non-finite values"));
        }
        Ok(FlowField {
            width,
            height,
            dx,
            dy,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        FlowField {
            width,
            height,
            dx: vec![0.0; width * height],
            dy: vec![0.0; width * height],
        }
    }

    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> (f64, f64),
    ) -> Self {
        let mut dx = Vec::with_capacity(width * height);
        let mut dy = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                let (u, v) = f(x, y);
                dx.push(u);
                dy.push(v);
            }
        }
        FlowField::new(width, height, dx, dy).expect("generated flow is valid")
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> (f64, f64) {
        let i = y * self.width + x;
        (self.dx[i], self.dy[i])
    }
}

/// Average the sequence into a single blurred frame.
///
/// The output timestamp is the midpoint of the sequence span.
pub fn synthesize_blur(seq: &FrameSequence) -> Frame {
    let n = seq.len() as f64;
    let (t0, t1) = seq.span();
    let mut acc = vec![0.0f64; seq.width() * seq.height()];
    for frame in seq.frames() {
        for (a, &v) in acc.iter_mut().zip(frame.pixels()) {
            *a += v;
        }
    }
    for a in acc.iter_mut() {
        *a /= n;
    }
    Frame::new(seq.width(), seq.height(), 0.5 * (t0 + t1), acc).expect("blur frame is valid")
}

/// Bilinear sample of `frame` at real coordinates, clamping to the border.
#[inline]
pub(crate) fn sample_bilinear(frame: &Frame, sx: f64, sy: f64) -> f64 {
    let w = frame.width() as isize;
    let h = frame.height() as isize;
    let x0 = sx.floor();
    let y0 = sy.floor();
    let fx = sx - x0;
    let fy = sy - y0;
    let clamp_x = |x: isize| x.clamp(0, w - 1) as usize;
    let clamp_y = |y: isize| y.clamp(0, h - 1) as usize;
    let x0i = x0 as isize;
    let y0i = y0 as isize;
    let v00 = frame.at(clamp_x(x0i), clamp_y(y0i));
    let v10 = frame.at(clamp_x(x0i + 1), clamp_y(y0i));
    let v01 = frame.at(clamp_x(x0i), clamp_y(y0i + 1));
    let v11 = frame.at(clamp_x(x0i + 1), clamp_y(y0i + 1));
    (1.0 - fx) * (1.0 - fy) * v00 + fx * (1.0 - fy) * v10 + (1.0 - fx) * fy * v01 + fx * fy * v11
}

/// Backward-warp `frame` by `flow`: `out(x, y) = frame(x - dx, y - dy)`
/// with bilinear sampling and border clamping.
pub fn warp(frame: &Frame, flow: &FlowField) -> Result<Frame> {
    if frame.width() != flow.width() || frame.height() != flow.height() {
        return Err(Error::shape("warp: frame and flow dimensions differ"));
    }
    Ok(Frame::from_fn(
        frame.width(),
        frame.height(),
        frame.timestamp(),
        |x, y| {
            let (dx, dy) = flow.at(x, y);
            sample_bilinear(frame, x as f64 - dx, y as f64 - dy)
        },
    ))
}
