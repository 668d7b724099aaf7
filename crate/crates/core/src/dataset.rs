//! Procedural Moving 2D Shapes clips: circles, squares and triangles
//! translating inside a frame and bouncing off its borders.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ShapeKind {
    Circle,
    Square,
    Triangle,
}

impl ShapeKind {
    pub const ALL: [ShapeKind; 3] = [ShapeKind::Circle, ShapeKind::Square, ShapeKind::Triangle];

    pub fn name(self) -> &'static str {
        match self {
            ShapeKind::Circle => "circle",
            ShapeKind::Square => "square",
            ShapeKind::Triangle => "triangle",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == s)
    }
}

/// One object: `center` is `(x, y)` in pixels with pixel `(row, col)`
/// centred at `(col + 0.5, row + 0.5)`; `size` is the radius or half-side.
#[derive(Debug, Clone, PartialEq)]
pub struct ShapeSpec {
    pub kind: ShapeKind,
    pub center: (f64, f64),
    pub size: f64,
    pub velocity: (f64, f64),
    /// Per-channel intensity in `[0, 1]`.
    pub intensity: Vec<f64>,
}

impl ShapeSpec {
    /// Pixel-centre coverage test.
    pub fn covers(&self, px: f64, py: f64) -> bool {
        let (cx, cy) = self.center;
        let s = self.size;
        match self.kind {
            ShapeKind::Circle => (px - cx).powi(2) + (py - cy).powi(2) <= s * s,
            ShapeKind::Square => (px - cx).abs() <= s && (py - cy).abs() <= s,
            ShapeKind::Triangle => {
                // apex up, base along y = cy + s
                let a = (cx, cy - s);
                let b = (cx + s, cy + s);
                let c = (cx - s, cy + s);
                let edge = |p: (f64, f64), q: (f64, f64)| {
                    (q.0 - p.0) * (py - p.1) - (q.1 - p.1) * (px - p.0)
                };
                let (e1, e2, e3) = (edge(a, b), edge(b, c), edge(c, a));
                (e1 >= 0.0 && e2 >= 0.0 && e3 >= 0.0) || (e1 <= 0.0 && e2 <= 0.0 && e3 <= 0.0)
            }
        }
    }

    pub fn inside(&self, height: usize, width: usize) -> bool {
        let (cx, cy) = self.center;
        cx - self.size >= 0.0
            && cx + self.size <= width as f64
            && cy - self.size >= 0.0
            && cy + self.size <= height as f64
    }

    /// Advances one frame, reflecting elastically off the frame borders.
    pub fn step(&mut self, height: usize, width: usize) {
        let (x, vx) = reflect(
            self.center.0,
            self.velocity.0,
            self.size,
            width as f64 - self.size,
        );
        let (y, vy) = reflect(
            self.center.1,
            self.velocity.1,
            self.size,
            height as f64 - self.size,
        );
        self.center = (x, y);
        self.velocity = (vx, vy);
    }
}

fn reflect(mut p: f64, mut v: f64, lo: f64, hi: f64) -> (f64, f64) {
    p += v;
    // the range always spans at least one full step, so this settles quickly
    loop {
        if p < lo {
            p = 2.0 * lo - p;
            v = -v;
        } else if p > hi {
            p = 2.0 * hi - p;
            v = -v;
        } else {
            return (p, v);
        }
    }
}

/// One image, `height x width x channels`, channel-last, values in `[-1, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Frame<T> {
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    pub pixels: Vec<T>,
}

impl<T: Scalar> Frame<T> {
    pub fn new(height: usize, width: usize, channels: usize, pixels: Vec<T>) -> Result<Self> {
        if pixels.len() != height * width * channels {
            return Err(Error::shape(
                "frame",
                format!(
                    "{height}x{width}x{channels} needs {} values, got {}",
                    height * width * channels,
                    pixels.len()
                ),
            ));
        }
        Ok(Self {
            height,
            width,
            channels,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: T) -> Self {
        Self {
            height,
            width,
            channels,
            pixels: vec![value; height * width * channels],
        }
    }

    pub fn same_dims(&self, other: &Frame<T>) -> bool {
        self.height == other.height && self.width == other.width && self.channels == other.channels
    }

    pub fn get(&self, row: usize, col: usize, ch: usize) -> T {
        self.pixels[(row * self.width + col) * self.channels + ch]
    }

    /// Channel-first copy (`c x h x w`).
    pub fn to_chw(&self) -> Vec<T> {
        let mut out = Vec::with_capacity(self.pixels.len());
        for ch in 0..self.channels {
            out.extend(self.pixels.iter().skip(ch).step_by(self.channels).copied());
        }
        out
    }

    pub fn from_chw(height: usize, width: usize, channels: usize, data: &[T]) -> Result<Self> {
        let plane = height * width;
        if data.len() != plane * channels {
            return Err(Error::shape(
                "frame",
                format!("{} values for {height}x{width}x{channels}", data.len()),
            ));
        }
        let mut pixels = vec![T::zero(); data.len()];
        for ch in 0..channels {
            for i in 0..plane {
                pixels[i * channels + ch] = data[ch * plane + i];
            }
        }
        Self::new(height, width, channels, pixels)
    }

    /// Channel order reversed; the identity for single-channel frames.
    pub fn reverse_channels(&self) -> Self {
        let mut pixels = self.pixels.clone();
        for px in pixels.chunks_mut(self.channels) {
            px.reverse();
        }
        Self { pixels, ..*self }
    }

    /// Single-channel mean over colour channels.
    pub fn luminance(&self) -> Self {
        let c = T::of(self.channels as f64);
        let pixels = self
            .pixels
            .chunks(self.channels)
            .map(|px| px.iter().copied().sum::<T>() / c)
            .collect();
        Self {
            height: self.height,
            width: self.width,
            channels: 1,
            pixels,
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            pixels: self.pixels.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn cast<U: Scalar>(&self) -> Frame<U> {
        Frame {
            height: self.height,
            width: self.width,
            channels: self.channels,
            pixels: self.pixels.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }
}

/// Paints `shapes` in list order over a background of -1.
pub fn render_frame<T: Scalar>(
    shapes: &[ShapeSpec],
    height: usize,
    width: usize,
    channels: usize,
) -> Frame<T> {
    let mut frame = Frame::filled(height, width, channels, -T::one());
    for shape in shapes {
        let (cx, cy) = shape.center;
        let r0 = (cy - shape.size - 1.0).floor().max(0.0) as usize;
        let r1 = ((cy + shape.size + 1.0).ceil().max(0.0) as usize).min(height);
        let c0 = (cx - shape.size - 1.0).floor().max(0.0) as usize;
        let c1 = ((cx + shape.size + 1.0).ceil().max(0.0) as usize).min(width);
        for row in r0..r1 {
            for col in c0..c1 {
                if shape.covers(col as f64 + 0.5, row as f64 + 0.5) {
                    let px = &mut frame.pixels
                        [(row * width + col) * channels..(row * width + col + 1) * channels];
                    for (ch, p) in px.iter_mut().enumerate() {
                        let i = shape.intensity[ch.min(shape.intensity.len() - 1)];
                        *p = T::of(2.0 * i - 1.0);
                    }
                }
            }
        }
    }
    frame
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClipConfig {
    /// Sequence length `T` (start + targets + end).
    pub frames: usize,
    pub n_shapes: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Inclusive integer speed range in pixels per frame.
    pub velocity_range: (u32, u32),
    /// Inclusive integer radius / half-side range in pixels.
    pub size_range: (u32, u32),
    /// Shape kinds in paint order; empty means the first `n_shapes` of circle, square, triangle.
    pub kinds: Vec<ShapeKind>,
}

impl Default for ClipConfig {
    fn default() -> Self {
        Self {
            frames: 16,
            n_shapes: 3,
            channels: 1,
            height: 64,
            width: 64,
            velocity_range: (1, 3),
            size_range: (4, 8),
            kinds: Vec::new(),
        }
    }
}

impl ClipConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames < 3 {
            return fail(format!(
                "clip length {} < 3 leaves no intermediate frame",
                self.frames
            ));
        }
        if !(1..=3).contains(&self.n_shapes) {
            return fail(format!("n_shapes must be 1..=3, got {}", self.n_shapes));
        }
        if !self.kinds.is_empty() && self.kinds.len() != self.n_shapes {
            return fail(format!(
                "{} kinds given for {} shapes",
                self.kinds.len(),
                self.n_shapes
            ));
        }
        if self.channels == 0 {
            return fail("channels must be positive".into());
        }
        let (vmin, vmax) = self.velocity_range;
        if vmin == 0 || vmin > vmax {
            return fail(format!(
                "velocity range {vmin}..={vmax} must be positive and ordered"
            ));
        }
        let (smin, smax) = self.size_range;
        if smin < 2 || smin > smax {
            return fail(format!(
                "size range {smin}..={smax} must start at 2 or more and be ordered"
            ));
        }
        let span = self.height.min(self.width) as i64 - 2 * smax as i64;
        if span < vmax as i64 {
            return fail(format!(
                "shapes of size {smax} moving {vmax} px/frame do not fit a {}x{} frame",
                self.height, self.width
            ));
        }
        Ok(())
    }

    pub fn kind(&self, i: usize) -> ShapeKind {
        self.kinds.get(i).copied().unwrap_or(ShapeKind::ALL[i % 3])
    }

    pub fn intermediate(&self) -> usize {
        self.frames - 2
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clip<T> {
    pub frames: Vec<Frame<T>>,
    pub seed: u64,
    pub config: ClipConfig,
    /// Object state at the first frame.
    pub shapes: Vec<ShapeSpec>,
}

impl<T: Scalar> Clip<T> {
    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

const DIRECTIONS: [(f64, f64); 8] = [
    (1.0, 0.0),
    (-1.0, 0.0),
    (0.0, 1.0),
    (0.0, -1.0),
    (1.0, 1.0),
    (1.0, -1.0),
    (-1.0, 1.0),
    (-1.0, -1.0),
];

fn sample_shapes(rng: &mut ChaCha8Rng, cfg: &ClipConfig) -> Vec<ShapeSpec> {
    (0..cfg.n_shapes)
        .map(|i| {
            let size = rng.random_range(cfg.size_range.0..=cfg.size_range.1) as f64;
            let cx = rng.random_range(size as usize..=cfg.width - size as usize) as f64;
            let cy = rng.random_range(size as usize..=cfg.height - size as usize) as f64;
            let speed = rng.random_range(cfg.velocity_range.0..=cfg.velocity_range.1) as f64;
            let (dx, dy) = DIRECTIONS[rng.random_range(0..DIRECTIONS.len())];
            let intensity = (0..cfg.channels)
                .map(|_| rng.random_range(0.5..=1.0))
                .collect();
            ShapeSpec {
                kind: cfg.kind(i),
                center: (cx, cy),
                size,
                velocity: (dx * speed, dy * speed),
                intensity,
            }
        })
        .collect()
}

/// Renders a `frames`-long clip from explicit initial shapes.
pub fn clip_from_shapes<T: Scalar>(
    shapes: Vec<ShapeSpec>,
    seed: u64,
    config: &ClipConfig,
) -> Clip<T> {
    let mut state = shapes.clone();
    let mut frames = Vec::with_capacity(config.frames);
    for t in 0..config.frames {
        if t > 0 {
            for s in &mut state {
                s.step(config.height, config.width);
            }
        }
        frames.push(render_frame(
            &state,
            config.height,
            config.width,
            config.channels,
        ));
    }
    Clip {
        frames,
        seed,
        config: config.clone(),
        shapes,
    }
}

/// Deterministic clip for `(seed, config)`.
pub fn gen_clip<T: Scalar>(seed: u64, config: &ClipConfig) -> Result<Clip<T>> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let shapes = sample_shapes(&mut rng, config);
    Ok(clip_from_shapes(shapes, seed, config))
}

/// `(start, intermediate targets, end)` of a clip.
pub type Triple<T> = (Frame<T>, Vec<Frame<T>>, Frame<T>);

pub fn split_clip<T: Scalar>(clip: &Clip<T>) -> Result<Triple<T>> {
    let n = clip.frames.len();
    if n < 3 {
        return Err(Error::Dataset(format!(
            "clip of {n} frames has no intermediate frame"
        )));
    }
    Ok((
        clip.frames[0].clone(),
        clip.frames[1..n - 1].to_vec(),
        clip.frames[n - 1].clone(),
    ))
}

fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the `index`-th clip of a stream. Injective in `index` for a fixed base.
pub fn clip_seed(base: u64, index: u64) -> u64 {
    splitmix64(base.wrapping_add(index))
}

const HELD_OUT_OFFSET: u64 = 1 << 63;

/// Seed of the `index`-th held-out clip; never collides with [`clip_seed`] for
/// training indices below 2^63.
pub fn held_out_seed(base: u64, index: u64) -> u64 {
    clip_seed(base, HELD_OUT_OFFSET + index)
}

pub fn held_out_clips<T: Scalar>(
    base: u64,
    config: &ClipConfig,
    count: usize,
) -> Result<Vec<Clip<T>>> {
    (0..count as u64)
        .map(|i| gen_clip(held_out_seed(base, i), config))
        .collect()
}

/// The `batch_index`-th training batch of a seeded stream.
pub fn batch_at<T: Scalar>(
    seed: u64,
    config: &ClipConfig,
    batch_size: usize,
    batch_index: u64,
) -> Result<Vec<Clip<T>>> {
    let first = batch_index * batch_size as u64;
    (0..batch_size as u64)
        .map(|i| gen_clip(clip_seed(seed, first + i), config))
        .collect()
}

/// Seeded stream of training batches.
#[derive(Debug, Clone)]
pub struct BatchIter<T> {
    seed: u64,
    config: ClipConfig,
    batch_size: usize,
    next: u64,
    end: u64,
    _marker: std::marker::PhantomData<T>,
}

pub fn batch_iter<T: Scalar>(
    seed: u64,
    config: ClipConfig,
    batch_size: usize,
    n_batches: u64,
) -> Result<BatchIter<T>> {
    if batch_size == 0 {
        return Err(Error::Config("batch size must be at least 1".into()));
    }
    config.validate()?;
    Ok(BatchIter {
        seed,
        config,
        batch_size,
        next: 0,
        end: n_batches,
        _marker: std::marker::PhantomData,
    })
}

impl<T: Scalar> Iterator for BatchIter<T> {
    type Item = Vec<Triple<T>>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.end {
            return None;
        }
        let clips = batch_at::<T>(self.seed, &self.config, self.batch_size, self.next).ok()?;
        self.next += 1;
        clips.iter().map(|c| split_clip(c).ok()).collect()
    }
}
