//! Grayscale frames, binary PGM (P5) I/O and the synthetic scene renderer.
//!
//! The renderer draws an overhead view of the test segment: a uniform road
//! surface with the vehicle as a filled axis-aligned rectangle travelling
//! along +X. Pixel `i` covers `[i, i + 1)` in pixel units, so its center
//! sits at world coordinate `(i + 0.5) * meters_per_pixel`.

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::rng::Lcg;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    width: usize,
    height: usize,
    pixels: Vec<u8>,
    index: u64,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum FrameError {
    #[error("frame dimensions must be positive, got {width}x{height}")]
    EmptyDimensions { width: usize, height: usize },
    #[error("pixel buffer holds {actual} values, expected {expected}")]
    BufferSize { expected: usize, actual: usize },
}

impl Frame {
    pub fn new(width: usize, height: usize, pixels: Vec<u8>, index: u64) -> Result<Self, FrameError> {
        if width == 0 || height == 0 {
            return Err(FrameError::EmptyDimensions { width, height });
        }
        if pixels.len() != width * height {
            return Err(FrameError::BufferSize {
                expected: width * height,
                actual: pixels.len(),
            });
        }
        Ok(Self {
            width,
            height,
            pixels,
            index,
        })
    }

    /// A frame where every pixel has the same intensity.
    pub fn filled(width: usize, height: usize, value: u8, index: u64) -> Result<Self, FrameError> {
        Self::new(width, height, vec![value; width * height], index)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn index(&self) -> u64 {
        self.index
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn with_index(mut self, index: u64) -> Self {
        self.index = index;
        self
    }

    pub fn same_dimensions(&self, other: &Frame) -> bool {
        self.width == other.width && self.height == other.height
    }
}

// ---------------------------------------------------------------------------
// PGM (P5)
// ---------------------------------------------------------------------------

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PgmError {
    #[error("byte {offset}: missing P5 magic number")]
    BadMagic { offset: usize },
    #[error("byte {offset}: malformed header: {reason}")]
    MalformedHeader { offset: usize, reason: &'static str },
    #[error("byte {offset}: unsupported max value {maxval}, only 255 is accepted")]
    UnsupportedDepth { offset: usize, maxval: u64 },
    #[error("byte {offset}: pixel data truncated, expected {expected} bytes but {available} remain")]
    Truncated {
        offset: usize,
        expected: usize,
        available: usize,
    },
    #[error("byte {offset}: {extra} unexpected bytes after pixel data")]
    TrailingData { offset: usize, extra: usize },
}

struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderCursor<'_> {
    fn skip_whitespace_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &'static str) -> Result<(u64, usize), PgmError> {
        self.skip_whitespace_and_comments();
        let start = self.pos;
        let mut value: u64 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .ok_or(PgmError::MalformedHeader {
                    offset: start,
                    reason: "numeric field overflows",
                })?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(PgmError::MalformedHeader {
                offset: start,
                reason: what,
            });
        }
        match self.bytes.get(self.pos) {
            Some(b) if b.is_ascii_whitespace() => Ok((value, start)),
            Some(_) => Err(PgmError::MalformedHeader {
                offset: self.pos,
                reason: "numeric field not followed by whitespace",
            }),
            None => Err(PgmError::MalformedHeader {
                offset: self.pos,
                reason: "header ends prematurely",
            }),
        }
    }
}

/// Parses a binary PGM (P5) image with max value 255. The returned frame has
/// index 0; sequence loaders assign indices from file names.
pub fn load_frame(bytes: &[u8]) -> Result<Frame, PgmError> {
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(PgmError::BadMagic { offset: 0 });
    }
    if !bytes.get(2).is_some_and(|b| b.is_ascii_whitespace()) {
        return Err(PgmError::MalformedHeader {
            offset: 2,
            reason: "magic number not followed by whitespace",
        });
    }
    let mut cursor = HeaderCursor { bytes, pos: 2 };
    let (width, width_at) = cursor.number("expected width")?;
    let (height, height_at) = cursor.number("expected height")?;
    let (maxval, maxval_at) = cursor.number("expected max value")?;
    if width == 0 {
        return Err(PgmError::MalformedHeader {
            offset: width_at,
            reason: "width is zero",
        });
    }
    if height == 0 {
        return Err(PgmError::MalformedHeader {
            offset: height_at,
            reason: "height is zero",
        });
    }
    if maxval != 255 {
        return Err(PgmError::UnsupportedDepth {
            offset: maxval_at,
            maxval,
        });
    }
    // exactly one whitespace byte separates the header from the raster
    let data_start = cursor.pos + 1;
    let expected = usize::try_from(width)
        .ok()
        .zip(usize::try_from(height).ok())
        .and_then(|(w, h)| w.checked_mul(h))
        .ok_or(PgmError::MalformedHeader {
            offset: width_at,
            reason: "image dimensions overflow",
        })?;
    let available = bytes.len().saturating_sub(data_start);
    if available < expected {
        return Err(PgmError::Truncated {
            offset: data_start,
            expected,
            available,
        });
    }
    if available > expected {
        return Err(PgmError::TrailingData {
            offset: data_start + expected,
            extra: available - expected,
        });
    }
    let pixels = bytes[data_start..].to_vec();
    Ok(Frame {
        width: width as usize,
        height: height as usize,
        pixels,
        index: 0,
    })
}

/// Encodes a frame as canonical P5: `P5 <w> <h> 255\n` followed by the raster.
pub fn save_frame(frame: &Frame) -> Vec<u8> {
    let header = format!("P5 {} {} 255\n", frame.width, frame.height);
    let mut out = Vec::with_capacity(header.len() + frame.pixels.len());
    out.extend_from_slice(header.as_bytes());
    out.extend_from_slice(&frame.pixels);
    out
}

// ---------------------------------------------------------------------------
// Frame sequences on disk
// ---------------------------------------------------------------------------

#[derive(Debug, Error)]
pub enum SequenceError {
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{}: {source}", path.display())]
    Pgm {
        path: PathBuf,
        #[source]
        source: PgmError,
    },
    #[error("{}: duplicate frame index {index}", path.display())]
    DuplicateIndex { path: PathBuf, index: u64 },
}

pub fn frame_file_name(index: u64) -> String {
    format!("frame_{index:06}.pgm")
}

/// Extracts the index from a `frame_NNNNNN.pgm` file name.
pub fn parse_frame_file_name(name: &str) -> Option<u64> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() < 6 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

pub fn write_sequence(dir: &Path, frames: &[Frame]) -> Result<(), SequenceError> {
    for frame in frames {
        let path = dir.join(frame_file_name(frame.index));
        fs::write(&path, save_frame(frame)).map_err(|source| SequenceError::Io { path, source })?;
    }
    Ok(())
}

/// Loads every `frame_NNNNNN.pgm` in `dir`, ordered by index. Other files are
/// ignored.
pub fn read_sequence(dir: &Path) -> Result<Vec<Frame>, SequenceError> {
    let entries = fs::read_dir(dir).map_err(|source| SequenceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut indexed = Vec::new();
    for entry in entries {
        let entry = entry.map_err(|source| SequenceError::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(parse_frame_file_name) {
            indexed.push((index, entry.path()));
        }
    }
    indexed.sort();
    let mut frames: Vec<Frame> = Vec::with_capacity(indexed.len());
    for (index, path) in indexed {
        if frames.last().is_some_and(|f| f.index == index) {
            return Err(SequenceError::DuplicateIndex { path, index });
        }
        let bytes = fs::read(&path).map_err(|source| SequenceError::Io {
            path: path.clone(),
            source,
        })?;
        let frame = load_frame(&bytes).map_err(|source| SequenceError::Pgm { path, source })?;
        frames.push(frame.with_index(index));
    }
    Ok(frames)
}

// ---------------------------------------------------------------------------
// Synthetic scene
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
pub struct SceneConfig {
    /// Length of the test segment in meters.
    pub segment_length: f64,
    /// Pixels spanning `segment_length` along the motion axis (frame width).
    pub resolution: usize,
    /// Frame height in pixels; the road strip is centered vertically.
    pub frame_height: usize,
    pub vehicle_length: f64,
    pub vehicle_width: f64,
    pub vehicle_intensity: u8,
    pub background_intensity: u8,
    /// m/s
    pub true_speed: f64,
    /// Fraction of frames in a traverse that get box-blurred.
    pub blur_fraction: f64,
    pub blur_radius: usize,
    pub noise_amplitude: u8,
    pub frame_rate: f64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            segment_length: 1.0,
            resolution: 400,
            frame_height: 80,
            vehicle_length: 0.13,
            vehicle_width: 0.093,
            vehicle_intensity: 220,
            background_intensity: 40,
            true_speed: 0.93,
            blur_fraction: 0.0,
            blur_radius: 32,
            noise_amplitude: 0,
            frame_rate: 25.0,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum SceneError {
    #[error("invalid scene parameter `{field}`: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("time {t} s outside the traverse [0, {max}] s")]
    TimeOutOfRange { t: f64, max: f64 },
}

fn invalid(field: &'static str, reason: impl Into<String>) -> SceneError {
    SceneError::Invalid {
        field,
        reason: reason.into(),
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<(), SceneError> {
        let positive = |field, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(invalid(field, format!("must be > 0, got {v}")))
            }
        };
        positive("segment_length", self.segment_length)?;
        positive("vehicle_length", self.vehicle_length)?;
        positive("vehicle_width", self.vehicle_width)?;
        positive("frame_rate", self.frame_rate)?;
        if self.resolution == 0 {
            return Err(invalid("resolution", "must be > 0"));
        }
        if self.frame_height == 0 {
            return Err(invalid("frame_height", "must be > 0"));
        }
        if !(self.true_speed.is_finite() && self.true_speed >= 0.0) {
            return Err(invalid("true_speed", format!("must be >= 0, got {}", self.true_speed)));
        }
        if !(0.0..=1.0).contains(&self.blur_fraction) {
            return Err(invalid(
                "blur_fraction",
                format!("must lie in [0, 1], got {}", self.blur_fraction),
            ));
        }
        if self.vehicle_length > self.segment_length {
            return Err(invalid("vehicle_length", "vehicle longer than the segment"));
        }
        if self.vehicle_width * self.pixels_per_meter() > self.frame_height as f64 {
            return Err(invalid("vehicle_width", "vehicle wider than the frame"));
        }
        let contrast = i32::from(self.vehicle_intensity) - i32::from(self.background_intensity);
        if contrast.abs() <= 2 * i32::from(self.noise_amplitude) {
            return Err(invalid(
                "noise_amplitude",
                "vehicle/background contrast must exceed twice the noise amplitude",
            ));
        }
        Ok(())
    }

    pub fn pixels_per_meter(&self) -> f64 {
        self.resolution as f64 / self.segment_length
    }

    pub fn meters_per_pixel(&self) -> f64 {
        self.segment_length / self.resolution as f64
    }

    pub fn frame_interval(&self) -> f64 {
        1.0 / self.frame_rate
    }

    /// Time for the leading edge to cross the segment, `None` when static.
    pub fn traverse_time(&self) -> Option<f64> {
        (self.true_speed > 0.0).then(|| self.segment_length / self.true_speed)
    }

    /// Frames captured at `t = 0, 1/fps, ...` up to and including the
    /// traverse time: `floor(T * fps) + 1`.
    pub fn traverse_frame_count(&self) -> Option<usize> {
        self.traverse_time()
            .map(|t| (t * self.frame_rate + 1e-9).floor() as usize + 1)
    }

    /// Ground-truth position of the vehicle's leading edge at time `t`.
    pub fn leading_edge(&self, t: f64) -> f64 {
        self.true_speed * t
    }

    /// Ground-truth position of the vehicle's center at time `t`.
    pub fn vehicle_center(&self, t: f64) -> f64 {
        self.leading_edge(t) - self.vehicle_length / 2.0
    }
}

/// The road surface with no vehicle in view.
pub fn render_background(config: &SceneConfig) -> Result<Frame, SceneError> {
    config.validate()?;
    Frame::filled(
        config.resolution,
        config.frame_height,
        config.background_intensity,
        0,
    )
    .map_err(|e| invalid("resolution", e.to_string()))
}

/// Renders the scene at time `t`. The vehicle occupies world X range
/// `[v*t - length, v*t]`; a pixel is painted iff its center lies inside the
/// rectangle (boundaries inclusive). The returned frame has index 0.
pub fn render_scene(config: &SceneConfig, t: f64) -> Result<Frame, SceneError> {
    let mut frame = render_background(config)?;
    let max = config.traverse_time().unwrap_or(f64::INFINITY);
    if !(t >= 0.0 && t <= max + 1e-12) {
        return Err(SceneError::TimeOutOfRange { t, max });
    }

    let ppm = config.pixels_per_meter();
    let lead_px = config.leading_edge(t) * ppm;
    let rear_px = lead_px - config.vehicle_length * ppm;
    let mid_y = config.frame_height as f64 / 2.0;
    let half_w = config.vehicle_width * ppm / 2.0;
    let (top_px, bottom_px) = (mid_y - half_w, mid_y + half_w);

    let inside = |center: f64, lo: f64, hi: f64| center >= lo && center <= hi;
    let cols: Vec<usize> = (0..config.resolution)
        .filter(|&i| inside(i as f64 + 0.5, rear_px, lead_px))
        .collect();
    let width = frame.width;
    for y in (0..config.frame_height).filter(|&j| inside(j as f64 + 0.5, top_px, bottom_px)) {
        let row = &mut frame.pixels[y * width..(y + 1) * width];
        for &x in &cols {
            row[x] = config.vehicle_intensity;
        }
    }
    Ok(frame)
}

/// Box blur over the Chebyshev neighbourhood of `radius`. The window is
/// clipped at the frame edges and each output is the mean of the in-bounds
/// pixels, rounded half up.
pub fn apply_blur(frame: &Frame, radius: usize) -> Frame {
    if radius == 0 {
        return frame.clone();
    }
    let (w, h) = (frame.width, frame.height);
    let window = |i: usize, len: usize| (i.saturating_sub(radius), (i + radius).min(len - 1));

    // horizontal window sums via per-row prefix sums
    let mut row_sums = vec![0u32; w * h];
    let mut prefix = vec![0u32; w + 1];
    for y in 0..h {
        let row = &frame.pixels[y * w..(y + 1) * w];
        for (x, &p) in row.iter().enumerate() {
            prefix[x + 1] = prefix[x] + u32::from(p);
        }
        for x in 0..w {
            let (lo, hi) = window(x, w);
            row_sums[y * w + x] = prefix[hi + 1] - prefix[lo];
        }
    }

    let mut out = vec![0u8; w * h];
    let mut col_prefix = vec![0u64; h + 1];
    for x in 0..w {
        for y in 0..h {
            col_prefix[y + 1] = col_prefix[y] + u64::from(row_sums[y * w + x]);
        }
        let (x_lo, x_hi) = window(x, w);
        let nx = (x_hi - x_lo + 1) as u64;
        for y in 0..h {
            let (y_lo, y_hi) = window(y, h);
            let n = nx * (y_hi - y_lo + 1) as u64;
            let sum = col_prefix[y_hi + 1] - col_prefix[y_lo];
            out[y * w + x] = ((sum + n / 2) / n) as u8;
        }
    }
    Frame {
        width: w,
        height: h,
        pixels: out,
        index: frame.index,
    }
}

/// Adds a uniform integer offset in `[-amplitude, amplitude]` to every pixel,
/// clamped to `[0, 255]`. One draw from an [`Lcg`] seeded with `seed` is
/// consumed per pixel in raster order.
pub fn apply_noise(frame: &Frame, amplitude: u8, seed: u64) -> Frame {
    if amplitude == 0 {
        return frame.clone();
    }
    let mut rng = Lcg::new(seed);
    let span = 2 * u32::from(amplitude) + 1;
    let amp = i32::from(amplitude);
    let pixels = frame
        .pixels
        .iter()
        .map(|&p| {
            let offset = rng.below(span) as i32 - amp;
            (i32::from(p) + offset).clamp(0, 255) as u8
        })
        .collect();
    Frame {
        width: frame.width,
        height: frame.height,
        pixels,
        index: frame.index,
    }
}
