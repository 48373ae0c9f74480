//! Frame loading, color reduction, sampling and box downsampling.
//!
//! Recordings are stored as directories of `frame_NNNN.pgm` files numbered
//! contiguously from zero. Timestamps come from the configured frame rate.

pub mod pgm;

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Decoded grayscale frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    /// Row-major luma, `width * height` bytes.
    pub luma: Vec<u8>,
    pub timestamp_ms: u64,
    pub index: usize,
}

impl Frame {
    pub fn new(width: usize, height: usize, luma: Vec<u8>, timestamp_ms: u64, index: usize) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::Dimension(format!("empty frame {width}x{height}")));
        }
        if luma.len() != width * height {
            return Err(Error::Dimension(format!(
                "luma has {} values for a {width}x{height} frame",
                luma.len()
            )));
        }
        Ok(Frame {
            width,
            height,
            luma,
            timestamp_ms,
            index,
        })
    }

    /// Constant-valued frame, handy for fixtures.
    pub fn filled(width: usize, height: usize, value: u8, timestamp_ms: u64, index: usize) -> Self {
        Frame {
            width,
            height,
            luma: vec![value; width * height],
            timestamp_ms,
            index,
        }
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.luma[y * self.width + x]
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        pgm::encode(self.width, self.height, &self.luma)
    }
}

/// Contiguous segment of a recording covering one user operation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Clip {
    pub clip_id: String,
    pub frames: Vec<Frame>,
    pub start_ms: u64,
    pub end_ms: u64,
}

impl Clip {
    /// Validates the clip invariants. The span defaults to the first and last
    /// frame timestamps.
    pub fn new(clip_id: impl Into<String>, frames: Vec<Frame>) -> Result<Self> {
        let (start_ms, end_ms) = match (frames.first(), frames.last()) {
            (Some(first), Some(last)) => (first.timestamp_ms, last.timestamp_ms),
            _ => return Err(Error::Sequence("clip has no frames".into())),
        };
        Self::with_span(clip_id, frames, start_ms, end_ms)
    }

    pub fn with_span(clip_id: impl Into<String>, frames: Vec<Frame>, start_ms: u64, end_ms: u64) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Sequence("clip has no frames".into()))?;
        let (w, h) = (first.width, first.height);
        for pair in frames.windows(2) {
            if pair[1].index <= pair[0].index {
                return Err(Error::Sequence(format!(
                    "frame index {} does not follow {}",
                    pair[1].index, pair[0].index
                )));
            }
            if pair[1].timestamp_ms < pair[0].timestamp_ms {
                return Err(Error::Sequence(format!(
                    "timestamp of frame {} goes backwards",
                    pair[1].index
                )));
            }
        }
        if let Some(f) = frames.iter().find(|f| (f.width, f.height) != (w, h)) {
            return Err(Error::Dimension(format!(
                "frame {} is {}x{}, clip is {w}x{h}",
                f.index, f.width, f.height
            )));
        }
        let last = frames.last().expect("non-empty");
        if start_ms > first.timestamp_ms || last.timestamp_ms > end_ms {
            return Err(Error::Sequence(format!(
                "span {start_ms}..{end_ms} does not cover frame timestamps {}..{}",
                first.timestamp_ms, last.timestamp_ms
            )));
        }
        Ok(Clip {
            clip_id: clip_id.into(),
            frames,
            start_ms,
            end_ms,
        })
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn resolution(&self) -> (usize, usize) {
        (self.frames[0].width, self.frames[0].height)
    }
}

/// Frame rate as a positive rational, e.g. `30` or `30000/1001`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Fps {
    num: u64,
    den: u64,
}

impl Fps {
    pub fn new(num: u64, den: u64) -> Result<Self> {
        if num == 0 || den == 0 {
            return Err(Error::Argument(format!("fps must be positive, got {num}/{den}")));
        }
        Ok(Fps { num, den })
    }

    /// `round(index * 1000 / fps)`, half rounded up, in exact integer arithmetic.
    pub fn timestamp_ms(&self, index: usize) -> u64 {
        let numer = 2 * index as u128 * 1000 * self.den as u128 + self.num as u128;
        (numer / (2 * self.num as u128)) as u64
    }
}

impl FromStr for Fps {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::Argument(format!("cannot parse fps {s:?}"));
        let (num, den) = match s.split_once('/') {
            Some((n, d)) => (n.trim().parse().map_err(|_| bad())?, d.trim().parse().map_err(|_| bad())?),
            None => (s.trim().parse().map_err(|_| bad())?, 1),
        };
        Fps::new(num, den)
    }
}

impl fmt::Display for Fps {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.den == 1 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/{}", self.num, self.den)
        }
    }
}

pub fn frame_file_name(index: usize) -> String {
    format!("frame_{index:04}.pgm")
}

fn parse_frame_name(name: &str) -> Option<usize> {
    let digits = name.strip_prefix("frame_")?.strip_suffix(".pgm")?;
    if digits.len() < 4 || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    digits.parse().ok()
}

/// Loads `frame_NNNN.pgm` files from `dir`. Files not matching the pattern are ignored.
pub fn load_frame_directory(dir: &Path, fps: Fps) -> Result<Clip> {
    let mut indexed = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let entry = entry?;
        let name = entry.file_name();
        if let Some(index) = name.to_str().and_then(parse_frame_name) {
            indexed.push((index, entry.path()));
        }
    }
    if indexed.is_empty() {
        return Err(Error::Sequence(format!("no frame_NNNN.pgm files in {}", dir.display())));
    }
    indexed.sort();
    for (expected, (index, path)) in indexed.iter().enumerate() {
        if *index != expected {
            let missing = if *index > expected {
                frame_file_name(expected)
            } else {
                format!("duplicate of {}", path.display())
            };
            return Err(Error::Sequence(format!("missing {missing} in {}", dir.display())));
        }
    }
    let mut frames = Vec::with_capacity(indexed.len());
    for (index, path) in &indexed {
        let bytes = std::fs::read(path)?;
        let img = pgm::decode(&bytes, path)?;
        if let Some(first) = frames.first() {
            let first: &Frame = first;
            if (img.width, img.height) != (first.width, first.height) {
                return Err(Error::Dimension(format!(
                    "{} is {}x{}, earlier frames are {}x{}",
                    path.display(),
                    img.width,
                    img.height,
                    first.width,
                    first.height
                )));
            }
        }
        frames.push(Frame {
            width: img.width,
            height: img.height,
            luma: img.pixels,
            timestamp_ms: fps.timestamp_ms(*index),
            index: *index,
        });
    }
    let clip_id = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    Clip::new(clip_id, frames)
}

/// Writes every frame of `clip` as `frame_NNNN.pgm` into `dir`, numbering by position.
pub fn write_frame_directory(dir: &Path, frames: &[Frame]) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    for (i, frame) in frames.iter().enumerate() {
        std::fs::write(dir.join(frame_file_name(i)), frame.to_pgm())?;
    }
    Ok(())
}

/// BT.601 luma, rounded half up.
pub fn to_luma(r: u8, g: u8, b: u8) -> u8 {
    ((299 * r as u32 + 587 * g as u32 + 114 * b as u32 + 500) / 1000) as u8
}

/// Uniformly spaced frame indices: everything when `total <= n`, otherwise
/// `round(i * (total - 1) / (n - 1))` for `i in 0..n`.
pub fn frame_sampler(total: usize, n: usize) -> Result<Vec<usize>> {
    if n == 0 {
        return Err(Error::Argument("sample count must be at least 1".into()));
    }
    if total <= n {
        return Ok((0..total).collect());
    }
    if n == 1 {
        return Ok(vec![0]);
    }
    let span = (total - 1) as u128;
    let steps = (n - 1) as u128;
    Ok((0..n as u128)
        .map(|i| ((2 * i * span + steps) / (2 * steps)) as usize)
        .collect())
}

/// Box-mean downsampling by an integer factor. Remainder rows and columns are dropped.
pub fn downsample(frame: &Frame, factor: usize) -> Result<Frame> {
    if factor == 0 {
        return Err(Error::Argument("downsample factor must be at least 1".into()));
    }
    if factor > frame.width || factor > frame.height {
        return Err(Error::Argument(format!(
            "factor {factor} exceeds frame {}x{}",
            frame.width, frame.height
        )));
    }
    if factor == 1 {
        return Ok(frame.clone());
    }
    let (ow, oh) = (frame.width / factor, frame.height / factor);
    let area = (factor * factor) as u64;
    let mut luma = Vec::with_capacity(ow * oh);
    for oy in 0..oh {
        for ox in 0..ow {
            let mut sum = 0u64;
            for y in oy * factor..(oy + 1) * factor {
                let row = &frame.luma[y * frame.width + ox * factor..y * frame.width + (ox + 1) * factor];
                sum += row.iter().map(|&v| v as u64).sum::<u64>();
            }
            luma.push(((2 * sum + area) / (2 * area)) as u8);
        }
    }
    Ok(Frame {
        width: ow,
        height: oh,
        luma,
        timestamp_ms: frame.timestamp_ms,
        index: frame.index,
    })
}
