//! Luma frame ingest and persistence.
//!
//! Everything downstream works on a single 8-bit luma plane; chroma is dropped
//! at the reader.

mod raw;
mod scale;
mod y4m;

pub use raw::{
    read_depthmaps, write_depthmap, LumaDumpReader, LumaDumpWriter, DEPTHMAP_MAGIC, LUMA_DUMP_MAGIC,
};
pub use scale::downscale;
pub use y4m::{read_y4m, Chroma, Y4mReader, Y4mWriter};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Superblock edge length in pixels.
pub const SUPERBLOCK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Dims {
    pub width: usize,
    pub height: usize,
}

impl Dims {
    pub const fn new(width: usize, height: usize) -> Self {
        Dims { width, height }
    }

    pub fn area(&self) -> usize {
        self.width * self.height
    }

    /// Dimensions rounded up to whole superblocks.
    pub fn padded(&self) -> Dims {
        Dims::new(
            self.width.div_ceil(SUPERBLOCK).max(1) * SUPERBLOCK,
            self.height.div_ceil(SUPERBLOCK).max(1) * SUPERBLOCK,
        )
    }
}

impl std::fmt::Display for Dims {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}", self.width, self.height)
    }
}

impl std::str::FromStr for Dims {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || Error::InvalidArgument(format!("expected WxH, got {s:?}"));
        let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
        let width: usize = w.trim().parse().map_err(|_| bad())?;
        let height: usize = h.trim().parse().map_err(|_| bad())?;
        if width == 0 || height == 0 {
            return Err(bad());
        }
        Ok(Dims::new(width, height))
    }
}

/// A single-plane 8-bit luma raster, row-major.
#[derive(Clone, PartialEq, Eq)]
pub struct FrameBuffer {
    width: usize,
    height: usize,
    samples: Vec<u8>,
}

impl std::fmt::Debug for FrameBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FrameBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .finish_non_exhaustive()
    }
}

impl FrameBuffer {
    pub fn new(width: usize, height: usize, samples: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidArgument(format!(
                "frame dimensions must be positive, got {width}x{height}"
            )));
        }
        if samples.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "expected {} samples for {width}x{height}, got {}",
                width * height,
                samples.len()
            )));
        }
        Ok(FrameBuffer { width, height, samples })
    }

    pub fn filled(width: usize, height: usize, value: u8) -> Self {
        assert!(width > 0 && height > 0);
        FrameBuffer { width, height, samples: vec![value; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> u8) -> Self {
        assert!(width > 0 && height > 0);
        let mut samples = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                samples.push(f(x, y));
            }
        }
        FrameBuffer { width, height, samples }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn samples(&self) -> &[u8] {
        &self.samples
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.samples[y * self.width + x]
    }

    pub fn row(&self, y: usize) -> &[u8] {
        &self.samples[y * self.width..(y + 1) * self.width]
    }

    pub fn into_samples(self) -> Vec<u8> {
        self.samples
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SequenceHeader {
    pub width: usize,
    pub height: usize,
    pub frame_count: usize,
    /// Informational only.
    pub frame_rate: f64,
}

impl SequenceHeader {
    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }
}

/// A sequential supplier of luma frames with known geometry.
pub trait FrameSource: Iterator<Item = Result<FrameBuffer>> {
    fn header(&self) -> SequenceHeader;
}

/// Extends the frame to whole 64x64 superblocks by replicating the last
/// column and row.
pub fn pad_to_superblocks(frame: &FrameBuffer) -> FrameBuffer {
    let padded = frame.dims().padded();
    if padded == frame.dims() {
        return frame.clone();
    }
    let (w, h) = (frame.width, frame.height);
    let mut samples = Vec::with_capacity(padded.area());
    for y in 0..padded.height {
        let src = frame.row(y.min(h - 1));
        samples.extend_from_slice(src);
        samples.resize(samples.len() + padded.width - w, src[w - 1]);
    }
    FrameBuffer { width: padded.width, height: padded.height, samples }
}

/// Converts a source frame into the padded luma plane for one ladder rung.
pub fn prepare_rung(frame: &FrameBuffer, target: Dims) -> Result<FrameBuffer> {
    let scaled = if frame.dims() == target {
        frame.clone()
    } else {
        downscale(frame, target.width, target.height)?
    };
    Ok(pad_to_superblocks(&scaled))
}
