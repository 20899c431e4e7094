//! Co-located neighborhood estimator over a low-resolution depth map.
//!
//! For a high-resolution square of depth `d`, the block is mapped into the
//! low-resolution frame, grown by a margin on every side, and the estimator is
//! the area-weighted fraction of that region whose depth is at least `d + 1`.
//! Integration is per pixel, so a partially covered block contributes exactly
//! its covered area.

use serde::{Deserialize, Serialize};

use crate::frame_io::Dims;
use crate::rdo::{BlockRect, MAX_DEPTH};
use crate::{Error, Result};

/// Rasterized leaf depths of one frame.
#[derive(Clone, PartialEq, Eq)]
pub struct DepthMap {
    width: usize,
    height: usize,
    depths: Vec<u8>,
}

impl std::fmt::Debug for DepthMap {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DepthMap").field("width", &self.width).field("height", &self.height).finish()
    }
}

impl DepthMap {
    pub fn new(width: usize, height: usize, depths: Vec<u8>) -> Result<Self> {
        if depths.len() != width * height {
            return Err(Error::InvalidArgument(format!(
                "depth map {width}x{height} needs {} values, got {}",
                width * height,
                depths.len()
            )));
        }
        if let Some(bad) = depths.iter().find(|&&d| d > MAX_DEPTH) {
            return Err(Error::InvalidArgument(format!("depth value {bad} out of range")));
        }
        Ok(DepthMap { width, height, depths })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        DepthMap { width, height, depths: vec![0; width * height] }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    pub fn depths(&self) -> &[u8] {
        &self.depths
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.depths[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, depth: u8) {
        assert!(depth <= MAX_DEPTH);
        self.depths[y * self.width + x] = depth;
    }

    /// Writes `depth` over `rect`, clipped to the map.
    pub fn fill_rect(&mut self, rect: &BlockRect, depth: u8) {
        assert!(depth <= MAX_DEPTH);
        let x1 = (rect.x + rect.w).min(self.width);
        let y1 = (rect.y + rect.h).min(self.height);
        for y in rect.y.min(y1)..y1 {
            self.depths[y * self.width + rect.x.min(x1)..y * self.width + x1].fill(depth);
        }
    }
}

/// Margin grid: multiples of 8 in `[8, 128]`, with 0 meaning "the block itself".
pub const MARGIN_STEP: usize = 8;
pub const MAX_MARGIN: usize = 128;
/// Number of distinct margins including 0.
pub const MARGIN_SLOTS: usize = MAX_MARGIN / MARGIN_STEP + 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NeighborhoodSpec {
    /// Expansion in low-resolution pixels on every side.
    pub margin: usize,
    /// Depth `d` of the block being predicted, `0..=3`.
    pub depth: u8,
}

impl NeighborhoodSpec {
    pub fn new(margin: usize, depth: u8) -> Result<Self> {
        if !margin.is_multiple_of(MARGIN_STEP) || margin > MAX_MARGIN {
            return Err(Error::InvalidArgument(format!(
                "margin {margin} is not 0 or a multiple of {MARGIN_STEP} up to {MAX_MARGIN}"
            )));
        }
        if depth >= MAX_DEPTH {
            return Err(Error::InvalidArgument(format!("depth {depth} has no split to predict")));
        }
        Ok(NeighborhoodSpec { margin, depth })
    }

    pub fn margin_slot(&self) -> usize {
        self.margin / MARGIN_STEP
    }
}

/// Axis-aligned rectangle with real-valued edges, `[x0, x1) x [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegionF {
    pub x0: f64,
    pub y0: f64,
    pub x1: f64,
    pub y1: f64,
}

impl RegionF {
    pub fn from_xywh(x: f64, y: f64, w: f64, h: f64) -> Self {
        RegionF { x0: x, y0: y, x1: x + w, y1: y + h }
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width().max(0.0) * self.height().max(0.0)
    }

    pub fn expand(&self, by: f64) -> Self {
        RegionF { x0: self.x0 - by, y0: self.y0 - by, x1: self.x1 + by, y1: self.y1 + by }
    }

    pub fn clip(&self, bounds: Dims) -> Self {
        let (w, h) = (bounds.width as f64, bounds.height as f64);
        RegionF {
            x0: self.x0.clamp(0.0, w),
            y0: self.y0.clamp(0.0, h),
            x1: self.x1.clamp(0.0, w),
            y1: self.y1.clamp(0.0, h),
        }
    }
}

/// Maps a high-resolution block into low-resolution coordinates, clipped to
/// the low-resolution frame.
pub fn colocate(rect: &BlockRect, hi: Dims, lo: Dims) -> RegionF {
    colocate_within(rect, hi, lo, lo)
}

/// As [`colocate`], scaling by `lo / hi` but clipping to `bounds` (e.g. the
/// padded low-resolution depth map).
pub fn colocate_within(rect: &BlockRect, hi: Dims, lo: Dims, bounds: Dims) -> RegionF {
    let sx = |v: usize| (v * lo.width) as f64 / hi.width as f64;
    let sy = |v: usize| (v * lo.height) as f64 / hi.height as f64;
    RegionF { x0: sx(rect.x), y0: sy(rect.y), x1: sx(rect.x + rect.w), y1: sy(rect.y + rect.h) }
        .clip(bounds)
}

/// Summed-area tables of the split indicators `depth >= d + 1` for
/// `d = 0..=3`, answering fractional-rectangle means in O(1).
pub struct DepthIndex {
    width: usize,
    height: usize,
    tables: [Vec<u32>; MAX_DEPTH as usize],
}

impl DepthIndex {
    pub fn new(map: &DepthMap) -> Self {
        let (w, h) = (map.width, map.height);
        let stride = w + 1;
        let tables = std::array::from_fn(|d| {
            let threshold = d as u8 + 1;
            let mut t = vec![0u32; stride * (h + 1)];
            for y in 0..h {
                let mut run = 0u32;
                for x in 0..w {
                    run += (map.get(x, y) >= threshold) as u32;
                    t[(y + 1) * stride + x + 1] = t[y * stride + x + 1] + run;
                }
            }
            t
        });
        DepthIndex { width: w, height: h, tables }
    }

    pub fn dims(&self) -> Dims {
        Dims::new(self.width, self.height)
    }

    /// Integral of the indicator over `[0, x) x [0, y)`: the bilinear
    /// interpolant of the integer summed-area table.
    fn integral(&self, table: &[u32], x: f64, y: f64) -> f64 {
        let stride = self.width + 1;
        let i = (x.floor() as usize).min(self.width.saturating_sub(1));
        let j = (y.floor() as usize).min(self.height.saturating_sub(1));
        let fx = x - i as f64;
        let fy = y - j as f64;
        let s = |ii: usize, jj: usize| table[jj * stride + ii] as f64;
        let top = s(i, j) + fx * (s(i + 1, j) - s(i, j));
        let bottom = s(i, j + 1) + fx * (s(i + 1, j + 1) - s(i, j + 1));
        top + fy * (bottom - top)
    }

    /// Area-weighted split fraction over `region` grown by `spec.margin`.
    pub fn mean(&self, region: &RegionF, spec: &NeighborhoodSpec) -> Result<f64> {
        let r = region.expand(spec.margin as f64).clip(self.dims());
        let area = r.area();
        if area <= 0.0 {
            return Err(Error::DegenerateRegion);
        }
        let t = &self.tables[spec.depth as usize];
        let sum = self.integral(t, r.x1, r.y1) - self.integral(t, r.x0, r.y1) - self.integral(t, r.x1, r.y0)
            + self.integral(t, r.x0, r.y0);
        Ok((sum / area).clamp(0.0, 1.0))
    }
}

/// Estimator value for one region; see [`DepthIndex::mean`] for repeated queries.
pub fn neighborhood_mean(map: &DepthMap, region: &RegionF, spec: &NeighborhoodSpec) -> Result<f64> {
    DepthIndex::new(map).mean(region, spec)
}


/// Geometry of a two-rung ladder: original (unpadded) high and low resolutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ladder {
    pub hi: Dims,
    pub lo: Dims,
}

impl Ladder {
    pub fn new(hi: Dims, lo: Dims) -> Result<Self> {
        if lo.width > hi.width || lo.height > hi.height || lo.area() == 0 {
            return Err(Error::InvalidArgument(format!("low rung {lo} must not exceed high rung {hi}")));
        }
        Ok(Ladder { hi, lo })
    }

    /// Co-located region of a high-resolution block inside a padded
    /// low-resolution map of size `map_dims`.
    pub fn colocate(&self, rect: &BlockRect, map_dims: Dims) -> RegionF {
        colocate_within(rect, self.hi, self.lo, map_dims)
    }
}
