//! Deterministic procedural luma clips.
//!
//! Frames mix smooth gradients, regions of multi-octave texture gated by a
//! slowly varying mask, panning, moving textured objects and sensor grain.
//! The mix gives the partition search both flat areas and detailed ones with
//! spatially coherent structure.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::frame_io::{Dims, FrameBuffer, FrameSource, SequenceHeader};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ClipPreset {
    /// Large flat floor, a textured band, several small movers.
    Court,
    /// Soft static background with one large slow object.
    Talking,
    /// Panning terrain with patchy fine texture.
    Landscape,
}

impl ClipPreset {
    pub const ALL: [ClipPreset; 3] = [ClipPreset::Court, ClipPreset::Talking, ClipPreset::Landscape];

    pub fn params(self) -> SynthParams {
        match self {
            ClipPreset::Court => SynthParams {
                base_scale: 220.0,
                base_range: (70.0, 150.0),
                detail_scale: 6.0,
                detail_amp: 38.0,
                mask_scale: 90.0,
                coverage: 0.35,
                band: Some((0.0, 0.22)),
                pan: (0.6, 0.0),
                objects: 6,
                object_size: (0.04, 0.09),
                object_speed: 3.0,
                grain: 1.5,
            },
            ClipPreset::Talking => SynthParams {
                base_scale: 160.0,
                base_range: (40.0, 180.0),
                detail_scale: 10.0,
                detail_amp: 22.0,
                mask_scale: 120.0,
                coverage: 0.3,
                band: None,
                pan: (0.0, 0.0),
                objects: 1,
                object_size: (0.25, 0.35),
                object_speed: 0.8,
                grain: 2.0,
            },
            ClipPreset::Landscape => SynthParams {
                base_scale: 140.0,
                base_range: (50.0, 200.0),
                detail_scale: 4.0,
                detail_amp: 45.0,
                mask_scale: 70.0,
                coverage: 0.5,
                band: None,
                pan: (1.5, 0.4),
                objects: 2,
                object_size: (0.06, 0.12),
                object_speed: 1.5,
                grain: 1.0,
            },
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            ClipPreset::Court => "court",
            ClipPreset::Talking => "talking",
            ClipPreset::Landscape => "landscape",
        }
    }
}

impl fmt::Display for ClipPreset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ClipPreset {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ClipPreset::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown clip preset {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    /// Feature size of the background gradient, in pixels.
    pub base_scale: f64,
    pub base_range: (f64, f64),
    /// Finest texture feature size, in pixels.
    pub detail_scale: f64,
    pub detail_amp: f64,
    /// Feature size of the texture mask.
    pub mask_scale: f64,
    /// Approximate fraction of the frame carrying texture.
    pub coverage: f64,
    /// Vertical band `(top, bottom)` as fractions of height that is always textured.
    pub band: Option<(f64, f64)>,
    /// Camera motion in pixels per frame.
    pub pan: (f64, f64),
    pub objects: usize,
    /// Object radius range as a fraction of the frame height.
    pub object_size: (f64, f64),
    pub object_speed: f64,
    pub grain: f64,
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn hash_unit(seed: u64, a: i64, b: i64) -> f64 {
    let h = splitmix(seed ^ splitmix((a as u64) ^ splitmix(b as u64)));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smooth(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Bilinear value noise in [0, 1) with lattice spacing `scale`.
fn value_noise(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let (u, v) = (x / scale, y / scale);
    let (i, j) = (u.floor(), v.floor());
    let (fx, fy) = (smooth(u - i), smooth(v - j));
    let (i, j) = (i as i64, j as i64);
    let a = hash_unit(seed, i, j);
    let b = hash_unit(seed, i + 1, j);
    let c = hash_unit(seed, i, j + 1);
    let d = hash_unit(seed, i + 1, j + 1);
    let top = a + (b - a) * fx;
    let bot = c + (d - c) * fx;
    top + (bot - top) * fy
}

/// Three octaves starting at `scale`, centered on zero, roughly in [-1, 1].
fn fractal(seed: u64, x: f64, y: f64, scale: f64) -> f64 {
    let mut sum = 0.0;
    let mut amp = 1.0;
    let mut s = scale;
    for octave in 0..3u64 {
        sum += amp * (value_noise(seed.wrapping_add(octave * 7919), x, y, s) - 0.5);
        amp *= 0.5;
        s *= 2.0;
    }
    sum * 8.0 / 7.0 * 2.0
}

#[derive(Debug, Clone, Copy)]
struct Mover {
    x: f64,
    y: f64,
    vx: f64,
    vy: f64,
    radius: f64,
    level: f64,
    seed: u64,
}

/// An in-memory procedural clip that yields frames on demand.
#[derive(Debug, Clone)]
pub struct SynthClip {
    dims: Dims,
    frame_count: usize,
    params: SynthParams,
    seed: u64,
    movers: Vec<Mover>,
    next: usize,
}

impl SynthClip {
    pub fn new(preset: ClipPreset, dims: Dims, frame_count: usize, seed: u64) -> Result<Self> {
        Self::with_params(preset.params(), dims, frame_count, seed)
    }

    pub fn with_params(params: SynthParams, dims: Dims, frame_count: usize, seed: u64) -> Result<Self> {
        if dims.width == 0 || dims.height == 0 {
            return Err(Error::InvalidArgument(format!("empty clip dimensions {dims}")));
        }
        let (w, h) = (dims.width as f64, dims.height as f64);
        let movers = (0..params.objects as i64)
            .map(|k| {
                let r = |n: i64| hash_unit(seed ^ 0x6f62_6a65_6374, k, n);
                let angle = r(2) * std::f64::consts::TAU;
                let (lo, hi) = params.object_size;
                Mover {
                    x: r(0) * w,
                    y: r(1) * h,
                    vx: angle.cos() * params.object_speed,
                    vy: angle.sin() * params.object_speed,
                    radius: (lo + (hi - lo) * r(3)) * h,
                    level: 30.0 + 200.0 * r(4),
                    seed: splitmix(seed.wrapping_add(k as u64)),
                }
            })
            .collect();
        Ok(SynthClip { dims, frame_count, params, seed, movers, next: 0 })
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn len(&self) -> usize {
        self.frame_count
    }

    pub fn is_empty(&self) -> bool {
        self.frame_count == 0
    }

    fn pixel(&self, t: f64, x: f64, y: f64) -> f64 {
        let p = &self.params;
        let (w, h) = (self.dims.width as f64, self.dims.height as f64);
        let (sx, sy) = (x + p.pan.0 * t, y + p.pan.1 * t);
        let base = value_noise(self.seed, sx, sy, p.base_scale);
        let mut v = p.base_range.0 + (p.base_range.1 - p.base_range.0) * base;

        let mask_raw = value_noise(self.seed ^ 0x6d61_736b, sx, sy, p.mask_scale);
        let mut mask = ((mask_raw - (1.0 - p.coverage)) * 6.0 + 0.5).clamp(0.0, 1.0);
        if let Some((top, bottom)) = p.band {
            if y >= top * h && y < bottom * h {
                mask = 1.0;
            }
        }
        if mask > 0.0 {
            v += mask * p.detail_amp * fractal(self.seed ^ 0x7465_7874, sx, sy, p.detail_scale * 4.0);
        }

        for m in &self.movers {
            let cx = (m.x + m.vx * t).rem_euclid(w + 2.0 * m.radius) - m.radius;
            let cy = (m.y + m.vy * t).rem_euclid(h + 2.0 * m.radius) - m.radius;
            let d = (x - cx).hypot(y - cy);
            if d < m.radius {
                let edge = ((m.radius - d) / 2.0).min(1.0);
                let tex = m.level + 0.6 * p.detail_amp * fractal(m.seed, x - cx, y - cy, p.detail_scale * 2.0);
                v = v + (tex - v) * edge;
            }
        }

        let g = hash_unit(self.seed ^ (t as u64).wrapping_mul(0x9e37), x as i64, y as i64) - 0.5;
        v + g * 2.0 * p.grain
    }

    /// Renders frame `index` without advancing the iterator.
    pub fn render(&self, index: usize) -> FrameBuffer {
        let (w, h) = (self.dims.width, self.dims.height);
        let t = index as f64;
        let mut samples = vec![0u8; w * h];
        samples.par_chunks_mut(w).enumerate().for_each(|(y, row)| {
            for (x, s) in row.iter_mut().enumerate() {
                *s = self.pixel(t, x as f64, y as f64).round().clamp(0.0, 255.0) as u8;
            }
        });
        FrameBuffer::new(w, h, samples).expect("dimensions checked at construction")
    }
}

impl Iterator for SynthClip {
    type Item = Result<FrameBuffer>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.frame_count {
            return None;
        }
        let frame = self.render(self.next);
        self.next += 1;
        Some(Ok(frame))
    }
}

impl FrameSource for SynthClip {
    fn header(&self) -> SequenceHeader {
        SequenceHeader {
            width: self.dims.width,
            height: self.dims.height,
            frame_count: self.frame_count,
            frame_rate: 30.0,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic() {
        let d = Dims::new(96, 64);
        let a = SynthClip::new(ClipPreset::Court, d, 3, 11).unwrap();
        let b = SynthClip::new(ClipPreset::Court, d, 3, 11).unwrap();
        assert_eq!(a.render(2).samples(), b.render(2).samples());
        let c = SynthClip::new(ClipPreset::Court, d, 3, 12).unwrap();
        assert_ne!(a.render(2).samples(), c.render(2).samples());
    }

    #[test]
    fn yields_frame_count() {
        let clip = SynthClip::new(ClipPreset::Landscape, Dims::new(40, 30), 4, 0).unwrap();
        assert_eq!(clip.header().frame_count, 4);
        let frames: Vec<_> = clip.collect::<Result<_>>().unwrap();
        assert_eq!(frames.len(), 4);
        assert!(frames.iter().all(|f| f.width() == 40 && f.height() == 30));
    }

    #[test]
    fn frames_differ_over_time() {
        let clip = SynthClip::new(ClipPreset::Landscape, Dims::new(64, 64), 2, 3).unwrap();
        assert_ne!(clip.render(0).samples(), clip.render(1).samples());
    }

    #[test]
    fn preset_names() {
        for p in ClipPreset::ALL {
            assert_eq!(p.name().parse::<ClipPreset>().unwrap(), p);
        }
        assert!("nope".parse::<ClipPreset>().is_err());
    }

    #[test]
    fn noise_in_range() {
        for k in 0..200 {
            let v = value_noise(5, k as f64 * 1.7, k as f64 * 0.3, 8.0);
            assert!((0.0..1.0).contains(&v));
        }
    }
}
