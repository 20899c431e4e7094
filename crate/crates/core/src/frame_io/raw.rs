//! Raw binary dumps.
//!
//! Luma dump: `"QLDM"`, `u32 width`, `u32 height` (little-endian), then
//! `width * height` bytes per frame until EOF.
//!
//! Depth map: `"QLDP"`, `u32 width`, `u32 height`, `u32 frame_index`, then
//! `width * height` depth bytes in `0..=4`. Records may be concatenated.

use std::io::{self, Read, Write};

use super::FrameBuffer;
use crate::neighborhood::DepthMap;
use crate::{Error, Result};

pub const LUMA_DUMP_MAGIC: &[u8; 4] = b"QLDM";
pub const DEPTHMAP_MAGIC: &[u8; 4] = b"QLDP";

fn read_u32<R: Read>(r: &mut R) -> io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Fills `buf` completely, or reports how many bytes were available.
fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub struct LumaDumpWriter<W: Write> {
    inner: W,
    width: usize,
    height: usize,
}

impl<W: Write> LumaDumpWriter<W> {
    pub fn new(mut inner: W, width: usize, height: usize) -> Result<Self> {
        inner.write_all(LUMA_DUMP_MAGIC)?;
        inner.write_all(&(width as u32).to_le_bytes())?;
        inner.write_all(&(height as u32).to_le_bytes())?;
        Ok(LumaDumpWriter { inner, width, height })
    }

    pub fn write_frame(&mut self, frame: &FrameBuffer) -> Result<()> {
        if (frame.width(), frame.height()) != (self.width, self.height) {
            return Err(Error::InvalidArgument("frame size differs from dump header".into()));
        }
        self.inner.write_all(frame.samples())?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}

pub struct LumaDumpReader<R: Read> {
    inner: R,
    width: usize,
    height: usize,
    index: usize,
}

impl<R: Read> LumaDumpReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        if read_full(&mut inner, &mut magic)? < 4 || &magic != LUMA_DUMP_MAGIC {
            return Err(Error::Parse { offset: 0, msg: "missing QLDM magic".into() });
        }
        let width = read_u32(&mut inner).map_err(|_| Error::Parse { offset: 4, msg: "short header".into() })?;
        let height = read_u32(&mut inner).map_err(|_| Error::Parse { offset: 8, msg: "short header".into() })?;
        if width == 0 || height == 0 {
            return Err(Error::Parse { offset: 4, msg: "zero dimension".into() });
        }
        Ok(LumaDumpReader { inner, width: width as usize, height: height as usize, index: 0 })
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }
}

impl<R: Read> Iterator for LumaDumpReader<R> {
    type Item = Result<FrameBuffer>;

    fn next(&mut self) -> Option<Self::Item> {
        let mut buf = vec![0u8; self.width * self.height];
        let n = match read_full(&mut self.inner, &mut buf) {
            Ok(n) => n,
            Err(e) => return Some(Err(e.into())),
        };
        let index = self.index;
        self.index += 1;
        match n {
            0 => None,
            n if n < buf.len() => Some(Err(Error::Truncated { frame: index })),
            _ => Some(FrameBuffer::new(self.width, self.height, buf)),
        }
    }
}

pub fn write_depthmap<W: Write>(w: &mut W, map: &DepthMap, frame_index: u32) -> Result<()> {
    w.write_all(DEPTHMAP_MAGIC)?;
    w.write_all(&(map.width() as u32).to_le_bytes())?;
    w.write_all(&(map.height() as u32).to_le_bytes())?;
    w.write_all(&frame_index.to_le_bytes())?;
    w.write_all(map.depths())?;
    Ok(())
}

/// Reads every depth-map record until EOF.
pub fn read_depthmaps<R: Read>(mut r: R) -> Result<Vec<(u32, DepthMap)>> {
    let mut out = Vec::new();
    let mut offset = 0u64;
    loop {
        let mut magic = [0u8; 4];
        match read_full(&mut r, &mut magic)? {
            0 => return Ok(out),
            4 if &magic == DEPTHMAP_MAGIC => {}
            _ => return Err(Error::Parse { offset, msg: "missing QLDP magic".into() }),
        }
        let short = |_| Error::Truncated { frame: out.len() };
        let width = read_u32(&mut r).map_err(short)? as usize;
        let height = read_u32(&mut r).map_err(short)? as usize;
        let index = read_u32(&mut r).map_err(short)?;
        let mut depths = vec![0u8; width * height];
        if read_full(&mut r, &mut depths)? < depths.len() {
            return Err(Error::Truncated { frame: out.len() });
        }
        let map = DepthMap::new(width, height, depths)
            .map_err(|e| Error::Parse { offset, msg: e.to_string() })?;
        offset += 16 + (width * height) as u64;
        out.push((index, map));
    }
}
