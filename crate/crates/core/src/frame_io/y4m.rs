//! YUV4MPEG2 reading and writing (8-bit, 4:2:0 or monochrome).

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Seek, SeekFrom, Write};
use std::path::Path;

use super::{Dims, FrameBuffer, FrameSource, SequenceHeader};
use crate::{Error, Result};

const SIGNATURE: &[u8] = b"YUV4MPEG2";
const FRAME_TAG: &[u8] = b"FRAME";
const MAX_LINE: usize = 4096;

/// Chroma layout of a Y4M stream. Only the layouts we can carry are listed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Chroma {
    Yuv420,
    Mono,
}

impl Chroma {
    fn parse(tag: &str) -> Result<Self> {
        match tag {
            "420" | "420jpeg" | "420paldv" | "420mpeg2" => Ok(Chroma::Yuv420),
            "mono" => Ok(Chroma::Mono),
            other => Err(Error::UnsupportedFormat(format!("Y4M colorspace C{other}"))),
        }
    }

    fn chroma_bytes(self, dims: Dims) -> usize {
        match self {
            Chroma::Yuv420 => 2 * dims.width.div_ceil(2) * dims.height.div_ceil(2),
            Chroma::Mono => 0,
        }
    }

    fn tag(self) -> &'static str {
        match self {
            Chroma::Yuv420 => "420jpeg",
            Chroma::Mono => "mono",
        }
    }
}

/// Reads one `\n`-terminated line starting at `offset`. Returns the line
/// without the terminator, or `None` on clean EOF.
fn read_line<R: Read>(r: &mut R, offset: u64) -> Result<Option<Vec<u8>>> {
    let mut line = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        let n = r.read(&mut byte)?;
        if n == 0 {
            if line.is_empty() {
                return Ok(None);
            }
            return Err(Error::Parse {
                offset: offset + line.len() as u64,
                msg: "unterminated header line".into(),
            });
        }
        if byte[0] == b'\n' {
            return Ok(Some(line));
        }
        line.push(byte[0]);
        if line.len() > MAX_LINE {
            return Err(Error::Parse { offset, msg: "header line too long".into() });
        }
    }
}

struct StreamHeader {
    dims: Dims,
    chroma: Chroma,
    frame_rate: f64,
}

fn parse_stream_header(line: &[u8]) -> Result<StreamHeader> {
    if !line.starts_with(SIGNATURE) || !matches!(line.get(SIGNATURE.len()), None | Some(b' ')) {
        return Err(Error::Parse { offset: 0, msg: "missing YUV4MPEG2 signature".into() });
    }
    let text = std::str::from_utf8(line)
        .map_err(|e| Error::Parse { offset: e.valid_up_to() as u64, msg: "non-ASCII header".into() })?;
    let mut width = None;
    let mut height = None;
    let mut chroma = Chroma::Yuv420;
    let mut frame_rate = 0.0;

    let mut offset = SIGNATURE.len();
    for token in text[SIGNATURE.len()..].split(' ') {
        let here = offset as u64;
        offset += token.len() + 1;
        if token.is_empty() {
            continue;
        }
        let (key, value) = token.split_at(1);
        let bad = |what: &str| Error::Parse { offset: here, msg: format!("invalid {what} {token:?}") };
        match key {
            "W" => width = Some(value.parse::<usize>().map_err(|_| bad("width"))?),
            "H" => height = Some(value.parse::<usize>().map_err(|_| bad("height"))?),
            "F" => {
                let (n, d) = value.split_once(':').ok_or_else(|| bad("frame rate"))?;
                let n: f64 = n.parse().map_err(|_| bad("frame rate"))?;
                let d: f64 = d.parse().map_err(|_| bad("frame rate"))?;
                frame_rate = if d > 0.0 { n / d } else { 0.0 };
            }
            "C" => chroma = Chroma::parse(value)?,
            "I" => {
                if value != "p" && value != "?" {
                    return Err(Error::UnsupportedFormat(format!("interlacing I{value}")));
                }
            }
            "A" | "X" => {}
            _ => return Err(bad("header field")),
        }
    }
    let width = width.filter(|&w| w > 0).ok_or(Error::Parse { offset: 0, msg: "missing width".into() })?;
    let height =
        height.filter(|&h| h > 0).ok_or(Error::Parse { offset: 0, msg: "missing height".into() })?;
    Ok(StreamHeader { dims: Dims::new(width, height), chroma, frame_rate })
}

/// Frame-indexed Y4M reader. The whole stream is scanned when opened, so the
/// frame count is known up front and truncation is reported before decoding.
pub struct Y4mReader<R> {
    inner: R,
    header: SequenceHeader,
    chroma: Chroma,
    payload_offsets: Vec<u64>,
    next: usize,
}

impl<R: Read + Seek> Y4mReader<R> {
    pub fn new(mut inner: R) -> Result<Self> {
        let len = inner.seek(SeekFrom::End(0))?;
        inner.seek(SeekFrom::Start(0))?;
        if len == 0 {
            return Err(Error::Parse { offset: 0, msg: "empty stream".into() });
        }
        let line = read_line(&mut inner, 0)?
            .ok_or(Error::Parse { offset: 0, msg: "empty stream".into() })?;
        let stream = parse_stream_header(&line)?;
        let luma = stream.dims.area();
        let frame_bytes = (luma + stream.chroma.chroma_bytes(stream.dims)) as u64;

        let mut pos = line.len() as u64 + 1;
        let mut payload_offsets = Vec::new();
        loop {
            inner.seek(SeekFrom::Start(pos))?;
            let Some(tag) = read_line(&mut inner, pos).map_err(|e| match e {
                Error::Parse { .. } if pos + FRAME_TAG.len() as u64 > len => {
                    Error::Truncated { frame: payload_offsets.len() }
                }
                e => e,
            })?
            else {
                break;
            };
            if !tag.starts_with(FRAME_TAG) || !matches!(tag.get(FRAME_TAG.len()), None | Some(b' ')) {
                return Err(Error::Parse { offset: pos, msg: "expected FRAME marker".into() });
            }
            let payload = pos + tag.len() as u64 + 1;
            if payload + frame_bytes > len {
                return Err(Error::Truncated { frame: payload_offsets.len() });
            }
            payload_offsets.push(payload);
            pos = payload + frame_bytes;
        }
        if payload_offsets.is_empty() {
            return Err(Error::Parse { offset: pos, msg: "stream contains no frames".into() });
        }
        let header = SequenceHeader {
            width: stream.dims.width,
            height: stream.dims.height,
            frame_count: payload_offsets.len(),
            frame_rate: stream.frame_rate,
        };
        Ok(Y4mReader { inner, header, chroma: stream.chroma, payload_offsets, next: 0 })
    }

    pub fn header(&self) -> SequenceHeader {
        self.header
    }

    pub fn chroma(&self) -> Chroma {
        self.chroma
    }

    /// Decodes the luma plane of frame `index`.
    pub fn frame(&mut self, index: usize) -> Result<FrameBuffer> {
        let offset = *self
            .payload_offsets
            .get(index)
            .ok_or_else(|| Error::InvalidArgument(format!("frame {index} out of range")))?;
        self.inner.seek(SeekFrom::Start(offset))?;
        let mut samples = vec![0u8; self.header.width * self.header.height];
        self.inner.read_exact(&mut samples).map_err(|e| match e.kind() {
            std::io::ErrorKind::UnexpectedEof => Error::Truncated { frame: index },
            _ => Error::Io(e),
        })?;
        FrameBuffer::new(self.header.width, self.header.height, samples)
    }
}

impl<R: Read + Seek> Iterator for Y4mReader<R> {
    type Item = Result<FrameBuffer>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.payload_offsets.len() {
            return None;
        }
        let i = self.next;
        self.next += 1;
        Some(self.frame(i))
    }
}

impl<R: Read + Seek> FrameSource for Y4mReader<R> {
    fn header(&self) -> SequenceHeader {
        self.header
    }
}

/// Opens a Y4M file. Yields luma planes in display order.
pub fn read_y4m(path: impl AsRef<Path>) -> Result<(SequenceHeader, Y4mReader<BufReader<File>>)> {
    let reader = Y4mReader::new(BufReader::new(File::open(path)?))?;
    Ok((reader.header(), reader))
}

pub struct Y4mWriter<W: Write> {
    inner: W,
    dims: Dims,
    chroma: Chroma,
}

impl Y4mWriter<BufWriter<File>> {
    pub fn create(path: impl AsRef<Path>, dims: Dims, fps: (u32, u32), chroma: Chroma) -> Result<Self> {
        Y4mWriter::new(BufWriter::new(File::create(path)?), dims, fps, chroma)
    }
}

impl<W: Write> Y4mWriter<W> {
    pub fn new(mut inner: W, dims: Dims, fps: (u32, u32), chroma: Chroma) -> Result<Self> {
        writeln!(
            inner,
            "YUV4MPEG2 W{} H{} F{}:{} Ip A1:1 C{}",
            dims.width,
            dims.height,
            fps.0,
            fps.1,
            chroma.tag()
        )?;
        Ok(Y4mWriter { inner, dims, chroma })
    }

    /// Writes the luma plane; chroma planes, if any, are neutral grey.
    pub fn write_frame(&mut self, frame: &FrameBuffer) -> Result<()> {
        if frame.dims() != self.dims {
            return Err(Error::InvalidArgument(format!(
                "frame is {}, stream is {}",
                frame.dims(),
                self.dims
            )));
        }
        self.inner.write_all(b"FRAME\n")?;
        self.inner.write_all(frame.samples())?;
        let chroma = self.chroma.chroma_bytes(self.dims);
        if chroma > 0 {
            self.inner.write_all(&vec![128u8; chroma])?;
        }
        Ok(())
    }

    pub fn finish(mut self) -> Result<W> {
        self.inner.flush()?;
        Ok(self.inner)
    }
}
