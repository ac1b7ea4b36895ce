//! Bitstream container.
//!
//! ```text
//! header : "LVCB" | version u8 | mode u8 | gop_size u8 | gops u32 | width u32
//!          | height u32 | features u32 | lambda f64 | model sha256 [32] | chunks u32
//! chunk  : len u32 | MOFNet stream (z then y) | len u32 | CodecNet stream (z then y)
//! ```
//! All integers are little-endian. Chunks follow coding order; I-frames carry
//! an empty MOFNet stream.

use lvc_autodiff::Var;

use super::schedule::{CodingConfig, CodingMode};
use super::{code_sequence, FrameResult, SequenceIo};
use crate::error::{Error, Result};
use crate::nets::Model;
use crate::video_io::Frame;

pub const MAGIC: [u8; 4] = *b"LVCB";
pub const VERSION: u8 = 1;
const HEADER_LEN: usize = 4 + 1 + 1 + 1 + 4 * 4 + 8 + 32 + 4;

#[derive(Clone, Debug, PartialEq)]
pub struct StreamHeader {
    pub config: CodingConfig,
    pub width: usize,
    pub height: usize,
    pub features: usize,
    pub fingerprint: [u8; 32],
}

pub type Chunk = (Vec<u8>, Vec<u8>);

fn header_err(reason: impl Into<String>) -> Error {
    Error::InvalidInput(format!("bad bitstream header: {}", reason.into()))
}

pub fn write_stream(header: &StreamHeader, chunks: &[Chunk]) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + chunks.iter().map(|(m, c)| m.len() + c.len() + 8).sum::<usize>());
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    out.push(header.config.mode.code());
    out.push(header.config.gop_size as u8);
    for v in [header.config.gops, header.width, header.height, header.features] {
        out.extend_from_slice(&(v as u32).to_le_bytes());
    }
    out.extend_from_slice(&header.config.lambda.to_le_bytes());
    out.extend_from_slice(&header.fingerprint);
    out.extend_from_slice(&(chunks.len() as u32).to_le_bytes());
    for (m, c) in chunks {
        for part in [m, c] {
            out.extend_from_slice(&(part.len() as u32).to_le_bytes());
            out.extend_from_slice(part);
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Option<&'a [u8]> {
        let s = self.bytes.get(self.pos..self.pos.checked_add(n)?)?;
        self.pos += n;
        Some(s)
    }

    fn u32(&mut self) -> Option<usize> {
        Some(u32::from_le_bytes(self.take(4)?.try_into().ok()?) as usize)
    }
}

pub fn read_stream(bytes: &[u8]) -> Result<(StreamHeader, Vec<Chunk>)> {
    if bytes.len() < HEADER_LEN {
        return Err(header_err(format!("{} bytes is shorter than the {HEADER_LEN}-byte header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(header_err("wrong magic number"));
    }
    if bytes[4] != VERSION {
        return Err(header_err(format!("unsupported version {} (expected {VERSION})", bytes[4])));
    }
    let mode = CodingMode::from_code(bytes[5]).ok_or_else(|| header_err(format!("unknown mode {}", bytes[5])))?;
    let gop_size = bytes[6] as usize;
    let mut r = Reader { bytes, pos: 7 };
    let gops = r.u32().unwrap();
    let width = r.u32().unwrap();
    let height = r.u32().unwrap();
    let features = r.u32().unwrap();
    let lambda = f64::from_le_bytes(r.take(8).unwrap().try_into().unwrap());
    let fingerprint: [u8; 32] = r.take(32).unwrap().try_into().unwrap();
    let count = r.u32().unwrap();
    let config = CodingConfig {
        mode,
        gop_size,
        gops,
        lambda,
    };
    config.validate()?;
    if width == 0 || height == 0 {
        return Err(header_err("empty frame geometry"));
    }
    let mut chunks = Vec::with_capacity(count.min(1 << 16));
    for chunk in 0..count {
        let mut part = || -> Option<Vec<u8>> {
            let n = r.u32()?;
            Some(r.take(n)?.to_vec())
        };
        let truncated = |what: &str| Error::Bitstream {
            chunk,
            reason: format!("truncated {what} stream"),
        };
        let m = part().ok_or_else(|| truncated("MOFNet"))?;
        let c = part().ok_or_else(|| truncated("CodecNet"))?;
        chunks.push((m, c));
    }
    if r.pos != bytes.len() {
        return Err(Error::Bitstream {
            chunk: count,
            reason: format!("{} trailing bytes", bytes.len() - r.pos),
        });
    }
    let header = StreamHeader {
        config,
        width,
        height,
        features,
        fingerprint,
    };
    Ok((header, chunks))
}

/// Encodes `frames` (display order) and returns the container plus the
/// encoder-side results in coding order.
pub fn encode_sequence(model: &Model, frames: &[Frame], config: &CodingConfig) -> Result<(Vec<u8>, Vec<FrameResult>)> {
    let first = frames.first().ok_or_else(|| Error::InvalidInput("no frames to code".into()))?;
    let (h, w) = (first.height(), first.width());
    let vars: Vec<Option<Var>> = frames.iter().map(|f| Some(Var::constant(f.data.clone()))).collect();
    let mut chunks = Vec::new();
    let ctx = model.eval_ctx();
    let results = code_sequence(model, &ctx, &vars, (1, h, w), config, SequenceIo::Encode(&mut chunks))?;
    let header = StreamHeader {
        config: *config,
        width: w,
        height: h,
        features: model.config.features,
        fingerprint: model.fingerprint(),
    };
    Ok((write_stream(&header, &chunks), results))
}

/// Decodes a container produced by [`encode_sequence`] with the same model.
pub fn decode_sequence(model: &Model, bytes: &[u8]) -> Result<(StreamHeader, Vec<FrameResult>)> {
    let (header, chunks) = read_stream(bytes)?;
    let ours = model.fingerprint();
    if header.fingerprint != ours || header.features != model.config.features {
        return Err(Error::CheckpointMismatch {
            expected: hex::encode(header.fingerprint),
            found: hex::encode(ours),
        });
    }
    let frames = vec![None; header.config.frame_count()];
    let ctx = model.eval_ctx();
    let size = (1, header.height, header.width);
    let results = code_sequence(model, &ctx, &frames, size, &header.config, SequenceIo::Decode(&chunks))?;
    if chunks.len() != results.len() {
        return Err(Error::Bitstream {
            chunk: results.len(),
            reason: format!("{} chunks for {} frames", chunks.len(), results.len()),
        });
    }
    Ok((header, results))
}

/// Decoded frames in display order, clipped for export.
pub fn display_order(results: &[FrameResult]) -> Vec<Frame> {
    let mut frames: Vec<Frame> = results
        .iter()
        .map(|r| {
            let mut f = Frame::new(r.clipped(), r.index);
            f.kind = Some(r.kind);
            f
        })
        .collect();
    frames.sort_by_key(|f| f.index);
    frames
}
