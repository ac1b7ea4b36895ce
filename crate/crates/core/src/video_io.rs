//! Raw planar YUV 4:2:0 ingest/egress and the internal 4:4:4 unit-interval
//! frame representation.
//!
//! Chroma is co-sited with the even luma positions: chroma sample `(i, j)`
//! sits on luma pixel `(2i, 2j)`. Upsampling is bilinear with edge clamping;
//! downsampling averages each 2x2 luma-resolution block.

use std::fs;
use std::io::BufWriter;
use std::path::Path;

use lvc_autodiff::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FrameKind {
    I,
    P,
    B,
}

impl FrameKind {
    pub fn letter(self) -> char {
        match self {
            FrameKind::I => 'I',
            FrameKind::P => 'P',
            FrameKind::B => 'B',
        }
    }
}

/// One 8-bit 4:2:0 picture.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawFrame {
    pub y: Vec<u8>,
    pub u: Vec<u8>,
    pub v: Vec<u8>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RawSequence {
    pub width: usize,
    pub height: usize,
    pub frames: Vec<RawFrame>,
}

impl RawSequence {
    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    pub fn frame_bytes(width: usize, height: usize) -> usize {
        width * height * 3 / 2
    }

    fn check_geometry(width: usize, height: usize) -> Result<()> {
        if width == 0 || height == 0 || width % 2 != 0 || height % 2 != 0 {
            return Err(Error::Geometry(format!(
                "4:2:0 needs even, nonzero dimensions, got {width}x{height}"
            )));
        }
        Ok(())
    }

    pub fn from_bytes(bytes: &[u8], width: usize, height: usize) -> Result<Self> {
        Self::check_geometry(width, height)?;
        let frame_len = Self::frame_bytes(width, height);
        if bytes.len() % frame_len != 0 {
            return Err(Error::Geometry(format!(
                "file holds {} bytes, not a multiple of the {frame_len}-byte {width}x{height} frame \
                 ({} whole frames would be {} bytes)",
                bytes.len(),
                bytes.len() / frame_len,
                bytes.len() / frame_len * frame_len
            )));
        }
        let luma = width * height;
        let chroma = luma / 4;
        let frames = bytes
            .chunks_exact(frame_len)
            .map(|chunk| RawFrame {
                y: chunk[..luma].to_vec(),
                u: chunk[luma..luma + chroma].to_vec(),
                v: chunk[luma + chroma..].to_vec(),
            })
            .collect();
        Ok(RawSequence {
            width,
            height,
            frames,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.frames.len() * Self::frame_bytes(self.width, self.height));
        for f in &self.frames {
            out.extend_from_slice(&f.y);
            out.extend_from_slice(&f.u);
            out.extend_from_slice(&f.v);
        }
        out
    }
}

/// A picture in the internal representation: `[1, 3, H, W]` YUV 4:4:4, values in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Frame {
    pub data: Tensor,
    pub index: usize,
    pub kind: Option<FrameKind>,
}

impl Frame {
    pub fn new(data: Tensor, index: usize) -> Self {
        Frame {
            data,
            index,
            kind: None,
        }
    }

    pub fn height(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.data.shape()[3]
    }
}

/// Reads an I420 file (Y, U, V planes per frame, no header).
pub fn load_yuv420(path: impl AsRef<Path>, width: usize, height: usize) -> Result<RawSequence> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    RawSequence::from_bytes(&bytes, width, height)
}

pub fn write_yuv420(path: impl AsRef<Path>, seq: &RawSequence) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, seq.to_bytes()).map_err(|e| Error::io(path, e))
}

/// Bilinear x2 upsampling of a co-sited chroma plane to `out_h x out_w`.
fn upsample_chroma(plane: &[u8], cw: usize, ch: usize, out_w: usize, out_h: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(out_w * out_h);
    for i in 0..out_h {
        let (y0, fy) = (i / 2, if i % 2 == 1 { 0.5 } else { 0.0 });
        let y1 = (y0 + 1).min(ch - 1);
        for j in 0..out_w {
            let (x0, fx) = (j / 2, if j % 2 == 1 { 0.5 } else { 0.0 });
            let x1 = (x0 + 1).min(cw - 1);
            let at = |y: usize, x: usize| plane[y * cw + x] as f64;
            let top = (1.0 - fx) * at(y0, x0) + fx * at(y0, x1);
            let bottom = (1.0 - fx) * at(y1, x0) + fx * at(y1, x1);
            out.push(((1.0 - fy) * top + fy * bottom) / 255.0);
        }
    }
    out
}

pub fn raw_frame_to_internal(raw: &RawFrame, width: usize, height: usize, index: usize) -> Frame {
    let (cw, ch) = (width / 2, height / 2);
    let mut data: Vec<f64> = raw.y.iter().map(|&v| v as f64 / 255.0).collect();
    data.extend(upsample_chroma(&raw.u, cw, ch, width, height));
    data.extend(upsample_chroma(&raw.v, cw, ch, width, height));
    Frame::new(Tensor::new([1, 3, height, width], data), index)
}

/// Converts every frame to 4:4:4 in `[0, 1]`.
pub fn to_internal(raw: &RawSequence) -> Vec<Frame> {
    raw.frames
        .iter()
        .enumerate()
        .map(|(i, f)| raw_frame_to_internal(f, raw.width, raw.height, i))
        .collect()
}

/// `round(v * 255)` with ties away from zero, clipped to `[0, 255]`.
pub fn quantize_8bit(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

pub fn frame_to_raw(frame: &Frame) -> Result<RawFrame> {
    let [n, c, h, w] = frame.data.shape();
    if n != 1 || c != 3 {
        return Err(Error::Geometry(format!("expected a [1, 3, H, W] frame, got {:?}", frame.data.shape())));
    }
    RawSequence::check_geometry(w, h)?;
    let d = frame.data.data();
    let plane = h * w;
    let y = d[..plane].iter().map(|&v| quantize_8bit(v)).collect();
    let pool = |offset: usize| -> Vec<u8> {
        let mut out = Vec::with_capacity(plane / 4);
        for i in (0..h).step_by(2) {
            for j in (0..w).step_by(2) {
                let at = |y: usize, x: usize| d[offset + y * w + x];
                let mean = (at(i, j) + at(i, j + 1) + at(i + 1, j) + at(i + 1, j + 1)) / 4.0;
                out.push(quantize_8bit(mean));
            }
        }
        out
    };
    Ok(RawFrame {
        y,
        u: pool(plane),
        v: pool(2 * plane),
    })
}

/// Converts internal frames back to 8-bit 4:2:0.
pub fn to_yuv420(frames: &[Frame]) -> Result<RawSequence> {
    let first = frames
        .first()
        .ok_or_else(|| Error::InvalidInput("no frames to convert".into()))?;
    let (height, width) = (first.height(), first.width());
    let frames = frames
        .iter()
        .map(|f| {
            if f.height() != height || f.width() != width {
                return Err(Error::Geometry("frames differ in size".into()));
            }
            frame_to_raw(f)
        })
        .collect::<Result<_>>()?;
    Ok(RawSequence {
        width,
        height,
        frames,
    })
}

/// Three consecutive frames cropped at one spatial offset.
#[derive(Clone, Debug, PartialEq)]
pub struct Crop {
    pub start: usize,
    pub top: usize,
    pub left: usize,
    pub frames: [Frame; 3],
}

/// Samples `count` random `size x size` crops of consecutive frame triples.
pub fn extract_crops(frames: &[Frame], size: usize, count: usize, seed: u64) -> Result<Vec<Crop>> {
    if frames.len() < 3 {
        return Err(Error::InvalidInput(format!(
            "need at least 3 frames for a training triple, got {}",
            frames.len()
        )));
    }
    let (h, w) = (frames[0].height(), frames[0].width());
    if size == 0 || size > h.min(w) {
        return Err(Error::Geometry(format!("crop size {size} does not fit {w}x{h} frames")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut crops = Vec::with_capacity(count);
    for _ in 0..count {
        let start = rng.gen_range(0..=frames.len() - 3);
        let top = rng.gen_range(0..=h - size);
        let left = rng.gen_range(0..=w - size);
        let cut = |k: usize| {
            let f = &frames[start + k];
            Frame::new(f.data.crop(top, left, size, size), f.index)
        };
        crops.push(Crop {
            start,
            top,
            left,
            frames: [cut(0), cut(1), cut(2)],
        });
    }
    Ok(crops)
}

/// Writes a `[1, 1, H, W]` (grayscale) or `[1, 3, H, W]` (RGB) tensor in
/// `[0, 1]` as an 8-bit PNG. Out-of-range values are clipped.
pub fn write_image(image: &Tensor, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let [n, c, h, w] = image.shape();
    let color = match (n, c) {
        (1, 1) => png::ColorType::Grayscale,
        (1, 3) => png::ColorType::Rgb,
        _ => {
            return Err(Error::Geometry(format!(
                "images must be [1, 1, H, W] or [1, 3, H, W], got {:?}",
                image.shape()
            )))
        }
    };
    let d = image.data();
    let plane = h * w;
    let mut pixels = Vec::with_capacity(plane * c);
    for p in 0..plane {
        for ch in 0..c {
            pixels.push(quantize_8bit(d[ch * plane + p]));
        }
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), w as u32, h as u32);
    encoder.set_color(color);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| Error::io(path, std::io::Error::other(e));
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(&pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

/// BT.601 full-range YUV (unit interval, chroma centered at 0.5) to RGB.
/// All-zero YUV renders green.
pub fn yuv_to_rgb(yuv: &Tensor) -> Tensor {
    let [n, c, h, w] = yuv.shape();
    assert_eq!(c, 3, "yuv_to_rgb needs 3 channels");
    let plane = h * w;
    let d = yuv.data();
    let mut out = vec![0.0; n * 3 * plane];
    for b in 0..n {
        let base = b * 3 * plane;
        for p in 0..plane {
            let y = d[base + p];
            let u = d[base + plane + p] - 0.5;
            let v = d[base + 2 * plane + p] - 0.5;
            out[base + p] = (y + 1.402 * v).clamp(0.0, 1.0);
            out[base + plane + p] = (y - 0.344_136 * u - 0.714_136 * v).clamp(0.0, 1.0);
            out[base + 2 * plane + p] = (y + 1.772 * u).clamp(0.0, 1.0);
        }
    }
    Tensor::new([n, 3, h, w], out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn raw_from_fn(w: usize, h: usize, n: usize, f: impl Fn(usize, usize) -> u8) -> Vec<u8> {
        let len = RawSequence::frame_bytes(w, h);
        (0..n * len).map(|i| f(i / len, i % len)).collect()
    }

    #[test]
    fn two_frame_4x4_parses() {
        let bytes = vec![0u8; 48];
        let seq = RawSequence::from_bytes(&bytes, 4, 4).unwrap();
        assert_eq!(seq.frame_count(), 2);
        assert!(seq.frames.iter().all(|f| f.y.iter().chain(&f.u).chain(&f.v).all(|&v| v == 0)));
    }

    #[test]
    fn non_divisible_size_is_rejected_with_counts() {
        let err = RawSequence::from_bytes(&[0u8; 49], 4, 4).unwrap_err();
        let msg = err.to_string();
        assert!(matches!(err, Error::Geometry(_)));
        assert!(msg.contains("49") && msg.contains("24"), "{msg}");
    }

    #[test]
    fn odd_geometry_is_rejected() {
        assert!(matches!(RawSequence::from_bytes(&[0u8; 30], 5, 4), Err(Error::Geometry(_))));
        assert!(matches!(RawSequence::from_bytes(&[0u8; 30], 4, 5), Err(Error::Geometry(_))));
    }

    #[test]
    fn load_reads_display_order() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.yuv");
        let bytes = raw_from_fn(4, 2, 3, |frame, _| frame as u8 * 10);
        fs::write(&path, &bytes).unwrap();
        let seq = load_yuv420(&path, 4, 2).unwrap();
        assert_eq!(seq.frames[2].y[0], 20);
        assert_eq!(seq.to_bytes(), bytes);
    }

    #[test]
    fn constant_chroma_upsamples_to_constant() {
        let bytes = raw_from_fn(6, 4, 1, |_, i| if i < 24 { 255 } else { 128 });
        let frames = to_internal(&RawSequence::from_bytes(&bytes, 6, 4).unwrap());
        let d = frames[0].data.data();
        assert!(d[..24].iter().all(|&v| v == 1.0));
        assert!(d[24..].iter().all(|&v| (v - 128.0 / 255.0).abs() < 1e-15));
    }

    #[test]
    fn chroma_ramp_matches_per_pixel_bilinear_oracle() {
        // U plane [[0, 255], [0, 255]] on a 4x4 frame
        let mut bytes = vec![0u8; 24];
        bytes[16..20].copy_from_slice(&[0, 255, 0, 255]);
        let frame = &to_internal(&RawSequence::from_bytes(&bytes, 4, 4).unwrap())[0];
        let chroma = [[0.0, 255.0], [0.0, 255.0]];
        // oracle: sample position (i/2, j/2) in chroma coordinates, clamped at the far edge
        let oracle = |i: usize, j: usize| -> f64 {
            let (sy, sx) = (i as f64 / 2.0, j as f64 / 2.0);
            let (y0, x0) = (sy.floor() as usize, sx.floor() as usize);
            let (y1, x1) = ((y0 + 1).min(1), (x0 + 1).min(1));
            let (ty, tx) = (sy - y0 as f64, sx - x0 as f64);
            let v = chroma[y0][x0] * (1.0 - ty) * (1.0 - tx)
                + chroma[y0][x1] * (1.0 - ty) * tx
                + chroma[y1][x0] * ty * (1.0 - tx)
                + chroma[y1][x1] * ty * tx;
            v / 255.0
        };
        for i in 0..4 {
            for j in 0..4 {
                assert!((frame.data.at([0, 1, i, j]) - oracle(i, j)).abs() < 1e-12);
            }
        }
        assert_eq!(frame.data.at([0, 1, 0, 1]), 0.5);
        assert_eq!(frame.data.at([0, 1, 2, 3]), 1.0);
    }

    #[test]
    fn half_gray_quantizes_up() {
        let f = Frame::new(Tensor::full([1, 3, 2, 2], 0.5), 0);
        let raw = frame_to_raw(&f).unwrap();
        assert!(raw.y.iter().chain(&raw.u).chain(&raw.v).all(|&v| v == 128));
    }

    #[test]
    fn constant_sequence_round_trips() {
        let bytes = raw_from_fn(8, 4, 2, |f, i| if i < 32 { 40 + f as u8 } else { 200 });
        let seq = RawSequence::from_bytes(&bytes, 8, 4).unwrap();
        assert_eq!(to_yuv420(&to_internal(&seq)).unwrap(), seq);
    }

    #[test]
    fn luma_round_trip_is_exact_for_any_sequence() {
        let bytes = raw_from_fn(8, 6, 2, |f, i| ((i * 37 + f * 11) % 256) as u8);
        let seq = RawSequence::from_bytes(&bytes, 8, 6).unwrap();
        let back = to_yuv420(&to_internal(&seq)).unwrap();
        for (a, b) in seq.frames.iter().zip(&back.frames) {
            assert_eq!(a.y, b.y);
        }
    }

    #[test]
    fn random_frame_round_trip_luma_error_is_half_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = Frame::new(Tensor::from_fn([1, 3, 8, 8], |_| rng.gen::<f64>()), 0);
        let seq = to_yuv420(std::slice::from_ref(&f)).unwrap();
        let back = &to_internal(&seq)[0];
        let luma_err = f.data.narrow_channels(0, 1).max_abs_diff(&back.data.narrow_channels(0, 1));
        assert!(luma_err <= 1.0 / 510.0 + 1e-12, "{luma_err}");
        // chroma is pooled then re-interpolated, so only a loose bound holds
        assert!(f.data.max_abs_diff(&back.data) <= 1.0);
    }

    #[test]
    fn crops_are_deterministic_and_in_bounds() {
        let frames: Vec<Frame> = (0..10)
            .map(|t| Frame::new(Tensor::from_fn([1, 3, 12, 16], |[_, c, y, x]| (t * 1000 + c * 100 + y * 16 + x) as f64), t))
            .collect();
        let a = extract_crops(&frames, 5, 100, 9).unwrap();
        let b = extract_crops(&frames, 5, 100, 9).unwrap();
        assert_eq!(a, b);
        for crop in &a {
            assert!(crop.start + 3 <= 10 && crop.top + 5 <= 12 && crop.left + 5 <= 16);
            for (k, f) in crop.frames.iter().enumerate() {
                assert_eq!(f.index, crop.start + k);
                assert_eq!(f.data, frames[crop.start + k].data.crop(crop.top, crop.left, 5, 5));
            }
        }
    }

    #[test]
    fn full_size_crop_is_the_original_triple() {
        let frames: Vec<Frame> = (0..3).map(|t| Frame::new(Tensor::full([1, 3, 4, 6], t as f64), t)).collect();
        let crops = extract_crops(&frames, 4, 2, 0).unwrap();
        let crops6 = extract_crops(&frames, 5, 1, 0).unwrap_err();
        assert!(matches!(crops6, Error::Geometry(_)));
        for c in crops {
            assert_eq!(c.start, 0);
            for k in 0..3 {
                assert_eq!(c.frames[k].data, frames[k].data.crop(0, c.left, 4, 4));
            }
        }
        assert!(extract_crops(&frames[..2], 2, 1, 0).is_err());
    }

    #[test]
    fn png_is_written_losslessly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gray.png");
        let img = Tensor::from_fn([1, 1, 3, 5], |[_, _, y, x]| (y * 5 + x) as f64 / 255.0);
        write_image(&img, &path).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(fs::File::open(&path).unwrap()));
        let mut reader = decoder.read_info().unwrap();
        let mut buf = vec![0; reader.output_buffer_size().unwrap()];
        let info = reader.next_frame(&mut buf).unwrap();
        assert_eq!((info.width, info.height), (5, 3));
        assert_eq!(&buf[..15], &(0..15).collect::<Vec<u8>>()[..]);
    }

    #[test]
    fn zero_yuv_renders_green() {
        let rgb = yuv_to_rgb(&Tensor::zeros([1, 3, 1, 1]));
        assert_eq!(rgb.at([0, 0, 0, 0]), 0.0);
        assert!(rgb.at([0, 1, 0, 0]) > 0.5);
        assert_eq!(rgb.at([0, 2, 0, 0]), 0.0);
    }
}
