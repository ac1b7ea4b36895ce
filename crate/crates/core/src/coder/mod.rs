//! Per-frame I/P/B coding and sequence-level orchestration.

pub mod bitstream;
pub mod report;
pub mod schedule;

use std::collections::HashMap;

use lvc_autodiff::{Tensor, Var};

pub use self::schedule::{build_schedule, training_schedule, CodingConfig, CodingMode, ScheduleEntry};
use crate::entropy::{EntropyModel, Latents};
use crate::error::{Error, Result};
use crate::motion::{blend, warp};
use crate::nets::mofnet::SENT_STRIDE;
use crate::nets::{Ctx, Model};
use crate::video_io::FrameKind;

/// Diagnostic overrides applied after MOFNet synthesis.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Overrides {
    pub alpha: Option<f64>,
    pub beta: Option<f64>,
    /// Skip CodecNet entirely: `x_hat = (1 - alpha) * prediction`, no CodecNet rate.
    pub bypass_codec: bool,
}

/// Which latent group is being coded.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Group {
    Mofnet,
    Codecnet,
}

/// Where quantized latents come from: the analysis transform (with rate
/// estimates or actual entropy coding) or a received bitstream.
pub trait LatentIo {
    /// Whether this side runs the analysis transforms (false on the decoder).
    fn has_source(&self) -> bool {
        true
    }

    /// Produces the latents of `group`. `y` is `None` exactly when
    /// [`LatentIo::has_source`] is false; `(h, w)` is the latent grid.
    fn latents(&mut self, group: Group, em: &EntropyModel, ctx: &Ctx, y: Option<Var>, h: usize, w: usize)
        -> Result<Latents>;
}

/// Rate estimation only (training and analysis).
pub struct Estimate;

impl LatentIo for Estimate {
    fn latents(&mut self, _: Group, em: &EntropyModel, ctx: &Ctx, y: Option<Var>, _: usize, _: usize) -> Result<Latents> {
        em.forward(ctx, &y.expect("estimation needs the analysis output"))
    }
}

/// Entropy-codes the latents of one frame.
#[derive(Default)]
pub struct EncodeSink {
    pub mofnet: Vec<u8>,
    pub codecnet: Vec<u8>,
}

impl LatentIo for EncodeSink {
    fn latents(&mut self, group: Group, em: &EntropyModel, ctx: &Ctx, y: Option<Var>, _: usize, _: usize) -> Result<Latents> {
        let (bytes, lat) = em.encode(ctx, &y.expect("encoding needs the analysis output"))?;
        match group {
            Group::Mofnet => self.mofnet = bytes,
            Group::Codecnet => self.codecnet = bytes,
        }
        Ok(lat)
    }
}

/// Reads the latents of one frame from its two sub-streams.
pub struct DecodeSource<'a> {
    pub mofnet: &'a [u8],
    pub codecnet: &'a [u8],
}

impl LatentIo for DecodeSource<'_> {
    fn has_source(&self) -> bool {
        false
    }

    fn latents(&mut self, group: Group, em: &EntropyModel, ctx: &Ctx, _: Option<Var>, h: usize, w: usize) -> Result<Latents> {
        let stream = match group {
            Group::Mofnet => self.mofnet,
            Group::Codecnet => self.codecnet,
        };
        em.decode(ctx, stream, h, w)
    }
}

/// Latents of one group plus the shortcut latents they were synthesized with.
#[derive(Clone, Debug)]
pub struct LatentGroup {
    pub latents: Latents,
    pub shortcut: Var,
}

/// Everything produced while coding one frame. Maps are at frame size;
/// latents are on the padded grid.
#[derive(Clone, Debug)]
pub struct FrameResult {
    pub index: usize,
    pub kind: FrameKind,
    /// Decoded frame, not clipped.
    pub x_hat: Var,
    /// Temporal prediction (zero for I-frames).
    pub prediction: Var,
    pub alpha: Var,
    pub beta: Var,
    pub v_p: Var,
    pub v_f: Var,
    pub skip_part: Var,
    pub codec_part: Var,
    pub mofnet: Option<LatentGroup>,
    pub codecnet: Option<LatentGroup>,
    /// Estimated bits, summed over the batch.
    pub bits_m: Var,
    pub bits_c: Var,
    /// Actual sub-stream sizes in bytes when a bitstream was produced.
    pub coded_bytes: Option<(usize, usize)>,
    /// Geometry after reflect padding.
    pub padded: (usize, usize),
}

impl FrameResult {
    pub fn rate_m(&self) -> f64 {
        self.bits_m.value().item()
    }

    pub fn rate_c(&self) -> f64 {
        self.bits_c.value().item()
    }

    /// Total bits: coded sizes when available, estimates otherwise.
    pub fn bits(&self) -> f64 {
        match self.coded_bytes {
            Some((m, c)) => ((m + c) * 8) as f64,
            None => self.rate_m() + self.rate_c(),
        }
    }

    /// Decoded frame clipped to `[0, 1]`, as used for metrics and export.
    pub fn clipped(&self) -> Tensor {
        self.x_hat.value().map(|v| v.clamp(0.0, 1.0))
    }
}

/// Reference frames available to the frame being coded.
#[derive(Clone, Copy, Debug, Default)]
pub struct Refs<'a> {
    pub past: Option<&'a Var>,
    pub future: Option<&'a Var>,
}

fn padded_size(n: usize) -> usize {
    n.div_ceil(SENT_STRIDE) * SENT_STRIDE
}

fn pad(x: &Var) -> Var {
    let [_, _, h, w] = x.shape();
    x.pad_reflect(padded_size(h) - h, padded_size(w) - w)
}

fn crop(x: &Var, h: usize, w: usize) -> Var {
    x.crop(0, 0, h, w)
}

fn constant_map(shape: [usize; 4], v: f64) -> Var {
    Var::constant(Tensor::full(shape, v))
}

/// Codes one frame. `x` is the original (required unless `io` is a
/// decoder); `size` is the frame geometry `(batch, H, W)`.
#[allow(clippy::too_many_arguments)]
pub fn code_frame(
    model: &Model,
    ctx: &Ctx,
    entry: &ScheduleEntry,
    x: Option<&Var>,
    refs: Refs,
    size: (usize, usize, usize),
    overrides: Overrides,
    io: &mut dyn LatentIo,
) -> Result<FrameResult> {
    let (n, h, w) = size;
    let (hp, wp) = (padded_size(h), padded_size(w));
    let (lh, lw) = (hp / SENT_STRIDE, wp / SENT_STRIDE);
    if io.has_source() != x.is_some() {
        return Err(Error::InvalidInput("the original frame must be given exactly when encoding".into()));
    }
    let check = |v: &Var, what: &str| -> Result<()> {
        if v.shape() != [n, 3, h, w] {
            return Err(Error::Geometry(format!("{what} is {:?}, expected {:?}", v.shape(), [n, 3, h, w])));
        }
        Ok(())
    };
    if let Some(x) = x {
        check(x, "frame")?;
    }
    let xp = x.map(pad);
    let f = model.config.features;
    let map1 = [n, 1, h, w];

    // Motion part: prediction, weights and MOFNet rate.
    let (prediction, alpha, beta, v_p, v_f, mofnet) = match entry.kind {
        FrameKind::I => (
            constant_map([n, 3, hp, wp], 0.0),
            constant_map([n, 1, hp, wp], 1.0),
            constant_map(map1, 1.0),
            constant_map([n, 2, h, w], 0.0),
            constant_map([n, 2, h, w], 0.0),
            None,
        ),
        FrameKind::P | FrameKind::B => {
            let past = refs.past.ok_or_else(|| Error::InvalidInput(format!("frame {} lacks its past reference", entry.index)))?;
            check(past, "past reference")?;
            let future = match entry.kind {
                FrameKind::B => {
                    let fut = refs
                        .future
                        .ok_or_else(|| Error::InvalidInput(format!("frame {} lacks its future reference", entry.index)))?;
                    check(fut, "future reference")?;
                    fut
                }
                // the empty future slot repeats the past reference
                _ => past,
            };
            let (rp, rf) = (pad(past), pad(future));
            let y = match &xp {
                Some(xp) => Some(model.mofnet.analysis(ctx, xp, &rp, &rf)?),
                None => None,
            };
            let lat = io.latents(Group::Mofnet, &model.mofnet_entropy, ctx, y, lh, lw)?;
            let shortcut = if entry.kind == FrameKind::P {
                constant_map([n, f, hp / 4, wp / 4], 0.0)
            } else {
                model.mofnet.shortcut(ctx, &rp, &rf)?
            };
            let out = model.mofnet.synthesis(ctx, &lat.y_hat, &shortcut)?;
            let beta = match (entry.kind, overrides.beta) {
                (FrameKind::P, _) => constant_map([n, 1, hp, wp], 1.0),
                (_, Some(b)) => constant_map([n, 1, hp, wp], b),
                _ => out.beta,
            };
            let alpha = match overrides.alpha {
                Some(a) => constant_map([n, 1, hp, wp], a),
                None => out.alpha,
            };
            let wpred = warp(&rp, &out.v_p)?;
            let wfut = warp(&rf, &out.v_f)?;
            let prediction = blend(&wpred, &wfut, &beta)?;
            let group = LatentGroup { latents: lat, shortcut };
            (
                prediction,
                alpha,
                crop(&beta, h, w),
                crop(&out.v_p, h, w),
                crop(&out.v_f, h, w),
                Some(group),
            )
        }
    };

    // Texture part: CodecNet on the alpha-selected content.
    let skip = alpha.rsub_scalar(1.0).mul(&prediction);
    let (codec_part, codecnet) = if overrides.bypass_codec {
        (constant_map([n, 3, hp, wp], 0.0), None)
    } else {
        let masked_pred = alpha.mul(&prediction);
        let y = match &xp {
            Some(xp) => Some(model.codecnet.analysis(ctx, &alpha.mul(xp), &masked_pred)?),
            None => None,
        };
        let lat = io.latents(Group::Codecnet, &model.codecnet_entropy, ctx, y, lh, lw)?;
        let shortcut = if entry.kind == FrameKind::I {
            constant_map([n, f, lh, lw], 0.0)
        } else {
            model.codecnet.shortcut(ctx, &masked_pred)?
        };
        let out = model.codecnet.synthesis(ctx, &lat.y_hat, &shortcut)?;
        (out, Some(LatentGroup { latents: lat, shortcut }))
    };
    let x_hat = skip.add(&codec_part);

    let zero = || Var::constant(Tensor::scalar(0.0));
    let bits_m = mofnet.as_ref().map_or_else(zero, |g| g.latents.bits());
    let bits_c = codecnet.as_ref().map_or_else(zero, |g| g.latents.bits());
    Ok(FrameResult {
        index: entry.index,
        kind: entry.kind,
        x_hat: crop(&x_hat, h, w),
        prediction: crop(&prediction, h, w),
        alpha: crop(&alpha, h, w),
        beta,
        v_p,
        v_f,
        skip_part: crop(&skip, h, w),
        codec_part: crop(&codec_part, h, w),
        mofnet,
        codecnet,
        bits_m,
        bits_c,
        coded_bytes: None,
        padded: (hp, wp),
    })
}

fn entry(index: usize, kind: FrameKind, past: Option<usize>, future: Option<usize>) -> ScheduleEntry {
    ScheduleEntry {
        index,
        kind,
        ref_past: past,
        ref_future: future,
    }
}

fn size_of(x: &Var) -> (usize, usize, usize) {
    let [n, _, h, w] = x.shape();
    (n, h, w)
}

/// Intra frame: no references, no motion.
pub fn code_i_frame(model: &Model, ctx: &Ctx, x: &Var) -> Result<FrameResult> {
    let e = entry(0, FrameKind::I, None, None);
    code_frame(model, ctx, &e, Some(x), Refs::default(), size_of(x), Overrides::default(), &mut Estimate)
}

/// Uni-directional frame predicted from `ref_p`.
pub fn code_p_frame(model: &Model, ctx: &Ctx, x: &Var, ref_p: &Var, overrides: Overrides) -> Result<FrameResult> {
    let e = entry(1, FrameKind::P, Some(0), None);
    let refs = Refs {
        past: Some(ref_p),
        future: None,
    };
    code_frame(model, ctx, &e, Some(x), refs, size_of(x), overrides, &mut Estimate)
}

/// Bi-directional frame predicted from `ref_p` and `ref_f`.
pub fn code_b_frame(model: &Model, ctx: &Ctx, x: &Var, ref_p: &Var, ref_f: &Var, overrides: Overrides) -> Result<FrameResult> {
    let e = entry(1, FrameKind::B, Some(0), Some(2));
    let refs = Refs {
        past: Some(ref_p),
        future: Some(ref_f),
    };
    code_frame(model, ctx, &e, Some(x), refs, size_of(x), overrides, &mut Estimate)
}

/// Which side of the codec drives a sequence run.
pub enum SequenceIo<'a> {
    Estimate,
    Encode(&'a mut Vec<(Vec<u8>, Vec<u8>)>),
    Decode(&'a [(Vec<u8>, Vec<u8>)]),
}

/// Codes the frames of `config` in schedule order with a closed prediction
/// loop: references are always previously decoded frames. `frames` is in
/// display order (`None` entries are allowed only when decoding). Results
/// are returned in coding order.
pub fn code_sequence(
    model: &Model,
    ctx: &Ctx,
    frames: &[Option<Var>],
    size: (usize, usize, usize),
    config: &CodingConfig,
    mut io: SequenceIo,
) -> Result<Vec<FrameResult>> {
    let schedule = build_schedule(config)?;
    if frames.len() < config.frame_count() {
        return Err(Error::InvalidInput(format!(
            "{} configuration needs {} frames, got {}",
            config.mode.name(),
            config.frame_count(),
            frames.len()
        )));
    }
    let mut dpb: HashMap<usize, Var> = HashMap::new();
    let mut results = Vec::with_capacity(schedule.len());
    for (chunk, e) in schedule.iter().enumerate() {
        let refs = Refs {
            past: e.ref_past.map(|r| &dpb[&r]),
            future: e.ref_future.map(|r| &dpb[&r]),
        };
        let with_chunk = |err: Error| match err {
            Error::Bitstream { reason, .. } => Error::Bitstream { chunk, reason },
            other => other,
        };
        let result = match &mut io {
            SequenceIo::Estimate => {
                let x = frames[e.index].as_ref().ok_or_else(|| Error::InvalidInput(format!("frame {} missing", e.index)))?;
                code_frame(model, ctx, e, Some(x), refs, size, Overrides::default(), &mut Estimate)?
            }
            SequenceIo::Encode(out) => {
                let x = frames[e.index].as_ref().ok_or_else(|| Error::InvalidInput(format!("frame {} missing", e.index)))?;
                let mut sink = EncodeSink::default();
                let mut r = code_frame(model, ctx, e, Some(x), refs, size, Overrides::default(), &mut sink)?;
                r.coded_bytes = Some((sink.mofnet.len(), sink.codecnet.len()));
                out.push((sink.mofnet, sink.codecnet));
                r
            }
            SequenceIo::Decode(chunks) => {
                let (m, c) = chunks.get(chunk).ok_or_else(|| Error::Bitstream {
                    chunk,
                    reason: "stream ends before this frame".into(),
                })?;
                let mut src = DecodeSource { mofnet: m, codecnet: c };
                let mut r = code_frame(model, ctx, e, None, refs, size, Overrides::default(), &mut src).map_err(with_chunk)?;
                r.coded_bytes = Some((m.len(), c.len()));
                r
            }
        };
        if !result.x_hat.value().all_finite() {
            return Err(Error::Numerical(format!("frame {} decoded to non-finite values", e.index)));
        }
        dpb.insert(e.index, result.x_hat.clone());
        results.push(result);
    }
    Ok(results)
}
