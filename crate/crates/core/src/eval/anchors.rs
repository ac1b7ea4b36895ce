//! Conventional-codec anchors run through `ffmpeg`.
//!
//! Command lines are kept as verbatim templates with `{W}`, `{H}` and `{QP}`
//! placeholders. A run happens in a scratch directory holding `in.yuv`, so
//! the executed argument list is exactly the template.

use std::path::{Path, PathBuf};
use std::process::Command;

use serde::{Deserialize, Serialize};

use super::bdrate::RdCurve;
use super::metrics::psnr;
use crate::error::{Error, Result};
use crate::video_io::{load_yuv420, to_internal, RawSequence};

pub const HEVC_TEMPLATE: &str = "ffmpeg -video_size {W}x{H} -i in.yuv -c:v libx265 -pix_fmt yuv420p -x265-params \"keyint=9:min-keyint=9\" -crf {QP} -preset medium -tune psnr out.mp4";
pub const HEVC_LDP_TEMPLATE: &str = "ffmpeg -video_size {W}x{H} -i in.yuv -c:v libx265 -pix_fmt yuv420p -x265-params \"keyint=9:min-keyint=9\" -crf {QP} -preset medium -tune zerolatency out.mp4";
pub const AVC_TEMPLATE: &str =
    "ffmpeg -video_size {W}x{H} -i in.yuv -c:v libx264 -pix_fmt yuv420p -g 9 -crf {QP} -preset medium -tune psnr out.mp4";

pub const QP_SWEEP: [u32; 4] = [27, 32, 37, 42];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorCodec {
    X265,
    X264,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnchorMode {
    Ra,
    Ldp,
}

impl AnchorCodec {
    fn library(self) -> &'static str {
        match self {
            AnchorCodec::X265 => "libx265",
            AnchorCodec::X264 => "libx264",
        }
    }
}

pub fn template(codec: AnchorCodec, mode: AnchorMode) -> &'static str {
    match (codec, mode) {
        (AnchorCodec::X265, AnchorMode::Ra) => HEVC_TEMPLATE,
        (AnchorCodec::X265, AnchorMode::Ldp) => HEVC_LDP_TEMPLATE,
        // the AVC anchor is only defined with one setting
        (AnchorCodec::X264, _) => AVC_TEMPLATE,
    }
}

pub fn command_line(template: &str, width: usize, height: usize, qp: u32) -> String {
    template
        .replace("{W}", &width.to_string())
        .replace("{H}", &height.to_string())
        .replace("{QP}", &qp.to_string())
}

/// Splits a command line into arguments, honouring double quotes the way a
/// POSIX shell would for this restricted grammar.
pub fn split_args(line: &str) -> Vec<String> {
    let mut args = Vec::new();
    let mut cur = String::new();
    let (mut quoted, mut any) = (false, false);
    for ch in line.chars() {
        match ch {
            '"' => {
                quoted = !quoted;
                any = true;
            }
            c if c.is_whitespace() && !quoted => {
                if any {
                    args.push(std::mem::take(&mut cur));
                    any = false;
                }
            }
            c => {
                cur.push(c);
                any = true;
            }
        }
    }
    if any {
        args.push(cur);
    }
    args
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AnchorPoint {
    pub qp: u32,
    pub command: String,
    pub bytes: u64,
    pub mbit_per_s: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "lowercase")]
pub enum AnchorOutcome {
    Ok { points: Vec<AnchorPoint> },
    Unavailable { reason: String },
}

/// Checks that `ffmpeg` runs and provides the requested encoder.
pub fn probe(ffmpeg: &Path, codec: AnchorCodec) -> Result<()> {
    let out = Command::new(ffmpeg)
        .args(["-hide_banner", "-encoders"])
        .output()
        .map_err(|e| Error::Unavailable(format!("cannot run {}: {e}", ffmpeg.display())))?;
    if !out.status.success() {
        return Err(Error::Unavailable(format!("{} -encoders failed with {}", ffmpeg.display(), out.status)));
    }
    let listing = String::from_utf8_lossy(&out.stdout);
    if !listing.contains(codec.library()) {
        return Err(Error::Unavailable(format!("{} has no {} encoder", ffmpeg.display(), codec.library())));
    }
    Ok(())
}

fn run(ffmpeg: &Path, args: &[String], dir: &Path) -> Result<()> {
    let out = Command::new(ffmpeg)
        .args(args)
        .current_dir(dir)
        .output()
        .map_err(|e| Error::Unavailable(format!("cannot run {}: {e}", ffmpeg.display())))?;
    if !out.status.success() {
        let tail: String = String::from_utf8_lossy(&out.stderr).lines().rev().take(5).collect::<Vec<_>>().join(" | ");
        return Err(Error::Unavailable(format!("ffmpeg exited with {}: {tail}", out.status)));
    }
    Ok(())
}

/// Encodes `input` at one QP, decodes it and scores it against the source.
/// Rate is container size over the clip duration at `fps`. Intermediate
/// files live in a temporary directory under `scratch`.
#[allow(clippy::too_many_arguments)]
pub fn run_anchor(
    ffmpeg: &Path,
    scratch: &Path,
    input: &Path,
    geometry: (usize, usize),
    fps: f64,
    codec: AnchorCodec,
    mode: AnchorMode,
    qp: u32,
) -> Result<AnchorPoint> {
    let (width, height) = geometry;
    let source = load_yuv420(input, width, height)?;
    let work = tempfile::tempdir_in(scratch).map_err(|e| Error::io(scratch, e))?;
    let dir = work.path();
    std::fs::copy(input, dir.join("in.yuv")).map_err(|e| Error::io(input, e))?;
    let line = command_line(template(codec, mode), width, height, qp);
    let mut args = split_args(&line);
    args.remove(0);
    run(ffmpeg, &args, dir)?;
    let mp4 = dir.join("out.mp4");
    let bytes = std::fs::metadata(&mp4).map_err(|e| Error::io(&mp4, e))?.len();
    let decode: Vec<String> =
        ["-i", "out.mp4", "-f", "rawvideo", "-pix_fmt", "yuv420p", "dec.yuv"].map(String::from).to_vec();
    run(ffmpeg, &decode, dir)?;
    let decoded = load_yuv420(dir.join("dec.yuv"), width, height)?;
    let quality = sequence_psnr(&source, &decoded)?;
    let duration = source.frame_count() as f64 / fps;
    Ok(AnchorPoint {
        qp,
        command: line,
        bytes,
        mbit_per_s: bytes as f64 * 8.0 / duration / 1e6,
        psnr: quality,
    })
}

/// Mean per-frame PSNR on the 4:4:4 representation.
pub fn sequence_psnr(a: &RawSequence, b: &RawSequence) -> Result<f64> {
    if a.frame_count() != b.frame_count() {
        return Err(Error::Geometry(format!("{} vs {} frames", a.frame_count(), b.frame_count())));
    }
    let (fa, fb) = (to_internal(a), to_internal(b));
    let mut sum = 0.0;
    for (x, y) in fa.iter().zip(&fb) {
        sum += psnr(&x.data, &y.data)?;
    }
    Ok(sum / fa.len().max(1) as f64)
}

/// Runs the whole QP sweep. A missing or failing encoder is reported as a
/// status instead of an error.
pub fn qp_sweep(
    ffmpeg: &Path,
    scratch: &Path,
    input: &Path,
    geometry: (usize, usize),
    fps: f64,
    codec: AnchorCodec,
    mode: AnchorMode,
) -> Result<AnchorOutcome> {
    if let Err(Error::Unavailable(reason)) = probe(ffmpeg, codec) {
        return Ok(AnchorOutcome::Unavailable { reason });
    }
    let mut points = Vec::new();
    for qp in QP_SWEEP {
        match run_anchor(ffmpeg, scratch, input, geometry, fps, codec, mode, qp) {
            Ok(p) => points.push(p),
            Err(Error::Unavailable(reason)) => return Ok(AnchorOutcome::Unavailable { reason }),
            Err(e) => return Err(e),
        }
    }
    Ok(AnchorOutcome::Ok { points })
}

/// Rate must fall strictly as QP rises.
pub fn is_monotone(points: &[AnchorPoint]) -> bool {
    points.windows(2).all(|w| w[1].qp > w[0].qp && w[1].mbit_per_s < w[0].mbit_per_s)
}

pub fn to_curve(label: &str, points: &[AnchorPoint]) -> Result<RdCurve> {
    RdCurve::new(label, points.iter().map(|p| (p.mbit_per_s, p.psnr)).collect())
}

/// Locates `ffmpeg` on `PATH`.
pub fn find_ffmpeg() -> Option<PathBuf> {
    let path = std::env::var_os("PATH")?;
    std::env::split_paths(&path).map(|d| d.join("ffmpeg")).find(|p| p.is_file())
}
