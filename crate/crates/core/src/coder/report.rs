//! JSON report for one coded sequence.

use serde::{Deserialize, Serialize};

use super::schedule::CodingConfig;
use super::FrameResult;
use crate::error::{Error, Result};
use crate::eval::psnr;
use crate::video_io::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameReport {
    pub index: usize,
    pub kind: String,
    /// Coded bits when a bitstream exists, estimated bits otherwise.
    pub bits_m: f64,
    pub bits_c: f64,
    pub estimated_bits_m: f64,
    pub estimated_bits_c: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Totals {
    pub bits: f64,
    /// Bits divided by `3 * H * W` per frame, the rate unit of the training loss.
    pub bpp: f64,
    pub psnr: f64,
    pub mbit_per_s: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SequenceReport {
    pub config: CodingConfig,
    pub width: usize,
    pub height: usize,
    pub fps: Option<f64>,
    /// Display order.
    pub per_frame: Vec<FrameReport>,
    pub totals: Totals,
}

/// Scores `results` against the originals (display order, indexed by frame number).
pub fn sequence_report(
    config: &CodingConfig,
    results: &[FrameResult],
    originals: &[Frame],
    fps: Option<f64>,
) -> Result<SequenceReport> {
    if results.is_empty() {
        return Err(Error::InvalidInput("no coded frames to report".into()));
    }
    let mut per_frame = Vec::with_capacity(results.len());
    for r in results {
        let orig = originals
            .get(r.index)
            .ok_or_else(|| Error::InvalidInput(format!("no original for frame {}", r.index)))?;
        let (bits_m, bits_c) = match r.coded_bytes {
            Some((m, c)) => ((m * 8) as f64, (c * 8) as f64),
            None => (r.rate_m(), r.rate_c()),
        };
        per_frame.push(FrameReport {
            index: r.index,
            kind: r.kind.letter().to_string(),
            bits_m,
            bits_c,
            estimated_bits_m: r.rate_m(),
            estimated_bits_c: r.rate_c(),
            psnr: psnr(&r.clipped(), &orig.data)?,
        });
    }
    per_frame.sort_by_key(|f| f.index);
    let (h, w) = (originals[0].height(), originals[0].width());
    let n = per_frame.len() as f64;
    let bits: f64 = per_frame.iter().map(|f| f.bits_m + f.bits_c).sum();
    let totals = Totals {
        bits,
        bpp: bits / (n * 3.0 * (h * w) as f64),
        psnr: per_frame.iter().map(|f| f.psnr).sum::<f64>() / n,
        mbit_per_s: fps.map(|fps| bits / (n / fps) / 1e6),
    };
    Ok(SequenceReport {
        config: *config,
        width: w,
        height: h,
        fps,
        per_frame,
        totals,
    })
}
