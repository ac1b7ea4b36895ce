//! Per-frame rate and quality over one GOP.

use serde::{Deserialize, Serialize};

use crate::coder::report::sequence_report;
use crate::coder::{CodingConfig, FrameResult};
use crate::error::{Error, Result};
use crate::video_io::Frame;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GopRow {
    /// Kind letter followed by the display index, e.g. `B3`.
    pub label: String,
    pub bits: f64,
    pub mbit_per_s: f64,
    pub psnr: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GopReport {
    pub fps: f64,
    /// Display order.
    pub rows: Vec<GopRow>,
    /// Mean over all frames: total bits over the clip duration, mean PSNR.
    pub avg: GopRow,
    /// Population variance of the per-frame PSNR.
    pub psnr_variance: f64,
}

pub fn gop_report(config: &CodingConfig, results: &[FrameResult], originals: &[Frame], fps: f64) -> Result<GopReport> {
    if !(fps > 0.0) {
        return Err(Error::InvalidInput(format!("fps must be positive, got {fps}")));
    }
    let seq = sequence_report(config, results, originals, Some(fps))?;
    let rows: Vec<GopRow> = seq
        .per_frame
        .iter()
        .map(|f| {
            let bits = f.bits_m + f.bits_c;
            GopRow {
                label: format!("{}{}", f.kind, f.index),
                bits,
                mbit_per_s: bits * fps / 1e6,
                psnr: f.psnr,
            }
        })
        .collect();
    let n = rows.len() as f64;
    let mean_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
    let psnr_variance = rows.iter().map(|r| (r.psnr - mean_psnr).powi(2)).sum::<f64>() / n;
    let avg = GopRow {
        label: "Avg".into(),
        bits: seq.totals.bits / n,
        mbit_per_s: seq.totals.mbit_per_s.expect("fps given"),
        psnr: mean_psnr,
    };
    Ok(GopReport {
        fps,
        rows,
        avg,
        psnr_variance,
    })
}

impl std::fmt::Display for GopReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "{:<6} {:>12} {:>10} {:>8}", "frame", "bits", "Mbit/s", "PSNR")?;
        for r in self.rows.iter().chain(std::iter::once(&self.avg)) {
            writeln!(f, "{:<6} {:>12.0} {:>10.4} {:>8.3}", r.label, r.bits, r.mbit_per_s, r.psnr)?;
        }
        write!(f, "PSNR variance {:.4} dB^2", self.psnr_variance)
    }
}
