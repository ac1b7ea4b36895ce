//! GOP structures and coding order.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::video_io::FrameKind;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CodingMode {
    /// All intra: only the first frame.
    Ai,
    /// Low-delay P: one I-frame then P-frames, each predicted from the previous one.
    Ldp,
    /// Random access: hierarchical B-frames inside a dyadic GOP.
    Ra,
}

impl CodingMode {
    pub fn name(self) -> &'static str {
        match self {
            CodingMode::Ai => "AI",
            CodingMode::Ldp => "LDP",
            CodingMode::Ra => "RA",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            CodingMode::Ai => 0,
            CodingMode::Ldp => 1,
            CodingMode::Ra => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(CodingMode::Ai),
            1 => Some(CodingMode::Ldp),
            2 => Some(CodingMode::Ra),
            _ => None,
        }
    }
}

impl std::str::FromStr for CodingMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "AI" => Ok(CodingMode::Ai),
            "LDP" => Ok(CodingMode::Ldp),
            "RA" => Ok(CodingMode::Ra),
            _ => Err(Error::InvalidInput(format!("unknown coding configuration {s:?} (AI, LDP or RA)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CodingConfig {
    pub mode: CodingMode,
    /// Frames per GOP after the leading I-frame (P-frame count for LDP).
    pub gop_size: usize,
    /// Consecutive GOPs; each one after the first predicts from the last
    /// decoded frame of the previous GOP instead of a new I-frame.
    pub gops: usize,
    pub lambda: f64,
}

impl CodingConfig {
    pub fn new(mode: CodingMode) -> Self {
        CodingConfig {
            mode,
            gop_size: 8,
            gops: 1,
            lambda: 0.0016,
        }
    }

    pub fn with_gop_size(mut self, n: usize) -> Self {
        self.gop_size = n;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda > 0.0) {
            return Err(Error::InvalidInput(format!("lambda must be positive, got {}", self.lambda)));
        }
        if self.gops == 0 {
            return Err(Error::InvalidInput("at least one GOP is required".into()));
        }
        match self.mode {
            CodingMode::Ra if ![2, 4, 8].contains(&self.gop_size) => Err(Error::InvalidInput(format!(
                "random-access GOP size must be 2, 4 or 8, got {}",
                self.gop_size
            ))),
            CodingMode::Ldp if self.gop_size == 0 => Err(Error::InvalidInput("LDP needs at least one P-frame".into())),
            _ => Ok(()),
        }
    }

    /// Frames consumed by the schedule.
    pub fn frame_count(&self) -> usize {
        match self.mode {
            CodingMode::Ai => self.gops,
            _ => 1 + self.gops * self.gop_size,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub index: usize,
    pub kind: FrameKind,
    pub ref_past: Option<usize>,
    pub ref_future: Option<usize>,
}

impl ScheduleEntry {
    fn i(index: usize) -> Self {
        ScheduleEntry {
            index,
            kind: FrameKind::I,
            ref_past: None,
            ref_future: None,
        }
    }

    fn p(index: usize, r: usize) -> Self {
        ScheduleEntry {
            index,
            kind: FrameKind::P,
            ref_past: Some(r),
            ref_future: None,
        }
    }

    fn b(index: usize, past: usize, future: usize) -> Self {
        ScheduleEntry {
            index,
            kind: FrameKind::B,
            ref_past: Some(past),
            ref_future: Some(future),
        }
    }
}

/// Bisection order of the B-frames strictly between `lo` and `hi`.
fn dyadic(lo: usize, hi: usize, out: &mut Vec<ScheduleEntry>) {
    if hi - lo < 2 {
        return;
    }
    let mid = (lo + hi) / 2;
    out.push(ScheduleEntry::b(mid, lo, hi));
    dyadic(lo, mid, out);
    dyadic(mid, hi, out);
}

/// Coding order for the whole configuration (all GOPs).
pub fn build_schedule(config: &CodingConfig) -> Result<Vec<ScheduleEntry>> {
    config.validate()?;
    let n = config.gop_size;
    let mut out = Vec::new();
    match config.mode {
        CodingMode::Ai => out.extend((0..config.gops).map(ScheduleEntry::i)),
        CodingMode::Ldp => {
            out.push(ScheduleEntry::i(0));
            out.extend((1..=config.gops * n).map(|t| ScheduleEntry::p(t, t - 1)));
        }
        CodingMode::Ra => {
            out.push(ScheduleEntry::i(0));
            for g in 0..config.gops {
                let (lo, hi) = (g * n, (g + 1) * n);
                out.push(ScheduleEntry::p(hi, lo));
                dyadic(lo, hi, &mut out);
            }
        }
    }
    Ok(out)
}

/// The three-frame training unit: `I0, P2(0), B1(0, 2)`.
pub fn training_schedule() -> Vec<ScheduleEntry> {
    build_schedule(&CodingConfig::new(CodingMode::Ra).with_gop_size(2)).expect("valid")
}

/// Checks that references are coded before use and that B-frames are bracketed.
pub fn check_schedule(schedule: &[ScheduleEntry]) -> Result<()> {
    let mut coded = std::collections::HashSet::new();
    for e in schedule {
        let refs = [e.ref_past, e.ref_future];
        let expected = match e.kind {
            FrameKind::I => [false, false],
            FrameKind::P => [true, false],
            FrameKind::B => [true, true],
        };
        if refs.map(|r| r.is_some()) != expected {
            return Err(Error::InvalidInput(format!("frame {} has the wrong references for its kind", e.index)));
        }
        for r in refs.into_iter().flatten() {
            if !coded.contains(&r) {
                return Err(Error::InvalidInput(format!("frame {} references {r} before it is coded", e.index)));
            }
        }
        if let (FrameKind::B, Some(p), Some(f)) = (e.kind, e.ref_past, e.ref_future) {
            if !(p < e.index && e.index < f) {
                return Err(Error::InvalidInput(format!("B-frame {} is not bracketed by {p} and {f}", e.index)));
            }
        }
        if !coded.insert(e.index) {
            return Err(Error::InvalidInput(format!("frame {} is coded twice", e.index)));
        }
    }
    Ok(())
}

/// Frame kinds in display order.
pub fn display_kinds(schedule: &[ScheduleEntry]) -> Vec<FrameKind> {
    let mut sorted: Vec<_> = schedule.to_vec();
    sorted.sort_by_key(|e| e.index);
    sorted.into_iter().map(|e| e.kind).collect()
}
