//! Quality metrics, BD-rate, anchor runs, reports and diagnostic images.

pub mod anchors;
pub mod bdrate;
pub mod diagnostics;
pub mod gop;
pub mod metrics;
pub mod plot;

pub use bdrate::{bd_rate, BdResult, RdCurve};
pub use gop::{gop_report, GopReport};
pub use metrics::{mse, psnr, PSNR_CAP};
