use lvc_autodiff::Tensor;

use crate::error::{Error, Result};

/// Reported PSNR for identical inputs.
pub const PSNR_CAP: f64 = 100.0;

pub fn mse(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::Geometry(format!("cannot compare {:?} with {:?}", a.shape(), b.shape())));
    }
    let sum: f64 = a.data().iter().zip(b.data()).map(|(x, y)| (x - y) * (x - y)).sum();
    Ok(sum / a.numel() as f64)
}

/// `10 log10(1 / MSE)` over all channels of unit-range frames, capped at
/// [`PSNR_CAP`].
pub fn psnr(a: &Tensor, b: &Tensor) -> Result<f64> {
    let m = mse(a, b)?;
    Ok(if m == 0.0 { PSNR_CAP } else { (-10.0 * m.log10()).min(PSNR_CAP) })
}
