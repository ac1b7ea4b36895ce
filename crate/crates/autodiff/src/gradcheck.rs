//! Central finite differences, used as an oracle for analytic gradients.

use crate::tensor::Tensor;

/// Relative error `|a - b| / max(|a|, |b|, floor)`.
pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Numerical gradient of scalar `f` at `x`, probing the listed flat indices
/// (all indices when `indices` is `None`).
pub fn numeric_grad(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    step: f64,
    indices: Option<&[usize]>,
) -> Vec<(usize, f64)> {
    let all: Vec<usize>;
    let idx = match indices {
        Some(i) => i,
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    idx.iter()
        .map(|&i| {
            let mut plus = x.clone();
            plus.data_mut()[i] += step;
            let mut minus = x.clone();
            minus.data_mut()[i] -= step;
            (i, (f(&plus) - f(&minus)) / (2.0 * step))
        })
        .collect()
}

/// Largest relative error between `analytic` and finite differences of `f`.
pub fn max_rel_err(
    f: &mut dyn FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    step: f64,
    floor: f64,
) -> f64 {
    numeric_grad(f, x, step, None)
        .into_iter()
        .map(|(i, num)| rel_err(analytic.data()[i], num, floor))
        .fold(0.0, f64::max)
}
