//! Causal masked-convolution model over the hyperprior latents.
//!
//! Positions are visited in raster order and all channels of one position are
//! coded together, so masks are spatial only: the first layer sees strictly
//! earlier positions, later layers may also see the current one.

use lvc_autodiff::{Tensor, Var};

use super::laplace::{laplace_bits_map, scale_from_raw};
use crate::error::{Error, Result};
use crate::nets::layers::{Conv, LEAKY_SLOPE};
use crate::nets::params::{Builder, Ctx};

pub const ARM_KERNEL: usize = 5;

/// Raster-causal spatial mask of size `k x k`; `include_center` selects the
/// non-strict variant used after the first layer.
pub fn causal_mask(k: usize, include_center: bool) -> Tensor {
    let c = k / 2;
    Tensor::from_fn([1, 1, k, k], |[_, _, i, j]| {
        let before = i < c || (i == c && j < c);
        if before || (include_center && i == c && j == c) {
            1.0
        } else {
            0.0
        }
    })
}

/// Rejects masks that let a position see the future (or itself, when strict).
pub fn check_causal(mask: &Tensor, strict: bool) -> Result<()> {
    let [n, c, k, kw] = mask.shape();
    if n != 1 || c != 1 || k != kw || k % 2 == 0 {
        return Err(Error::InvalidInput(format!("mask must be 1x1xKxK with odd K, got {:?}", mask.shape())));
    }
    let mid = k / 2;
    for i in 0..k {
        for j in 0..k {
            let future = i > mid || (i == mid && j > mid);
            let center = i == mid && j == mid;
            if mask.at([0, 0, i, j]) != 0.0 && (future || (strict && center)) {
                return Err(Error::InvalidInput(format!(
                    "mask tap ({i}, {j}) breaks raster causality"
                )));
            }
        }
    }
    Ok(())
}

#[derive(Clone, Debug)]
pub struct Arm {
    layers: Vec<Conv>,
    channels: usize,
}

impl Arm {
    /// Three 5x5 masked layers: `c -> c -> c -> 2c` (location and raw scale).
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let masks = [
            causal_mask(ARM_KERNEL, false),
            causal_mask(ARM_KERNEL, true),
            causal_mask(ARM_KERNEL, true),
        ];
        Self::with_masks(b, name, channels, masks).expect("built-in masks are causal")
    }

    pub fn with_masks(b: &mut Builder, name: &str, channels: usize, masks: [Tensor; 3]) -> Result<Self> {
        for (i, m) in masks.iter().enumerate() {
            check_causal(m, i == 0)?;
        }
        let mut s = b.scope(name);
        let widths = [channels, channels, channels, 2 * channels];
        let layers = masks
            .into_iter()
            .enumerate()
            .map(|(i, m)| Conv::masked(&mut s, &format!("mconv{i}"), widths[i], widths[i + 1], m))
            .collect();
        Ok(Arm { layers, channels })
    }

    pub fn layers(&self) -> &[Conv] {
        &self.layers
    }

    /// Laplace `(mu, b)` for every element of `z`.
    pub fn params(&self, ctx: &Ctx, z: &Var) -> Result<(Var, Var)> {
        if z.shape()[1] != self.channels {
            return Err(Error::Geometry(format!(
                "ARM expects {} channels, got {}",
                self.channels,
                z.shape()[1]
            )));
        }
        let mut h = z.clone();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(ctx, &h);
            if i + 1 < self.layers.len() {
                h = h.leaky_relu(LEAKY_SLOPE);
            }
        }
        let mu = h.narrow_channels(0, self.channels);
        let b = scale_from_raw(&h.narrow_channels(self.channels, self.channels));
        Ok((mu, b))
    }

    /// Per-element bits of `z`.
    pub fn bits_map(&self, ctx: &Ctx, z: &Var) -> Result<Var> {
        let (mu, b) = self.params(ctx, z)?;
        laplace_bits_map(z, &mu, &b)
    }

    /// Parameters at raster position `pos` computed from the already-known
    /// positions only; everything at or after `pos` in `known` is ignored.
    /// Encoder and decoder both call this so their tables agree bit for bit.
    pub fn params_at(&self, ctx: &Ctx, known: &Tensor, pos: usize) -> Result<(Vec<f64>, Vec<f64>)> {
        let [n, c, h, w] = known.shape();
        let mut partial = known.clone();
        {
            let data = partial.data_mut();
            for bi in 0..n {
                for ch in 0..c {
                    let plane = &mut data[(bi * c + ch) * h * w..(bi * c + ch + 1) * h * w];
                    plane[pos..].iter_mut().for_each(|v| *v = 0.0);
                }
            }
        }
        let (mu, b) = self.params(ctx, &Var::constant(partial))?;
        let take = |t: &Tensor| -> Vec<f64> {
            let mut out = Vec::with_capacity(n * c);
            for bi in 0..n {
                for ch in 0..c {
                    out.push(t.at([bi, ch, pos / w, pos % w]));
                }
            }
            out
        };
        Ok((take(mu.value()), take(b.value())))
    }
}
