//! Discretized Laplace likelihood and its bit cost.

use lvc_autodiff::{Tensor, Var};

use crate::error::{Error, Result};

/// Smallest probability charged for a single symbol (16 bits).
pub const PROB_FLOOR: f64 = 1.0 / 65536.0;
/// Added to the softplus output so scales stay strictly positive.
pub const SCALE_FLOOR: f64 = 1e-6;

/// Laplace CDF at `x` for location 0 and scale `b`.
pub fn cdf(x: f64, b: f64) -> f64 {
    if x < 0.0 {
        0.5 * (x / b).exp()
    } else {
        1.0 - 0.5 * (-x / b).exp()
    }
}

/// Probability of the unit bin centred at offset `t = y - mu`, computed
/// without cancellation in the tails.
pub fn bin_prob(t: f64, b: f64) -> f64 {
    let a = t.abs();
    if a >= 0.5 {
        0.5 * (-(a - 0.5) / b).exp() * -(-1.0 / b).exp_m1()
    } else {
        1.0 - 0.5 * ((-(0.5 - a) / b).exp() + (-(0.5 + a) / b).exp())
    }
}

/// Bits for one symbol under the floored model.
pub fn symbol_bits(t: f64, b: f64) -> f64 {
    -bin_prob(t, b).max(PROB_FLOOR).log2()
}

/// `(d bits/dt, d bits/db)` for one symbol.
fn symbol_grad(t: f64, b: f64) -> (f64, f64) {
    let p = bin_prob(t, b);
    if p <= PROB_FLOOR {
        return (0.0, 0.0);
    }
    let (l, u) = (t - 0.5, t + 0.5);
    let dens = |x: f64| (-x.abs() / b).exp() / (2.0 * b);
    let dcdf_db = |x: f64| -0.5 * x * (-x.abs() / b).exp() / (b * b);
    let dp_dt = dens(u) - dens(l);
    let dp_db = dcdf_db(u) - dcdf_db(l);
    let k = -1.0 / (p * std::f64::consts::LN_2);
    (k * dp_dt, k * dp_db)
}

/// Per-element bits `-log2 max(F(y+0.5) - F(y-0.5), 2^-16)` with `F` the
/// Laplace CDF at `(mu, b)`. Differentiable in all three inputs.
pub fn laplace_bits_map(y: &Var, mu: &Var, b: &Var) -> Result<Var> {
    let shape = y.shape();
    if mu.shape() != shape || b.shape() != shape {
        return Err(Error::Geometry(format!(
            "laplace_bits: y {:?}, mu {:?}, b {:?}",
            shape,
            mu.shape(),
            b.shape()
        )));
    }
    if let Some(bad) = b.value().data().iter().find(|&&v| !(v > 0.0)) {
        return Err(Error::InvalidInput(format!("Laplace scale must be positive, got {bad}")));
    }
    let (yv, mv, bv) = (y.value().data(), mu.value().data(), b.value().data());
    let bits: Vec<f64> = (0..yv.len()).map(|i| symbol_bits(yv[i] - mv[i], bv[i])).collect();
    let value = Tensor::new(shape, bits);
    let (yt, mt, bt) = (y.value().clone(), mu.value().clone(), b.value().clone());
    Ok(Var::apply(&[y, mu, b], value, move |g| {
        let (yv, mv, bv) = (yt.data(), mt.data(), bt.data());
        let mut gt = vec![0.0; yv.len()];
        let mut gb = vec![0.0; yv.len()];
        for (i, gi) in g.data().iter().enumerate() {
            let (dt, db) = symbol_grad(yv[i] - mv[i], bv[i]);
            gt[i] = gi * dt;
            gb[i] = gi * db;
        }
        let gt = Tensor::new(shape, gt);
        let gm = gt.scale(-1.0);
        vec![Some(gt), Some(gm), Some(Tensor::new(shape, gb))]
    }))
}

/// Total bits as a scalar.
pub fn laplace_bits(y: &Var, mu: &Var, b: &Var) -> Result<Var> {
    Ok(laplace_bits_map(y, mu, b)?.sum_all())
}

/// Maps an unconstrained value to a positive scale.
pub fn scale_from_raw(raw: &Var) -> Var {
    raw.softplus().add_scalar(SCALE_FLOOR)
}
