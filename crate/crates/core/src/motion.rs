//! Motion compensation: bilinear warping, bidirectional blending and flow
//! colorization.
//!
//! Flows are `[N, 2, H, W]` pixel displacements at full resolution, channel
//! 0 horizontal and channel 1 vertical. The vector stored at `(i, j)` points
//! from the current frame into the reference, so output pixel `(i, j)`
//! samples the reference at `(i + v_y, j + v_x)`. Sampling positions are
//! clamped to the image border.

use lvc_autodiff::{Tensor, Var};

use crate::error::{Error, Result};

struct Tap {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    tx: f64,
    ty: f64,
    /// Whether the unclamped coordinate lies strictly inside the image.
    inside_x: bool,
    inside_y: bool,
}

#[inline]
fn tap(i: usize, j: usize, fx: f64, fy: f64, h: usize, w: usize) -> Tap {
    let (mx, my) = ((w - 1) as f64, (h - 1) as f64);
    let (ux, uy) = (j as f64 + fx, i as f64 + fy);
    let (sx, sy) = (ux.clamp(0.0, mx), uy.clamp(0.0, my));
    let (x0, y0) = (sx.floor() as usize, sy.floor() as usize);
    Tap {
        x0,
        y0,
        x1: (x0 + 1).min(w - 1),
        y1: (y0 + 1).min(h - 1),
        tx: sx - x0 as f64,
        ty: sy - y0 as f64,
        inside_x: ux > 0.0 && ux < mx,
        inside_y: uy > 0.0 && uy < my,
    }
}

/// Bilinear warp of `reference` by `flow`, differentiable in both.
pub fn warp(reference: &Var, flow: &Var) -> Result<Var> {
    let [n, c, h, w] = reference.shape();
    if flow.shape() != [n, 2, h, w] {
        return Err(Error::Geometry(format!(
            "flow {:?} does not match reference {:?}",
            flow.shape(),
            reference.shape()
        )));
    }
    if !flow.value().all_finite() {
        return Err(Error::Numerical("flow contains non-finite values".into()));
    }
    let (r, f) = (reference.value().clone(), flow.value().clone());
    let plane = h * w;
    let mut out = vec![0.0; n * c * plane];
    {
        let (rd, fd) = (r.data(), f.data());
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let t = tap(i, j, fd[b * 2 * plane + p], fd[(b * 2 + 1) * plane + p], h, w);
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let at = |y: usize, x: usize| rd[base + y * w + x];
                        let top = (1.0 - t.tx) * at(t.y0, t.x0) + t.tx * at(t.y0, t.x1);
                        let bot = (1.0 - t.tx) * at(t.y1, t.x0) + t.tx * at(t.y1, t.x1);
                        out[base + p] = (1.0 - t.ty) * top + t.ty * bot;
                    }
                }
            }
        }
    }
    let value = Tensor::new([n, c, h, w], out);
    let (track_r, track_f) = (reference.is_tracked(), flow.is_tracked());
    Ok(Var::apply(&[reference, flow], value, move |g| {
        let (rd, fd, gd) = (r.data(), f.data(), g.data());
        let mut gr = track_r.then(|| vec![0.0; n * c * plane]);
        let mut gf = track_f.then(|| vec![0.0; n * 2 * plane]);
        for b in 0..n {
            for i in 0..h {
                for j in 0..w {
                    let p = i * w + j;
                    let t = tap(i, j, fd[b * 2 * plane + p], fd[(b * 2 + 1) * plane + p], h, w);
                    let (mut dx, mut dy) = (0.0, 0.0);
                    for ch in 0..c {
                        let base = (b * c + ch) * plane;
                        let go = gd[base + p];
                        if let Some(gr) = gr.as_mut() {
                            gr[base + t.y0 * w + t.x0] += go * (1.0 - t.ty) * (1.0 - t.tx);
                            gr[base + t.y0 * w + t.x1] += go * (1.0 - t.ty) * t.tx;
                            gr[base + t.y1 * w + t.x0] += go * t.ty * (1.0 - t.tx);
                            gr[base + t.y1 * w + t.x1] += go * t.ty * t.tx;
                        }
                        let at = |y: usize, x: usize| rd[base + y * w + x];
                        let (v00, v01, v10, v11) = (at(t.y0, t.x0), at(t.y0, t.x1), at(t.y1, t.x0), at(t.y1, t.x1));
                        dx += go * ((1.0 - t.ty) * (v01 - v00) + t.ty * (v11 - v10));
                        dy += go * ((1.0 - t.tx) * (v10 - v00) + t.tx * (v11 - v01));
                    }
                    if let Some(gf) = gf.as_mut() {
                        if t.inside_x {
                            gf[b * 2 * plane + p] = dx;
                        }
                        if t.inside_y {
                            gf[(b * 2 + 1) * plane + p] = dy;
                        }
                    }
                }
            }
        }
        vec![
            gr.map(|d| Tensor::new([n, c, h, w], d)),
            gf.map(|d| Tensor::new([n, 2, h, w], d)),
        ]
    }))
}

/// Bidirectional weighted prediction `beta * warp_p + (1 - beta) * warp_f`,
/// with the single-channel `beta` broadcast over color channels.
pub fn blend(warp_p: &Var, warp_f: &Var, beta: &Var) -> Result<Var> {
    let [n, _, h, w] = warp_p.shape();
    if warp_f.shape() != warp_p.shape() || beta.shape() != [n, 1, h, w] {
        return Err(Error::Geometry(format!(
            "blend shapes disagree: {:?}, {:?}, beta {:?}",
            warp_p.shape(),
            warp_f.shape(),
            beta.shape()
        )));
    }
    Ok(beta.mul(warp_p).add(&beta.rsub_scalar(1.0).mul(warp_f)))
}

/// HSV color wheel: hue is the vector angle, saturation the magnitude
/// relative to the largest vector in the image, value 1. Zero flow is white.
/// Returns `[1, 3, H, W]` RGB in `[0, 1]` for the first batch item.
pub fn flow_to_color(flow: &Tensor) -> Tensor {
    let [_, c, h, w] = flow.shape();
    assert_eq!(c, 2, "flow must have two channels");
    let plane = h * w;
    let d = flow.data();
    let max_mag = (0..plane)
        .map(|p| d[p].hypot(d[plane + p]))
        .fold(0.0, f64::max);
    let mut out = vec![0.0; 3 * plane];
    for p in 0..plane {
        let (vx, vy) = (d[p], d[plane + p]);
        let sat = if max_mag > 0.0 { vx.hypot(vy) / max_mag } else { 0.0 };
        let hue = vy.atan2(vx).rem_euclid(std::f64::consts::TAU) / std::f64::consts::TAU;
        let [r, g, b] = hsv_to_rgb(hue, sat, 1.0);
        out[p] = r;
        out[plane + p] = g;
        out[2 * plane + p] = b;
    }
    Tensor::new([1, 3, h, w], out)
}

/// `hue` in `[0, 1)`, `sat` and `val` in `[0, 1]`.
pub fn hsv_to_rgb(hue: f64, sat: f64, val: f64) -> [f64; 3] {
    let h6 = (hue * 6.0).rem_euclid(6.0);
    let sector = h6.floor() as u32;
    let frac = h6 - sector as f64;
    let (p, q, t) = (val * (1.0 - sat), val * (1.0 - sat * frac), val * (1.0 - sat * (1.0 - frac)));
    match sector {
        0 => [val, t, p],
        1 => [q, val, p],
        2 => [p, val, t],
        3 => [p, q, val],
        4 => [t, p, val],
        _ => [val, p, q],
    }
}
