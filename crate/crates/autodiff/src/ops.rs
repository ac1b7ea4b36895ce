//! Differentiable elementwise, reduction and layout ops.

use crate::graph::Var;
use crate::tensor::{broadcast_zip, sum_to, Shape, Tensor};

fn unary(x: &Var, value: Tensor, dfdx: impl FnOnce(&Tensor) -> Tensor + 'static) -> Var {
    if !x.is_tracked() {
        return Var::constant(value);
    }
    Var::apply(&[x], value, move |g| vec![Some(dfdx(g))])
}

impl Var {
    pub fn add(&self, other: &Var) -> Var {
        let value = broadcast_zip(self.value(), other.value(), |a, b| a + b);
        if !Var::any_tracked(&[self, other]) {
            return Var::constant(value);
        }
        let (sa, sb) = (self.shape(), other.shape());
        let (ta, tb) = (self.is_tracked(), other.is_tracked());
        Var::apply(&[self, other], value, move |g| {
            vec![ta.then(|| sum_to(g, &sa)), tb.then(|| sum_to(g, &sb))]
        })
    }

    pub fn sub(&self, other: &Var) -> Var {
        let value = broadcast_zip(self.value(), other.value(), |a, b| a - b);
        if !Var::any_tracked(&[self, other]) {
            return Var::constant(value);
        }
        let (sa, sb) = (self.shape(), other.shape());
        let (ta, tb) = (self.is_tracked(), other.is_tracked());
        Var::apply(&[self, other], value, move |g| {
            vec![
                ta.then(|| sum_to(g, &sa)),
                tb.then(|| sum_to(&g.scale(-1.0), &sb)),
            ]
        })
    }

    pub fn mul(&self, other: &Var) -> Var {
        let value = broadcast_zip(self.value(), other.value(), |a, b| a * b);
        if !Var::any_tracked(&[self, other]) {
            return Var::constant(value);
        }
        let (a, b) = (self.value().clone(), other.value().clone());
        let (ta, tb) = (self.is_tracked(), other.is_tracked());
        Var::apply(&[self, other], value, move |g| {
            vec![
                ta.then(|| sum_to(&broadcast_zip(g, &b, |g, b| g * b), &a.shape())),
                tb.then(|| sum_to(&broadcast_zip(g, &a, |g, a| g * a), &b.shape())),
            ]
        })
    }

    pub fn div(&self, other: &Var) -> Var {
        let value = broadcast_zip(self.value(), other.value(), |a, b| a / b);
        if !Var::any_tracked(&[self, other]) {
            return Var::constant(value);
        }
        let (a, b) = (self.value().clone(), other.value().clone());
        let out = value.clone();
        let (ta, tb) = (self.is_tracked(), other.is_tracked());
        Var::apply(&[self, other], value, move |g| {
            let ga = ta.then(|| sum_to(&broadcast_zip(g, &b, |g, b| g / b), &a.shape()));
            let gb = tb.then(|| {
                // d(a/b)/db = -(a/b)/b
                let q = broadcast_zip(&out, &b, |q, b| -q / b);
                sum_to(&g.zip_map(&q, |g, q| g * q), &b.shape())
            });
            vec![ga, gb]
        })
    }

    pub fn neg(&self) -> Var {
        self.mul_scalar(-1.0)
    }

    pub fn add_scalar(&self, k: f64) -> Var {
        unary(self, self.value().map(|v| v + k), |g| g.clone())
    }

    pub fn mul_scalar(&self, k: f64) -> Var {
        unary(self, self.value().scale(k), move |g| g.scale(k))
    }

    /// `k - self`.
    pub fn rsub_scalar(&self, k: f64) -> Var {
        unary(self, self.value().map(|v| k - v), |g| g.scale(-1.0))
    }

    pub fn sqr(&self) -> Var {
        let x = self.value().clone();
        unary(self, x.map(|v| v * v), move |g| g.zip_map(&x, |g, x| 2.0 * g * x))
    }

    pub fn sqrt(&self) -> Var {
        let y = self.value().map(f64::sqrt);
        let out = y.clone();
        unary(self, y, move |g| g.zip_map(&out, |g, y| 0.5 * g / y))
    }

    pub fn exp(&self) -> Var {
        let y = self.value().map(f64::exp);
        let out = y.clone();
        unary(self, y, move |g| g.zip_map(&out, |g, y| g * y))
    }

    pub fn ln(&self) -> Var {
        let x = self.value().clone();
        unary(self, x.map(f64::ln), move |g| g.zip_map(&x, |g, x| g / x))
    }

    pub fn relu(&self) -> Var {
        self.leaky_relu(0.0)
    }

    pub fn leaky_relu(&self, slope: f64) -> Var {
        let x = self.value().clone();
        let y = x.map(|v| if v > 0.0 { v } else { slope * v });
        unary(self, y, move |g| {
            g.zip_map(&x, |g, x| if x > 0.0 { g } else { slope * g })
        })
    }

    pub fn sigmoid(&self) -> Var {
        let y = self.value().map(sigmoid);
        let out = y.clone();
        unary(self, y, move |g| g.zip_map(&out, |g, s| g * s * (1.0 - s)))
    }

    /// `ln(1 + e^x)`, computed without overflow.
    pub fn softplus(&self) -> Var {
        let x = self.value().clone();
        unary(self, x.map(softplus), move |g| {
            g.zip_map(&x, |g, x| g * sigmoid(x))
        })
    }

    /// Hard clip. Gradient passes strictly inside `(lo, hi)`.
    pub fn clamp(&self, lo: f64, hi: f64) -> Var {
        let x = self.value().clone();
        let y = x.map(|v| v.clamp(lo, hi));
        unary(self, y, move |g| {
            g.zip_map(&x, |g, x| if x > lo && x < hi { g } else { 0.0 })
        })
    }

    /// Nearest-integer rounding (half away from zero). Zero gradient.
    pub fn round(&self) -> Var {
        let y = self.value().map(|v| v.round() + 0.0);
        let shape = self.shape();
        unary(self, y, move |_| Tensor::zeros(shape))
    }

    pub fn sum_all(&self) -> Var {
        let shape = self.shape();
        unary(self, Tensor::scalar(self.value().sum()), move |g| {
            Tensor::full(shape, g.item())
        })
    }

    pub fn mean_all(&self) -> Var {
        let n = self.value().numel() as f64;
        self.sum_all().mul_scalar(1.0 / n)
    }

    /// Sum over channels, keeping a singleton channel axis.
    pub fn sum_channels(&self) -> Var {
        let [n, c, h, w] = self.shape();
        let target: Shape = [n, 1, h, w];
        let value = sum_to(self.value(), &target);
        unary(self, value, move |g| {
            broadcast_zip(g, &Tensor::zeros([n, c, h, w]), |g, z| g + z)
        })
    }

    /// Repeat along a broadcastable axis to reach `shape`.
    pub fn broadcast_to(&self, shape: Shape) -> Var {
        let src = self.shape();
        let value = broadcast_zip(self.value(), &Tensor::zeros(shape), |a, z| a + z);
        unary(self, value, move |g| sum_to(g, &src))
    }

    pub fn narrow_channels(&self, start: usize, len: usize) -> Var {
        let shape = self.shape();
        let value = self.value().narrow_channels(start, len);
        unary(self, value, move |g| {
            let [n, c, h, w] = shape;
            let mut out = vec![0.0; n * c * h * w];
            let plane = h * w;
            for b in 0..n {
                let dst = (b * c + start) * plane;
                let src = b * len * plane;
                out[dst..dst + len * plane].copy_from_slice(&g.data()[src..src + len * plane]);
            }
            Tensor::new(shape, out)
        })
    }

    pub fn cat_channels(parts: &[&Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let value = Tensor::cat_channels(&values);
        if !Var::any_tracked(parts) {
            return Var::constant(value);
        }
        let sizes: Vec<(usize, bool)> = parts.iter().map(|p| (p.shape()[1], p.is_tracked())).collect();
        Var::apply(parts, value, move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&(c, tracked)| {
                    let piece = tracked.then(|| g.narrow_channels(start, c));
                    start += c;
                    piece
                })
                .collect()
        })
    }

    pub fn narrow_batch(&self, start: usize, len: usize) -> Var {
        let shape = self.shape();
        let value = self.value().narrow_batch(start, len);
        unary(self, value, move |g| {
            let [_, c, h, w] = shape;
            let item = c * h * w;
            let mut out = vec![0.0; shape.iter().product()];
            out[start * item..(start + len) * item].copy_from_slice(g.data());
            Tensor::new(shape, out)
        })
    }

    pub fn cat_batch(parts: &[&Var]) -> Var {
        let values: Vec<&Tensor> = parts.iter().map(|p| p.value()).collect();
        let value = Tensor::cat_batch(&values);
        if !Var::any_tracked(parts) {
            return Var::constant(value);
        }
        let sizes: Vec<(usize, bool)> = parts.iter().map(|p| (p.shape()[0], p.is_tracked())).collect();
        Var::apply(parts, value, move |g| {
            let mut start = 0;
            sizes
                .iter()
                .map(|&(n, tracked)| {
                    let piece = tracked.then(|| g.narrow_batch(start, n));
                    start += n;
                    piece
                })
                .collect()
        })
    }

    pub fn crop(&self, h0: usize, w0: usize, h: usize, w: usize) -> Var {
        let shape = self.shape();
        let value = self.value().crop(h0, w0, h, w);
        unary(self, value, move |g| {
            let [n, c, ih, iw] = shape;
            let mut out = vec![0.0; n * c * ih * iw];
            for plane in 0..n * c {
                for y in 0..h {
                    let dst = plane * ih * iw + (h0 + y) * iw + w0;
                    let src = (plane * h + y) * w;
                    out[dst..dst + w].copy_from_slice(&g.data()[src..src + w]);
                }
            }
            Tensor::new(shape, out)
        })
    }

    /// Reflect padding (edge sample not repeated) on the bottom and right.
    /// Pads longer than the axis keep folding back and forth.
    pub fn pad_reflect(&self, bottom: usize, right: usize) -> Var {
        let [n, c, h, w] = self.shape();
        if bottom == 0 && right == 0 {
            return self.clone();
        }
        let (oh, ow) = (h + bottom, w + right);
        let src_y = reflect_index_map(h, oh);
        let src_x = reflect_index_map(w, ow);
        let x = self.value();
        let mut out = Vec::with_capacity(n * c * oh * ow);
        for plane in 0..n * c {
            for &sy in &src_y {
                for &sx in &src_x {
                    out.push(x.data()[plane * h * w + sy * w + sx]);
                }
            }
        }
        let value = Tensor::new([n, c, oh, ow], out);
        unary(self, value, move |g| {
            let mut acc = vec![0.0; n * c * h * w];
            let gd = g.data();
            for plane in 0..n * c {
                for (y, &sy) in src_y.iter().enumerate() {
                    for (xx, &sx) in src_x.iter().enumerate() {
                        acc[plane * h * w + sy * w + sx] += gd[(plane * oh + y) * ow + xx];
                    }
                }
            }
            Tensor::new([n, c, h, w], acc)
        })
    }
}

fn reflect_index_map(len: usize, out_len: usize) -> Vec<usize> {
    (0..out_len)
        .map(|i| {
            if len == 1 {
                return 0;
            }
            // fold with period 2(len - 1) so pads longer than the axis still reflect
            let period = 2 * (len - 1);
            let r = i % period;
            if r < len {
                r
            } else {
                period - r
            }
        })
        .collect()
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.max(0.0) + (-x.abs()).exp().ln_1p()
    }
}
