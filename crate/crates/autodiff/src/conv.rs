//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Both ops share one geometry: a forward convolution maps an "image" of
//! size `ih x iw` to a "grid" of size `oh x ow`. The transposed convolution
//! runs the same geometry backwards (grid -> image), so its forward pass is
//! the convolution's input gradient and vice versa.

use crate::graph::Var;
use crate::tensor::Tensor;

/// Upper bound on im2col buffer elements; wider outputs are processed in
/// column blocks.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ConvGeom {
    pub channels: usize,
    pub ih: usize,
    pub iw: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn forward(channels: usize, ih: usize, iw: usize, kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        assert!(ih + 2 * pad >= kh && iw + 2 * pad >= kw, "kernel larger than padded input");
        ConvGeom {
            channels,
            ih,
            iw,
            kh,
            kw,
            stride,
            pad,
            oh: (ih + 2 * pad - kh) / stride + 1,
            ow: (iw + 2 * pad - kw) / stride + 1,
        }
    }

    fn rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn cols(&self) -> usize {
        self.oh * self.ow
    }

    fn block(&self) -> usize {
        (COL_BUDGET / self.rows().max(1)).max(64).min(self.cols().max(1))
    }
}

/// Unfolds patches for output columns `[q0, q1)` into `cols` (rows x (q1-q0)).
fn im2col(img: &[f64], g: &ConvGeom, q0: usize, q1: usize, cols: &mut [f64]) {
    let nb = q1 - q0;
    debug_assert!(cols.len() >= g.rows() * nb);
    let (ih, iw) = (g.ih as isize, g.iw as isize);
    for c in 0..g.channels {
        let plane = &img[c * g.ih * g.iw..(c + 1) * g.ih * g.iw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let dst = &mut cols[row * nb..(row + 1) * nb];
                let (mut oy, mut ox) = (q0 / g.ow, q0 % g.ow);
                for slot in dst.iter_mut() {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                    *slot = if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                        plane[(iy * iw + ix) as usize]
                    } else {
                        0.0
                    };
                    ox += 1;
                    if ox == g.ow {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters-adds columns back into the image.
fn col2im(cols: &[f64], g: &ConvGeom, q0: usize, q1: usize, img: &mut [f64]) {
    let nb = q1 - q0;
    let (ih, iw) = (g.ih as isize, g.iw as isize);
    for c in 0..g.channels {
        let plane = &mut img[c * g.ih * g.iw..(c + 1) * g.ih * g.iw];
        for ki in 0..g.kh {
            for kj in 0..g.kw {
                let row = (c * g.kh + ki) * g.kw + kj;
                let src = &cols[row * nb..(row + 1) * nb];
                let (mut oy, mut ox) = (q0 / g.ow, q0 % g.ow);
                for &v in src {
                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                    if iy >= 0 && iy < ih && ix >= 0 && ix < iw {
                        plane[(iy * iw + ix) as usize] += v;
                    }
                    ox += 1;
                    if ox == g.ow {
                        ox = 0;
                        oy += 1;
                    }
                }
            }
        }
    }
}

/// Strided matrix view: element (i, j) lives at `i * rs + j * cs`.
#[derive(Clone, Copy)]
struct Mat {
    rs: isize,
    cs: isize,
}

const ROW_MAJOR: fn(usize) -> Mat = |ld| Mat { rs: ld as isize, cs: 1 };
const TRANSPOSED: fn(usize) -> Mat = |ld| Mat { rs: 1, cs: ld as isize };

/// `c = a * b + beta * c` with `a: m x k`, `b: k x n`, `c: m x n`.
#[allow(clippy::too_many_arguments)]
fn gemm(m: usize, k: usize, n: usize, a: &[f64], am: Mat, b: &[f64], bm: Mat, beta: f64, c: &mut [f64], cm: Mat) {
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: callers pass slices covering every strided element touched by
    // the m x k, k x n and m x n views; c does not alias a or b.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            am.rs,
            am.cs,
            b.as_ptr(),
            bm.rs,
            bm.cs,
            beta,
            c.as_mut_ptr(),
            cm.rs,
            cm.cs,
        );
    }
}

/// `out[n] = w * im2col(x[n])`, w: `[o, c, kh, kw]`.
fn conv_forward(x: &Tensor, w: &Tensor, g: &ConvGeom) -> Vec<f64> {
    let [n, _, _, _] = x.shape();
    let o = w.shape()[0];
    let (rows, ncols) = (g.rows(), g.cols());
    let img_len = g.channels * g.ih * g.iw;
    let mut out = vec![0.0; n * o * ncols];
    let block = g.block();
    let mut cols = vec![0.0; rows * block];
    for b in 0..n {
        let img = &x.data()[b * img_len..(b + 1) * img_len];
        let dst = &mut out[b * o * ncols..(b + 1) * o * ncols];
        let mut q0 = 0;
        while q0 < ncols {
            let q1 = (q0 + block).min(ncols);
            let nb = q1 - q0;
            im2col(img, g, q0, q1, &mut cols[..rows * nb]);
            gemm(o, rows, nb, w.data(), ROW_MAJOR(rows), &cols[..rows * nb], ROW_MAJOR(nb), 0.0, &mut dst[q0..], ROW_MAJOR(ncols));
            q0 = q1;
        }
    }
    out
}

/// Input gradient of a convolution: `img[n] += col2im(w^T * grid[n])`.
fn conv_input_grad(grid: &Tensor, w: &Tensor, g: &ConvGeom, batch: usize) -> Vec<f64> {
    let o = w.shape()[0];
    let (rows, ncols) = (g.rows(), g.cols());
    let img_len = g.channels * g.ih * g.iw;
    let mut img = vec![0.0; batch * img_len];
    let block = g.block();
    let mut cols = vec![0.0; rows * block];
    for b in 0..batch {
        let src = &grid.data()[b * o * ncols..(b + 1) * o * ncols];
        let dst = &mut img[b * img_len..(b + 1) * img_len];
        let mut q0 = 0;
        while q0 < ncols {
            let q1 = (q0 + block).min(ncols);
            let nb = q1 - q0;
            gemm(rows, o, nb, w.data(), TRANSPOSED(rows), &src[q0..], ROW_MAJOR(ncols), 0.0, &mut cols[..rows * nb], ROW_MAJOR(nb));
            col2im(&cols[..rows * nb], g, q0, q1, dst);
            q0 = q1;
        }
    }
    img
}

/// Weight gradient: `dw += grid[n] * im2col(img[n])^T`.
fn conv_weight_grad(img: &Tensor, grid: &Tensor, g: &ConvGeom, o: usize) -> Vec<f64> {
    let n = img.shape()[0];
    let (rows, ncols) = (g.rows(), g.cols());
    let img_len = g.channels * g.ih * g.iw;
    let mut dw = vec![0.0; o * rows];
    let block = g.block();
    let mut cols = vec![0.0; rows * block];
    for b in 0..n {
        let x = &img.data()[b * img_len..(b + 1) * img_len];
        let gy = &grid.data()[b * o * ncols..(b + 1) * o * ncols];
        let mut q0 = 0;
        while q0 < ncols {
            let q1 = (q0 + block).min(ncols);
            let nb = q1 - q0;
            im2col(x, g, q0, q1, &mut cols[..rows * nb]);
            gemm(o, nb, rows, &gy[q0..], ROW_MAJOR(ncols), &cols[..rows * nb], TRANSPOSED(nb), 1.0, &mut dw, ROW_MAJOR(rows));
            q0 = q1;
        }
    }
    dw
}

fn add_bias(out: &mut [f64], bias: &Tensor, n: usize, o: usize, plane: usize) {
    assert_eq!(bias.numel(), o, "bias must have one value per output channel");
    for b in 0..n {
        for (c, &bv) in bias.data().iter().enumerate() {
            let start = (b * o + c) * plane;
            for v in &mut out[start..start + plane] {
                *v += bv;
            }
        }
    }
}

fn bias_grad(g: &Tensor) -> Tensor {
    let [n, o, h, w] = g.shape();
    let plane = h * w;
    let mut db = vec![0.0; o];
    for b in 0..n {
        for (c, acc) in db.iter_mut().enumerate() {
            let start = (b * o + c) * plane;
            *acc += g.data()[start..start + plane].iter().sum::<f64>();
        }
    }
    Tensor::new([1, o, 1, 1], db)
}

impl Var {
    /// Zero-padded 2-D convolution. `weight: [o, c, kh, kw]`, `bias: [1, o, 1, 1]`.
    pub fn conv2d(&self, weight: &Var, bias: Option<&Var>, stride: usize, pad: usize) -> Var {
        let [n, c, ih, iw] = self.shape();
        let [o, wc, kh, kw] = weight.shape();
        assert_eq!(c, wc, "conv2d: input has {c} channels, kernel expects {wc}");
        let g = ConvGeom::forward(c, ih, iw, kh, kw, stride, pad);
        let mut out = conv_forward(self.value(), weight.value(), &g);
        if let Some(b) = bias {
            add_bias(&mut out, b.value(), n, o, g.oh * g.ow);
        }
        let value = Tensor::new([n, o, g.oh, g.ow], out);

        let mut inputs: Vec<&Var> = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        if !Var::any_tracked(&inputs) {
            return Var::constant(value);
        }
        let flags: Vec<bool> = inputs.iter().map(|v| v.is_tracked()).collect();
        let (x, w) = (self.value().clone(), weight.value().clone());
        Var::apply(&inputs, value, move |grad| {
            let mut grads = vec![
                flags[0].then(|| Tensor::new([n, c, ih, iw], conv_input_grad(grad, &w, &g, n))),
                flags[1].then(|| Tensor::new([o, c, kh, kw], conv_weight_grad(&x, grad, &g, o))),
            ];
            if flags.len() == 3 {
                grads.push(flags[2].then(|| bias_grad(grad)));
            }
            grads
        })
    }

    /// Transposed convolution (fractionally strided). `weight: [c_in, c_out, kh, kw]`.
    /// Output size is `(h - 1) * stride - 2 * pad + kh + out_pad`.
    pub fn conv_transpose2d(
        &self,
        weight: &Var,
        bias: Option<&Var>,
        stride: usize,
        pad: usize,
        out_pad: usize,
    ) -> Var {
        let [n, cin, h, w] = self.shape();
        let [wcin, cout, kh, kw] = weight.shape();
        assert_eq!(cin, wcin, "conv_transpose2d: input has {cin} channels, kernel expects {wcin}");
        assert!(out_pad < stride.max(1), "output padding must be smaller than the stride");
        let oh = (h - 1) * stride + kh + out_pad - 2 * pad;
        let ow = (w - 1) * stride + kw + out_pad - 2 * pad;
        // geometry of the adjoint convolution: image = our output, grid = our input
        let g = ConvGeom::forward(cout, oh, ow, kh, kw, stride, pad);
        debug_assert_eq!((g.oh, g.ow), (h, w));
        let mut out = conv_input_grad(self.value(), weight.value(), &g, n);
        if let Some(b) = bias {
            add_bias(&mut out, b.value(), n, cout, oh * ow);
        }
        let value = Tensor::new([n, cout, oh, ow], out);

        let mut inputs: Vec<&Var> = vec![self, weight];
        if let Some(b) = bias {
            inputs.push(b);
        }
        if !Var::any_tracked(&inputs) {
            return Var::constant(value);
        }
        let flags: Vec<bool> = inputs.iter().map(|v| v.is_tracked()).collect();
        let (x, wt) = (self.value().clone(), weight.value().clone());
        Var::apply(&inputs, value, move |grad| {
            let mut grads = vec![
                flags[0].then(|| Tensor::new([n, cin, h, w], conv_forward(grad, &wt, &g))),
                flags[1].then(|| Tensor::new([cin, cout, kh, kw], conv_weight_grad(grad, &x, &g, cin))),
            ];
            if flags.len() == 3 {
                grads.push(flags[2].then(|| bias_grad(grad)));
            }
            grads
        })
    }
}
