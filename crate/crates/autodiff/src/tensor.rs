use std::fmt;
use std::sync::Arc;

/// NCHW shape. Scalars are `[1, 1, 1, 1]`, convolution kernels are `[out, in, kh, kw]`.
pub type Shape = [usize; 4];

/// Dense, immutable-by-default f64 tensor with shared storage.
///
/// Cloning is cheap (reference counted); mutation goes through
/// [`Tensor::data_mut`], which copies on write when the storage is shared.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Shape,
    data: Arc<Vec<f64>>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let preview: Vec<f64> = self.data.iter().take(8).copied().collect();
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("head", &preview)
            .finish()
    }
}

pub fn numel(shape: &Shape) -> usize {
    shape.iter().product()
}

impl Tensor {
    pub fn new(shape: Shape, data: Vec<f64>) -> Self {
        assert_eq!(
            numel(&shape),
            data.len(),
            "tensor data length {} does not match shape {:?}",
            data.len(),
            shape
        );
        Tensor {
            shape,
            data: Arc::new(data),
        }
    }

    pub fn zeros(shape: Shape) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn ones(shape: Shape) -> Self {
        Self::full(shape, 1.0)
    }

    pub fn full(shape: Shape, value: f64) -> Self {
        Tensor::new(shape, vec![value; numel(&shape)])
    }

    pub fn scalar(value: f64) -> Self {
        Tensor::new([1, 1, 1, 1], vec![value])
    }

    pub fn from_fn(shape: Shape, mut f: impl FnMut([usize; 4]) -> f64) -> Self {
        let mut data = Vec::with_capacity(numel(&shape));
        for n in 0..shape[0] {
            for c in 0..shape[1] {
                for h in 0..shape[2] {
                    for w in 0..shape[3] {
                        data.push(f([n, c, h, w]));
                    }
                }
            }
        }
        Tensor::new(shape, data)
    }

    #[inline]
    pub fn shape(&self) -> Shape {
        self.shape
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; clones the storage if it is shared.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::make_mut(&mut self.data).as_mut_slice()
    }

    pub fn into_vec(self) -> Vec<f64> {
        Arc::try_unwrap(self.data).unwrap_or_else(|shared| (*shared).clone())
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> f64 {
        assert_eq!(self.numel(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    #[inline]
    pub fn offset(&self, idx: [usize; 4]) -> usize {
        let [_, c, h, w] = self.shape;
        ((idx[0] * c + idx[1]) * h + idx[2]) * w + idx[3]
    }

    #[inline]
    pub fn at(&self, idx: [usize; 4]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn reshape(&self, shape: Shape) -> Tensor {
        assert_eq!(numel(&shape), self.numel(), "reshape {:?} -> {:?}", self.shape, shape);
        Tensor {
            shape,
            data: self.data.clone(),
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Tensor {
        Tensor::new(self.shape, self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_map(&self, other: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
        assert_eq!(self.shape, other.shape, "zip_map shape mismatch");
        Tensor::new(
            self.shape,
            self.data
                .iter()
                .zip(other.data.iter())
                .map(|(&a, &b)| f(a, b))
                .collect(),
        )
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn mean(&self) -> f64 {
        self.sum() / self.numel() as f64
    }

    pub fn min(&self) -> f64 {
        self.data.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.data.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn sq_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        assert_eq!(self.shape, other.shape, "max_abs_diff shape mismatch");
        self.data
            .iter()
            .zip(other.data.iter())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    pub fn add_assign(&mut self, other: &Tensor) {
        assert_eq!(self.shape, other.shape, "add_assign shape mismatch");
        for (a, b) in self.data_mut().iter_mut().zip(other.data.iter()) {
            *a += b;
        }
    }

    pub fn scale(&self, k: f64) -> Tensor {
        self.map(|v| v * k)
    }

    /// Channels `[start, start + len)`.
    pub fn narrow_channels(&self, start: usize, len: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        assert!(start + len <= c, "narrow_channels out of range");
        let plane = h * w;
        let mut out = Vec::with_capacity(n * len * plane);
        for b in 0..n {
            let base = (b * c + start) * plane;
            out.extend_from_slice(&self.data[base..base + len * plane]);
        }
        Tensor::new([n, len, h, w], out)
    }

    pub fn cat_channels(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let [n, _, h, w] = parts[0].shape;
        for p in parts {
            assert!(
                p.shape[0] == n && p.shape[2] == h && p.shape[3] == w,
                "cat_channels shape mismatch: {:?} vs {:?}",
                parts[0].shape,
                p.shape
            );
        }
        let c_total: usize = parts.iter().map(|p| p.shape[1]).sum();
        let plane = h * w;
        let mut out = Vec::with_capacity(n * c_total * plane);
        for b in 0..n {
            for p in parts {
                let c = p.shape[1];
                out.extend_from_slice(&p.data[b * c * plane..(b + 1) * c * plane]);
            }
        }
        Tensor::new([n, c_total, h, w], out)
    }

    /// Batch items `[start, start + len)`.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Tensor {
        let [n, c, h, w] = self.shape;
        assert!(start + len <= n, "narrow_batch out of range");
        let item = c * h * w;
        Tensor::new(
            [len, c, h, w],
            self.data[start * item..(start + len) * item].to_vec(),
        )
    }

    pub fn cat_batch(parts: &[&Tensor]) -> Tensor {
        assert!(!parts.is_empty());
        let [_, c, h, w] = parts[0].shape;
        let mut out = Vec::new();
        let mut n = 0;
        for p in parts {
            assert_eq!(&p.shape[1..], &[c, h, w], "cat_batch shape mismatch");
            n += p.shape[0];
            out.extend_from_slice(&p.data);
        }
        Tensor::new([n, c, h, w], out)
    }

    /// Spatial window `[h0, h0 + h) x [w0, w0 + w)`.
    pub fn crop(&self, h0: usize, w0: usize, h: usize, w: usize) -> Tensor {
        let [n, c, ih, iw] = self.shape;
        assert!(h0 + h <= ih && w0 + w <= iw, "crop out of range");
        let mut out = Vec::with_capacity(n * c * h * w);
        for plane in 0..n * c {
            for y in 0..h {
                let start = plane * ih * iw + (h0 + y) * iw + w0;
                out.extend_from_slice(&self.data[start..start + w]);
            }
        }
        Tensor::new([n, c, h, w], out)
    }
}

/// Broadcast-compatible output shape, or `None`.
pub fn broadcast_shape(a: &Shape, b: &Shape) -> Option<Shape> {
    let mut out = [0; 4];
    for i in 0..4 {
        out[i] = match (a[i], b[i]) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => return None,
        };
    }
    Some(out)
}

fn strides_for(shape: &Shape, out: &Shape) -> [usize; 4] {
    let dense = [
        shape[1] * shape[2] * shape[3],
        shape[2] * shape[3],
        shape[3],
        1,
    ];
    let mut s = [0; 4];
    for i in 0..4 {
        s[i] = if shape[i] == out[i] { dense[i] } else { 0 };
    }
    s
}

/// Elementwise binary op with NCHW broadcasting over size-1 dimensions.
pub fn broadcast_zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Tensor {
    if a.shape == b.shape {
        return a.zip_map(b, f);
    }
    let out = broadcast_shape(&a.shape, &b.shape)
        .unwrap_or_else(|| panic!("cannot broadcast {:?} with {:?}", a.shape, b.shape));
    let sa = strides_for(&a.shape, &out);
    let sb = strides_for(&b.shape, &out);
    let (ad, bd) = (a.data(), b.data());
    let mut data = Vec::with_capacity(numel(&out));
    for n in 0..out[0] {
        for c in 0..out[1] {
            for h in 0..out[2] {
                let ia = n * sa[0] + c * sa[1] + h * sa[2];
                let ib = n * sb[0] + c * sb[1] + h * sb[2];
                for w in 0..out[3] {
                    data.push(f(ad[ia + w * sa[3]], bd[ib + w * sb[3]]));
                }
            }
        }
    }
    Tensor::new(out, data)
}

/// Sums `t` down to `shape`, reversing a broadcast.
pub fn sum_to(t: &Tensor, shape: &Shape) -> Tensor {
    if &t.shape == shape {
        return t.clone();
    }
    let src = t.shape;
    for i in 0..4 {
        assert!(
            shape[i] == src[i] || shape[i] == 1,
            "sum_to {:?} -> {:?} is not a broadcast reduction",
            src,
            shape
        );
    }
    let so = strides_for(shape, &src);
    let mut out = vec![0.0; numel(shape)];
    let d = t.data();
    let mut k = 0;
    for n in 0..src[0] {
        for c in 0..src[1] {
            for h in 0..src[2] {
                let base = n * so[0] + c * so[1] + h * so[2];
                for w in 0..src[3] {
                    out[base + w * so[3]] += d[k];
                    k += 1;
                }
            }
        }
    }
    Tensor::new(*shape, out)
}
