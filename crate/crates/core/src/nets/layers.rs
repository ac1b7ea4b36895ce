//! Convolutional building blocks shared by every transform.

use lvc_autodiff::{Tensor, Var};

use super::params::{Builder, Ctx, ParamId};
use crate::error::{Error, Result};

pub const LEAKY_SLOPE: f64 = 0.01;
/// Lower bound added to the squared GDN offset.
pub const GDN_BETA_MIN: f64 = 1e-6;

fn check_channels(x: &Var, expected: usize, what: &str) -> Result<()> {
    let got = x.shape()[1];
    if got != expected {
        return Err(Error::Geometry(format!(
            "{what} expects {expected} input channels, got {got}"
        )));
    }
    Ok(())
}

/// Zero-padded ("same" for odd kernels at stride 1) convolution with bias.
#[derive(Clone, Debug)]
pub struct Conv {
    weight: ParamId,
    bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
    stride: usize,
    pad: usize,
    mask: Option<Tensor>,
}

impl Conv {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Self {
        let mut s = b.scope(name);
        let w = s.glorot([c_out, c_in, k, k], c_in * k * k, c_out * k * k);
        Conv {
            weight: s.tensor("weight", w),
            bias: s.tensor("bias", Tensor::zeros([1, c_out, 1, 1])),
            c_in,
            c_out,
            stride,
            pad: k / 2,
            mask: None,
        }
    }

    /// Convolution whose kernel is multiplied by a fixed 0/1 `mask` (`[1, 1, k, k]`).
    /// Masked taps are not counted as learnable.
    pub fn masked(b: &mut Builder, name: &str, c_in: usize, c_out: usize, mask: Tensor) -> Self {
        let [_, _, k, kw] = mask.shape();
        assert_eq!(k, kw, "square masks only");
        let mut s = b.scope(name);
        let live = mask.data().iter().filter(|&&m| m != 0.0).count();
        let w = s.glorot([c_out, c_in, k, k], c_in * live.max(1), c_out * live.max(1));
        let w = lvc_autodiff::broadcast_zip(&w, &mask, |w, m| w * m);
        Conv {
            weight: s.tensor_with_learnable("weight", w, c_out * c_in * live),
            bias: s.tensor("bias", Tensor::zeros([1, c_out, 1, 1])),
            c_in,
            c_out,
            stride: 1,
            pad: k / 2,
            mask: Some(mask),
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        let w = match &self.mask {
            Some(m) => ctx.p(self.weight).mul(&Var::constant(m.clone())),
            None => ctx.p(self.weight).clone(),
        };
        x.conv2d(&w, Some(ctx.p(self.bias)), self.stride, self.pad)
    }
}

/// Stride-2 transposed convolution doubling the spatial size (kernel 5).
#[derive(Clone, Debug)]
pub struct ConvUp {
    weight: ParamId,
    bias: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl ConvUp {
    pub fn new(b: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Self {
        let k = 5;
        let mut s = b.scope(name);
        // each output sees roughly a quarter of the kernel taps
        let w = s.glorot([c_in, c_out, k, k], c_in * k * k / 4, c_out * k * k / 4);
        ConvUp {
            weight: s.tensor("weight", w),
            bias: s.tensor("bias", Tensor::zeros([1, c_out, 1, 1])),
            c_in,
            c_out,
        }
    }

    pub fn weight_id(&self) -> ParamId {
        self.weight
    }

    pub fn bias_id(&self) -> ParamId {
        self.bias
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        x.conv_transpose2d(ctx.p(self.weight), Some(ctx.p(self.bias)), 2, 2, 1)
    }
}

/// Generalized divisive normalization:
/// `y_c = x_c / sqrt(beta_c + sum_k gamma_ck x_k^2)` (inverse multiplies).
///
/// `beta = beta_raw^2 + GDN_BETA_MIN` and `gamma = gamma_raw^2` keep both
/// positive for any raw values.
#[derive(Clone, Debug)]
pub struct Gdn {
    beta: ParamId,
    gamma: ParamId,
    channels: usize,
    inverse: bool,
}

impl Gdn {
    pub fn new(b: &mut Builder, name: &str, channels: usize, inverse: bool) -> Self {
        let mut s = b.scope(name);
        let beta = Tensor::full([1, channels, 1, 1], (1.0 - GDN_BETA_MIN).sqrt());
        let g0 = 0.1f64.sqrt();
        let gamma = Tensor::from_fn([channels, channels, 1, 1], |[o, i, _, _]| if o == i { g0 } else { 0.0 });
        Gdn {
            beta: s.tensor("beta", beta),
            gamma: s.tensor("gamma", gamma),
            channels,
            inverse,
        }
    }

    pub fn beta_id(&self) -> ParamId {
        self.beta
    }

    pub fn gamma_id(&self) -> ParamId {
        self.gamma
    }

    /// `sqrt(beta + gamma * x^2)`, the per-element normalizer.
    pub fn norm(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        check_channels(x, self.channels, "GDN")?;
        let beta = ctx.p(self.beta).sqr().add_scalar(GDN_BETA_MIN);
        let gamma = ctx.p(self.gamma).sqr();
        Ok(x.sqr().conv2d(&gamma, Some(&beta), 1, 0).sqrt())
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let norm = self.norm(ctx, x)?;
        Ok(if self.inverse { x.mul(&norm) } else { x.div(&norm) })
    }
}

/// `x + conv3x3(lrelu(conv3x3(x)))`.
#[derive(Clone, Debug)]
pub struct ResidualBlock {
    pub conv1: Conv,
    pub conv2: Conv,
}

impl ResidualBlock {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        ResidualBlock {
            conv1: Conv::new(&mut s, "conv1", channels, channels, 3, 1),
            conv2: Conv::new(&mut s, "conv2", channels, channels, 3, 1),
        }
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        check_channels(x, self.conv1.c_in, "residual block")?;
        let h = self.conv1.forward(ctx, x).leaky_relu(LEAKY_SLOPE);
        Ok(x.add(&self.conv2.forward(ctx, &h)))
    }
}

/// Bottleneck unit used inside attention blocks: `x + 1x1(relu(3x3(relu(1x1(x)))))`.
#[derive(Clone, Debug)]
pub struct BottleneckUnit {
    reduce: Conv,
    spatial: Conv,
    expand: Conv,
}

impl BottleneckUnit {
    fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        let half = (channels / 2).max(1);
        BottleneckUnit {
            reduce: Conv::new(&mut s, "reduce", channels, half, 1, 1),
            spatial: Conv::new(&mut s, "spatial", half, half, 3, 1),
            expand: Conv::new(&mut s, "expand", half, channels, 1, 1),
        }
    }

    fn forward(&self, ctx: &Ctx, x: &Var) -> Var {
        let h = self.reduce.forward(ctx, x).relu();
        let h = self.spatial.forward(ctx, &h).relu();
        x.add(&self.expand.forward(ctx, &h))
    }

    fn convs(&self) -> [&Conv; 3] {
        [&self.reduce, &self.spatial, &self.expand]
    }
}

/// Simplified attention module: `x + sigmoid(branch(x)) * trunk(x)`, with
/// both trunk and branch made of three bottleneck units and a 1x1 conv.
#[derive(Clone, Debug)]
pub struct AttentionBlock {
    trunk: Vec<BottleneckUnit>,
    trunk_out: Conv,
    branch: Vec<BottleneckUnit>,
    branch_out: Conv,
    channels: usize,
}

impl AttentionBlock {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        let units = |s: &mut Builder, tag: &str| -> Vec<BottleneckUnit> {
            (0..3).map(|i| BottleneckUnit::new(s, &format!("{tag}{i}"), channels)).collect()
        };
        let trunk = units(&mut s, "trunk");
        let branch = units(&mut s, "branch");
        AttentionBlock {
            trunk,
            trunk_out: Conv::new(&mut s, "trunk_out", channels, channels, 1, 1),
            branch,
            branch_out: Conv::new(&mut s, "branch_out", channels, channels, 1, 1),
            channels,
        }
    }

    /// The attention mask `sigmoid(branch(x))`, strictly inside (0, 1).
    pub fn mask(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        check_channels(x, self.channels, "attention block")?;
        let mut h = x.clone();
        for u in &self.branch {
            h = u.forward(ctx, &h);
        }
        Ok(self.branch_out.forward(ctx, &h).sigmoid())
    }

    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let mask = self.mask(ctx, x)?;
        let mut t = x.clone();
        for u in &self.trunk {
            t = u.forward(ctx, &t);
        }
        let trunk = self.trunk_out.forward(ctx, &t);
        Ok(x.add(&mask.mul(&trunk)))
    }

    /// Every parameter of the trunk path (units and output conv).
    pub fn trunk_params(&self) -> Vec<ParamId> {
        let mut ids = Vec::new();
        for u in &self.trunk {
            for c in u.convs() {
                ids.extend([c.weight_id(), c.bias_id()]);
            }
        }
        ids.extend([self.trunk_out.weight_id(), self.trunk_out.bias_id()]);
        ids
    }
}

/// One stage of a feed-forward stack.
#[derive(Clone, Debug)]
pub enum Stage {
    Conv(Conv),
    Up(ConvUp),
    Gdn(Gdn),
    Residual(ResidualBlock),
    Attention(AttentionBlock),
    LeakyRelu,
}

impl Stage {
    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        Ok(match self {
            Stage::Conv(c) => {
                check_channels(x, c.c_in, "convolution")?;
                c.forward(ctx, x)
            }
            Stage::Up(u) => {
                check_channels(x, u.c_in, "transposed convolution")?;
                u.forward(ctx, x)
            }
            Stage::Gdn(g) => g.forward(ctx, x)?,
            Stage::Residual(r) => r.forward(ctx, x)?,
            Stage::Attention(a) => a.forward(ctx, x)?,
            Stage::LeakyRelu => x.leaky_relu(LEAKY_SLOPE),
        })
    }
}

/// Stages applied in order.
#[derive(Clone, Debug, Default)]
pub struct Stack {
    pub stages: Vec<Stage>,
}

impl Stack {
    pub fn forward(&self, ctx: &Ctx, x: &Var) -> Result<Var> {
        let mut h = x.clone();
        for s in &self.stages {
            h = s.forward(ctx, &h)?;
        }
        Ok(h)
    }

    pub fn last_up(&self) -> Option<&ConvUp> {
        match self.stages.last() {
            Some(Stage::Up(u)) => Some(u),
            _ => None,
        }
    }
}
