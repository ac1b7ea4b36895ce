//! Quantization, hyperprior entropy model and bitstream coding of latents.

pub mod arm;
pub mod laplace;
pub mod range_coder;

use lvc_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use self::arm::Arm;
use self::laplace::{laplace_bits_map, scale_from_raw};
use self::range_coder::{Decoder, Encoder, FreqTable};
use crate::error::{Error, Result};
use crate::nets::layers::{Conv, ConvUp, LEAKY_SLOPE};
use crate::nets::params::{Builder, Ctx, Mode};

/// Noise relaxation in training, rounding otherwise.
pub fn quantize(ctx: &Ctx, y: &Var) -> Var {
    match ctx.mode() {
        Mode::Train => y.add(&Var::constant(ctx.uniform_noise(y.shape()))),
        Mode::Eval => y.round(),
    }
}

/// Spatial size of the hyperprior grid for a latent of size `n`.
pub fn hyper_size(n: usize) -> usize {
    n.div_ceil(4)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RateReport {
    pub bits_y: f64,
    pub bits_z: f64,
    pub total_bits: f64,
}

impl RateReport {
    pub fn new(bits_y: f64, bits_z: f64) -> Self {
        RateReport {
            bits_y,
            bits_z,
            total_bits: bits_y + bits_z,
        }
    }
}

#[derive(Clone, Debug)]
pub struct HyperAnalysis {
    c1: Conv,
    c2: Conv,
    c3: Conv,
}

impl HyperAnalysis {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        HyperAnalysis {
            c1: Conv::new(&mut s, "conv0", channels, channels, 3, 1),
            c2: Conv::new(&mut s, "conv1", channels, channels, 5, 2),
            c3: Conv::new(&mut s, "conv2", channels, channels, 5, 2),
        }
    }

    pub fn forward(&self, ctx: &Ctx, y: &Var) -> Var {
        let h = self.c1.forward(ctx, y).leaky_relu(LEAKY_SLOPE);
        let h = self.c2.forward(ctx, &h).leaky_relu(LEAKY_SLOPE);
        self.c3.forward(ctx, &h)
    }
}

#[derive(Clone, Debug)]
pub struct HyperSynthesis {
    u1: ConvUp,
    u2: ConvUp,
    out: Conv,
    channels: usize,
}

impl HyperSynthesis {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        HyperSynthesis {
            u1: ConvUp::new(&mut s, "up0", channels, channels),
            u2: ConvUp::new(&mut s, "up1", channels, channels),
            out: Conv::new(&mut s, "out", channels, 2 * channels, 3, 1),
            channels,
        }
    }

    /// Laplace `(mu, b)` on a `h x w` grid (the upsampled output is cropped).
    pub fn forward(&self, ctx: &Ctx, z_hat: &Var, h: usize, w: usize) -> Result<(Var, Var)> {
        let [_, _, zh, zw] = z_hat.shape();
        if zh * 4 < h || zw * 4 < w {
            return Err(Error::Geometry(format!(
                "hyper latents {zh}x{zw} cannot cover a {h}x{w} grid"
            )));
        }
        let t = self.u1.forward(ctx, z_hat).leaky_relu(LEAKY_SLOPE);
        let t = self.u2.forward(ctx, &t).leaky_relu(LEAKY_SLOPE);
        let t = self.out.forward(ctx, &t).crop(0, 0, h, w);
        let mu = t.narrow_channels(0, self.channels);
        let b = scale_from_raw(&t.narrow_channels(self.channels, self.channels));
        Ok((mu, b))
    }
}

/// Quantized latents with their entropy parameters and per-element costs.
#[derive(Clone, Debug)]
pub struct Latents {
    pub y_hat: Var,
    pub z_hat: Var,
    pub mu: Var,
    pub b: Var,
    pub bits_y_map: Var,
    pub bits_z_map: Var,
}

impl Latents {
    pub fn bits_y(&self) -> Var {
        self.bits_y_map.sum_all()
    }

    pub fn bits_z(&self) -> Var {
        self.bits_z_map.sum_all()
    }

    pub fn bits(&self) -> Var {
        self.bits_y().add(&self.bits_z())
    }

    pub fn report(&self) -> RateReport {
        RateReport::new(self.bits_y_map.value().sum(), self.bits_z_map.value().sum())
    }
}

/// Hyperprior + ARM entropy model for one latent group.
#[derive(Clone, Debug)]
pub struct EntropyModel {
    pub analysis: HyperAnalysis,
    pub synthesis: HyperSynthesis,
    pub arm: Arm,
    channels: usize,
}

impl EntropyModel {
    pub fn new(b: &mut Builder, name: &str, channels: usize) -> Self {
        let mut s = b.scope(name);
        EntropyModel {
            analysis: HyperAnalysis::new(&mut s, "hyper_analysis", channels),
            synthesis: HyperSynthesis::new(&mut s, "hyper_synthesis", channels),
            arm: Arm::new(&mut s, "arm", channels),
            channels,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    fn check(&self, y: &Var) -> Result<()> {
        if y.shape()[1] != self.channels {
            return Err(Error::Geometry(format!(
                "entropy model expects {} channels, got {}",
                self.channels,
                y.shape()[1]
            )));
        }
        Ok(())
    }

    pub fn hyper_encode(&self, ctx: &Ctx, y: &Var) -> Var {
        quantize(ctx, &self.analysis.forward(ctx, y))
    }

    /// Quantizes `y`, runs the hyperprior and returns costs in bits.
    pub fn forward(&self, ctx: &Ctx, y: &Var) -> Result<Latents> {
        self.check(y)?;
        let y_hat = quantize(ctx, y);
        let z_hat = self.hyper_encode(ctx, y);
        self.latents(ctx, y_hat, z_hat)
    }

    /// Entropy parameters and costs for already quantized latents.
    fn latents(&self, ctx: &Ctx, y_hat: Var, z_hat: Var) -> Result<Latents> {
        let [_, _, h, w] = y_hat.shape();
        let (mu, b) = self.synthesis.forward(ctx, &z_hat, h, w)?;
        let bits_y_map = laplace_bits_map(&y_hat, &mu, &b)?;
        let bits_z_map = self.arm.bits_map(ctx, &z_hat)?;
        Ok(Latents {
            y_hat,
            z_hat,
            mu,
            b,
            bits_y_map,
            bits_z_map,
        })
    }

    /// Entropy-codes the eval-mode latents of `y` (batch 1): `z` then `y`.
    pub fn encode(&self, ctx: &Ctx, y: &Var) -> Result<(Vec<u8>, Latents)> {
        if y.shape()[0] != 1 {
            return Err(Error::InvalidInput("bitstream coding needs batch size 1".into()));
        }
        let lat = self.forward(ctx, y)?;
        let mut enc = Encoder::new();
        let z = lat.z_hat.value();
        let [_, cz, zh, zw] = z.shape();
        for pos in 0..zh * zw {
            let (mu, b) = self.arm.params_at(ctx, z, pos)?;
            for ch in 0..cz {
                enc.encode(z.at([0, ch, pos / zw, pos % zw]), &FreqTable::new(mu[ch], b[ch]))?;
            }
        }
        let (yv, mu, b) = (lat.y_hat.value().data(), lat.mu.value().data(), lat.b.value().data());
        for i in 0..yv.len() {
            enc.encode(yv[i], &FreqTable::new(mu[i], b[i]))?;
        }
        Ok((enc.finish(), lat))
    }

    /// Inverse of [`EntropyModel::encode`] for a latent of spatial size `h x w`.
    pub fn decode(&self, ctx: &Ctx, stream: &[u8], h: usize, w: usize) -> Result<Latents> {
        let mut dec = Decoder::new(stream)?;
        let (zh, zw) = (hyper_size(h), hyper_size(w));
        let c = self.channels;
        let mut z = Tensor::zeros([1, c, zh, zw]);
        for pos in 0..zh * zw {
            let (mu, b) = self.arm.params_at(ctx, &z, pos)?;
            for ch in 0..c {
                let v = dec.decode(&FreqTable::new(mu[ch], b[ch]))?;
                let o = z.offset([0, ch, pos / zw, pos % zw]);
                z.data_mut()[o] = v;
            }
        }
        let z = Var::constant(z);
        let (mu, b) = self.synthesis.forward(ctx, &z, h, w)?;
        let (mu, b) = (mu.value().data(), b.value().data());
        let y: Vec<f64> = (0..mu.len()).map(|i| dec.decode(&FreqTable::new(mu[i], b[i]))).collect::<Result<_>>()?;
        self.latents(ctx, Var::constant(Tensor::new([1, c, h, w], y)), z)
    }
}
