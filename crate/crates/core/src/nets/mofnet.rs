//! Motion network: transmits two flows, the prediction weighting and the
//! coding-mode map.

use lvc_autodiff::{Tensor, Var};

use super::layers::{AttentionBlock, Conv, ConvUp, ResidualBlock, Stack, Stage};
use super::params::{Builder, Ctx, ParamStore};
use crate::error::{Error, Result};

/// Spatial stride of the sent latents.
pub const SENT_STRIDE: usize = 16;
/// Spatial stride of the shortcut latents.
pub const SHORTCUT_STRIDE: usize = 4;
pub const OUT_CHANNELS: usize = 6;

/// Decoded motion information. Flows are in pixels, `(x, y)` channel order.
#[derive(Clone, Debug)]
pub struct MofnetOutput {
    pub v_p: Var,
    pub v_f: Var,
    pub beta: Var,
    pub alpha: Var,
}

#[derive(Clone, Debug)]
pub struct MofNet {
    analysis: Stack,
    shortcut: Stack,
    synth_up: Stack,
    synth_out: Stack,
    f: usize,
}

fn conv(b: &mut Builder, name: &str, c_in: usize, c_out: usize, k: usize, stride: usize) -> Stage {
    Stage::Conv(Conv::new(b, name, c_in, c_out, k, stride))
}

fn up(b: &mut Builder, name: &str, c_in: usize, c_out: usize) -> Stage {
    Stage::Up(ConvUp::new(b, name, c_in, c_out))
}

fn res(b: &mut Builder, name: &str, c: usize) -> Stage {
    Stage::Residual(ResidualBlock::new(b, name, c))
}

fn att(b: &mut Builder, name: &str, c: usize) -> Stage {
    Stage::Attention(AttentionBlock::new(b, name, c))
}

pub(crate) fn check_frames(what: &str, frames: &[&Var], stride: usize) -> Result<()> {
    let shape = frames[0].shape();
    for f in frames {
        let s = f.shape();
        if s[0] != shape[0] || s[2] != shape[2] || s[3] != shape[3] || s[1] != 3 {
            return Err(Error::Geometry(format!("{what}: frames {:?} and {:?} do not align", shape, s)));
        }
    }
    if shape[2] % stride != 0 || shape[3] % stride != 0 {
        return Err(Error::Geometry(format!(
            "{what}: {}x{} is not a multiple of {stride}",
            shape[2], shape[3]
        )));
    }
    Ok(())
}

impl MofNet {
    pub fn new(b: &mut Builder, name: &str, f: usize) -> Self {
        let mut s = b.scope(name);
        let use_lrelu = || Stage::LeakyRelu;
        let analysis = {
            let mut a = s.scope("analysis");
            Stack {
                stages: vec![
                    conv(&mut a, "conv0", 9, f, 5, 2),
                    use_lrelu(),
                    res(&mut a, "res0", f),
                    conv(&mut a, "conv1", f, f, 5, 2),
                    use_lrelu(),
                    res(&mut a, "res1", f),
                    att(&mut a, "att0", f),
                    conv(&mut a, "conv2", f, f, 5, 2),
                    use_lrelu(),
                    res(&mut a, "res2", f),
                    conv(&mut a, "conv3", f, f, 5, 2),
                    att(&mut a, "att1", f),
                ],
            }
        };
        let shortcut = {
            let mut a = s.scope("shortcut");
            Stack {
                stages: vec![
                    conv(&mut a, "conv0", 6, f, 5, 2),
                    use_lrelu(),
                    res(&mut a, "res0", f),
                    conv(&mut a, "conv1", f, f, 5, 2),
                    res(&mut a, "res1", f),
                ],
            }
        };
        let synth_up = {
            let mut a = s.scope("synthesis");
            Stack {
                stages: vec![
                    att(&mut a, "att0", f),
                    up(&mut a, "up0", f, f),
                    use_lrelu(),
                    up(&mut a, "up1", f, f),
                    use_lrelu(),
                ],
            }
        };
        let synth_out = {
            let mut a = s.scope("synthesis");
            Stack {
                stages: vec![
                    conv(&mut a, "merge", 2 * f, f, 3, 1),
                    use_lrelu(),
                    res(&mut a, "res0", f),
                    up(&mut a, "up2", f, f),
                    use_lrelu(),
                    res(&mut a, "res1", f),
                    up(&mut a, "up3", f, OUT_CHANNELS),
                ],
            }
        };
        MofNet {
            analysis,
            shortcut,
            synth_up,
            synth_out,
            f,
        }
    }

    /// Shrinks the output layer and centres the weight maps at 0.5 so a fresh
    /// model starts with near-zero motion and an even blend.
    pub fn init_output(&self, store: &mut ParamStore) {
        let last = self.synth_out.last_up().expect("synthesis ends in an upsampling layer");
        let w = store.get(last.weight_id()).scale(0.1);
        store.set(last.weight_id(), w);
        let bias = Tensor::from_fn([1, OUT_CHANNELS, 1, 1], |[_, c, _, _]| if c >= 4 { 0.5 } else { 0.0 });
        store.set(last.bias_id(), bias);
    }

    pub fn features(&self) -> usize {
        self.f
    }

    /// Sent latents from the current frame and both references.
    pub fn analysis(&self, ctx: &Ctx, x: &Var, ref_p: &Var, ref_f: &Var) -> Result<Var> {
        check_frames("MOFNet analysis", &[x, ref_p, ref_f], SENT_STRIDE)?;
        self.analysis.forward(ctx, &Var::cat_channels(&[x, ref_p, ref_f]))
    }

    /// Zero-rate latents from the references only.
    pub fn shortcut(&self, ctx: &Ctx, ref_p: &Var, ref_f: &Var) -> Result<Var> {
        check_frames("MOFNet shortcut", &[ref_p, ref_f], SENT_STRIDE)?;
        self.shortcut.forward(ctx, &Var::cat_channels(&[ref_p, ref_f]))
    }

    pub fn synthesis(&self, ctx: &Ctx, y_hat: &Var, y_prime: &Var) -> Result<MofnetOutput> {
        let [n, c, h, w] = y_hat.shape();
        let expected = [n, self.f, h * 4, w * 4];
        if c != self.f || y_prime.shape() != expected {
            return Err(Error::Geometry(format!(
                "MOFNet synthesis: sent latents {:?} need shortcut latents {:?}, got {:?}",
                y_hat.shape(),
                expected,
                y_prime.shape()
            )));
        }
        let up = self.synth_up.forward(ctx, y_hat)?;
        let out = self.synth_out.forward(ctx, &Var::cat_channels(&[&up, y_prime]))?;
        Ok(MofnetOutput {
            v_p: out.narrow_channels(0, 2),
            v_f: out.narrow_channels(2, 2),
            beta: out.narrow_channels(4, 1).clamp(0.0, 1.0),
            alpha: out.narrow_channels(5, 1).clamp(0.0, 1.0),
        })
    }
}
