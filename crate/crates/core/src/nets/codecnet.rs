//! Conditional coder for the part of the frame selected by the mode map.

use lvc_autodiff::Var;

use super::layers::{AttentionBlock, Conv, ConvUp, Gdn, Stack, Stage};
use super::mofnet::{check_frames, SENT_STRIDE};
use super::params::{Builder, Ctx};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct CodecNet {
    analysis: Stack,
    shortcut: Stack,
    synthesis: Stack,
    f: usize,
}

fn down(b: &mut Builder, i: usize, c_in: usize, f: usize, gdn: bool) -> Vec<Stage> {
    let mut v = vec![Stage::Conv(Conv::new(b, &format!("conv{i}"), c_in, f, 5, 2))];
    if gdn {
        v.push(Stage::Gdn(Gdn::new(b, &format!("gdn{i}"), f, false)));
    }
    v
}

fn up(b: &mut Builder, i: usize, c_in: usize, c_out: usize, igdn: bool) -> Vec<Stage> {
    let mut v = vec![Stage::Up(ConvUp::new(b, &format!("up{i}"), c_in, c_out))];
    if igdn {
        v.push(Stage::Gdn(Gdn::new(b, &format!("igdn{i}"), c_out, true)));
    }
    v
}

impl CodecNet {
    pub fn new(b: &mut Builder, name: &str, f: usize) -> Self {
        let mut s = b.scope(name);
        let analysis = {
            let mut a = s.scope("analysis");
            let mut st = down(&mut a, 0, 6, f, true);
            st.extend(down(&mut a, 1, f, f, true));
            st.push(Stage::Attention(AttentionBlock::new(&mut a, "att0", f)));
            st.extend(down(&mut a, 2, f, f, true));
            st.extend(down(&mut a, 3, f, f, false));
            st.push(Stage::Attention(AttentionBlock::new(&mut a, "att1", f)));
            Stack { stages: st }
        };
        let shortcut = {
            let mut a = s.scope("shortcut");
            let mut st = down(&mut a, 0, 3, f, true);
            st.extend(down(&mut a, 1, f, f, true));
            st.extend(down(&mut a, 2, f, f, true));
            st.extend(down(&mut a, 3, f, f, false));
            Stack { stages: st }
        };
        let synthesis = {
            let mut a = s.scope("synthesis");
            let mut st = vec![Stage::Attention(AttentionBlock::new(&mut a, "att0", 2 * f))];
            st.extend(up(&mut a, 0, 2 * f, f, true));
            st.extend(up(&mut a, 1, f, f, true));
            st.push(Stage::Attention(AttentionBlock::new(&mut a, "att1", f)));
            st.extend(up(&mut a, 2, f, f, true));
            st.extend(up(&mut a, 3, f, 3, false));
            Stack { stages: st }
        };
        CodecNet {
            analysis,
            shortcut,
            synthesis,
            f,
        }
    }

    pub fn features(&self) -> usize {
        self.f
    }

    /// Sent latents from `alpha * x` and `alpha * prediction`.
    pub fn analysis(&self, ctx: &Ctx, masked_x: &Var, masked_pred: &Var) -> Result<Var> {
        check_frames("CodecNet analysis", &[masked_x, masked_pred], SENT_STRIDE)?;
        self.analysis.forward(ctx, &Var::cat_channels(&[masked_x, masked_pred]))
    }

    /// Zero-rate latents from `alpha * prediction`.
    pub fn shortcut(&self, ctx: &Ctx, masked_pred: &Var) -> Result<Var> {
        check_frames("CodecNet shortcut", &[masked_pred], SENT_STRIDE)?;
        self.shortcut.forward(ctx, masked_pred)
    }

    /// Full-resolution contribution (unbounded).
    pub fn synthesis(&self, ctx: &Ctx, y_hat: &Var, y_prime: &Var) -> Result<Var> {
        if y_hat.shape() != y_prime.shape() || y_hat.shape()[1] != self.f {
            return Err(Error::Geometry(format!(
                "CodecNet synthesis: sent latents {:?} and shortcut latents {:?}",
                y_hat.shape(),
                y_prime.shape()
            )));
        }
        self.synthesis.forward(ctx, &Var::cat_channels(&[y_hat, y_prime]))
    }
}
