//! Image dumps of one coded frame and latent-group ablations.

use std::path::{Path, PathBuf};

use lvc_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use crate::coder::{FrameResult, LatentGroup};
use crate::error::{Error, Result};
use crate::motion::flow_to_color;
use crate::nets::{Ctx, Model};
use crate::video_io::{write_image, yuv_to_rgb, FrameKind};

/// File names written by [`diagnostics`].
pub const DIAGNOSTIC_IMAGES: [&str; 8] = [
    "alpha.png",
    "beta.png",
    "flow_past.png",
    "flow_future.png",
    "skip_part.png",
    "codec_part.png",
    "rate_mofnet.png",
    "rate_codecnet.png",
];

/// Bilinear resize of every channel (half-pixel centres, edge clamping).
pub fn resize_bilinear(t: &Tensor, h: usize, w: usize) -> Tensor {
    let [n, c, sh, sw] = t.shape();
    let coord = |i: usize, src: usize, dst: usize| -> (usize, usize, f64) {
        let x = ((i as f64 + 0.5) * src as f64 / dst as f64 - 0.5).clamp(0.0, (src - 1) as f64);
        let lo = x.floor() as usize;
        (lo, (lo + 1).min(src - 1), x - lo as f64)
    };
    Tensor::from_fn([n, c, h, w], |[b, ch, i, j]| {
        let (y0, y1, fy) = coord(i, sh, h);
        let (x0, x1, fx) = coord(j, sw, w);
        let at = |y, x| t.at([b, ch, y, x]);
        (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
    })
}

/// Per-pixel rate of one latent group at frame size, in bits.
///
/// Element rates are summed over channels, each latent grid is upsampled to
/// the padded frame, cropped, and rescaled so the map adds up to the group's
/// estimated rate exactly.
pub fn rate_map(group: Option<&LatentGroup>, padded: (usize, usize), h: usize, w: usize) -> Tensor {
    let Some(g) = group else {
        return Tensor::zeros([1, 1, h, w]);
    };
    let mut total = Tensor::zeros([1, 1, h, w]);
    for map in [&g.latents.bits_y_map, &g.latents.bits_z_map] {
        let per_pos = map.value().narrow_batch(0, 1);
        let summed = Var::constant(per_pos).sum_channels().value().clone();
        let want = summed.sum();
        let up = resize_bilinear(&summed, padded.0, padded.1).crop(0, 0, h, w);
        let have = up.sum();
        if have > 0.0 {
            total.add_assign(&up.scale(want / have));
        }
    }
    total
}

/// Blue at 0, red at 1.
pub fn red_blue(map: &Tensor) -> Tensor {
    let [_, _, h, w] = map.shape();
    Tensor::from_fn([1, 3, h, w], |[_, c, i, j]| {
        let v = map.at([0, 0, i, j]).clamp(0.0, 1.0);
        match c {
            0 => v,
            1 => 0.0,
            _ => 1.0 - v,
        }
    })
}

/// Gray-scale heat map scaled by its maximum.
pub fn heat(map: &Tensor) -> Tensor {
    let max = map.max();
    if max > 0.0 {
        map.scale(1.0 / max)
    } else {
        map.clone()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticSet {
    pub paths: Vec<PathBuf>,
    pub rate_m: f64,
    pub rate_c: f64,
    /// Sums of the written rate maps before conversion to 8 bits.
    pub rate_map_m: f64,
    pub rate_map_c: f64,
}

/// Writes the eight diagnostic images of the first batch item of `r`.
pub fn diagnostics(r: &FrameResult, dir: &Path) -> Result<DiagnosticSet> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let first = |v: &Var| v.value().narrow_batch(0, 1);
    let [_, _, h, w] = r.x_hat.shape();
    let rm = rate_map(r.mofnet.as_ref(), r.padded, h, w);
    let rc = rate_map(r.codecnet.as_ref(), r.padded, h, w);
    let images = [
        red_blue(&first(&r.alpha)),
        red_blue(&first(&r.beta)),
        flow_to_color(&first(&r.v_p)),
        flow_to_color(&first(&r.v_f)),
        yuv_to_rgb(&first(&r.skip_part)),
        yuv_to_rgb(&first(&r.codec_part)),
        heat(&rm),
        heat(&rc),
    ];
    let mut paths = Vec::new();
    for (name, img) in DIAGNOSTIC_IMAGES.iter().zip(&images) {
        let p = dir.join(name);
        write_image(img, &p)?;
        paths.push(p);
    }
    let n = r.x_hat.shape()[0] as f64;
    Ok(DiagnosticSet {
        paths,
        rate_m: r.rate_m() / n,
        rate_c: r.rate_c() / n,
        rate_map_m: rm.sum(),
        rate_map_c: rc.sum(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ablation {
    ShortcutOnly,
    SentOnly,
    Both,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AblationNet {
    Mofnet,
    Codecnet,
}

/// Reruns one synthesis transform with the other latent group zeroed.
///
/// For MOFNet the result is the future flow `v_f` (cropped to frame size);
/// for CodecNet it is the partial reconstruction.
pub fn ablation_synthesis(model: &Model, ctx: &Ctx, r: &FrameResult, which: Ablation, net: AblationNet) -> Result<Tensor> {
    let [_, _, h, w] = r.x_hat.shape();
    let group = match net {
        AblationNet::Mofnet => r.mofnet.as_ref(),
        AblationNet::Codecnet => r.codecnet.as_ref(),
    }
    .ok_or_else(|| Error::InvalidInput(format!("frame {} has no {net:?} latents", r.index)))?;
    let zero = |v: &Var| Var::constant(Tensor::zeros(v.shape()));
    let (sent, shortcut) = match which {
        Ablation::ShortcutOnly => (zero(&group.latents.y_hat), group.shortcut.clone()),
        Ablation::SentOnly => (group.latents.y_hat.clone(), zero(&group.shortcut)),
        Ablation::Both => (group.latents.y_hat.clone(), group.shortcut.clone()),
    };
    let out = match net {
        AblationNet::Mofnet => model.mofnet.synthesis(ctx, &sent, &shortcut)?.v_f,
        AblationNet::Codecnet => model.codecnet.synthesis(ctx, &sent, &shortcut)?,
    };
    Ok(out.value().crop(0, 0, h, w))
}

/// Writes the three ablation images of `net` for frame `r`, as
/// `<net>_<which>.png` (flows colourised, reconstructions converted to RGB).
pub fn write_ablations(model: &Model, ctx: &Ctx, r: &FrameResult, net: AblationNet, dir: &Path) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    if net == AblationNet::Mofnet && r.kind == FrameKind::I {
        return Ok(Vec::new());
    }
    let mut paths = Vec::new();
    for (which, tag) in [(Ablation::ShortcutOnly, "shortcut_only"), (Ablation::SentOnly, "sent_only"), (Ablation::Both, "both")] {
        let t = ablation_synthesis(model, ctx, r, which, net)?.narrow_batch(0, 1);
        let img = match net {
            AblationNet::Mofnet => flow_to_color(&t),
            AblationNet::Codecnet => yuv_to_rgb(&t),
        };
        let name = match net {
            AblationNet::Mofnet => format!("mofnet_{tag}.png"),
            AblationNet::Codecnet => format!("codecnet_{tag}.png"),
        };
        let p = dir.join(name);
        write_image(&img, &p)?;
        paths.push(p);
    }
    Ok(paths)
}
