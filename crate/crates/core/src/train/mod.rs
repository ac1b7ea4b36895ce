//! End-to-end rate-distortion training on three-frame units.

pub mod data;
pub mod optim;

use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use lvc_autodiff::{Tensor, Var};
use serde::{Deserialize, Serialize};

use self::data::SceneStream;
use self::optim::{clip_grad_norm, Adam};
use crate::checkpoint::Checkpoint;
use crate::coder::{code_sequence, CodingConfig, CodingMode, FrameResult, SequenceIo};
use crate::error::{Error, Result};
use crate::nets::{Model, ModelConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda: f64,
    pub batch_size: usize,
    pub lr: f64,
    pub lr_final: f64,
    /// Fraction of the run after which `lr_final` is used.
    pub decay_at: f64,
    pub steps: u64,
    pub crop: usize,
    pub features: usize,
    pub seed: u64,
    pub clip_norm: f64,
    pub checkpoint_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 0.0016,
            batch_size: 4,
            lr: 1e-4,
            lr_final: 1e-5,
            decay_at: 0.9,
            steps: 2000,
            crop: 64,
            features: 128,
            seed: 0,
            clip_norm: 1.0,
            checkpoint_every: 500,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::InvalidInput(format!("training config: {what}")));
        if !(self.lambda > 0.0) {
            return bad("lambda must be positive");
        }
        if !(self.lr >= 0.0 && self.lr_final >= 0.0 && self.lr_final <= self.lr) {
            return bad("learning rates must satisfy 0 <= lr_final <= lr");
        }
        if !(0.0..=1.0).contains(&self.decay_at) {
            return bad("decay_at must lie in [0, 1]");
        }
        if self.batch_size == 0 || self.crop == 0 || self.crop % 16 != 0 {
            return bad("batch_size must be positive and crop a positive multiple of 16");
        }
        if !(self.clip_norm > 0.0) {
            return bad("clip_norm must be positive");
        }
        Ok(())
    }

    pub fn model_config(&self) -> ModelConfig {
        ModelConfig {
            features: self.features,
        }
    }
}

/// Piecewise-constant schedule: `lr` before `decay_at * steps`, `lr_final` after.
pub fn lr_schedule(step: u64, config: &TrainConfig) -> f64 {
    if (step as f64) < config.decay_at * config.steps as f64 {
        config.lr
    } else {
        config.lr_final
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLoss {
    pub index: usize,
    pub mse: f64,
    /// Bits per item of the batch.
    pub bits: f64,
    /// Bits over `3 * H * W`.
    pub bpp: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub per_frame: Vec<FrameLoss>,
}

/// `sum_t MSE(x_hat_t, x_t) + lambda * bits_t / (3 H W)`, with bits averaged
/// over the batch. `originals` is indexed by frame number.
pub fn rd_loss(results: &[FrameResult], originals: &[Var], lambda: f64) -> Result<(Var, LossBreakdown)> {
    let mut total: Option<Var> = None;
    let mut per_frame = Vec::with_capacity(results.len());
    for r in results {
        let x = originals
            .get(r.index)
            .ok_or_else(|| Error::InvalidInput(format!("no original for frame {}", r.index)))?;
        let [n, c, h, w] = x.shape();
        if r.x_hat.shape() != x.shape() {
            return Err(Error::Geometry(format!("decoded {:?} vs original {:?}", r.x_hat.shape(), x.shape())));
        }
        let mse = r.x_hat.sub(x).sqr().mean_all();
        let bits = r.bits_m.add(&r.bits_c).mul_scalar(1.0 / n as f64);
        let bpp = bits.mul_scalar(1.0 / (c * h * w) as f64);
        per_frame.push(FrameLoss {
            index: r.index,
            mse: mse.value().item(),
            bits: bits.value().item(),
            bpp: bpp.value().item(),
        });
        let term = mse.add(&bpp.mul_scalar(lambda));
        total = Some(match total {
            Some(t) => t.add(&term),
            None => term,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidInput("no frames to score".into()))?;
    let breakdown = LossBreakdown {
        total: total.value().item(),
        per_frame,
    };
    Ok((total, breakdown))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepReport {
    pub step: u64,
    pub loss: LossBreakdown,
    pub grad_norm: f64,
    pub lr: f64,
}

/// Codes `I0, P2, B1` in training mode and applies one joint update.
/// `batch` holds frames 0, 1 and 2, each `[n, 3, H, W]`.
pub fn train_step(
    model: &mut Model,
    opt: &mut Adam,
    batch: &[Tensor; 3],
    config: &TrainConfig,
    step: u64,
) -> Result<StepReport> {
    let [n, _, h, w] = batch[0].shape();
    let frames: Vec<Var> = batch.iter().cloned().map(Var::constant).collect();
    let noise_seed = config.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ step;
    let ctx = model.train_ctx(noise_seed);
    let unit = CodingConfig {
        lambda: config.lambda,
        ..CodingConfig::new(CodingMode::Ra).with_gop_size(2)
    };
    let inputs: Vec<Option<Var>> = frames.iter().cloned().map(Some).collect();
    let results = code_sequence(model, &ctx, &inputs, (n, h, w), &unit, SequenceIo::Estimate)?;
    let (loss, breakdown) = rd_loss(&results, &frames, config.lambda)?;
    if !breakdown.total.is_finite() {
        return Err(Error::Numerical(format!("loss is {} at step {step}: {breakdown:?}", breakdown.total)));
    }
    let mut grads = ctx.backward(&loss);
    let grad_norm = clip_grad_norm(&mut grads, config.clip_norm);
    if !grad_norm.is_finite() {
        return Err(Error::Numerical(format!("gradient norm is {grad_norm} at step {step}")));
    }
    let lr = lr_schedule(step, config);
    opt.step(&mut model.store, &grads, lr);
    Ok(StepReport {
        step,
        loss: breakdown,
        grad_norm,
        lr,
    })
}

/// CSV header of the training curve.
pub const CURVE_HEADER: &str = "step,loss,mse_i0,mse_p2,mse_b1,bpp_i0,bpp_p2,bpp_b1,lr,grad_norm";

fn curve_row(r: &StepReport) -> String {
    let f = &r.loss.per_frame;
    format!(
        "{},{},{},{},{},{},{},{},{},{}",
        r.step, r.loss.total, f[0].mse, f[1].mse, f[2].mse, f[0].bpp, f[1].bpp, f[2].bpp, r.lr, r.grad_norm
    )
}

/// Training loop with periodic checkpoints and a CSV curve in `out_dir`.
pub struct Trainer {
    pub config: TrainConfig,
    pub model: Model,
    pub opt: Adam,
    /// Next step to run.
    pub step: u64,
    out_dir: Option<PathBuf>,
    data: SceneStream,
}

impl Trainer {
    pub fn new(config: TrainConfig, out_dir: Option<&Path>) -> Result<Self> {
        config.validate()?;
        let model = Model::new(config.model_config(), config.seed)?;
        let opt = Adam::new(&model.store);
        let data = SceneStream::new(config.seed ^ 0x5eed, config.crop);
        Ok(Trainer {
            config,
            model,
            opt,
            step: 0,
            out_dir: out_dir.map(Path::to_path_buf),
            data,
        })
    }

    /// Continues from a checkpoint; the data stream is replayed so a resumed
    /// run sees the same batches as an uninterrupted one.
    pub fn resume(config: TrainConfig, ckpt: Checkpoint, out_dir: Option<&Path>) -> Result<Self> {
        let mut t = Trainer::new(config, out_dir)?;
        if ckpt.model.config != t.config.model_config() {
            return Err(Error::InvalidInput(format!(
                "checkpoint has {:?}, config asks for {:?}",
                ckpt.model.config,
                t.config.model_config()
            )));
        }
        t.model = ckpt.model;
        t.opt = ckpt.optimizer.unwrap_or_else(|| Adam::new(&t.model.store));
        t.step = ckpt.step;
        for _ in 0..t.step {
            t.data.batch(t.config.batch_size);
        }
        Ok(t)
    }

    pub fn step_once(&mut self) -> Result<StepReport> {
        let batch = self.data.batch(self.config.batch_size);
        let report = train_step(&mut self.model, &mut self.opt, &batch, &self.config, self.step)?;
        self.step += 1;
        Ok(report)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            model: self.model.clone(),
            step: self.step,
            optimizer: Some(self.opt.clone()),
            meta: serde_json::to_value(&self.config).expect("config serializes"),
        }
    }

    fn save(&self, name: &str) -> Result<Option<PathBuf>> {
        match &self.out_dir {
            Some(dir) => {
                let path = dir.join(name);
                self.checkpoint().save(&path)?;
                Ok(Some(path))
            }
            None => Ok(None),
        }
    }

    /// Runs until `config.steps`, appending to `curve.csv` and writing
    /// `step_<k>.ckpt` every `checkpoint_every` steps and `final.ckpt` at the end.
    pub fn run(&mut self, mut on_step: impl FnMut(&StepReport)) -> Result<Vec<StepReport>> {
        let mut curve = match &self.out_dir {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
                let path = dir.join("curve.csv");
                let fresh = self.step == 0 || !path.exists();
                let mut file = std::fs::OpenOptions::new()
                    .create(true)
                    .append(!fresh)
                    .write(true)
                    .truncate(fresh)
                    .open(&path)
                    .map_err(|e| Error::io(&path, e))?;
                if fresh {
                    writeln!(file, "{CURVE_HEADER}").map_err(|e| Error::io(&path, e))?;
                }
                Some((file, path))
            }
            None => None,
        };
        let mut reports = Vec::new();
        while self.step < self.config.steps {
            let r = self.step_once()?;
            if let Some((file, path)) = &mut curve {
                writeln!(file, "{}", curve_row(&r)).map_err(|e| Error::io(&*path, e))?;
            }
            if r.step % 100 == 0 {
                info!("step {} loss {:.6} grad {:.3}", r.step, r.loss.total, r.grad_norm);
            }
            on_step(&r);
            reports.push(r);
            if self.config.checkpoint_every > 0 && self.step % self.config.checkpoint_every == 0 {
                self.save(&format!("step_{}.ckpt", self.step))?;
            }
        }
        self.save("final.ckpt")?;
        Ok(reports)
    }
}

/// Average over clips of the summed per-frame cost `MSE + lambda * bpp`, with
/// every clip coded under `config` by the rounding (inference) model.
pub fn held_out_cost(model: &Model, clips: &[Vec<Tensor>], config: &CodingConfig) -> Result<f64> {
    let ctx = model.eval_ctx();
    let mut total = 0.0;
    for clip in clips {
        let frames: Vec<Var> = clip.iter().take(config.frame_count()).cloned().map(Var::constant).collect();
        let [n, _, h, w] = frames[0].shape();
        let inputs: Vec<Option<Var>> = frames.iter().cloned().map(Some).collect();
        let results = code_sequence(model, &ctx, &inputs, (n, h, w), config, SequenceIo::Estimate)?;
        total += rd_loss(&results, &frames, config.lambda)?.1.total;
    }
    Ok(total / clips.len().max(1) as f64)
}

/// Mean blending weight over every B-frame pixel of the given clips under `config`.
pub fn mean_b_beta(model: &Model, clips: &[Vec<Tensor>], config: &CodingConfig) -> Result<f64> {
    let ctx = model.eval_ctx();
    let (mut sum, mut count) = (0.0, 0usize);
    for clip in clips {
        let inputs: Vec<Option<Var>> =
            clip.iter().take(config.frame_count()).cloned().map(|t| Some(Var::constant(t))).collect();
        let [n, _, h, w] = clip[0].shape();
        for r in code_sequence(model, &ctx, &inputs, (n, h, w), config, SequenceIo::Estimate)? {
            if r.kind == crate::video_io::FrameKind::B {
                sum += r.beta.value().sum();
                count += r.beta.value().data().len();
            }
        }
    }
    if count == 0 {
        return Err(Error::InvalidInput("no B-frames in the schedule".into()));
    }
    Ok(sum / count as f64)
}

/// Mean of the last `window` values ending at position `end` (exclusive).
pub fn trailing_mean(values: &[f64], end: usize, window: usize) -> f64 {
    let end = end.min(values.len());
    let start = end.saturating_sub(window);
    values[start..end].iter().sum::<f64>() / (end - start).max(1) as f64
}
