//! Subcommand implementations.

use std::path::{Path, PathBuf};

use log::info;
use lvc_core::checkpoint::Checkpoint;
use lvc_core::coder::bitstream::{decode_sequence, display_order, encode_sequence};
use lvc_core::coder::report::sequence_report;
use lvc_core::coder::{CodingConfig, CodingMode};
use lvc_core::eval::anchors::{find_ffmpeg, is_monotone, qp_sweep, AnchorCodec, AnchorMode, AnchorOutcome};
use lvc_core::eval::bdrate::{bd_table, read_rd_csv, write_rd_rows, RdCurve};
use lvc_core::eval::diagnostics::{diagnostics, write_ablations, AblationNet};
use lvc_core::eval::gop_report;
use lvc_core::eval::plot::{plot_gop, plot_rd};
use lvc_core::train::data::Scene;
use lvc_core::train::{TrainConfig, Trainer};
use lvc_core::video_io::{load_yuv420, to_internal, to_yuv420, write_yuv420, Frame};
use lvc_core::{Error, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::config::{load_file, resolve, section, Flags};
use crate::manifest::RunManifest;
use crate::{AnchorArgs, BdrateArgs, Cli, CodeArgs, CodingArgs, Command, DecodeArgs, EvalArgs, SynthArgs, TrainArgs, VisualizeArgs};

pub fn run(cli: Cli) -> Result<()> {
    let file = load_file(cli.config.as_deref())?;
    match cli.command {
        Command::Train(a) => train(&file, a),
        Command::Code(a) => code(&file, a),
        Command::Decode(a) => decode(a),
        Command::Eval(a) => eval(&file, a),
        Command::Bdrate(a) => bdrate(a),
        Command::Visualize(a) => visualize(&file, a),
        Command::Anchors(a) => anchors(&file, a),
        Command::Synth(a) => synth(a),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::InvalidInput(format!("cannot create {}: {e}", dir.display())))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let text = serde_json::to_string_pretty(value).expect("value serializes");
    std::fs::write(path, text).map_err(|e| Error::InvalidInput(format!("{}: {e}", path.display())))
}

fn train(file: &toml::Table, a: TrainArgs) -> Result<()> {
    let mut flags = Flags::default();
    flags
        .set("lambda", a.lambda)
        .set("steps", a.steps.map(|v| v as i64))
        .set("batch_size", a.batch_size.map(|v| v as i64))
        .set("features", a.features.map(|v| v as i64))
        .set("crop", a.crop.map(|v| v as i64))
        .set("seed", a.seed.map(|v| v as i64))
        .set("lr", a.lr)
        .set("checkpoint_every", a.checkpoint_every.map(|v| v as i64));
    let config: TrainConfig = resolve(&TrainConfig::default(), &section(file, "train")?, &flags, &["lambda"], "train")?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("train", serde_json::to_value(&config).unwrap(), Some(config.seed));
    let mut trainer = match &a.resume {
        Some(path) => {
            manifest.input(path)?;
            let ckpt = Checkpoint::load(path)?;
            info!("resuming at step {}", ckpt.step);
            Trainer::resume(config.clone(), ckpt, Some(&a.out))?
        }
        None => Trainer::new(config.clone(), Some(&a.out))?,
    };
    info!("training {} parameters for {} steps", trainer.model.param_count(), config.steps);
    let reports = trainer.run(|_| {})?;
    if let Some(last) = reports.last() {
        info!("final loss {:.6} at step {}", last.loss.total, last.step);
    }
    manifest.output(&a.out.join("curve.csv"));
    manifest.output(&a.out.join("final.ckpt"));
    manifest.write(&a.out)?;
    Ok(())
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CodeSettings {
    width: usize,
    height: usize,
    mode: String,
    gop_size: usize,
    gops: Option<usize>,
    fps: Option<f64>,
}

impl Default for CodeSettings {
    fn default() -> Self {
        CodeSettings {
            width: 0,
            height: 0,
            mode: "RA".into(),
            gop_size: 8,
            gops: None,
            fps: None,
        }
    }
}

fn code_settings(file: &toml::Table, a: &CodingArgs, section_name: &str) -> Result<CodeSettings> {
    let mut flags = Flags::default();
    flags
        .set("width", a.width.map(|v| v as i64))
        .set("height", a.height.map(|v| v as i64))
        .set("mode", a.mode.clone())
        .set("gop_size", a.gop_size.map(|v| v as i64))
        .set("gops", a.gops.map(|v| v as i64))
        .set("fps", a.fps);
    resolve(&CodeSettings::default(), &section(file, section_name)?, &flags, &["width", "height"], section_name)
}

/// Loads the input and builds the coding configuration, using as many GOPs
/// as the input holds unless a count is given.
fn prepare(settings: &CodeSettings, input: &Path, lambda: f64) -> Result<(Vec<Frame>, CodingConfig)> {
    let raw = load_yuv420(input, settings.width, settings.height)?;
    let frames = to_internal(&raw);
    let mode: CodingMode = settings.mode.parse()?;
    let gops = match settings.gops {
        Some(g) => g,
        None => match mode {
            CodingMode::Ai => frames.len(),
            _ => frames.len().saturating_sub(1) / settings.gop_size.max(1),
        },
    };
    let config = CodingConfig {
        mode,
        gop_size: settings.gop_size,
        gops,
        lambda,
    };
    config.validate()?;
    let need = config.frame_count();
    if frames.len() < need {
        return Err(Error::InvalidInput(format!(
            "{} holds {} frames, {} {} needs {need}",
            input.display(),
            frames.len(),
            mode.name(),
            config.gop_size
        )));
    }
    Ok((frames[..need].to_vec(), config))
}

fn checkpoint_lambda(ckpt: &Checkpoint) -> f64 {
    ckpt.meta.get("lambda").and_then(|v| v.as_f64()).unwrap_or(TrainConfig::default().lambda)
}

fn code(file: &toml::Table, a: CodeArgs) -> Result<()> {
    let settings = code_settings(file, &a.coding, "code")?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (frames, config) = prepare(&settings, &a.input, checkpoint_lambda(&ckpt))?;
    create_dir(&a.out)?;
    let (bytes, results) = encode_sequence(&ckpt.model, &frames, &config)?;
    let stream = a.out.join("stream.lvc");
    std::fs::write(&stream, &bytes).map_err(|e| Error::InvalidInput(format!("{}: {e}", stream.display())))?;
    let report = sequence_report(&config, &results, &frames, settings.fps)?;
    let report_path = a.out.join("report.json");
    write_json(&report_path, &report)?;
    info!(
        "{} frames, {} bytes, {:.4} bpp, {:.4} dB",
        frames.len(),
        bytes.len(),
        report.totals.bpp,
        report.totals.psnr
    );
    let mut manifest = RunManifest::new("code", json!({"settings": settings, "coding": config}), None);
    manifest.input(&a.input)?;
    manifest.input(&a.checkpoint)?;
    manifest.output(&stream);
    manifest.output(&report_path);
    manifest.write(&a.out)?;
    Ok(())
}

fn decode(a: DecodeArgs) -> Result<()> {
    let bytes = std::fs::read(&a.bitstream).map_err(|e| Error::InvalidInput(format!("{}: {e}", a.bitstream.display())))?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (header, results) = decode_sequence(&ckpt.model, &bytes)?;
    create_dir(&a.out)?;
    let decoded = display_order(&results);
    let out = a.out.join("decoded.yuv");
    write_yuv420(&out, &to_yuv420(&decoded)?)?;
    let mut manifest = RunManifest::new("decode", json!({"coding": header.config}), None);
    manifest.input(&a.bitstream)?;
    manifest.input(&a.checkpoint)?;
    manifest.output(&out);
    if let Some(reference) = &a.reference {
        let raw = load_yuv420(reference, header.width, header.height)?;
        let frames = to_internal(&raw);
        if frames.len() < results.len() {
            return Err(Error::InvalidInput(format!("reference has {} frames, stream has {}", frames.len(), results.len())));
        }
        let report = sequence_report(&header.config, &results, &frames, None)?;
        let path = a.out.join("report.json");
        write_json(&path, &report)?;
        info!("decoded PSNR {:.4} dB", report.totals.psnr);
        println!("{}", report.totals.psnr);
        manifest.input(reference)?;
        manifest.output(&path);
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn eval(file: &toml::Table, a: EvalArgs) -> Result<()> {
    let settings = code_settings(file, &a.coding, "code")?;
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("eval", json!({"settings": settings, "label": a.label}), None);
    manifest.input(&a.input)?;
    let mut rows = Vec::new();
    let mut summaries = Vec::new();
    for (k, path) in a.checkpoint.iter().enumerate() {
        manifest.input(path)?;
        let ckpt = Checkpoint::load(path)?;
        let (frames, config) = prepare(&settings, &a.input, checkpoint_lambda(&ckpt))?;
        let (bytes, results) = encode_sequence(&ckpt.model, &frames, &config)?;
        let report = sequence_report(&config, &results, &frames, settings.fps)?;
        let rate = report.totals.mbit_per_s.unwrap_or(report.totals.bpp);
        rows.push((a.label.clone(), rate, report.totals.psnr));
        if let Some(fps) = settings.fps {
            let gop = gop_report(&config, &results, &frames, fps)?;
            let (json_path, png_path) = (a.out.join(format!("gop_{k}.json")), a.out.join(format!("gop_{k}.png")));
            write_json(&json_path, &gop)?;
            plot_gop(&gop, &png_path)?;
            println!("{}\n{gop}", path.display());
            manifest.output(&json_path);
            manifest.output(&png_path);
        }
        summaries.push(json!({"checkpoint": path, "bytes": bytes.len(), "report": report}));
    }
    let unit = if settings.fps.is_some() { "Mbit/s" } else { "bpp" };
    rows.sort_by(|x, y| x.1.total_cmp(&y.1));
    let csv = a.out.join("rd.csv");
    write_rd_rows(&csv, &rows)?;
    let curve = RdCurve {
        label: a.label.clone(),
        points: rows.iter().map(|r| (r.1, r.2)).collect(),
    };
    let png = a.out.join("rd.png");
    plot_rd(&[curve], &png)?;
    let summary = a.out.join("eval.json");
    write_json(&summary, &json!({"rate_unit": unit, "points": summaries}))?;
    for p in [&csv, &png, &summary] {
        manifest.output(p);
    }
    manifest.write(&a.out)?;
    Ok(())
}

fn bdrate(a: BdrateArgs) -> Result<()> {
    let anchors = read_rd_csv(&a.anchor)?;
    let tests = read_rd_csv(&a.test)?;
    let table = bd_table(&anchors, &tests)?;
    print!("{table}");
    if let Some(path) = &a.json {
        write_json(path, &table)?;
    }
    Ok(())
}

fn visualize(file: &toml::Table, a: VisualizeArgs) -> Result<()> {
    let settings = code_settings(file, &a.coding, "code")?;
    let ckpt = Checkpoint::load(&a.checkpoint)?;
    let (frames, config) = prepare(&settings, &a.input, checkpoint_lambda(&ckpt))?;
    let (_, results) = encode_sequence(&ckpt.model, &frames, &config)?;
    let r = results
        .iter()
        .find(|r| r.index == a.frame)
        .ok_or_else(|| Error::InvalidInput(format!("frame {} is not coded by this configuration", a.frame)))?;
    create_dir(&a.out)?;
    let set = diagnostics(r, &a.out)?;
    let ctx = ckpt.model.eval_ctx();
    let mut outputs: Vec<PathBuf> = set.paths.clone();
    outputs.extend(write_ablations(&ckpt.model, &ctx, r, AblationNet::Mofnet, &a.out)?);
    outputs.extend(write_ablations(&ckpt.model, &ctx, r, AblationNet::Codecnet, &a.out)?);
    let summary = a.out.join("diagnostics.json");
    write_json(&summary, &json!({"frame": a.frame, "kind": r.kind, "rates": set}))?;
    outputs.push(summary);
    let mut manifest = RunManifest::new("visualize", json!({"settings": settings, "frame": a.frame}), None);
    manifest.input(&a.input)?;
    manifest.input(&a.checkpoint)?;
    manifest.outputs = outputs;
    manifest.write(&a.out)?;
    Ok(())
}

fn anchors(file: &toml::Table, a: AnchorArgs) -> Result<()> {
    let settings = code_settings(file, &a.coding, "anchors")?;
    let fps = settings.fps.unwrap_or(30.0);
    let codec = match a.codec.as_deref().unwrap_or("x265") {
        "x265" => AnchorCodec::X265,
        "x264" => AnchorCodec::X264,
        other => return Err(Error::InvalidInput(format!("unknown anchor codec {other:?} (x265 or x264)"))),
    };
    let mode = match settings.mode.parse::<CodingMode>()? {
        CodingMode::Ldp => AnchorMode::Ldp,
        CodingMode::Ra => AnchorMode::Ra,
        CodingMode::Ai => return Err(Error::InvalidInput("anchors are defined for RA and LDP only".into())),
    };
    create_dir(&a.out)?;
    let mut manifest = RunManifest::new("anchors", json!({"settings": settings, "codec": codec}), None);
    manifest.input(&a.input)?;
    let outcome = match a.ffmpeg.clone().or_else(find_ffmpeg) {
        Some(ffmpeg) => qp_sweep(&ffmpeg, &a.out, &a.input, (settings.width, settings.height), fps, codec, mode)?,
        None => AnchorOutcome::Unavailable {
            reason: "ffmpeg not found on PATH".into(),
        },
    };
    let status = a.out.join("anchor.json");
    write_json(&status, &outcome)?;
    manifest.output(&status);
    let result = match &outcome {
        AnchorOutcome::Ok { points } => {
            let rows: Vec<(String, f64, f64)> = points.iter().map(|p| (a.label.clone(), p.mbit_per_s, p.psnr)).collect();
            let csv = a.out.join("anchor_rd.csv");
            write_rd_rows(&csv, &rows)?;
            manifest.output(&csv);
            if !is_monotone(points) {
                log::warn!("anchor rate is not monotone in QP");
            }
            Ok(())
        }
        AnchorOutcome::Unavailable { reason } => Err(Error::Unavailable(reason.clone())),
    };
    manifest.write(&a.out)?;
    result
}

fn synth(a: SynthArgs) -> Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed);
    let scene = Scene::random(&mut rng, a.size);
    let frames: Vec<Frame> = scene.clip(a.frames).into_iter().enumerate().map(|(i, t)| Frame::new(t, i)).collect();
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        create_dir(dir)?;
    }
    write_yuv420(&a.out, &to_yuv420(&frames)?)
}
