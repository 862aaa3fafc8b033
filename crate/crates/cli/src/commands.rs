use std::path::{Path, PathBuf};

use nca_core::analysis::{self, grid_configs, SweepConfig};
use nca_core::motion::{self, render_frames, MeasureConfig};
use nca_core::training::write_loss_curve;
use nca_core::{
    load_checkpoint, train_on_image, NcaError, Precision, Result, RgbImage, TrainConfig,
    TrainSettings,
};
use serde_json::json;

use crate::args::{MeasureArgs, ProtocolArgs, ReportArgs, RolloutArgs, SweepArgs, TrainArgs};

fn emit(value: serde_json::Value) {
    println!("{value}");
}

fn path_str(p: &Path) -> String {
    p.display().to_string()
}

fn with_suffix(path: &Path, suffix: &str) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(suffix);
    path.with_file_name(name)
}

pub fn train(a: TrainArgs) -> Result<()> {
    let target = RgbImage::read_png(&a.target)?;
    let (height, width) = match a.size {
        Some(s) => (s.height, s.width),
        None => (target.height(), target.width()),
    };
    let cfg = TrainConfig {
        channels: a.channels,
        hidden: a.hidden,
        target: a.target.clone(),
        seed: a.seed,
        settings: TrainSettings {
            height,
            width,
            loss: a.loss,
            epochs: a.epochs,
            t_min: a.t_min,
            t_max: a.t_max,
            batch_size: a.batch_size,
            pool_size: a.pool_size,
            learning_rate: a.lr,
            overflow_weight: a.overflow_weight,
            precision: if a.f64 {
                Precision::F64
            } else {
                Precision::F32
            },
            ..TrainSettings::default()
        },
    };
    log::info!(
        "training C={} D={} on {}x{} for {} epochs",
        a.channels,
        a.hidden,
        height,
        width,
        a.epochs
    );
    let outcome = train_on_image(&cfg, &target)?;
    outcome.checkpoint.save(&a.out)?;
    let loss_csv = a
        .loss_csv
        .unwrap_or_else(|| with_suffix(&a.out, ".loss.csv"));
    write_loss_curve(&loss_csv, &outcome.loss_curve)?;
    emit(json!({
        "checkpoint": path_str(&a.out),
        "loss_csv": path_str(&loss_csv),
        "initial_loss": outcome.initial_loss(),
        "final_loss": outcome.final_loss(),
    }));
    Ok(())
}

fn protocol_config(p: &ProtocolArgs, measured_frames: usize) -> MeasureConfig {
    MeasureConfig {
        steps_per_frame: p.steps_per_frame,
        warmup_frames: p.warmup_frames,
        measured_frames,
        ..MeasureConfig::default()
    }
}

pub fn rollout(a: RolloutArgs) -> Result<()> {
    let (params, _) = load_checkpoint(&a.model)?;
    let cfg = protocol_config(&a.protocol, a.frames);
    let size = a.protocol.size;
    let seq = render_frames(&params, &cfg, size.height, size.width, a.protocol.seed)?;
    motion::write_frames(&a.out_dir, &seq.frames)?;
    emit(json!({
        "out_dir": path_str(&a.out_dir),
        "frames": seq.frames.len(),
        "steps": seq.steps,
    }));
    Ok(())
}

pub fn measure(a: MeasureArgs) -> Result<()> {
    let cfg = MeasureConfig {
        alpha: a.alpha,
        iterations: a.iterations,
        ..protocol_config(&a.protocol, a.measured_frames)
    };
    let report = match (&a.frames_dir, &a.model) {
        (Some(dir), None) => motion::measure_frames(dir, &cfg)?,
        (None, Some(model)) => {
            let (params, _) = load_checkpoint(model)?;
            let size = a.protocol.size;
            motion::measure_model(&params, &cfg, size.height, size.width, a.protocol.seed)?
        }
        _ => unreachable!("clap enforces exactly one source"),
    };
    report.write(&a.out_csv, &a.out_json)?;
    emit(json!({
        "mean_psi": report.mean_psi,
        "pairs": report.psi.len(),
        "csv": path_str(&a.out_csv),
        "json": path_str(&a.out_json),
    }));
    Ok(())
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let mut cfg = SweepConfig::load(&a.config)?;
    if let Some(jobs) = a.jobs {
        cfg.jobs = jobs;
    }
    let planned = grid_configs(&cfg).len();
    emit(json!({ "planned": planned }));
    if a.plan_only {
        return Ok(());
    }
    let outcome = analysis::run_sweep(&cfg, &a.out, a.resume)?;
    let ok = outcome.records.iter().filter(|r| r.is_ok()).count();
    emit(json!({
        "out": path_str(&a.out),
        "rows": outcome.records.len(),
        "ok": ok,
        "failed": outcome.records.len() - ok,
        "reused": outcome.reused,
    }));
    Ok(())
}

pub fn report(a: ReportArgs) -> Result<()> {
    let rep = analysis::report(&a.csv, a.perms, a.seed)?;
    let summary = rep.summary();
    eprint!("{summary}");
    if let Some(path) = &a.summary {
        std::fs::write(path, &summary).map_err(|e| NcaError::Io {
            path: path.clone(),
            source: e,
        })?;
    }
    println!("{}", rep.to_json());
    Ok(())
}
