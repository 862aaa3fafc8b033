use std::collections::{BTreeMap, HashMap};
use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NcaError, Result};
use crate::image::RgbImage;
use crate::motion::{measure_model, MeasureConfig};
use crate::rng::derive_seed;
use crate::training::{train_on_image, LossKind, TrainConfig, TrainSettings};

/// Exact CSV header written by [`run_sweep`].
pub const SWEEP_HEADER: &str = "target,C,D,diff,ratio,psi,final_loss,seed,epochs,wall_ms,status";

/// Sub-stream of a config seed used for the motion measurement; training
/// uses sub-streams 0 to 2.
const MEASURE_STREAM: u64 = 3;

pub const STATUS_OK: &str = "ok";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    pub c_values: Vec<usize>,
    pub d_values: Vec<usize>,
    pub targets: Vec<PathBuf>,
    pub master_seed: u64,
    /// Settings shared by every trained model.
    pub train: TrainSettings,
    pub measure: MeasureConfig,
    /// Worker threads.
    pub jobs: usize,
    /// Record wall-clock time per config. Off by default so that repeated
    /// sweeps produce byte-identical CSVs.
    pub timing: bool,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            c_values: (8..=128).step_by(8).collect(),
            d_values: (16..=128).step_by(16).collect(),
            targets: Vec::new(),
            master_seed: 0,
            train: TrainSettings::default(),
            measure: MeasureConfig::default(),
            jobs: 1,
            timing: false,
        }
    }
}

impl SweepConfig {
    /// Parses JSON; errors name the offending field path.
    pub fn from_json(text: &str, source: impl Into<PathBuf>) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        serde_path_to_error::deserialize(de).map_err(|e| NcaError::Config {
            path: source.into(),
            field: e.path().to_string(),
            message: e.inner().to_string(),
        })
    }

    /// Reads a JSON config. Relative target paths are taken relative to
    /// the config file's directory.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| NcaError::io(path, e))?;
        let mut cfg = Self::from_json(&text, path)?;
        if let Some(base) = path.parent() {
            for t in &mut cfg.targets {
                if t.is_relative() {
                    *t = base.join(&*t);
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.targets.is_empty() {
            return Err(NcaError::InvalidArgument(
                "sweep needs at least one target".into(),
            ));
        }
        if self.c_values.is_empty() || self.d_values.is_empty() {
            return Err(NcaError::InvalidArgument(
                "C and D grids must be non-empty".into(),
            ));
        }
        if self.c_values.iter().chain(&self.d_values).any(|&v| v == 0) {
            return Err(NcaError::InvalidArgument(
                "C and D values must be at least 1".into(),
            ));
        }
        if self.jobs == 0 {
            return Err(NcaError::InvalidArgument("jobs must be at least 1".into()));
        }
        let mut ids: Vec<String> = self.targets.iter().map(|t| target_id(t)).collect();
        ids.sort();
        if ids.windows(2).any(|w| w[0] == w[1]) {
            return Err(NcaError::InvalidArgument(
                "target file names must be distinct".into(),
            ));
        }
        self.train.validate()?;
        self.measure.validate()
    }
}

/// Short name of a target: its file stem.
pub fn target_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

/// One point of the sweep grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PlannedConfig {
    pub index: usize,
    pub target: PathBuf,
    pub channels: usize,
    pub hidden: usize,
    pub seed: u64,
}

impl PlannedConfig {
    pub fn train_config(&self, settings: &TrainSettings) -> TrainConfig {
        TrainConfig {
            channels: self.channels,
            hidden: self.hidden,
            target: self.target.clone(),
            seed: self.seed,
            settings: settings.clone(),
        }
    }

    fn key(&self, epochs: usize) -> RowKey {
        (
            target_id(&self.target),
            self.channels,
            self.hidden,
            self.seed,
            epochs,
        )
    }
}

/// Identifies a row for resume: target, C, D, seed, epochs.
type RowKey = (String, usize, usize, u64, usize);

/// Targets x C x D in lexicographic order, seeded by position.
pub fn grid_configs(cfg: &SweepConfig) -> Vec<PlannedConfig> {
    let mut out = Vec::with_capacity(cfg.targets.len() * cfg.c_values.len() * cfg.d_values.len());
    for target in &cfg.targets {
        for &channels in &cfg.c_values {
            for &hidden in &cfg.d_values {
                let index = out.len();
                out.push(PlannedConfig {
                    index,
                    target: target.clone(),
                    channels,
                    hidden,
                    seed: derive_seed(cfg.master_seed, index as u64),
                });
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRecord {
    pub target: String,
    #[serde(rename = "C")]
    pub channels: usize,
    #[serde(rename = "D")]
    pub hidden: usize,
    pub diff: i64,
    pub ratio: f64,
    /// Empty for failed configs.
    pub psi: Option<f64>,
    pub final_loss: Option<f64>,
    pub seed: u64,
    pub epochs: usize,
    pub wall_ms: u64,
    pub status: String,
}

impl SweepRecord {
    fn new(plan: &PlannedConfig, epochs: usize) -> Self {
        Self {
            target: target_id(&plan.target),
            channels: plan.channels,
            hidden: plan.hidden,
            diff: plan.hidden as i64 - plan.channels as i64,
            ratio: plan.hidden as f64 / plan.channels as f64,
            psi: None,
            final_loss: None,
            seed: plan.seed,
            epochs,
            wall_ms: 0,
            status: String::new(),
        }
    }

    pub fn is_ok(&self) -> bool {
        self.status == STATUS_OK
    }

    fn key(&self) -> RowKey {
        (
            self.target.clone(),
            self.channels,
            self.hidden,
            self.seed,
            self.epochs,
        )
    }
}

/// Trains and measures one grid point. Failures become an error row.
pub fn run_config(plan: &PlannedConfig, target: &RgbImage, cfg: &SweepConfig) -> SweepRecord {
    let start = Instant::now();
    let mut record = SweepRecord::new(plan, cfg.train.epochs);
    let result = train_on_image(&plan.train_config(&cfg.train), target).and_then(|outcome| {
        let report = measure_model(
            &outcome.params,
            &cfg.measure,
            cfg.train.height,
            cfg.train.width,
            derive_seed(plan.seed, MEASURE_STREAM),
        )?;
        Ok((outcome.final_loss(), report.mean_psi))
    });
    match result {
        Ok((loss, psi)) if psi.is_finite() => {
            record.final_loss = Some(loss);
            record.psi = Some(psi);
            record.status = STATUS_OK.into();
        }
        Ok((_, psi)) => record.status = format!("error: motion strength is {psi}"),
        Err(e) => {
            log::warn!(
                "config {} (C={}, D={}) failed: {e}",
                plan.index,
                plan.channels,
                plan.hidden
            );
            record.status = format!("error: {e}");
        }
    }
    if cfg.timing {
        record.wall_ms = start.elapsed().as_millis() as u64;
    }
    record
}

#[derive(Debug, Clone)]
pub struct SweepOutcome {
    /// One record per planned config, in plan order.
    pub records: Vec<SweepRecord>,
    /// Records carried over from a previous run.
    pub reused: usize,
}

/// Path rows are streamed to while a sweep is running.
pub fn partial_path(out: &Path) -> PathBuf {
    let mut name = out.file_name().unwrap_or_default().to_os_string();
    name.push(".partial");
    out.with_file_name(name)
}

/// Reads a sweep CSV, keeping well-formed rows only.
pub fn read_records(path: &Path) -> Result<Vec<SweepRecord>> {
    let mut reader = csv::Reader::from_path(path).map_err(|e| csv_error(path, e))?;
    let header = reader.headers().map_err(|e| csv_error(path, e))?.clone();
    if header.iter().collect::<Vec<_>>().join(",") != SWEEP_HEADER {
        return Err(NcaError::Format {
            path: path.into(),
            message: format!("unexpected header, want {SWEEP_HEADER}"),
        });
    }
    let mut out = Vec::new();
    for (line, row) in reader.deserialize::<SweepRecord>().enumerate() {
        match row {
            Ok(r) => out.push(r),
            Err(e) => log::warn!("{}: skipping row {}: {e}", path.display(), line + 1),
        }
    }
    Ok(out)
}

fn csv_error(path: &Path, e: csv::Error) -> NcaError {
    match e.into_kind() {
        csv::ErrorKind::Io(source) => NcaError::io(path, source),
        other => NcaError::Format {
            path: path.into(),
            message: format!("{other:?}"),
        },
    }
}

/// Successful rows of earlier (possibly interrupted) runs writing to `out`.
fn previous_results(out: &Path) -> Result<HashMap<RowKey, SweepRecord>> {
    let mut done = HashMap::new();
    for path in [out.to_path_buf(), partial_path(out)] {
        if path.exists() {
            for r in read_records(&path)? {
                if r.is_ok() {
                    done.insert(r.key(), r);
                }
            }
        }
    }
    Ok(done)
}

fn record_line(r: &SweepRecord) -> Result<String> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_writer(Vec::new());
    w.serialize(r)
        .map_err(|e| NcaError::InvalidArgument(e.to_string()))?;
    let bytes = w
        .into_inner()
        .map_err(|e| NcaError::InvalidArgument(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// Runs every planned config and writes the CSV to `out`.
///
/// Rows are streamed in plan order to `<out>.partial`, flushed after every
/// row, and the file is renamed to `out` once complete. With `resume`, rows
/// with status `ok` found in `out` or `<out>.partial` are reused instead of
/// recomputed. The output does not depend on `cfg.jobs`.
pub fn run_sweep(cfg: &SweepConfig, out: &Path, resume: bool) -> Result<SweepOutcome> {
    cfg.validate()?;
    let plan = grid_configs(cfg);
    let mut targets = HashMap::new();
    for t in &cfg.targets {
        let img = RgbImage::read_png(t)?;
        let mismatch = img.height() != cfg.train.height || img.width() != cfg.train.width;
        if cfg.train.loss == LossKind::Mse && mismatch {
            return Err(NcaError::shape(
                "sweep target size",
                format!("{}x{}", cfg.train.height, cfg.train.width),
                img.dims_string(),
            ));
        }
        targets.insert(t.clone(), img);
    }

    let mut done = if resume {
        previous_results(out)?
    } else {
        HashMap::new()
    };
    let mut slots: Vec<Option<SweepRecord>> = plan
        .iter()
        .map(|p| done.remove(&p.key(cfg.train.epochs)))
        .collect();
    let reused = slots.iter().filter(|s| s.is_some()).count();
    let todo: Vec<&PlannedConfig> = plan.iter().filter(|p| slots[p.index].is_none()).collect();
    log::info!(
        "sweep: {} configs, {} reused, {} to run",
        plan.len(),
        reused,
        todo.len()
    );

    let partial = partial_path(out);
    let mut file = File::create(&partial).map_err(|e| NcaError::io(&partial, e))?;
    writeln!(file, "{SWEEP_HEADER}").map_err(|e| NcaError::io(&partial, e))?;
    let mut emit = |r: &SweepRecord| -> Result<()> {
        file.write_all(record_line(r)?.as_bytes())
            .and_then(|_| file.flush())
            .map_err(|e| NcaError::io(&partial, e))
    };

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| NcaError::InvalidArgument(e.to_string()))?;
    let (tx, rx) = mpsc::channel::<(usize, SweepRecord)>();

    std::thread::scope(|scope| -> Result<()> {
        let rx = rx;
        scope.spawn(|| {
            pool.install(|| {
                // Sending fails only once the writer has given up; stop then.
                todo.par_iter()
                    .with_max_len(1)
                    .try_for_each_with(tx, |tx, p| {
                        tx.send((p.index, run_config(p, &targets[&p.target], cfg)))
                            .map_err(drop)
                    })
            })
        });

        // Single writer: emit rows strictly in plan order, parking early
        // completions until their predecessors are written.
        let mut next = 0;
        let mut parked = BTreeMap::new();
        loop {
            while next < slots.len() {
                if let Some(r) = slots[next].as_ref() {
                    emit(r)?;
                    next += 1;
                } else if let Some(r) = parked.remove(&next) {
                    slots[next] = Some(r);
                } else {
                    break;
                }
            }
            if next == slots.len() {
                return Ok(());
            }
            match rx.recv() {
                Ok((i, r)) => {
                    parked.insert(i, r);
                }
                Err(_) => unreachable!("workers finished without producing row {next}"),
            }
        }
    })?;

    drop(file);
    std::fs::rename(&partial, out).map_err(|e| NcaError::io(out, e))?;
    Ok(SweepOutcome {
        records: slots
            .into_iter()
            .map(|s| s.expect("every slot filled"))
            .collect(),
        reused,
    })
}
