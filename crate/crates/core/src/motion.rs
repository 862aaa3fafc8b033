//! Motion strength of NCA patterns: Horn-Schunck optical flow between
//! consecutive rendered frames, averaged into a single statistic.
//!
//! Absolute motion-strength values depend on the flow estimator; only their
//! ordering across models is meaningful.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{NcaError, Result};
use crate::grid::StateTensor;
use crate::image::RgbImage;
use crate::model::{rollout, to_rgb, NcaParams};
use crate::rng::RngStream;

/// Scalar intensity image, row-major, values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f64>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != width * height {
            return Err(NcaError::shape(
                "gray image length",
                width * height,
                data.len(),
            ));
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for i in 0..height {
            for j in 0..width {
                data.push(f(i, j));
            }
        }
        Self {
            width,
            height,
            data,
        }
    }

    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.width + j]
    }
}

/// Rec. 601 luma scaled to `[0, 1]`.
pub fn to_gray(frame: &RgbImage) -> GrayImage {
    GrayImage::from_fn(frame.width(), frame.height(), |i, j| {
        let [r, g, b] = frame.pixel(i, j);
        (0.299 * r as f64 + 0.587 * g as f64 + 0.114 * b as f64) / 255.0
    })
}

/// Per-pixel displacement in pixels per frame; `u` along columns (x),
/// `v` along rows (y).
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub u: Vec<f64>,
    pub v: Vec<f64>,
}

impl FlowField {
    pub fn uniform(width: usize, height: usize, u: f64, v: f64) -> Self {
        Self {
            width,
            height,
            u: vec![u; width * height],
            v: vec![v; width * height],
        }
    }

    pub fn mean_u(&self) -> f64 {
        self.u.iter().sum::<f64>() / self.u.len() as f64
    }

    pub fn mean_v(&self) -> f64 {
        self.v.iter().sum::<f64>() / self.v.len() as f64
    }

    pub fn is_finite(&self) -> bool {
        self.u.iter().chain(&self.v).all(|x| x.is_finite())
    }
}

/// Grey levels per unit of [`GrayImage`] intensity. Image derivatives are
/// taken on the 8-bit grey-level scale, which is the scale the smoothness
/// weight refers to.
pub const GRAY_LEVELS: f64 = 255.0;

/// Classical Horn-Schunck flow from `a` to `b` with circular boundaries.
///
/// Derivatives use the four-point forward differences averaged over both
/// frames. Starting from zero flow, exactly `iters` Jacobi sweeps are run:
///
/// ```text
/// u <- ubar - Ix (Ix ubar + Iy vbar + It) / (alpha^2 + Ix^2 + Iy^2)
/// v <- vbar - Iy (Ix ubar + Iy vbar + It) / (alpha^2 + Ix^2 + Iy^2)
/// ```
///
/// with `ubar`, `vbar` the 4-neighbour averages.
pub fn horn_schunck(a: &GrayImage, b: &GrayImage, alpha: f64, iters: usize) -> Result<FlowField> {
    if a.width != b.width || a.height != b.height {
        return Err(NcaError::shape(
            "flow frame size",
            format!("{}x{}", a.height, a.width),
            format!("{}x{}", b.height, b.width),
        ));
    }
    if alpha.is_nan() || alpha <= 0.0 {
        return Err(NcaError::InvalidArgument(
            "smoothness alpha must be positive".into(),
        ));
    }
    if iters == 0 {
        return Err(NcaError::InvalidArgument(
            "need at least one iteration".into(),
        ));
    }
    let (h, w) = (a.height, a.width);
    let n = h * w;
    let down = |i: usize| if i + 1 == h { 0 } else { i + 1 };
    let right = |j: usize| if j + 1 == w { 0 } else { j + 1 };
    let scale = 0.25 * GRAY_LEVELS;

    let mut ix = vec![0.0; n];
    let mut iy = vec![0.0; n];
    let mut it = vec![0.0; n];
    for i in 0..h {
        let i1 = down(i);
        for j in 0..w {
            let j1 = right(j);
            let (a00, a01, a10, a11) = (a.at(i, j), a.at(i, j1), a.at(i1, j), a.at(i1, j1));
            let (b00, b01, b10, b11) = (b.at(i, j), b.at(i, j1), b.at(i1, j), b.at(i1, j1));
            let k = i * w + j;
            ix[k] = scale * ((a01 - a00) + (a11 - a10) + (b01 - b00) + (b11 - b10));
            iy[k] = scale * ((a10 - a00) + (a11 - a01) + (b10 - b00) + (b11 - b01));
            it[k] = scale * ((b00 - a00) + (b10 - a10) + (b01 - a01) + (b11 - a11));
        }
    }
    let alpha2 = alpha * alpha;
    let denom: Vec<f64> = ix
        .iter()
        .zip(&iy)
        .map(|(x, y)| alpha2 + x * x + y * y)
        .collect();

    let mut u = vec![0.0; n];
    let mut v = vec![0.0; n];
    let mut u_next = vec![0.0; n];
    let mut v_next = vec![0.0; n];
    for _ in 0..iters {
        for i in 0..h {
            let up = if i == 0 { h - 1 } else { i - 1 };
            let dn = down(i);
            for j in 0..w {
                let l = if j == 0 { w - 1 } else { j - 1 };
                let r = right(j);
                let k = i * w + j;
                let ubar = 0.25 * (u[up * w + j] + u[dn * w + j] + u[i * w + l] + u[i * w + r]);
                let vbar = 0.25 * (v[up * w + j] + v[dn * w + j] + v[i * w + l] + v[i * w + r]);
                let t = (ix[k] * ubar + iy[k] * vbar + it[k]) / denom[k];
                u_next[k] = ubar - ix[k] * t;
                v_next[k] = vbar - iy[k] * t;
            }
        }
        std::mem::swap(&mut u, &mut u_next);
        std::mem::swap(&mut v, &mut v_next);
    }
    Ok(FlowField {
        width: w,
        height: h,
        u,
        v,
    })
}

/// Mean Euclidean norm of the flow over all pixels.
pub fn motion_strength(flow: &FlowField) -> f64 {
    let total: f64 = flow.u.iter().zip(&flow.v).map(|(u, v)| u.hypot(*v)).sum();
    total / flow.u.len() as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MeasureConfig {
    /// NCA steps between captured frames (T).
    pub steps_per_frame: usize,
    /// Frames generated and discarded before measuring.
    pub warmup_frames: usize,
    /// Number of consecutive frame pairs measured.
    pub measured_frames: usize,
    pub alpha: f64,
    pub iterations: usize,
}

impl Default for MeasureConfig {
    fn default() -> Self {
        Self {
            steps_per_frame: 32,
            warmup_frames: 100,
            measured_frames: 100,
            alpha: 1.0,
            iterations: 200,
        }
    }
}

impl MeasureConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps_per_frame == 0 {
            return Err(NcaError::InvalidArgument(
                "steps per frame must be at least 1".into(),
            ));
        }
        if self.measured_frames < 2 {
            return Err(NcaError::InvalidArgument(
                "need at least 2 measured frames".into(),
            ));
        }
        if self.alpha.is_nan() || self.alpha <= 0.0 || self.iterations == 0 {
            return Err(NcaError::InvalidArgument(
                "flow needs alpha > 0 and at least one iteration".into(),
            ));
        }
        Ok(())
    }

    /// NCA steps a full measurement runs.
    pub fn total_steps(&self) -> usize {
        (self.warmup_frames + self.measured_frames) * self.steps_per_frame
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MotionReport {
    /// Motion strength of each consecutive frame pair.
    pub psi: Vec<f64>,
    pub mean_psi: f64,
    /// Frames the pairs were taken from (`psi.len() + 1`).
    pub frames: usize,
    pub config: MeasureConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MotionSummary {
    pub mean_psi: f64,
    pub frames: usize,
    #[serde(rename = "T")]
    pub steps_per_frame: usize,
    pub alpha: f64,
    pub iters: usize,
}

impl MotionReport {
    pub fn summary(&self) -> MotionSummary {
        MotionSummary {
            mean_psi: self.mean_psi,
            frames: self.frames,
            steps_per_frame: self.config.steps_per_frame,
            alpha: self.config.alpha,
            iters: self.config.iterations,
        }
    }

    pub fn pairs_csv(&self) -> String {
        let mut out = String::from("pair_index,psi\n");
        for (i, p) in self.psi.iter().enumerate() {
            out.push_str(&format!("{i},{p}\n"));
        }
        out
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(&self.summary()).expect("summary serializes")
    }

    pub fn write(&self, csv_path: impl AsRef<Path>, json_path: impl AsRef<Path>) -> Result<()> {
        let (c, j) = (csv_path.as_ref(), json_path.as_ref());
        std::fs::write(c, self.pairs_csv()).map_err(|e| NcaError::io(c, e))?;
        std::fs::write(j, self.summary_json() + "\n").map_err(|e| NcaError::io(j, e))
    }
}

/// Frames rendered by the measurement protocol.
#[derive(Debug, Clone)]
pub struct FrameSequence {
    pub frames: Vec<RgbImage>,
    /// NCA steps executed, warm-up included.
    pub steps: usize,
    /// Random draws consumed, initial state included.
    pub rng_draws: u64,
}

/// Seeds a uniform(0, 1) state from `seed`, runs `warmup_frames * T` steps
/// without output, then renders `measured_frames + 1` frames `T` steps apart.
///
/// The stream seeded by `seed` supplies the initial state first and then
/// every update mask.
pub fn render_frames(
    params: &NcaParams<f32>,
    cfg: &MeasureConfig,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<FrameSequence> {
    if cfg.steps_per_frame == 0 || cfg.measured_frames == 0 {
        return Err(NcaError::InvalidArgument(
            "need at least one step per frame and one frame after warm-up".into(),
        ));
    }
    if height == 0 || width == 0 {
        return Err(NcaError::InvalidArgument(
            "grid size must be positive".into(),
        ));
    }
    let mut rng = RngStream::new(seed);
    let initial = StateTensor::<f32>::uniform(params.channels(), height, width, &mut rng);
    let t = cfg.steps_per_frame;
    let mut steps = cfg.warmup_frames * t;
    let mut state = rollout(&initial, params, steps, &mut rng, None)?.final_state;
    let mut frames = Vec::with_capacity(cfg.measured_frames + 1);
    frames.push(to_rgb(&state)?);
    for _ in 0..cfg.measured_frames {
        state = rollout(&state, params, t, &mut rng, None)?.final_state;
        steps += t;
        frames.push(to_rgb(&state)?);
    }
    Ok(FrameSequence {
        frames,
        steps,
        rng_draws: rng.draws_since(seed),
    })
}

/// Flow and motion strength for every consecutive pair of `frames`.
pub fn measure_images(frames: &[RgbImage], cfg: &MeasureConfig) -> Result<MotionReport> {
    if frames.len() < 2 {
        return Err(NcaError::TooFewFrames(frames.len()));
    }
    let grays: Vec<GrayImage> = frames.iter().map(to_gray).collect();
    let psi = grays
        .par_windows(2)
        .map(|pair| {
            horn_schunck(&pair[0], &pair[1], cfg.alpha, cfg.iterations).map(|f| motion_strength(&f))
        })
        .collect::<Result<Vec<f64>>>()?;
    let mean_psi = psi.iter().sum::<f64>() / psi.len() as f64;
    Ok(MotionReport {
        psi,
        mean_psi,
        frames: frames.len(),
        config: cfg.clone(),
    })
}

/// Runs the full measurement protocol on a model.
pub fn measure_model(
    params: &NcaParams<f32>,
    cfg: &MeasureConfig,
    height: usize,
    width: usize,
    seed: u64,
) -> Result<MotionReport> {
    cfg.validate()?;
    let seq = render_frames(params, cfg, height, width, seed)?;
    measure_images(&seq.frames, cfg)
}

/// Frame file name for index `i`; lexicographic order equals temporal order.
pub fn frame_name(i: usize) -> String {
    format!("frame_{i:06}.png")
}

pub fn write_frames(dir: impl AsRef<Path>, frames: &[RgbImage]) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir).map_err(|e| NcaError::io(dir, e))?;
    frames
        .iter()
        .enumerate()
        .map(|(i, f)| {
            let path = dir.join(frame_name(i));
            f.write_png(&path)?;
            Ok(path)
        })
        .collect()
}

/// PNG files in `dir`, sorted by file name.
pub fn list_frames(dir: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    let mut paths: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| NcaError::io(dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(|e| e.to_str())
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    paths.sort();
    Ok(paths)
}

/// Measures pre-rendered frames in `dir` as they are; no warm-up is applied.
pub fn measure_frames(dir: impl AsRef<Path>, cfg: &MeasureConfig) -> Result<MotionReport> {
    let paths = list_frames(dir)?;
    if paths.len() < 2 {
        return Err(NcaError::TooFewFrames(paths.len()));
    }
    let mut frames: Vec<RgbImage> = Vec::with_capacity(paths.len());
    for p in &paths {
        let img = RgbImage::read_png(p)?;
        if let Some(first) = frames.first() {
            if first.width() != img.width() || first.height() != img.height() {
                return Err(NcaError::InconsistentFrames {
                    path: p.clone(),
                    expected: first.dims_string(),
                    actual: img.dims_string(),
                });
            }
        }
        frames.push(img);
    }
    measure_images(&frames, cfg)
}
