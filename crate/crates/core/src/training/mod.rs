//! Training NCA parameters by backpropagation through rollouts, with a
//! sample pool, per-tensor gradient normalization and Adam.

mod backward;
mod loss;
mod optim;
mod pool;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use backward::{backward_rollout, backward_rollout_with_rate, BackwardResult, Gradients};
pub use loss::{
    image_to_tensor, loss_gram_texture, loss_mse, overflow_penalty, LossKind, StateLoss,
    TargetLoss, GRAM_FEATURES, GRAM_LEVELS, OVERFLOW_BOUND,
};
pub use optim::{adam_update, grad_normalize, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use pool::SamplePool;

use crate::checkpoint::{CheckpointMeta, ModelCheckpoint};
use crate::error::{NcaError, Result};
use crate::image::RgbImage;
use crate::model::NcaParams;
use crate::real::Real;
use crate::rng::RngStream;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Protocol settings shared by every model of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub height: usize,
    pub width: usize,
    pub loss: LossKind,
    pub epochs: usize,
    /// Inclusive range of rollout lengths drawn per sample.
    pub t_min: usize,
    pub t_max: usize,
    pub batch_size: usize,
    pub pool_size: usize,
    pub learning_rate: f64,
    /// Epoch from which the learning rate is multiplied by `lr_decay_factor`.
    pub lr_decay_epoch: usize,
    pub lr_decay_factor: f64,
    pub precision: Precision,
    /// Weight of the penalty on state values outside [-1, 1]; 0 disables it.
    pub overflow_weight: f64,
}

impl Default for TrainSettings {
    fn default() -> Self {
        Self {
            height: 128,
            width: 128,
            loss: LossKind::Gram,
            epochs: 6000,
            t_min: 32,
            t_max: 64,
            batch_size: 4,
            pool_size: 256,
            learning_rate: 1e-3,
            lr_decay_epoch: 4000,
            lr_decay_factor: 0.3,
            precision: Precision::F32,
            overflow_weight: 1.0,
        }
    }
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(NcaError::InvalidArgument(m.to_string()));
        if self.height == 0 || self.width == 0 {
            return bad("grid height and width must be at least 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be at least 1");
        }
        if self.t_min == 0 || self.t_min > self.t_max {
            return bad("rollout range needs 1 <= t_min <= t_max");
        }
        if self.batch_size == 0 || self.pool_size < self.batch_size {
            return bad("need 1 <= batch_size <= pool_size");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning rate must be positive");
        }
        if !(self.overflow_weight >= 0.0 && self.overflow_weight.is_finite()) {
            return bad("overflow weight must be non-negative");
        }
        Ok(())
    }

    /// Learning rate in effect at `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        if epoch >= self.lr_decay_epoch {
            self.learning_rate * self.lr_decay_factor
        } else {
            self.learning_rate
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub channels: usize,
    pub hidden: usize,
    pub target: PathBuf,
    pub seed: u64,
    #[serde(flatten)]
    pub settings: TrainSettings,
}

impl TrainConfig {
    pub fn new(channels: usize, hidden: usize, target: impl Into<PathBuf>) -> Self {
        Self {
            channels,
            hidden,
            target: target.into(),
            seed: 0,
            settings: TrainSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels < 3 {
            return Err(NcaError::InvalidArgument(format!(
                "channels must be at least 3 (RGB), got {}",
                self.channels
            )));
        }
        if self.hidden == 0 {
            return Err(NcaError::InvalidArgument(
                "hidden must be at least 1".into(),
            ));
        }
        self.settings.validate()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: NcaParams<f32>,
    /// Mean batch loss per epoch.
    pub loss_curve: Vec<f64>,
    pub checkpoint: ModelCheckpoint,
}

impl TrainOutcome {
    pub fn initial_loss(&self) -> f64 {
        self.loss_curve[0]
    }

    pub fn final_loss(&self) -> f64 {
        *self.loss_curve.last().expect("at least one epoch")
    }
}

/// Loads the target image and trains. See [`train_on_image`].
pub fn train(cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let target = RgbImage::read_png(&cfg.target)?;
    train_on_image(cfg, &target)
}

/// Trains against an in-memory target; `cfg.target` is ignored.
///
/// Stream layout under the master seed: fork 0 initializes parameters,
/// fork 1 fills the pool, fork 2 drives batch sampling, rollout lengths,
/// update masks and reseeding. The result is a pure function of `cfg`.
pub fn train_on_image(cfg: &TrainConfig, target: &RgbImage) -> Result<TrainOutcome> {
    cfg.validate()?;
    let s = &cfg.settings;
    // Texture statistics are size-free; pixelwise targets must match the grid.
    if s.loss == LossKind::Mse && (target.height() != s.height || target.width() != s.width) {
        return Err(NcaError::shape(
            "target image size",
            format!("{}x{}", s.height, s.width),
            target.dims_string(),
        ));
    }
    let (params, curve) = match s.precision {
        Precision::F32 => {
            let (p, c, _) = train_typed::<f32>(cfg, target)?;
            (p, c)
        }
        Precision::F64 => {
            let (p, c, _) = train_typed::<f64>(cfg, target)?;
            (p.cast::<f32>(), c)
        }
    };
    let checkpoint = ModelCheckpoint::new(
        params.clone(),
        CheckpointMeta {
            seed: cfg.seed,
            train_steps: s.epochs as u64,
        },
    );
    Ok(TrainOutcome {
        params,
        loss_curve: curve,
        checkpoint,
    })
}

fn train_typed<T: Real>(
    cfg: &TrainConfig,
    target: &RgbImage,
) -> Result<(NcaParams<T>, Vec<f64>, SamplePool<T>)> {
    let s = &cfg.settings;
    let master = RngStream::new(cfg.seed);
    let mut params = NcaParams::<T>::init(cfg.channels, cfg.hidden, &mut master.fork(0));
    let mut pool = SamplePool::<T>::new(
        s.pool_size,
        cfg.channels,
        s.height,
        s.width,
        &mut master.fork(1),
    );
    let mut rng = master.fork(2);
    let loss = TargetLoss::<T>::new(s.loss, target)?.with_overflow_penalty(s.overflow_weight);
    let mut adam = AdamState::new(&params);
    let mut curve = Vec::with_capacity(s.epochs);
    let inv_batch = T::lit(1.0 / s.batch_size as f64);

    for epoch in 0..s.epochs {
        let batch = pool.sample(s.batch_size, &mut rng);
        let mut total = Gradients::zeros_like(&params);
        let mut losses = Vec::with_capacity(batch.len());
        let mut finals = Vec::with_capacity(batch.len());
        for &idx in &batch {
            let steps = s.t_min + rng.next_below(s.t_max - s.t_min + 1);
            let r = backward_rollout(pool.get(idx), &params, steps, &mut rng, &loss)?;
            total.add_scaled(&r.grads, inv_batch);
            losses.push(r.loss.as_f64());
            finals.push((r.final_state, steps));
        }
        if !total.is_finite() {
            return Err(NcaError::NonFinite {
                step: epoch + 1,
                total: s.epochs,
            });
        }
        adam_update(
            &mut params,
            &grad_normalize(&total),
            &mut adam,
            s.learning_rate_at(epoch),
        );

        for (&idx, (state, steps)) in batch.iter().zip(finals) {
            pool.write_back(idx, state, steps as u64);
        }
        let worst = losses
            .iter()
            .enumerate()
            .fold(0, |best, (i, &l)| if l > losses[best] { i } else { best });
        pool.reseed(batch[worst], &mut rng);

        let mean = losses.iter().sum::<f64>() / losses.len() as f64;
        if epoch % 100 == 0 || epoch + 1 == s.epochs {
            log::debug!("epoch {epoch}: loss {mean:.6}");
        }
        curve.push(mean);
    }
    Ok((params, curve, pool))
}

/// Writes the loss curve as `epoch,loss` CSV.
pub fn write_loss_curve(path: impl AsRef<Path>, curve: &[f64]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("epoch,loss\n");
    for (i, l) in curve.iter().enumerate() {
        out.push_str(&format!("{i},{l}\n"));
    }
    std::fs::write(path, out).map_err(|e| NcaError::io(path, e))
}
