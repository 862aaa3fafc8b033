//! Backpropagation through an NCA rollout.
//!
//! The forward pass records, for every step, which cells fired together with
//! their perception columns and hidden activations. Masks are constants of
//! the forward pass, so the recorded tape gives the exact gradient.

use crate::error::{NcaError, Result};
use crate::grid::{bernoulli_mask, conv_plane, Kernel3x3, StateTensor};
use crate::model::{step_in_place, NcaParams, StepCache, UPDATE_PROBABILITY};
use crate::real::{matmul, Real};
use crate::rng::RngStream;

use super::loss::StateLoss;

/// Parameter gradients, shaped like [`NcaParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T = f32> {
    pub dw1: Vec<T>,
    pub db1: Vec<T>,
    pub dw2: Vec<T>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(params: &NcaParams<T>) -> Self {
        Self {
            dw1: vec![T::zero(); params.w1().len()],
            db1: vec![T::zero(); params.b1().len()],
            dw2: vec![T::zero(); params.w2().len()],
        }
    }

    pub fn tensors(&self) -> [&[T]; 3] {
        [&self.dw1, &self.db1, &self.dw2]
    }

    pub fn tensors_mut(&mut self) -> [&mut Vec<T>; 3] {
        [&mut self.dw1, &mut self.db1, &mut self.dw2]
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Gradients<T>, scale: T) {
        for (dst, src) in self.tensors_mut().into_iter().zip(other.tensors()) {
            for (a, &b) in dst.iter_mut().zip(src) {
                *a += scale * b;
            }
        }
    }

    /// L2 norm of each tensor, accumulated in f64.
    pub fn norms(&self) -> [f64; 3] {
        self.tensors().map(|t| {
            t.iter()
                .map(|x| x.as_f64() * x.as_f64())
                .sum::<f64>()
                .sqrt()
        })
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }
}

#[derive(Debug, Clone)]
pub struct BackwardResult<T> {
    pub loss: T,
    pub grads: Gradients<T>,
    pub final_state: StateTensor<T>,
}

/// Loss of the state after `n_steps` updates and its gradient with respect
/// to every parameter.
pub fn backward_rollout<T: Real, L: StateLoss<T> + ?Sized>(
    initial: &StateTensor<T>,
    params: &NcaParams<T>,
    n_steps: usize,
    rng: &mut RngStream,
    loss: &L,
) -> Result<BackwardResult<T>> {
    backward_rollout_with_rate(initial, params, n_steps, rng, loss, UPDATE_PROBABILITY)
}

/// [`backward_rollout`] with an explicit cell firing rate.
pub fn backward_rollout_with_rate<T: Real, L: StateLoss<T> + ?Sized>(
    initial: &StateTensor<T>,
    params: &NcaParams<T>,
    n_steps: usize,
    rng: &mut RngStream,
    loss: &L,
    rate: f64,
) -> Result<BackwardResult<T>> {
    let mut state = initial.clone();
    let mut tape: Vec<StepCache<T>> = Vec::with_capacity(n_steps);
    for t in 1..=n_steps {
        let mask = bernoulli_mask(state.height(), state.width(), rate, rng);
        let mut cache = StepCache::default();
        step_in_place(&mut state, params, &mask, &mut cache)?;
        if !state.is_finite() {
            return Err(NcaError::NonFinite {
                step: t,
                total: n_steps,
            });
        }
        tape.push(cache);
    }

    let (value, mut grad_state) = loss.evaluate(&state)?;
    if !value.is_finite() {
        return Err(NcaError::NonFinite {
            step: n_steps,
            total: n_steps,
        });
    }

    let mut grads = Gradients::zeros_like(params);
    let mut scratch = Scratch::default();
    for cache in tape.iter().rev() {
        step_backward(params, cache, &mut grad_state, &mut grads, &mut scratch);
    }
    Ok(BackwardResult {
        loss: value,
        grads,
        final_state: state,
    })
}

#[derive(Default)]
struct Scratch<T> {
    d_delta: Vec<T>,
    d_hidden: Vec<T>,
    d_percept: Vec<T>,
    planes: Vec<T>,
}

/// Given `grad = dL/dS_{t+1}`, accumulates parameter gradients for step `t`
/// and overwrites `grad` with `dL/dS_t`.
fn step_backward<T: Real>(
    params: &NcaParams<T>,
    cache: &StepCache<T>,
    grad: &mut StateTensor<T>,
    grads: &mut Gradients<T>,
    scratch: &mut Scratch<T>,
) {
    let n = cache.active.len();
    if n == 0 {
        return;
    }
    let (c, d) = (params.channels(), params.hidden());
    let pw = 4 * c;

    // The residual path passes `grad` through unchanged; only active cells
    // see the MLP branch.
    let d_delta = &mut scratch.d_delta;
    d_delta.clear();
    for ch in 0..c {
        let plane = grad.plane(ch);
        d_delta.extend(cache.active.iter().map(|&idx| plane[idx]));
    }

    matmul(
        d_delta,
        (c, n),
        false,
        &cache.hidden,
        (d, n),
        true,
        T::one(),
        T::one(),
        &mut grads.dw2,
    );

    let d_hidden = &mut scratch.d_hidden;
    d_hidden.resize(d * n, T::zero());
    matmul(
        params.w2(),
        (c, d),
        true,
        d_delta,
        (c, n),
        false,
        T::one(),
        T::zero(),
        d_hidden,
    );
    for (dz, &h) in d_hidden.iter_mut().zip(&cache.hidden) {
        if h <= T::zero() {
            *dz = T::zero();
        }
    }
    for (db, row) in grads.db1.iter_mut().zip(d_hidden.chunks_exact(n)) {
        *db += row.iter().copied().sum::<T>();
    }
    matmul(
        d_hidden,
        (d, n),
        false,
        &cache.percept,
        (pw, n),
        true,
        T::one(),
        T::one(),
        &mut grads.dw1,
    );

    let d_percept = &mut scratch.d_percept;
    d_percept.resize(pw * n, T::zero());
    matmul(
        params.w1(),
        (d, pw),
        true,
        d_hidden,
        (d, n),
        false,
        T::one(),
        T::zero(),
        d_percept,
    );

    scatter_perception_adjoint(grad, &cache.active, d_percept, &mut scratch.planes);
}

/// Adds the adjoint of the perception stage applied to `d_percept`
/// (`4C x cells`) into `grad`.
fn scatter_perception_adjoint<T: Real>(
    grad: &mut StateTensor<T>,
    cells: &[usize],
    d_percept: &[T],
    planes: &mut Vec<T>,
) {
    let (c, h, w) = (grad.channels(), grad.height(), grad.width());
    let (n, hw) = (cells.len(), h * w);
    // `planes` is all zeros between calls.
    planes.resize(2 * hw, T::zero());
    let (full, back) = planes.split_at_mut(hw);
    for ch in 0..c {
        {
            let plane = grad.plane_mut(ch);
            for (&idx, &g) in cells.iter().zip(&d_percept[ch * n..(ch + 1) * n]) {
                plane[idx] += g;
            }
        }
        for (k, kernel) in Kernel3x3::PERCEPTION.iter().enumerate().skip(1) {
            for (&idx, &g) in cells
                .iter()
                .zip(&d_percept[(k * c + ch) * n..(k * c + ch + 1) * n])
            {
                full[idx] = g;
            }
            conv_plane(full, back, h, w, &kernel.rotated_180());
            for (a, &b) in grad.plane_mut(ch).iter_mut().zip(back.iter()) {
                *a += b;
            }
            for &idx in cells {
                full[idx] = T::zero();
            }
        }
    }
}
