//! The NCA update rule: fixed-kernel perception, a per-cell two-layer MLP and
//! a stochastic per-cell update mask.
//!
//! One update step is
//!
//! ```text
//! S' = S + W2 · relu(W1 · perceive(S) + b1) ⊙ M,    M ~ Bernoulli(0.5) per cell
//! ```
//!
//! where `perceive` stacks the identity, Sobel-x, Sobel-y and Laplacian
//! responses of every channel. The mask is drawn once per cell and broadcast
//! over channels.

use crate::error::{NcaError, Result};
use crate::grid::{bernoulli_mask, conv3x3_circular, conv_plane, CellMask, Kernel3x3, StateTensor};
use crate::image::RgbImage;
use crate::real::{matmul, Real};
use crate::rng::RngStream;

/// Probability that a cell updates on a given step.
pub const UPDATE_PROBABILITY: f64 = 0.5;

/// MLP weights shared by every cell.
///
/// `w1` is `hidden x 4·channels`, `b1` has `hidden` entries and `w2` is
/// `channels x hidden`, all row-major. There is no output bias.
#[derive(Debug, Clone, PartialEq)]
pub struct NcaParams<T = f32> {
    channels: usize,
    hidden: usize,
    w1: Vec<T>,
    b1: Vec<T>,
    w2: Vec<T>,
}

impl<T: Real> NcaParams<T> {
    pub fn zeros(channels: usize, hidden: usize) -> Self {
        assert!(
            channels >= 1 && hidden >= 1,
            "channels and hidden must be positive"
        );
        Self {
            channels,
            hidden,
            w1: vec![T::zero(); hidden * 4 * channels],
            b1: vec![T::zero(); hidden],
            w2: vec![T::zero(); channels * hidden],
        }
    }

    /// Fresh model: `w1 ~ U(-a, a)` with `a = sqrt(6 / (4C + D))`, zero `b1`
    /// and zero `w2`, so the initial update is the identity map.
    pub fn init(channels: usize, hidden: usize, rng: &mut RngStream) -> Self {
        let mut p = Self::zeros(channels, hidden);
        let a = (6.0 / (4 * channels + hidden) as f64).sqrt();
        for w in p.w1.iter_mut() {
            *w = T::lit((2.0 * rng.next_uniform() - 1.0) * a);
        }
        p
    }

    pub fn from_parts(
        channels: usize,
        hidden: usize,
        w1: Vec<T>,
        b1: Vec<T>,
        w2: Vec<T>,
    ) -> Result<Self> {
        if channels == 0 || hidden == 0 {
            return Err(NcaError::InvalidArgument(
                "channels and hidden must be positive".into(),
            ));
        }
        if w1.len() != hidden * 4 * channels {
            return Err(NcaError::shape(
                "w1 length",
                hidden * 4 * channels,
                w1.len(),
            ));
        }
        if b1.len() != hidden {
            return Err(NcaError::shape("b1 length", hidden, b1.len()));
        }
        if w2.len() != channels * hidden {
            return Err(NcaError::shape("w2 length", channels * hidden, w2.len()));
        }
        Ok(Self {
            channels,
            hidden,
            w1,
            b1,
            w2,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    /// Width of the perception vector, `4 * channels`.
    pub fn perception_width(&self) -> usize {
        4 * self.channels
    }

    pub fn w1(&self) -> &[T] {
        &self.w1
    }

    pub fn b1(&self) -> &[T] {
        &self.b1
    }

    pub fn w2(&self) -> &[T] {
        &self.w2
    }

    pub fn w1_mut(&mut self) -> &mut [T] {
        &mut self.w1
    }

    pub fn b1_mut(&mut self) -> &mut [T] {
        &mut self.b1
    }

    pub fn w2_mut(&mut self) -> &mut [T] {
        &mut self.w2
    }

    /// The three tensors in checkpoint order.
    pub fn tensors(&self) -> [&[T]; 3] {
        [&self.w1, &self.b1, &self.w2]
    }

    pub fn tensors_mut(&mut self) -> [&mut [T]; 3] {
        [&mut self.w1, &mut self.b1, &mut self.w2]
    }

    pub fn param_count(&self) -> usize {
        self.w1.len() + self.b1.len() + self.w2.len()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors()
            .iter()
            .all(|t| t.iter().all(|x| x.is_finite()))
    }

    pub fn cast<U: Real>(&self) -> NcaParams<U> {
        let conv = |v: &[T]| v.iter().map(|&x| U::lit(x.as_f64())).collect();
        NcaParams {
            channels: self.channels,
            hidden: self.hidden,
            w1: conv(&self.w1),
            b1: conv(&self.b1),
            w2: conv(&self.w2),
        }
    }

    fn check_state(&self, state: &StateTensor<T>) -> Result<()> {
        if state.channels() != self.channels {
            return Err(NcaError::shape(
                "state channels",
                self.channels,
                state.channels(),
            ));
        }
        Ok(())
    }
}

/// Output of the perception stage: `4C` channels laid out as
/// `[identity | sobel-x | sobel-y | laplacian]` blocks of `C` channels each.
#[derive(Debug, Clone, PartialEq)]
pub struct PerceptionTensor<T = f32> {
    source_channels: usize,
    features: StateTensor<T>,
}

impl<T: Real> PerceptionTensor<T> {
    pub fn from_features(features: StateTensor<T>) -> Result<Self> {
        if !features.channels().is_multiple_of(4) {
            return Err(NcaError::shape(
                "perception channels (multiple of 4)",
                4 * (features.channels() / 4 + 1),
                features.channels(),
            ));
        }
        Ok(Self {
            source_channels: features.channels() / 4,
            features,
        })
    }

    pub fn source_channels(&self) -> usize {
        self.source_channels
    }

    pub fn features(&self) -> &StateTensor<T> {
        &self.features
    }

    /// Block `k` (0 = identity, 1 = sobel-x, 2 = sobel-y, 3 = laplacian) as
    /// a flat channel-major slice.
    pub fn block(&self, k: usize) -> &[T] {
        let n = self.source_channels * self.features.plane_len();
        &self.features.data()[k * n..(k + 1) * n]
    }
}

pub fn perceive<T: Real>(state: &StateTensor<T>) -> PerceptionTensor<T> {
    let c = state.channels();
    let n = c * state.plane_len();
    let mut features = StateTensor::zeros(4 * c, state.height(), state.width());
    features.data_mut()[..n].copy_from_slice(state.data());
    for (k, kernel) in Kernel3x3::PERCEPTION.iter().enumerate().skip(1) {
        let out = conv3x3_circular(state, kernel);
        features.data_mut()[k * n..(k + 1) * n].copy_from_slice(out.data());
    }
    PerceptionTensor {
        source_channels: c,
        features,
    }
}

/// Per-cell MLP: `ds = W2 · relu(W1 · p + b1)` at every cell.
pub fn adapt<T: Real>(
    percept: &PerceptionTensor<T>,
    params: &NcaParams<T>,
) -> Result<StateTensor<T>> {
    let f = percept.features();
    if f.channels() != params.perception_width() {
        return Err(NcaError::shape(
            "perception channels",
            params.perception_width(),
            f.channels(),
        ));
    }
    let cells = f.plane_len();
    let mut hidden = vec![T::zero(); params.hidden * cells];
    matmul(
        &params.w1,
        (params.hidden, params.perception_width()),
        false,
        f.data(),
        (params.perception_width(), cells),
        false,
        T::one(),
        T::zero(),
        &mut hidden,
    );
    for (row, &b) in hidden.chunks_exact_mut(cells).zip(&params.b1) {
        for h in row.iter_mut() {
            *h = (*h + b).max(T::zero());
        }
    }
    let mut delta = StateTensor::zeros(params.channels, f.height(), f.width());
    matmul(
        &params.w2,
        (params.channels, params.hidden),
        false,
        &hidden,
        (params.hidden, cells),
        false,
        T::one(),
        T::zero(),
        delta.data_mut(),
    );
    Ok(delta)
}

/// Activations of one step restricted to the cells that fired, kept for the
/// backward pass.
#[derive(Debug, Clone, Default)]
pub struct StepCache<T> {
    /// Row-major cell indices that updated.
    pub(crate) active: Vec<usize>,
    /// `4C x active` perception columns.
    pub(crate) percept: Vec<T>,
    /// `D x active` post-relu hidden activations.
    pub(crate) hidden: Vec<T>,
    plane: Vec<T>,
    delta: Vec<T>,
}

impl<T> StepCache<T> {
    pub fn active_cells(&self) -> &[usize] {
        &self.active
    }
}

/// Perception columns for the listed cells, `4C x cells.len()` row-major.
/// Values agree bit-for-bit with [`perceive`].
pub(crate) fn perceive_cells<T: Real>(
    state: &StateTensor<T>,
    cells: &[usize],
    out: &mut [T],
    scratch: &mut Vec<T>,
) {
    let (c, h, w) = (state.channels(), state.height(), state.width());
    let n = cells.len();
    debug_assert_eq!(out.len(), 4 * c * n);
    scratch.resize(h * w, T::zero());
    for ch in 0..c {
        let plane = state.plane(ch);
        let row = &mut out[ch * n..(ch + 1) * n];
        for (o, &idx) in row.iter_mut().zip(cells) {
            *o = plane[idx];
        }
        for (k, kernel) in Kernel3x3::PERCEPTION.iter().enumerate().skip(1) {
            conv_plane(plane, scratch, h, w, kernel);
            let row = &mut out[(k * c + ch) * n..(k * c + ch + 1) * n];
            for (o, &idx) in row.iter_mut().zip(cells) {
                *o = scratch[idx];
            }
        }
    }
}

/// Applies one update with an explicit mask, in place, recording the
/// activations of the cells that fired into `cache`. Cells where the mask is
/// off are not touched.
pub(crate) fn step_in_place<T: Real>(
    state: &mut StateTensor<T>,
    params: &NcaParams<T>,
    mask: &CellMask,
    cache: &mut StepCache<T>,
) -> Result<()> {
    params.check_state(state)?;
    if mask.height() != state.height() || mask.width() != state.width() {
        return Err(NcaError::shape(
            "mask size",
            format!("{}x{}", state.height(), state.width()),
            format!("{}x{}", mask.height(), mask.width()),
        ));
    }
    let (c, d) = (params.channels, params.hidden);
    cache.active.clear();
    cache.active.extend(mask.active_indices());
    let n = cache.active.len();
    // Every entry below is overwritten before it is read.
    cache.percept.resize(4 * c * n, T::zero());
    cache.hidden.resize(d * n, T::zero());
    cache.delta.resize(c * n, T::zero());
    if n == 0 {
        return Ok(());
    }
    perceive_cells(state, &cache.active, &mut cache.percept, &mut cache.plane);
    matmul(
        &params.w1,
        (d, 4 * c),
        false,
        &cache.percept,
        (4 * c, n),
        false,
        T::one(),
        T::zero(),
        &mut cache.hidden,
    );
    for (row, &b) in cache.hidden.chunks_exact_mut(n).zip(&params.b1) {
        for h in row.iter_mut() {
            *h = (*h + b).max(T::zero());
        }
    }
    matmul(
        &params.w2,
        (c, d),
        false,
        &cache.hidden,
        (d, n),
        false,
        T::one(),
        T::zero(),
        &mut cache.delta,
    );
    for ch in 0..c {
        let plane = state.plane_mut(ch);
        for (&idx, &dv) in cache.active.iter().zip(&cache.delta[ch * n..(ch + 1) * n]) {
            plane[idx] += dv;
        }
    }
    Ok(())
}

/// One update with a caller-supplied mask.
pub fn step_masked<T: Real>(
    state: &StateTensor<T>,
    params: &NcaParams<T>,
    mask: &CellMask,
) -> Result<StateTensor<T>> {
    let mut next = state.clone();
    step_in_place(&mut next, params, mask, &mut StepCache::default())?;
    Ok(next)
}

/// One update with the mask drawn from `rng` at the given firing rate.
/// Consumes exactly `H * W` draws.
pub fn step_with_rate<T: Real>(
    state: &StateTensor<T>,
    params: &NcaParams<T>,
    rng: &mut RngStream,
    rate: f64,
) -> Result<StateTensor<T>> {
    let mask = bernoulli_mask(state.height(), state.width(), rate, rng);
    step_masked(state, params, &mask)
}

pub fn step<T: Real>(
    state: &StateTensor<T>,
    params: &NcaParams<T>,
    rng: &mut RngStream,
) -> Result<StateTensor<T>> {
    step_with_rate(state, params, rng, UPDATE_PROBABILITY)
}

#[derive(Debug, Clone)]
pub struct Rollout<T = f32> {
    pub final_state: StateTensor<T>,
    /// Deep copies captured after every `snapshot_every`-th step.
    pub snapshots: Vec<StateTensor<T>>,
}

/// Runs `n_steps` updates. States are checked for finiteness after every
/// step; a failure reports the first offending step (1-based).
pub fn rollout<T: Real>(
    initial: &StateTensor<T>,
    params: &NcaParams<T>,
    n_steps: usize,
    rng: &mut RngStream,
    snapshot_every: Option<usize>,
) -> Result<Rollout<T>> {
    if snapshot_every == Some(0) {
        return Err(NcaError::InvalidArgument(
            "snapshot interval must be at least 1".into(),
        ));
    }
    let mut state = initial.clone();
    let mut snapshots = Vec::new();
    let mut cache = StepCache::default();
    for t in 1..=n_steps {
        let mask = bernoulli_mask(state.height(), state.width(), UPDATE_PROBABILITY, rng);
        step_in_place(&mut state, params, &mask, &mut cache)?;
        if !state.is_finite() {
            return Err(NcaError::NonFinite {
                step: t,
                total: n_steps,
            });
        }
        if snapshot_every.is_some_and(|k| t % k == 0) {
            snapshots.push(state.clone());
        }
    }
    Ok(Rollout {
        final_state: state,
        snapshots,
    })
}

/// Channels 0..3 clamped to `[0, 1]`, scaled by 255 and rounded half away
/// from zero.
pub fn to_rgb<T: Real>(state: &StateTensor<T>) -> Result<RgbImage> {
    if state.channels() < 3 {
        return Err(NcaError::InvalidArgument(format!(
            "rendering needs at least 3 channels, state has {}",
            state.channels()
        )));
    }
    let (h, w) = (state.height(), state.width());
    let quantize = |x: T| (x.as_f64().clamp(0.0, 1.0) * 255.0).round() as u8;
    Ok(RgbImage::from_fn(w, h, |i, j| {
        [
            quantize(state.get(0, i, j)),
            quantize(state.get(1, i, j)),
            quantize(state.get(2, i, j)),
        ]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn random_params(c: usize, d: usize, seed: u64) -> NcaParams<f64> {
        let mut rng = RngStream::new(seed);
        let mut p = NcaParams::<f64>::init(c, d, &mut rng);
        for b in p.b1_mut() {
            *b = rng.next_uniform() - 0.5;
        }
        for w in p.w2_mut() {
            *w = 0.2 * (rng.next_uniform() - 0.5);
        }
        p
    }

    #[test]
    fn init_is_identity_and_bounded() {
        let p = NcaParams::<f32>::init(8, 32, &mut RngStream::new(1));
        assert!(p.w2().iter().all(|&w| w == 0.0));
        assert!(p.b1().iter().all(|&w| w == 0.0));
        let a = (6.0f32 / 64.0).sqrt();
        assert!(p.w1().iter().all(|w| w.abs() <= a));
        assert_eq!(p.param_count(), 32 * 32 + 32 + 8 * 32);
    }

    #[test]
    fn perceive_blocks() {
        let s = StateTensor::<f64>::from_vec(2, 3, 3, vec![0.25; 18]).unwrap();
        let p = perceive(&s);
        assert_eq!(p.block(0), s.data());
        for k in 1..4 {
            assert!(p.block(k).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn single_cell_grid_blocks_collapse() {
        let s = StateTensor::<f64>::from_vec(3, 1, 1, vec![0.3, -1.2, 4.0]).unwrap();
        let p = perceive(&s);
        assert_eq!(p.block(0), s.data());
        for k in 1..4 {
            assert!(p.block(k).iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn adapt_rejects_wrong_width() {
        let s = StateTensor::<f64>::zeros(3, 4, 4);
        let p = perceive(&s);
        let params = NcaParams::<f64>::zeros(2, 5);
        let err = adapt(&p, &params).unwrap_err();
        assert!(err.to_string().contains("expected 8, got 12"), "{err}");
    }

    #[test]
    fn adapt_forced_constant_output() {
        let (c, d) = (3, 5);
        let mut params = NcaParams::<f64>::zeros(c, d);
        params.b1_mut().fill(1.0);
        for r in 0..c.min(d) {
            params.w2_mut()[r * d + r] = 1.0;
        }
        let s = StateTensor::uniform(c, 4, 4, &mut RngStream::new(2));
        let delta = adapt(&perceive(&s), &params).unwrap();
        // Every channel with an identity column receives exactly 1.
        assert!(delta.data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn adapt_single_cell_matches_scalar_chain() {
        let (c, d) = (2, 3);
        let params = random_params(c, d, 17);
        let s = StateTensor::uniform(c, 4, 4, &mut RngStream::new(18));
        let percept = perceive(&s);
        let delta = adapt(&percept, &params).unwrap();
        let (i, j) = (2, 1);
        let pvec: Vec<f64> = (0..4 * c)
            .map(|k| percept.features().get(k, i, j))
            .collect();
        let mut h = [0.0; 3];
        for (r, hr) in h.iter_mut().enumerate() {
            let row = &params.w1()[r * 4 * c..(r + 1) * 4 * c];
            let z = params.b1()[r] + row.iter().zip(&pvec).map(|(w, p)| w * p).sum::<f64>();
            *hr = z.max(0.0);
        }
        for ch in 0..c {
            let want: f64 = (0..d).map(|r| params.w2()[ch * d + r] * h[r]).sum();
            assert!((delta.get(ch, i, j) - want).abs() < 1e-14);
        }
    }

    #[test]
    fn perceive_cells_matches_perceive() {
        let s = StateTensor::<f32>::uniform(3, 5, 6, &mut RngStream::new(4));
        let cells: Vec<usize> = vec![0, 5, 7, 29];
        let mut cols = vec![0.0; 12 * cells.len()];
        perceive_cells(&s, &cells, &mut cols, &mut Vec::new());
        let p = perceive(&s);
        for k in 0..12 {
            for (n, &idx) in cells.iter().enumerate() {
                assert_eq!(cols[k * cells.len() + n], p.features().plane(k)[idx]);
            }
        }
    }

    #[test]
    fn zero_mask_and_zero_w2_are_identity() {
        let s = StateTensor::<f32>::uniform(4, 8, 8, &mut RngStream::new(5));
        let fresh = NcaParams::init(4, 16, &mut RngStream::new(6));
        assert_eq!(step(&s, &fresh, &mut RngStream::new(7)).unwrap(), s);
        let trained = random_params(4, 16, 8).cast::<f32>();
        assert_eq!(
            step_with_rate(&s, &trained, &mut RngStream::new(7), 0.0).unwrap(),
            s
        );
    }

    #[test]
    fn step_consumes_one_draw_per_cell() {
        let s = StateTensor::<f32>::uniform(3, 6, 9, &mut RngStream::new(1));
        let params = NcaParams::init(3, 8, &mut RngStream::new(2));
        let mut a = RngStream::new(3);
        let mut b = a.clone();
        step(&s, &params, &mut a).unwrap();
        bernoulli_mask(6, 9, 0.5, &mut b);
        assert_eq!(a, b);
    }

    #[test]
    fn rollout_counting_and_composition() {
        let params = random_params(3, 8, 9).cast::<f32>();
        let s = StateTensor::<f32>::uniform(3, 8, 8, &mut RngStream::new(10));

        let r0 = rollout(&s, &params, 0, &mut RngStream::new(1), Some(4)).unwrap();
        assert_eq!(r0.final_state, s);
        assert!(r0.snapshots.is_empty());

        let r = rollout(&s, &params, 96, &mut RngStream::new(1), Some(32)).unwrap();
        assert_eq!(r.snapshots.len(), 3);
        assert_eq!(r.snapshots[2], r.final_state);

        let mut rng = RngStream::new(1);
        let a = rollout(&s, &params, 40, &mut rng, None).unwrap();
        let b = rollout(&a.final_state, &params, 56, &mut rng, None).unwrap();
        assert_eq!(b.final_state, r.final_state);
    }

    #[test]
    fn rollout_rejects_zero_interval() {
        let params = NcaParams::<f32>::zeros(3, 4);
        let s = StateTensor::zeros(3, 2, 2);
        assert!(rollout(&s, &params, 1, &mut RngStream::new(0), Some(0)).is_err());
    }

    #[test]
    fn rollout_reports_divergence_step() {
        let mut params = NcaParams::<f32>::zeros(3, 2);
        params.b1_mut().fill(1.0e30);
        params.w2_mut().fill(1.0e30);
        let s = StateTensor::zeros(3, 4, 4);
        let err = rollout(&s, &params, 5, &mut RngStream::new(0), None).unwrap_err();
        assert!(matches!(err, NcaError::NonFinite { step: 1, total: 5 }));
    }

    #[test]
    fn rgb_mapping() {
        let mut s = StateTensor::<f32>::zeros(4, 1, 2);
        s.set(0, 0, 0, 0.0);
        s.set(1, 0, 0, 0.5);
        s.set(2, 0, 0, 1.0);
        s.set(0, 0, 1, -2.3);
        s.set(1, 0, 1, 7.0);
        let img = to_rgb(&s).unwrap();
        assert_eq!(img.pixel(0, 0), [0, 128, 255]);
        assert_eq!(img.pixel(0, 1), [0, 255, 0]);
        assert!(to_rgb(&StateTensor::<f32>::zeros(2, 1, 1)).is_err());
    }
}
