//! Losses on the rendered (RGB) channels of a state, with their gradients
//! with respect to the full state.

use serde::{Deserialize, Serialize};

use crate::error::{NcaError, Result};
use crate::grid::{conv3x3_circular, conv3x3_circular_adjoint, Kernel3x3, StateTensor};
use crate::image::RgbImage;
use crate::real::{matmul, Real};

/// Number of pyramid levels used by the Gram texture loss.
pub const GRAM_LEVELS: usize = 3;
/// Maps per level: 3 raw channels plus 3 channels x 3 filters.
pub const GRAM_FEATURES: usize = 12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LossKind {
    /// Mean squared error against the target pixels.
    Mse,
    /// Position-free Gram-matrix texture loss.
    #[default]
    Gram,
}

impl std::str::FromStr for LossKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "mse" => Ok(LossKind::Mse),
            "gram" | "gram-texture" => Ok(LossKind::Gram),
            other => Err(format!("unknown loss '{other}' (expected mse or gram)")),
        }
    }
}

impl std::fmt::Display for LossKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            LossKind::Mse => "mse",
            LossKind::Gram => "gram",
        })
    }
}

/// Anything that scores a final state and returns `dLoss/dState`.
pub trait StateLoss<T: Real> {
    fn evaluate(&self, state: &StateTensor<T>) -> Result<(T, StateTensor<T>)>;
}

impl<T: Real, F> StateLoss<T> for F
where
    F: Fn(&StateTensor<T>) -> Result<(T, StateTensor<T>)>,
{
    fn evaluate(&self, state: &StateTensor<T>) -> Result<(T, StateTensor<T>)> {
        self(state)
    }
}

/// RGB image as a 3-channel tensor scaled to `[0, 1]`.
pub fn image_to_tensor<T: Real>(img: &RgbImage) -> StateTensor<T> {
    let (h, w) = (img.height(), img.width());
    let mut t = StateTensor::zeros(3, h, w);
    for i in 0..h {
        for j in 0..w {
            let px = img.pixel(i, j);
            for (c, &v) in px.iter().enumerate() {
                t.set(c, i, j, T::lit(v as f64 / 255.0));
            }
        }
    }
    t
}

fn check_channels<T: Real>(state: &StateTensor<T>) -> Result<()> {
    if state.channels() < 3 {
        return Err(NcaError::InvalidArgument(format!(
            "loss needs at least 3 channels, state has {}",
            state.channels()
        )));
    }
    Ok(())
}

fn check_dims<T: Real>(state: &StateTensor<T>, target: &StateTensor<T>) -> Result<()> {
    check_channels(state)?;
    if state.height() != target.height() || state.width() != target.width() {
        return Err(NcaError::shape(
            "target size",
            format!("{}x{}", state.height(), state.width()),
            format!("{}x{}", target.height(), target.width()),
        ));
    }
    Ok(())
}

fn rgb_part<T: Real>(state: &StateTensor<T>) -> StateTensor<T> {
    let n = 3 * state.plane_len();
    StateTensor::from_vec(3, state.height(), state.width(), state.data()[..n].to_vec())
        .expect("rgb slice has 3 planes")
}

fn embed_rgb_grad<T: Real>(state: &StateTensor<T>, rgb_grad: &StateTensor<T>) -> StateTensor<T> {
    let mut grad = StateTensor::zeros(state.channels(), state.height(), state.width());
    let n = 3 * state.plane_len();
    grad.data_mut()[..n].copy_from_slice(rgb_grad.data());
    grad
}

fn mse_against<T: Real>(state: &StateTensor<T>, target: &StateTensor<T>) -> (T, StateTensor<T>) {
    let n = 3 * state.plane_len();
    let scale = T::lit(2.0 / n as f64);
    let mut grad = StateTensor::zeros(state.channels(), state.height(), state.width());
    let mut sum = 0.0f64;
    for ((g, &s), &t) in grad.data_mut()[..n]
        .iter_mut()
        .zip(&state.data()[..n])
        .zip(target.data())
    {
        let d = s - t;
        sum += d.as_f64() * d.as_f64();
        *g = scale * d;
    }
    (T::lit(sum / n as f64), grad)
}

/// Mean of `(s - target)^2` over the three RGB channels.
pub fn loss_mse<T: Real>(state: &StateTensor<T>, target: &RgbImage) -> Result<(T, StateTensor<T>)> {
    let t = image_to_tensor::<T>(target);
    check_dims(state, &t)?;
    Ok(mse_against(state, &t))
}

/// 2x2 average pooling of every channel.
pub(crate) fn avg_pool2<T: Real>(x: &StateTensor<T>) -> StateTensor<T> {
    let (h, w) = (x.height() / 2, x.width() / 2);
    let mut out = StateTensor::zeros(x.channels(), h, w);
    let quarter = T::lit(0.25);
    for c in 0..x.channels() {
        let src = x.plane(c);
        let sw = x.width();
        let dst = out.plane_mut(c);
        for i in 0..h {
            for j in 0..w {
                let o = 2 * i * sw + 2 * j;
                dst[i * w + j] = (src[o] + src[o + 1] + src[o + sw] + src[o + sw + 1]) * quarter;
            }
        }
    }
    out
}

fn avg_pool2_adjoint<T: Real>(grad: &StateTensor<T>, into: &mut StateTensor<T>) {
    let quarter = T::lit(0.25);
    let sw = into.width();
    for c in 0..grad.channels() {
        let g = grad.plane(c);
        let w = grad.width();
        let dst = into.plane_mut(c);
        for i in 0..grad.height() {
            for j in 0..w {
                let v = g[i * w + j] * quarter;
                let o = 2 * i * sw + 2 * j;
                dst[o] += v;
                dst[o + 1] += v;
                dst[o + sw] += v;
                dst[o + sw + 1] += v;
            }
        }
    }
}

const FILTERS: [Kernel3x3; 3] = [Kernel3x3::SOBEL_X, Kernel3x3::SOBEL_Y, Kernel3x3::LAPLACIAN];

/// Feature maps `[raw rgb | sobel-x rgb | sobel-y rgb | laplacian rgb]`,
/// `12 x (h*w)` row-major.
fn feature_maps<T: Real>(rgb: &StateTensor<T>) -> Vec<T> {
    let mut f = Vec::with_capacity(GRAM_FEATURES * rgb.plane_len());
    f.extend_from_slice(rgb.data());
    for k in &FILTERS {
        f.extend_from_slice(conv3x3_circular(rgb, k).data());
    }
    f
}

fn gram<T: Real>(features: &[T], cells: usize) -> Vec<T> {
    let mut g = vec![T::zero(); GRAM_FEATURES * GRAM_FEATURES];
    matmul(
        features,
        (GRAM_FEATURES, cells),
        false,
        features,
        (GRAM_FEATURES, cells),
        true,
        T::lit(1.0 / cells as f64),
        T::zero(),
        &mut g,
    );
    g
}

fn pyramid<T: Real>(rgb: StateTensor<T>) -> Vec<StateTensor<T>> {
    let mut levels = vec![rgb];
    for _ in 1..GRAM_LEVELS {
        let next = avg_pool2(levels.last().unwrap());
        levels.push(next);
    }
    levels
}

fn check_pyramid(h: usize, w: usize) -> Result<()> {
    let div = 1 << (GRAM_LEVELS - 1);
    if !h.is_multiple_of(div) || !w.is_multiple_of(div) {
        return Err(NcaError::InvalidArgument(format!(
            "gram texture loss needs height and width divisible by {div}, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Gram matrices of the target pyramid, one `12 x 12` matrix per level.
fn target_grams<T: Real>(target: &StateTensor<T>) -> Vec<Vec<T>> {
    pyramid(target.clone())
        .iter()
        .map(|lvl| gram(&feature_maps(lvl), lvl.plane_len()))
        .collect()
}

fn gram_against<T: Real>(state: &StateTensor<T>, targets: &[Vec<T>]) -> (T, StateTensor<T>) {
    let levels = pyramid(rgb_part(state));
    let mut loss = 0.0f64;
    // Gradient w.r.t. each level's RGB planes, before pooling adjoints.
    let mut level_grads = Vec::with_capacity(levels.len());
    for (lvl, tg) in levels.iter().zip(targets) {
        let cells = lvl.plane_len();
        let f = feature_maps(lvl);
        let g = gram(&f, cells);
        let diff: Vec<T> = g.iter().zip(tg).map(|(&a, &b)| a - b).collect();
        loss += diff.iter().map(|d| d.as_f64() * d.as_f64()).sum::<f64>();
        // dL/dF = (4 / cells) * diff * F, diff being symmetric.
        let mut df = vec![T::zero(); f.len()];
        matmul(
            &diff,
            (GRAM_FEATURES, GRAM_FEATURES),
            false,
            &f,
            (GRAM_FEATURES, cells),
            false,
            T::lit(4.0 / cells as f64),
            T::zero(),
            &mut df,
        );
        let (h, w) = (lvl.height(), lvl.width());
        let block = |k: usize| {
            StateTensor::from_vec(3, h, w, df[k * 3 * cells..(k + 1) * 3 * cells].to_vec())
                .expect("feature block has 3 planes")
        };
        let mut grad = block(0);
        for (k, kernel) in FILTERS.iter().enumerate() {
            let back = conv3x3_circular_adjoint(&block(k + 1), kernel);
            for (a, &b) in grad.data_mut().iter_mut().zip(back.data()) {
                *a += b;
            }
        }
        level_grads.push(grad);
    }
    // Fold coarse-level gradients back through the pooling chain.
    while level_grads.len() > 1 {
        let top = level_grads.pop().unwrap();
        avg_pool2_adjoint(&top, level_grads.last_mut().unwrap());
    }
    let rgb_grad = level_grads.pop().unwrap();
    (T::lit(loss), embed_rgb_grad(state, &rgb_grad))
}

/// Sum over a 3-level average-pool pyramid of squared Frobenius distances
/// between Gram matrices of filter-bank responses.
///
/// Gram matrices are normalized per cell, so the state grid may differ in
/// size from the target as long as both halve cleanly twice.
pub fn loss_gram_texture<T: Real>(
    state: &StateTensor<T>,
    target: &RgbImage,
) -> Result<(T, StateTensor<T>)> {
    let t = image_to_tensor::<T>(target);
    check_channels(state)?;
    check_pyramid(state.height(), state.width())?;
    check_pyramid(t.height(), t.width())?;
    Ok(gram_against(state, &target_grams(&t)))
}

/// Magnitude beyond which state values are penalized by [`overflow_penalty`].
pub const OVERFLOW_BOUND: f64 = 1.0;

/// Mean over every channel and cell of `|x - clamp(x, -1, 1)|`.
///
/// Appearance losses only see the RGB channels; this keeps the hidden
/// channels bounded so long rollouts stay finite.
pub fn overflow_penalty<T: Real>(state: &StateTensor<T>) -> (T, StateTensor<T>) {
    let bound = T::lit(OVERFLOW_BOUND);
    let inv_n = T::lit(1.0 / state.data().len() as f64);
    let mut grad = StateTensor::zeros(state.channels(), state.height(), state.width());
    let mut total = T::zero();
    for (g, &x) in grad.data_mut().iter_mut().zip(state.data()) {
        if x > bound {
            total += x - bound;
            *g = inv_n;
        } else if x < -bound {
            total += -bound - x;
            *g = -inv_n;
        }
    }
    (total * inv_n, grad)
}

/// A loss bound to one target image, with target statistics precomputed.
#[derive(Debug, Clone)]
pub struct TargetLoss<T> {
    kind: LossKind,
    target: StateTensor<T>,
    grams: Vec<Vec<T>>,
    overflow_weight: T,
}

impl<T: Real> TargetLoss<T> {
    pub fn new(kind: LossKind, target: &RgbImage) -> Result<Self> {
        let t = image_to_tensor::<T>(target);
        let grams = match kind {
            LossKind::Mse => Vec::new(),
            LossKind::Gram => {
                check_pyramid(t.height(), t.width())?;
                target_grams(&t)
            }
        };
        Ok(Self {
            kind,
            target: t,
            grams,
            overflow_weight: T::zero(),
        })
    }

    /// Adds `weight * overflow_penalty` to the loss.
    pub fn with_overflow_penalty(mut self, weight: f64) -> Self {
        self.overflow_weight = T::lit(weight);
        self
    }

    pub fn kind(&self) -> LossKind {
        self.kind
    }

    pub fn height(&self) -> usize {
        self.target.height()
    }

    pub fn width(&self) -> usize {
        self.target.width()
    }
}

impl<T: Real> StateLoss<T> for TargetLoss<T> {
    fn evaluate(&self, state: &StateTensor<T>) -> Result<(T, StateTensor<T>)> {
        match self.kind {
            LossKind::Mse => check_dims(state, &self.target)?,
            LossKind::Gram => {
                check_channels(state)?;
                check_pyramid(state.height(), state.width())?;
            }
        }
        let (mut loss, mut grad) = match self.kind {
            LossKind::Mse => mse_against(state, &self.target),
            LossKind::Gram => gram_against(state, &self.grams),
        };
        if self.overflow_weight > T::zero() {
            let (extra, dextra) = overflow_penalty(state);
            loss += self.overflow_weight * extra;
            for (g, d) in grad.data_mut().iter_mut().zip(dextra.data()) {
                *g += self.overflow_weight * *d;
            }
        }
        Ok((loss, grad))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut rng = RngStream::new(seed);
        RgbImage::from_fn(w, h, |_, _| {
            [0, 0, 0].map(|_: u8| (rng.next_uniform() * 256.0) as u8)
        })
    }

    fn state_from_image(img: &RgbImage, extra: usize) -> StateTensor<f64> {
        let t = image_to_tensor::<f64>(img);
        let mut data = t.into_vec();
        data.extend((0..extra * img.width() * img.height()).map(|i| (i % 7) as f64));
        StateTensor::from_vec(3 + extra, img.height(), img.width(), data).unwrap()
    }

    #[test]
    fn mse_zero_and_analytic_cases() {
        let img = random_image(4, 6, 1);
        let s = state_from_image(&img, 2);
        let (l, g) = loss_mse(&s, &img).unwrap();
        assert_eq!(l, 0.0);
        assert!(g.data().iter().all(|&v| v == 0.0));

        let white = RgbImage::from_fn(6, 4, |_, _| [255; 3]);
        let (l, _) = loss_mse(&StateTensor::<f64>::zeros(4, 4, 6), &white).unwrap();
        assert_eq!(l, 1.0);
    }

    #[test]
    fn mse_matches_elementwise_oracle() {
        let img = random_image(5, 5, 2);
        let s = StateTensor::<f64>::uniform(4, 5, 5, &mut RngStream::new(3));
        let (l, g) = loss_mse(&s, &img).unwrap();
        let mut want = 0.0;
        for c in 0..3 {
            for i in 0..5 {
                for j in 0..5 {
                    let t = img.pixel(i, j)[c] as f64 / 255.0;
                    let d = s.get(c, i, j) - t;
                    want += d * d;
                    assert!((g.get(c, i, j) - 2.0 * d / 75.0).abs() < 1e-15);
                }
            }
        }
        assert!((l - want / 75.0).abs() < 1e-14);
        assert!(g.plane(3).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn loss_rejects_bad_dims() {
        let img = random_image(4, 4, 1);
        assert!(loss_mse(&StateTensor::<f32>::zeros(3, 4, 5), &img).is_err());
        assert!(loss_mse(&StateTensor::<f32>::zeros(2, 4, 4), &img).is_err());
        let odd = random_image(6, 8, 1);
        let err = loss_gram_texture(&StateTensor::<f32>::zeros(3, 6, 8), &odd).unwrap_err();
        assert!(err.to_string().contains("divisible by 4"));
    }

    /// Gram loss computed the slow way: explicit pooling, explicit circular
    /// filter sums and explicit Gram entries.
    fn gram_oracle(a: &[Vec<Vec<f64>>; 3], b: &[Vec<Vec<f64>>; 3]) -> f64 {
        fn pool(p: &[Vec<f64>]) -> Vec<Vec<f64>> {
            let (h, w) = (p.len() / 2, p[0].len() / 2);
            (0..h)
                .map(|i| {
                    (0..w)
                        .map(|j| {
                            (p[2 * i][2 * j]
                                + p[2 * i][2 * j + 1]
                                + p[2 * i + 1][2 * j]
                                + p[2 * i + 1][2 * j + 1])
                                / 4.0
                        })
                        .collect()
                })
                .collect()
        }
        fn filt(p: &[Vec<f64>], k: &Kernel3x3) -> Vec<Vec<f64>> {
            let (h, w) = (p.len() as i64, p[0].len() as i64);
            (0..h)
                .map(|i| {
                    (0..w)
                        .map(|j| {
                            let mut s = 0.0;
                            for di in -1..=1 {
                                for dj in -1..=1 {
                                    s += k.coeffs[((di + 1) * 3 + dj + 1) as usize] as f64
                                        * p[(i + di).rem_euclid(h) as usize]
                                            [(j + dj).rem_euclid(w) as usize];
                                }
                            }
                            s
                        })
                        .collect()
                })
                .collect()
        }
        fn grams(img: &[Vec<Vec<f64>>; 3]) -> Vec<Vec<Vec<f64>>> {
            let mut level: Vec<Vec<Vec<f64>>> = img.to_vec();
            let mut out = Vec::new();
            for l in 0..3 {
                if l > 0 {
                    level = level.iter().map(|p| pool(p)).collect();
                }
                let mut maps = level.clone();
                for k in [Kernel3x3::SOBEL_X, Kernel3x3::SOBEL_Y, Kernel3x3::LAPLACIAN] {
                    for p in &level {
                        maps.push(filt(p, &k));
                    }
                }
                let n = (level[0].len() * level[0][0].len()) as f64;
                let g: Vec<Vec<f64>> = (0..12)
                    .map(|x| {
                        (0..12)
                            .map(|y| {
                                let mut s = 0.0;
                                for (rx, ry) in maps[x].iter().zip(&maps[y]) {
                                    for (u, v) in rx.iter().zip(ry) {
                                        s += u * v;
                                    }
                                }
                                s / n
                            })
                            .collect()
                    })
                    .collect();
                out.push(g);
            }
            out
        }
        let (ga, gb) = (grams(a), grams(b));
        let mut loss = 0.0;
        for l in 0..3 {
            for x in 0..12 {
                for y in 0..12 {
                    loss += (ga[l][x][y] - gb[l][x][y]).powi(2);
                }
            }
        }
        loss
    }

    fn planes(t: &StateTensor<f64>) -> [Vec<Vec<f64>>; 3] {
        [0, 1, 2].map(|c| {
            (0..t.height())
                .map(|i| (0..t.width()).map(|j| t.get(c, i, j)).collect())
                .collect()
        })
    }

    #[test]
    fn gram_matches_naive_oracle() {
        let img = random_image(16, 16, 5);
        let s = StateTensor::<f64>::uniform(4, 16, 16, &mut RngStream::new(6));
        let (l, _) = loss_gram_texture(&s, &img).unwrap();
        let want = gram_oracle(&planes(&s), &planes(&image_to_tensor(&img)));
        assert!((l - want).abs() <= 1e-10 * want.max(1.0), "{l} vs {want}");
    }

    #[test]
    fn gram_zero_on_target_and_aligned_translations() {
        let img = random_image(16, 16, 7);
        let s = state_from_image(&img, 1);
        assert_eq!(loss_gram_texture(&s, &img).unwrap().0, 0.0);
        // Pooling commutes with translations by multiples of the pyramid
        // stride, so those leave every level's Gram matrix unchanged.
        for (dx, dy) in [(4, 0), (0, 8), (12, 4)] {
            let (l, _) = loss_gram_texture(&s.shifted(dx, dy), &img).unwrap();
            assert!(l <= 1e-6, "shift ({dx},{dy}) gave {l}");
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let img = random_image(8, 8, 9);
        let s = StateTensor::<f64>::uniform(4, 8, 8, &mut RngStream::new(10));
        for kind in [LossKind::Mse, LossKind::Gram] {
            let loss = TargetLoss::<f64>::new(kind, &img).unwrap();
            let (_, g) = loss.evaluate(&s).unwrap();
            let mut rng = RngStream::new(11);
            for _ in 0..12 {
                let k = rng.next_below(s.data().len());
                let eps = 1e-6;
                let mut plus = s.clone();
                plus.data_mut()[k] += eps;
                let mut minus = s.clone();
                minus.data_mut()[k] -= eps;
                let fd = (loss.evaluate(&plus).unwrap().0 - loss.evaluate(&minus).unwrap().0)
                    / (2.0 * eps);
                let an = g.data()[k];
                assert!(
                    (fd - an).abs() <= 1e-6 * an.abs().max(1e-3),
                    "{kind}: {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn overflow_penalty_value_and_gradient() {
        let s =
            StateTensor::<f64>::from_vec(2, 1, 3, vec![0.5, 1.5, -3.0, -1.0, 1.0, 2.0]).unwrap();
        let (p, g) = overflow_penalty(&s);
        assert!((p - 3.5 / 6.0).abs() < 1e-15);
        let inv = 1.0 / 6.0;
        assert_eq!(g.data(), &[0.0, inv, -inv, 0.0, 0.0, inv]);

        let img = random_image(8, 8, 12);
        let mut wide = StateTensor::<f64>::uniform(5, 8, 8, &mut RngStream::new(13));
        wide.data_mut().iter_mut().for_each(|v| *v = 6.0 * *v - 3.0);
        let loss = TargetLoss::<f64>::new(LossKind::Mse, &img)
            .unwrap()
            .with_overflow_penalty(2.5);
        let (_, g) = loss.evaluate(&wide).unwrap();
        for k in (0..wide.data().len()).step_by(7) {
            let eps = 1e-7;
            let mut plus = wide.clone();
            plus.data_mut()[k] += eps;
            let mut minus = wide.clone();
            minus.data_mut()[k] -= eps;
            let fd =
                (loss.evaluate(&plus).unwrap().0 - loss.evaluate(&minus).unwrap().0) / (2.0 * eps);
            assert!(
                (fd - g.data()[k]).abs() <= 1e-6,
                "cell {k}: {fd} vs {}",
                g.data()[k]
            );
        }
    }

    #[test]
    fn gram_compares_grids_of_different_sizes() {
        let img = random_image(8, 8, 14);
        let tiled = RgbImage::from_fn(16, 16, |i, j| img.pixel(i % 8, j % 8));
        let s = state_from_image(&tiled, 1);
        let (l, _) = loss_gram_texture(&s, &img).unwrap();
        assert!(l <= 1e-12, "tiled target gave {l}");
        let gram = TargetLoss::<f64>::new(LossKind::Gram, &img).unwrap();
        assert!(gram.evaluate(&s).unwrap().0 <= 1e-12);
        let mse = TargetLoss::<f64>::new(LossKind::Mse, &img).unwrap();
        assert!(mse.evaluate(&s).is_err());
    }
}
