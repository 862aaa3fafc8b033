//! Dense cell grids, the fixed 3x3 perception kernels and circular
//! (toroidal) convolution.

use crate::error::{NcaError, Result};
use crate::real::Real;
use crate::rng::RngStream;

/// Cell-state grid of `channels x height x width` scalars, channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct StateTensor<T = f32> {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Real> StateTensor<T> {
    /// Panics if any dimension is zero.
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        assert!(
            channels >= 1 && height >= 1 && width >= 1,
            "grid dimensions must be positive"
        );
        Self {
            channels,
            height,
            width,
            data: vec![T::zero(); channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<T>) -> Result<Self> {
        if channels == 0 || height == 0 || width == 0 {
            return Err(NcaError::InvalidArgument(format!(
                "grid dimensions must be positive, got {channels}x{height}x{width}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(NcaError::shape(
                "state data length",
                channels * height * width,
                data.len(),
            ));
        }
        Ok(Self {
            channels,
            height,
            width,
            data,
        })
    }

    /// Every scalar drawn i.i.d. from uniform(0, 1), in storage order.
    pub fn uniform(channels: usize, height: usize, width: usize, rng: &mut RngStream) -> Self {
        let mut s = Self::zeros(channels, height, width);
        for x in s.data.iter_mut() {
            *x = T::lit(rng.next_uniform());
        }
        s
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// Cells per channel plane.
    pub fn plane_len(&self) -> usize {
        self.height * self.width
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<T> {
        self.data
    }

    pub fn plane(&self, c: usize) -> &[T] {
        let n = self.plane_len();
        &self.data[c * n..(c + 1) * n]
    }

    pub fn plane_mut(&mut self, c: usize) -> &mut [T] {
        let n = self.plane_len();
        &mut self.data[c * n..(c + 1) * n]
    }

    pub fn get(&self, c: usize, i: usize, j: usize) -> T {
        self.data[(c * self.height + i) * self.width + j]
    }

    pub fn set(&mut self, c: usize, i: usize, j: usize, value: T) {
        self.data[(c * self.height + i) * self.width + j] = value;
    }

    pub fn same_shape<U>(&self, other: &StateTensor<U>) -> bool {
        self.channels == other.channels && self.height == other.height && self.width == other.width
    }

    pub fn shape_string(&self) -> String {
        format!("{}x{}x{}", self.channels, self.height, self.width)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn cast<U: Real>(&self) -> StateTensor<U> {
        StateTensor {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }

    /// Circular translation: output cell `(i, j)` takes input cell
    /// `(i - dy, j - dx)` (mod the grid).
    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut out = self.clone();
        for c in 0..self.channels {
            let src = self.plane(c);
            let dst = out.plane_mut(c);
            for i in 0..h {
                let si = (i - dy).rem_euclid(h);
                for j in 0..w {
                    let sj = (j - dx).rem_euclid(w);
                    dst[(i * w + j) as usize] = src[(si * w + sj) as usize];
                }
            }
        }
        out
    }
}

/// A 3x3 convolution kernel, row-major; `coeffs[(di + 1) * 3 + (dj + 1)]`
/// weighs the neighbour at row offset `di`, column offset `dj`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kernel3x3 {
    pub coeffs: [f32; 9],
}

impl Kernel3x3 {
    pub const IDENTITY: Kernel3x3 = Kernel3x3 {
        coeffs: [0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0],
    };
    /// Unnormalized Sobel, horizontal gradient.
    pub const SOBEL_X: Kernel3x3 = Kernel3x3 {
        coeffs: [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0],
    };
    /// Transpose of [`Self::SOBEL_X`].
    pub const SOBEL_Y: Kernel3x3 = Kernel3x3 {
        coeffs: [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0],
    };
    /// 9-point Laplacian.
    pub const LAPLACIAN: Kernel3x3 = Kernel3x3 {
        coeffs: [1.0, 2.0, 1.0, 2.0, -12.0, 2.0, 1.0, 2.0, 1.0],
    };

    /// The perception filter bank, in perception-block order.
    pub const PERCEPTION: [Kernel3x3; 4] = [
        Self::IDENTITY,
        Self::SOBEL_X,
        Self::SOBEL_Y,
        Self::LAPLACIAN,
    ];

    pub fn new(coeffs: [f32; 9]) -> Self {
        Self { coeffs }
    }

    pub fn transposed(&self) -> Self {
        let c = self.coeffs;
        Self::new([c[0], c[3], c[6], c[1], c[4], c[7], c[2], c[5], c[8]])
    }

    /// Kernel rotated by 180 degrees. Circular convolution with the rotated
    /// kernel is the adjoint of circular convolution with `self`.
    pub fn rotated_180(&self) -> Self {
        let mut c = self.coeffs;
        c.reverse();
        Self::new(c)
    }

    pub fn sum(&self) -> f32 {
        self.coeffs.iter().sum()
    }
}

/// Weighted sum of a 3x3 neighbourhood `v` (row-major, centre at 4).
///
/// Zero-sum kernels are evaluated on differences from the centre value,
/// which is the same linear map but returns exactly zero on locally constant
/// input.
#[inline(always)]
pub(crate) fn apply3x3<T: Real>(k: &[T; 9], zero_sum: bool, v: &[T; 9]) -> T {
    let mut acc = T::zero();
    if zero_sum {
        let centre = v[4];
        for t in 0..9 {
            acc += k[t] * (v[t] - centre);
        }
    } else {
        for t in 0..9 {
            acc += k[t] * v[t];
        }
    }
    acc
}

/// Circular 3x3 convolution of one `h x w` plane into `dst`.
///
/// Terms are accumulated in the same order for every output cell, so the
/// result commutes exactly with circular shifts.
pub fn conv_plane<T: Real>(src: &[T], dst: &mut [T], h: usize, w: usize, kernel: &Kernel3x3) {
    assert_eq!(src.len(), h * w);
    assert_eq!(dst.len(), h * w);
    let k: [T; 9] = kernel.coeffs.map(|x| T::lit(x as f64));
    let zero_sum = kernel.sum() == 0.0;
    for i in 0..h {
        let up = &src[if i == 0 { h - 1 } else { i - 1 } * w..][..w];
        let mid = &src[i * w..][..w];
        let down = &src[if i + 1 == h { 0 } else { i + 1 } * w..][..w];
        let out = &mut dst[i * w..][..w];
        if w >= 3 {
            // Interior columns, one kernel term at a time. Zero-coefficient
            // terms are skipped; for finite input that is bit-identical to
            // adding them, as the accumulator can never hold -0.0.
            let m = w - 2;
            let taps = [
                &up[..m],
                &up[1..m + 1],
                &up[2..],
                &mid[..m],
                &mid[1..m + 1],
                &mid[2..],
                &down[..m],
                &down[1..m + 1],
                &down[2..],
            ];
            let centre = taps[4];
            let o = &mut out[1..m + 1];
            o.fill(T::zero());
            for (t, tap) in taps.iter().enumerate() {
                let kt = k[t];
                if kt == T::zero() {
                    continue;
                }
                if zero_sum {
                    for ((o, &x), &c) in o.iter_mut().zip(*tap).zip(centre) {
                        *o += kt * (x - c);
                    }
                } else {
                    for (o, &x) in o.iter_mut().zip(*tap) {
                        *o += kt * x;
                    }
                }
            }
        }
        for j in [0, w - 1] {
            let l = if j == 0 { w - 1 } else { j - 1 };
            let r = if j + 1 == w { 0 } else { j + 1 };
            let v = [
                up[l], up[j], up[r], mid[l], mid[j], mid[r], down[l], down[j], down[r],
            ];
            out[j] = apply3x3(&k, zero_sum, &v);
        }
    }
}

/// Depthwise circular convolution: `kernel` is applied to every channel
/// independently with wrap-around boundaries.
pub fn conv3x3_circular<T: Real>(input: &StateTensor<T>, kernel: &Kernel3x3) -> StateTensor<T> {
    let (h, w) = (input.height(), input.width());
    let mut out = StateTensor::zeros(input.channels(), h, w);
    for c in 0..input.channels() {
        conv_plane(input.plane(c), out.plane_mut(c), h, w, kernel);
    }
    out
}

/// Adjoint of [`conv3x3_circular`] with the same kernel.
pub fn conv3x3_circular_adjoint<T: Real>(
    grad: &StateTensor<T>,
    kernel: &Kernel3x3,
) -> StateTensor<T> {
    conv3x3_circular(grad, &kernel.rotated_180())
}

/// Per-cell binary gate, row-major `height x width`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CellMask {
    height: usize,
    width: usize,
    cells: Vec<bool>,
}

impl CellMask {
    pub fn filled(height: usize, width: usize, value: bool) -> Self {
        Self {
            height,
            width,
            cells: vec![value; height * width],
        }
    }

    pub fn from_cells(height: usize, width: usize, cells: Vec<bool>) -> Result<Self> {
        if cells.len() != height * width {
            return Err(NcaError::shape("mask length", height * width, cells.len()));
        }
        Ok(Self {
            height,
            width,
            cells,
        })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn cells(&self) -> &[bool] {
        &self.cells
    }

    pub fn count_active(&self) -> usize {
        self.cells.iter().filter(|&&b| b).count()
    }

    pub fn mean(&self) -> f64 {
        self.count_active() as f64 / self.cells.len() as f64
    }

    /// Indices of active cells in row-major order.
    pub fn active_indices(&self) -> Vec<usize> {
        self.cells
            .iter()
            .enumerate()
            .filter_map(|(i, &b)| b.then_some(i))
            .collect()
    }

    pub fn shifted(&self, dx: isize, dy: isize) -> Self {
        let (h, w) = (self.height as isize, self.width as isize);
        let mut cells = vec![false; self.cells.len()];
        for i in 0..h {
            for j in 0..w {
                let si = (i - dy).rem_euclid(h);
                let sj = (j - dx).rem_euclid(w);
                cells[(i * w + j) as usize] = self.cells[(si * w + sj) as usize];
            }
        }
        Self {
            height: self.height,
            width: self.width,
            cells,
        }
    }
}

/// Each cell is independently active with probability `p` (`uniform < p`).
/// Consumes exactly `height * width` draws, row-major.
pub fn bernoulli_mask(height: usize, width: usize, p: f64, rng: &mut RngStream) -> CellMask {
    assert!((0.0..=1.0).contains(&p), "probability must lie in [0, 1]");
    let cells = (0..height * width)
        .map(|_| rng.next_uniform() < p)
        .collect();
    CellMask {
        height,
        width,
        cells,
    }
}
