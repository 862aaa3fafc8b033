//! Per-tensor gradient normalization and Adam.

use crate::model::NcaParams;
use crate::real::Real;

use super::backward::Gradients;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Tensors with an L2 norm below this are left as they are.
pub const NORM_FLOOR: f64 = 1e-12;

/// Scales each gradient tensor to unit L2 norm.
pub fn grad_normalize<T: Real>(g: &Gradients<T>) -> Gradients<T> {
    let mut out = g.clone();
    let norms = g.norms();
    for (t, norm) in out.tensors_mut().into_iter().zip(norms) {
        if norm >= NORM_FLOOR {
            let inv = T::lit(1.0 / norm);
            for x in t.iter_mut() {
                *x = *x * inv;
            }
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T = f32> {
    pub m: [Vec<T>; 3],
    pub v: [Vec<T>; 3],
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &NcaParams<T>) -> Self {
        let zeros = params.tensors().map(|t| vec![T::zero(); t.len()]);
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }
}

/// One bias-corrected Adam step (beta1 = 0.9, beta2 = 0.999, eps = 1e-8).
pub fn adam_update<T: Real>(
    params: &mut NcaParams<T>,
    g: &Gradients<T>,
    st: &mut AdamState<T>,
    lr: f64,
) {
    st.t += 1;
    let b1 = T::lit(ADAM_BETA1);
    let b2 = T::lit(ADAM_BETA2);
    let one = T::one();
    let c1 = T::lit(1.0 - ADAM_BETA1.powi(st.t as i32));
    let c2 = T::lit(1.0 - ADAM_BETA2.powi(st.t as i32));
    let lr = T::lit(lr);
    let eps = T::lit(ADAM_EPS);
    for (((p, grad), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g.tensors())
        .zip(st.m.iter_mut())
        .zip(st.v.iter_mut())
    {
        for (((p, &g), m), v) in p.iter_mut().zip(grad).zip(m.iter_mut()).zip(v.iter_mut()) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p = *p - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
}
