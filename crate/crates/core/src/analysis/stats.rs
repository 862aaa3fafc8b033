use crate::error::{NcaError, Result};
use crate::rng::RngStream;

/// Smallest permutation count accepted by [`permutation_pvalue`].
pub const MIN_PERMUTATIONS: usize = 100;

/// Pearson product-moment correlation, two-pass in `f64`.
pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(NcaError::shape("correlation inputs", x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(NcaError::InsufficientData {
            found: x.len(),
            needed: 2,
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 {
        return Err(NcaError::UndefinedCorrelation("x"));
    }
    if syy == 0.0 {
        return Err(NcaError::UndefinedCorrelation("y"));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Two-tailed permutation p-value of `pearson(x, y)`.
///
/// `y` is shuffled `n_perm` times with Fisher-Yates driven by `rng`;
/// `p = (1 + #{|r_perm| >= |r_obs|}) / (n_perm + 1)`.
pub fn permutation_pvalue(x: &[f64], y: &[f64], n_perm: usize, rng: &mut RngStream) -> Result<f64> {
    let observed = pearson(x, y)?.abs();
    if n_perm < MIN_PERMUTATIONS {
        return Err(NcaError::InvalidArgument(format!(
            "need at least {MIN_PERMUTATIONS} permutations, got {n_perm}"
        )));
    }
    let mut shuffled = y.to_vec();
    let mut extreme = 0usize;
    for _ in 0..n_perm {
        rng.shuffle(&mut shuffled);
        if pearson(x, &shuffled)?.abs() >= observed {
            extreme += 1;
        }
    }
    Ok((1 + extreme) as f64 / (n_perm + 1) as f64)
}
