//! Closed-form Bregman proximal maps and Euclidean projections.

use crate::error::{Error, Result};

/// Largest representable value strictly below 1; dual iterates saturate here.
pub const DUAL_LIMIT: f64 = 1.0 - f64::EPSILON / 2.0;

/// Proximal map of `x -> alpha * x * c` under the binary-entropy Bregman
/// distance `psi(x) = ((1 + x) ln(1 + x) + (1 - x) ln(1 - x)) / 2`:
///
/// `(e^{-2 alpha c} - r) / (e^{-2 alpha c} + r)` with `r = (1 - p) / (1 + p)`,
/// evaluated as `tanh(atanh(p) - alpha c)` so large arguments cannot overflow.
pub fn bregman_dual_prox(p_bar: f64, c: f64, alpha: f64) -> Result<f64> {
    if !(p_bar.abs() < 1.0) {
        return Err(Error::DomainError { value: p_bar });
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    Ok(dual_prox_unchecked(p_bar, c, alpha))
}

#[inline]
pub(crate) fn dual_prox_unchecked(p_bar: f64, c: f64, alpha: f64) -> f64 {
    (p_bar.atanh() - alpha * c).tanh()
}

/// Proximal map of `x -> alpha <x, c>` over the unit simplex under the
/// entropy Bregman distance: `x_i e^{-2 alpha c_i} / sum_j x_j e^{-2 alpha c_j}`.
///
/// Computed in the log domain, so the normaliser never vanishes for strictly
/// positive `u_bar`.
pub fn bregman_primal_prox(u_bar: &[f64], c: &[f64], alpha: f64) -> Result<Vec<f64>> {
    if u_bar.len() != c.len() {
        return Err(Error::dims(u_bar.len(), c.len()));
    }
    if u_bar.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::InvalidInput("u_bar must be strictly positive".into()));
    }
    if !(alpha >= 0.0) {
        return Err(Error::InvalidInput(format!("alpha must be >= 0, got {alpha}")));
    }
    let mut out = vec![0.0; u_bar.len()];
    primal_prox_into(u_bar, c, alpha, &mut out);
    Ok(out)
}

#[inline]
pub(crate) fn primal_prox_into(u_bar: &[f64], c: &[f64], alpha: f64, out: &mut [f64]) {
    let mut max = f64::NEG_INFINITY;
    for ((o, &u), &ci) in out.iter_mut().zip(u_bar).zip(c) {
        *o = u.ln() - 2.0 * alpha * ci;
        max = max.max(*o);
    }
    let mut sum = 0.0;
    for o in out.iter_mut() {
        *o = (*o - max).exp();
        sum += *o;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

/// Euclidean projection onto the unit simplex (sort-based).
pub fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut sorted = v.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut shift = 0.0;
    for (j, &s) in sorted.iter().enumerate() {
        cumsum += s;
        let t = (cumsum - 1.0) / (j + 1) as f64;
        if s - t > 0.0 {
            shift = t;
        }
    }
    v.iter().map(|x| (x - shift).max(0.0)).collect()
}

/// Projection onto the infinity-norm ball: componentwise clipping.
pub fn project_ball(p: [f64; 2], radius: f64) -> [f64; 2] {
    [p[0].clamp(-radius, radius), p[1].clamp(-radius, radius)]
}
