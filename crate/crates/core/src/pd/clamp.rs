//! Value clamping that keeps the unrolled iteration numerically sane.
//!
//! A pixel holding a non-finite value, or any magnitude above `max`, is reset
//! to the initial values (`u = 1/k`, `p = 0`). Surviving small magnitudes are
//! lifted to `eps`: primal entries to `+eps` with the remaining mass rescaled,
//! nonzero dual components to `eps` with their sign kept.

use super::prox::DUAL_LIMIT;
use super::{PdParams, SolverState};
use crate::grid::{DualField, LabelField};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClampBounds {
    pub max: f64,
    pub eps: f64,
}

/// Which entries the clamp overwrote; consumed by the adjoint pass.
#[derive(Debug, Clone, Default)]
pub(crate) struct ClampReport {
    /// Pixels reset to their initial values.
    pub reset: Vec<bool>,
    /// Primal entries fixed at `eps` (class-major).
    pub u_floor: Vec<bool>,
    /// Pixels whose non-floored primal entries were rescaled.
    pub u_rescaled: Vec<bool>,
    /// Dual entries replaced by a constant (floor or saturation).
    pub p_fixed: Vec<bool>,
}

/// Returns the clamped copy of `state`.
pub fn clamp_state(state: &SolverState, params: &PdParams) -> SolverState {
    let mut out = state.clone();
    clamp_in_place(&mut out.u, &mut out.p, params.clamp_bounds());
    out
}

pub(crate) fn clamp_in_place(u: &mut LabelField, p: &mut DualField, b: ClampBounds) -> ClampReport {
    let n = u.dims().len();
    let k = u.classes();
    let mut report = ClampReport {
        reset: vec![false; n],
        u_floor: vec![false; k * n],
        u_rescaled: vec![false; n],
        p_fixed: vec![false; 2 * k * n],
    };
    let unstable = |v: f64| !v.is_finite() || v.abs() > b.max;
    let init_u = 1.0 / k as f64;
    for i in 0..n {
        let bad_u = (0..k).any(|l| unstable(u.get(l, i)));
        let bad_p = (0..k).any(|l| (0..2).any(|d| unstable(p.get(l, d, i))));
        if bad_u || bad_p {
            reset_pixel(u, p, i, init_u);
            report.reset[i] = true;
            continue;
        }

        for l in 0..k {
            for d in 0..2 {
                let v = p.get(l, d, i);
                let fixed = if v.abs() > DUAL_LIMIT {
                    Some(DUAL_LIMIT.copysign(v))
                } else if v != 0.0 && v.abs() < b.eps {
                    Some(b.eps.copysign(v))
                } else {
                    None
                };
                if let Some(w) = fixed {
                    p.set(l, d, i, w);
                    report.p_fixed[(2 * l + d) * n + i] = true;
                }
            }
        }

        let mut floored = 0usize;
        let mut free_mass = 0.0;
        let mut total = 0.0;
        for l in 0..k {
            let v = u.get(l, i);
            total += v;
            if v < b.eps {
                floored += 1;
            } else {
                free_mass += v;
            }
        }
        if floored == 0 && (total - 1.0).abs() <= 1e-12 {
            continue;
        }
        if floored == k || free_mass <= 0.0 {
            reset_pixel(u, p, i, init_u);
            report.reset[i] = true;
            continue;
        }
        let scale = (1.0 - floored as f64 * b.eps) / free_mass;
        for l in 0..k {
            let v = u.get(l, i);
            if v < b.eps {
                u.set(l, i, b.eps);
                report.u_floor[l * n + i] = true;
            } else {
                u.set(l, i, v * scale);
            }
        }
        report.u_rescaled[i] = true;
    }
    report
}

fn reset_pixel(u: &mut LabelField, p: &mut DualField, i: usize, init_u: f64) {
    for l in 0..u.classes() {
        u.set(l, i, init_u);
        for d in 0..2 {
            p.set(l, d, i, 0.0);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;

    fn bounds() -> ClampBounds {
        ClampBounds { max: 1e30, eps: 1e-8 }
    }

    fn state(dims: Dims, k: usize) -> SolverState {
        let mut s = SolverState::initial(dims, k);
        for i in 0..dims.len() {
            let a = 0.2 + 0.05 * i as f64;
            s.u.set(0, i, a);
            s.u.set(1, i, 1.0 - a);
            s.p.set(0, 0, i, 0.1 * i as f64 - 0.2);
            s.p.set(1, 1, i, 0.3);
        }
        s
    }

    #[test]
    fn huge_value_resets_pixel() {
        let dims = Dims::new(2, 2);
        let mut s = state(dims, 2);
        s.p.set(1, 0, 3, 1e31);
        let before = s.clone();
        let r = clamp_in_place(&mut s.u, &mut s.p, bounds());
        assert!(r.reset[3] && !r.reset[0]);
        for l in 0..2 {
            assert_eq!(s.u.get(l, 3), 0.5);
            for d in 0..2 {
                assert_eq!(s.p.get(l, d, 3), 0.0);
                assert_eq!(s.p.get(l, d, 0), before.p.get(l, d, 0));
            }
        }
    }

    #[test]
    fn nan_resets_pixel() {
        let dims = Dims::new(3, 1);
        let mut s = state(dims, 2);
        s.u.set(0, 1, f64::NAN);
        clamp_in_place(&mut s.u, &mut s.p, bounds());
        assert_eq!(s.u.get(0, 1), 0.5);
        assert_eq!(s.u.get(1, 1), 0.5);
    }

    #[test]
    fn tiny_primal_entry_raised_to_eps() {
        let dims = Dims::new(1, 1);
        let mut s = SolverState::initial(dims, 3);
        s.u.set(0, 0, 1e-12);
        s.u.set(1, 0, 0.4);
        s.u.set(2, 0, 0.6 - 1e-12);
        let r = clamp_in_place(&mut s.u, &mut s.p, bounds());
        assert_eq!(s.u.get(0, 0), 1e-8);
        assert!(r.u_floor[0]);
        assert!((s.u.get(0, 0) + s.u.get(1, 0) + s.u.get(2, 0) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_dual_entry_keeps_sign() {
        let dims = Dims::new(1, 1);
        let mut s = SolverState::initial(dims, 2);
        s.p.set(0, 0, 0, -1e-12);
        s.p.set(0, 1, 0, 3e-9);
        clamp_in_place(&mut s.u, &mut s.p, bounds());
        assert_eq!(s.p.get(0, 0, 0), -1e-8);
        assert_eq!(s.p.get(0, 1, 0), 1e-8);
        assert_eq!(s.p.get(1, 0, 0), 0.0);
    }

    #[test]
    fn clean_state_is_unchanged() {
        let s = state(Dims::new(3, 2), 2);
        let params = PdParams::default();
        assert_eq!(clamp_state(&s, &params), s);
    }

    #[test]
    fn garbage_state_becomes_feasible() {
        let dims = Dims::new(3, 2);
        let mut s = SolverState::initial(dims, 3);
        let vals = [f64::NAN, -0.5, 7.0, 0.0, 1e-20, f64::INFINITY, 2.0, -3.0];
        for (j, v) in s.u.data_mut().iter_mut().enumerate() {
            *v = vals[j % vals.len()];
        }
        for (j, v) in s.p.data_mut().iter_mut().enumerate() {
            *v = vals[(j + 3) % vals.len()];
        }
        clamp_in_place(&mut s.u, &mut s.p, bounds());
        assert!(s.u.simplex_deviation() < 1e-9);
        assert!(s.u.data().iter().all(|&v| v > 0.0));
        assert!(s.p.max_abs() < 1.0);
    }
}
