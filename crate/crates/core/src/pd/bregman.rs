use std::io::Write;

use super::clamp::{clamp_in_place, ClampBounds};
use super::energy::primal_energy;
use super::prox::{dual_prox_unchecked, primal_prox_into};
use super::{edge_map, EdgeMap, PdParams, SolverState};
use crate::error::{Error, Result};
use crate::grid::{divergence_into, gradient_into, CostVolume, DualField, GrayImage, LabelField};

/// Factor on the unary term inside the Bregman iteration.
///
/// The binary-entropy dual prox keeps `p` in `(-1, 1)`, twice the radius of
/// the dual ball that produces the `1/2` TV weight of [`primal_energy`];
/// doubling the data term makes the saddle point minimise `2 * E(u)`.
pub const DATA_SCALE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HalfStep {
    Dual,
    Primal,
}

/// `p <- prox(p, c = w * grad u, sigma)` for every class and component.
/// Saturated values are left at `+-1` for the clamp to pull inside.
pub(crate) fn dual_half_step(u: &LabelField, p: &mut DualField, edges: &EdgeMap, sigma: f64) {
    let dims = u.dims();
    let n = dims.len();
    let w = edges.data();
    let mut grad = vec![0.0; 2 * n];
    for l in 0..u.classes() {
        gradient_into(u.class(l), dims, 1.0, &mut grad);
        for d in 0..2 {
            let g = &grad[d * n..(d + 1) * n];
            for ((pv, &gv), &wv) in p.component_mut(l, d).iter_mut().zip(g).zip(w) {
                *pv = dual_prox_unchecked(*pv, wv * gv, sigma);
            }
        }
    }
}

/// `c_l = div(w * p_l) + DATA_SCALE * f_l`, class-major.
pub(crate) fn primal_linear_term(p: &DualField, f: &CostVolume, edges: &EdgeMap) -> Vec<f64> {
    let dims = p.dims();
    let n = dims.len();
    let w = edges.data();
    let mut c = vec![0.0; p.classes() * n];
    let mut wp0 = vec![0.0; n];
    let mut wp1 = vec![0.0; n];
    for l in 0..p.classes() {
        for i in 0..n {
            wp0[i] = w[i] * p.get(l, 0, i);
            wp1[i] = w[i] * p.get(l, 1, i);
        }
        let cl = &mut c[l * n..(l + 1) * n];
        divergence_into(&wp0, &wp1, dims, 1.0, cl);
        for (cv, fv) in cl.iter_mut().zip(f.class(l)) {
            *cv += DATA_SCALE * fv;
        }
    }
    c
}

/// `u <- prox(u, c, tau)` pixel by pixel.
pub(crate) fn primal_half_step(
    u: &mut LabelField,
    p: &DualField,
    f: &CostVolume,
    edges: &EdgeMap,
    tau: f64,
) {
    let n = u.dims().len();
    let k = u.classes();
    let c = primal_linear_term(p, f, edges);
    let mut ubar = vec![0.0; k];
    let mut ci = vec![0.0; k];
    let mut out = vec![0.0; k];
    for i in 0..n {
        for l in 0..k {
            ubar[l] = u.get(l, i);
            ci[l] = c[l * n + i];
        }
        primal_prox_into(&ubar, &ci, tau, &mut out);
        for l in 0..k {
            u.set(l, i, out[l]);
        }
    }
}

pub(crate) fn accumulate_mean(u_sum: &mut LabelField, u: &LabelField, completed: usize) {
    let keep = completed as f64 / (completed + 1) as f64;
    let add = 1.0 / (completed + 1) as f64;
    for (s, &v) in u_sum.data_mut().iter_mut().zip(u.data()) {
        *s = *s * keep + v * add;
    }
}

fn iterate_in_place(
    state: &mut SolverState,
    f: &CostVolume,
    edges: &EdgeMap,
    tau: f64,
    sigma: f64,
    bounds: ClampBounds,
    observer: &mut impl FnMut(HalfStep, &SolverState),
) {
    dual_half_step(&state.u, &mut state.p, edges, sigma);
    clamp_in_place(&mut state.u, &mut state.p, bounds);
    observer(HalfStep::Dual, state);

    primal_half_step(&mut state.u, &state.p, f, edges, tau);
    clamp_in_place(&mut state.u, &mut state.p, bounds);
    accumulate_mean(&mut state.u_sum, &state.u, state.iteration);
    state.iteration += 1;
    observer(HalfStep::Primal, state);
}

/// One dual half-step followed by one primal half-step, each clamped.
pub fn pd_iterate_bregman(
    state: &SolverState,
    f: &CostVolume,
    edges: &EdgeMap,
    tau: f64,
    sigma: f64,
    bounds: ClampBounds,
) -> SolverState {
    let mut next = state.clone();
    iterate_in_place(&mut next, f, edges, tau, sigma, bounds, &mut |_, _| {});
    next
}

fn check_inputs(f: &CostVolume, edges: &EdgeMap, params: &PdParams) -> Result<()> {
    params.validate()?;
    f.dims().check(edges.dims())?;
    if f.classes() < 2 {
        return Err(Error::InvalidInput("at least two classes required".into()));
    }
    Ok(())
}

/// Runs `params.unrolls()` Bregman iterations from the initial state.
/// Returns the averaged labeling `u_sum` and the final state.
pub fn pd_solve(
    f: &CostVolume,
    img: &GrayImage,
    params: &PdParams,
) -> Result<(LabelField, SolverState)> {
    f.dims().check(img.dims())?;
    let edges = edge_map(img, params.edge_weight);
    pd_solve_with_edges(f, &edges, params)
}

pub fn pd_solve_with_edges(
    f: &CostVolume,
    edges: &EdgeMap,
    params: &PdParams,
) -> Result<(LabelField, SolverState)> {
    pd_solve_observed(f, edges, params, |_, _| {})
}

/// [`pd_solve_with_edges`] calling `observer` after every clamped half-step.
pub fn pd_solve_observed(
    f: &CostVolume,
    edges: &EdgeMap,
    params: &PdParams,
    mut observer: impl FnMut(HalfStep, &SolverState),
) -> Result<(LabelField, SolverState)> {
    check_inputs(f, edges, params)?;
    let mut state = SolverState::initial(f.dims(), f.classes());
    let bounds = params.clamp_bounds();
    for (&tau, &sigma) in params.tau.iter().zip(&params.sigma) {
        iterate_in_place(&mut state, f, edges, tau, sigma, bounds, &mut observer);
    }
    Ok((state.u_sum.clone(), state))
}

/// One row of the optional per-iteration trace.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub iter: usize,
    pub energy: f64,
    pub min_u: f64,
    pub max_p: f64,
}

pub fn pd_solve_traced(
    f: &CostVolume,
    edges: &EdgeMap,
    params: &PdParams,
) -> Result<(LabelField, SolverState, Vec<TraceRow>)> {
    let mut rows = Vec::with_capacity(params.unrolls());
    let (u_sum, state) = pd_solve_observed(f, edges, params, |step, s| {
        if step == HalfStep::Primal {
            rows.push(TraceRow {
                iter: s.iteration,
                energy: primal_energy(&s.u, f, edges),
                min_u: s.u.data().iter().fold(f64::INFINITY, |m, &v| m.min(v)),
                max_p: s.p.max_abs(),
            });
        }
    })?;
    Ok((u_sum, state, rows))
}

/// Writes `iter,energy,min_u,max_p` lines, header first.
pub fn write_trace(rows: &[TraceRow], mut out: impl Write) -> std::io::Result<()> {
    writeln!(out, "iter,energy,min_u,max_p")?;
    for r in rows {
        writeln!(out, "{},{:e},{:e},{:e}", r.iter, r.energy, r.min_u, r.max_p)?;
    }
    Ok(())
}
