//! Forward tape and reverse-mode adjoint of the clamped Bregman unroll.

use super::{TrainInstance, TrainableParams, UNKNOWN};
use crate::grid::{divergence_into, gradient_into, DualField, LabelField};
use crate::pd::{
    accumulate_mean, clamp_in_place, dual_half_step, edge_map_from_magnitude, primal_half_step,
    primal_linear_term, ClampBounds, ClampReport, EdgeMap, SolverState,
};

struct Step {
    u0: LabelField,
    p0: DualField,
    p_a: DualField,
    r1: ClampReport,
    u1: LabelField,
    p1: DualField,
    u_b: LabelField,
    r2: ClampReport,
}

pub(super) struct Tape {
    edges: EdgeMap,
    steps: Vec<Step>,
    pub u_sum: LabelField,
}

/// Runs the unroll exactly as the solver does, keeping every intermediate.
pub(super) fn forward(params: &TrainableParams, bounds: ClampBounds, inst: &TrainInstance) -> Tape {
    let dims = inst.costs.dims();
    let edges = edge_map_from_magnitude(dims, &inst.edge_magnitude, params.log_edge_weight.exp());
    let mut state = SolverState::initial(dims, inst.costs.classes());
    let mut steps = Vec::with_capacity(params.unrolls());
    for t in 0..params.unrolls() {
        let (tau, sigma) = (params.log_tau[t].exp(), params.log_sigma[t].exp());
        let u0 = state.u.clone();
        let p0 = state.p.clone();

        dual_half_step(&state.u, &mut state.p, &edges, sigma);
        let p_a = state.p.clone();
        let r1 = clamp_in_place(&mut state.u, &mut state.p, bounds);
        let u1 = state.u.clone();
        let p1 = state.p.clone();

        primal_half_step(&mut state.u, &state.p, &inst.costs, &edges, tau);
        let u_b = state.u.clone();
        let r2 = clamp_in_place(&mut state.u, &mut state.p, bounds);
        accumulate_mean(&mut state.u_sum, &state.u, state.iteration);
        state.iteration += 1;

        steps.push(Step { u0, p0, p_a, r1, u1, p1, u_b, r2 });
    }
    Tape {
        edges,
        steps,
        u_sum: state.u_sum,
    }
}

#[cfg(test)]
impl Tape {
    pub fn floor_count(&self) -> usize {
        self.steps
            .iter()
            .map(|s| s.r2.u_floor.iter().filter(|&&f| f).count())
            .sum()
    }
}

/// Maps adjoints of the clamp outputs back to its inputs. Reset pixels and
/// fixed entries act as constants.
fn clamp_adjoint(gu: &mut LabelField, gp: &mut DualField, u_in: &LabelField, r: &ClampReport, eps: f64) {
    let n = gu.dims().len();
    let k = gu.classes();
    for (g, &fixed) in gp.data_mut().iter_mut().zip(&r.p_fixed) {
        if fixed {
            *g = 0.0;
        }
    }
    for i in 0..n {
        if r.reset[i] {
            for l in 0..k {
                gu.set(l, i, 0.0);
                for d in 0..2 {
                    gp.set(l, d, i, 0.0);
                }
            }
            continue;
        }
        if !r.u_rescaled[i] {
            continue;
        }
        // Free entries: out_j = S in_j, S = (1 - |F| eps) / sum_free in.
        let free = |l: usize| !r.u_floor[l * n + i];
        let mut free_sum = 0.0;
        let mut floored = 0usize;
        let mut dot = 0.0;
        for l in 0..k {
            if free(l) {
                free_sum += u_in.get(l, i);
                dot += gu.get(l, i) * u_in.get(l, i);
            } else {
                floored += 1;
            }
        }
        let scale = (1.0 - floored as f64 * eps) / free_sum;
        for l in 0..k {
            let v = if free(l) {
                scale * gu.get(l, i) - scale * dot / free_sum
            } else {
                0.0
            };
            gu.set(l, i, v);
        }
    }
}

/// `-(1/N) sum w_gt log max(u_sum_gt, eps_log)` over known pixels, and its
/// adjoint on `u_sum`.
pub(super) fn loss_with_adjoint(
    u_sum: &LabelField,
    gt: &[usize],
    weights: &[f64],
    eps_log: f64,
) -> (f64, LabelField) {
    let mut g = LabelField::uniform(u_sum.dims(), u_sum.classes());
    g.data_mut().fill(0.0);
    let valid = gt.iter().filter(|&&c| c != UNKNOWN).count();
    if valid == 0 {
        return (0.0, g);
    }
    let nv = valid as f64;
    let mut loss = 0.0;
    for (i, &c) in gt.iter().enumerate() {
        if c == UNKNOWN {
            continue;
        }
        let s = u_sum.get(c, i);
        loss -= weights[c] * s.max(eps_log).ln();
        if s > eps_log {
            g.set(c, i, -weights[c] / (s * nv));
        }
    }
    (loss / nv, g)
}

/// Gradient of the instance loss with respect to the log parameters, given
/// the adjoint `g_sum` of the final `u_sum`.
pub(super) fn backward(
    tape: &Tape,
    params: &TrainableParams,
    inst: &TrainInstance,
    eps: f64,
    g_sum: LabelField,
) -> TrainableParams {
    let dims = inst.costs.dims();
    let n = dims.len();
    let k = inst.costs.classes();
    let e = tape.edges.data();
    let t_count = tape.steps.len();

    let mut grad = TrainableParams {
        log_tau: vec![0.0; t_count],
        log_sigma: vec![0.0; t_count],
        log_edge_weight: 0.0,
    };
    let mut g_e = vec![0.0; n];
    let mut g_sum = g_sum;
    let mut gu = LabelField::uniform(dims, k);
    gu.data_mut().fill(0.0);
    let mut gp = DualField::zeros(dims, k);

    let mut buf = vec![0.0; 2 * n];
    let mut tmp0 = vec![0.0; n];
    let mut tmp1 = vec![0.0; n];
    let mut div = vec![0.0; n];

    for t in (0..t_count).rev() {
        let st = &tape.steps[t];
        let tau = params.log_tau[t].exp();
        let sigma = params.log_sigma[t].exp();

        // u_sum_{t+1} = u_sum_t * t/(t+1) + u_{t+1} / (t+1)
        let inv = 1.0 / (t + 1) as f64;
        for (a, &b) in gu.data_mut().iter_mut().zip(g_sum.data()) {
            *a += b * inv;
        }
        let keep = t as f64 * inv;
        for v in g_sum.data_mut() {
            *v *= keep;
        }

        clamp_adjoint(&mut gu, &mut gp, &st.u_b, &st.r2, eps);

        // Softmax of s_l = ln u1_l - 2 tau c_l.
        let c = primal_linear_term(&st.p1, &inst.costs, &tape.edges);
        let mut gc = vec![0.0; k * n];
        let mut g_tau = 0.0;
        for i in 0..n {
            let mut dot = 0.0;
            for l in 0..k {
                dot += gu.get(l, i) * st.u_b.get(l, i);
            }
            for l in 0..k {
                let gs = st.u_b.get(l, i) * (gu.get(l, i) - dot);
                gc[l * n + i] = -2.0 * tau * gs;
                g_tau -= 2.0 * c[l * n + i] * gs;
                gu.set(l, i, gs / st.u1.get(l, i));
            }
        }
        grad.log_tau[t] = tau * g_tau;

        // c_l = div(e p1_l) + 2 f_l; the adjoint of div is -grad.
        for l in 0..k {
            gradient_into(&gc[l * n..(l + 1) * n], dims, 1.0, &mut buf);
            for d in 0..2 {
                let p1 = st.p1.component(l, d);
                let gpd = gp.component_mut(l, d);
                for i in 0..n {
                    let gd = buf[d * n + i];
                    gpd[i] -= e[i] * gd;
                    g_e[i] -= p1[i] * gd;
                }
            }
        }

        clamp_adjoint(&mut gu, &mut gp, &st.u0, &st.r1, eps);

        // p_a = tanh(atanh(p0) - sigma a), a = e grad u0.
        let mut g_sigma = 0.0;
        for l in 0..k {
            gradient_into(st.u0.class(l), dims, 1.0, &mut buf);
            for d in 0..2 {
                let pa = st.p_a.component(l, d);
                let p0 = st.p0.component(l, d);
                let gpd = gp.component_mut(l, d);
                let ga = if d == 0 { &mut tmp0 } else { &mut tmp1 };
                for i in 0..n {
                    let gz = gpd[i] * (1.0 - pa[i] * pa[i]);
                    let gradv = buf[d * n + i];
                    g_sigma -= e[i] * gradv * gz;
                    let g_a = -sigma * gz;
                    g_e[i] += gradv * g_a;
                    ga[i] = e[i] * g_a;
                    gpd[i] = gz / (1.0 - p0[i] * p0[i]);
                }
            }
            divergence_into(&tmp0, &tmp1, dims, 1.0, &mut div);
            for (g, &dv) in gu.class_mut(l).iter_mut().zip(&div) {
                *g -= dv;
            }
        }
        grad.log_sigma[t] = sigma * g_sigma;
    }

    let w_e = params.log_edge_weight.exp();
    grad.log_edge_weight = g_e
        .iter()
        .zip(&inst.edge_magnitude)
        .zip(e)
        .filter(|(_, &ev)| ev > f64::MIN_POSITIVE)
        .map(|((&g, &m), &ev)| g * (-m * ev))
        .sum::<f64>()
        * w_e;
    grad
}
