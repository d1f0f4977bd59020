use super::prox::{project_ball, project_simplex};
use super::{edge_map, EdgeMap, PdParams};
use crate::error::Result;
use crate::grid::{divergence_into, gradient_into, CostVolume, DualField, GrayImage, LabelField};

/// Dual ball radius of the projection-based iteration.
pub const DUAL_RADIUS: f64 = 0.5;

/// Projection-based primal-dual iteration with over-relaxation `theta`.
///
/// Iteration `t` uses steps `tau[t]`, `sigma[t]`; the last primal iterate is
/// returned. Minimises [`super::primal_energy`].
pub fn pd_solve_euclid(f: &CostVolume, img: &GrayImage, params: &PdParams) -> Result<LabelField> {
    f.dims().check(img.dims())?;
    let edges = edge_map(img, params.edge_weight);
    pd_solve_euclid_with_edges(f, &edges, params)
}

pub fn pd_solve_euclid_with_edges(
    f: &CostVolume,
    edges: &EdgeMap,
    params: &PdParams,
) -> Result<LabelField> {
    params.validate()?;
    f.dims().check(edges.dims())?;
    let dims = f.dims();
    let n = dims.len();
    let k = f.classes();
    let w = edges.data();
    let norm_sq = 8.0 * edges.max().powi(2);
    for (t, (&tau, &sigma)) in params.tau.iter().zip(&params.sigma).enumerate() {
        if tau * sigma * norm_sq > 1.0 {
            log::warn!("step {t}: tau*sigma*|K|^2 = {} exceeds 1", tau * sigma * norm_sq);
            break;
        }
    }

    let mut u = LabelField::uniform(dims, k);
    let mut u_bar = u.clone();
    let mut q = DualField::zeros(dims, k);
    let mut grad = vec![0.0; 2 * n];
    let mut div = vec![0.0; n];
    let mut wq0 = vec![0.0; n];
    let mut wq1 = vec![0.0; n];
    let mut pixel = vec![0.0; k];
    for (&tau, &sigma) in params.tau.iter().zip(&params.sigma) {
        for l in 0..k {
            gradient_into(u_bar.class(l), dims, 1.0, &mut grad);
            for i in 0..n {
                let step = [
                    q.get(l, 0, i) + sigma * w[i] * grad[i],
                    q.get(l, 1, i) + sigma * w[i] * grad[n + i],
                ];
                let [a, b] = project_ball(step, DUAL_RADIUS);
                q.set(l, 0, i, a);
                q.set(l, 1, i, b);
            }
        }

        let u_old = u.clone();
        // Gradient of the coupling term w.r.t. u_l is -div(w q_l).
        let mut descent = vec![0.0; k * n];
        for l in 0..k {
            for i in 0..n {
                wq0[i] = w[i] * q.get(l, 0, i);
                wq1[i] = w[i] * q.get(l, 1, i);
            }
            divergence_into(&wq0, &wq1, dims, 1.0, &mut div);
            for i in 0..n {
                descent[l * n + i] = -div[i] + f.get(l, i);
            }
        }
        for i in 0..n {
            for l in 0..k {
                pixel[l] = u.get(l, i) - tau * descent[l * n + i];
            }
            for (l, v) in project_simplex(&pixel).into_iter().enumerate() {
                u.set(l, i, v);
            }
        }

        for ((b, &v), &o) in u_bar.data_mut().iter_mut().zip(u.data()).zip(u_old.data()) {
            *b = v + params.theta * (v - o);
        }
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use crate::pd::primal_energy;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_costs(seed: u64, dims: Dims) -> CostVolume {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        CostVolume::from_vec(dims, 2, (0..2 * dims.len()).map(|_| rng.random::<f64>()).collect()).unwrap()
    }

    #[test]
    fn zero_costs_stay_uniform() {
        let dims = Dims::new(4, 3);
        let u = pd_solve_euclid_with_edges(&CostVolume::zeros(dims, 2), &EdgeMap::ones(dims), &PdParams::with_unrolls(50))
            .unwrap();
        assert!(u.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn relaxation_parameter_does_not_change_the_limit() {
        let dims = Dims::new(4, 3);
        let edges = EdgeMap::ones(dims);
        for seed in 0..3 {
            let f = random_costs(seed, dims);
            let run = |theta: f64| {
                let params = PdParams { theta, ..PdParams::with_unrolls(4000) };
                let u = pd_solve_euclid_with_edges(&f, &edges, &params).unwrap();
                primal_energy(&u, &f, &edges)
            };
            let (e0, e1) = (run(0.0), run(1.0));
            assert!((e0 - e1).abs() < 1e-4, "seed {seed}: {e0} vs {e1}");
        }
    }

    // Minimum of the relaxed energy over u_0 in {0, 1/2, 1}^n.
    fn grid_oracle(f: &CostVolume, edges: &EdgeMap) -> f64 {
        let dims = f.dims();
        let n = dims.len();
        let mut best = f64::INFINITY;
        let mut digits = vec![0usize; n];
        loop {
            let u0: Vec<f64> = digits.iter().map(|&d| d as f64 / 2.0).collect();
            let data = [u0.clone(), u0.iter().map(|v| 1.0 - v).collect()].concat();
            let u = LabelField::from_vec(dims, 2, data).unwrap();
            best = best.min(primal_energy(&u, f, edges));
            let Some(j) = digits.iter().position(|&d| d < 2) else { break };
            digits[j] += 1;
            digits[..j].iter_mut().for_each(|d| *d = 0);
        }
        best
    }

    #[test]
    fn converges_to_the_grid_oracle() {
        let dims = Dims::new(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        for seed in 0..3 {
            let f = random_costs(seed, dims);
            let edges = EdgeMap::from_vec(dims, (0..dims.len()).map(|_| rng.random_range(0.2..1.0)).collect()).unwrap();
            let u = pd_solve_euclid_with_edges(&f, &edges, &PdParams::with_unrolls(5000)).unwrap();
            let (got, want) = (primal_energy(&u, &f, &edges), grid_oracle(&f, &edges));
            assert!((got - want).abs() <= 1e-6, "seed {seed}: {got} vs {want}");
        }
    }
}
