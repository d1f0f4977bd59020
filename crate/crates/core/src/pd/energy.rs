use super::EdgeMap;
use crate::grid::{gradient_into, CostVolume, LabelField};

/// `1/2 sum_l sum_x w(x) |grad u_l(x)|_1 + sum_l <u_l, f_l>`.
///
/// The anisotropic norm is the support function of the componentwise dual
/// ball of radius 1/2.
pub fn primal_energy(u: &LabelField, f: &CostVolume, edges: &EdgeMap) -> f64 {
    let dims = u.dims();
    let n = dims.len();
    let w = edges.data();
    let mut grad = vec![0.0; 2 * n];
    let mut tv = 0.0;
    let mut data = 0.0;
    for l in 0..u.classes() {
        gradient_into(u.class(l), dims, 1.0, &mut grad);
        for i in 0..n {
            tv += w[i] * (grad[i].abs() + grad[n + i].abs());
        }
        data += u.class(l).iter().zip(f.class(l)).map(|(a, b)| a * b).sum::<f64>();
    }
    0.5 * tv + data
}

/// [`primal_energy`] of a hard labeling.
pub fn discrete_energy(labels: &[usize], f: &CostVolume, edges: &EdgeMap) -> f64 {
    let u = LabelField::one_hot(f.dims(), f.classes(), labels).expect("labels match cost volume");
    primal_energy(&u, f, edges)
}
