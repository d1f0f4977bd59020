//! Unrolled primal-dual solver for the relaxed multi-label TV model.
//!
//! The saddle-point problem solved here is
//!
//! ```text
//! min_u max_p  sum_l <w * grad u_l, p_l> + <u_l, f_l>   u in simplex, p in ball
//! ```
//!
//! where `w` is a per-pixel edge weight. [`pd_solve`] runs the Bregman
//! scheme (entropy prox on the primal, binary-entropy prox on the dual),
//! with value clamping after every half-step. [`pd_solve_euclid`] is the
//! textbook projection-based iteration, kept as an independent reference.

mod bregman;
mod clamp;
mod energy;
mod euclid;
pub mod prox;

pub use bregman::{
    pd_iterate_bregman, pd_solve, pd_solve_observed, pd_solve_traced, pd_solve_with_edges,
    write_trace, HalfStep, TraceRow, DATA_SCALE,
};
pub use clamp::{clamp_state, ClampBounds};
pub use energy::{discrete_energy, primal_energy};
pub use euclid::{pd_solve_euclid, pd_solve_euclid_with_edges, DUAL_RADIUS};

pub(crate) use bregman::{accumulate_mean, dual_half_step, primal_half_step, primal_linear_term};
pub(crate) use clamp::{clamp_in_place, ClampReport};

use crate::error::{Error, Result};
use crate::grid::{gradient, Dims, DualField, GrayImage, LabelField};

/// Step sizes and stabilisation bounds of the unrolled scheme.
#[derive(Debug, Clone, PartialEq)]
pub struct PdParams {
    /// Primal step per unroll; its length is the unroll count.
    pub tau: Vec<f64>,
    /// Dual step per unroll.
    pub sigma: Vec<f64>,
    /// Edge sensitivity `w_e` shared across unrolls.
    pub edge_weight: f64,
    /// Over-relaxation of the Euclidean baseline.
    pub theta: f64,
    pub clamp_max: f64,
    pub clamp_eps: f64,
}

impl Default for PdParams {
    fn default() -> Self {
        Self::with_unrolls(5)
    }
}

impl PdParams {
    pub const DEFAULT_STEP: f64 = 0.25;

    pub fn with_unrolls(unrolls: usize) -> Self {
        Self {
            tau: vec![Self::DEFAULT_STEP; unrolls],
            sigma: vec![Self::DEFAULT_STEP; unrolls],
            edge_weight: 1.0,
            theta: 1.0,
            clamp_max: 1e30,
            clamp_eps: 1e-8,
        }
    }

    #[inline]
    pub fn unrolls(&self) -> usize {
        self.tau.len()
    }

    /// Repeats the per-unroll step schedule until `total` iterations.
    pub fn cycled(&self, total: usize) -> Self {
        let t = self.unrolls();
        Self {
            tau: (0..total).map(|i| self.tau[i % t]).collect(),
            sigma: (0..total).map(|i| self.sigma[i % t]).collect(),
            ..self.clone()
        }
    }

    pub fn clamp_bounds(&self) -> ClampBounds {
        ClampBounds {
            max: self.clamp_max,
            eps: self.clamp_eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.tau.is_empty() {
            return Err(Error::Config("at least one unroll required".into()));
        }
        if self.tau.len() != self.sigma.len() {
            return Err(Error::Config(format!(
                "tau has {} entries but sigma has {}",
                self.tau.len(),
                self.sigma.len()
            )));
        }
        if self.tau.iter().chain(&self.sigma).any(|&s| !(s > 0.0 && s.is_finite())) {
            return Err(Error::Config("step sizes must be positive and finite".into()));
        }
        if !(self.edge_weight >= 0.0 && self.edge_weight.is_finite()) {
            return Err(Error::Config("edge_weight must be >= 0".into()));
        }
        if !(0.0..=1.0).contains(&self.theta) {
            return Err(Error::Config("theta must lie in [0, 1]".into()));
        }
        if !(self.clamp_eps > 0.0 && self.clamp_eps < 1.0 && self.clamp_max > 1.0) {
            return Err(Error::Config("clamp bounds must satisfy 0 < eps < 1 < max".into()));
        }
        Ok(())
    }
}

/// Primal, dual and averaged primal iterates.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub u: LabelField,
    pub p: DualField,
    /// Arithmetic mean of the primal iterates over completed unrolls.
    pub u_sum: LabelField,
    pub iteration: usize,
}

impl SolverState {
    /// `p = 0`, `u = u_sum = 1/k`.
    pub fn initial(dims: Dims, classes: usize) -> Self {
        Self {
            u: LabelField::uniform(dims, classes),
            p: DualField::zeros(dims, classes),
            u_sum: LabelField::uniform(dims, classes),
            iteration: 0,
        }
    }
}

/// Per-pixel multiplicative weight on the gradient operator, in `(0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeMap {
    dims: Dims,
    data: Vec<f64>,
}

impl EdgeMap {
    pub fn ones(dims: Dims) -> Self {
        Self {
            dims,
            data: vec![1.0; dims.len()],
        }
    }

    pub fn from_vec(dims: Dims, data: Vec<f64>) -> Result<Self> {
        if data.len() != dims.len() {
            return Err(Error::dims(dims.len(), data.len()));
        }
        if data.iter().any(|&v| !(v > 0.0 && v <= 1.0)) {
            return Err(Error::InvalidInput("edge weights must lie in (0, 1]".into()));
        }
        Ok(Self { dims, data })
    }

    #[inline]
    pub fn dims(&self) -> Dims {
        self.dims
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn max(&self) -> f64 {
        self.data.iter().fold(0.0f64, |m, &v| m.max(v))
    }
}

/// Euclidean norm of the forward-difference gradient of `img` per pixel.
pub fn edge_magnitude(img: &GrayImage) -> Vec<f64> {
    let g = gradient(img.data(), img.dims(), img.spacing);
    g.component(0)
        .iter()
        .zip(g.component(1))
        .map(|(a, b)| a.hypot(*b))
        .collect()
}

/// `w(x) = exp(-w_e |grad g(x)|)`.
pub fn edge_map(img: &GrayImage, w_e: f64) -> EdgeMap {
    edge_map_from_magnitude(img.dims(), &edge_magnitude(img), w_e)
}

/// [`edge_map`] from a precomputed gradient magnitude.
pub fn edge_map_from_magnitude(dims: Dims, mag: &[f64], w_e: f64) -> EdgeMap {
    // exp(-w_e m) can underflow for very large w_e; keep the weights positive.
    let data = mag
        .iter()
        .map(|m| (-w_e * m).exp().max(f64::MIN_POSITIVE))
        .collect();
    EdgeMap { dims, data }
}
