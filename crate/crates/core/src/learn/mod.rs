//! Learning the step sizes and edge sensitivity of the unrolled solver.
//!
//! Parameters are kept in log space. The loss is a power-law weighted
//! cross-entropy on the averaged primal iterate `u_sum`; its gradient is
//! obtained by an exact reverse pass through every clamped half-step
//! ([`loss_gradient`]). Pixels reset by the clamp are constants for the
//! reverse pass.

mod unroll;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{CostVolume, GrayImage, LabelField};
use crate::kv;
use crate::pd::{edge_magnitude, edge_map_from_magnitude, pd_solve_with_edges, PdParams};

/// Ground-truth label of a pixel excluded from loss and metrics.
pub const UNKNOWN: usize = usize::MAX;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    /// Power applied to class frequencies.
    pub exponent: f64,
    /// Floor inside the logarithm.
    pub eps_log: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            exponent: -0.5,
            eps_log: 1e-12,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(-1.0..=-0.01).contains(&self.exponent) {
            return Err(Error::Config(format!(
                "loss exponent must lie in [-1, -0.01], got {}",
                self.exponent
            )));
        }
        if !(self.eps_log > 0.0 && self.eps_log < 1.0) {
            return Err(Error::Config("eps_log must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    /// Rate until the first schedule entry applies.
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// `(first_epoch, rate)` pairs, 1-based and increasing.
    pub schedule: Vec<(usize, f64)>,
    /// Seed of the per-epoch batch shuffle.
    pub seed: u64,
}

impl Default for OptimConfig {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            weight_decay: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            epochs: 20,
            batch_size: 4,
            schedule: vec![(11, 2e-4), (16, 1e-4)],
            seed: 0,
        }
    }
}

impl OptimConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        if !positive(self.learning_rate) || self.schedule.iter().any(|&(_, r)| !positive(r)) {
            return Err(Error::Config("learning rates must be positive".into()));
        }
        if !(self.weight_decay >= 0.0) {
            return Err(Error::Config("weight_decay must be >= 0".into()));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !positive(self.adam_eps) || self.batch_size == 0 {
            return Err(Error::Config("adam_eps and batch_size must be positive".into()));
        }
        if self.schedule.windows(2).any(|w| w[0].0 >= w[1].0) {
            return Err(Error::Config("schedule epochs must increase".into()));
        }
        Ok(())
    }

    /// Learning rate of 1-based `epoch`.
    pub fn rate_for_epoch(&self, epoch: usize) -> f64 {
        self.schedule
            .iter()
            .rev()
            .find(|&&(start, _)| start <= epoch)
            .map_or(self.learning_rate, |&(_, r)| r)
    }
}

/// Log-parameterised step sizes and edge weight. Gradients use the same
/// layout.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainableParams {
    pub log_tau: Vec<f64>,
    pub log_sigma: Vec<f64>,
    pub log_edge_weight: f64,
}

impl TrainableParams {
    pub fn from_pd(p: &PdParams) -> Self {
        Self {
            log_tau: p.tau.iter().map(|v| v.ln()).collect(),
            log_sigma: p.sigma.iter().map(|v| v.ln()).collect(),
            log_edge_weight: p.edge_weight.ln(),
        }
    }

    /// `base` with the step sizes and edge weight replaced.
    pub fn to_pd(&self, base: &PdParams) -> PdParams {
        PdParams {
            tau: self.log_tau.iter().map(|v| v.exp()).collect(),
            sigma: self.log_sigma.iter().map(|v| v.exp()).collect(),
            edge_weight: self.log_edge_weight.exp(),
            ..base.clone()
        }
    }

    #[inline]
    pub fn unrolls(&self) -> usize {
        self.log_tau.len()
    }

    /// `[log_tau.., log_sigma.., log_edge_weight]`
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.log_tau.clone();
        v.extend_from_slice(&self.log_sigma);
        v.push(self.log_edge_weight);
        v
    }

    /// Inverse of [`to_vec`](Self::to_vec).
    pub fn from_slice(unrolls: usize, v: &[f64]) -> Result<Self> {
        if v.len() != 2 * unrolls + 1 {
            return Err(Error::dims(2 * unrolls + 1, v.len()));
        }
        Ok(Self {
            log_tau: v[..unrolls].to_vec(),
            log_sigma: v[unrolls..2 * unrolls].to_vec(),
            log_edge_weight: v[2 * unrolls],
        })
    }

    pub fn is_finite(&self) -> bool {
        self.to_vec().iter().all(|v| v.is_finite())
    }
}

/// One training example: unary costs, gradient magnitude of the source
/// image, and per-pixel ground-truth class ([`UNKNOWN`] to skip).
#[derive(Debug, Clone, PartialEq)]
pub struct TrainInstance {
    pub costs: CostVolume,
    pub edge_magnitude: Vec<f64>,
    pub gt: Vec<usize>,
}

impl TrainInstance {
    pub fn new(costs: CostVolume, img: &GrayImage, gt: Vec<usize>) -> Result<Self> {
        costs.dims().check(img.dims())?;
        Self::from_parts(costs, edge_magnitude(img), gt)
    }

    pub fn from_parts(costs: CostVolume, edge_magnitude: Vec<f64>, gt: Vec<usize>) -> Result<Self> {
        let n = costs.dims().len();
        if edge_magnitude.len() != n {
            return Err(Error::dims(n, edge_magnitude.len()));
        }
        if gt.len() != n {
            return Err(Error::dims(n, gt.len()));
        }
        if let Some(&bad) = gt.iter().find(|&&c| c != UNKNOWN && c >= costs.classes()) {
            return Err(Error::InvalidInput(format!("label {bad} out of range")));
        }
        Ok(Self {
            costs,
            edge_magnitude,
            gt,
        })
    }
}

fn class_counts<'a>(labels: impl Iterator<Item = &'a usize>, classes: usize) -> Vec<usize> {
    let mut counts = vec![0usize; classes];
    for &c in labels {
        if c != UNKNOWN && c < classes {
            counts[c] += 1;
        }
    }
    counts
}

fn weights_from_counts(counts: &[usize], exponent: f64) -> Result<Vec<f64>> {
    if let Some(l) = counts.iter().position(|&c| c == 0) {
        return Err(Error::MissingClass(l));
    }
    let total: usize = counts.iter().sum();
    let raw: Vec<f64> = counts
        .iter()
        .map(|&c| (c as f64 / total as f64).powf(exponent))
        .collect();
    let norm = counts.len() as f64 / raw.iter().sum::<f64>();
    Ok(raw.into_iter().map(|w| w * norm).collect())
}

/// `w_l = (n_l / N)^exponent`, scaled so the weights sum to `classes`.
/// Unknown pixels are not counted.
pub fn class_weights(labels: &[usize], classes: usize, exponent: f64) -> Result<Vec<f64>> {
    weights_from_counts(&class_counts(labels.iter(), classes), exponent)
}

/// [`class_weights`] over the pooled labels of a dataset.
pub fn dataset_class_weights(data: &[TrainInstance], exponent: f64) -> Result<Vec<f64>> {
    let classes = data
        .first()
        .ok_or_else(|| Error::InvalidInput("empty dataset".into()))?
        .costs
        .classes();
    weights_from_counts(
        &class_counts(data.iter().flat_map(|d| d.gt.iter()), classes),
        exponent,
    )
}

/// `-(1/N) sum_x w_gt(x) log max(u_sum_gt(x)(x), eps_log)`, over the pixels
/// whose label is known.
pub fn weighted_cross_entropy(u_sum: &LabelField, gt: &[usize], weights: &[f64], eps_log: f64) -> Result<f64> {
    if gt.len() != u_sum.dims().len() {
        return Err(Error::dims(u_sum.dims().len(), gt.len()));
    }
    if weights.len() != u_sum.classes() {
        return Err(Error::dims(u_sum.classes(), weights.len()));
    }
    Ok(unroll::loss_with_adjoint(u_sum, gt, weights, eps_log).0)
}

fn check_batch(params: &TrainableParams, base: &PdParams, batch: &[TrainInstance], weights: &[f64]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidInput("empty batch".into()));
    }
    if !params.is_finite() || params.log_sigma.len() != params.unrolls() {
        return Err(Error::InvalidInput("parameters must be finite with matching lengths".into()));
    }
    params.to_pd(base).validate()?;
    if let Some(inst) = batch.iter().find(|i| i.costs.classes() != weights.len()) {
        return Err(Error::dims(weights.len(), inst.costs.classes()));
    }
    Ok(())
}

/// Mean loss over `batch`, computed with the plain solver.
pub fn batch_loss(
    params: &TrainableParams,
    base: &PdParams,
    batch: &[TrainInstance],
    weights: &[f64],
    loss: &LossConfig,
) -> Result<f64> {
    check_batch(params, base, batch, weights)?;
    let pd = params.to_pd(base);
    let mut total = 0.0;
    for inst in batch {
        let edges = edge_map_from_magnitude(inst.costs.dims(), &inst.edge_magnitude, pd.edge_weight);
        let (u_sum, _) = pd_solve_with_edges(&inst.costs, &edges, &pd)?;
        total += weighted_cross_entropy(&u_sum, &inst.gt, weights, loss.eps_log)?;
    }
    Ok(total / batch.len() as f64)
}

/// Mean loss over `batch` and its exact gradient with respect to the log
/// parameters.
pub fn loss_gradient(
    params: &TrainableParams,
    base: &PdParams,
    batch: &[TrainInstance],
    weights: &[f64],
    loss: &LossConfig,
) -> Result<(f64, TrainableParams)> {
    check_batch(params, base, batch, weights)?;
    let bounds = base.clamp_bounds();
    let mut total = 0.0;
    let mut grad = vec![0.0; 2 * params.unrolls() + 1];
    for inst in batch {
        let tape = unroll::forward(params, bounds, inst);
        let (l, g_sum) = unroll::loss_with_adjoint(&tape.u_sum, &inst.gt, weights, loss.eps_log);
        let g = unroll::backward(&tape, params, inst, bounds.eps, g_sum);
        total += l;
        for (a, b) in grad.iter_mut().zip(g.to_vec()) {
            *a += b;
        }
    }
    let scale = 1.0 / batch.len() as f64;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok((total * scale, TrainableParams::from_slice(params.unrolls(), &grad)?))
}

/// First and second moment estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Completed updates.
    pub step: usize,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }
}

/// One bias-corrected Adam update with weight decay added to the gradient.
/// Entries where `frozen` is true keep their value and moments.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    cfg: &OptimConfig,
    lr: f64,
    state: &mut AdamState,
    frozen: &[bool],
) {
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for j in 0..params.len() {
        if frozen.get(j).copied().unwrap_or(false) {
            continue;
        }
        let g = grads[j] + cfg.weight_decay * params[j];
        state.m[j] = cfg.beta1 * state.m[j] + (1.0 - cfg.beta1) * g;
        state.v[j] = cfg.beta2 * state.v[j] + (1.0 - cfg.beta2) * g * g;
        let m_hat = state.m[j] / c1;
        let v_hat = state.v[j] / c2;
        params[j] -= lr * m_hat / (v_hat.sqrt() + cfg.adam_eps);
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TrainMode {
    #[default]
    Full,
    /// Only the edge weight is updated.
    EdgeWeightOnly,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    /// Parameters after the epoch with the lowest validation loss.
    pub best: TrainableParams,
    pub best_epoch: usize,
    pub last: TrainableParams,
    /// Mean training loss after each epoch.
    pub history: Vec<f64>,
    /// Mean validation loss after each epoch; equals `history` when no
    /// validation set is given.
    pub validation_history: Vec<f64>,
}

impl TrainOutcome {
    /// Key-value text holding the best parameters and the loss history.
    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("unrolls = {}\n", self.best.unrolls()));
        s.push_str(&format!("tau = {}\n", kv::format_list(&exp_all(&self.best.log_tau))));
        s.push_str(&format!("sigma = {}\n", kv::format_list(&exp_all(&self.best.log_sigma))));
        s.push_str(&format!("edge_weight = {:e}\n", self.best.log_edge_weight.exp()));
        s.push_str(&format!("best_epoch = {}\n", self.best_epoch));
        s.push_str(&format!("loss_history = {}\n", kv::format_list(&self.history)));
        s.push_str(&format!(
            "validation_history = {}\n",
            kv::format_list(&self.validation_history)
        ));
        s
    }
}

fn exp_all(v: &[f64]) -> Vec<f64> {
    v.iter().map(|x| x.exp()).collect()
}

/// Adam over shuffled minibatches with the configured rate schedule.
pub fn train(
    data: &[TrainInstance],
    validation: Option<&[TrainInstance]>,
    base: &PdParams,
    loss: &LossConfig,
    optim: &OptimConfig,
    mode: TrainMode,
) -> Result<TrainOutcome> {
    if data.is_empty() {
        return Err(Error::InvalidInput("empty training set".into()));
    }
    loss.validate()?;
    optim.validate()?;
    base.validate()?;
    let weights = dataset_class_weights(data, loss.exponent)?;
    let val = validation.filter(|v| !v.is_empty());

    let mut params = TrainableParams::from_pd(base);
    let t = params.unrolls();
    let mut flat = params.to_vec();
    let frozen: Vec<bool> = (0..flat.len())
        .map(|j| mode == TrainMode::EdgeWeightOnly && j < 2 * t)
        .collect();
    let mut adam = AdamState::new(flat.len());
    let mut rng = ChaCha8Rng::seed_from_u64(optim.seed);
    let mut order: Vec<usize> = (0..data.len()).collect();

    let mut history = Vec::with_capacity(optim.epochs);
    let mut validation_history = Vec::with_capacity(optim.epochs);
    let mut best: Option<(f64, usize, TrainableParams)> = None;
    for epoch in 1..=optim.epochs {
        let lr = optim.rate_for_epoch(epoch);
        order.shuffle(&mut rng);
        for chunk in order.chunks(optim.batch_size) {
            let batch: Vec<TrainInstance> = chunk.iter().map(|&i| data[i].clone()).collect();
            let (_, grad) = loss_gradient(&params, base, &batch, &weights, loss)?;
            adam_step(&mut flat, &grad.to_vec(), optim, lr, &mut adam, &frozen);
            params = TrainableParams::from_slice(t, &flat)?;
        }
        let train_loss = batch_loss(&params, base, data, &weights, loss)?;
        let val_loss = match val {
            Some(v) => batch_loss(&params, base, v, &weights, loss)?,
            None => train_loss,
        };
        log::info!("epoch {epoch}: lr {lr:e}, loss {train_loss:.6}, validation {val_loss:.6}");
        history.push(train_loss);
        validation_history.push(val_loss);
        if best.as_ref().is_none_or(|(b, _, _)| val_loss < *b) {
            best = Some((val_loss, epoch, params.clone()));
        }
    }
    let (best_epoch, best) = match best {
        Some((_, e, p)) => (e, p),
        None => (0, params.clone()),
    };
    Ok(TrainOutcome {
        best,
        best_epoch,
        last: params,
        history,
        validation_history,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Dims;
    use rand::Rng;

    fn random_instance(seed: u64, dims: Dims) -> TrainInstance {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = dims.len();
        let gt: Vec<usize> = (0..n).map(|_| rng.random_range(0..2)).collect();
        let mut costs = vec![0.0; 2 * n];
        for i in 0..n {
            let noise: f64 = rng.random_range(0.0..1.0);
            costs[gt[i] * n + i] = 0.3 * noise;
            costs[(1 - gt[i]) * n + i] = rng.random_range(0.0..1.5);
        }
        let img = GrayImage::from_fn(dims, |_, _| rng.random_range(0.0..1.0)).unwrap();
        TrainInstance::new(CostVolume::from_vec(dims, 2, costs).unwrap(), &img, gt).unwrap()
    }

    #[test]
    fn class_weight_examples() {
        let mut labels = vec![1usize; 90];
        labels.extend(vec![0usize; 10]);
        let w = class_weights(&labels, 2, -0.5).unwrap();
        let raw = [0.1f64.powf(-0.5), 0.9f64.powf(-0.5)];
        assert!((raw[0] - 3.1623).abs() < 1e-4 && (raw[1] - 1.0541).abs() < 1e-4);
        let s = raw[0] + raw[1];
        assert!((w[0] - 2.0 * raw[0] / s).abs() < 1e-12);
        assert!((w[1] - 2.0 * raw[1] / s).abs() < 1e-12);

        let w = class_weights(&[0, 1, 0, 1], 2, -0.5).unwrap();
        assert_eq!(w, vec![1.0, 1.0]);

        let w = class_weights(&labels, 2, -1.0).unwrap();
        assert!((w[0] / w[1] - 9.0).abs() < 1e-12);

        assert!(matches!(class_weights(&[1, 1, UNKNOWN], 2, -0.5), Err(Error::MissingClass(0))));
    }

    #[test]
    fn cross_entropy_examples() {
        let dims = Dims::new(3, 2);
        let gt = vec![0, 1, 1, 0, UNKNOWN, 1];
        let perfect = LabelField::one_hot(dims, 2, &[0, 1, 1, 0, 0, 1]).unwrap();
        assert_eq!(weighted_cross_entropy(&perfect, &gt, &[1.0, 1.0], 1e-12).unwrap(), 0.0);
        let uniform = LabelField::uniform(dims, 2);
        let l = weighted_cross_entropy(&uniform, &gt, &[1.0, 1.0], 1e-12).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!((l - 0.6931).abs() < 1e-4);
    }

    #[test]
    fn cross_entropy_matches_direct_sum() {
        let dims = Dims::new(5, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let a: Vec<f64> = (0..20).map(|_| rng.random_range(0.0..1.0)).collect();
        let mut data = a.clone();
        data.extend(a.iter().map(|v| 1.0 - v));
        let u = LabelField::from_vec(dims, 2, data).unwrap();
        let gt: Vec<usize> = (0..20).map(|i| if i % 7 == 3 { UNKNOWN } else { i % 2 }).collect();
        let w = [1.7, 0.3];
        let mut sum = 0.0;
        let mut count = 0.0;
        for i in 0..20 {
            if gt[i] == UNKNOWN {
                continue;
            }
            let p = if gt[i] == 0 { a[i] } else { 1.0 - a[i] };
            sum += w[gt[i]] * p.max(1e-12).ln();
            count += 1.0;
        }
        let got = weighted_cross_entropy(&u, &gt, &w, 1e-12).unwrap();
        assert!((got + sum / count).abs() < 1e-12);
    }

    fn fd_gradient(params: &TrainableParams, base: &PdParams, batch: &[TrainInstance], w: &[f64]) -> Vec<f64> {
        let h = 1e-4;
        let flat = params.to_vec();
        (0..flat.len())
            .map(|j| {
                let mut plus = flat.clone();
                plus[j] += h;
                let mut minus = flat.clone();
                minus[j] -= h;
                let f = |v: &[f64]| {
                    let p = TrainableParams::from_slice(params.unrolls(), v).unwrap();
                    batch_loss(&p, base, batch, w, &LossConfig::default()).unwrap()
                };
                (f(&plus) - f(&minus)) / (2.0 * h)
            })
            .collect()
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let base = PdParams::default();
        let mut params = TrainableParams::from_pd(&base);
        params.log_tau[1] = 0.3f64.ln();
        params.log_sigma[3] = 0.2f64.ln();
        params.log_edge_weight = 0.7f64.ln();
        for seed in 0..3 {
            let batch = vec![random_instance(seed, Dims::new(6, 5))];
            let w = [1.2, 0.8];
            let (l, g) = loss_gradient(&params, &base, &batch, &w, &LossConfig::default()).unwrap();
            let l2 = batch_loss(&params, &base, &batch, &w, &LossConfig::default()).unwrap();
            assert_eq!(l, l2);
            let fd = fd_gradient(&params, &base, &batch, &w);
            for (a, b) in g.to_vec().iter().zip(&fd) {
                assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-10, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn gradient_through_active_floors() {
        // Large costs drive the losing class below the clamp floor.
        let base = PdParams::default();
        let params = TrainableParams::from_pd(&base);
        let mut inst = random_instance(5, Dims::new(6, 6));
        let n = 36;
        let data: Vec<f64> = inst.costs.data().iter().map(|c| c * 30.0).collect();
        inst.costs = CostVolume::from_vec(inst.costs.dims(), 2, data).unwrap();
        let tape = unroll::forward(&params, base.clamp_bounds(), &inst);
        let floored = tape.floor_count();
        assert!(floored > 0 && floored < n * 5);
        let w = [1.0, 1.0];
        let (_, g) = loss_gradient(&params, &base, &[inst.clone()], &w, &LossConfig::default()).unwrap();
        let fd = fd_gradient(&params, &base, &[inst], &w);
        for (a, b) in g.to_vec().iter().zip(&fd) {
            assert!((a - b).abs() <= 1e-4 * a.abs().max(b.abs()) + 1e-10, "{a} vs {b}");
        }
    }

    #[test]
    fn flat_objective_has_zero_gradient() {
        let dims = Dims::new(4, 4);
        let img = GrayImage::filled(dims, 0.5).unwrap();
        let gt = (0..16).map(|i| i % 2).collect();
        let inst = TrainInstance::new(CostVolume::zeros(dims, 2), &img, gt).unwrap();
        let base = PdParams::default();
        let (l, g) = loss_gradient(&TrainableParams::from_pd(&base), &base, &[inst], &[1.0, 1.0], &LossConfig::default()).unwrap();
        assert!((l - 2f64.ln()).abs() < 1e-15);
        assert!(g.to_vec().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_batch_gives_same_gradient() {
        let base = PdParams::default();
        let params = TrainableParams::from_pd(&base);
        let a = random_instance(7, Dims::new(5, 5));
        let b = random_instance(8, Dims::new(5, 5));
        let w = [1.0, 1.0];
        let cfg = LossConfig::default();
        let (l1, g1) = loss_gradient(&params, &base, &[a.clone(), b.clone()], &w, &cfg).unwrap();
        let (l2, g2) = loss_gradient(&params, &base, &[a.clone(), b.clone(), a, b], &w, &cfg).unwrap();
        assert!((l1 - l2).abs() < 1e-15);
        for (x, y) in g1.to_vec().iter().zip(g2.to_vec()) {
            assert!((x - y).abs() <= 1e-15 * x.abs().max(1.0));
        }
    }

    #[test]
    fn weight_scaling_keeps_gradient_direction() {
        let base = PdParams::default();
        let params = TrainableParams::from_pd(&base);
        let batch = [random_instance(11, Dims::new(6, 6))];
        let cfg = LossConfig::default();
        let (_, g1) = loss_gradient(&params, &base, &batch, &[1.3, 0.7], &cfg).unwrap();
        let (_, g2) = loss_gradient(&params, &base, &batch, &[3.9, 2.1], &cfg).unwrap();
        let (a, b) = (g1.to_vec(), g2.to_vec());
        let dot: f64 = a.iter().zip(&b).map(|(x, y)| x * y).sum();
        let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((dot / (na * nb) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn adam_examples() {
        let cfg = OptimConfig {
            weight_decay: 0.0,
            ..OptimConfig::default()
        };
        let mut x = vec![0.4, -1.0];
        let mut st = AdamState::new(2);
        adam_step(&mut x, &[0.0, 0.0], &cfg, 5e-4, &mut st, &[]);
        assert_eq!(x, vec![0.4, -1.0]);

        let mut x = vec![0.0];
        let mut st = AdamState::new(1);
        adam_step(&mut x, &[1.0], &cfg, 5e-4, &mut st, &[]);
        assert!((x[0] + 5e-4).abs() < 1e-10);
        adam_step(&mut x, &[1.0], &cfg, 5e-4, &mut st, &[]);
        assert!((x[0] + 1e-3).abs() < 1e-10);

        let mut x = vec![1.0, 2.0];
        let mut st = AdamState::new(2);
        adam_step(&mut x, &[1.0, 1.0], &cfg, 5e-4, &mut st, &[true, false]);
        assert_eq!(x[0], 1.0);
        assert!(x[1] < 2.0);
    }

    #[test]
    fn schedule_lookup() {
        let cfg = OptimConfig::default();
        assert_eq!(cfg.rate_for_epoch(1), 5e-4);
        assert_eq!(cfg.rate_for_epoch(10), 5e-4);
        assert_eq!(cfg.rate_for_epoch(11), 2e-4);
        assert_eq!(cfg.rate_for_epoch(16), 1e-4);
        assert_eq!(cfg.rate_for_epoch(40), 1e-4);
    }

    #[test]
    fn params_round_trip() {
        let p = TrainableParams::from_pd(&PdParams::default());
        let q = TrainableParams::from_slice(5, &p.to_vec()).unwrap();
        assert_eq!(p, q);
        let pd = q.to_pd(&PdParams::default());
        assert!((pd.tau[0] - 0.25).abs() < 1e-15);
        assert!(TrainableParams::from_slice(4, &p.to_vec()).is_err());
    }

    #[test]
    fn single_epoch_single_instance() {
        let data = vec![random_instance(1, Dims::new(6, 6))];
        let optim = OptimConfig {
            epochs: 1,
            ..OptimConfig::default()
        };
        let out = train(&data, None, &PdParams::default(), &LossConfig::default(), &optim, TrainMode::Full).unwrap();
        assert_eq!(out.history.len(), 1);
        assert_eq!(out.best_epoch, 1);
        assert!(out.to_kv().contains("loss_history = "));
    }

    #[test]
    fn training_reduces_loss_and_is_deterministic() {
        let data: Vec<_> = (0..4).map(|s| random_instance(20 + s, Dims::new(8, 8))).collect();
        let optim = OptimConfig {
            epochs: 3,
            learning_rate: 0.05,
            batch_size: 2,
            ..OptimConfig::default()
        };
        let base = PdParams::default();
        let cfg = LossConfig::default();
        let w = dataset_class_weights(&data, cfg.exponent).unwrap();
        let initial = batch_loss(&TrainableParams::from_pd(&base), &base, &data, &w, &cfg).unwrap();
        let a = train(&data, None, &base, &cfg, &optim, TrainMode::Full).unwrap();
        let b = train(&data, None, &base, &cfg, &optim, TrainMode::Full).unwrap();
        assert_eq!(a, b);
        assert!(*a.history.last().unwrap() < initial);
    }

    #[test]
    fn edge_weight_mode_freezes_steps() {
        let data: Vec<_> = (0..2).map(|s| random_instance(40 + s, Dims::new(6, 6))).collect();
        let base = PdParams::default();
        let optim = OptimConfig {
            epochs: 2,
            learning_rate: 0.05,
            ..OptimConfig::default()
        };
        let out = train(&data, None, &base, &LossConfig::default(), &optim, TrainMode::EdgeWeightOnly).unwrap();
        let init = TrainableParams::from_pd(&base);
        assert_eq!(out.last.log_tau, init.log_tau);
        assert_eq!(out.last.log_sigma, init.log_sigma);
        assert_ne!(out.last.log_edge_weight, init.log_edge_weight);
    }

    #[test]
    fn invalid_configs_rejected() {
        assert!(LossConfig { exponent: 0.5, ..LossConfig::default() }.validate().is_err());
        assert!(OptimConfig { batch_size: 0, ..OptimConfig::default() }.validate().is_err());
        let data: Vec<TrainInstance> = Vec::new();
        assert!(train(&data, None, &PdParams::default(), &LossConfig::default(), &OptimConfig::default(), TrainMode::Full).is_err());
    }
}
