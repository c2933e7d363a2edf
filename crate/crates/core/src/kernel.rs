//! Kernel minimax losses and their training loop.
//!
//! Each loss is the squared RKHS norm of an element `Σ_p c_p k(x_p, ·)` where the
//! points `x_p = (a_p, o_p)` are expanded from the batch and every coefficient is
//! affine in the parameters, `c = c₀ + Dθ`. The loss is `cᵀGc` and its gradient
//! `2Dᵀ G c`.
//!
//! The discriminator kernel on action-observation pairs is
//! `k((a,o), (a',o')) = 1{a = a'} · K(o, o')`, with `K` the radial kernel
//! [`rbf_kernel`] on the observation embedding (real values, or the one-hot code of
//! a discrete index).

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linear::{BridgeFunction, BridgeRole};
use crate::model::{ActionPolicy, InitObs, Method, Obs, TransitionTuple, TupleDataset, ValueEstimate};
use crate::rng::derive_stream;
use crate::stats;

/// Bandwidth divisors of the median heuristic.
pub const VALUE_DIVISOR: f64 = 5.0;
pub const WEIGHT_DIVISOR: f64 = 2.0;
/// Points used by the median heuristic on large samples.
pub const MEDIAN_MAX_POINTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossKind {
    /// Value bridge `π^e(a|o) θᵀφ(a,o)`, discriminator on `(A, O⁻)`.
    Pomql,
    /// Weight bridge `θᵀφ(a,o⁻)`, discriminator `π^e f̄` on `(A, O)`.
    Pomwl,
    /// Q-function `θᵀφ(a,o)` treating `O` as the state.
    Mql,
    /// Weight `θᵀφ(a,o)` treating `O` as the state.
    Mwl,
}

impl LossKind {
    pub fn method(self) -> Method {
        match self {
            LossKind::Pomql => Method::Pomql,
            LossKind::Pomwl => Method::Pomwl,
            LossKind::Mql => Method::Mql,
            LossKind::Mwl => Method::Mwl,
        }
    }

    pub fn is_value(self) -> bool {
        matches!(self, LossKind::Pomql | LossKind::Mql)
    }

    pub fn divisor(self) -> f64 {
        if self.is_value() {
            VALUE_DIVISOR
        } else {
            WEIGHT_DIVISOR
        }
    }
}

/// Radial kernel shape.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelShape {
    /// `exp(−‖x − y‖ / (2β²))`
    #[default]
    Unsquared,
    /// `exp(−‖x − y‖² / (2β²))`
    Squared,
}

/// `exp(−‖x − y‖ / (2β²))`, or with the squared norm.
pub fn rbf_kernel(x: &[f64], y: &[f64], beta: f64, shape: KernelShape) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    let d = match shape {
        KernelShape::Unsquared => d2.sqrt(),
        KernelShape::Squared => d2,
    };
    (-d / (2.0 * beta * beta)).exp()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bandwidth {
    pub beta: f64,
    /// All points coincided and the fallback `β = 1` was used.
    pub degenerate: bool,
}

/// Median pairwise distance divided by `divisor`; the lower middle element for
/// an even count.
pub fn median_heuristic(points: &[Vec<f64>], divisor: f64) -> Result<Bandwidth> {
    if points.len() < 2 {
        return Err(Error::validation("median heuristic needs at least two points"));
    }
    if !(divisor > 0.0) {
        return Err(Error::validation("divisor must be positive"));
    }
    let mut dists = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in i + 1..points.len() {
            let d2: f64 = points[i].iter().zip(&points[j]).map(|(a, b)| (a - b) * (a - b)).sum();
            dists.push(d2.sqrt());
        }
    }
    let k = (dists.len() - 1) / 2;
    let (_, med, _) = dists.select_nth_unstable_by(k, f64::total_cmp);
    let med = *med;
    if med > 0.0 {
        Ok(Bandwidth { beta: med / divisor, degenerate: false })
    } else {
        log::warn!("all pairwise distances are zero; using bandwidth 1.0");
        Ok(Bandwidth { beta: 1.0, degenerate: true })
    }
}

/// Observation embedding used by the kernel.
pub fn kernel_embedding(obs: &Obs, num_obs: Option<usize>) -> Vec<f64> {
    match obs {
        Obs::Discrete(i) => {
            let mut v = vec![0.0; num_obs.unwrap_or(i + 1).max(i + 1)];
            v[*i] = 1.0;
            v
        }
        Obs::Continuous(x) => x.to_vec(),
    }
}

fn max_discrete_index(data: &TupleDataset) -> Option<usize> {
    let mut best = None;
    for t in &data.tuples {
        for o in [&t.o_minus, &t.o, &t.o_plus] {
            match o {
                Obs::Discrete(i) => best = Some(best.map_or(*i, |b: usize| b.max(*i))),
                Obs::Continuous(_) => return None,
            }
        }
    }
    best.map(|b| b + 1)
}

/// Median-heuristic bandwidth for a loss: over `O⁻` for PO-MQL and over `O` otherwise.
pub fn loss_bandwidth(kind: LossKind, data: &TupleDataset) -> Result<Bandwidth> {
    let n = data.len();
    let num_obs = max_discrete_index(data);
    let take = n.min(MEDIAN_MAX_POINTS);
    // Evenly spaced deterministic subsample.
    let points: Vec<Vec<f64>> = (0..take)
        .map(|k| {
            let t = &data.tuples[k * n / take];
            let o = if kind == LossKind::Pomql { &t.o_minus } else { &t.o };
            kernel_embedding(o, num_obs)
        })
        .collect();
    median_heuristic(&points, kind.divisor())
}

/// Kernel settings shared by the losses.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub beta: f64,
    pub shape: KernelShape,
}

/// Expanded RKHS element with coefficients `c₀ + Dθ`, one row per point.
#[derive(Debug, Clone)]
pub struct Expansion {
    pub actions: Vec<usize>,
    pub points: Vec<Vec<f64>>,
    pub c0: DVector<f64>,
    pub d: DMatrix<f64>,
}

struct Builder {
    dim: usize,
    num_obs: Option<usize>,
    index: BTreeMap<(usize, Vec<u64>), usize>,
    actions: Vec<usize>,
    points: Vec<Vec<f64>>,
    c0: Vec<f64>,
    d: Vec<Vec<f64>>,
}

impl Builder {
    fn new(dim: usize, num_obs: Option<usize>) -> Self {
        Self { dim, num_obs, index: BTreeMap::new(), actions: vec![], points: vec![], c0: vec![], d: vec![] }
    }

    /// Identical points are merged so discrete data reduces to a small Gram matrix.
    fn slot(&mut self, a: usize, obs: &Obs) -> usize {
        let x = kernel_embedding(obs, self.num_obs);
        let key = (a, x.iter().map(|v| v.to_bits()).collect());
        let next = self.actions.len();
        let idx = *self.index.entry(key).or_insert(next);
        if idx == next {
            self.actions.push(a);
            self.points.push(x);
            self.c0.push(0.0);
            self.d.push(vec![0.0; self.dim]);
        }
        idx
    }

    fn add_const(&mut self, a: usize, obs: &Obs, c: f64) {
        let i = self.slot(a, obs);
        self.c0[i] += c;
    }

    fn add_linear(&mut self, a: usize, obs: &Obs, scale: f64, feat: &[f64]) {
        let i = self.slot(a, obs);
        for (dst, f) in self.d[i].iter_mut().zip(feat) {
            *dst += scale * f;
        }
    }

    fn finish(self) -> Expansion {
        let p = self.actions.len();
        let d = DMatrix::from_fn(p, self.dim, |i, j| self.d[i][j]);
        Expansion { actions: self.actions, points: self.points, c0: DVector::from_vec(self.c0), d }
    }
}

/// `φ(a, o)` for every action into consecutive rows.
fn all_features(fm: &FeatureMap, obs: &Obs) -> Result<Vec<DVector<f64>>> {
    (0..fm.num_actions).map(|a| fm.featurize(a, obs)).collect()
}

/// Expand a weighted batch into kernel points.
///
/// `batch` pairs each tuple with its weight `ω` (summing to one over the batch);
/// `init` lists initial observations with weights summing to one.
pub fn expand<P: ActionPolicy + ?Sized>(
    kind: LossKind,
    batch: &[(&TransitionTuple, f64)],
    init: &[(Obs, f64)],
    fm: &FeatureMap,
    target: &P,
    gamma: f64,
    num_obs: Option<usize>,
) -> Result<Expansion> {
    let na = fm.num_actions;
    let mut b = Builder::new(fm.dim(), num_obs);
    for &(t, w) in batch {
        let pa = target.prob(t.a, &t.o);
        let pi_plus: Vec<f64> = (0..na).map(|a| target.prob(a, &t.o_plus)).collect();
        match kind {
            LossKind::Pomql => {
                // ω [R π(A|O) + γ π(A|O) Σ_{a'} π(a'|O⁺) θᵀφ(a',O⁺) − π(A|O) θᵀφ(A,O)] at (A, O⁻)
                let mut lin = fm.featurize(t.a, &t.o)? * (-pa);
                for (a, f) in all_features(fm, &t.o_plus)?.into_iter().enumerate() {
                    lin += f * (gamma * pa * pi_plus[a]);
                }
                b.add_const(t.a, &t.o_minus, w * t.r * pa);
                b.add_linear(t.a, &t.o_minus, w, lin.as_slice());
            }
            LossKind::Mql => {
                // ω [R + γ Σ_{a'} π(a'|O⁺) θᵀφ(a',O⁺) − θᵀφ(A,O)] at (A, O)
                let mut lin = -fm.featurize(t.a, &t.o)?;
                for (a, f) in all_features(fm, &t.o_plus)?.into_iter().enumerate() {
                    lin += f * (gamma * pi_plus[a]);
                }
                b.add_const(t.a, &t.o, w * t.r);
                b.add_linear(t.a, &t.o, w, lin.as_slice());
            }
            LossKind::Pomwl | LossKind::Mwl => {
                // g = θᵀφ(A, O⁻) (PO-MWL) or w = θᵀφ(A, O) (MWL)
                let (feat, scale) = if kind == LossKind::Pomwl {
                    (fm.featurize(t.a, &t.o_minus)?, pa)
                } else {
                    (fm.featurize(t.a, &t.o)?, 1.0)
                };
                for (a, p) in pi_plus.iter().enumerate() {
                    b.add_linear(a, &t.o_plus, w * gamma * scale * p, feat.as_slice());
                }
                b.add_linear(t.a, &t.o, -w * scale, feat.as_slice());
            }
        }
    }
    if !kind.is_value() {
        if init.is_empty() {
            return Err(Error::validation("weight losses need initial observations"));
        }
        for (o, w) in init {
            for a in 0..na {
                b.add_const(a, o, (1.0 - gamma) * w * target.prob(a, o));
            }
        }
    }
    Ok(b.finish())
}

/// Gram matrix of the product kernel `1{a = a'} K(o, o')`.
pub fn gram(exp: &Expansion, spec: KernelSpec) -> DMatrix<f64> {
    let p = exp.actions.len();
    let mut g = DMatrix::zeros(p, p);
    for i in 0..p {
        g[(i, i)] = 1.0;
        for j in i + 1..p {
            if exp.actions[i] == exp.actions[j] {
                let k = rbf_kernel(&exp.points[i], &exp.points[j], spec.beta, spec.shape);
                g[(i, j)] = k;
                g[(j, i)] = k;
            }
        }
    }
    g
}

/// Loss value and gradient at `θ`.
pub fn loss_and_grad(exp: &Expansion, g: &DMatrix<f64>, theta: &DVector<f64>) -> (f64, DVector<f64>) {
    let c = &exp.c0 + &exp.d * theta;
    let gc = g * &c;
    (c.dot(&gc), exp.d.tr_mul(&gc) * 2.0)
}

/// The V-statistic kernel loss of one batch.
#[allow(clippy::too_many_arguments)]
pub fn kernel_loss<P: ActionPolicy + ?Sized>(
    kind: LossKind,
    theta: &DVector<f64>,
    batch: &[(&TransitionTuple, f64)],
    init: &[(Obs, f64)],
    fm: &FeatureMap,
    target: &P,
    gamma: f64,
    spec: KernelSpec,
) -> Result<f64> {
    let exp = expand(kind, batch, init, fm, target, gamma, None)?;
    Ok(loss_and_grad(&exp, &gram(&exp, spec), theta).0)
}

/// Uniformly weighted batch view of a dataset.
pub fn full_batch(data: &TupleDataset) -> Vec<(&TransitionTuple, f64)> {
    data.tuples.iter().zip(data.weight_vector()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent.
    Gd,
    /// Adam with the usual moment constants.
    Adam,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f64,
    pub iters: usize,
    pub batch_size: usize,
    pub eval_every: usize,
    pub avg_last: usize,
    pub optimizer: Optimizer,
    pub shape: KernelShape,
    /// Overrides the median-heuristic bandwidth.
    pub beta: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 5e-3,
            iters: 10_000,
            batch_size: 256,
            eval_every: 100,
            avg_last: 10,
            optimizer: Optimizer::Adam,
            shape: KernelShape::Unsquared,
            beta: None,
        }
    }
}

/// One recorded training step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub iteration: usize,
    pub loss: f64,
    pub value_estimate: f64,
}

fn bridge_for(kind: LossKind, fm: &FeatureMap, theta: DVector<f64>) -> Result<BridgeFunction> {
    match kind {
        // Both value losses report Σ_a π^e(a|õ) θᵀφ(a,õ) at the initial law.
        LossKind::Pomql | LossKind::Mql => BridgeFunction::new(fm.clone(), theta, BridgeRole::Value, true),
        LossKind::Pomwl | LossKind::Mwl => BridgeFunction::new(fm.clone(), theta, BridgeRole::Weight, false),
    }
}

/// Value estimate implied by a kernel-trained bridge.
pub fn kernel_value_estimate<P: ActionPolicy + ?Sized>(
    kind: LossKind,
    bridge: &BridgeFunction,
    data: &TupleDataset,
    target: &P,
) -> Result<ValueEstimate> {
    let gamma = data.meta.gamma;
    let w = data.weights.as_deref();
    let (est, se) = match kind {
        LossKind::Pomql | LossKind::Mql => {
            let init = data.init_obs.weighted();
            let xs: Vec<f64> = init.iter().map(|(o, _)| bridge.sum_actions(o, target)).collect::<Result<_>>()?;
            let ws: Vec<f64> = init.iter().map(|(_, w)| *w).collect();
            let se = matches!(data.init_obs, InitObs::Samples(_)).then(|| stats::std_error(&xs, None));
            (stats::weighted_mean(&xs, Some(&ws)), se)
        }
        LossKind::Pomwl | LossKind::Mwl => {
            let xs: Vec<f64> = data
                .tuples
                .iter()
                .map(|t| {
                    Ok(if kind == LossKind::Pomwl {
                        bridge.eval(t.a, &t.o_minus, target)? * t.r * target.prob(t.a, &t.o)
                    } else {
                        bridge.eval(t.a, &t.o, target)? * t.r
                    } / (1.0 - gamma))
                })
                .collect::<Result<_>>()?;
            (stats::weighted_mean(&xs, w), Some(stats::std_error(&xs, w)))
        }
    };
    ValueEstimate::new(est, se, kind.method(), data.len())
}

/// Train a linear-in-features bridge by minimising a kernel loss over resampled batches.
///
/// Weighted (population) datasets, discrete datasets and datasets no larger
/// than one batch use the full data every step. The returned bridge averages the parameters of the last
/// `avg_last` recorded steps.
pub fn train_bridge_kernel<P: ActionPolicy>(
    data: &TupleDataset,
    kind: LossKind,
    fm: &FeatureMap,
    target: &P,
    cfg: &TrainConfig,
    seed: u64,
) -> Result<(BridgeFunction, Vec<TraceRow>)> {
    if data.len() < 2 {
        return Err(Error::validation("kernel training needs at least two tuples"));
    }
    if cfg.iters == 0 || cfg.eval_every == 0 || cfg.avg_last == 0 || cfg.batch_size < 2 || !(cfg.lr > 0.0) {
        return Err(Error::validation("invalid training configuration"));
    }
    let gamma = data.meta.gamma;
    let beta = match cfg.beta {
        Some(b) if b > 0.0 => b,
        Some(_) => return Err(Error::validation("bandwidth must be positive")),
        None => loss_bandwidth(kind, data)?.beta,
    };
    let spec = KernelSpec { beta, shape: cfg.shape };
    let num_obs = max_discrete_index(data);
    let init_all = data.init_obs.weighted();
    // Discrete points merge into at most |A||O| kernel points, so the exact
    // full-data loss is as cheap as a batch and avoids the O(1/m) diagonal bias.
    let full = data.weights.is_some() || data.len() <= cfg.batch_size || num_obs.is_some();
    let full_exp = if full {
        let exp = expand(kind, &full_batch(data), &init_all, fm, target, gamma, num_obs)?;
        let g = gram(&exp, spec);
        Some((exp, g))
    } else {
        None
    };

    // Value bridges live on the scale max|R|/(1−γ) while weights are O(1); the
    // optimiser works on φ = θ/scale so a step of size lr means the same thing for both.
    let scale = if kind.is_value() {
        let r = data.tuples.iter().map(|t| t.r.abs()).fold(0.0, f64::max);
        if r > 0.0 { r / (1.0 - gamma) } else { 1.0 }
    } else {
        1.0
    };

    let mut rng = derive_stream(seed, "kernel-train", &[]);
    let dim = fm.dim();
    let mut theta = DVector::zeros(dim);
    let (mut m1, mut m2) = (DVector::zeros(dim), DVector::zeros(dim));
    let (b1, b2, eps) = (0.9f64, 0.999f64, 1e-8);
    let mut trace = Vec::new();
    let mut recorded: Vec<DVector<f64>> = Vec::new();
    let m = cfg.batch_size;
    let w = 1.0 / m as f64;
    for it in 1..=cfg.iters {
        let (loss, grad) = match &full_exp {
            Some((exp, g)) => loss_and_grad(exp, g, &theta),
            None => {
                let batch: Vec<(&TransitionTuple, f64)> =
                    (0..m).map(|_| (&data.tuples[rng.random_range(0..data.len())], w)).collect();
                let init: Vec<(Obs, f64)> = match &data.init_obs {
                    InitObs::Exact(_) => init_all.clone(),
                    InitObs::Samples(s) => {
                        let k = s.len().min(m);
                        (0..k).map(|_| (s[rng.random_range(0..s.len())].clone(), 1.0 / k as f64)).collect()
                    }
                };
                let exp = expand(kind, &batch, &init, fm, target, gamma, num_obs)?;
                let g = gram(&exp, spec);
                loss_and_grad(&exp, &g, &theta)
            }
        };
        if !loss.is_finite() || grad.iter().any(|x| !x.is_finite()) {
            return Err(Error::numerical(format!(
                "kernel loss became non-finite at iteration {it}; the learning rate {} is too large",
                cfg.lr
            )));
        }
        let grad = grad * scale;
        match cfg.optimizer {
            Optimizer::Gd => theta -= &grad * (cfg.lr * scale),
            Optimizer::Adam => {
                m1 = &m1 * b1 + &grad * (1.0 - b1);
                m2 = &m2 * b2 + grad.map(|x| x * x) * (1.0 - b2);
                let c1 = 1.0 - b1.powi(it as i32);
                let c2 = 1.0 - b2.powi(it as i32);
                for j in 0..dim {
                    theta[j] -= scale * cfg.lr * (m1[j] / c1) / ((m2[j] / c2).sqrt() + eps);
                }
            }
        }
        if it % cfg.eval_every == 0 {
            let bridge = bridge_for(kind, fm, theta.clone())?;
            let value = kernel_value_estimate(kind, &bridge, data, target)?.estimate;
            trace.push(TraceRow { iteration: it, loss, value_estimate: value });
            recorded.push(theta.clone());
        }
    }
    let tail = if recorded.is_empty() { vec![theta] } else { recorded.split_off(recorded.len().saturating_sub(cfg.avg_last)) };
    let avg = tail.iter().fold(DVector::zeros(dim), |acc, t| acc + t) / tail.len() as f64;
    Ok((bridge_for(kind, fm, avg)?, trace))
}

/// `Σ_{i,j} c_i c_j e^{−λ|x_i − x_j|}` in `O(n log n)` for scalar points.
fn laplacian_quadratic_form(mut pts: Vec<(f64, f64)>, lambda: f64) -> f64 {
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pts.len();
    let mut fwd = vec![0.0; n];
    let mut acc = 0.0;
    for i in 0..n {
        if i > 0 {
            acc *= (-lambda * (pts[i].0 - pts[i - 1].0)).exp();
        }
        acc += pts[i].1;
        fwd[i] = acc;
    }
    let mut total = Vec::with_capacity(n);
    acc = 0.0;
    for i in (0..n).rev() {
        if i + 1 < n {
            acc *= (-lambda * (pts[i + 1].0 - pts[i].0)).exp();
        }
        acc += pts[i].1;
        total.push(pts[i].1 * (fwd[i] + acc - pts[i].1));
    }
    stats::pairwise_sum(&total)
}

/// The PO-MQL loss of a value bridge over the whole dataset: an RKHS-norm
/// surrogate for `E[(T b_V(A, O⁻))²]`.
pub fn bellman_residual_certificate<P: ActionPolicy + ?Sized>(
    bridge: &BridgeFunction,
    data: &TupleDataset,
    target: &P,
    spec: KernelSpec,
) -> Result<f64> {
    if bridge.role != BridgeRole::Value {
        return Err(Error::validation("the certificate needs a value bridge"));
    }
    let res = residuals(bridge, data, target)?;
    let w = data.weight_vector();
    let scalar = data.tuples.iter().all(|t| matches!(&t.o_minus, Obs::Continuous(v) if v.len() == 1));
    if scalar && spec.shape == KernelShape::Unsquared {
        let lambda = 1.0 / (2.0 * spec.beta * spec.beta);
        let na = bridge.feature_map.num_actions;
        let mut per_action: Vec<Vec<(f64, f64)>> = vec![Vec::new(); na];
        for ((t, r), wi) in data.tuples.iter().zip(&res).zip(&w) {
            per_action[t.a].push((t.o_minus.as_scalar(), wi * r));
        }
        return Ok(per_action.into_iter().map(|p| laplacian_quadratic_form(p, lambda)).sum());
    }
    let mut b = Builder::new(0, max_discrete_index(data));
    for ((t, r), wi) in data.tuples.iter().zip(&res).zip(&w) {
        b.add_const(t.a, &t.o_minus, wi * r);
    }
    let exp = b.finish();
    let g = gram(&exp, spec);
    Ok(exp.c0.dot(&(g * &exp.c0)))
}

/// Per-tuple residual `R π(A|O) + γ π(A|O) Σ_{a'} b(a',O⁺) − b(A,O)`.
pub fn residuals<P: ActionPolicy + ?Sized>(bridge: &BridgeFunction, data: &TupleDataset, target: &P) -> Result<Vec<f64>> {
    let gamma = data.meta.gamma;
    data.tuples
        .iter()
        .map(|t| {
            let pa = target.prob(t.a, &t.o);
            Ok(t.r * pa + gamma * pa * bridge.sum_actions(&t.o_plus, target)? - bridge.eval(t.a, &t.o, target)?)
        })
        .collect()
}

/// Exact `E[(T b(A, O⁻))²]` for discrete data: the conditional mean residual in
/// each `(A, O⁻)` cell, squared and averaged.
pub fn bellman_residual_mse<P: ActionPolicy + ?Sized>(bridge: &BridgeFunction, data: &TupleDataset, target: &P) -> Result<f64> {
    let res = residuals(bridge, data, target)?;
    let w = data.weight_vector();
    let mut cells: BTreeMap<(usize, usize), (f64, f64)> = BTreeMap::new();
    for ((t, r), wi) in data.tuples.iter().zip(&res).zip(&w) {
        let o = t.o_minus.index().ok_or_else(|| Error::validation("exact residual needs discrete observations"))?;
        let e = cells.entry((t.a, o)).or_insert((0.0, 0.0));
        e.0 += wi * r;
        e.1 += wi;
    }
    Ok(cells.values().map(|(s, m)| if *m > 0.0 { s * s / m } else { 0.0 }).sum())
}
