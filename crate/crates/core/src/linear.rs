//! Closed-form linear minimax estimators of the value and weight bridges.
//!
//! Every estimator here solves a linear moment equation `A θ = b` where
//! `A = E_D[z xᵀ]` pairs an instrument `z` with a temporal-difference feature `x`.
//! All features have the block form `e_a ⊗ ρ(o)`, so the moments are assembled
//! one action block at a time with dense matrix products.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMap;
use crate::linalg::{self, Solution, PINV_RCOND};
use crate::model::{ActionPolicy, InitObs, Method, Obs, TupleDataset, ValueEstimate};
use crate::stats;

/// Tuples per accumulation chunk.
const CHUNK: usize = 2048;
/// Fixed number of partial sums so the reduction order never depends on the thread count.
const REDUCE_GROUPS: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BridgeRole {
    Value,
    Weight,
}

/// Regularisation of the moment solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Ridge {
    /// Minimum-norm pseudoinverse solution.
    Pinv,
    /// `(AᵀA + λI)⁻¹Aᵀb`
    Fixed(f64),
    /// `λ = c · trace(AᵀA) / d`
    TraceScaled(f64),
}

/// Default for continuous data: near-singular random-feature Gram matrices need a little ridge.
pub const DEFAULT_CONTINUOUS_RIDGE: Ridge = Ridge::TraceScaled(1e-8);

/// Solver diagnostics kept with a fitted bridge.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub rank: usize,
    pub residual_norm: f64,
    pub warnings: Vec<String>,
}

/// A fitted bridge `θᵀφ(a, o)`, or `π^e(a|o) θᵀφ(a, o)` when `reparam` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BridgeFunction {
    pub feature_map: FeatureMap,
    pub theta: DVector<f64>,
    pub role: BridgeRole,
    pub reparam: bool,
    #[serde(default)]
    pub diagnostics: FitDiagnostics,
}

impl BridgeFunction {
    pub fn new(feature_map: FeatureMap, theta: DVector<f64>, role: BridgeRole, reparam: bool) -> Result<Self> {
        if theta.len() != feature_map.dim() {
            return Err(Error::validation(format!(
                "theta has length {}, feature map dimension is {}",
                theta.len(),
                feature_map.dim()
            )));
        }
        if theta.iter().any(|t| !t.is_finite()) {
            return Err(Error::numerical("bridge coefficients are not finite"));
        }
        if reparam && role == BridgeRole::Weight {
            return Err(Error::validation("reparametrisation applies to value bridges only"));
        }
        Ok(Self { feature_map, theta, role, reparam, diagnostics: FitDiagnostics::default() })
    }

    /// The zero function in the given class.
    pub fn zero(feature_map: FeatureMap, role: BridgeRole) -> Self {
        let theta = DVector::zeros(feature_map.dim());
        Self { feature_map, theta, role, reparam: false, diagnostics: FitDiagnostics::default() }
    }

    /// Values at every action for one observation.
    pub fn eval_actions<P: ActionPolicy + ?Sized>(&self, obs: &Obs, target: &P, out: &mut [f64]) -> Result<()> {
        let d = self.feature_map.block_dim;
        let mut rho = vec![0.0; d];
        self.feature_map.base_into(obs, &mut rho)?;
        for (a, v) in out.iter_mut().enumerate() {
            let block = self.theta.rows(a * d, d);
            let mut s: f64 = block.iter().zip(&rho).map(|(t, r)| t * r).sum();
            if self.reparam {
                s *= target.prob(a, obs);
            }
            *v = s;
        }
        Ok(())
    }

    pub fn eval<P: ActionPolicy + ?Sized>(&self, action: usize, obs: &Obs, target: &P) -> Result<f64> {
        let mut out = vec![0.0; self.feature_map.num_actions];
        self.eval_actions(obs, target, &mut out)?;
        out.get(action).copied().ok_or_else(|| Error::validation(format!("action {action} out of range")))
    }

    /// `Σ_a b(a, o)`
    pub fn sum_actions<P: ActionPolicy + ?Sized>(&self, obs: &Obs, target: &P) -> Result<f64> {
        let mut out = vec![0.0; self.feature_map.num_actions];
        self.eval_actions(obs, target, &mut out)?;
        Ok(out.iter().sum())
    }
}

/// Which moment equation to assemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentKind {
    /// Value bridge with instrument `φ(A, O⁻)`:
    /// `x = ψ(A,O) − γ π^e(A|O) Σ_{a'} ψ(a',O⁺)` and `b = E_D[R π^e(A|O) φ(A,O⁻)]`,
    /// where `ψ = π^e φ` when `reparam` and `ψ = φ` otherwise.
    Proposed { reparam: bool },
    /// Naive LSTDQ treating `O` as the state:
    /// `z = φ(A,O)`, `x = φ(A,O) − γ Σ_{a'} π^e(a'|O⁺) φ(a',O⁺)`, `b = E_D[R φ(A,O)]`.
    Lstdq,
}

/// `A = E_D[z xᵀ]`, `b = E_D[z · reward term]` and the initial-law vector
/// `init = E_ν[Σ_a κ(a,õ) φ(a,õ)]` with `κ = π^e` except for the raw proposed class.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearMoments {
    pub a: DMatrix<f64>,
    pub b: DVector<f64>,
    pub init: DVector<f64>,
}

struct BaseChunk {
    minus: DMatrix<f64>,
    cur: DMatrix<f64>,
    plus: DMatrix<f64>,
}

fn base_rows(fm: &FeatureMap, obs: &[&Obs]) -> Result<DMatrix<f64>> {
    let d = fm.block_dim;
    // d × m, one column ρ(o) per observation.
    let mut buf = vec![0.0; d * obs.len()];
    for (o, col) in obs.iter().zip(buf.chunks_mut(d)) {
        fm.base_into(o, col)?;
    }
    Ok(DMatrix::from_vec(d, obs.len(), buf))
}

/// Base features of `O⁻`, `O`, `O⁺` for a chunk. Tuples harvested from one
/// trajectory share observations with their neighbours, which are copied
/// instead of recomputed.
fn base_chunk(fm: &FeatureMap, tuples: &[crate::model::TransitionTuple]) -> Result<BaseChunk> {
    if fm.is_one_hot() {
        let minus: Vec<&Obs> = tuples.iter().map(|t| &t.o_minus).collect();
        let cur: Vec<&Obs> = tuples.iter().map(|t| &t.o).collect();
        let plus: Vec<&Obs> = tuples.iter().map(|t| &t.o_plus).collect();
        return Ok(BaseChunk { minus: base_rows(fm, &minus)?, cur: base_rows(fm, &cur)?, plus: base_rows(fm, &plus)? });
    }
    let d = fm.block_dim;
    let m = tuples.len();
    let mut minus = vec![0.0; d * m];
    let mut cur = vec![0.0; d * m];
    let mut plus = vec![0.0; d * m];
    for (i, t) in tuples.iter().enumerate() {
        let col = i * d..(i + 1) * d;
        let prev = i.checked_sub(1).map(|j| (&tuples[j], j * d..i * d));
        match &prev {
            Some((p, pc)) if p.o == t.o_minus => {
                let src = cur[pc.clone()].to_vec();
                minus[col.clone()].copy_from_slice(&src);
            }
            _ => fm.base_into(&t.o_minus, &mut minus[col.clone()])?,
        }
        match &prev {
            Some((p, pc)) if p.o_plus == t.o => {
                let src = plus[pc.clone()].to_vec();
                cur[col.clone()].copy_from_slice(&src);
            }
            _ => fm.base_into(&t.o, &mut cur[col.clone()])?,
        }
        fm.base_into(&t.o_plus, &mut plus[col])?;
    }
    let (minus, cur, plus) = (DMatrix::from_vec(d, m, minus), DMatrix::from_vec(d, m, cur), DMatrix::from_vec(d, m, plus));
    Ok(BaseChunk { minus, cur, plus })
}

fn accumulate_chunk(
    data: &TupleDataset,
    weights: &[f64],
    range: std::ops::Range<usize>,
    fm: &FeatureMap,
    requests: &[(MomentKind, &dyn ActionPolicy)],
    acc: &mut [(DMatrix<f64>, DVector<f64>)],
) -> Result<()> {
    let tuples = &data.tuples[range.clone()];
    let na = fm.num_actions;
    let d = fm.block_dim;
    let base = base_chunk(fm, tuples)?;
    let w = &weights[range];

    // Rows of the chunk grouped by action.
    let mut by_action: Vec<Vec<usize>> = vec![Vec::new(); na];
    for (i, t) in tuples.iter().enumerate() {
        if t.a >= na {
            return Err(Error::validation(format!("action {} out of range", t.a)));
        }
        by_action[t.a].push(i);
    }

    let mut pi_cur = vec![0.0; na];
    let mut pi_plus = vec![0.0; na];
    for ((kind, target), (amat, bvec)) in requests.iter().zip(acc.iter_mut()) {
        for (a, rows) in by_action.iter().enumerate() {
            let m = rows.len();
            if m == 0 {
                continue;
            }
            // Instrument rows stored transposed (d × m) so the update is a plain GEMM.
            let mut zt = DMatrix::zeros(d, m);
            // y[a'] holds the rows of x restricted to block a'.
            let mut y: Vec<DMatrix<f64>> = (0..na).map(|_| DMatrix::zeros(m, d)).collect();
            let mut rhs = DVector::zeros(m);
            for (k, &i) in rows.iter().enumerate() {
                let t = &tuples[i];
                for (b, p) in pi_cur.iter_mut().enumerate() {
                    *p = target.prob(b, &t.o);
                }
                for (b, p) in pi_plus.iter_mut().enumerate() {
                    *p = target.prob(b, &t.o_plus);
                }
                let pa = pi_cur[a];
                let gamma = data.meta.gamma;
                let (inst, kappa, reward_factor): (&DMatrix<f64>, f64, f64) = match kind {
                    MomentKind::Proposed { reparam: true } => (&base.minus, pa, pa),
                    MomentKind::Proposed { reparam: false } => (&base.minus, 1.0, pa),
                    MomentKind::Lstdq => (&base.cur, 1.0, 1.0),
                };
                for j in 0..d {
                    zt[(j, k)] = w[i] * inst[(j, i)];
                }
                rhs[k] = t.r * reward_factor;
                for (b, yb) in y.iter_mut().enumerate() {
                    let next = match kind {
                        MomentKind::Proposed { reparam: true } => gamma * pa * pi_plus[b],
                        MomentKind::Proposed { reparam: false } => gamma * pa,
                        MomentKind::Lstdq => gamma * pi_plus[b],
                    };
                    for j in 0..d {
                        let mut v = -next * base.plus[(j, i)];
                        if b == a {
                            v += kappa * base.cur[(j, i)];
                        }
                        yb[(k, j)] = v;
                    }
                }
            }
            for (b, yb) in y.iter().enumerate() {
                let mut block = amat.view_mut((a * d, b * d), (d, d));
                block.gemm(1.0, &zt, yb, 1.0);
            }
            let mut bb = bvec.rows_mut(a * d, d);
            bb.gemv(1.0, &zt, &rhs, 1.0);
        }
    }
    Ok(())
}

fn init_vector(fm: &FeatureMap, init: &InitObs, kind: MomentKind, target: &dyn ActionPolicy) -> Result<DVector<f64>> {
    let d = fm.block_dim;
    let mut out = DVector::zeros(fm.dim());
    let mut rho = vec![0.0; d];
    for (o, w) in init.weighted() {
        fm.base_into(&o, &mut rho)?;
        for a in 0..fm.num_actions {
            let kappa = match kind {
                MomentKind::Proposed { reparam: false } => 1.0,
                _ => target.prob(a, &o),
            };
            for j in 0..d {
                out[a * d + j] += w * kappa * rho[j];
            }
        }
    }
    Ok(out)
}

/// Assemble several moment systems in one pass over the data.
pub fn linear_moments(
    data: &TupleDataset,
    fm: &FeatureMap,
    requests: &[(MomentKind, &dyn ActionPolicy)],
) -> Result<Vec<LinearMoments>> {
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let weights = data.weight_vector();
    let dim = fm.dim();
    let n = data.len();
    let chunks: Vec<std::ops::Range<usize>> = (0..n).step_by(CHUNK).map(|s| s..(s + CHUNK).min(n)).collect();
    let per_group = chunks.len().div_ceil(REDUCE_GROUPS);
    let partials: Vec<Vec<(DMatrix<f64>, DVector<f64>)>> = chunks
        .par_chunks(per_group.max(1))
        .map(|group| {
            let mut acc: Vec<_> = requests.iter().map(|_| (DMatrix::zeros(dim, dim), DVector::zeros(dim))).collect();
            for r in group {
                accumulate_chunk(data, &weights, r.clone(), fm, requests, &mut acc)?;
            }
            Ok(acc)
        })
        .collect::<Result<_>>()?;
    let mut total: Vec<(DMatrix<f64>, DVector<f64>)> =
        requests.iter().map(|_| (DMatrix::zeros(dim, dim), DVector::zeros(dim))).collect();
    for part in partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.0 += p.0;
            t.1 += p.1;
        }
    }
    total
        .into_iter()
        .zip(requests)
        .map(|((a, b), (kind, target))| Ok(LinearMoments { a, b, init: init_vector(fm, &data.init_obs, *kind, *target)? }))
        .collect()
}

fn solve(a: &DMatrix<f64>, b: &DVector<f64>, ridge: Ridge) -> Result<Solution> {
    match ridge {
        Ridge::Pinv => linalg::solve_pinv(a, b, PINV_RCOND),
        Ridge::Fixed(l) if l == 0.0 => linalg::solve_pinv(a, b, PINV_RCOND),
        Ridge::Fixed(l) => linalg::solve_ridge(a, b, l),
        Ridge::TraceScaled(c) => {
            let trace: f64 = a.iter().map(|x| x * x).sum();
            let l = c * trace / a.ncols() as f64;
            if l > 0.0 {
                linalg::solve_ridge(a, b, l)
            } else {
                linalg::solve_pinv(a, b, PINV_RCOND)
            }
        }
    }
}

/// Solve a value-bridge moment system.
pub fn solve_value_moments(m: &LinearMoments, ridge: Ridge) -> Result<(DVector<f64>, FitDiagnostics)> {
    if m.a.iter().chain(m.b.iter()).any(|x| !x.is_finite()) {
        return Err(Error::numerical("moment matrix has non-finite entries"));
    }
    let sol = solve(&m.a, &m.b, ridge)?;
    let mut warnings = Vec::new();
    if sol.rank < m.a.ncols() && m.b.amax() == 0.0 {
        log::warn!("unidentified direction in the value bridge");
        warnings.push("unidentified direction".to_string());
    }
    Ok((sol.x, FitDiagnostics { rank: sol.rank, residual_norm: sol.residual_norm, warnings }))
}

/// Solve `A_rawᵀ θ = (1 − γ) c` for the weight bridge, where `A_raw` is the raw
/// proposed moment matrix. This is the zero of
/// `E_D[γ g π^e(A|O) Σ_{a'} f(a',O⁺) − g f(A,O)] + (1−γ) E_ν[Σ_{a'} f(a',õ)]`
/// for every `f` in the discriminator span.
pub fn solve_weight_moments(raw: &LinearMoments, gamma: f64, ridge: Ridge) -> Result<(DVector<f64>, FitDiagnostics)> {
    let at = raw.a.transpose();
    let rhs = &raw.init * (1.0 - gamma);
    if at.iter().chain(rhs.iter()).any(|x| !x.is_finite()) {
        return Err(Error::numerical("moment matrix has non-finite entries"));
    }
    let sol = solve(&at, &rhs, ridge)?;
    let mut warnings = Vec::new();
    if sol.residual_norm > 1e-6 * rhs.norm() {
        log::warn!("no learnable weight bridge in span (residual {:.3e})", sol.residual_norm);
        warnings.push("no learnable weight bridge in span".to_string());
    }
    Ok((sol.x, FitDiagnostics { rank: sol.rank, residual_norm: sol.residual_norm, warnings }))
}

/// Linear minimax value bridge.
pub fn fit_value_bridge_linear<P: ActionPolicy>(
    data: &TupleDataset,
    target: &P,
    fm: &FeatureMap,
    reparam: bool,
    ridge: Ridge,
) -> Result<BridgeFunction> {
    let m = linear_moments(data, fm, &[(MomentKind::Proposed { reparam }, target as &dyn ActionPolicy)])?.remove(0);
    let (theta, diag) = solve_value_moments(&m, ridge)?;
    let mut bridge = BridgeFunction::new(fm.clone(), theta, BridgeRole::Value, reparam)?;
    bridge.diagnostics = diag;
    Ok(bridge)
}

/// Linear minimax weight bridge; the discriminator class is the span of `fm`.
pub fn fit_weight_bridge_linear<P: ActionPolicy>(
    data: &TupleDataset,
    target: &P,
    fm: &FeatureMap,
    ridge: Ridge,
) -> Result<BridgeFunction> {
    let raw = linear_moments(data, fm, &[(MomentKind::Proposed { reparam: false }, target as &dyn ActionPolicy)])?.remove(0);
    let (theta, diag) = solve_weight_moments(&raw, data.meta.gamma, ridge)?;
    let mut bridge = BridgeFunction::new(fm.clone(), theta, BridgeRole::Weight, false)?;
    bridge.diagnostics = diag;
    Ok(bridge)
}

/// Weight bridge with separate classes for `g` (fitted) and `f` (discriminator).
pub fn fit_weight_bridge_linear_with<P: ActionPolicy>(
    data: &TupleDataset,
    target: &P,
    fm_g: &FeatureMap,
    fm_f: &FeatureMap,
    ridge: Ridge,
) -> Result<BridgeFunction> {
    if fm_g == fm_f {
        return fit_weight_bridge_linear(data, target, fm_g, ridge);
    }
    let raw = weight_moments_general(data, target, fm_g, fm_f)?;
    let (theta, diag) = solve_weight_moments(&raw, data.meta.gamma, ridge)?;
    let mut bridge = BridgeFunction::new(fm_g.clone(), theta, BridgeRole::Weight, false)?;
    bridge.diagnostics = diag;
    Ok(bridge)
}

/// Weight moments `(−M, c)` for arbitrary classes, one tuple at a time.
fn weight_moments_general<P: ActionPolicy>(
    data: &TupleDataset,
    target: &P,
    fm_g: &FeatureMap,
    fm_f: &FeatureMap,
) -> Result<LinearMoments> {
    let gamma = data.meta.gamma;
    let w = data.weight_vector();
    let (dg, df) = (fm_g.dim(), fm_f.dim());
    // M = E_D[γ π^e(A|O) φ_g(A,O⁻) (Σ_{a'} φ_f(a',O⁺))ᵀ − φ_g(A,O⁻) φ_f(A,O)ᵀ]
    let mut m = DMatrix::zeros(dg, df);
    for (t, wi) in data.tuples.iter().zip(&w) {
        let g = fm_g.featurize(t.a, &t.o_minus)?;
        let mut f_next = DVector::zeros(df);
        for b in 0..fm_f.num_actions {
            f_next += fm_f.featurize(b, &t.o_plus)?;
        }
        let f_cur = fm_f.featurize(t.a, &t.o)?;
        let x = f_next * (gamma * target.prob(t.a, &t.o)) - f_cur;
        m.ger(*wi, &g, &x, 1.0);
    }
    let mut c = DVector::zeros(df);
    for (o, wo) in data.init_obs.weighted() {
        for b in 0..fm_f.num_actions {
            c += fm_f.featurize(b, &o)? * wo;
        }
    }
    Ok(LinearMoments { a: -m, b: DVector::zeros(dg), init: c })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorKind {
    Vm,
    Is,
}

/// `ĴVM = E_ν[Σ_a b_V(a, õ)]` per initial observation.
pub fn vm_contributions<P: ActionPolicy + ?Sized>(bridge: &BridgeFunction, init: &InitObs, target: &P) -> Result<Vec<(f64, f64)>> {
    init.weighted().into_iter().map(|(o, w)| Ok((bridge.sum_actions(&o, target)?, w))).collect()
}

/// `b_W(A,O⁻) R π^e(A|O) / (1 − γ)` per tuple.
pub fn is_contributions<P: ActionPolicy + ?Sized>(bridge: &BridgeFunction, data: &TupleDataset, target: &P) -> Result<Vec<f64>> {
    let gamma = data.meta.gamma;
    data.tuples
        .iter()
        .map(|t| Ok(bridge.eval(t.a, &t.o_minus, target)? * t.r * target.prob(t.a, &t.o) / (1.0 - gamma)))
        .collect()
}

/// `ĴVM` or `ĴIS` from a fitted bridge.
pub fn estimate_value<P: ActionPolicy + ?Sized>(
    kind: EstimatorKind,
    bridge: &BridgeFunction,
    data: &TupleDataset,
    target: &P,
) -> Result<ValueEstimate> {
    match kind {
        EstimatorKind::Vm => {
            if bridge.role != BridgeRole::Value {
                return Err(Error::validation("VM estimate needs a value bridge"));
            }
            let contrib = vm_contributions(bridge, &data.init_obs, target)?;
            let (xs, ws): (Vec<f64>, Vec<f64>) = contrib.into_iter().unzip();
            let est = stats::weighted_mean(&xs, Some(&ws));
            let se = match &data.init_obs {
                InitObs::Samples(_) => Some(stats::std_error(&xs, None)),
                InitObs::Exact(_) => None,
            };
            ValueEstimate::new(est, se, Method::VmLinear, data.len())
        }
        EstimatorKind::Is => {
            if bridge.role != BridgeRole::Weight {
                return Err(Error::validation("IS estimate needs a weight bridge"));
            }
            let xs = is_contributions(bridge, data, target)?;
            let w = data.weights.as_deref();
            ValueEstimate::new(stats::weighted_mean(&xs, w), Some(stats::std_error(&xs, w)), Method::IsLinear, data.len())
        }
    }
}

/// `E_ν[φ(π^e, õ)]ᵀ θ` for LSTDQ moments.
pub fn lstdq_from_moments(m: &LinearMoments, ridge: Ridge) -> Result<f64> {
    let sol = solve(&m.a, &m.b, ridge)?;
    Ok(m.init.dot(&sol.x))
}

/// `ĴVM` from proposed moments: `init · θ` equals `E_ν[Σ_a b_V(a, õ)]`.
pub fn vm_from_moments(m: &LinearMoments, ridge: Ridge) -> Result<f64> {
    let (theta, _) = solve_value_moments(m, ridge)?;
    Ok(m.init.dot(&theta))
}

/// The naive estimator that treats the observation as the state.
pub fn lstdq_baseline<P: ActionPolicy>(data: &TupleDataset, target: &P, fm: &FeatureMap, ridge: Ridge) -> Result<ValueEstimate> {
    let m = linear_moments(data, fm, &[(MomentKind::Lstdq, target as &dyn ActionPolicy)])?.remove(0);
    ValueEstimate::new(lstdq_from_moments(&m, ridge)?, None, Method::LstdqNaive, data.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::make_binary_confounded_pomdp;
    use crate::features::{one_hot_features, sample_rff};
    use crate::model::{InputKind, SigmoidPolicy, TabularPolicy, TransitionTuple};
    use crate::simulation::{exact_tabular_value, population_dataset};

    fn tuple(om: usize, o: usize, a: usize, r: f64, op: usize) -> TransitionTuple {
        TransitionTuple { o_minus: Obs::Discrete(om), o: Obs::Discrete(o), a, r, o_plus: Obs::Discrete(op) }
    }

    #[test]
    fn zero_bridge_gives_zero_vm() {
        let fm = one_hot_features(2, 2).unwrap();
        let b = BridgeFunction::zero(fm, BridgeRole::Value);
        let data =
            TupleDataset::new(vec![tuple(0, 1, 0, 1.0, 1)], InitObs::Exact(vec![0.5, 0.5]), "t", 0, 0.9).unwrap();
        let t = TabularPolicy::uniform(2, 2, InputKind::Observation);
        assert_eq!(estimate_value(EstimatorKind::Vm, &b, &data, &t).unwrap().estimate, 0.0);
        assert!(estimate_value(EstimatorKind::Is, &b, &data, &t).is_err());
    }

    #[test]
    fn matched_policies_recover_inverse_propensity() {
        // γ = 0, O⁻ = O = S, π^e = π^b (as an observation policy).
        let pb = [[0.7, 0.3], [0.2, 0.8]];
        let ps = [0.4, 0.6];
        let r = [[1.0, 0.0], [0.5, 2.0]];
        let mut tuples = Vec::new();
        let mut weights = Vec::new();
        for s in 0..2 {
            for a in 0..2 {
                tuples.push(tuple(s, s, a, r[s][a], s));
                weights.push(ps[s] * pb[s][a]);
            }
        }
        let data = TupleDataset::weighted(tuples, weights, InitObs::Exact(ps.to_vec()), "t", 0, 0.0).unwrap();
        let target = TabularPolicy::new(pb.iter().map(|r| r.to_vec()).collect(), InputKind::Observation).unwrap();
        let fm = one_hot_features(2, 2).unwrap();
        let w = fit_weight_bridge_linear(&data, &target, &fm, Ridge::Pinv).unwrap();
        for s in 0..2 {
            for a in 0..2 {
                let v = w.eval(a, &Obs::Discrete(s), &target).unwrap();
                assert!((v - 1.0 / pb[s][a]).abs() < 1e-10);
            }
        }
        let mean_r: f64 = (0..2).flat_map(|s| (0..2).map(move |a| ps[s] * pb[s][a] * r[s][a])).sum();
        let est = estimate_value(EstimatorKind::Is, &w, &data, &target).unwrap().estimate;
        assert!((est - mean_r).abs() < 1e-10);
    }

    #[test]
    fn population_toy_estimators_are_exact() {
        for eps in [0.25, 0.5, 0.75] {
            let (m, b, t) = make_binary_confounded_pomdp(eps, 0.3).unwrap();
            let truth = exact_tabular_value(&m, &t).unwrap().j;
            let pop = population_dataset(&m, &b, 100, "binary-toy").unwrap();
            let fm = one_hot_features(2, 2).unwrap();
            let v = fit_value_bridge_linear(&pop, &t, &fm, false, Ridge::Pinv).unwrap();
            let vm = estimate_value(EstimatorKind::Vm, &v, &pop, &t).unwrap().estimate;
            assert!((vm - truth).abs() < 1e-8, "eps {eps}: vm {vm} truth {truth}");
            let w = fit_weight_bridge_linear(&pop, &t, &fm, Ridge::Pinv).unwrap();
            let is = estimate_value(EstimatorKind::Is, &w, &pop, &t).unwrap().estimate;
            assert!((is - truth).abs() < 1e-8, "eps {eps}: is {is} truth {truth}");
        }
    }

    #[test]
    fn blocked_weight_moments_match_per_tuple_assembly() {
        let (m, b, t) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let pop = population_dataset(&m, &b, 50, "binary-toy").unwrap();
        let fm = one_hot_features(2, 2).unwrap();
        let blocked = linear_moments(&pop, &fm, &[(MomentKind::Proposed { reparam: false }, &t as &dyn ActionPolicy)])
            .unwrap()
            .remove(0);
        let general = weight_moments_general(&pop, &t, &fm, &fm).unwrap();
        assert!((&blocked.a - &general.a).amax() < 1e-14);
        assert!((&blocked.init - &general.init).amax() < 1e-14);
        let (_, diag) = solve_weight_moments(&blocked, 0.95, Ridge::Pinv).unwrap();
        assert!(diag.warnings.is_empty());
    }

    #[test]
    fn reward_scaling_is_linear() {
        let (m, b, t) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let pop = population_dataset(&m, &b, 100, "binary-toy").unwrap();
        let fm = one_hot_features(2, 2).unwrap();
        let base = lstdq_baseline(&pop, &t, &fm, Ridge::Pinv).unwrap().estimate;
        let scaled = lstdq_baseline(&pop.scale_rewards(3.0), &t, &fm, Ridge::Pinv).unwrap().estimate;
        assert!((scaled - 3.0 * base).abs() < 1e-10 * base.abs().max(1.0));
    }

    #[test]
    fn reparam_bridge_applies_target_probability() {
        let fm = sample_rff(1, 8, 5.0, 2, 0).unwrap();
        let theta = DVector::from_fn(16, |i, _| i as f64 * 0.1);
        let target = SigmoidPolicy::target_1d(2.0);
        let raw = BridgeFunction::new(fm.clone(), theta.clone(), BridgeRole::Value, false).unwrap();
        let rep = BridgeFunction::new(fm, theta, BridgeRole::Value, true).unwrap();
        let o = Obs::scalar(0.4);
        for a in 0..2 {
            let lhs = rep.eval(a, &o, &target).unwrap();
            let rhs = raw.eval(a, &o, &target).unwrap() * target.prob(a, &o);
            assert!((lhs - rhs).abs() < 1e-14);
        }
    }

    #[test]
    fn multi_request_pass_matches_single_requests() {
        let (m, b, t) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let data = crate::simulation::generate_dataset(&m, &b, 30, 40, "binary-toy", 3).unwrap();
        let fm = one_hot_features(2, 2).unwrap();
        let t2 = TabularPolicy::new(vec![vec![0.9, 0.1], vec![0.3, 0.7]], InputKind::Observation).unwrap();
        let reqs: Vec<(MomentKind, &dyn ActionPolicy)> =
            vec![(MomentKind::Lstdq, &t), (MomentKind::Proposed { reparam: true }, &t2)];
        let both = linear_moments(&data, &fm, &reqs).unwrap();
        let one = linear_moments(&data, &fm, &reqs[1..]).unwrap();
        assert_eq!(both[1], one[0]);
    }
}
