//! Doubly-robust value estimation and two-fold cross-fitting.

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::linear::{vm_contributions, BridgeFunction, BridgeRole};
use crate::model::{ActionPolicy, Method, TransitionTuple, TupleDataset, ValueEstimate};
use crate::rng::derive_stream;
use crate::stats;

/// Per-tuple correction `f(A,O⁻) [(R + γ Σ_{a'} g(a',O⁺)) π^e(A|O) − g(A,O)] / (1 − γ)`.
pub fn dr_contribution<P: ActionPolicy + ?Sized>(
    f: &BridgeFunction,
    g: &BridgeFunction,
    t: &TransitionTuple,
    target: &P,
    gamma: f64,
) -> Result<f64> {
    if !(gamma < 1.0) {
        return Err(Error::validation("discount must be below one"));
    }
    let fw = f.eval(t.a, &t.o_minus, target)?;
    if fw == 0.0 {
        return Ok(0.0);
    }
    let next = g.sum_actions(&t.o_plus, target)?;
    let cur = g.eval(t.a, &t.o, target)?;
    Ok(fw * ((t.r + gamma * next) * target.prob(t.a, &t.o) - cur) / (1.0 - gamma))
}

fn check_roles(f: &BridgeFunction, g: &BridgeFunction) -> Result<()> {
    if f.role != BridgeRole::Weight || g.role != BridgeRole::Value {
        return Err(Error::validation("doubly-robust estimation needs a weight bridge f and a value bridge g"));
    }
    Ok(())
}

/// `J(f, g) = E_ν[Σ_a g(a, õ)] + E_D[correction]`.
///
/// The standard error is the spread of the per-tuple values
/// `E_ν[Σ_a g] + correction` over `√n`.
pub fn dr_estimate<P: ActionPolicy + ?Sized>(
    f: &BridgeFunction,
    g: &BridgeFunction,
    data: &TupleDataset,
    target: &P,
) -> Result<ValueEstimate> {
    check_roles(f, g)?;
    if data.is_empty() {
        return Err(Error::validation("dataset is empty"));
    }
    let (xs, ws): (Vec<f64>, Vec<f64>) = vm_contributions(g, &data.init_obs, target)?.into_iter().unzip();
    let init_term = stats::weighted_mean(&xs, Some(&ws));
    let gamma = data.meta.gamma;
    let values: Vec<f64> = data
        .tuples
        .iter()
        .map(|t| Ok(init_term + dr_contribution(f, g, t, target, gamma)?))
        .collect::<Result<_>>()?;
    let w = data.weights.as_deref();
    let corr: Vec<f64> = values.iter().map(|v| v - init_term).collect();
    let estimate = init_term + stats::weighted_mean(&corr, w);
    ValueEstimate::new(estimate, Some(stats::std_error(&values, w)), Method::Dr, data.len())
}

/// Deterministic split into folds of sizes `⌈n/2⌉` and `⌊n/2⌋`.
pub fn split_folds(n: usize, split_seed: u64) -> (Vec<usize>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut derive_stream(split_seed, "crossfit", &[n as u64]));
    let second = idx.split_off(n.div_ceil(2));
    (idx, second)
}

/// Evaluate the fit from each fold on the other and average.
pub fn cross_fit_on_folds<P, F>(d1: &TupleDataset, d2: &TupleDataset, fit: F, target: &P) -> Result<ValueEstimate>
where
    P: ActionPolicy + ?Sized,
    F: Fn(&TupleDataset) -> Result<(BridgeFunction, BridgeFunction)> + Sync,
{
    let (r1, r2) = rayon::join(|| fit(d1), || fit(d2));
    let (f1, g1) = r1.map_err(|e| Error::Fold { fold: 1, source: Box::new(e) })?;
    let (f2, g2) = r2.map_err(|e| Error::Fold { fold: 2, source: Box::new(e) })?;
    let e1 = dr_estimate(&f2, &g2, d1, target)?;
    let e2 = dr_estimate(&f1, &g1, d2, target)?;
    let se1 = e1.std_error.unwrap_or(0.0);
    let se2 = e2.std_error.unwrap_or(0.0);
    let estimate = 0.5 * (e1.estimate + e2.estimate);
    let se = 0.5 * (se1 * se1 + se2 * se2).sqrt();
    ValueEstimate::new(estimate, Some(se), Method::DrCrossfit, d1.len() + d2.len())
}

/// Two-fold cross-fitted doubly-robust estimate. `fit` returns `(weight bridge, value bridge)`.
pub fn cross_fit_dr<P, F>(data: &TupleDataset, fit: F, target: &P, split_seed: u64) -> Result<ValueEstimate>
where
    P: ActionPolicy + ?Sized,
    F: Fn(&TupleDataset) -> Result<(BridgeFunction, BridgeFunction)> + Sync,
{
    if data.len() < 4 {
        return Err(Error::validation("cross-fitting needs at least four tuples"));
    }
    let (i1, i2) = split_folds(data.len(), split_seed);
    cross_fit_on_folds(&data.subset(&i1), &data.subset(&i2), fit, target)
}
