//! Metrics and experiment drivers: the binary toy table and the 1D sweep.

use std::collections::BTreeMap;
use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environments::{make_1d_process, make_binary_confounded_pomdp, BINARY_TOY_ID, DEFAULT_DISCOUNT, DEFAULT_OBS_FLIP, DYN1D_ID};
use crate::error::{Error, Result};
use crate::features::{one_hot_features, sample_rff, DEFAULT_KERNEL_GAMMA, DEFAULT_RFF_DIM, DEFAULT_RFF_SEEDS};
use crate::linear::{
    fit_value_bridge_linear, linear_moments, lstdq_baseline, lstdq_from_moments, vm_from_moments, estimate_value,
    EstimatorKind, MomentKind, Ridge, DEFAULT_CONTINUOUS_RIDGE,
};
use crate::model::{ActionPolicy, Method, SigmoidPolicy, TupleDataset};
use crate::rng::derive_u64;
use crate::simulation::{exact_tabular_value, generate_dataset, monte_carlo_value, truncation_horizon};
use crate::stats;

/// Tolerance used to truncate Monte Carlo truth rollouts.
pub const TRUTH_TAIL_TOL: f64 = 1e-3;

fn check_truth(truth: f64) -> Result<()> {
    if truth == 0.0 || !truth.is_finite() {
        return Err(Error::validation(format!("relative metrics need a finite nonzero truth, got {truth}")));
    }
    Ok(())
}

/// `|mean(est / truth) − 1|`
pub fn relative_bias(estimates: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    if estimates.is_empty() {
        return Err(Error::validation("no estimates"));
    }
    let ratios: Vec<f64> = estimates.iter().map(|e| e / truth).collect();
    Ok((stats::mean(&ratios) - 1.0).abs())
}

/// `mean(((est − truth) / truth)²)`
pub fn relative_mse(estimates: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    if estimates.is_empty() {
        return Err(Error::validation("no estimates"));
    }
    let sq: Vec<f64> = estimates.iter().map(|e| ((e - truth) / truth).powi(2)).collect();
    Ok(stats::mean(&sq))
}

/// `±2` standard errors of `est / truth` over replications.
pub fn ci_halfwidth(estimates: &[f64], truth: f64) -> Result<f64> {
    check_truth(truth)?;
    if estimates.len() < 2 {
        return Ok(f64::NAN);
    }
    let ratios: Vec<f64> = estimates.iter().map(|e| e / truth).collect();
    Ok(2.0 * stats::sample_std(&ratios) / (ratios.len() as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ToyConfig {
    pub epsilons: Vec<f64>,
    pub trajectories: usize,
    pub horizon: usize,
    pub obs_flip: f64,
    pub seed: u64,
}

impl Default for ToyConfig {
    fn default() -> Self {
        Self { epsilons: vec![0.25, 0.5, 0.75], trajectories: 10_000, horizon: 100, obs_flip: DEFAULT_OBS_FLIP, seed: 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ToyRow {
    pub epsilon: f64,
    pub truth: f64,
    pub proposed: f64,
    pub naive: f64,
}

/// Exact value, one-hot proposed estimate and naive LSTDQ on the binary toy.
pub fn run_toy_table(cfg: &ToyConfig) -> Result<Vec<ToyRow>> {
    cfg.epsilons
        .par_iter()
        .enumerate()
        .map(|(i, &eps)| {
            let (env, behavior, target) = make_binary_confounded_pomdp(eps, cfg.obs_flip)?;
            let truth = exact_tabular_value(&env, &target)?.j;
            let seed = derive_u64(cfg.seed, "toy-table", &[i as u64]);
            let data = generate_dataset(&env, &behavior, cfg.trajectories, cfg.horizon, BINARY_TOY_ID, seed)?;
            let fm = one_hot_features(2, 2)?;
            let bridge = fit_value_bridge_linear(&data, &target, &fm, false, Ridge::Pinv)?;
            let proposed = estimate_value(EstimatorKind::Vm, &bridge, &data, &target)?.estimate;
            let naive = lstdq_baseline(&data, &target, &fm, Ridge::Pinv)?.estimate;
            Ok(ToyRow { epsilon: eps, truth, proposed, naive })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RffConfig {
    #[serde(default = "default_gamma_k")]
    pub gamma_k: f64,
    #[serde(rename = "D", alias = "d", default = "default_rff_dim")]
    pub dim: usize,
    #[serde(default = "default_rff_seeds")]
    pub seeds: usize,
}

fn default_gamma_k() -> f64 {
    DEFAULT_KERNEL_GAMMA
}
fn default_rff_dim() -> usize {
    DEFAULT_RFF_DIM
}
fn default_rff_seeds() -> usize {
    DEFAULT_RFF_SEEDS
}
fn default_traj_len() -> usize {
    100
}
fn default_truth_rollouts() -> usize {
    1_000_000
}
fn default_ridge() -> Ridge {
    DEFAULT_CONTINUOUS_RIDGE
}

impl Default for RffConfig {
    fn default() -> Self {
        Self { gamma_k: DEFAULT_KERNEL_GAMMA, dim: DEFAULT_RFF_DIM, seeds: DEFAULT_RFF_SEEDS }
    }
}

/// Configuration of the 1D sweep. `n` counts behavior steps, so each
/// replication simulates `n / traj_len` trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub sigma_o_list: Vec<f64>,
    pub w_list: Vec<f64>,
    pub n_list: Vec<usize>,
    pub replications: usize,
    pub master_seed: u64,
    #[serde(default)]
    pub rff: RffConfig,
    #[serde(default = "default_traj_len")]
    pub traj_len: usize,
    #[serde(default = "default_truth_rollouts")]
    pub truth_rollouts: usize,
    #[serde(default = "default_ridge")]
    pub ridge: Ridge,
}

impl SweepConfig {
    pub fn gamma(&self) -> f64 {
        DEFAULT_DISCOUNT
    }

    pub fn validate(&self) -> Result<()> {
        if self.sigma_o_list.is_empty() || self.w_list.is_empty() || self.n_list.is_empty() || self.replications == 0 {
            return Err(Error::validation("sweep lists and replications must be non-empty"));
        }
        if self.traj_len < 3 {
            return Err(Error::validation("traj_len must be at least 3"));
        }
        if let Some(n) = self.n_list.iter().find(|&&n| n % self.traj_len != 0 || n == 0) {
            return Err(Error::validation(format!("n={n} is not a positive multiple of traj_len={}", self.traj_len)));
        }
        if self.rff.seeds == 0 || self.rff.dim == 0 || !(self.rff.gamma_k > 0.0) {
            return Err(Error::validation("rff needs positive D, seeds and gamma_k"));
        }
        if self.truth_rollouts == 0 {
            return Err(Error::validation("truth_rollouts must be positive"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRow {
    pub env: String,
    pub sigma_o: f64,
    pub w: f64,
    pub n: usize,
    pub replication: usize,
    pub method: String,
    pub estimate: f64,
    pub truth: f64,
    /// Empty on success, otherwise the fit error.
    pub flag: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub env: String,
    pub sigma_o: f64,
    pub w: f64,
    pub n: usize,
    pub method: String,
    pub replications: usize,
    pub failures: usize,
    pub truth: f64,
    pub rel_bias: f64,
    pub rel_mse: f64,
    pub ci_halfwidth: f64,
}

/// Proposed (reparametrised VM) and naive LSTDQ estimates for each target,
/// each averaged over `rff.seeds` random-feature draws.
pub fn proposed_and_naive_1d(
    data: &TupleDataset,
    targets: &[SigmoidPolicy],
    rff: &RffConfig,
    ridge: Ridge,
    rff_seeds: &[u64],
) -> Result<(Vec<f64>, Vec<f64>)> {
    let mut requests: Vec<(MomentKind, &dyn ActionPolicy)> = Vec::with_capacity(2 * targets.len());
    for t in targets {
        requests.push((MomentKind::Proposed { reparam: true }, t));
        requests.push((MomentKind::Lstdq, t));
    }
    let mut proposed = vec![0.0; targets.len()];
    let mut naive = vec![0.0; targets.len()];
    let k = rff_seeds.len() as f64;
    for &s in rff_seeds {
        let fm = sample_rff(1, rff.dim, rff.gamma_k, 2, s)?;
        let ms = linear_moments(data, &fm, &requests)?;
        for i in 0..targets.len() {
            proposed[i] += vm_from_moments(&ms[2 * i], ridge)? / k;
            naive[i] += lstdq_from_moments(&ms[2 * i + 1], ridge)? / k;
        }
    }
    Ok((proposed, naive))
}

/// Monte Carlo truth for every `(σ_O, w)` pair, indexed `[sigma][w]`.
pub fn sweep_truths(cfg: &SweepConfig) -> Result<Vec<Vec<f64>>> {
    cfg.validate()?;
    let gamma = cfg.gamma();
    let pairs: Vec<(usize, usize)> =
        (0..cfg.sigma_o_list.len()).flat_map(|s| (0..cfg.w_list.len()).map(move |w| (s, w))).collect();
    let vals: Vec<f64> = pairs
        .iter()
        .map(|&(si, wi)| {
            let env = make_1d_process(cfg.sigma_o_list[si], gamma)?;
            let horizon = truncation_horizon(gamma, env.r_max, TRUTH_TAIL_TOL);
            let seed = derive_u64(cfg.master_seed, "sweep-truth", &[si as u64, wi as u64]);
            Ok(monte_carlo_value(&env, &SigmoidPolicy::target_1d(cfg.w_list[wi]), cfg.truth_rollouts, horizon, seed)?.estimate)
        })
        .collect::<Result<_>>()?;
    Ok(vals.chunks(cfg.w_list.len()).map(<[f64]>::to_vec).collect())
}

/// Rows of one `(σ_O, n, replication)` cell, for every `w` and both methods.
///
/// The result depends only on the configuration, the indices and the truths.
pub fn run_1d_cell(cfg: &SweepConfig, sigma_idx: usize, n_idx: usize, rep: usize, truths: &[f64]) -> Result<Vec<RawRow>> {
    cfg.validate()?;
    let sigma = *cfg.sigma_o_list.get(sigma_idx).ok_or_else(|| Error::validation("sigma index out of range"))?;
    let n = *cfg.n_list.get(n_idx).ok_or_else(|| Error::validation("n index out of range"))?;
    if truths.len() != cfg.w_list.len() {
        return Err(Error::validation("one truth per w is required"));
    }
    let path = [sigma_idx as u64, n_idx as u64, rep as u64];
    let targets: Vec<SigmoidPolicy> = cfg.w_list.iter().map(|&w| SigmoidPolicy::target_1d(w)).collect();
    let rff_seeds: Vec<u64> = (0..cfg.rff.seeds)
        .map(|s| derive_u64(cfg.master_seed, "sweep-rff", &[path[0], path[1], path[2], s as u64]))
        .collect();
    let fitted = (|| {
        let env = make_1d_process(sigma, cfg.gamma())?;
        let seed = derive_u64(cfg.master_seed, "sweep-data", &path);
        let data = generate_dataset(&env, &SigmoidPolicy::behavior_1d(), n / cfg.traj_len, cfg.traj_len, DYN1D_ID, seed)?;
        proposed_and_naive_1d(&data, &targets, &cfg.rff, cfg.ridge, &rff_seeds)
    })();
    let mut rows = Vec::with_capacity(2 * targets.len());
    for (wi, &w) in cfg.w_list.iter().enumerate() {
        for (mi, method) in [Method::VmLinear, Method::LstdqNaive].iter().enumerate() {
            let (estimate, flag) = match &fitted {
                Ok((p, q)) => (if mi == 0 { p[wi] } else { q[wi] }, String::new()),
                Err(e) => (f64::NAN, e.to_string()),
            };
            rows.push(RawRow {
                env: DYN1D_ID.to_string(),
                sigma_o: sigma,
                w,
                n,
                replication: rep,
                method: method.as_str().to_string(),
                estimate,
                truth: truths[wi],
                flag,
            });
        }
    }
    Ok(rows)
}

/// Group raw rows by `(env, σ_O, w, n, method)`; flagged rows only count as failures.
pub fn summarize(rows: &[RawRow]) -> Result<Vec<SummaryRow>> {
    type Key = (String, u64, u64, usize, String);
    let mut groups: BTreeMap<Key, (f64, f64, f64, usize, Vec<f64>)> = BTreeMap::new();
    let mut order: Vec<Key> = Vec::new();
    for r in rows {
        let key = (r.env.clone(), r.sigma_o.to_bits(), r.w.to_bits(), r.n, r.method.clone());
        let entry = groups.entry(key.clone()).or_insert_with(|| {
            order.push(key);
            (r.sigma_o, r.w, r.truth, 0, Vec::new())
        });
        if r.flag.is_empty() && r.estimate.is_finite() {
            entry.4.push(r.estimate);
        } else {
            entry.3 += 1;
        }
    }
    order
        .into_iter()
        .map(|key| {
            let (sigma_o, w, truth, failures, ests) = &groups[&key];
            let (rel_bias, rel_mse, ci) = if ests.is_empty() {
                (f64::NAN, f64::NAN, f64::NAN)
            } else {
                (relative_bias(ests, *truth)?, relative_mse(ests, *truth)?, ci_halfwidth(ests, *truth)?)
            };
            Ok(SummaryRow {
                env: key.0.clone(),
                sigma_o: *sigma_o,
                w: *w,
                n: key.3,
                method: key.4.clone(),
                replications: ests.len() + failures,
                failures: *failures,
                truth: *truth,
                rel_bias,
                rel_mse,
                ci_halfwidth: ci,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub raw: Vec<RawRow>,
    pub summary: Vec<SummaryRow>,
}

/// Run every cell in parallel; rows come out sorted by `(σ_O, n, replication, w, method)` index.
pub fn run_1d_sweep(cfg: &SweepConfig) -> Result<SweepOutput> {
    cfg.validate()?;
    let truths = sweep_truths(cfg)?;
    let cells: Vec<(usize, usize, usize)> = (0..cfg.sigma_o_list.len())
        .flat_map(|s| (0..cfg.n_list.len()).flat_map(move |n| (0..cfg.replications).map(move |r| (s, n, r))))
        .collect();
    let raw: Vec<RawRow> = cells
        .par_iter()
        .map(|&(s, n, r)| run_1d_cell(cfg, s, n, r, &truths[s]))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let summary = summarize(&raw)?;
    Ok(SweepOutput { raw, summary })
}

pub fn write_csv<T: Serialize, W: Write>(w: W, rows: &[T]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_raw_rows<R: std::io::Read>(r: R) -> Result<Vec<RawRow>> {
    let mut rdr = csv::Reader::from_reader(r);
    Ok(rdr.deserialize().collect::<std::result::Result<_, _>>()?)
}
