//! Spectral identification of the policy value in latent-context bandits.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::environments::RandomBandit;
use crate::error::{Error, Result};
use crate::linalg::{self, PINV_RCOND};
use crate::model::{ActionPolicy, BanditDataset, Obs};

/// Largest reward support accepted without explicit bin edges.
pub const MAX_REWARD_LEVELS: usize = 4096;

/// Empirical conditional probability matrices of a bandit dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct BanditProbMatrices {
    /// `m_o[a][(o, o⁻)] = Pr(O₀ = o | A₀ = a, O₋₁ = o⁻)`
    pub m_o: Vec<DMatrix<f64>>,
    /// `m_ro[a][(k·|O| + o, o⁻)] = Pr(R₀ = r_k, O₀ = o | A₀ = a, O₋₁ = o⁻)`
    pub m_ro: Vec<DMatrix<f64>>,
    /// `Pr(O₀)`
    pub p_o: DVector<f64>,
    pub reward_support: Vec<f64>,
}

impl BanditProbMatrices {
    pub fn num_obs(&self) -> usize {
        self.p_o.len()
    }
}

/// How raw counts become probabilities.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MatrixOptions {
    /// Pseudo-count added to every cell.
    pub smooth: f64,
    /// Increasing bin edges; each bin is represented by the mean reward inside it.
    pub reward_bins: Option<Vec<f64>>,
}

fn reward_levels(data: &BanditDataset, opts: &MatrixOptions) -> Result<(Vec<usize>, Vec<f64>)> {
    match &opts.reward_bins {
        None => {
            let support = data.reward_support();
            if support.len() > MAX_REWARD_LEVELS {
                return Err(Error::validation(format!(
                    "reward support has {} levels; supply bin edges",
                    support.len()
                )));
            }
            let idx = data
                .records
                .iter()
                .map(|r| support.binary_search_by(|x| x.total_cmp(&r.r)).expect("reward in support"))
                .collect();
            Ok((idx, support))
        }
        Some(edges) => {
            if edges.len() < 2 || edges.windows(2).any(|w| !(w[0] < w[1])) {
                return Err(Error::validation("bin edges must be increasing with at least two entries"));
            }
            let nb = edges.len() - 1;
            let mut idx = Vec::with_capacity(data.records.len());
            let mut sums = vec![0.0; nb];
            let mut mass = vec![0.0; nb];
            for (i, r) in data.records.iter().enumerate() {
                if r.r < edges[0] || r.r > edges[nb] {
                    return Err(Error::validation(format!("reward {} outside the bin edges", r.r)));
                }
                let k = edges.partition_point(|&e| e <= r.r).clamp(1, nb) - 1;
                let w = data.weights.as_ref().map_or(1.0, |w| w[i]);
                sums[k] += w * r.r;
                mass[k] += w;
                idx.push(k);
            }
            let levels = (0..nb)
                .map(|k| if mass[k] > 0.0 { sums[k] / mass[k] } else { 0.5 * (edges[k] + edges[k + 1]) })
                .collect();
            Ok((idx, levels))
        }
    }
}

/// Plug-in estimates of the matrices in the identification formula.
pub fn estimate_bandit_matrices(data: &BanditDataset, opts: &MatrixOptions) -> Result<BanditProbMatrices> {
    if data.records.is_empty() {
        return Err(Error::validation("bandit dataset is empty"));
    }
    if opts.smooth < 0.0 {
        return Err(Error::validation("smoothing must be non-negative"));
    }
    let (no, npre, na) = (data.num_obs, data.num_preobs, data.num_actions);
    let (level_idx, support) = reward_levels(data, opts)?;
    let nr = support.len();
    let mut c_o = vec![DMatrix::<f64>::zeros(no, npre); na];
    let mut c_ro = vec![DMatrix::<f64>::zeros(nr * no, npre); na];
    let mut c_cell = DMatrix::<f64>::zeros(na, npre);
    let mut p_o = DVector::<f64>::zeros(no);
    for (i, rec) in data.records.iter().enumerate() {
        let w = data.weights.as_ref().map_or(1.0, |w| w[i]);
        c_o[rec.a][(rec.o, rec.o_minus)] += w;
        c_ro[rec.a][(level_idx[i] * no + rec.o, rec.o_minus)] += w;
        c_cell[(rec.a, rec.o_minus)] += w;
        p_o[rec.o] += w;
    }
    let empty: Vec<String> = (0..na)
        .flat_map(|a| (0..npre).map(move |om| (a, om)))
        .filter(|&(a, om)| c_cell[(a, om)] <= 0.0 && opts.smooth == 0.0)
        .map(|(a, om)| format!("(a={a}, o⁻={om})"))
        .collect();
    if !empty.is_empty() {
        return Err(Error::validation(format!("empty conditioning cells: {}", empty.join(", "))));
    }
    let alpha = opts.smooth;
    let m_o = c_o
        .into_iter()
        .enumerate()
        .map(|(a, mut m)| {
            for j in 0..npre {
                let total = c_cell[(a, j)] + alpha * no as f64;
                for o in 0..no {
                    m[(o, j)] = (m[(o, j)] + alpha) / total;
                }
            }
            m
        })
        .collect();
    let m_ro = c_ro
        .into_iter()
        .enumerate()
        .map(|(a, mut m)| {
            for j in 0..npre {
                let total = c_cell[(a, j)] + alpha * (no * nr) as f64;
                for row in 0..nr * no {
                    m[(row, j)] = (m[(row, j)] + alpha) / total;
                }
            }
            m
        })
        .collect();
    let p_total = p_o.sum();
    Ok(BanditProbMatrices { m_o, m_ro, p_o: p_o / p_total, reward_support: support })
}

/// Rank diagnostics for the bandit identification formula.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankDiagnostics {
    pub per_action_rank: Vec<usize>,
    /// Rank of `Pr(O₀ | S₀)`, known only with the true model.
    pub obs_rank: Option<usize>,
    /// Rank of `Pr(O₋₁ | S₀)`, known only with the true model.
    pub preobs_rank: Option<usize>,
    pub pass: bool,
    pub tol: f64,
    /// Whether the model-side and data-side rank conditions agree.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub equivalence_holds: Option<bool>,
}

fn rows_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), rows.first().map_or(0, Vec::len), |i, j| rows[i][j])
}

/// Numerical ranks (singular values above `tol·σ_max`) of the per-action
/// conditional matrices and, when the true model is supplied, of both kernels.
///
/// Without a model the latent dimension is unknown, so the check passes when
/// every per-action matrix has the same non-zero rank.
pub fn check_rank_conditions(matrices: &BanditProbMatrices, model: Option<&RandomBandit>, tol: f64) -> RankDiagnostics {
    let per_action_rank: Vec<usize> = matrices.m_o.iter().map(|m| linalg::numerical_rank(m, tol)).collect();
    match model {
        Some(b) => {
            let ns = b.model.num_states();
            let z = rows_matrix(&(0..ns).map(|s| b.model.obs_row(s).to_vec()).collect::<Vec<_>>());
            let obs_rank = linalg::numerical_rank(&z, tol);
            let preobs_rank = linalg::numerical_rank(&rows_matrix(&b.pre_obs_kernel), tol);
            let kernels_ok = obs_rank == ns && preobs_rank == ns;
            let data_ok = per_action_rank.iter().all(|&r| r == ns);
            RankDiagnostics {
                per_action_rank,
                obs_rank: Some(obs_rank),
                preobs_rank: Some(preobs_rank),
                pass: kernels_ok && data_ok,
                tol,
                equivalence_holds: Some(kernels_ok == data_ok),
            }
        }
        None => {
            let first = per_action_rank.first().copied().unwrap_or(0);
            let pass = first > 0 && per_action_rank.iter().all(|&r| r == first);
            RankDiagnostics { per_action_rank, obs_rank: None, preobs_rank: None, pass, tol, equivalence_holds: None }
        }
    }
}

/// `J = Σ_{a,r,o} r π^e(a|o) Pr(r,o | O₋₁, a) Pr(O₀ | A₀=a, O₋₁)⁺ Pr(O₀)`.
///
/// Fails with [`Error::RankCondition`] when the data-only rank check fails,
/// unless `force` is set.
pub fn bandit_value_pseudoinverse<P: ActionPolicy + ?Sized>(
    matrices: &BanditProbMatrices,
    target: &P,
    rcond: Option<f64>,
    force: bool,
) -> Result<f64> {
    let diag = check_rank_conditions(matrices, None, crate::environments::BANDIT_RANK_TOL);
    if !diag.pass && !force {
        return Err(Error::RankCondition(serde_json::to_string(&diag)?));
    }
    let no = matrices.num_obs();
    let rcond = rcond.unwrap_or(PINV_RCOND);
    let mut total = 0.0;
    for (a, (m_o, m_ro)) in matrices.m_o.iter().zip(&matrices.m_ro).enumerate() {
        // u[o⁻] = Σ_{r,o} r π^e(a|o) Pr(r,o|o⁻,a)
        let mut coef = DVector::zeros(m_ro.nrows());
        for (k, r) in matrices.reward_support.iter().enumerate() {
            for o in 0..no {
                coef[k * no + o] = r * target.prob(a, &Obs::Discrete(o));
            }
        }
        let u = m_ro.tr_mul(&coef);
        let x = linalg::pinv(m_o, rcond)? * &matrices.p_o;
        total += u.dot(&x);
    }
    Ok(total)
}
