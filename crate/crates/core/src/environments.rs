//! Simulation environments: the binary confounded toy, the 1D Gaussian process
//! and random tabular contextual bandits with controllable rank.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Exp1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Continuous1dProcess, InputKind, TabularPolicy, TabularPomdp};
use crate::rng::derive_stream;

pub const BINARY_TOY_ID: &str = "binary-toy";
pub const DYN1D_ID: &str = "dyn1d";
pub const RANDOM_BANDIT_ID: &str = "random-bandit";

/// Discount used by every experiment.
pub const DEFAULT_DISCOUNT: f64 = 0.95;
/// Default observation flip probability of the binary toy.
pub const DEFAULT_OBS_FLIP: f64 = 0.3;
/// Probability that the next state of the binary toy equals the action.
pub const TOY_FOLLOW_ACTION: f64 = 0.8;
/// Singular-value threshold used when generating random bandits.
pub const BANDIT_RANK_TOL: f64 = 1e-8;
const MAX_REJECTIONS: usize = 1000;

/// Binary state/observation/action POMDP whose behavior policy copies the
/// latent state with probability `1 − ε`.
///
/// Returns the model, the state-based behavior policy and the uniform
/// observation-based target policy.
pub fn make_binary_confounded_pomdp(
    epsilon: f64,
    obs_flip_prob: f64,
) -> Result<(TabularPomdp, TabularPolicy, TabularPolicy)> {
    if !(epsilon > 0.0 && epsilon < 1.0) {
        return Err(Error::validation(format!("epsilon must lie in (0, 1), got {epsilon}")));
    }
    if !(0.0..0.5).contains(&obs_flip_prob) {
        return Err(Error::validation(format!("obs_flip_prob must lie in [0, 0.5), got {obs_flip_prob}")));
    }
    let follow = TOY_FOLLOW_ACTION;
    let transition = (0..2)
        .map(|_s| {
            (0..2)
                .map(|a| if a == 1 { vec![1.0 - follow, follow] } else { vec![follow, 1.0 - follow] })
                .collect()
        })
        .collect();
    let reward = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
    let q = obs_flip_prob;
    let obs_kernel = vec![vec![1.0 - q, q], vec![q, 1.0 - q]];
    let model = TabularPomdp::new(vec![0.5, 0.5], transition, reward, obs_kernel, DEFAULT_DISCOUNT, None)?;
    let behavior = TabularPolicy::new(
        vec![vec![1.0 - epsilon, epsilon], vec![epsilon, 1.0 - epsilon]],
        InputKind::State,
    )?;
    let target = TabularPolicy::uniform(2, 2, InputKind::Observation);
    Ok((model, behavior, target))
}

/// The 1D process with observation noise `sigma_o`.
pub fn make_1d_process(sigma_o: f64, gamma: f64) -> Result<Continuous1dProcess> {
    if !(sigma_o >= 0.0 && sigma_o.is_finite()) {
        return Err(Error::validation(format!("sigma_o must be non-negative, got {sigma_o}")));
    }
    if !(0.0..1.0).contains(&gamma) {
        return Err(Error::validation(format!("gamma must lie in [0, 1), got {gamma}")));
    }
    Ok(Continuous1dProcess {
        init_mean: 0.0,
        init_std: 0.5,
        trans_coef: 0.5,
        action_shift: 1.0,
        trans_noise_std: 0.5,
        obs_noise_std: sigma_o,
        discount: gamma,
        r_max: 4.0,
    })
}

/// A one-step contextual bandit with a latent context.
///
/// `S₀ ~ ν`, `O₋₁ ~ Z⁻(·|S₀)`, `A₀ ~ π^b(·|S₀)`, `O₀ ~ Z(·|S₀)`, `R₀ = r(S₀, A₀)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RandomBandit {
    /// Model with `γ = 0`; its observation kernel is `Z`.
    pub model: TabularPomdp,
    /// `pre_obs_kernel[s][o⁻] = Z⁻(o⁻ | s)`
    pub pre_obs_kernel: Vec<Vec<f64>>,
    pub behavior: TabularPolicy,
    pub target: TabularPolicy,
}

fn dirichlet_row<R: Rng + ?Sized>(k: usize, rng: &mut R) -> Vec<f64> {
    let draws: Vec<f64> = (0..k).map(|_| Exp1.sample(rng)).collect();
    let total: f64 = draws.iter().sum();
    let mut row: Vec<f64> = draws.iter().map(|x| x / total).collect();
    // Force an exact unit sum.
    let rest: f64 = row[..k - 1].iter().sum();
    row[k - 1] = (1.0 - rest).max(0.0);
    row
}

fn kernel_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    DMatrix::from_fn(rows.len(), cols, |i, j| rows[i][j])
}

/// Whether both observation kernels have rank `num_states`.
pub fn kernels_satisfy_rank(obs_kernel: &[Vec<f64>], pre_obs_kernel: &[Vec<f64>], num_states: usize) -> bool {
    linalg::numerical_rank_abs(&kernel_matrix(obs_kernel), BANDIT_RANK_TOL) == num_states
        && linalg::numerical_rank_abs(&kernel_matrix(pre_obs_kernel), BANDIT_RANK_TOL) == num_states
}

/// Random bandit whose observation kernels both have full row rank.
pub fn make_random_bandit_pomdp(
    num_states: usize,
    num_obs: usize,
    num_actions: usize,
    seed: u64,
) -> Result<RandomBandit> {
    if num_states == 0 || num_actions == 0 {
        return Err(Error::validation("bandit needs at least one state and one action"));
    }
    if num_obs < num_states {
        return Err(Error::validation(format!(
            "num_obs ({num_obs}) must be at least num_states ({num_states})"
        )));
    }
    let mut rng = derive_stream(seed, RANDOM_BANDIT_ID, &[num_states as u64, num_obs as u64, num_actions as u64]);
    let mut accepted = None;
    for _ in 0..MAX_REJECTIONS {
        let z: Vec<Vec<f64>> = (0..num_states).map(|_| dirichlet_row(num_obs, &mut rng)).collect();
        let z_pre: Vec<Vec<f64>> = (0..num_states).map(|_| dirichlet_row(num_obs, &mut rng)).collect();
        if kernels_satisfy_rank(&z, &z_pre, num_states) {
            accepted = Some((z, z_pre));
            break;
        }
    }
    let (z, z_pre) = accepted.ok_or_else(|| Error::numerical("could not satisfy rank condition"))?;

    let init = dirichlet_row(num_states, &mut rng);
    let reward: Vec<Vec<f64>> = (0..num_states)
        .map(|_| (0..num_actions).map(|_| rng.random::<f64>()).collect())
        .collect();
    // Latent transitions are irrelevant at γ = 0; keep them uniform.
    let transition = vec![vec![vec![1.0 / num_states as f64; num_states]; num_actions]; num_states];
    let model = TabularPomdp::new(init, transition, reward, z, 0.0, Some(1.0))?;

    let uniform = 1.0 / num_actions as f64;
    let behavior_rows = (0..num_states)
        .map(|_| {
            let mut row: Vec<f64> = dirichlet_row(num_actions, &mut rng).iter().map(|p| 0.8 * p + 0.2 * uniform).collect();
            let rest: f64 = row[..num_actions - 1].iter().sum();
            row[num_actions - 1] = 1.0 - rest;
            row
        })
        .collect();
    let behavior = TabularPolicy::new(behavior_rows, InputKind::State)?;
    let target = TabularPolicy::new(
        (0..num_obs).map(|_| dirichlet_row(num_actions, &mut rng)).collect(),
        InputKind::Observation,
    )?;
    Ok(RandomBandit { model, pre_obs_kernel: z_pre, behavior, target })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ActionPolicy, Obs};

    #[test]
    fn toy_behavior_matches_epsilon() {
        let (_, b, t) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        assert_eq!(b.prob(1, &Obs::Discrete(1)), 0.75);
        assert_eq!(b.prob(1, &Obs::Discrete(0)), 0.25);
        assert_eq!(t.row(0), &[0.5, 0.5]);
        let (_, b, _) = make_binary_confounded_pomdp(0.5, 0.3).unwrap();
        assert_eq!(b.table(), &[vec![0.5, 0.5], vec![0.5, 0.5]]);
    }

    #[test]
    fn toy_rejects_out_of_range_parameters() {
        assert!(make_binary_confounded_pomdp(0.0, 0.3).is_err());
        assert!(make_binary_confounded_pomdp(1.0, 0.3).is_err());
        assert!(make_binary_confounded_pomdp(0.3, 0.5).is_err());
        let (m, _, _) = make_binary_confounded_pomdp(0.3, 0.0).unwrap();
        assert_eq!(m.discount(), 0.95);
    }

    #[test]
    fn process_rejects_negative_noise() {
        assert!(make_1d_process(-0.1, 0.95).is_err());
        assert!(make_1d_process(0.5, 1.0).is_err());
        let p = make_1d_process(0.0, 0.95).unwrap();
        assert_eq!((p.init_std, p.trans_coef, p.trans_noise_std), (0.5, 0.5, 0.5));
    }

    #[test]
    fn random_bandit_is_deterministic_and_full_rank() {
        let a = make_random_bandit_pomdp(3, 3, 2, 7).unwrap();
        let b = make_random_bandit_pomdp(3, 3, 2, 7).unwrap();
        assert_eq!(serde_json::to_vec(&a).unwrap(), serde_json::to_vec(&b).unwrap());
        assert!(kernels_satisfy_rank(
            &(0..3).map(|s| a.model.obs_row(s).to_vec()).collect::<Vec<_>>(),
            &a.pre_obs_kernel,
            3
        ));
        for s in 0..3 {
            for act in 0..2 {
                assert!(a.behavior.row(s)[act] > 0.0);
            }
        }
    }

    #[test]
    fn single_state_bandit_is_trivial() {
        let b = make_random_bandit_pomdp(1, 1, 2, 0).unwrap();
        assert_eq!(b.model.obs_row(0), &[1.0]);
        assert_eq!(b.pre_obs_kernel, vec![vec![1.0]]);
    }

    #[test]
    fn identical_rows_are_rejected() {
        let z = vec![vec![0.3, 0.7], vec![0.3, 0.7]];
        let good = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        assert!(!kernels_satisfy_rank(&z, &good, 2));
        assert!(kernels_satisfy_rank(&good, &good, 2));
    }

    #[test]
    fn bandit_requires_enough_observations() {
        assert!(make_random_bandit_pomdp(3, 2, 2, 0).is_err());
    }
}
