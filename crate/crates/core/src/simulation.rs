//! Behavior-policy rollouts, tuple extraction and ground-truth value oracles.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use crate::environments::RandomBandit;
use crate::error::{Error, Result};
use crate::model::{
    ActionPolicy, BanditDataset, BanditTuple, Continuous1dProcess, InitObs, InputKind, Method, Obs, TabularPomdp,
    TransitionTuple, TupleDataset, ValueEstimate,
};
use crate::rng::{derive_stream, Stream};
use crate::stats;

/// Rollouts per random stream in Monte Carlo evaluation.
const MC_BLOCK: usize = 1024;

/// One time step of a behavior rollout.
#[derive(Debug, Clone, PartialEq)]
pub struct StepRecord {
    pub state: Obs,
    pub obs: Obs,
    pub action: usize,
    pub reward: f64,
}

pub type Trajectory = Vec<StepRecord>;

/// A simulator with latent states.
pub trait Environment: Sync {
    fn num_actions(&self) -> usize;
    fn discount(&self) -> f64;
    fn r_max(&self) -> f64;
    fn sample_initial_state(&self, rng: &mut Stream) -> Obs;
    fn sample_obs(&self, state: &Obs, rng: &mut Stream) -> Obs;
    fn reward(&self, state: &Obs, action: usize) -> f64;
    fn sample_next_state(&self, state: &Obs, action: usize, rng: &mut Stream) -> Obs;
    /// Exact `ν_O` when the observation space is finite.
    fn exact_init_obs(&self) -> Option<Vec<f64>>;

    /// Truncated discounted return of an observation-based policy.
    fn discounted_return<P: ActionPolicy + ?Sized>(&self, policy: &P, horizon: usize, rng: &mut Stream) -> f64 {
        let gamma = self.discount();
        let mut state = self.sample_initial_state(rng);
        let mut total = 0.0;
        let mut disc = 1.0;
        for t in 0..horizon {
            let obs = self.sample_obs(&state, rng);
            let a = sample_action(policy, &obs, rng);
            total += disc * self.reward(&state, a);
            disc *= gamma;
            if t + 1 < horizon {
                state = self.sample_next_state(&state, a, rng);
            }
        }
        total
    }
}

/// Draw an index from a probability vector.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    // Rounding slack: fall back to the last index with positive mass.
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(probs.len() - 1)
}

fn sample_action<P: ActionPolicy + ?Sized, R: Rng + ?Sized>(policy: &P, input: &Obs, rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let k = policy.num_actions();
    let mut acc = 0.0;
    for a in 0..k {
        acc += policy.prob(a, input);
        if u < acc {
            return a;
        }
    }
    (0..k).rev().find(|&a| policy.prob(a, input) > 0.0).unwrap_or(k - 1)
}

impl Environment for TabularPomdp {
    fn num_actions(&self) -> usize {
        TabularPomdp::num_actions(self)
    }
    fn discount(&self) -> f64 {
        TabularPomdp::discount(self)
    }
    fn r_max(&self) -> f64 {
        TabularPomdp::r_max(self)
    }
    fn sample_initial_state(&self, rng: &mut Stream) -> Obs {
        Obs::Discrete(sample_categorical(self.init_dist(), rng))
    }
    fn sample_obs(&self, state: &Obs, rng: &mut Stream) -> Obs {
        Obs::Discrete(sample_categorical(self.obs_row(state.index().expect("discrete state")), rng))
    }
    fn reward(&self, state: &Obs, action: usize) -> f64 {
        TabularPomdp::reward(self, state.index().expect("discrete state"), action)
    }
    fn sample_next_state(&self, state: &Obs, action: usize, rng: &mut Stream) -> Obs {
        Obs::Discrete(sample_categorical(self.transition(state.index().expect("discrete state"), action), rng))
    }
    fn exact_init_obs(&self) -> Option<Vec<f64>> {
        Some(self.init_obs_dist())
    }
}

impl Environment for Continuous1dProcess {
    fn num_actions(&self) -> usize {
        2
    }
    fn discount(&self) -> f64 {
        self.discount
    }
    fn r_max(&self) -> f64 {
        self.r_max
    }
    fn sample_initial_state(&self, rng: &mut Stream) -> Obs {
        let z: f64 = StandardNormal.sample(rng);
        Obs::scalar(self.init_mean + self.init_std * z)
    }
    fn sample_obs(&self, state: &Obs, rng: &mut Stream) -> Obs {
        let s = state.as_scalar();
        if self.obs_noise_std == 0.0 {
            return Obs::scalar(s);
        }
        let z: f64 = StandardNormal.sample(rng);
        Obs::scalar(s + self.obs_noise_std * z)
    }
    fn reward(&self, state: &Obs, action: usize) -> f64 {
        Continuous1dProcess::reward(self, state.as_scalar(), action)
    }
    fn sample_next_state(&self, state: &Obs, action: usize, rng: &mut Stream) -> Obs {
        let z: f64 = StandardNormal.sample(rng);
        let shift = self.action_shift * (2.0 * action as f64 - 1.0);
        Obs::scalar(self.trans_coef * state.as_scalar() + shift + self.trans_noise_std * z)
    }
    fn exact_init_obs(&self) -> Option<Vec<f64>> {
        None
    }
}

/// Roll out the state-based behavior policy for `horizon` steps.
pub fn rollout_behavior<E: Environment, P: ActionPolicy + ?Sized>(
    env: &E,
    behavior: &P,
    horizon: usize,
    rng: &mut Stream,
) -> Result<Trajectory> {
    if horizon == 0 {
        return Err(Error::validation("rollout horizon must be positive"));
    }
    if behavior.input_kind() != InputKind::State {
        return Err(Error::validation("behavior policy must condition on the latent state"));
    }
    let mut out = Vec::with_capacity(horizon);
    let mut state = env.sample_initial_state(rng);
    for t in 0..horizon {
        let obs = env.sample_obs(&state, rng);
        let action = sample_action(behavior, &state, rng);
        let reward = env.reward(&state, action);
        if t + 1 < horizon {
            let next = env.sample_next_state(&state, action, rng);
            out.push(StepRecord { state: std::mem::replace(&mut state, next), obs, action, reward });
        } else {
            out.push(StepRecord { state: state.clone(), obs, action, reward });
        }
    }
    Ok(out)
}

/// `count` behavior trajectories; trajectory `i` uses stream `(seed, "rollout", i)`.
pub fn simulate_trajectories<E: Environment, P: ActionPolicy + ?Sized>(
    env: &E,
    behavior: &P,
    count: usize,
    horizon: usize,
    seed: u64,
) -> Result<Vec<Trajectory>> {
    (0..count)
        .into_par_iter()
        .map(|i| {
            let mut rng = derive_stream(seed, "rollout", &[i as u64]);
            rollout_behavior(env, behavior, horizon, &mut rng)
        })
        .collect()
}

/// Result of [`extract_tuples`].
#[derive(Debug, Clone)]
pub struct Extracted {
    pub dataset: TupleDataset,
    /// Trajectories shorter than three steps that produced no tuple.
    pub skipped: usize,
}

/// Convert trajectories into `(O_{t−1}, O_t, A_t, R_t, O_{t+1})` tuples, `t = 1..T−2`.
///
/// `ν_O` is `exact_init_obs` when given, otherwise the trajectories' first observations.
pub fn extract_tuples(
    trajectories: &[Trajectory],
    exact_init_obs: Option<Vec<f64>>,
    env_id: &str,
    seed: u64,
    gamma: f64,
) -> Result<Extracted> {
    let mut tuples = Vec::with_capacity(trajectories.iter().map(|t| t.len().saturating_sub(2)).sum());
    let mut init = Vec::new();
    let mut skipped = 0;
    for traj in trajectories {
        if traj.len() < 3 {
            skipped += 1;
            continue;
        }
        init.push(traj[0].obs.clone());
        for t in 1..traj.len() - 1 {
            tuples.push(TransitionTuple {
                o_minus: traj[t - 1].obs.clone(),
                o: traj[t].obs.clone(),
                a: traj[t].action,
                r: traj[t].reward,
                o_plus: traj[t + 1].obs.clone(),
            });
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} trajectories shorter than 3 steps");
    }
    let init_obs = match exact_init_obs {
        Some(p) => InitObs::Exact(p),
        None => InitObs::Samples(init),
    };
    let dataset = TupleDataset::new(tuples, init_obs, env_id, seed, gamma)?;
    Ok(Extracted { dataset, skipped })
}

/// Simulate `count` trajectories of length `horizon` and extract tuples.
pub fn generate_dataset<E: Environment, P: ActionPolicy + ?Sized>(
    env: &E,
    behavior: &P,
    count: usize,
    horizon: usize,
    env_id: &str,
    seed: u64,
) -> Result<TupleDataset> {
    let trajectories = simulate_trajectories(env, behavior, count, horizon, seed)?;
    Ok(extract_tuples(&trajectories, env.exact_init_obs(), env_id, seed, env.discount())?.dataset)
}

/// Smallest `H` with `γ^H r_max / (1 − γ) ≤ tol`.
pub fn truncation_horizon(gamma: f64, r_max: f64, tol: f64) -> usize {
    if gamma == 0.0 {
        return 1;
    }
    let mut h = 0usize;
    let mut tail = r_max / (1.0 - gamma);
    while tail > tol {
        tail *= gamma;
        h += 1;
    }
    h.max(1)
}

/// Monte Carlo estimate of the target policy value from `n_rollouts` truncated rollouts.
pub fn monte_carlo_value<E: Environment, P: ActionPolicy + ?Sized>(
    env: &E,
    target: &P,
    n_rollouts: usize,
    horizon: usize,
    seed: u64,
) -> Result<ValueEstimate> {
    if n_rollouts == 0 || horizon == 0 {
        return Err(Error::validation("n_rollouts and horizon must be positive"));
    }
    if target.input_kind() != InputKind::Observation {
        return Err(Error::validation("target policy must condition on observations"));
    }
    let blocks = n_rollouts.div_ceil(MC_BLOCK);
    let per_block: Vec<Vec<f64>> = (0..blocks)
        .into_par_iter()
        .map(|b| {
            let mut rng = derive_stream(seed, "mc", &[b as u64]);
            let len = MC_BLOCK.min(n_rollouts - b * MC_BLOCK);
            (0..len).map(|_| env.discounted_return(target, horizon, &mut rng)).collect()
        })
        .collect();
    let returns: Vec<f64> = per_block.into_iter().flatten().collect();
    let mean = stats::mean(&returns);
    let se = stats::sample_std(&returns) / (returns.len() as f64).sqrt();
    let gamma = env.discount();
    let mut est = ValueEstimate::new(mean, Some(se), Method::OracleMc, n_rollouts)?;
    est.tail_bound = Some(gamma.powi(horizon as i32) * env.r_max() / (1.0 - gamma));
    Ok(est)
}

/// Exact quantities of a tabular model under an observation-based target policy.
#[derive(Debug, Clone)]
pub struct ExactTabularValue {
    pub j: f64,
    /// `latent_q[a][s] = r(s,a) + γ Σ_{s'} P(s'|s,a) v(s')`
    pub latent_q: Vec<Vec<f64>>,
    /// Latent state values `v(s)` under the target policy.
    pub latent_v: Vec<f64>,
    /// Normalised discounted occupancy `(1−γ) Σ_t γ^t P_{π^e,t}(s)`.
    pub occupancy: Vec<f64>,
}

/// `π̃(a|s) = Σ_o Z(o|s) π^e(a|o)`
pub fn marginal_target<P: ActionPolicy + ?Sized>(env: &TabularPomdp, target: &P) -> Vec<Vec<f64>> {
    (0..env.num_states())
        .map(|s| {
            (0..env.num_actions())
                .map(|a| {
                    env.obs_row(s).iter().enumerate().map(|(o, z)| z * target.prob(a, &Obs::Discrete(o))).sum()
                })
                .collect()
        })
        .collect()
}

fn chain(env: &TabularPomdp, pi: &[Vec<f64>]) -> (DMatrix<f64>, DVector<f64>) {
    let ns = env.num_states();
    let mut p = DMatrix::zeros(ns, ns);
    let mut r = DVector::zeros(ns);
    for s in 0..ns {
        for a in 0..env.num_actions() {
            r[s] += pi[s][a] * env.reward(s, a);
            for s2 in 0..ns {
                p[(s, s2)] += pi[s][a] * env.transition(s, a)[s2];
            }
        }
    }
    (p, r)
}

/// `J = νᵀ (I − γ P^e)⁻¹ r^e` with the target chain marginalised over observations.
pub fn exact_tabular_value<P: ActionPolicy + ?Sized>(env: &TabularPomdp, target: &P) -> Result<ExactTabularValue> {
    if target.input_kind() != InputKind::Observation {
        return Err(Error::validation("target policy must condition on observations"));
    }
    let ns = env.num_states();
    let gamma = env.discount();
    let pi = marginal_target(env, target);
    let (p, r) = chain(env, &pi);
    let lhs = DMatrix::identity(ns, ns) - &p * gamma;
    let lu = lhs.clone().lu();
    let v = lu.solve(&r).ok_or_else(|| Error::numerical("I − γP is singular"))?;
    let nu = DVector::from_column_slice(env.init_dist());
    let j = nu.dot(&v);
    let latent_q = (0..env.num_actions())
        .map(|a| {
            (0..ns)
                .map(|s| env.reward(s, a) + gamma * env.transition(s, a).iter().zip(v.iter()).map(|(p, v)| p * v).sum::<f64>())
                .collect()
        })
        .collect();
    let occ = lhs
        .transpose()
        .lu()
        .solve(&nu)
        .ok_or_else(|| Error::numerical("I − γPᵀ is singular"))?
        * (1.0 - gamma);
    Ok(ExactTabularValue { j, latent_q, latent_v: v.iter().copied().collect(), occupancy: occ.iter().copied().collect() })
}

/// Joint law of `(S_{t−1}, S_t)` averaged over the harvested steps `t = 1..T−2`
/// of behavior trajectories of length `traj_len`.
pub fn behavior_pair_law<P: ActionPolicy + ?Sized>(env: &TabularPomdp, behavior: &P, traj_len: usize) -> Result<DMatrix<f64>> {
    if traj_len < 3 {
        return Err(Error::validation("trajectory length must be at least 3"));
    }
    let ns = env.num_states();
    let pb: Vec<Vec<f64>> = (0..ns)
        .map(|s| (0..env.num_actions()).map(|a| behavior.prob(a, &Obs::Discrete(s))).collect())
        .collect();
    let (p, _) = chain(env, &pb);
    let mut mu = DVector::from_column_slice(env.init_dist());
    let mut joint = DMatrix::zeros(ns, ns);
    let steps = traj_len - 2;
    for _t in 1..=steps {
        // mu is the law of S_{t−1}
        for s0 in 0..ns {
            for s1 in 0..ns {
                joint[(s0, s1)] += mu[s0] * p[(s0, s1)];
            }
        }
        mu = p.transpose() * mu;
    }
    Ok(joint / steps as f64)
}

/// Occupancy ratio `w(s) = d^e(s) / P_{π^b}(s)` against the harvested tuple law.
/// States never visited by the behavior policy get `+∞`.
pub fn occupancy_ratio<P: ActionPolicy + ?Sized, Q: ActionPolicy + ?Sized>(
    env: &TabularPomdp,
    target: &P,
    behavior: &Q,
    traj_len: usize,
) -> Result<Vec<f64>> {
    let exact = exact_tabular_value(env, target)?;
    let joint = behavior_pair_law(env, behavior, traj_len)?;
    let ratio: Vec<f64> = (0..env.num_states())
        .map(|s| {
            let pb: f64 = joint.column(s).sum();
            if pb > 0.0 {
                exact.occupancy[s] / pb
            } else {
                f64::INFINITY
            }
        })
        .collect();
    if ratio.iter().any(|r| r.is_infinite()) {
        log::warn!("behavior data does not cover every latent state");
    }
    Ok(ratio)
}

/// The exact tuple distribution of harvested behavior data as a weighted dataset.
pub fn population_dataset<P: ActionPolicy + ?Sized>(
    env: &TabularPomdp,
    behavior: &P,
    traj_len: usize,
    env_id: &str,
) -> Result<TupleDataset> {
    let joint = behavior_pair_law(env, behavior, traj_len)?;
    let (ns, no, na) = (env.num_states(), env.num_obs(), env.num_actions());
    let mut acc: BTreeMap<(usize, usize, usize, u64, usize), f64> = BTreeMap::new();
    for s0 in 0..ns {
        for s in 0..ns {
            let pj = joint[(s0, s)];
            if pj == 0.0 {
                continue;
            }
            for a in 0..na {
                let pa = pj * behavior.prob(a, &Obs::Discrete(s));
                if pa == 0.0 {
                    continue;
                }
                let r = env.reward(s, a);
                for s2 in 0..ns {
                    let pt = pa * env.transition(s, a)[s2];
                    if pt == 0.0 {
                        continue;
                    }
                    for om in 0..no {
                        for o in 0..no {
                            for op in 0..no {
                                let w = pt * env.obs_row(s0)[om] * env.obs_row(s)[o] * env.obs_row(s2)[op];
                                if w > 0.0 {
                                    *acc.entry((om, o, a, r.to_bits(), op)).or_insert(0.0) += w;
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    let (tuples, weights): (Vec<_>, Vec<_>) = acc
        .into_iter()
        .map(|((om, o, a, r, op), w)| {
            let t = TransitionTuple {
                o_minus: Obs::Discrete(om),
                o: Obs::Discrete(o),
                a,
                r: f64::from_bits(r),
                o_plus: Obs::Discrete(op),
            };
            (t, w)
        })
        .unzip();
    TupleDataset::weighted(tuples, weights, InitObs::Exact(env.init_obs_dist()), env_id, 0, env.discount())
}

/// Draw `n` i.i.d. bandit records.
pub fn sample_bandit_dataset(bandit: &RandomBandit, n: usize, seed: u64) -> Result<BanditDataset> {
    let m = &bandit.model;
    let records = (0..n)
        .into_par_iter()
        .chunks(4096)
        .enumerate()
        .flat_map_iter(|(block, idx)| {
            let mut rng = derive_stream(seed, "bandit", &[block as u64]);
            idx.into_iter()
                .map(|_| {
                    let s = sample_categorical(m.init_dist(), &mut rng);
                    let o_minus = sample_categorical(&bandit.pre_obs_kernel[s], &mut rng);
                    let a = sample_categorical(bandit.behavior.row(s), &mut rng);
                    let o = sample_categorical(m.obs_row(s), &mut rng);
                    BanditTuple { o_minus, a, o, r: m.reward(s, a) }
                })
                .collect::<Vec<_>>()
        })
        .collect();
    BanditDataset::new(records, None, bandit.pre_obs_kernel[0].len(), m.num_obs(), m.num_actions())
}

/// The exact joint law of a bandit as a weighted dataset.
pub fn population_bandit_dataset(bandit: &RandomBandit) -> Result<BanditDataset> {
    let m = &bandit.model;
    let npre = bandit.pre_obs_kernel[0].len();
    let mut acc: BTreeMap<(usize, usize, usize, u64), f64> = BTreeMap::new();
    for s in 0..m.num_states() {
        for om in 0..npre {
            for a in 0..m.num_actions() {
                for o in 0..m.num_obs() {
                    let w = m.init_dist()[s] * bandit.pre_obs_kernel[s][om] * bandit.behavior.row(s)[a] * m.obs_row(s)[o];
                    if w > 0.0 {
                        *acc.entry((om, a, o, m.reward(s, a).to_bits())).or_insert(0.0) += w;
                    }
                }
            }
        }
    }
    let (records, weights): (Vec<_>, Vec<_>) = acc
        .into_iter()
        .map(|((o_minus, a, o, r), w)| (BanditTuple { o_minus, a, o, r: f64::from_bits(r) }, w))
        .unzip();
    BanditDataset::new(records, Some(weights), npre, m.num_obs(), m.num_actions())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environments::{make_1d_process, make_binary_confounded_pomdp};
    use crate::model::{SigmoidPolicy, TabularPolicy};

    #[test]
    fn rollout_has_requested_length() {
        let (m, b, _) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let mut rng = derive_stream(1, "t", &[]);
        let traj = rollout_behavior(&m, &b, 3, &mut rng).unwrap();
        assert_eq!(traj.len(), 3);
        assert!(rollout_behavior(&m, &b, 0, &mut rng).is_err());
    }

    #[test]
    fn rollout_rejects_observation_based_behavior() {
        let (m, _, t) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let mut rng = derive_stream(1, "t", &[]);
        assert!(rollout_behavior(&m, &t, 5, &mut rng).is_err());
    }

    #[test]
    fn fixed_seed_rollouts_agree() {
        let env = make_1d_process(1.0, 0.95).unwrap();
        let b = SigmoidPolicy::behavior_1d();
        let t1 = simulate_trajectories(&env, &b, 3, 20, 42).unwrap();
        let t2 = simulate_trajectories(&env, &b, 3, 20, 42).unwrap();
        assert_eq!(t1, t2);
    }

    #[test]
    fn noiseless_observations_equal_states() {
        let env = make_1d_process(0.0, 0.95).unwrap();
        let traj = simulate_trajectories(&env, &SigmoidPolicy::behavior_1d(), 2, 50, 3).unwrap();
        for step in traj.iter().flatten() {
            assert_eq!(step.obs.as_scalar().to_bits(), step.state.as_scalar().to_bits());
        }
    }

    #[test]
    fn tuple_counts() {
        let env = make_1d_process(1.0, 0.95).unwrap();
        let b = SigmoidPolicy::behavior_1d();
        let trajs = simulate_trajectories(&env, &b, 1, 100, 0).unwrap();
        assert_eq!(extract_tuples(&trajs, None, "dyn1d", 0, 0.95).unwrap().dataset.len(), 98);

        let short = simulate_trajectories(&env, &b, 1, 3, 0).unwrap();
        let ds = extract_tuples(&short, None, "dyn1d", 0, 0.95).unwrap().dataset;
        assert_eq!(ds.len(), 1);
        let t = &ds.tuples[0];
        assert_eq!(t.o_minus, short[0][0].obs);
        assert_eq!(t.o, short[0][1].obs);
        assert_eq!(t.a, short[0][1].action);
        assert_eq!(t.r, short[0][1].reward);
        assert_eq!(t.o_plus, short[0][2].obs);
        assert_eq!(ds.init_obs, InitObs::Samples(vec![short[0][0].obs.clone()]));

        let mut mixed = simulate_trajectories(&env, &b, 2, 10, 0).unwrap();
        mixed.push(simulate_trajectories(&env, &b, 1, 2, 0).unwrap().remove(0));
        let ex = extract_tuples(&mixed, None, "dyn1d", 0, 0.95).unwrap();
        assert_eq!((ex.dataset.len(), ex.skipped), (16, 1));
    }

    #[test]
    fn single_state_value_is_geometric() {
        let m = TabularPomdp::new(vec![1.0], vec![vec![vec![1.0]; 2]], vec![vec![0.7, 0.7]], vec![vec![1.0]], 0.95, None)
            .unwrap();
        let t = TabularPolicy::uniform(1, 2, InputKind::Observation);
        let ex = exact_tabular_value(&m, &t).unwrap();
        assert!((ex.j - 14.0).abs() < 1e-12);
        assert!((ex.occupancy[0] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn zero_discount_value_is_one_step_reward() {
        let (m, _, t) = make_binary_confounded_pomdp(0.3, 0.2).unwrap();
        let m0 = m.with_discount(0.0).unwrap();
        let ex = exact_tabular_value(&m0, &t).unwrap();
        let pi = marginal_target(&m0, &t);
        let direct: f64 = (0..2).map(|s| m0.init_dist()[s] * (0..2).map(|a| pi[s][a] * m0.reward(s, a)).sum::<f64>()).sum();
        assert!((ex.j - direct).abs() < 1e-15);
    }

    #[test]
    fn truncation_horizon_meets_tolerance() {
        let h = truncation_horizon(0.95, 1.0, 1e-4);
        assert!(0.95f64.powi(h as i32) / 0.05 <= 1e-4);
        assert!(0.95f64.powi(h as i32 - 1) / 0.05 > 1e-4);
        assert_eq!(truncation_horizon(0.0, 1.0, 1e-4), 1);
    }

    #[test]
    fn population_weights_sum_to_one() {
        let (m, b, _) = make_binary_confounded_pomdp(0.25, 0.3).unwrap();
        let pop = population_dataset(&m, &b, 100, "binary-toy").unwrap();
        let total: f64 = pop.weights.as_ref().unwrap().iter().sum();
        assert!((total - 1.0).abs() < 1e-12);
        assert!(pop.len() <= 32);
    }

    #[test]
    fn unvisited_state_has_infinite_ratio() {
        // State 1 is unreachable under the behavior policy but reachable under the target.
        let m = TabularPomdp::new(
            vec![1.0, 0.0],
            vec![vec![vec![1.0, 0.0], vec![0.0, 1.0]], vec![vec![0.0, 1.0], vec![0.0, 1.0]]],
            vec![vec![0.0, 1.0], vec![1.0, 1.0]],
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            0.9,
            None,
        )
        .unwrap();
        let b = TabularPolicy::new(vec![vec![1.0, 0.0], vec![1.0, 0.0]], InputKind::State).unwrap();
        let t = TabularPolicy::uniform(2, 2, InputKind::Observation);
        let w = occupancy_ratio(&m, &t, &b, 10).unwrap();
        assert!(w[0].is_finite());
        assert!(w[1].is_infinite());
    }
}
