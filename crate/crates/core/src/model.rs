//! Domain types shared by every estimator: models, policies, tuples and estimates.

use serde::{Deserialize, Serialize};
use smallvec::SmallVec;

use crate::error::{Error, Result};

/// Row-sum tolerance for stochastic vectors.
pub const PROB_TOL: f64 = 1e-12;

/// An observation (or latent state): a discrete index or a real vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Obs {
    Discrete(usize),
    Continuous(SmallVec<[f64; 2]>),
}

impl Obs {
    pub fn scalar(x: f64) -> Self {
        Obs::Continuous(SmallVec::from_slice(&[x]))
    }

    pub fn index(&self) -> Option<usize> {
        match self {
            Obs::Discrete(i) => Some(*i),
            Obs::Continuous(_) => None,
        }
    }

    pub fn values(&self) -> Option<&[f64]> {
        match self {
            Obs::Discrete(_) => None,
            Obs::Continuous(v) => Some(v.as_slice()),
        }
    }

    /// First coordinate of a continuous value, or the index as a real.
    pub fn as_scalar(&self) -> f64 {
        match self {
            Obs::Discrete(i) => *i as f64,
            Obs::Continuous(v) => v[0],
        }
    }
}

/// What a policy conditions on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    State,
    Observation,
}

/// A stochastic policy over a finite action set.
pub trait ActionPolicy: Send + Sync {
    fn num_actions(&self) -> usize;
    fn input_kind(&self) -> InputKind;
    /// Probability of `action` given the policy input (state or observation).
    fn prob(&self, action: usize, input: &Obs) -> f64;
}

impl<P: ActionPolicy + ?Sized> ActionPolicy for &P {
    fn num_actions(&self) -> usize {
        (**self).num_actions()
    }
    fn input_kind(&self) -> InputKind {
        (**self).input_kind()
    }
    fn prob(&self, action: usize, input: &Obs) -> f64 {
        (**self).prob(action, input)
    }
}

fn check_prob_vector(v: &[f64], what: &str) -> Result<()> {
    if v.is_empty() {
        return Err(Error::validation(format!("{what}: empty probability vector")));
    }
    if let Some(x) = v.iter().find(|x| !(x.is_finite() && **x >= 0.0)) {
        return Err(Error::validation(format!("{what}: invalid probability {x}")));
    }
    let s: f64 = v.iter().sum();
    if (s - 1.0).abs() > PROB_TOL {
        return Err(Error::validation(format!("{what}: row sums to {s}, expected 1")));
    }
    Ok(())
}

/// Finite latent-state POMDP with deterministic rewards `r(s, a)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TabularPomdp {
    num_states: usize,
    num_obs: usize,
    num_actions: usize,
    init_dist: Vec<f64>,
    /// `transition[s][a][s']`
    transition: Vec<Vec<Vec<f64>>>,
    /// `reward[s][a]`
    reward: Vec<Vec<f64>>,
    /// `obs_kernel[s][o]`
    obs_kernel: Vec<Vec<f64>>,
    discount: f64,
    r_max: f64,
}

impl TabularPomdp {
    /// Validate and build a model. `r_max` defaults to the largest reward.
    pub fn new(
        init_dist: Vec<f64>,
        transition: Vec<Vec<Vec<f64>>>,
        reward: Vec<Vec<f64>>,
        obs_kernel: Vec<Vec<f64>>,
        discount: f64,
        r_max: Option<f64>,
    ) -> Result<Self> {
        let num_states = init_dist.len();
        if num_states == 0 {
            return Err(Error::validation("at least one latent state is required"));
        }
        check_prob_vector(&init_dist, "initial distribution")?;
        if transition.len() != num_states || reward.len() != num_states || obs_kernel.len() != num_states {
            return Err(Error::validation("kernel sizes disagree with the number of states"));
        }
        let num_actions = transition[0].len();
        if num_actions == 0 {
            return Err(Error::validation("at least one action is required"));
        }
        let num_obs = obs_kernel[0].len();
        for s in 0..num_states {
            if transition[s].len() != num_actions || reward[s].len() != num_actions {
                return Err(Error::validation(format!("state {s}: wrong number of actions")));
            }
            for (a, row) in transition[s].iter().enumerate() {
                if row.len() != num_states {
                    return Err(Error::validation(format!("transition row ({s},{a}) has wrong length")));
                }
                check_prob_vector(row, &format!("transition ({s},{a})"))?;
            }
            if obs_kernel[s].len() != num_obs {
                return Err(Error::validation(format!("observation row {s} has wrong length")));
            }
            check_prob_vector(&obs_kernel[s], &format!("observation kernel row {s}"))?;
        }
        if !(0.0..1.0).contains(&discount) {
            return Err(Error::validation(format!("discount must lie in [0, 1), got {discount}")));
        }
        let max_r = reward.iter().flatten().copied().fold(f64::NEG_INFINITY, f64::max);
        let r_max = r_max.unwrap_or(max_r.max(f64::MIN_POSITIVE));
        if !(r_max > 0.0 && r_max.is_finite()) {
            return Err(Error::validation("r_max must be positive"));
        }
        if let Some(r) = reward.iter().flatten().find(|&&r| !(0.0..=r_max).contains(&r)) {
            return Err(Error::validation(format!("reward {r} outside [0, {r_max}]")));
        }
        Ok(Self { num_states, num_obs, num_actions, init_dist, transition, reward, obs_kernel, discount, r_max })
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }
    pub fn num_obs(&self) -> usize {
        self.num_obs
    }
    pub fn num_actions(&self) -> usize {
        self.num_actions
    }
    pub fn init_dist(&self) -> &[f64] {
        &self.init_dist
    }
    pub fn transition(&self, s: usize, a: usize) -> &[f64] {
        &self.transition[s][a]
    }
    pub fn reward(&self, s: usize, a: usize) -> f64 {
        self.reward[s][a]
    }
    pub fn obs_row(&self, s: usize) -> &[f64] {
        &self.obs_kernel[s]
    }
    pub fn discount(&self) -> f64 {
        self.discount
    }
    pub fn r_max(&self) -> f64 {
        self.r_max
    }

    /// Same model with a different discount factor.
    pub fn with_discount(&self, discount: f64) -> Result<Self> {
        Self::new(
            self.init_dist.clone(),
            self.transition.clone(),
            self.reward.clone(),
            self.obs_kernel.clone(),
            discount,
            Some(self.r_max),
        )
    }

    /// Same model with rewards multiplied by `c > 0`.
    pub fn with_scaled_rewards(&self, c: f64) -> Result<Self> {
        if !(c > 0.0 && c.is_finite()) {
            return Err(Error::validation(format!("rewards must stay in [0, r_max]; scale {c} is not positive")));
        }
        let reward = self.reward.iter().map(|row| row.iter().map(|r| r * c).collect()).collect();
        Self::new(
            self.init_dist.clone(),
            self.transition.clone(),
            reward,
            self.obs_kernel.clone(),
            self.discount,
            Some(self.r_max * c),
        )
    }

    /// Initial observation law `ν_O = Zᵀ ν`.
    pub fn init_obs_dist(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.num_obs];
        for (s, p) in self.init_dist.iter().enumerate() {
            for (o, z) in self.obs_kernel[s].iter().enumerate() {
                out[o] += p * z;
            }
        }
        out
    }
}

/// The one-dimensional linear-Gaussian process with noisy observations.
///
/// `S₀ ~ N(init_mean, init_std²)`, `S' = trans_coef·S + action_shift·(2A−1) + N(0, trans_noise_std²)`,
/// `O = S + N(0, obs_noise_std²)`, `R = S + action_shift·(2A−1)`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct Continuous1dProcess {
    pub init_mean: f64,
    pub init_std: f64,
    pub trans_coef: f64,
    pub action_shift: f64,
    pub trans_noise_std: f64,
    pub obs_noise_std: f64,
    pub discount: f64,
    /// Bound on |R| used for Monte Carlo truncation.
    pub r_max: f64,
}

impl Continuous1dProcess {
    pub fn reward(&self, state: f64, action: usize) -> f64 {
        state + self.action_shift * (2.0 * action as f64 - 1.0)
    }
}

/// Two-action logistic policy: `P(A=1 | x) = 1 / (1 + exp(w·x + bias))`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SigmoidPolicy {
    pub weight: f64,
    pub bias: f64,
    pub input_kind: InputKind,
}

impl SigmoidPolicy {
    pub fn new(weight: f64, bias: f64, input_kind: InputKind) -> Self {
        Self { weight, bias, input_kind }
    }

    /// Behavior policy of the 1D process, acting on the latent state.
    pub fn behavior_1d() -> Self {
        Self::new(1.0, 1.0, InputKind::State)
    }

    /// Target policy family of the 1D process, acting on observations.
    pub fn target_1d(weight: f64) -> Self {
        Self::new(weight, 1.0, InputKind::Observation)
    }

    pub fn prob_one(&self, x: f64) -> f64 {
        1.0 / (1.0 + (self.weight * x + self.bias).exp())
    }
}

impl ActionPolicy for SigmoidPolicy {
    fn num_actions(&self) -> usize {
        2
    }
    fn input_kind(&self) -> InputKind {
        self.input_kind
    }
    fn prob(&self, action: usize, input: &Obs) -> f64 {
        let p1 = self.prob_one(input.as_scalar());
        match action {
            1 => p1,
            0 => 1.0 - p1,
            _ => 0.0,
        }
    }
}

/// Policy given by a probability table indexed by a discrete state or observation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    table: Vec<Vec<f64>>,
    input_kind: InputKind,
}

impl TabularPolicy {
    pub fn new(table: Vec<Vec<f64>>, input_kind: InputKind) -> Result<Self> {
        if table.is_empty() {
            return Err(Error::validation("policy table is empty"));
        }
        let k = table[0].len();
        for (i, row) in table.iter().enumerate() {
            if row.len() != k {
                return Err(Error::validation(format!("policy row {i} has wrong length")));
            }
            check_prob_vector(row, &format!("policy row {i}"))?;
        }
        Ok(Self { table, input_kind })
    }

    pub fn uniform(num_inputs: usize, num_actions: usize, input_kind: InputKind) -> Self {
        let row = vec![1.0 / num_actions as f64; num_actions];
        Self { table: vec![row; num_inputs], input_kind }
    }

    pub fn table(&self) -> &[Vec<f64>] {
        &self.table
    }

    pub fn num_inputs(&self) -> usize {
        self.table.len()
    }

    pub fn row(&self, input: usize) -> &[f64] {
        &self.table[input]
    }
}

impl ActionPolicy for TabularPolicy {
    fn num_actions(&self) -> usize {
        self.table[0].len()
    }
    fn input_kind(&self) -> InputKind {
        self.input_kind
    }
    fn prob(&self, action: usize, input: &Obs) -> f64 {
        let i = input.index().expect("tabular policy requires a discrete input");
        self.table[i][action]
    }
}

/// One observed transition `(O⁻, O, A, R, O⁺)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionTuple {
    pub o_minus: Obs,
    pub o: Obs,
    pub a: usize,
    pub r: f64,
    pub o_plus: Obs,
}

/// The initial observation law `ν_O`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitObs {
    /// Exact probability vector over discrete observations.
    Exact(Vec<f64>),
    /// Sampled initial observations, each with equal weight.
    Samples(Vec<Obs>),
}

impl InitObs {
    /// Support points with weights summing to one.
    pub fn weighted(&self) -> Vec<(Obs, f64)> {
        match self {
            InitObs::Exact(p) => p
                .iter()
                .enumerate()
                .filter(|(_, &w)| w > 0.0)
                .map(|(o, &w)| (Obs::Discrete(o), w))
                .collect(),
            InitObs::Samples(s) => {
                let w = 1.0 / s.len() as f64;
                s.iter().map(|o| (o.clone(), w)).collect()
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        match self {
            InitObs::Exact(p) => p.is_empty(),
            InitObs::Samples(s) => s.is_empty(),
        }
    }
}

/// Metadata carried alongside a tuple dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub env_id: String,
    pub seed: u64,
    pub n: usize,
    pub gamma: f64,
}

/// A collection of transition tuples together with `ν_O`.
///
/// Optional weights turn the dataset into an exact (population) distribution;
/// every empirical average `E_D` becomes a weighted average.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TupleDataset {
    pub tuples: Vec<TransitionTuple>,
    pub weights: Option<Vec<f64>>,
    pub init_obs: InitObs,
    pub meta: DatasetMeta,
}

impl TupleDataset {
    pub fn new(tuples: Vec<TransitionTuple>, init_obs: InitObs, env_id: &str, seed: u64, gamma: f64) -> Result<Self> {
        Self::build(tuples, None, init_obs, env_id, seed, gamma)
    }

    pub fn weighted(
        tuples: Vec<TransitionTuple>,
        weights: Vec<f64>,
        init_obs: InitObs,
        env_id: &str,
        seed: u64,
        gamma: f64,
    ) -> Result<Self> {
        Self::build(tuples, Some(weights), init_obs, env_id, seed, gamma)
    }

    fn build(
        tuples: Vec<TransitionTuple>,
        weights: Option<Vec<f64>>,
        init_obs: InitObs,
        env_id: &str,
        seed: u64,
        gamma: f64,
    ) -> Result<Self> {
        if init_obs.is_empty() {
            return Err(Error::validation("initial observation law is empty"));
        }
        if let Some(w) = &weights {
            if w.len() != tuples.len() {
                return Err(Error::validation("weight count differs from tuple count"));
            }
            if w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
                return Err(Error::validation("weights must be non-negative with positive total"));
            }
        }
        let meta = DatasetMeta { env_id: env_id.to_string(), seed, n: tuples.len(), gamma };
        Ok(Self { tuples, weights, init_obs, meta })
    }

    pub fn len(&self) -> usize {
        self.tuples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tuples.is_empty()
    }

    /// Check action and (discrete) observation bounds.
    pub fn validate(&self, num_actions: usize, num_obs: Option<usize>) -> Result<()> {
        for (i, t) in self.tuples.iter().enumerate() {
            if t.a >= num_actions {
                return Err(Error::validation(format!("tuple {i}: action {} out of range", t.a)));
            }
            if let Some(k) = num_obs {
                for o in [&t.o_minus, &t.o, &t.o_plus] {
                    match o.index() {
                        Some(j) if j < k => {}
                        _ => return Err(Error::validation(format!("tuple {i}: observation out of range"))),
                    }
                }
            }
        }
        Ok(())
    }

    /// Sub-dataset with the given tuple indices (keeps `ν_O`).
    pub fn subset(&self, idx: &[usize]) -> Self {
        let tuples: Vec<_> = idx.iter().map(|&i| self.tuples[i].clone()).collect();
        let weights = self.weights.as_ref().map(|w| idx.iter().map(|&i| w[i]).collect());
        let meta = DatasetMeta { n: tuples.len(), ..self.meta.clone() };
        Self { tuples, weights, init_obs: self.init_obs.clone(), meta }
    }

    /// Same dataset with every reward multiplied by `c`.
    pub fn scale_rewards(&self, c: f64) -> Self {
        let mut out = self.clone();
        for t in &mut out.tuples {
            t.r *= c;
        }
        out
    }

    /// Normalised weight of tuple `i`.
    pub(crate) fn weight_vector(&self) -> Vec<f64> {
        match &self.weights {
            Some(w) => {
                let total: f64 = crate::stats::pairwise_sum(w);
                w.iter().map(|x| x / total).collect()
            }
            None => vec![1.0 / self.tuples.len() as f64; self.tuples.len()],
        }
    }
}

/// One contextual-bandit record `(O₋₁, A₀, O₀, R₀)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BanditTuple {
    pub o_minus: usize,
    pub a: usize,
    pub o: usize,
    pub r: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BanditDataset {
    pub records: Vec<BanditTuple>,
    pub weights: Option<Vec<f64>>,
    pub num_preobs: usize,
    pub num_obs: usize,
    pub num_actions: usize,
}

impl BanditDataset {
    pub fn new(
        records: Vec<BanditTuple>,
        weights: Option<Vec<f64>>,
        num_preobs: usize,
        num_obs: usize,
        num_actions: usize,
    ) -> Result<Self> {
        for (i, r) in records.iter().enumerate() {
            if r.a >= num_actions || r.o >= num_obs || r.o_minus >= num_preobs {
                return Err(Error::validation(format!("bandit record {i} out of range")));
            }
            if !r.r.is_finite() {
                return Err(Error::validation(format!("bandit record {i} has non-finite reward")));
            }
        }
        if let Some(w) = &weights {
            if w.len() != records.len() || w.iter().any(|w| !(w.is_finite() && *w >= 0.0)) {
                return Err(Error::validation("invalid bandit weights"));
            }
        }
        Ok(Self { records, weights, num_preobs, num_obs, num_actions })
    }

    /// Sorted distinct reward values.
    pub fn reward_support(&self) -> Vec<f64> {
        let mut v: Vec<f64> = self.records.iter().map(|r| r.r).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v
    }
}

/// Estimator or oracle that produced a value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    OracleExact,
    OracleMc,
    TabularPinv,
    VmLinear,
    IsLinear,
    LstdqNaive,
    Pomql,
    Pomwl,
    Mql,
    Mwl,
    Dr,
    DrCrossfit,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::OracleExact => "oracle_exact",
            Method::OracleMc => "oracle_mc",
            Method::TabularPinv => "tabular_pinv",
            Method::VmLinear => "vm_linear",
            Method::IsLinear => "is_linear",
            Method::LstdqNaive => "lstdq_naive",
            Method::Pomql => "pomql",
            Method::Pomwl => "pomwl",
            Method::Mql => "mql",
            Method::Mwl => "mwl",
            Method::Dr => "dr",
            Method::DrCrossfit => "dr_crossfit",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A point estimate of the policy value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValueEstimate {
    pub estimate: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub std_error: Option<f64>,
    pub method: Method,
    pub n: usize,
    /// Truncation error bound of a Monte Carlo oracle.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub tail_bound: Option<f64>,
}

impl ValueEstimate {
    pub fn new(estimate: f64, std_error: Option<f64>, method: Method, n: usize) -> Result<Self> {
        if let Some(se) = std_error {
            if !(se >= 0.0) {
                return Err(Error::validation(format!("standard error must be non-negative, got {se}")));
            }
        }
        if !estimate.is_finite() {
            return Err(Error::numerical(format!("{method} produced a non-finite estimate")));
        }
        Ok(Self { estimate, std_error, method, n, tail_bound: None })
    }
}
