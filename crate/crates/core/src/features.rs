//! Feature embeddings `φ(a, o)` with one block of coordinates per action.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::Obs;
use crate::rng::derive_stream;

/// Paper defaults for random Fourier features.
pub const DEFAULT_RFF_DIM: usize = 100;
pub const DEFAULT_KERNEL_GAMMA: f64 = 5.0;
pub const DEFAULT_RFF_SEEDS: usize = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum FeatureKind {
    OneHot { num_obs: usize },
    /// `ρ(o) = √(2/D) cos(W o + b)`
    RandomFourier { freqs: DMatrix<f64>, phases: DVector<f64>, kernel_gamma: f64, seed: u64 },
}

/// `φ(a, o) = e_a ⊗ ρ(o)`: the base embedding `ρ` placed in the block of action `a`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMap {
    pub kind: FeatureKind,
    pub num_actions: usize,
    /// Length of one action block.
    pub block_dim: usize,
}

/// Tabular embedding; coordinate `a·|O| + o` is the indicator of `(a, o)`.
pub fn one_hot_features(num_actions: usize, num_obs: usize) -> Result<FeatureMap> {
    if num_actions == 0 || num_obs == 0 {
        return Err(Error::validation("one-hot features need positive sizes"));
    }
    Ok(FeatureMap { kind: FeatureKind::OneHot { num_obs }, num_actions, block_dim: num_obs })
}

/// Random Fourier features for `k(o, o') = exp(−γ_k ‖o − o'‖²)`.
///
/// With `w ~ N(0, 2γ_k I)` and `b ~ U[0, 2π)`, `E[2 cos(wᵀo + b) cos(wᵀo' + b)] = E[cos(wᵀ(o − o'))]`,
/// which is the characteristic function of `w` at `o − o'`, i.e. `exp(−γ_k ‖o − o'‖²)`.
pub fn sample_rff(obs_dim: usize, dim: usize, kernel_gamma: f64, num_actions: usize, seed: u64) -> Result<FeatureMap> {
    if dim == 0 || obs_dim == 0 || num_actions == 0 {
        return Err(Error::validation("random features need positive sizes"));
    }
    if !(kernel_gamma > 0.0) {
        return Err(Error::validation("kernel_gamma must be positive"));
    }
    let mut rng = derive_stream(seed, "rff", &[obs_dim as u64, dim as u64]);
    let normal = Normal::new(0.0, (2.0 * kernel_gamma).sqrt()).expect("finite std");
    let freqs = DMatrix::from_fn(dim, obs_dim, |_, _| normal.sample(&mut rng));
    let phases = DVector::from_fn(dim, |_, _| rng.random::<f64>() * 2.0 * PI);
    Ok(FeatureMap {
        kind: FeatureKind::RandomFourier { freqs, phases, kernel_gamma, seed },
        num_actions,
        block_dim: dim,
    })
}

impl FeatureMap {
    pub fn dim(&self) -> usize {
        self.num_actions * self.block_dim
    }

    pub fn is_one_hot(&self) -> bool {
        matches!(self.kind, FeatureKind::OneHot { .. })
    }

    /// Write the base embedding `ρ(o)` into `out` (length `block_dim`).
    pub fn base_into(&self, obs: &Obs, out: &mut [f64]) -> Result<()> {
        match &self.kind {
            FeatureKind::OneHot { num_obs } => {
                let o = obs.index().filter(|&o| o < *num_obs).ok_or_else(|| {
                    Error::validation(format!("one-hot features expect an observation index below {num_obs}"))
                })?;
                out.fill(0.0);
                out[o] = 1.0;
            }
            FeatureKind::RandomFourier { freqs, phases, .. } => {
                let x = obs.values().ok_or_else(|| Error::validation("random features expect real observations"))?;
                if x.len() != freqs.ncols() {
                    return Err(Error::validation(format!(
                        "observation has dimension {}, features expect {}",
                        x.len(),
                        freqs.ncols()
                    )));
                }
                let scale = (2.0 / self.block_dim as f64).sqrt();
                for (j, v) in out.iter_mut().enumerate() {
                    let mut arg = phases[j];
                    for (k, xk) in x.iter().enumerate() {
                        arg += freqs[(j, k)] * xk;
                    }
                    *v = scale * arg.cos();
                }
            }
        }
        Ok(())
    }

    pub fn base(&self, obs: &Obs) -> Result<DVector<f64>> {
        let mut out = DVector::zeros(self.block_dim);
        self.base_into(obs, out.as_mut_slice())?;
        Ok(out)
    }

    /// Full feature vector `φ(a, o)` of length `dim`.
    pub fn featurize(&self, action: usize, obs: &Obs) -> Result<DVector<f64>> {
        if action >= self.num_actions {
            return Err(Error::validation(format!("action {action} out of range")));
        }
        let mut out = DVector::zeros(self.dim());
        let d = self.block_dim;
        self.base_into(obs, &mut out.as_mut_slice()[action * d..(action + 1) * d])?;
        Ok(out)
    }
}

/// Exact Gaussian kernel approximated by [`sample_rff`].
pub fn gaussian_kernel(x: &[f64], y: &[f64], kernel_gamma: f64) -> f64 {
    let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    (-kernel_gamma * d2).exp()
}
