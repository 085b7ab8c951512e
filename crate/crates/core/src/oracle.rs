//! Retraining-based ground truth.
//!
//! Each of `J` trials draws a fresh dataset and trains `m'` networks on it.
//! The variance of the single-model prediction and of the `m'`-average
//! across trials are then split into procedural and data parts with
//!
//! ```text
//! τ²   = m'/(m'−1) · (Var h₁ − Var h̄_{m'})
//! σ²/n = m'/(m'−1) · Var h̄_{m'} − 1/(m'−1) · Var h₁
//! ```

use ndarray::{Array1, Array2, ArrayView1, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{sample, Dataset, SyntheticSpec};
use crate::error::{Error, Result};
use crate::estimators::sample_variance;
use crate::net::{NetConfig, NetTrainer, Trainer};
use crate::rng::{derive_seed, Stream};
use crate::scalar::{from_usize, Real};

/// Which per-trial predictions estimate the single-model variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SingleModelSource {
    /// Member 1 of each trial's ensemble.
    FirstMember,
    /// The across-trial variance of every member, averaged over members.
    /// Same target as `FirstMember` with `m'` times the draws.
    #[default]
    AllMembers,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth<F> {
    pub var_single: F,
    pub var_ensemble: F,
    pub tau2: F,
    pub sigma2_over_n: F,
    pub j: usize,
    pub m_prime: usize,
    /// Data seed of each trial.
    pub seeds: Vec<u64>,
    pub single_source: SingleModelSource,
    /// Set when a decomposed component came out negative.
    pub negative_component: bool,
    /// `J × m'` member predictions at the test point.
    #[serde(skip)]
    pub predictions: Array2<F>,
}

impl<F: Real> GroundTruth<F> {
    /// `Var(h̄_k)` over trials using the first `k` members of each trial.
    pub fn var_ensemble_of_size(&self, k: usize) -> Result<F> {
        if k == 0 || k > self.m_prime {
            return Err(Error::InvalidInput(format!(
                "ensemble size must be in 1..={}",
                self.m_prime
            )));
        }
        let means: Vec<F> = self
            .predictions
            .outer_iter()
            .map(|row| row.iter().take(k).copied().sum::<F>() / from_usize(k))
            .collect();
        empirical_variance(&means)
    }
}

/// `(1/(J−1)) Σ (hⱼ − mean)²`.
pub fn empirical_variance<F: Real>(values: &[F]) -> Result<F> {
    let j = values.len();
    if j < 2 {
        return Err(Error::InsufficientTrials {
            required: 2,
            actual: j,
        });
    }
    Ok(sample_variance(values))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decomposition<F> {
    pub tau2: F,
    pub sigma2_over_n: F,
    /// Either component is negative (sampling noise); values are kept as is.
    pub negative: bool,
}

/// Splits single-model and ensemble variances into procedural and data
/// variance.
pub fn decompose<F: Real>(var_single: F, var_ensemble: F, m_prime: usize) -> Result<Decomposition<F>> {
    if m_prime < 2 {
        return Err(Error::InvalidInput(format!(
            "ensemble size must be >= 2, got {m_prime}"
        )));
    }
    let m = from_usize::<F>(m_prime);
    let m1 = m - F::one();
    let tau2 = m / m1 * (var_single - var_ensemble);
    let sigma2_over_n = m / m1 * var_ensemble - var_single / m1;
    Ok(Decomposition {
        tau2,
        sigma2_over_n,
        negative: tau2 < F::zero() || sigma2_over_n < F::zero(),
    })
}

/// Ground truth with an arbitrary data sampler and trainer.
///
/// Trial `t` draws its data with `derive_seed(seed, Data, t)`; member `k` of
/// trial `t` trains with `derive_seed(derive_seed(seed, Trial, t), Init, k)`.
pub fn ground_truth_with<F, S, T>(
    sampler: S,
    trainer: &T,
    x0: ArrayView1<F>,
    j: usize,
    m_prime: usize,
    seed: u64,
    single_source: SingleModelSource,
) -> Result<GroundTruth<F>>
where
    F: Real,
    S: Fn(u64) -> Result<Dataset<F>> + Sync,
    T: Trainer<F>,
{
    if j < 2 {
        return Err(Error::InsufficientTrials {
            required: 2,
            actual: j,
        });
    }
    if m_prime < 2 {
        return Err(Error::InvalidInput(format!(
            "ensemble size must be >= 2, got {m_prime}"
        )));
    }
    let seeds: Vec<u64> = (0..j as u64)
        .map(|t| derive_seed(seed, Stream::Data, t))
        .collect();
    let datasets = seeds.par_iter().map(|&s| sampler(s)).collect::<Result<Vec<_>>>()?;
    let flat = (0..j * m_prime)
        .into_par_iter()
        .map(|idx| {
            let (t, k) = (idx / m_prime, idx % m_prime);
            let member_seed = derive_seed(derive_seed(seed, Stream::Trial, t as u64), Stream::Init, k as u64);
            trainer
                .fit_predict(&datasets[t], member_seed, x0)
                .map_err(|e| e.during(format!("trial {t}, member {k}")))
        })
        .collect::<Result<Vec<F>>>()?;
    let predictions = Array2::from_shape_vec((j, m_prime), flat).expect("j * m' predictions");
    let means: Vec<F> = predictions
        .mean_axis(Axis(1))
        .expect("m' >= 2")
        .to_vec();
    let var_ensemble = empirical_variance(&means)?;
    let var_single = match single_source {
        SingleModelSource::FirstMember => empirical_variance(&predictions.column(0).to_vec())?,
        SingleModelSource::AllMembers => {
            let per_member = predictions
                .axis_iter(Axis(1))
                .map(|col| empirical_variance(&col.to_vec()))
                .collect::<Result<Array1<F>>>()?;
            per_member.sum() / from_usize(m_prime)
        }
    };
    let d = decompose(var_single, var_ensemble, m_prime)?;
    Ok(GroundTruth {
        var_single,
        var_ensemble,
        tau2: d.tau2,
        sigma2_over_n: d.sigma2_over_n,
        j,
        m_prime,
        seeds,
        single_source,
        negative_component: d.negative,
        predictions,
    })
}

/// Ground truth for a synthetic family with trained networks.
pub fn ground_truth<F: Real>(
    spec: &SyntheticSpec,
    net_config: &NetConfig,
    n: usize,
    x0: ArrayView1<F>,
    j: usize,
    m_prime: usize,
    seed: u64,
) -> Result<GroundTruth<F>> {
    let trainer = NetTrainer::new(net_config.clone());
    ground_truth_with(
        |s| sample::<F>(spec, n, s),
        &trainer,
        x0,
        j,
        m_prime,
        seed,
        SingleModelSource::default(),
    )
}
