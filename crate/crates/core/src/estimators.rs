//! Epistemic variance estimators.
//!
//! * **IF**: data variance `σ²/n` from the influence function of the kernel
//!   ridge predictor, `(1/n²) Σ IF²(zᵢ)`.
//! * **EV**: procedural variance `τ²` from the sample variance of `m`
//!   independently initialized networks on the same data.
//! * **BA**: ensemble variance `σ²/n + τ²/m'` from one network per batch of
//!   `m'` equal data batches, with a `χ²_{m'−1}` pivot.

use std::fmt;

use ndarray::{Array1, ArrayView1};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::chi2::ChiSquared;
use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::krr::KrrModel;
use crate::net::{NetConfig, NetTrainer, Trainer};
use crate::rng::{derive_seed, rng_from_seed, Stream};
use crate::scalar::{from_usize, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Method {
    IF,
    EV,
    BA,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::IF => "IF",
            Method::EV => "EV",
            Method::BA => "BA",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConfidenceInterval<F> {
    pub lower: F,
    pub upper: F,
    pub level: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EstimateMeta {
    pub n: Option<usize>,
    /// `m` for EV, `m' = K` for BA.
    pub replications: Option<usize>,
    pub lambda: Option<f64>,
    pub seeds: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate<F> {
    pub value: F,
    pub ci: Option<ConfidenceInterval<F>>,
    pub method: Method,
    pub meta: EstimateMeta,
}

/// `[v / (χ²_{dof,1−α/2}/dof), v / (χ²_{dof,α/2}/dof)]`.
pub fn chi2_variance_interval<F: Real>(
    point: F,
    dof: usize,
    level: f64,
) -> Result<ConfidenceInterval<F>> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidInput(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    let dist = ChiSquared::new(dof as u32)?;
    let alpha = 1.0 - level;
    let q_hi = dist.quantile(1.0 - alpha / 2.0)?;
    let q_lo = dist.quantile(alpha / 2.0)?;
    let dof = dof as f64;
    Ok(ConfidenceInterval {
        lower: point / F::lit(q_hi / dof),
        upper: point / F::lit(q_lo / dof),
        level,
    })
}

/// Two-pass sample variance, shifted by the first value so that equal
/// inputs give exactly zero.
pub(crate) fn sample_variance<F: Real>(values: &[F]) -> F {
    let m = from_usize::<F>(values.len());
    let shift = values[0];
    let mean = values.iter().map(|&v| v - shift).sum::<F>() / m;
    values
        .iter()
        .map(|&v| (v - shift - mean) * (v - shift - mean))
        .sum::<F>()
        / (m - F::one())
}

/// Influence of the point `z = (z_x, z_y)` on `h̄(x₀)`:
///
/// ```text
/// IF(z) = K(x₀, X)ᵀ (K + λnI)⁻¹ M_z(X) − M_z(x₀)
/// M_z(x) = h̄(x) − h₀(x) − (1/λ) (z_y − h̄(z_x)) K(z_x, x)
/// ```
pub fn influence<F: Real>(
    model: &KrrModel<F>,
    z: (ArrayView1<F>, F),
    x0: ArrayView1<F>,
) -> Result<F> {
    if !(model.lambda > F::zero()) {
        return Err(Error::UnsupportedLambda(model.lambda.as_f64()));
    }
    check_dim(model.dim(), z.0.len())?;
    check_dim(model.dim(), x0.len())?;
    let (zx, zy) = z;
    let lambda = model.lambda;
    let coef = (zy - model.predict(zx)?) / lambda;
    let kz = model.kernel_vector(zx)?;
    let m_train: Array1<F> = model.fitted() - &model.h0_values - &kz.mapv(|k| coef * k);
    let m_x0 = model.predict(x0)? - model.h0(x0)? - coef * model.kernel(zx, x0)?;
    let k0 = model.kernel_vector(x0)?;
    Ok(k0.dot(&model.solve(m_train.view())) - m_x0)
}

/// Influence values `IF(zᵢ)` at every training point.
///
/// Uses one solve `w = (K + λnI)⁻¹ K(x₀, X)`; then, with `r = y − h̄(X)`,
///
/// ```text
/// IF(zᵢ) = wᵀ(h̄ − h₀)(X) − (h̄ − h₀)(x₀) − (rᵢ/λ) ((K w)ᵢ − K(x₀, xᵢ))
/// ```
pub fn training_influences<F: Real>(model: &KrrModel<F>, x0: ArrayView1<F>) -> Result<Array1<F>> {
    if !(model.lambda > F::zero()) {
        return Err(Error::UnsupportedLambda(model.lambda.as_f64()));
    }
    check_dim(model.dim(), x0.len())?;
    let k0 = model.kernel_vector(x0)?;
    let w = model.solve(k0.view());
    let centered = model.fitted() - &model.h0_values;
    let shared = w.dot(&centered) - (model.predict(x0)? - model.h0(x0)?);
    let kw = model.gram.entries.dot(&w);
    let lambda = model.lambda;
    Ok((0..model.len())
        .map(|i| {
            let r = model.labels[i] - model.fitted()[i];
            shared - r / lambda * (kw[i] - k0[i])
        })
        .collect())
}

/// `(1/n²) Σ IFᵢ²`.
pub fn plugin_variance<F: Real>(influences: &[F]) -> F {
    let n = from_usize::<F>(influences.len());
    influences.iter().map(|&v| v * v).sum::<F>() / (n * n)
}

/// Influence-function estimate of the data variance `Var(h̄(π̂; x₀))`.
pub fn data_variance_if<F: Real>(model: &KrrModel<F>, x0: ArrayView1<F>) -> Result<VarianceEstimate<F>> {
    if model.len() < 2 {
        return Err(Error::InvalidInput(
            "influence-function variance needs n >= 2".into(),
        ));
    }
    let inf = training_influences(model, x0)?;
    Ok(VarianceEstimate {
        value: plugin_variance(inf.as_slice().expect("contiguous")),
        ci: None,
        method: Method::IF,
        meta: EstimateMeta {
            n: Some(model.len()),
            replications: None,
            lambda: Some(model.lambda.as_f64()),
            seeds: Vec::new(),
        },
    })
}

/// Ensemble variance of `m` predictions with its chi-squared interval.
pub fn ensemble_variance<F: Real>(predictions: &[F], ci_level: f64) -> Result<VarianceEstimate<F>> {
    let m = predictions.len();
    if m < 2 {
        return Err(Error::InsufficientReplications {
            required: 2,
            actual: m,
        });
    }
    let value = sample_variance(predictions);
    let ci = chi2_variance_interval(value, m - 1, ci_level)?;
    Ok(VarianceEstimate {
        value,
        ci: Some(ci),
        method: Method::EV,
        meta: EstimateMeta {
            replications: Some(m),
            ..Default::default()
        },
    })
}

/// Batching estimate `S²/m'` from the batch predictions `ψ₁ … ψ_{m'}`.
pub fn batch_variance<F: Real>(batch_predictions: &[F], ci_level: f64) -> Result<VarianceEstimate<F>> {
    let k = batch_predictions.len();
    if k < 2 {
        return Err(Error::InsufficientReplications {
            required: 2,
            actual: k,
        });
    }
    let value = sample_variance(batch_predictions) / from_usize(k);
    let ci = chi2_variance_interval(value, k - 1, ci_level)?;
    Ok(VarianceEstimate {
        value,
        ci: Some(ci),
        method: Method::BA,
        meta: EstimateMeta {
            replications: Some(k),
            ..Default::default()
        },
    })
}

/// Seeded shuffle of `0..n`, split into `k` contiguous batches of `⌊n/k⌋`;
/// the remainder is dropped.
pub fn split_batches(n: usize, k: usize, seed: u64) -> Result<Vec<Vec<usize>>> {
    if k < 2 {
        return Err(Error::InvalidInput("batching needs k >= 2".into()));
    }
    if n < 2 * k {
        return Err(Error::BatchTooSmall { n, k });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_from_seed(derive_seed(seed, Stream::Shuffle, 0)));
    let size = n / k;
    Ok(idx.chunks_exact(size).take(k).map(<[usize]>::to_vec).collect())
}

/// Batching with an arbitrary trainer. Batch `i` is trained under
/// `derive_seed(seed, Batch, i)`.
pub fn batching_with<F: Real, T: Trainer<F>>(
    trainer: &T,
    data: &Dataset<F>,
    k: usize,
    x0: ArrayView1<F>,
    ci_level: f64,
    seed: u64,
) -> Result<VarianceEstimate<F>> {
    check_dim(data.dim(), x0.len())?;
    let batches = split_batches(data.len(), k, seed)?;
    let psi = batches
        .par_iter()
        .enumerate()
        .map(|(i, idx)| {
            let batch = data.subset(idx)?;
            trainer
                .fit_predict(&batch, derive_seed(seed, Stream::Batch, i as u64), x0)
                .map_err(|e| e.during(format!("batch {i}")))
        })
        .collect::<Result<Vec<F>>>()?;
    let mut est = batch_variance(&psi, ci_level)?;
    est.meta.n = Some(data.len());
    est.meta.seeds = vec![seed];
    Ok(est)
}

/// Batching estimate with one freshly trained network per batch.
pub fn batching<F: Real>(
    data: &Dataset<F>,
    k: usize,
    net_config: &NetConfig,
    x0: ArrayView1<F>,
    ci_level: f64,
    seed: u64,
) -> Result<VarianceEstimate<F>> {
    let mut est = batching_with(&NetTrainer::new(net_config.clone()), data, k, x0, ci_level, seed)?;
    est.meta.lambda = Some(net_config.reg_lambda);
    Ok(est)
}
