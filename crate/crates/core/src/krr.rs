//! NTK kernel ridge regression: the initialization-averaged network
//! predictor
//!
//! ```text
//! h̄(x₀) = h₀(x₀) + K(x₀, X)ᵀ (K + λ n I)⁻¹ (y − h₀(X))
//! ```
//!
//! where `h₀` is the mean output of an untrained network.

use ndarray::{Array1, ArrayView1};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::linalg::Cholesky;
use crate::net::{init_params, NetConfig, TrainedNet};
use crate::ntk::{ntk_gram, ntk_vector, population_ntk, GramMatrix, KernelConfig};
use crate::rng::{derive_seed, Stream};
use crate::scalar::{from_usize, Real};

/// Jitter ladder, relative to the mean Gram diagonal, tried after the
/// configured jitter fails.
const JITTER_LADDER: [f64; 3] = [1e-10, 1e-9, 1e-8];
/// Largest condition estimate accepted for an unregularized fit.
const MAX_UNREGULARIZED_CONDITION: f64 = 1e12;

/// How the untrained-network mean `h₀` is obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "kebab-case")]
pub enum H0Mode {
    /// `E[h(θ₀; x)] = 0` exactly, since the output layer is zero-mean and
    /// independent of the hidden layers.
    AnalyticZero,
    /// Average of `m0` freshly initialized networks.
    EmpiricalAverage { net: NetConfig, m0: usize, seed: u64 },
}

/// Evaluator for `h₀`.
#[derive(Debug, Clone)]
pub enum H0Baseline<F> {
    Zero,
    Empirical(Vec<TrainedNet<F>>),
}

impl<F: Real> H0Baseline<F> {
    pub fn from_mode(mode: &H0Mode) -> Result<Self> {
        match mode {
            H0Mode::AnalyticZero => Ok(H0Baseline::Zero),
            H0Mode::EmpiricalAverage { net, m0, seed } => {
                if *m0 == 0 {
                    return Err(Error::InvalidInput("m0 must be >= 1".into()));
                }
                let nets = (0..*m0)
                    .into_par_iter()
                    .map(|i| init_params(net, derive_seed(*seed, Stream::Baseline, i as u64)))
                    .collect::<Result<Vec<_>>>()?;
                Ok(H0Baseline::Empirical(nets))
            }
        }
    }

    pub fn eval(&self, x: &[F]) -> Result<F> {
        match self {
            H0Baseline::Zero => Ok(F::zero()),
            H0Baseline::Empirical(nets) => {
                let mut s = F::zero();
                for net in nets {
                    s += net.forward(x)?;
                }
                Ok(s / from_usize(nets.len()))
            }
        }
    }
}

/// `h₀` at each of `points`.
pub fn h0_baseline<F: Real>(
    mode: &H0Mode,
    points: &[Vec<F>],
) -> Result<Vec<F>> {
    let base = H0Baseline::from_mode(mode)?;
    points.iter().map(|p| base.eval(p)).collect()
}

#[derive(Debug, Clone)]
pub struct KrrModel<F> {
    pub gram: GramMatrix<F>,
    pub kernel: KernelConfig,
    pub lambda: F,
    /// `(K + λnI)⁻¹ (y − h₀(X))`.
    pub alpha: Array1<F>,
    pub h0_mode: H0Mode,
    pub h0_values: Array1<F>,
    pub labels: Array1<F>,
    /// Diagonal shift that was actually needed to factorize.
    pub jitter_used: F,
    factor: Cholesky<F>,
    h0: H0Baseline<F>,
    fitted: Array1<F>,
}

/// Fits the kernel ridge predictor.
pub fn fit<F: Real>(
    data: &Dataset<F>,
    lambda: F,
    config: &KernelConfig,
    h0_mode: &H0Mode,
) -> Result<KrrModel<F>> {
    config.validate()?;
    if !(lambda >= F::zero()) || !lambda.is_finite() {
        return Err(Error::InvalidInput(format!("lambda must be >= 0, got {lambda}")));
    }
    if let H0Mode::EmpiricalAverage { net, .. } = h0_mode {
        check_dim(net.input_dim, data.dim())?;
        if net.depth() != config.depth {
            return Err(Error::InvalidInput(format!(
                "baseline network depth {} differs from kernel depth {}",
                net.depth(),
                config.depth
            )));
        }
    }
    let n = data.len();
    let gram = ntk_gram(data.inputs.view(), config)?;
    let h0 = H0Baseline::from_mode(h0_mode)?;
    let h0_values: Array1<F> = data
        .inputs
        .outer_iter()
        .map(|r| h0.eval(&r.to_vec()))
        .collect::<Result<_>>()?;
    let target = &data.labels - &h0_values;
    let ridge = lambda * from_usize::<F>(n);

    let mean_diag = gram.mean_diagonal();
    let mut system = gram.entries.clone();
    system.diag_mut().mapv_inplace(|v| v + ridge);

    let mut shifts = vec![F::lit(config.jitter)];
    // Without a ridge term the jitter would mask a singular Gram matrix.
    if lambda > F::zero() {
        shifts.extend(JITTER_LADDER.iter().map(|&r| F::lit(r) * mean_diag));
    }
    let (factor, jitter_used) = shifts
        .into_iter()
        .find_map(|s| Cholesky::factor_shifted(system.view(), s).map(|c| (c, s)))
        .ok_or_else(|| {
            Error::IllConditioned(format!(
                "factorization failed after jitter up to {:e} x mean diagonal",
                JITTER_LADDER[JITTER_LADDER.len() - 1]
            ))
        })?;
    if lambda == F::zero() {
        let cond = factor.condition_estimate();
        if !(cond.as_f64() < MAX_UNREGULARIZED_CONDITION) {
            return Err(Error::IllConditioned(format!(
                "lambda = 0 needs a well-conditioned Gram matrix; condition estimate {:e}", cond.as_f64()
            )));
        }
    }

    let mut alpha = factor.solve(target.view());
    if jitter_used > F::zero() {
        // Iterative refinement against the unshifted system.
        for _ in 0..3 {
            let resid = &target - &system.dot(&alpha);
            alpha += &factor.solve(resid.view());
        }
    }
    let fitted = &h0_values + &gram.entries.dot(&alpha);
    Ok(KrrModel {
        gram,
        kernel: config.clone(),
        lambda,
        alpha,
        h0_mode: h0_mode.clone(),
        h0_values,
        labels: data.labels.clone(),
        jitter_used,
        factor,
        h0,
        fitted,
    })
}

impl<F: Real> KrrModel<F> {
    pub fn len(&self) -> usize {
        self.alpha.len()
    }

    pub fn is_empty(&self) -> bool {
        self.alpha.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.gram.inputs.ncols()
    }

    /// `h̄(x₀)`.
    pub fn predict(&self, x0: ArrayView1<F>) -> Result<F> {
        let k = ntk_vector(self.gram.inputs.view(), x0, &self.kernel)?;
        Ok(self.h0(x0)? + k.dot(&self.alpha))
    }

    /// `h₀(x)`.
    pub fn h0(&self, x: ArrayView1<F>) -> Result<F> {
        check_dim(self.dim(), x.len())?;
        self.h0.eval(&x.to_vec())
    }

    /// `h̄` at the training inputs.
    pub fn fitted(&self) -> &Array1<F> {
        &self.fitted
    }

    /// `K(a, b)` under the model's kernel.
    pub fn kernel(&self, a: ArrayView1<F>, b: ArrayView1<F>) -> Result<F> {
        population_ntk(&a.to_vec(), &b.to_vec(), &self.kernel)
    }

    /// `K(x₀, X)`.
    pub fn kernel_vector(&self, x0: ArrayView1<F>) -> Result<Array1<F>> {
        ntk_vector(self.gram.inputs.view(), x0, &self.kernel)
    }

    /// `λ n`.
    pub fn ridge(&self) -> F {
        self.lambda * from_usize::<F>(self.len())
    }

    /// Solves `(K + λnI) x = b` with the cached factorization.
    pub fn solve(&self, b: ArrayView1<F>) -> Array1<F> {
        self.factor.solve(b)
    }

    /// `‖(K + λnI) α − (y − h₀)‖ / ‖y − h₀‖` (0 when the target vanishes).
    pub fn reconstruction_residual(&self) -> F {
        let target = &self.labels - &self.h0_values;
        let mut lhs = self.gram.entries.dot(&self.alpha);
        lhs.scaled_add(self.ridge(), &self.alpha);
        let num = (&lhs - &target).mapv(|v| v * v).sum().sqrt();
        let den = target.mapv(|v| v * v).sum().sqrt();
        if den == F::zero() {
            num
        } else {
            num / den
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{sample, Family, Provenance, SyntheticSpec};
    use ndarray::array;
    use std::f64::consts::PI;

    fn one_point(lambda: f64) -> KrrModel<f64> {
        let data = Dataset::new(
            array![[1.0, 0.0]],
            array![1.0],
            Provenance::Derived { note: "n=1".into() },
        )
        .unwrap();
        fit(&data, lambda, &KernelConfig::new(1), &H0Mode::AnalyticZero).unwrap()
    }

    #[test]
    fn scalar_ridge_solution() {
        let m = one_point(1.0);
        assert!((m.alpha[0] - 1.0 / 3.0).abs() < 1e-15);
        let p = m.predict(array![1.0, 0.0].view()).unwrap();
        assert!((p - 2.0 / 3.0).abs() < 1e-15);
        assert!((p - 0.666667).abs() < 1e-6);
    }

    #[test]
    fn vanishing_lambda_interpolates() {
        let m = one_point(0.0);
        assert!((m.predict(array![1.0, 0.0].view()).unwrap() - 1.0).abs() < 1e-15);
        let m = one_point(1e-12);
        assert!((m.predict(array![1.0, 0.0].view()).unwrap() - 1.0).abs() < 1e-11);
    }

    #[test]
    fn two_orthonormal_points_match_direct_solve() {
        let data = Dataset::new(
            array![[1.0, 0.0], [0.0, 1.0]],
            array![1.0, 0.0],
            Provenance::Derived { note: "2x2".into() },
        )
        .unwrap();
        let m = fit(&data, 0.5, &KernelConfig::new(1), &H0Mode::AnalyticZero).unwrap();
        // [[3, 1/π], [1/π, 3]] α = (1, 0), by Cramer's rule.
        let k = 1.0 / PI;
        let det = 9.0 - k * k;
        assert!((m.alpha[0] - 3.0 / det).abs() < 1e-14);
        assert!((m.alpha[1] + k / det).abs() < 1e-14);
    }

    #[test]
    fn labels_equal_to_baseline_give_zero_weights() {
        let spec = SyntheticSpec::new(Family::SinSum, 2);
        let mut data: Dataset<f64> = sample(&spec, 12, 1).unwrap();
        data.labels.fill(0.0);
        let m = fit(&data, 1e-3, &KernelConfig::new(1), &H0Mode::AnalyticZero).unwrap();
        assert!(m.alpha.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn shrinkage_monotone_in_lambda() {
        let mut last = f64::INFINITY;
        for lambda in [1e-4, 1e-2, 0.1, 1.0, 10.0] {
            let m = one_point(lambda);
            let p = m.predict(array![1.0, 0.0].view()).unwrap();
            assert!((p - 2.0 / (2.0 + lambda)).abs() < 1e-15);
            assert!(p < last);
            last = p;
        }
    }

    #[test]
    fn reconstruction_invariant() {
        let spec = SyntheticSpec::new(Family::SinSum, 3);
        let data: Dataset<f64> = sample(&spec, 60, 4).unwrap();
        let m = fit(&data, 1e-3, &KernelConfig::new(2), &H0Mode::AnalyticZero).unwrap();
        assert!(m.reconstruction_residual() <= 1e-8);
        let scale = data.labels.iter().fold(0.0f64, |a, &b| a.max(b.abs()));
        for (i, row) in data.inputs.outer_iter().enumerate() {
            let p = m.predict(row).unwrap();
            let direct = m.h0_values[i] + m.gram.entries.row(i).dot(&m.alpha);
            assert!((p - direct).abs() <= 1e-10 * scale);
            assert!((p - m.fitted()[i]).abs() <= 1e-10 * scale);
        }
    }

    #[test]
    fn duplicate_points_without_ridge_need_jitter_or_fail() {
        let data = Dataset::new(
            array![[1.0, 0.0], [1.0, 0.0]],
            array![1.0, 1.0],
            Provenance::Derived { note: "dup".into() },
        )
        .unwrap();
        let res = fit(&data, 0.0, &KernelConfig::new(1), &H0Mode::AnalyticZero);
        assert!(matches!(res, Err(Error::IllConditioned(_))));
    }

    #[test]
    fn negative_lambda_rejected() {
        let spec = SyntheticSpec::new(Family::SinSum, 2);
        let data: Dataset<f64> = sample(&spec, 5, 0).unwrap();
        assert!(fit(&data, -1.0, &KernelConfig::new(1), &H0Mode::AnalyticZero).is_err());
    }

    #[test]
    fn analytic_baseline_is_zero() {
        let pts = vec![vec![0.3, 0.1], vec![-1.0, 2.0]];
        let v: Vec<f64> = h0_baseline(&H0Mode::AnalyticZero, &pts).unwrap();
        assert_eq!(v, vec![0.0, 0.0]);
    }

    #[test]
    fn single_member_baseline_is_one_fresh_network() {
        let net = NetConfig::new(2).with_widths(vec![16]);
        let mode = H0Mode::EmpiricalAverage {
            net: net.clone(),
            m0: 1,
            seed: 3,
        };
        let pts = vec![vec![0.3, 0.1]];
        let v: Vec<f64> = h0_baseline(&mode, &pts).unwrap();
        let fresh: TrainedNet<f64> = init_params(&net, derive_seed(3, Stream::Baseline, 0)).unwrap();
        assert_eq!(v[0], fresh.forward(&pts[0]).unwrap());
    }

    #[test]
    fn empirical_baseline_fit_uses_baseline() {
        let spec = SyntheticSpec::new(Family::SinSum, 2);
        let data: Dataset<f64> = sample(&spec, 10, 0).unwrap();
        let mode = H0Mode::EmpiricalAverage {
            net: NetConfig::new(2).with_widths(vec![32]),
            m0: 3,
            seed: 1,
        };
        let m = fit(&data, 1e-2, &KernelConfig::new(1), &mode).unwrap();
        assert!(m.h0_values.iter().any(|&v| v != 0.0));
        assert!(m.reconstruction_residual() <= 1e-8);
        let bad = H0Mode::EmpiricalAverage {
            net: NetConfig::new(2).with_widths(vec![8, 8]),
            m0: 1,
            seed: 0,
        };
        assert!(fit(&data, 1e-2, &KernelConfig::new(1), &bad).is_err());
    }
}
