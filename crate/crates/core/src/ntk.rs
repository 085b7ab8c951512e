//! Neural tangent kernel of bias-free fully-connected ReLU networks.
//!
//! The infinite-width kernel is evaluated layer by layer with the
//! arc-cosine closed forms for the ReLU Gaussian expectations. With
//! `a = Σ(x,x)`, `b = Σ(x',x')`, `c = Σ(x,x')` and `cos θ = c / √(ab)`:
//!
//! ```text
//! Σ⁺(x,x')  = √(ab)/π · (sin θ + (π − θ) cos θ)
//! Σ'⁺(x,x') = (π − θ)/π
//! ```
//!
//! The diagonal is preserved by every layer (`2 E[σ(u)²] = Var u`), and the
//! kernel accumulates as `K ← K · Σ' + Σ`, starting from `K = xᵀx'`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::net::TrainedNet;
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelConfig {
    /// Number of hidden layers `L`.
    pub depth: usize,
    #[serde(default)]
    pub activation: Activation,
    /// Added to the diagonal of the regularized Gram system before it is
    /// factorized.
    #[serde(default)]
    pub jitter: f64,
}

impl KernelConfig {
    pub fn new(depth: usize) -> Self {
        Self {
            depth,
            activation: Activation::Relu,
            jitter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.depth == 0 {
            return Err(Error::InvalidInput("kernel depth must be >= 1".into()));
        }
        if !(self.jitter >= 0.0 && self.jitter.is_finite()) {
            return Err(Error::InvalidInput(format!(
                "jitter must be finite and non-negative, got {}",
                self.jitter
            )));
        }
        Ok(())
    }
}

impl Default for KernelConfig {
    fn default() -> Self {
        Self::new(1)
    }
}

/// A kernel value together with a flag telling whether it was defined by
/// continuity at a zero-norm input.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue<F> {
    pub value: F,
    pub zero_input: bool,
}

/// Population NTK `K(x, x')`.
pub fn population_ntk<F: Real>(x: &[F], x_prime: &[F], config: &KernelConfig) -> Result<F> {
    population_ntk_detail(x, x_prime, config).map(|k| k.value)
}

/// Population NTK with the zero-input flag.
pub fn population_ntk_detail<F: Real>(
    x: &[F],
    x_prime: &[F],
    config: &KernelConfig,
) -> Result<KernelValue<F>> {
    config.validate()?;
    check_dim(x.len(), x_prime.len())?;
    if x.is_empty() {
        return Err(Error::InvalidInput("inputs must have dimension >= 1".into()));
    }
    Ok(ntk_unchecked(x, x_prime, config.depth))
}

fn dot<F: Real>(x: &[F], y: &[F]) -> F {
    x.iter().zip(y).fold(F::zero(), |acc, (&a, &b)| acc + a * b)
}

fn ntk_unchecked<F: Real>(x: &[F], x_prime: &[F], depth: usize) -> KernelValue<F> {
    let a = dot(x, x);
    if x == x_prime {
        return KernelValue {
            value: F::from_usize(depth + 1).unwrap() * a,
            zero_input: a == F::zero(),
        };
    }
    let b = dot(x_prime, x_prime);
    if a == F::zero() || b == F::zero() {
        return KernelValue {
            value: F::zero(),
            zero_input: true,
        };
    }
    let c = dot(x, x_prime);
    KernelValue {
        value: ntk_from_moments(a, b, c, input_angle(x, x_prime, b, c), depth),
        zero_input: false,
    }
}

/// Angle between `x` and `x'` as `atan2(‖x⊥‖ ‖x'‖, ⟨x, x'⟩)`, where `x⊥` is
/// the part of `x` orthogonal to `x'`. Unlike `acos` of the cosine this stays
/// accurate for (nearly) parallel inputs. The arguments are put in a fixed
/// order first so that `K(x, x') == K(x', x)` bit for bit.
fn input_angle<F: Real>(x: &[F], x_prime: &[F], b: F, c: F) -> F {
    let swap = x
        .iter()
        .zip(x_prime)
        .find(|(p, q)| p != q)
        .is_some_and(|(p, q)| p > q);
    let (u, v, vv) = if swap { (x_prime, x, dot(x, x)) } else { (x, x_prime, b) };
    let t = c / vv;
    let perp = u
        .iter()
        .zip(v)
        .fold(F::zero(), |acc, (&p, &q)| {
            let r = p - t * q;
            acc + r * r
        })
        .sqrt();
    (perp * vv.sqrt()).atan2(c)
}

/// Runs the layer recursion from the input second moments and the input
/// angle. Each layer keeps `Σ(x, x) = ‖x‖²`, so only the normalized
/// correlation `Σ(x, x')/√(ab)` changes.
fn ntk_from_moments<F: Real>(a: F, b: F, c: F, theta0: F, depth: usize) -> F {
    let pi = F::lit(std::f64::consts::PI);
    let norm = (a * b).sqrt();
    let mut k = c;
    let mut theta = theta0;
    for _ in 0..depth {
        let cos = theta.cos();
        let rho = (theta.sin() + (pi - theta) * cos) / pi;
        let sigma = norm * rho;
        let sigma_dot = (pi - theta) / pi;
        k = k * sigma_dot + sigma;
        theta = rho.max(-F::one()).min(F::one()).acos();
    }
    k
}

/// NTK Gram matrix over a set of inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix<F> {
    pub entries: Array2<F>,
    pub inputs: Array2<F>,
}

impl<F: Real> GramMatrix<F> {
    pub fn len(&self) -> usize {
        self.entries.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn mean_diagonal(&self) -> F {
        let n = self.len();
        self.entries.diag().sum() / F::from_usize(n.max(1)).unwrap()
    }

    pub fn max_diagonal(&self) -> F {
        self.entries
            .diag()
            .iter()
            .fold(F::zero(), |m, &v| m.max(v))
    }
}

/// Assembles the Gram matrix `K(xᵢ, xⱼ)` over the rows of `inputs`.
///
/// Only the upper triangle is evaluated; the lower triangle is mirrored.
pub fn ntk_gram<F: Real>(inputs: ArrayView2<F>, config: &KernelConfig) -> Result<GramMatrix<F>> {
    config.validate()?;
    let (n, d) = inputs.dim();
    if n == 0 || d == 0 {
        return Err(Error::InvalidInput(format!(
            "gram inputs must be non-empty, got {n}x{d}"
        )));
    }
    let rows: Vec<Vec<F>> = inputs.outer_iter().map(|r| r.to_vec()).collect();
    let upper: Vec<Vec<F>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (i..n)
                .map(|j| ntk_unchecked(&rows[i], &rows[j], config.depth).value)
                .collect()
        })
        .collect();
    let mut entries = Array2::zeros((n, n));
    for (i, row) in upper.into_iter().enumerate() {
        for (off, v) in row.into_iter().enumerate() {
            entries[[i, i + off]] = v;
            entries[[i + off, i]] = v;
        }
    }
    Ok(GramMatrix {
        entries,
        inputs: inputs.to_owned(),
    })
}

/// Kernel column `K(x₀, xᵢ)` for every row `xᵢ` of `inputs`.
pub fn ntk_vector<F: Real>(
    inputs: ArrayView2<F>,
    x0: ArrayView1<F>,
    config: &KernelConfig,
) -> Result<Array1<F>> {
    config.validate()?;
    check_dim(inputs.ncols(), x0.len())?;
    let x0 = x0.to_vec();
    Ok(inputs
        .axis_iter(Axis(0))
        .map(|row| ntk_unchecked(&row.to_vec(), &x0, config.depth).value)
        .collect())
}

/// Empirical NTK `⟨∇θ h(x), ∇θ h(x')⟩` of a concrete network.
pub fn empirical_ntk<F: Real>(net: &TrainedNet<F>, x: &[F], x_prime: &[F]) -> Result<F> {
    let gx = net.param_gradient(x)?;
    let gy = if x == x_prime {
        gx.clone()
    } else {
        net.param_gradient(x_prime)?
    };
    Ok(gx
        .iter()
        .zip(&gy)
        .map(|(a, b)| (a * b).sum())
        .fold(F::zero(), |s, v| s + v))
}

/// Empirical NTK Gram matrix of a network over the rows of `inputs`.
pub fn empirical_gram<F: Real>(net: &TrainedNet<F>, inputs: ArrayView2<F>) -> Result<Array2<F>> {
    let grads = inputs
        .outer_iter()
        .map(|r| net.param_gradient(&r.to_vec()))
        .collect::<Result<Vec<_>>>()?;
    let n = grads.len();
    let mut out = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let v = grads[i]
                .iter()
                .zip(&grads[j])
                .map(|(a, b)| (a * b).sum())
                .fold(F::zero(), |s, v| s + v);
            out[[i, j]] = v;
            out[[j, i]] = v;
        }
    }
    Ok(out)
}
