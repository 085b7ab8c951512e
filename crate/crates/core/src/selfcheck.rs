//! Invariant checks runnable from the command line.
//!
//! Each check draws its own random cases from a seed and compares library
//! output against a property or an independent computation.

use ndarray::{Array1, Array2};
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::Serialize;

use crate::data::{sample, Dataset, Family, SyntheticSpec};
use crate::estimators::{batch_variance, influence};
use crate::krr::{fit, H0Mode};
use crate::net::{init_params, NetConfig};
use crate::ntk::{empirical_ntk, ntk_gram, population_ntk, KernelConfig};
use crate::oracle::decompose;
use crate::rng::{derive_seed, rng_from_seed, Rng, Stream};

#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, passed: bool, detail: String) -> Check {
    Check { name, passed, detail }
}

fn normal_vec(rng: &mut Rng, d: usize) -> Vec<f64> {
    (0..d).map(|_| StandardNormal.sample(rng)).collect()
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1e-300)
}

/// Runs every check; `quick` shrinks the Monte Carlo and replication counts.
pub fn run_all(seed: u64, quick: bool) -> Vec<Check> {
    vec![
        kernel_identities(seed),
        kernel_psd(seed),
        orthogonal_value(seed, if quick { 200_000 } else { 2_000_000 }),
        influence_vs_refit(seed),
        chi2_coverage(seed, if quick { 400 } else { 1000 }),
        decomposition_algebra(seed),
        empirical_ntk_gradients(seed),
    ]
}

fn kernel_identities(seed: u64) -> Check {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 1));
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let d = rng.random_range(1..6);
        let depth = rng.random_range(1..5);
        let cfg = KernelConfig::new(depth);
        let x = normal_vec(&mut rng, d);
        let y = normal_vec(&mut rng, d);
        let a: f64 = rng.random_range(0.1..3.0);
        let b: f64 = rng.random_range(0.1..3.0);
        let xx: f64 = x.iter().map(|v| v * v).sum();
        let k = |p: &[f64], q: &[f64]| population_ntk::<f64>(p, q, &cfg).unwrap();
        let kxy = k(&x, &y);
        let ax: Vec<f64> = x.iter().map(|v| a * v).collect();
        let by: Vec<f64> = y.iter().map(|v| b * v).collect();
        // Off-diagonal errors are measured on the Cauchy-Schwarz scale.
        let scale = (k(&x, &x) * k(&y, &y)).sqrt();
        worst = worst
            .max(rel(k(&x, &x), (depth as f64 + 1.0) * xx))
            .max((kxy - k(&y, &x)).abs() / scale)
            .max((k(&ax, &by) - a * b * kxy).abs() / (a * b * scale));
        let cs = kxy * kxy - k(&x, &x) * k(&y, &y);
        if cs > 1e-9 * k(&x, &x) * k(&y, &y) {
            worst = f64::INFINITY;
        }
    }
    check(
        "kernel diagonal, symmetry, homogeneity, Cauchy-Schwarz",
        worst < 1e-10,
        format!("max relative deviation {worst:.2e}"),
    )
}

fn kernel_psd(seed: u64) -> Check {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 2));
    let mut ok = true;
    for depth in 1..4 {
        let x = Array2::from_shape_fn((25, 3), |_| StandardNormal.sample(&mut rng));
        let g = ntk_gram::<f64>(x.view(), &KernelConfig::new(depth)).unwrap();
        // A Cholesky factorization with a tiny relative shift exists iff the
        // matrix is positive semidefinite up to that shift.
        let shift = 1e-10 * g.mean_diagonal();
        ok &= crate::linalg::Cholesky::factor_shifted(g.entries.view(), shift).is_some();
    }
    check("Gram matrices are positive semidefinite", ok, "depths 1-3, 25 points".into())
}

fn orthogonal_value(seed: u64, draws: usize) -> Check {
    // One hidden layer, x = e₁, x' = e₂: the NTK is
    // 2 E[σ(w₁)σ(w₂)] + 2 ⟨x, x'⟩ E[1{w₁>0} 1{w₂>0}] with w ~ N(0, I).
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 3));
    let (mut sum, mut sq) = (0.0, 0.0);
    for _ in 0..draws {
        let w1: f64 = StandardNormal.sample(&mut rng);
        let w2: f64 = StandardNormal.sample(&mut rng);
        let v = 2.0 * w1.max(0.0) * w2.max(0.0);
        sum += v;
        sq += v * v;
    }
    let n = draws as f64;
    let mean = sum / n;
    let se = ((sq / n - mean * mean) / n).sqrt();
    let exact = population_ntk::<f64>(&[1.0, 0.0], &[0.0, 1.0], &KernelConfig::new(1)).unwrap();
    let z = (exact - mean) / se;
    check(
        "orthogonal inputs give 1/pi",
        z.abs() <= 3.0 && (exact - std::f64::consts::FRAC_1_PI).abs() < 1e-14,
        format!("kernel {exact:.8}, Monte Carlo {mean:.6} +/- {se:.1e} ({draws} draws)"),
    )
}

/// Solves `a x = b` by Gaussian elimination with partial pivoting.
fn gauss_solve(mut a: Array2<f64>, mut b: Array1<f64>) -> Option<Array1<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| a[[i, col]].abs().total_cmp(&a[[j, col]].abs()))?;
        if a[[piv, col]] == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap([piv, k], [col, k]);
            }
            b.swap(piv, col);
        }
        for r in col + 1..n {
            let f = a[[r, col]] / a[[col, col]];
            for k in col..n {
                a[[r, k]] -= f * a[[col, k]];
            }
            b[r] -= f * b[col];
        }
    }
    let mut x = Array1::zeros(n);
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[[r, k]] * x[k]).sum();
        x[r] = (b[r] - s) / a[[r, r]];
    }
    Some(x)
}

/// Kernel ridge prediction at `x0` after putting mass `eps` on `z` and
/// `(1 − eps)/n` on each training point. The minimizer lies in the span of
/// the kernel sections at the `n + 1` points and solves `(W K + λ I) α = W y`.
fn mixture_refit(data: &Dataset<f64>, z: (&[f64], f64), x0: &[f64], lambda: f64, cfg: &KernelConfig, eps: f64) -> f64 {
    let n = data.len();
    let mut pts: Vec<Vec<f64>> = (0..n).map(|i| data.input(i).to_vec()).collect();
    pts.push(z.0.to_vec());
    let mut y: Vec<f64> = data.labels.to_vec();
    y.push(z.1);
    let w: Vec<f64> = (0..=n).map(|i| if i < n { (1.0 - eps) / n as f64 } else { eps }).collect();
    let k = |p: &[f64], q: &[f64]| population_ntk::<f64>(p, q, cfg).unwrap();
    let a = Array2::from_shape_fn((n + 1, n + 1), |(i, j)| w[i] * k(&pts[i], &pts[j]) + if i == j { lambda } else { 0.0 });
    let rhs = Array1::from_shape_fn(n + 1, |i| w[i] * y[i]);
    let alpha = gauss_solve(a, rhs).expect("regularized system is nonsingular");
    pts.iter().zip(alpha.iter()).map(|(p, a)| a * k(p, x0)).sum()
}

fn influence_vs_refit(seed: u64) -> Check {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 4));
    let cfg = KernelConfig::new(1);
    let eps = 1e-5;
    let mut worst = 0.0f64;
    for case in 0..20u64 {
        let n = if case % 2 == 0 { 5 } else { 20 };
        let data = sample::<f64>(&SyntheticSpec::new(Family::SinSum, 2), n, rng.random()).unwrap();
        let lambda = 10f64.powf(rng.random_range(-2.0..0.0));
        let model = fit(&data, lambda, &cfg, &H0Mode::AnalyticZero).unwrap();
        let zx: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..0.2)).collect();
        let zy: f64 = rng.random_range(-0.5..0.8);
        let x0: Vec<f64> = (0..2).map(|_| rng.random_range(0.0..0.2)).collect();
        let analytic = influence(
            &model,
            (Array1::from(zx.clone()).view(), zy),
            Array1::from(x0.clone()).view(),
        )
        .unwrap();
        let base = mixture_refit(&data, (&zx, zy), &x0, lambda, &cfg, 0.0);
        let bumped = mixture_refit(&data, (&zx, zy), &x0, lambda, &cfg, eps);
        let fd = (bumped - base) / eps;
        worst = worst.max(rel(analytic, fd));
    }
    check(
        "influence function matches mixture refit",
        worst <= 1e-3,
        format!("max relative error {worst:.2e} over 20 cases"),
    )
}

fn chi2_coverage(seed: u64, reps: usize) -> Check {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 5));
    let nu2 = 2.5f64;
    let mut covered = 0;
    for _ in 0..reps {
        let psi: Vec<f64> = (0..5usize)
            .map(|_| 1.0 + nu2.sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        let ci = batch_variance(&psi, 0.95).unwrap().ci.unwrap();
        // The pivot targets ν²/K, the variance of the batch mean.
        let target = nu2 / 5.0;
        if ci.lower <= target && target <= ci.upper {
            covered += 1;
        }
    }
    let rate = covered as f64 / reps as f64;
    check(
        "batching interval coverage",
        (rate - 0.95).abs() <= 0.02,
        format!("{covered}/{reps} = {rate:.3}"),
    )
}

fn decomposition_algebra(seed: u64) -> Check {
    let mut rng = rng_from_seed(derive_seed(seed, Stream::Cell, 6));
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let vs: f64 = rng.random_range(0.0..1.0);
        let ve: f64 = rng.random_range(0.0..1.0);
        let m = rng.random_range(2..50usize);
        let d = decompose(vs, ve, m).unwrap();
        worst = worst
            .max((d.tau2 + d.sigma2_over_n - vs).abs())
            .max((d.sigma2_over_n + d.tau2 / m as f64 - ve).abs());
    }
    check(
        "decomposition identities",
        worst <= 1e-12,
        format!("max residual {worst:.2e}"),
    )
}

fn empirical_ntk_gradients(seed: u64) -> Check {
    // ⟨∇h(x), ∇h(x')⟩ against central differences of the network output.
    let cfg = NetConfig::new(3).with_widths(vec![7, 5]);
    let net = init_params::<f64>(&cfg, derive_seed(seed, Stream::Cell, 7)).unwrap();
    let x = [0.3, -0.4, 0.9];
    let xp = [-0.2, 0.5, 0.1];
    let h = 1e-6;
    let fd_grad = |p: &[f64]| -> Vec<f64> {
        let mut g = Vec::new();
        for l in 0..net.weights.len() {
            for idx in 0..net.weights[l].len() {
                let mut plus = net.clone();
                let mut minus = net.clone();
                plus.weights[l].as_slice_mut().unwrap()[idx] += h;
                minus.weights[l].as_slice_mut().unwrap()[idx] -= h;
                g.push((plus.forward(p).unwrap() - minus.forward(p).unwrap()) / (2.0 * h));
            }
        }
        g
    };
    let ga = fd_grad(&x);
    let gb = fd_grad(&xp);
    let fd: f64 = ga.iter().zip(&gb).map(|(a, b)| a * b).sum();
    let exact = empirical_ntk(&net, &x, &xp).unwrap();
    let err = rel(exact, fd);
    check(
        "empirical NTK matches finite differences",
        err < 1e-6,
        format!("relative error {err:.2e}"),
    )
}
