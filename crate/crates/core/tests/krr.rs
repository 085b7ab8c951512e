use epivar::data::{sample, Dataset, Family, Provenance, SyntheticSpec};
use epivar::krr::{fit, h0_baseline, H0Mode, KrrModel};
use epivar::net::{init_params, NetConfig};
use epivar::ntk::{population_ntk, KernelConfig};
use epivar::rng::{derive_seed, Stream};
use epivar::Error;
use nalgebra::{DMatrix, DVector};
use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use std::f64::consts::PI;

fn mem() -> Provenance {
    Provenance::Derived { note: "test".into() }
}

fn one_point(lambda: f64) -> KrrModel<f64> {
    let data = Dataset::new(array![[1.0, 0.0]], array![1.0], mem()).unwrap();
    fit(&data, lambda, &KernelConfig::new(1), &H0Mode::AnalyticZero).unwrap()
}

/// `(K + λnI)⁻¹ y` through nalgebra's LU, independent of the crate's solver.
fn reference_alpha(inputs: &Array2<f64>, y: &Array1<f64>, lambda: f64, depth: usize) -> DVector<f64> {
    let n = inputs.nrows();
    let cfg = KernelConfig::new(depth);
    let rows: Vec<Vec<f64>> = inputs.outer_iter().map(|r| r.to_vec()).collect();
    let a = DMatrix::from_fn(n, n, |i, j| {
        population_ntk(&rows[i], &rows[j], &cfg).unwrap() + if i == j { lambda * n as f64 } else { 0.0 }
    });
    a.lu().solve(&DVector::from_iterator(n, y.iter().copied())).unwrap()
}

#[test]
fn single_point_examples() {
    let m = one_point(1.0);
    assert!((m.alpha[0] - 1.0 / 3.0).abs() < 1e-15);
    assert!((m.predict(array![1.0, 0.0].view()).unwrap() - 2.0 / 3.0).abs() < 1e-15);

    let exact = one_point(0.0);
    assert!((exact.predict(array![1.0, 0.0].view()).unwrap() - 1.0).abs() < 1e-15);
}

#[test]
fn orthonormal_pair_matches_direct_solve() {
    let inputs = array![[1.0, 0.0], [0.0, 1.0]];
    let y = array![1.0, 0.0];
    let data = Dataset::new(inputs.clone(), y.clone(), mem()).unwrap();
    let m = fit(&data, 0.5, &KernelConfig::new(1), &H0Mode::AnalyticZero).unwrap();
    // [[3, 1/π], [1/π, 3]] α = (1, 0) by Cramer's rule.
    let det = 9.0 - 1.0 / (PI * PI);
    let want = [3.0 / det, -1.0 / PI / det];
    for i in 0..2 {
        assert!((m.alpha[i] - want[i]).abs() < 1e-15);
    }
    let reference = reference_alpha(&inputs, &y, 0.5, 1);
    assert!((m.alpha[1] - reference[1]).abs() < 1e-15);
}

#[test]
fn labels_equal_to_baseline_give_zero_weights() {
    let data = sample::<f64>(&SyntheticSpec::new(Family::SinSum, 3), 15, 2).unwrap();
    let zero = Dataset::new(data.inputs.clone(), Array1::zeros(15), mem()).unwrap();
    let m = fit(&zero, 1e-3, &KernelConfig::new(2), &H0Mode::AnalyticZero).unwrap();
    assert!(m.alpha.iter().all(|&a| a == 0.0));

    let net = NetConfig::new(3).with_widths(vec![64, 64]);
    let mode = H0Mode::EmpiricalAverage { net, m0: 5, seed: 3 };
    let points: Vec<Vec<f64>> = data.inputs.outer_iter().map(|r| r.to_vec()).collect();
    let h0 = Array1::from(h0_baseline::<f64>(&mode, &points).unwrap());
    let on_baseline = Dataset::new(data.inputs.clone(), h0, mem()).unwrap();
    let m = fit(&on_baseline, 1e-3, &KernelConfig::new(2), &mode).unwrap();
    assert!(m.alpha.iter().all(|&a| a == 0.0));
}

#[test]
fn single_point_shrinkage_and_monotonicity() {
    let cfg = KernelConfig::new(1);
    let x = array![[0.6, -0.3, 0.2]];
    let k11 = population_ntk(&[0.6, -0.3, 0.2], &[0.6, -0.3, 0.2], &cfg).unwrap();
    let y = 0.8f64;
    let data = Dataset::new(x.clone(), array![y], mem()).unwrap();
    let mut previous = f64::INFINITY;
    for lambda in [1e-4, 1e-2, 0.1, 1.0, 10.0] {
        let m = fit(&data, lambda, &cfg, &H0Mode::AnalyticZero).unwrap();
        let p = m.predict(x.row(0)).unwrap();
        let want = k11 * y / (k11 + lambda);
        assert!((p - want).abs() <= 1e-15 * want, "lambda {lambda}");
        assert!(p < previous);
        previous = p;
    }
}

#[test]
fn zero_lambda_needs_a_well_conditioned_gram() {
    let data = Dataset::new(array![[1.0, 0.0], [1.0, 0.0]], array![1.0, 2.0], mem()).unwrap();
    assert!(matches!(
        fit(&data, 0.0, &KernelConfig::new(1), &H0Mode::AnalyticZero),
        Err(Error::IllConditioned(_))
    ));
    assert!(fit(&data, 1e-3, &KernelConfig::new(1), &H0Mode::AnalyticZero).is_ok());
    assert!(fit(&data, -1.0, &KernelConfig::new(1), &H0Mode::AnalyticZero).is_err());
}

#[test]
fn baseline_modes() {
    let points = vec![vec![0.1, 0.1], vec![1.0, -2.0], vec![0.0, 0.0]];
    assert_eq!(h0_baseline::<f64>(&H0Mode::AnalyticZero, &points).unwrap(), vec![0.0; 3]);

    let net = NetConfig::new(2).with_widths(vec![1024]);
    let single = H0Mode::EmpiricalAverage { net: net.clone(), m0: 1, seed: 17 };
    let fresh = init_params::<f64>(&net, derive_seed(17, Stream::Baseline, 0)).unwrap();
    let got = h0_baseline::<f64>(&single, &points).unwrap();
    for (p, g) in points.iter().zip(&got) {
        assert_eq!(*g, fresh.forward(p).unwrap());
    }

    let mode = H0Mode::EmpiricalAverage { net: net.clone(), m0: 500, seed: 5 };
    let means = h0_baseline::<f64>(&mode, &points[..2]).unwrap();
    for (p, mean) in points[..2].iter().zip(&means) {
        let outs: Vec<f64> = (0..500)
            .map(|i| {
                init_params::<f64>(&net, derive_seed(5, Stream::Baseline, i))
                    .unwrap()
                    .forward(p)
                    .unwrap()
            })
            .collect();
        let avg = outs.iter().sum::<f64>() / 500.0;
        let sd = (outs.iter().map(|v| (v - avg).powi(2)).sum::<f64>() / 499.0).sqrt();
        assert!((avg - mean).abs() < 1e-12);
        assert!(mean.abs() <= 4.0 * sd / 500f64.sqrt(), "{mean} vs sd {sd}");
    }

    let bad = H0Mode::EmpiricalAverage { net, m0: 0, seed: 5 };
    assert!(h0_baseline::<f64>(&bad, &points).is_err());
}

#[test]
fn baseline_depth_must_match_kernel() {
    let data = sample::<f64>(&SyntheticSpec::new(Family::SinSum, 2), 10, 1).unwrap();
    let mode = H0Mode::EmpiricalAverage {
        net: NetConfig::new(2).with_widths(vec![8, 8]),
        m0: 2,
        seed: 0,
    };
    assert!(fit(&data, 1e-3, &KernelConfig::new(1), &mode).is_err());
}

#[test]
fn prediction_dimension_is_checked() {
    let m = one_point(1.0);
    assert!(matches!(
        m.predict(array![1.0].view()),
        Err(Error::DimensionMismatch { .. })
    ));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fit_agrees_with_reference_solver(
        seed in any::<u64>(),
        n in 2usize..40,
        d in 1usize..5,
        depth in 1usize..4,
        log_lambda in -6.0..0.0f64,
    ) {
        let family = [Family::SinSum, Family::ExpQuad, Family::CosCubic][(seed % 3) as usize];
        let data = sample::<f64>(&SyntheticSpec::new(family, d), n, seed).unwrap();
        let lambda = 10f64.powf(log_lambda);
        let cfg = KernelConfig::new(depth);
        let m = fit(&data, lambda, &cfg, &H0Mode::AnalyticZero).unwrap();
        prop_assert!(m.reconstruction_residual() <= 1e-8);

        let reference = reference_alpha(&data.inputs, &data.labels, lambda, depth);
        let scale = reference.amax().max(1e-12);
        for i in 0..n {
            prop_assert!((m.alpha[i] - reference[i]).abs() <= 1e-6 * scale, "alpha {}: {} vs {}", i, m.alpha[i], reference[i]);
        }

        let scale = data.labels.iter().fold(1e-12f64, |s, v| s.max(v.abs()));
        let k_alpha = m.gram.entries.dot(&m.alpha);
        for i in 0..n {
            let p = m.predict(data.inputs.row(i)).unwrap();
            prop_assert!((p - (m.h0_values[i] + k_alpha[i])).abs() <= 1e-10 * scale);
        }
    }
}
