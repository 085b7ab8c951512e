use epivar::data::{sample, Dataset, Family, Provenance, SyntheticSpec};
use epivar::net::{ensemble_predictions, init_params, train, NetConfig, NetTrainer};
use epivar::rng::rng_from_seed;
use epivar::Error;
use ndarray::{array, Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

fn mem() -> Provenance {
    Provenance::Derived { note: "test".into() }
}

fn sin_sum(n: usize, seed: u64) -> Dataset<f64> {
    sample(&SyntheticSpec::new(Family::SinSum, 2), n, seed).unwrap()
}

#[test]
fn init_weights_are_standard_normal() {
    let net = init_params::<f64>(&NetConfig::new(25).with_widths(vec![4096]), 8).unwrap();
    let w: Vec<f64> = net.weights[0].iter().copied().take(100_000).collect();
    assert_eq!(w.len(), 100_000);
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    assert!(mean.abs() <= 4.0 / n.sqrt(), "mean {mean}");
    assert!((var - 1.0).abs() <= 0.05, "variance {var}");
}

#[test]
fn init_output_is_centered() {
    let cfg = NetConfig::new(2).with_widths(vec![256, 256]);
    let outs: Vec<f64> = (0..200)
        .map(|s| init_params::<f64>(&cfg, s).unwrap().forward(&[0.3, -0.7]).unwrap())
        .collect();
    let mean = outs.iter().sum::<f64>() / 200.0;
    let sd = (outs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / 199.0).sqrt();
    assert!(mean.abs() <= 3.0 * sd / 200f64.sqrt(), "mean {mean}, sd {sd}");
}

#[test]
fn forward_identities() {
    let net = init_params::<f64>(&NetConfig::new(3).with_widths(vec![32, 16]), 2).unwrap();
    assert_eq!(net.forward(&[0.0, 0.0, 0.0]).unwrap(), 0.0);
    let x = [0.4, -1.1, 0.25];
    let x2: Vec<f64> = x.iter().map(|v| 2.0 * v).collect();
    let (a, b) = (net.forward(&x).unwrap(), net.forward(&x2).unwrap());
    assert!((b - 2.0 * a).abs() <= 1e-14 * a.abs().max(1.0));
    assert!(matches!(net.forward(&[1.0]), Err(Error::DimensionMismatch { .. })));
}

#[test]
fn forward_batch_matches_rowwise() {
    let net = init_params::<f64>(&NetConfig::new(2).with_widths(vec![50]), 3).unwrap();
    let inputs = array![[0.1, 0.2], [-0.3, 0.9], [1.5, -2.0]];
    let batch = net.forward_batch(inputs.view()).unwrap();
    for (i, row) in inputs.outer_iter().enumerate() {
        assert!((batch[i] - net.forward(&row.to_vec()).unwrap()).abs() < 1e-13);
    }
}

#[test]
fn hand_computed_single_unit() {
    let mut net = init_params::<f64>(&NetConfig::new(1).with_widths(vec![1]), 0).unwrap();
    net.weights[0] = array![[1.0]];
    net.weights[1] = array![[1.0]];
    assert!((net.forward(&[1.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
    assert_eq!(net.forward(&[-1.0]).unwrap(), 0.0);
}

#[test]
fn zero_epochs_returns_initialization() {
    let data = sin_sum(20, 1);
    let cfg = NetConfig::new(2).with_widths(vec![64]).with_max_epochs(0);
    let net = train(&cfg, &data, 5).unwrap();
    assert_eq!(net.weights, net.init_weights);
    assert_eq!(net.weights, init_params::<f64>(&cfg, 5).unwrap().weights);
    assert!(net.train_loss_trace.is_empty());
}

#[test]
fn single_point_is_interpolated() {
    let data = Dataset::new(array![[1.0]], array![1.0], mem()).unwrap();
    let cfg = NetConfig::new(1).with_widths(vec![64]).with_lambda(0.0);
    let net = train(&cfg, &data, 9).unwrap();
    let last = *net.train_loss_trace.last().unwrap();
    assert!(last <= 1e-6, "final loss {last}");
}

/// Central difference of the loss along every coordinate.
fn numeric_gradient(net: &epivar::net::TrainedNet<f64>, data: &Dataset<f64>, lambda: f64, h: f64) -> Vec<Array2<f64>> {
    let mut out = Vec::new();
    for l in 0..net.weights.len() {
        let mut g = Array2::zeros(net.weights[l].raw_dim());
        for idx in 0..net.weights[l].len() {
            let mut plus = net.clone();
            let mut minus = net.clone();
            plus.weights[l].as_slice_mut().unwrap()[idx] += h;
            minus.weights[l].as_slice_mut().unwrap()[idx] -= h;
            g.as_slice_mut().unwrap()[idx] =
                (plus.loss(data, lambda).unwrap() - minus.loss(data, lambda).unwrap()) / (2.0 * h);
        }
        out.push(g);
    }
    out
}

#[test]
fn loss_gradient_matches_finite_differences() {
    let mut rng = rng_from_seed(77);
    for case in 0..10u64 {
        let d = rng.random_range(1..4);
        let widths: Vec<usize> = (0..rng.random_range(1..3)).map(|_| rng.random_range(3..9)).collect();
        let cfg = NetConfig::new(d).with_widths(widths);
        let n = rng.random_range(3..12);
        let inputs = Array2::from_shape_simple_fn((n, d), || Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let labels = Array1::from_shape_simple_fn(n, || Distribution::<f64>::sample(&StandardNormal, &mut rng));
        let data = Dataset::new(inputs, labels, mem()).unwrap();
        let mut net = init_params::<f64>(&cfg, case).unwrap();
        // Move away from θ₀ so the anchor term contributes.
        for w in &mut net.weights {
            w.mapv_inplace(|v| v + 0.1 * Distribution::<f64>::sample(&StandardNormal, &mut rng));
        }
        let lambda = 0.05;
        let (_, grads) = net.loss_and_gradient(&data, lambda).unwrap();
        let fd = numeric_gradient(&net, &data, lambda, 1e-5);
        for (l, (g, f)) in grads.iter().zip(&fd).enumerate() {
            for (a, b) in g.iter().zip(f.iter()) {
                let err = (a - b).abs() / a.abs().max(1e-3);
                assert!(err <= 1e-5, "case {case} layer {l}: {a} vs {b}");
            }
        }
    }
}

#[test]
fn loss_gradient_large_batch_matches_small_batches() {
    // More rows than one gradient chunk: the summed gradient must equal
    // the n-weighted combination of per-half gradients.
    let data = sin_sum(150, 4);
    let net = init_params::<f64>(&NetConfig::new(2).with_widths(vec![40]), 1).unwrap();
    let (loss, full) = net.loss_and_gradient(&data, 0.0).unwrap();
    let first = data.subset(&(0..75).collect::<Vec<_>>()).unwrap();
    let second = data.subset(&(75..150).collect::<Vec<_>>()).unwrap();
    let (l1, g1) = net.loss_and_gradient(&first, 0.0).unwrap();
    let (l2, g2) = net.loss_and_gradient(&second, 0.0).unwrap();
    assert!((loss - 0.5 * (l1 + l2)).abs() < 1e-14);
    for ((g, a), b) in full.iter().zip(&g1).zip(&g2) {
        let combined = (a + b) * 0.5;
        assert!((g - &combined).iter().all(|e| e.abs() < 1e-13));
    }
}

#[test]
fn loss_is_monotone_for_small_steps() {
    let data = sin_sum(200, 12);
    let cfg = NetConfig::new(2).with_learning_rate(1e-2).with_max_epochs(500);
    let monotone = (0..20u64)
        .filter(|&s| {
            let net = train(&cfg, &data, s).unwrap();
            net.train_loss_trace.windows(2).skip(1).all(|w| w[1] <= w[0])
        })
        .count();
    assert!(monotone >= 19, "{monotone}/20 monotone runs");
}

#[test]
fn regularizer_anchors_the_weights() {
    let data = sin_sum(50, 6);
    let base = NetConfig::new(2).with_widths(vec![256]).with_learning_rate(0.5);
    for seed in 0..10u64 {
        let mut dist = Vec::new();
        for lambda in [1e-2, 2e-2] {
            let cfg = base.clone().with_lambda(lambda);
            let net = train(&cfg, &data, seed).unwrap();
            let r = net.distance_from_init();
            // Descent keeps R(θ̂) ≤ R(θ₀), which bounds λ‖θ̂ − θ₀‖².
            let r0 = init_params::<f64>(&cfg, seed).unwrap().loss(&data, lambda).unwrap();
            assert!(lambda * r * r <= r0, "seed {seed}, lambda {lambda}");
            dist.push(r);
        }
        assert!(dist[1] <= dist[0], "seed {seed}: {dist:?}");
    }
}

#[test]
fn training_is_deterministic() {
    let data = sin_sum(40, 2);
    let cfg = NetConfig::new(2).with_widths(vec![128]).with_learning_rate(0.5);
    let a = train(&cfg, &data, 3).unwrap();
    let b = train(&cfg, &data, 3).unwrap();
    assert_eq!(a, b);
    let c = train(&cfg, &data, 4).unwrap();
    assert_ne!(a.weights, c.weights);
}

#[test]
fn ensemble_is_independent_of_thread_count() {
    let data = sin_sum(40, 2);
    let trainer = NetTrainer::new(NetConfig::new(2).with_widths(vec![64]).with_learning_rate(0.5));
    let x0 = array![0.1, 0.1];
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let four = rayon::ThreadPoolBuilder::new().num_threads(4).build().unwrap();
    let a = one.install(|| ensemble_predictions(&trainer, &data, 6, x0.view(), 1).unwrap());
    let b = four.install(|| ensemble_predictions(&trainer, &data, 6, x0.view(), 1).unwrap());
    assert_eq!(a, b);
}

#[test]
fn divergence_is_reported() {
    let data = sin_sum(40, 2);
    let cfg = NetConfig::new(2).with_widths(vec![64]).with_learning_rate(1e5);
    let r = train(&cfg, &data, 0);
    assert!(matches!(r, Err(Error::DivergedTraining { .. })), "{:?}", r.map(|n| n.train_loss_trace.len()));
}

#[test]
fn invalid_configs_are_rejected() {
    let data = sin_sum(10, 2);
    assert!(train(&NetConfig::new(2).with_widths(vec![]), &data, 0).is_err());
    assert!(train(&NetConfig::new(2).with_widths(vec![4, 0]), &data, 0).is_err());
    assert!(train(&NetConfig::new(2).with_learning_rate(0.0), &data, 0).is_err());
    assert!(matches!(
        train(&NetConfig::new(3), &data, 0),
        Err(Error::DimensionMismatch { .. })
    ));
}
