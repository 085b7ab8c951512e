//! Bias-free fully-connected ReLU network in the NTK parameterization,
//! trained by full-batch gradient descent on the anchored ridge loss
//!
//! ```text
//! R(θ) = (1/n) Σ (h_θ(xᵢ) − yᵢ)² + λ ‖θ − θ₀‖²
//! ```
//!
//! Layer `l` computes `f⁽ˡ⁾ = W⁽ˡ⁾ g⁽ˡ⁻¹⁾` and `g⁽ˡ⁾ = √(2/d_l) σ(f⁽ˡ⁾)` with
//! `g⁽⁰⁾ = x`; the output is `W⁽ᴸ⁺¹⁾ g⁽ᴸ⁾`. All weights start i.i.d. N(0, 1),
//! and the initialization is the only source of randomness in training.

use ndarray::linalg::{general_mat_mul, general_mat_vec_mul};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{check_dim, Error, Result};
use crate::rng::{derive_seed, rng_from_seed, Stream};
use crate::scalar::{from_usize, Real};

/// Loss above this multiple of the initial loss counts as divergence.
const DIVERGENCE_FACTOR: f64 = 1e6;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetConfig {
    pub input_dim: usize,
    pub hidden_widths: Vec<usize>,
    pub reg_lambda: f64,
    /// Gradient-descent step. Steps above `1 / (μ_max/n + λ)`, where `μ_max`
    /// is the largest NTK Gram eigenvalue, make the iteration unstable.
    pub learning_rate: f64,
    pub max_epochs: usize,
    /// Training stops once the absolute change in loss drops below this.
    pub loss_tol: f64,
}

impl NetConfig {
    /// One hidden layer of width 1024, `λ = 1e-3`, step `1e-2`, 5000 epochs.
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden_widths: vec![1024],
            reg_lambda: 1e-3,
            learning_rate: 1e-2,
            max_epochs: 5000,
            loss_tol: 1e-8,
        }
    }

    pub fn with_widths(mut self, widths: Vec<usize>) -> Self {
        self.hidden_widths = widths;
        self
    }

    pub fn with_learning_rate(mut self, lr: f64) -> Self {
        self.learning_rate = lr;
        self
    }

    pub fn with_lambda(mut self, lambda: f64) -> Self {
        self.reg_lambda = lambda;
        self
    }

    pub fn with_max_epochs(mut self, epochs: usize) -> Self {
        self.max_epochs = epochs;
        self
    }

    pub fn with_input_dim(mut self, d: usize) -> Self {
        self.input_dim = d;
        self
    }

    /// Number of hidden layers `L`.
    pub fn depth(&self) -> usize {
        self.hidden_widths.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidInput("input_dim must be >= 1".into()));
        }
        if self.hidden_widths.is_empty() || self.hidden_widths.contains(&0) {
            return Err(Error::InvalidInput(
                "hidden_widths must be non-empty with every width >= 1".into(),
            ));
        }
        if !(self.reg_lambda >= 0.0 && self.reg_lambda.is_finite()) {
            return Err(Error::InvalidInput("reg_lambda must be finite and >= 0".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::InvalidInput("learning_rate must be positive".into()));
        }
        if !(self.loss_tol >= 0.0) {
            return Err(Error::InvalidInput("loss_tol must be >= 0".into()));
        }
        Ok(())
    }

    fn layer_shapes(&self) -> Vec<(usize, usize)> {
        let mut prev = self.input_dim;
        let mut shapes = Vec::with_capacity(self.depth() + 1);
        for &w in &self.hidden_widths {
            shapes.push((w, prev));
            prev = w;
        }
        shapes.push((1, prev));
        shapes
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainedNet<F> {
    /// `W⁽¹⁾ … W⁽ᴸ⁺¹⁾`, the last one of shape `1 × d_L`.
    pub weights: Vec<Array2<F>>,
    /// `θ₀`.
    pub init_weights: Vec<Array2<F>>,
    pub seed: u64,
    /// Loss evaluated before each gradient step.
    pub train_loss_trace: Vec<F>,
    scales: Vec<F>,
}

/// Draws `θ₀` for `config` from the seeded generator, layer by layer in
/// row-major order.
pub fn init_params<F: Real>(config: &NetConfig, seed: u64) -> Result<TrainedNet<F>> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let weights: Vec<Array2<F>> = config
        .layer_shapes()
        .into_iter()
        .map(|shape| {
            Array2::from_shape_simple_fn(shape, || {
                let z: f64 = StandardNormal.sample(&mut rng);
                F::lit(z)
            })
        })
        .collect();
    let scales = config
        .hidden_widths
        .iter()
        .map(|&w| F::lit((2.0 / w as f64).sqrt()))
        .collect();
    Ok(TrainedNet {
        init_weights: weights.clone(),
        weights,
        seed,
        train_loss_trace: Vec::new(),
        scales,
    })
}

const GRAD_CHUNK_ROWS: usize = 64;

#[inline]
fn relu<F: Real>(v: F) -> F {
    if v > F::zero() {
        v
    } else {
        F::zero()
    }
}

/// Forward activations kept for back-propagation.
struct Tape<F> {
    /// `g⁽⁰⁾ … g⁽ᴸ⁾`, each `n × d_l`.
    acts: Vec<Array2<F>>,
    /// `f⁽¹⁾ … f⁽ᴸ⁾`.
    pre: Vec<Array2<F>>,
    out: Array1<F>,
}

/// Buffers for one row chunk of the training loss, reused every epoch.
struct Workspace<F> {
    /// `f⁽ˡ⁾`, `chunk × d_l`.
    pre: Vec<Array2<F>>,
    /// `g⁽ˡ⁾` for `l ≥ 1`.
    acts: Vec<Array2<F>>,
    /// Back-propagated `∂R/∂f⁽ˡ⁾`.
    delta: Vec<Array2<F>>,
    /// Outputs, then output cotangents.
    dout: Array1<F>,
    grads: Vec<Array2<F>>,
}

impl<F: Real> Workspace<F> {
    fn new(net: &TrainedNet<F>, n: usize) -> Self {
        let rows = n.min(GRAD_CHUNK_ROWS);
        let hidden = || {
            net.weights[..net.depth()]
                .iter()
                .map(|w| Array2::zeros((rows, w.nrows())))
                .collect::<Vec<_>>()
        };
        Self {
            pre: hidden(),
            acts: hidden(),
            delta: hidden(),
            dout: Array1::zeros(rows),
            grads: net.weights.iter().map(|w| Array2::zeros(w.dim())).collect(),
        }
    }
}

impl<F: Real> TrainedNet<F> {
    pub fn input_dim(&self) -> usize {
        self.weights[0].ncols()
    }

    pub fn depth(&self) -> usize {
        self.weights.len() - 1
    }

    pub fn num_params(&self) -> usize {
        self.weights.iter().map(|w| w.len()).sum()
    }

    /// `‖θ − θ₀‖`.
    pub fn distance_from_init(&self) -> F {
        self.weights
            .iter()
            .zip(&self.init_weights)
            .map(|(w, w0)| (w - w0).mapv(|v| v * v).sum())
            .fold(F::zero(), |a, b| a + b)
            .sqrt()
    }

    /// Network output `h_θ(x)`.
    pub fn forward(&self, x: &[F]) -> Result<F> {
        check_dim(self.input_dim(), x.len())?;
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        Ok(self.tape(xs).out[0])
    }

    /// Outputs for every row of `inputs`.
    pub fn forward_batch(&self, inputs: ArrayView2<F>) -> Result<Array1<F>> {
        check_dim(self.input_dim(), inputs.ncols())?;
        Ok(self.tape(inputs).out)
    }

    fn tape(&self, inputs: ArrayView2<F>) -> Tape<F> {
        let depth = self.depth();
        let mut acts = Vec::with_capacity(depth + 1);
        let mut pre = Vec::with_capacity(depth);
        acts.push(inputs.to_owned());
        for l in 0..depth {
            let f = acts[l].dot(&self.weights[l].t());
            let c = self.scales[l];
            let g = f.mapv(|v| c * relu(v));
            pre.push(f);
            acts.push(g);
        }
        let out = acts[depth].dot(&self.weights[depth].row(0));
        Tape { acts, pre, out }
    }

    /// Back-propagates output cotangents `dout` (one per row) into weight
    /// gradients.
    fn backprop(&self, tape: &Tape<F>, dout: ArrayView1<F>) -> Vec<Array2<F>> {
        let depth = self.depth();
        let mut grads: Vec<Array2<F>> = Vec::with_capacity(depth + 1);
        let g_last = tape.acts[depth].t().dot(&dout).insert_axis(Axis(0));
        let w_last = self.weights[depth].row(0);
        let mut delta = &dout.insert_axis(Axis(1)) * &w_last.insert_axis(Axis(0));
        for l in (0..depth).rev() {
            let c = self.scales[l];
            Zip::from(&mut delta).and(&tape.pre[l]).for_each(|dv, &p| {
                *dv = if p > F::zero() { *dv * c } else { F::zero() };
            });
            grads.push(delta.t().dot(&tape.acts[l]));
            if l > 0 {
                delta = delta.dot(&self.weights[l]);
            }
        }
        grads.reverse();
        grads.push(g_last);
        grads
    }

    /// Parameter gradient `∇θ h_θ(x)`, one array per layer.
    pub fn param_gradient(&self, x: &[F]) -> Result<Vec<Array2<F>>> {
        check_dim(self.input_dim(), x.len())?;
        let xs = ArrayView2::from_shape((1, x.len()), x).expect("contiguous slice");
        let tape = self.tape(xs);
        let one = Array1::from_elem(1, F::one());
        Ok(self.backprop(&tape, one.view()))
    }

    /// Regularized loss and its gradient with respect to every layer.
    pub fn loss_and_gradient(&self, data: &Dataset<F>, reg_lambda: F) -> Result<(F, Vec<Array2<F>>)> {
        check_dim(self.input_dim(), data.dim())?;
        let mut ws = Workspace::new(self, data.len());
        let loss = self.loss_and_gradient_into(data, reg_lambda, &mut ws);
        Ok((loss, ws.grads))
    }

    /// Same as [`loss_and_gradient`](Self::loss_and_gradient), writing the
    /// gradient into `ws.grads` without allocating.
    fn loss_and_gradient_into(&self, data: &Dataset<F>, reg_lambda: F, ws: &mut Workspace<F>) -> F {
        let depth = self.depth();
        let n = from_usize::<F>(data.len());
        let two = F::lit(2.0);
        let mut data_loss = F::zero();
        for g in ws.grads.iter_mut() {
            g.fill(F::zero());
        }
        let w_last = self.weights[depth].row(0);
        // Row chunks keep the chunk × width activations cache-resident.
        for (xs, ys) in data
            .inputs
            .axis_chunks_iter(Axis(0), GRAD_CHUNK_ROWS)
            .zip(data.labels.axis_chunks_iter(Axis(0), GRAD_CHUNK_ROWS))
        {
            let rows = xs.nrows();
            for l in 0..depth {
                let (done, rest) = ws.acts.split_at_mut(l);
                let input = if l == 0 { xs } else { done[l - 1].slice(s![..rows, ..]) };
                let mut pre = ws.pre[l].slice_mut(s![..rows, ..]);
                general_mat_mul(F::one(), &input, &self.weights[l].t(), F::zero(), &mut pre);
                let c = self.scales[l];
                Zip::from(rest[0].slice_mut(s![..rows, ..]))
                    .and(&pre)
                    .for_each(|g, &p| *g = c * relu(p));
            }
            let last = ws.acts[depth - 1].slice(s![..rows, ..]);
            let mut dout = ws.dout.slice_mut(s![..rows]);
            general_mat_vec_mul(F::one(), &last, &w_last, F::zero(), &mut dout);
            Zip::from(&mut dout).and(&ys).for_each(|o, &y| {
                let r = *o - y;
                data_loss += r * r / n;
                *o = two * r / n;
            });
            let dout = ws.dout.slice(s![..rows]);
            general_mat_vec_mul(
                F::one(),
                &last.t(),
                &dout,
                F::one(),
                &mut ws.grads[depth].row_mut(0),
            );
            for l in (0..depth).rev() {
                let c = self.scales[l];
                let pre = ws.pre[l].slice(s![..rows, ..]);
                if l == depth - 1 {
                    let mut delta = ws.delta[l].slice_mut(s![..rows, ..]);
                    Zip::from(delta.rows_mut())
                        .and(pre.rows())
                        .and(&dout)
                        .for_each(|drow, prow, &d| {
                            Zip::from(drow).and(prow).and(&w_last).for_each(|dv, &p, &w| {
                                *dv = if p > F::zero() { c * d * w } else { F::zero() };
                            });
                        });
                } else {
                    let (lower, upper) = ws.delta.split_at_mut(l + 1);
                    let mut delta = lower[l].slice_mut(s![..rows, ..]);
                    general_mat_mul(
                        F::one(),
                        &upper[0].slice(s![..rows, ..]),
                        &self.weights[l + 1],
                        F::zero(),
                        &mut delta,
                    );
                    Zip::from(&mut delta).and(&pre).for_each(|dv, &p| {
                        *dv = if p > F::zero() { c * *dv } else { F::zero() };
                    });
                }
                let input = if l == 0 { xs } else { ws.acts[l - 1].slice(s![..rows, ..]) };
                general_mat_mul(
                    F::one(),
                    &ws.delta[l].slice(s![..rows, ..]).t(),
                    &input,
                    F::one(),
                    &mut ws.grads[l],
                );
            }
        }
        let mut reg = F::zero();
        for ((g, w), w0) in ws.grads.iter_mut().zip(&self.weights).zip(&self.init_weights) {
            Zip::from(g).and(w).and(w0).for_each(|g, &w, &w0| {
                let diff = w - w0;
                reg += diff * diff;
                *g += two * reg_lambda * diff;
            });
        }
        data_loss + reg_lambda * reg
    }

    /// Regularized training loss at the current parameters.
    pub fn loss(&self, data: &Dataset<F>, reg_lambda: F) -> Result<F> {
        Ok(self.loss_and_gradient(data, reg_lambda)?.0)
    }
}

/// Trains a network from `init_params(config, seed)` by full-batch gradient
/// descent.
pub fn train<F: Real>(config: &NetConfig, data: &Dataset<F>, seed: u64) -> Result<TrainedNet<F>> {
    config.validate()?;
    check_dim(config.input_dim, data.dim())?;
    if data.labels.iter().any(|y| !y.is_finite()) {
        return Err(Error::InvalidInput("labels must be finite".into()));
    }
    let mut net = init_params::<F>(config, seed)?;
    let lambda = F::lit(config.reg_lambda);
    let lr = F::lit(config.learning_rate);
    let tol = F::lit(config.loss_tol);
    let mut initial: Option<F> = None;
    let mut ws = Workspace::new(&net, data.len());
    for epoch in 0..config.max_epochs {
        let loss = net.loss_and_gradient_into(data, lambda, &mut ws);
        let limit = initial.map(|l0| l0 * F::lit(DIVERGENCE_FACTOR));
        if !loss.is_finite() || limit.is_some_and(|lim| loss > lim) {
            return Err(Error::DivergedTraining {
                epoch,
                loss: loss.as_f64(),
            });
        }
        let previous = net.train_loss_trace.last().copied();
        net.train_loss_trace.push(loss);
        initial.get_or_insert(loss);
        if previous.is_some_and(|p| (loss - p).abs() < tol) {
            break;
        }
        for (w, g) in net.weights.iter_mut().zip(&ws.grads) {
            w.scaled_add(-lr, g);
        }
    }
    Ok(net)
}

/// Something that can be fit to a dataset under a seed and queried at a
/// point. The network trainer is the production implementation; tests and
/// harness checks plug in cheaper models.
pub trait Trainer<F: Real>: Sync {
    fn fit_predict(&self, data: &Dataset<F>, seed: u64, x0: ArrayView1<F>) -> Result<F>;
}

/// Trains a fresh network per call and evaluates it at the query point.
#[derive(Debug, Clone)]
pub struct NetTrainer {
    pub config: NetConfig,
}

impl NetTrainer {
    pub fn new(config: NetConfig) -> Self {
        Self { config }
    }
}

impl<F: Real> Trainer<F> for NetTrainer {
    fn fit_predict(&self, data: &Dataset<F>, seed: u64, x0: ArrayView1<F>) -> Result<F> {
        let net = train::<F>(&self.config, data, seed)?;
        net.forward(&x0.to_vec())
    }
}

/// Predictions at `x0` of `m` independently initialized members trained on
/// the same data. Member `i` uses `derive_seed(seed, Ensemble, i)`.
pub fn ensemble_predictions<F: Real, T: Trainer<F>>(
    trainer: &T,
    data: &Dataset<F>,
    m: usize,
    x0: ArrayView1<F>,
    seed: u64,
) -> Result<Vec<F>> {
    (0..m)
        .into_par_iter()
        .map(|i| {
            trainer
                .fit_predict(data, derive_seed(seed, Stream::Ensemble, i as u64), x0)
                .map_err(|e| e.during(format!("ensemble member {i}")))
        })
        .collect()
}
