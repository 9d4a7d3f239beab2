//! Dense layers, reconstruction losses, backpropagation and momentum SGD.
//!
//! A layer computes `f(W x + b)` with `W` stored as `out_dim x in_dim`.
//! Batched code paths keep one sample per row so the products map onto
//! GEMM calls. Gradients are the mean over the mini-batch of the per-sample
//! MSE gradient.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Scalar>(self, z: T) -> T {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output<T: Scalar>(self, a: T) -> T {
        match self {
            Activation::Tanh => T::one() - a * a,
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    /// `out_dim x in_dim`
    pub weights: Array2<T>,
    pub biases: Array1<T>,
    pub activation: Activation,
}

impl<T: Scalar> LayerParams<T> {
    pub fn new(weights: Array2<T>, biases: Array1<T>, activation: Activation) -> Result<Self> {
        if weights.nrows() != biases.len() {
            return Err(Error::dims("layer biases", weights.nrows(), biases.len()));
        }
        if weights.iter().chain(biases.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidConfig("non-finite layer parameter".into()));
        }
        Ok(Self {
            weights,
            biases,
            activation,
        })
    }

    /// Uniform initialisation in `[-r, r]` with `r = sqrt(6 / (fan_in + fan_out))`.
    pub fn init(in_dim: usize, out_dim: usize, activation: Activation, rng: &mut impl Rng) -> Self {
        let r = (6.0 / (in_dim + out_dim) as f64).sqrt();
        let weights = Array2::from_shape_simple_fn((out_dim, in_dim), || {
            T::of(rng.random_range(-r..=r))
        });
        Self {
            weights,
            biases: Array1::zeros(out_dim),
            activation,
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.nrows()
    }

    pub fn parameter_count(&self) -> usize {
        self.weights.len() + self.biases.len()
    }

    pub fn forward(&self, input: ArrayView1<T>) -> Result<Array1<T>> {
        if input.len() != self.in_dim() {
            return Err(Error::dims("layer input", self.in_dim(), input.len()));
        }
        let mut z = self.weights.dot(&input);
        z += &self.biases;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        Ok(z)
    }

    /// One sample per row.
    pub fn forward_batch(&self, inputs: ArrayView2<T>) -> Result<Array2<T>> {
        if inputs.ncols() != self.in_dim() {
            return Err(Error::dims("layer input", self.in_dim(), inputs.ncols()));
        }
        let mut z = inputs.dot(&self.weights.t());
        z += &self.biases;
        let act = self.activation;
        z.mapv_inplace(|v| act.apply(v));
        Ok(z)
    }
}

pub fn dense_forward<T: Scalar>(layer: &LayerParams<T>, input: &[T]) -> Result<Vec<T>> {
    Ok(layer.forward(ArrayView1::from(input))?.to_vec())
}

/// Runs `input` through every layer in order.
pub fn forward_chain<T: Scalar>(layers: &[LayerParams<T>], input: ArrayView1<T>) -> Result<Array1<T>> {
    let mut current = input.to_owned();
    for layer in layers {
        current = layer.forward(current.view())?;
    }
    Ok(current)
}

pub fn forward_chain_batch<T: Scalar>(
    layers: &[LayerParams<T>],
    inputs: ArrayView2<T>,
) -> Result<Array2<T>> {
    let mut current = inputs.to_owned();
    for layer in layers {
        current = layer.forward_batch(current.view())?;
    }
    Ok(current)
}

/// `(1/n) * sum (y_i - yhat_i)^2`
pub fn mse<T: Scalar>(predicted: &[T], target: &[T]) -> Result<T> {
    if predicted.len() != target.len() {
        return Err(Error::dims("mse operands", target.len(), predicted.len()));
    }
    if predicted.is_empty() {
        return Err(Error::dims("mse operands", 1, 0));
    }
    let sum = predicted
        .iter()
        .zip(target)
        .fold(T::zero(), |acc, (&p, &t)| acc + (t - p) * (t - p));
    Ok(sum / T::of(predicted.len() as f64))
}

/// `Mean((A - B)^2)`, the loss used to train the final expansion decoder
/// against the original window. Numerically identical to [`mse`].
pub fn squared_distance<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    mse(b, a)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad<T> {
    pub weights: Array2<T>,
    pub biases: Array1<T>,
}

impl<T: Scalar> LayerGrad<T> {
    pub fn zeros_like(layer: &LayerParams<T>) -> Self {
        Self {
            weights: Array2::zeros(layer.weights.raw_dim()),
            biases: Array1::zeros(layer.biases.len()),
        }
    }

    fn matches(&self, layer: &LayerParams<T>) -> bool {
        self.weights.dim() == layer.weights.dim() && self.biases.len() == layer.biases.len()
    }
}

/// Mean batch loss and its gradient for every layer.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub loss: T,
    pub layers: Vec<LayerGrad<T>>,
}

/// Exact gradients of the mean per-sample MSE between the chain output and
/// `targets`. `inputs` and `targets` hold one sample per row.
pub fn backward<T: Scalar>(
    layers: &[LayerParams<T>],
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
) -> Result<Gradients<T>> {
    let Some(last) = layers.last() else {
        return Err(Error::InvalidConfig("no layers to differentiate".into()));
    };
    if inputs.nrows() != targets.nrows() {
        return Err(Error::dims("target rows", inputs.nrows(), targets.nrows()));
    }
    if inputs.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if targets.ncols() != last.out_dim() {
        return Err(Error::dims("target width", last.out_dim(), targets.ncols()));
    }

    let mut activations = Vec::with_capacity(layers.len() + 1);
    activations.push(inputs.to_owned());
    for layer in layers {
        let next = layer.forward_batch(activations.last().unwrap().view())?;
        activations.push(next);
    }

    let output = activations.last().unwrap();
    let batch = T::of(inputs.nrows() as f64);
    let width = T::of(targets.ncols() as f64);
    let diff = output - &targets;
    let loss = diff.iter().fold(T::zero(), |acc, &d| acc + d * d) / (width * batch);

    let two = T::of(2.0);
    let mut upstream = diff.mapv(|d| two * d / (width * batch));
    let mut grads: Vec<LayerGrad<T>> = Vec::with_capacity(layers.len());
    for (l, layer) in layers.iter().enumerate().rev() {
        let act = layer.activation;
        Zip::from(&mut upstream)
            .and(&activations[l + 1])
            .for_each(|g, &a| *g = *g * act.derivative_from_output(a));
        let delta = upstream;
        let weights = delta.t().dot(&activations[l]);
        let biases = delta.sum_axis(Axis(0));
        if l > 0 {
            upstream = delta.dot(&layer.weights);
        } else {
            upstream = Array2::zeros((0, 0));
        }
        grads.push(LayerGrad { weights, biases });
    }
    grads.reverse();
    Ok(Gradients { loss, layers: grads })
}

/// Single-sample convenience wrapper over [`backward`].
pub fn backward_sample<T: Scalar>(
    layers: &[LayerParams<T>],
    input: &[T],
    target: &[T],
) -> Result<Gradients<T>> {
    let x = ArrayView2::from_shape((1, input.len()), input).expect("row view");
    let t = ArrayView2::from_shape((1, target.len()), target).expect("row view");
    backward(layers, x, t)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub rng_seed: u64,
    /// Minimum per-epoch loss improvement counted as progress.
    pub early_stop_tolerance: f64,
    /// Consecutive epochs without progress before stopping; 0 disables.
    pub early_stop_patience: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 200,
            batch_size: 32,
            rng_seed: 0,
            early_stop_tolerance: 1e-7,
            early_stop_patience: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum must lie in [0, 1), got {}",
                self.momentum
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be at least 1".into()));
        }
        Ok(())
    }
}

/// Optimiser state for one training run.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState<T> {
    pub velocity: Vec<LayerGrad<T>>,
    /// Full-set loss before the first update.
    pub initial_loss: f64,
    /// Mean of the mini-batch losses seen during each epoch.
    pub epoch_losses: Vec<f64>,
    pub stopped_early: bool,
}

impl<T: Scalar> TrainState<T> {
    pub fn new(layers: &[LayerParams<T>]) -> Self {
        Self {
            velocity: layers.iter().map(LayerGrad::zeros_like).collect(),
            initial_loss: f64::NAN,
            epoch_losses: Vec::new(),
            stopped_early: false,
        }
    }

    pub fn final_loss(&self) -> f64 {
        self.epoch_losses.last().copied().unwrap_or(self.initial_loss)
    }
}

/// `v <- -lr * g + momentum * v; p <- p + v`. With zero momentum this is
/// plain SGD, `p <- p - lr * g`.
pub fn sgd_step<T: Scalar>(
    layers: &mut [LayerParams<T>],
    grads: &Gradients<T>,
    state: &mut TrainState<T>,
    config: &TrainConfig,
) -> Result<()> {
    if grads.layers.len() != layers.len() {
        return Err(Error::dims("gradient layers", layers.len(), grads.layers.len()));
    }
    if state.velocity.len() != layers.len() {
        return Err(Error::dims("velocity layers", layers.len(), state.velocity.len()));
    }
    for ((layer, g), v) in layers.iter().zip(&grads.layers).zip(&state.velocity) {
        if !g.matches(layer) || !v.matches(layer) {
            return Err(Error::dims("parameter shape", layer.parameter_count(), g.weights.len() + g.biases.len()));
        }
    }
    let lr = T::of(config.learning_rate);
    let mom = T::of(config.momentum);
    let update = |p: &mut T, v: &mut T, g: &T| {
        *v = -(lr * *g) + mom * *v;
        *p = *p + *v;
    };
    for ((layer, g), v) in layers.iter_mut().zip(&grads.layers).zip(&mut state.velocity) {
        Zip::from(&mut layer.weights)
            .and(&mut v.weights)
            .and(&g.weights)
            .for_each(update);
        Zip::from(&mut layer.biases)
            .and(&mut v.biases)
            .and(&g.biases)
            .for_each(update);
    }
    Ok(())
}

/// Mean per-sample MSE of the chain over the whole set.
pub fn dataset_loss<T: Scalar>(
    layers: &[LayerParams<T>],
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
) -> Result<f64> {
    let out = forward_chain_batch(layers, inputs)?;
    if out.dim() != targets.dim() {
        return Err(Error::dims("target width", out.ncols(), targets.ncols()));
    }
    let sum: f64 = out
        .iter()
        .zip(targets.iter())
        .map(|(&o, &t)| {
            let d = (o - t).widen();
            d * d
        })
        .sum();
    Ok(sum / out.len() as f64)
}

/// Mini-batch momentum SGD over `(inputs[i], targets[i])` pairs.
///
/// Rows are reshuffled every epoch from a generator seeded with
/// `config.rng_seed`, so a run is reproducible bit for bit.
pub fn train_epochs<T: Scalar>(
    layers: &mut [LayerParams<T>],
    inputs: ArrayView2<T>,
    targets: ArrayView2<T>,
    config: &TrainConfig,
) -> Result<TrainState<T>> {
    config.validate()?;
    if inputs.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if inputs.nrows() != targets.nrows() {
        return Err(Error::dims("target rows", inputs.nrows(), targets.nrows()));
    }
    let mut state = TrainState::new(layers);
    state.initial_loss = dataset_loss(layers, inputs, targets)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.rng_seed);
    let mut order: Vec<usize> = (0..inputs.nrows()).collect();
    let mut stalled = 0usize;
    let mut previous = state.initial_loss;
    for _ in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let x = inputs.select(Axis(0), chunk);
            let t = targets.select(Axis(0), chunk);
            let grads = backward(layers, x.view(), t.view())?;
            total += grads.loss.widen() * chunk.len() as f64;
            sgd_step(layers, &grads, &mut state, config)?;
        }
        let epoch_loss = total / inputs.nrows() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::InvalidConfig(format!(
                "training diverged at epoch {} (learning rate {})",
                state.epoch_losses.len() + 1,
                config.learning_rate
            )));
        }
        state.epoch_losses.push(epoch_loss);

        if config.early_stop_patience > 0 {
            if previous - epoch_loss < config.early_stop_tolerance {
                stalled += 1;
            } else {
                stalled = 0;
            }
            if stalled >= config.early_stop_patience {
                state.stopped_early = true;
                break;
            }
        }
        previous = epoch_loss;
    }
    Ok(state)
}
