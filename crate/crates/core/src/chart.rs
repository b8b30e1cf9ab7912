//! Siamese channel-charting network.
//!
//! A fully connected network maps a CSI feature to a 2-D chart point. It is
//! trained so that chart distances between sample pairs match their geodesic
//! dissimilarities: the loss over a pair list is
//! `sum (d_ij - |g(f_i) - g(f_j)|)^2`. Gradients are computed by hand-written
//! backpropagation and applied with Adam.

use std::time::Instant;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::csi::CsiFeature;
use crate::dissimilarity::{DissimilarityKind, DissimilarityMatrix};
use crate::error::{Error, Result};
use crate::pairs;

/// Output widths of the chart network's layers.
pub const CHART_WIDTHS: [usize; 6] = [256, 128, 64, 32, 16, 2];

/// Chart dimension.
pub const CHART_DIM: usize = 2;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer {
    /// `out × in`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl DenseLayer {
    pub fn input_dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.weights.nrows()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ChartModel {
    layers: Vec<DenseLayer>,
}

/// Per-layer parameter gradients, same shapes as the model.
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<(Array2<f64>, Array1<f64>)>,
}

impl Gradients {
    fn zeros_like(model: &ChartModel) -> Self {
        Self {
            layers: model
                .layers
                .iter()
                .map(|l| (Array2::zeros(l.weights.raw_dim()), Array1::zeros(l.bias.len())))
                .collect(),
        }
    }

    /// Flattened in the same order as [`ChartModel::parameters`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in &self.layers {
            out.extend(w.iter());
            out.extend(b.iter());
        }
        out
    }
}

struct Trace {
    /// Layer inputs, then the final output.
    activations: Vec<Array2<f64>>,
    preactivations: Vec<Array2<f64>>,
}

impl ChartModel {
    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero biases.
    /// Hidden layers use ReLU, the last layer is linear.
    pub fn init_glorot(input_dim: usize, widths: &[usize], seed: u64) -> Result<Self> {
        if input_dim == 0 || widths.is_empty() || widths.contains(&0) {
            return Err(Error::param("layer widths must be positive"));
        }
        if *widths.last().unwrap() != CHART_DIM {
            return Err(Error::param(format!("the last layer must have width {CHART_DIM}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut fan_in = input_dim;
        let mut layers = Vec::with_capacity(widths.len());
        for (i, &fan_out) in widths.iter().enumerate() {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let weights =
                Array2::from_shape_simple_fn((fan_out, fan_in), || rng.random_range(-limit..limit));
            layers.push(DenseLayer {
                weights,
                bias: Array1::zeros(fan_out),
                activation: if i + 1 == widths.len() {
                    Activation::Linear
                } else {
                    Activation::Relu
                },
            });
            fan_in = fan_out;
        }
        Ok(Self { layers })
    }

    /// The standard chart network for `input_dim`-long features.
    pub fn new(input_dim: usize, seed: u64) -> Result<Self> {
        Self::init_glorot(input_dim, &CHART_WIDTHS, seed)
    }

    pub fn from_layers(layers: Vec<DenseLayer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::param("model needs at least one layer"));
        }
        for w in layers.windows(2) {
            if w[0].output_dim() != w[1].input_dim() {
                return Err(Error::dim(format!(
                    "layer output {} does not feed input {}",
                    w[0].output_dim(),
                    w[1].input_dim()
                )));
            }
        }
        for l in &layers {
            if l.bias.len() != l.output_dim() {
                return Err(Error::dim("bias length differs from layer width"));
            }
            if l.weights.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Numeric("non-finite model parameter".into()));
            }
        }
        if layers.last().unwrap().output_dim() != CHART_DIM {
            return Err(Error::dim(format!("model output must be {CHART_DIM}-D")));
        }
        Ok(Self { layers })
    }

    pub fn layers(&self) -> &[DenseLayer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].input_dim()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    /// All parameters, layer by layer (weights row-major, then biases).
    pub fn parameters(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.parameter_count());
        for l in &self.layers {
            out.extend(l.weights.iter());
            out.extend(l.bias.iter());
        }
        out
    }

    pub fn set_parameters(&mut self, params: &[f64]) -> Result<()> {
        if params.len() != self.parameter_count() {
            return Err(Error::dim(format!(
                "expected {} parameters, got {}",
                self.parameter_count(),
                params.len()
            )));
        }
        let mut it = params.iter();
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = *it.next().unwrap());
            l.bias.iter_mut().for_each(|b| *b = *it.next().unwrap());
        }
        Ok(())
    }

    fn check_input(&self, cols: usize) -> Result<()> {
        if cols != self.input_dim() {
            return Err(Error::dim(format!(
                "feature length {cols} does not match model input {}",
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Maps each row of `features` to a chart point (`n × 2`).
    pub fn forward_batch(&self, features: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.check_input(features.ncols())?;
        let mut x = features.to_owned();
        for l in &self.layers {
            x = affine(&x, l);
            if l.activation == Activation::Relu {
                x.mapv_inplace(relu);
            }
        }
        Ok(x)
    }

    pub fn forward(&self, feature: &[f64]) -> Result<[f64; 2]> {
        let x = ArrayView2::from_shape((1, feature.len()), feature)
            .map_err(|e| Error::dim(e.to_string()))?;
        let y = self.forward_batch(x)?;
        Ok([y[[0, 0]], y[[0, 1]]])
    }

    fn forward_trace(&self, x: Array2<f64>) -> Trace {
        let mut activations = vec![x];
        let mut preactivations = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let z = affine(activations.last().unwrap(), l);
            let a = match l.activation {
                Activation::Relu => z.mapv(relu),
                Activation::Linear => z.clone(),
            };
            preactivations.push(z);
            activations.push(a);
        }
        Trace {
            activations,
            preactivations,
        }
    }

    /// Smallest absolute hidden preactivation over the given inputs; used to
    /// keep finite-difference checks away from ReLU kinks.
    pub fn min_abs_hidden_preactivation(&self, features: ArrayView2<f64>) -> Result<f64> {
        self.check_input(features.ncols())?;
        let t = self.forward_trace(features.to_owned());
        Ok(t.preactivations
            .iter()
            .zip(&self.layers)
            .filter(|(_, l)| l.activation == Activation::Relu)
            .flat_map(|(z, _)| z.iter().map(|v| v.abs()))
            .fold(f64::INFINITY, f64::min))
    }
}

fn affine(x: &Array2<f64>, l: &DenseLayer) -> Array2<f64> {
    let mut z = x.dot(&l.weights.t());
    z += &l.bias;
    z
}

#[inline]
fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

/// Stacks features into an `n × D'` matrix.
pub fn feature_matrix(features: &[CsiFeature]) -> Result<Array2<f64>> {
    let d = features.first().map_or(0, |f| f.len());
    if features.iter().any(|f| f.len() != d) {
        return Err(Error::dim("features have different lengths"));
    }
    let flat: Vec<f64> = features.iter().flat_map(|f| f.as_slice().iter().copied()).collect();
    Array2::from_shape_vec((features.len(), d), flat).map_err(|e| Error::dim(e.to_string()))
}

fn check_pairs(n: usize, dmat: &DissimilarityMatrix, pairs: &[(usize, usize)]) -> Result<()> {
    if dmat.len() != n {
        return Err(Error::dim(format!(
            "{} features but a {}x{} dissimilarity matrix",
            n,
            dmat.len(),
            dmat.len()
        )));
    }
    if let Some(&(i, j)) = pairs.iter().find(|&&(i, j)| i >= n || j >= n) {
        return Err(Error::param(format!("pair ({i}, {j}) out of range for {n} samples")));
    }
    Ok(())
}

/// `sum over pairs (d_ij - |g(f_i) - g(f_j)|)^2`.
pub fn siamese_loss(
    model: &ChartModel,
    features: ArrayView2<f64>,
    dmat: &DissimilarityMatrix,
    pairs: &[(usize, usize)],
) -> Result<f64> {
    check_pairs(features.nrows(), dmat, pairs)?;
    let y = model.forward_batch(features)?;
    Ok(chart_loss(&y, dmat, pairs))
}

/// Loss of explicit chart points against target dissimilarities.
pub fn chart_loss(chart: &Array2<f64>, dmat: &DissimilarityMatrix, pairs: &[(usize, usize)]) -> f64 {
    pairs
        .iter()
        .map(|&(i, j)| {
            let dx = chart[[i, 0]] - chart[[j, 0]];
            let dy = chart[[i, 1]] - chart[[j, 1]];
            let e = dmat.get(i, j) - (dx * dx + dy * dy).sqrt();
            e * e
        })
        .sum()
}

/// Loss and parameter gradients over the listed pairs.
pub fn siamese_loss_gradient(
    model: &ChartModel,
    features: ArrayView2<f64>,
    dmat: &DissimilarityMatrix,
    pairs: &[(usize, usize)],
) -> Result<(f64, Gradients)> {
    check_pairs(features.nrows(), dmat, pairs)?;
    model.check_input(features.ncols())?;
    Ok(loss_gradient_unchecked(model, features, dmat, pairs, 1.0))
}

fn loss_gradient_unchecked(
    model: &ChartModel,
    features: ArrayView2<f64>,
    dmat: &DissimilarityMatrix,
    pairs: &[(usize, usize)],
    scale: f64,
) -> (f64, Gradients) {
    // Gather the rows the pairs touch so each sample is propagated once.
    let n = features.nrows();
    let mut slot = vec![usize::MAX; n];
    let mut rows = Vec::new();
    for &(i, j) in pairs {
        for v in [i, j] {
            if slot[v] == usize::MAX {
                slot[v] = rows.len();
                rows.push(v);
            }
        }
    }
    let x = features.select(Axis(0), &rows);
    let trace = model.forward_trace(x);
    let y = trace.activations.last().unwrap();

    let mut loss = 0.0;
    let mut grad_y = Array2::<f64>::zeros(y.raw_dim());
    for &(i, j) in pairs {
        let (a, b) = (slot[i], slot[j]);
        let dx = y[[a, 0]] - y[[b, 0]];
        let dy = y[[a, 1]] - y[[b, 1]];
        let r = (dx * dx + dy * dy).sqrt();
        let e = dmat.get(i, j) - r;
        loss += e * e;
        // d(e^2)/dy_a = -2 e (y_a - y_b) / r; zero subgradient at r = 0.
        if r > 0.0 {
            let g = -2.0 * e / r * scale;
            grad_y[[a, 0]] += g * dx;
            grad_y[[a, 1]] += g * dy;
            grad_y[[b, 0]] -= g * dx;
            grad_y[[b, 1]] -= g * dy;
        }
    }

    let mut grads = Gradients::zeros_like(model);
    let mut delta = grad_y;
    for (li, l) in model.layers.iter().enumerate().rev() {
        if l.activation == Activation::Relu {
            Zip::from(&mut delta)
                .and(&trace.preactivations[li])
                .for_each(|d, &z| {
                    if z <= 0.0 {
                        *d = 0.0
                    }
                });
        }
        let input = &trace.activations[li];
        grads.layers[li].0 = delta.t().dot(input);
        grads.layers[li].1 = delta.sum_axis(Axis(0));
        if li > 0 {
            delta = delta.dot(&l.weights);
        }
    }
    (loss, grads)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Pairs per Adam step, drawn without replacement from all `i < j`.
    pub batch_pairs: usize,
    pub epochs: usize,
    /// Adam steps per epoch.
    pub steps_per_epoch: usize,
    pub rng_seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            batch_pairs: 1024,
            epochs: 200,
            steps_per_epoch: 10,
            rng_seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate >= 0.0
            && self.learning_rate.is_finite()
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.epsilon > 0.0
            && self.batch_pairs > 0
            && self.epochs > 0
            && self.steps_per_epoch > 0;
        if ok {
            Ok(())
        } else {
            Err(Error::param(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainReport {
    /// Mean per-pair loss of the mini-batches in each epoch.
    pub epoch_losses: Vec<f64>,
    /// Mean per-pair loss over all pairs before training.
    pub initial_loss: f64,
    /// Mean per-pair loss over all pairs after training.
    pub final_loss: f64,
    pub seconds: f64,
}

/// Adam with bias correction.
pub struct Adam {
    lr: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Gradients,
    second: Gradients,
}

impl Adam {
    pub fn new(model: &ChartModel, cfg: &TrainConfig) -> Self {
        Self {
            lr: cfg.learning_rate,
            beta1: cfg.beta1,
            beta2: cfg.beta2,
            epsilon: cfg.epsilon,
            step: 0,
            first: Gradients::zeros_like(model),
            second: Gradients::zeros_like(model),
        }
    }

    pub fn update(&mut self, model: &mut ChartModel, grads: &Gradients) {
        self.step += 1;
        let (b1, b2, eps, lr) = (self.beta1, self.beta2, self.epsilon, self.lr);
        let c1 = 1.0 - b1.powi(self.step);
        let c2 = 1.0 - b2.powi(self.step);
        let apply = |p: &mut f64, m: &mut f64, v: &mut f64, g: f64| {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
        };
        for (li, layer) in model.layers.iter_mut().enumerate() {
            let (gw, gb) = &grads.layers[li];
            let (mw, mb) = &mut self.first.layers[li];
            let (vw, vb) = &mut self.second.layers[li];
            Zip::from(&mut layer.weights)
                .and(mw)
                .and(vw)
                .and(gw)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
            Zip::from(&mut layer.bias)
                .and(mb)
                .and(vb)
                .and(gb)
                .for_each(|p, m, v, &g| apply(p, m, v, g));
        }
    }
}

/// Mean per-pair loss over all `i < j`.
pub fn mean_pair_loss(model: &ChartModel, features: ArrayView2<f64>, dmat: &DissimilarityMatrix) -> Result<f64> {
    let n = features.nrows();
    check_pairs(n, dmat, &[])?;
    let y = model.forward_batch(features)?;
    let mut total = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let dx = y[[i, 0]] - y[[j, 0]];
            let dy = y[[i, 1]] - y[[j, 1]];
            let e = dmat.get(i, j) - (dx * dx + dy * dy).sqrt();
            total += e * e;
        }
    }
    Ok(total / pairs::pair_count(n).max(1) as f64)
}

/// Trains `model` on mini-batches of random pairs with Adam.
pub fn train(
    mut model: ChartModel,
    features: ArrayView2<f64>,
    dmat: &DissimilarityMatrix,
    cfg: &TrainConfig,
) -> Result<(ChartModel, TrainReport)> {
    cfg.validate()?;
    let n = features.nrows();
    if n < 2 {
        return Err(Error::param("training needs at least two samples"));
    }
    check_pairs(n, dmat, &[])?;
    model.check_input(features.ncols())?;
    if dmat.kind() != DissimilarityKind::Geodesic {
        log::warn!("training on non-geodesic dissimilarities");
    }
    let start = Instant::now();
    let initial_loss = mean_pair_loss(&model, features, dmat)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let mut adam = Adam::new(&model, cfg);
    let mut epoch_losses = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let mut sum = 0.0;
        for step in 0..cfg.steps_per_epoch {
            let batch = pairs::sample_pairs(&mut rng, n, cfg.batch_pairs);
            let scale = 1.0 / batch.len() as f64;
            let (loss, grads) = loss_gradient_unchecked(&model, features, dmat, &batch, scale);
            let mean = loss * scale;
            if !mean.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, step });
            }
            sum += mean;
            adam.update(&mut model, &grads);
        }
        let epoch_loss = sum / cfg.steps_per_epoch as f64;
        log::debug!("epoch {epoch}: mean pair loss {epoch_loss:.6}");
        epoch_losses.push(epoch_loss);
    }
    let final_loss = mean_pair_loss(&model, features, dmat)?;
    if !final_loss.is_finite() {
        return Err(Error::NonFiniteLoss {
            epoch: cfg.epochs,
            step: 0,
        });
    }
    Ok((
        model,
        TrainReport {
            epoch_losses,
            initial_loss,
            final_loss,
            seconds: start.elapsed().as_secs_f64(),
        },
    ))
}
