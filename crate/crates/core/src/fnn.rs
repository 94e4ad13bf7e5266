//! Feed-forward regression networks: ReLU hidden layers, identity output,
//! per-model input/output standardization, MSE loss and Adam with shuffled
//! mini-batches.
//!
//! Network inputs are `(V, P, Q, log10 f)`; outputs are the eight
//! conductances and susceptances of an [`AdmittanceSample`].

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clustering::Scaler;
use crate::dataset::AdmittanceSample;

pub const FNN_FORMAT: &str = "ibrkit-fnn-v1";
pub const INPUT_DIM: usize = 4;
pub const OUTPUT_DIM: usize = 8;

/// Named hidden-layer layouts.
pub const PRESETS: [(&str, &[usize]); 3] =
    [("FNN1", &[4, 8]), ("FNN2", &[32, 32]), ("FNN3", &[32, 32])];

/// Central-difference step used by [`gradient_check`].
pub const FD_STEP: f64 = 1e-6;
/// Pre-activations closer than this to zero make a batch unusable for
/// [`gradient_check`].
pub const KINK_MARGIN: f64 = 1e-6;
/// Gradients smaller than this are compared in absolute terms.
const GRAD_FLOOR: f64 = 1e-4;

#[derive(Debug, Error)]
pub enum FnnError {
    #[error("invalid network spec: {0}")]
    InvalidSpec(String),
    #[error("expected {expected} values, got {found}")]
    Dimension { expected: usize, found: usize },
    #[error("non-finite network input {0:?}")]
    NonFinite(Vec<f64>),
    #[error("no samples")]
    Empty,
    #[error("training diverged at epoch {epoch} (learning rate {learning_rate})")]
    Diverged { epoch: usize, learning_rate: f64 },
    #[error("batch has a pre-activation of magnitude {0:e}, too close to the ReLU kink")]
    Kink(f64),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("network file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnSpec {
    pub input_dim: usize,
    pub hidden: Vec<usize>,
    pub output_dim: usize,
}

impl FnnSpec {
    /// Admittance regressor with the given hidden widths.
    pub fn new(hidden: &[usize]) -> Self {
        Self {
            input_dim: INPUT_DIM,
            hidden: hidden.to_vec(),
            output_dim: OUTPUT_DIM,
        }
    }

    pub fn preset(name: &str) -> Option<Self> {
        PRESETS
            .iter()
            .find(|(n, _)| n.eq_ignore_ascii_case(name))
            .map(|(_, h)| Self::new(h))
    }

    pub fn validate(&self) -> Result<(), FnnError> {
        if self.hidden.is_empty() {
            return Err(FnnError::InvalidSpec(
                "at least one hidden layer is required".into(),
            ));
        }
        if self.input_dim == 0 || self.output_dim == 0 || self.hidden.contains(&0) {
            return Err(FnnError::InvalidSpec(format!(
                "layer widths must be >= 1, got {} -> {:?} -> {}",
                self.input_dim, self.hidden, self.output_dim
            )));
        }
        Ok(())
    }

    /// `(fan_in, fan_out)` per layer.
    fn shapes(&self) -> Vec<(usize, usize)> {
        let mut widths = vec![self.input_dim];
        widths.extend(&self.hidden);
        widths.push(self.output_dim);
        widths.windows(2).map(|w| (w[0], w[1])).collect()
    }
}

/// Affine layer `z = W a + b` with `W` stored row-major, `outputs x inputs`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Layer {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
        }
    }

    fn affine(&self, a: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.inputs)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(a).map(|(w, x)| w * x).sum::<f64>() + b)
            .collect()
    }

    fn params(&self) -> impl Iterator<Item = &f64> {
        self.weights.iter().chain(&self.bias)
    }

    fn params_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.weights.iter_mut().chain(self.bias.iter_mut())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            max_epochs: 1200,
            batch_size: 64,
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            seed: 0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), FnnError> {
        let bad = |m: &str| Err(FnnError::InvalidConfig(m.into()));
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return bad("learning_rate must be finite and >= 0");
        }
        if !((0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2)) {
            return bad("decay rates must lie in [0, 1)");
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return bad("epsilon must be finite and > 0");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FnnModel {
    pub format: String,
    pub spec: FnnSpec,
    pub layers: Vec<Layer>,
    pub input_scaler: Scaler,
    pub output_scaler: Scaler,
    /// Mean training loss per epoch (standardized outputs).
    pub history: Vec<f64>,
    pub config: Option<TrainConfig>,
}

/// `(V, P, Q, log10 f)` for one sample.
pub fn network_input(sample: &AdmittanceSample) -> [f64; INPUT_DIM] {
    [sample.v, sample.p, sample.q, sample.f.log10()]
}

/// He-initialized network with identity scalers.
pub fn init(spec: &FnnSpec, seed: u64) -> Result<FnnModel, FnnError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .shapes()
        .into_iter()
        .map(|(fan_in, fan_out)| {
            let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive variance");
            let mut layer = Layer::zeros(fan_in, fan_out);
            for w in &mut layer.weights {
                *w = normal.sample(&mut rng);
            }
            layer
        })
        .collect();
    Ok(FnnModel {
        format: FNN_FORMAT.to_string(),
        spec: spec.clone(),
        layers,
        input_scaler: Scaler::identity(spec.input_dim),
        output_scaler: Scaler::identity(spec.output_dim),
        history: Vec::new(),
        config: None,
    })
}

/// Per-layer parameter gradients, shaped like the layers.
type Gradient = Vec<Layer>;

impl FnnModel {
    pub fn validate(&self) -> Result<(), FnnError> {
        if self.format != FNN_FORMAT {
            return Err(FnnError::Format(format!(
                "format tag {:?}, expected {FNN_FORMAT:?}",
                self.format
            )));
        }
        self.spec.validate()?;
        let shapes = self.spec.shapes();
        if shapes.len() != self.layers.len() {
            return Err(FnnError::Format(format!(
                "{} layers for {} in the spec",
                self.layers.len(),
                shapes.len()
            )));
        }
        for (l, ((fan_in, fan_out), layer)) in shapes.iter().zip(&self.layers).enumerate() {
            if (layer.inputs, layer.outputs) != (*fan_in, *fan_out)
                || layer.weights.len() != fan_in * fan_out
                || layer.bias.len() != *fan_out
            {
                return Err(FnnError::Format(format!(
                    "layer {l} does not match {fan_in} -> {fan_out}"
                )));
            }
            if !layer.params().all(|p| p.is_finite()) {
                return Err(FnnError::Format(format!(
                    "layer {l} has non-finite parameters"
                )));
            }
        }
        let scalers = [
            (&self.input_scaler, self.spec.input_dim),
            (&self.output_scaler, self.spec.output_dim),
        ];
        for (s, dim) in scalers {
            if s.mean.len() != dim
                || s.std.len() != dim
                || s.std.iter().any(|v| !(v.is_finite() && *v > 0.0))
            {
                return Err(FnnError::Format(
                    "scaler does not match the layer widths".into(),
                ));
            }
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    /// Pre-activations of every layer for a standardized input; the last
    /// entry is the (identity) network output.
    fn pre_activations(&self, x: &[f64]) -> Vec<Vec<f64>> {
        let mut zs: Vec<Vec<f64>> = Vec::with_capacity(self.layers.len());
        let mut a = x.to_vec();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&a);
            if l + 1 < self.layers.len() {
                a = z.iter().map(|v| v.max(0.0)).collect();
            }
            zs.push(z);
        }
        zs
    }

    fn check_input(&self, x: &[f64]) -> Result<(), FnnError> {
        if x.len() != self.spec.input_dim {
            return Err(FnnError::Dimension {
                expected: self.spec.input_dim,
                found: x.len(),
            });
        }
        if !x.iter().all(|v| v.is_finite()) {
            return Err(FnnError::NonFinite(x.to_vec()));
        }
        Ok(())
    }

    /// Network output for a raw input; in standardized output units unless
    /// `raw_units` is set.
    pub fn forward(&self, x: &[f64], raw_units: bool) -> Result<Vec<f64>, FnnError> {
        self.check_input(x)?;
        let z = self.forward_standardized(&self.input_scaler.transform(x));
        Ok(if raw_units {
            self.output_scaler.inverse(&z)
        } else {
            z
        })
    }

    /// Network output for an already standardized input.
    pub fn forward_standardized(&self, x: &[f64]) -> Vec<f64> {
        self.pre_activations(x).pop().expect("at least one layer")
    }

    /// Raw-unit prediction for one sample's `(V, P, Q, f)`.
    pub fn predict(&self, v: f64, p: f64, q: f64, f: f64) -> Result<[f64; OUTPUT_DIM], FnnError> {
        let y = self.forward(&[v, p, q, f.log10()], true)?;
        y.try_into().map_err(|y: Vec<f64>| FnnError::Dimension {
            expected: OUTPUT_DIM,
            found: y.len(),
        })
    }

    /// Mean squared error over all outputs of a standardized batch.
    pub fn loss(&self, xs: &[Vec<f64>], ys: &[Vec<f64>]) -> f64 {
        let n = (xs.len() * self.spec.output_dim) as f64;
        xs.iter()
            .zip(ys)
            .map(|(x, y)| {
                self.forward_standardized(x)
                    .iter()
                    .zip(y)
                    .map(|(a, b)| (a - b).powi(2))
                    .sum::<f64>()
            })
            .sum::<f64>()
            / n
    }

    /// Loss and its gradient by backpropagation over a standardized batch.
    fn loss_and_gradient(&self, xs: &[&[f64]], ys: &[&[f64]]) -> (f64, Gradient) {
        let mut grad: Gradient = self
            .layers
            .iter()
            .map(|l| Layer::zeros(l.inputs, l.outputs))
            .collect();
        let scale = 1.0 / (xs.len() * self.spec.output_dim) as f64;
        let mut loss = 0.0;
        for (x, y) in xs.iter().zip(ys) {
            let zs = self.pre_activations(x);
            let out = zs.last().expect("at least one layer");
            let mut delta: Vec<f64> = out
                .iter()
                .zip(y.iter())
                .map(|(a, b)| {
                    loss += (a - b).powi(2);
                    2.0 * (a - b) * scale
                })
                .collect();
            for l in (0..self.layers.len()).rev() {
                let input: Vec<f64> = if l == 0 {
                    x.to_vec()
                } else {
                    zs[l - 1].iter().map(|v| v.max(0.0)).collect()
                };
                let g = &mut grad[l];
                for (o, d) in delta.iter().enumerate() {
                    g.bias[o] += d;
                    for (w, a) in g.weights[o * g.inputs..(o + 1) * g.inputs]
                        .iter_mut()
                        .zip(&input)
                    {
                        *w += d * a;
                    }
                }
                if l > 0 {
                    let layer = &self.layers[l];
                    delta = (0..layer.inputs)
                        .map(|i| {
                            if zs[l - 1][i] > 0.0 {
                                delta
                                    .iter()
                                    .enumerate()
                                    .map(|(o, d)| layer.weights[o * layer.inputs + i] * d)
                                    .sum()
                            } else {
                                0.0
                            }
                        })
                        .collect();
                }
            }
        }
        (loss * scale, grad)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("network serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, FnnError> {
        let model: Self = serde_json::from_str(text)?;
        model.validate()?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<(), FnnError> {
        Ok(std::fs::write(path, self.to_json())?)
    }

    pub fn load(path: &Path) -> Result<Self, FnnError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Adam first and second moment estimates, shaped like the layers.
struct Adam {
    m: Gradient,
    v: Gradient,
    t: i32,
}

impl Adam {
    fn new(model: &FnnModel) -> Self {
        let zeros = || {
            model
                .layers
                .iter()
                .map(|l| Layer::zeros(l.inputs, l.outputs))
                .collect()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut FnnModel, grad: &Gradient, cfg: &TrainConfig) {
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t);
        let c2 = 1.0 - cfg.beta2.powi(self.t);
        for (((layer, g), m), v) in model
            .layers
            .iter_mut()
            .zip(grad)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, g), m), v) in layer
                .params_mut()
                .zip(g.params())
                .zip(m.params_mut())
                .zip(v.params_mut())
            {
                *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
                *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
                *p -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + cfg.epsilon);
            }
        }
    }
}

/// Fits both scalers on the samples and trains on `(V, P, Q, log10 f)` to
/// the eight admittance outputs.
pub fn train(
    model: &FnnModel,
    samples: &[AdmittanceSample],
    cfg: &TrainConfig,
) -> Result<FnnModel, FnnError> {
    let inputs: Vec<Vec<f64>> = samples.iter().map(|s| network_input(s).to_vec()).collect();
    let targets: Vec<Vec<f64>> = samples.iter().map(|s| s.y.to_vec()).collect();
    train_xy(model, &inputs, &targets, cfg)
}

/// [`train`] on arbitrary raw input/target rows.
pub fn train_xy(
    model: &FnnModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
    cfg: &TrainConfig,
) -> Result<FnnModel, FnnError> {
    cfg.validate()?;
    if inputs.is_empty() {
        return Err(FnnError::Empty);
    }
    if inputs.len() != targets.len() {
        return Err(FnnError::Dimension {
            expected: inputs.len(),
            found: targets.len(),
        });
    }
    for x in inputs {
        model.check_input(x)?;
    }
    if let Some(y) = targets.iter().find(|y| y.len() != model.spec.output_dim) {
        return Err(FnnError::Dimension {
            expected: model.spec.output_dim,
            found: y.len(),
        });
    }

    let mut model = model.clone();
    model.input_scaler = Scaler::fit(inputs);
    model.output_scaler = Scaler::fit(targets);
    model.config = Some(cfg.clone());
    model.history.clear();
    let xs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| model.input_scaler.transform(x))
        .collect();
    let ys: Vec<Vec<f64>> = targets
        .iter()
        .map(|y| model.output_scaler.transform(y))
        .collect();

    // separate stream from the one that drew the initial weights
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(1);
    let mut adam = Adam::new(&model);
    let mut order: Vec<usize> = (0..xs.len()).collect();
    for epoch in 0..cfg.max_epochs {
        if cfg.shuffle {
            order.shuffle(&mut rng);
        }
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let bx: Vec<&[f64]> = batch.iter().map(|&i| xs[i].as_slice()).collect();
            let by: Vec<&[f64]> = batch.iter().map(|&i| ys[i].as_slice()).collect();
            let (loss, grad) = model.loss_and_gradient(&bx, &by);
            if !loss.is_finite() {
                return Err(FnnError::Diverged {
                    epoch,
                    learning_rate: cfg.learning_rate,
                });
            }
            total += loss * batch.len() as f64;
            adam.step(&mut model, &grad, cfg);
        }
        let mean = total / xs.len() as f64;
        if !(mean.is_finite()
            && model
                .layers
                .iter()
                .all(|l| l.params().all(|p| p.is_finite())))
        {
            return Err(FnnError::Diverged {
                epoch,
                learning_rate: cfg.learning_rate,
            });
        }
        model.history.push(mean);
    }
    Ok(model)
}

/// Smallest pre-activation magnitude over the hidden layers for a raw batch.
pub fn min_hidden_preactivation(model: &FnnModel, inputs: &[Vec<f64>]) -> f64 {
    inputs
        .iter()
        .flat_map(|x| {
            let mut zs = model.pre_activations(&model.input_scaler.transform(x));
            zs.pop();
            zs.into_iter().flatten()
        })
        .fold(f64::INFINITY, |acc, z| acc.min(z.abs()))
}

/// Largest relative difference between backpropagated and central
/// finite-difference gradients of the standardized MSE, over every
/// parameter. `inputs` are raw; `targets` are standardized outputs.
///
/// Relative error is `|g_bp - g_fd| / max(|g_bp|, |g_fd|, 1e-4)`.
pub fn gradient_check(
    model: &FnnModel,
    inputs: &[Vec<f64>],
    targets: &[Vec<f64>],
) -> Result<f64, FnnError> {
    if inputs.is_empty() {
        return Err(FnnError::Empty);
    }
    for x in inputs {
        model.check_input(x)?;
    }
    let closest = min_hidden_preactivation(model, inputs);
    if closest < KINK_MARGIN {
        return Err(FnnError::Kink(closest));
    }
    let xs: Vec<Vec<f64>> = inputs
        .iter()
        .map(|x| model.input_scaler.transform(x))
        .collect();
    let bx: Vec<&[f64]> = xs.iter().map(Vec::as_slice).collect();
    let by: Vec<&[f64]> = targets.iter().map(Vec::as_slice).collect();
    let (_, grad) = model.loss_and_gradient(&bx, &by);

    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (l, g) in grad.iter().enumerate() {
        for (k, analytic) in g.params().enumerate() {
            let original = *probe.layers[l]
                .params_mut()
                .nth(k)
                .expect("parameter index");
            let mut at = |value: f64| {
                *probe.layers[l]
                    .params_mut()
                    .nth(k)
                    .expect("parameter index") = value;
                probe.loss(&xs, targets)
            };
            let numeric = (at(original + FD_STEP) - at(original - FD_STEP)) / (2.0 * FD_STEP);
            at(original);
            let rel =
                (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Largest absolute error and where it occurred.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorstError {
    pub abs_error: f64,
    pub channel: usize,
    pub v: f64,
    pub p: f64,
    pub q: f64,
    pub f: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub n: usize,
    /// Per output channel, in units of the training standard deviation.
    pub rmse_standardized: Vec<f64>,
    pub rmse_raw: Vec<f64>,
    /// Mean over channels of the standardized squared error.
    pub mse: f64,
    pub worst: WorstError,
}

/// Metrics of the model's raw-unit predictions against the samples.
pub fn evaluate(model: &FnnModel, samples: &[AdmittanceSample]) -> Result<Metrics, FnnError> {
    let predictions = samples
        .iter()
        .map(|s| model.predict(s.v, s.p, s.q, s.f))
        .collect::<Result<Vec<_>, _>>()?;
    evaluate_predictions(samples, &predictions, &model.output_scaler)
}

/// Metrics of arbitrary raw-unit predictions, standardized by `scaler`.
pub fn evaluate_predictions(
    samples: &[AdmittanceSample],
    predictions: &[[f64; OUTPUT_DIM]],
    scaler: &Scaler,
) -> Result<Metrics, FnnError> {
    if samples.is_empty() {
        return Err(FnnError::Empty);
    }
    if samples.len() != predictions.len() {
        return Err(FnnError::Dimension {
            expected: samples.len(),
            found: predictions.len(),
        });
    }
    if scaler.std.len() != OUTPUT_DIM {
        return Err(FnnError::Dimension {
            expected: OUTPUT_DIM,
            found: scaler.std.len(),
        });
    }
    let n = samples.len() as f64;
    let mut sq_raw = [0.0; OUTPUT_DIM];
    let mut worst = WorstError {
        abs_error: -1.0,
        channel: 0,
        v: 0.0,
        p: 0.0,
        q: 0.0,
        f: 0.0,
    };
    for (s, pred) in samples.iter().zip(predictions) {
        for (c, (a, b)) in pred.iter().zip(&s.y).enumerate() {
            let e = (a - b).abs();
            sq_raw[c] += e * e;
            if e > worst.abs_error {
                worst = WorstError {
                    abs_error: e,
                    channel: c,
                    v: s.v,
                    p: s.p,
                    q: s.q,
                    f: s.f,
                };
            }
        }
    }
    let rmse_raw: Vec<f64> = sq_raw.iter().map(|s| (s / n).sqrt()).collect();
    let rmse_standardized: Vec<f64> = rmse_raw
        .iter()
        .zip(&scaler.std)
        .map(|(r, s)| r / s)
        .collect();
    let mse = rmse_standardized.iter().map(|r| r * r).sum::<f64>() / OUTPUT_DIM as f64;
    Ok(Metrics {
        n: samples.len(),
        rmse_standardized,
        rmse_raw,
        mse,
        worst,
    })
}
