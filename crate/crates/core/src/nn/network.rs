use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{argmax, softmax_in_place, sparse_ce_loss};
use crate::error::{Error, Result};
use crate::matrix::{axpy, dot, Matrix};

/// Hidden widths of the reference architecture: the 64-unit input layer
/// followed by three hidden layers.
pub const DEFAULT_WIDTHS: [usize; 4] = [64, 120, 100, 50];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Softmax,
}

impl Activation {
    pub fn code(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::Softmax => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(Activation::Relu),
            1 => Some(Activation::Softmax),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_dim: usize,
    pub layer_widths: Vec<usize>,
    pub output_classes: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_dim: 1024,
            layer_widths: DEFAULT_WIDTHS.to_vec(),
            output_classes: 5,
        }
    }
}

impl NetworkSpec {
    pub fn new(input_dim: usize, layer_widths: Vec<usize>, output_classes: usize) -> Result<Self> {
        let spec = Self {
            input_dim,
            layer_widths,
            output_classes,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_classes(&self, output_classes: usize) -> Self {
        Self {
            output_classes,
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::validation("input_dim must be >= 1"));
        }
        if self.layer_widths.is_empty() {
            return Err(Error::validation("layer_widths must not be empty"));
        }
        if self.layer_widths.contains(&0) {
            return Err(Error::validation("every layer width must be >= 1"));
        }
        if self.output_classes < 2 {
            return Err(Error::validation("output_classes must be >= 2"));
        }
        Ok(())
    }

    /// `(out_dim, in_dim)` of every dense layer, input to output.
    pub fn layer_dims(&self) -> Vec<(usize, usize)> {
        let mut dims = Vec::with_capacity(self.layer_widths.len() + 1);
        let mut fan_in = self.input_dim;
        for &w in self.layer_widths.iter().chain(std::iter::once(&self.output_classes)) {
            dims.push((w, fan_in));
            fan_in = w;
        }
        dims
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub weights: Matrix,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weights.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weights.rows()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseNetwork {
    spec: NetworkSpec,
    layers: Vec<Layer>,
}

/// Activations recorded by [`DenseNetwork::forward`] for one batch.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input: Matrix,
    pub pre_activations: Vec<Matrix>,
    pub activations: Vec<Matrix>,
}

impl ForwardTrace {
    /// Softmax output, `batch x C`.
    pub fn probabilities(&self) -> &Matrix {
        self.activations.last().expect("trace has at least one layer")
    }
}

/// Gradients of the mean batch loss, shaped like the network's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientSet {
    pub weights: Vec<Matrix>,
    pub biases: Vec<Vec<f64>>,
}

impl GradientSet {
    pub fn zeros_like(net: &DenseNetwork) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim()))
                .collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.out_dim()]).collect(),
        }
    }

    /// Flat views in parameter order: weights then bias for each layer.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.weights
            .iter()
            .zip(&self.biases)
            .flat_map(|(w, b)| [w.as_slice(), b.as_slice()])
            .collect()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }
}

impl DenseNetwork {
    /// Glorot-uniform weights and zero biases, reproducible for a seed.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims = spec.layer_dims();
        let last = dims.len() - 1;
        let layers = dims
            .into_iter()
            .enumerate()
            .map(|(k, (out_dim, in_dim))| {
                let limit = (6.0 / (in_dim + out_dim) as f64).sqrt();
                let data = (0..out_dim * in_dim)
                    .map(|_| rng.random_range(-limit..=limit))
                    .collect();
                Layer {
                    weights: Matrix::from_vec(out_dim, in_dim, data).expect("finite init"),
                    bias: vec![0.0; out_dim],
                    activation: if k == last {
                        Activation::Softmax
                    } else {
                        Activation::Relu
                    },
                }
            })
            .collect();
        Ok(Self {
            spec: spec.clone(),
            layers,
        })
    }

    /// Assembles a network from explicit layers. Hidden layers may be
    /// omitted here, unlike [`NetworkSpec::validate`].
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        let Some(last) = layers.last() else {
            return Err(Error::InconsistentModel("network has no layers".into()));
        };
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::InconsistentModel(format!(
                    "layer {} expects {} inputs but layer {k} emits {}",
                    k + 1,
                    pair[1].in_dim(),
                    pair[0].out_dim()
                )));
            }
        }
        for (k, layer) in layers.iter().enumerate() {
            if layer.bias.len() != layer.out_dim() {
                return Err(Error::InconsistentModel(format!(
                    "layer {k} bias length {} does not match {} outputs",
                    layer.bias.len(),
                    layer.out_dim()
                )));
            }
            if !layer.weights.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InconsistentModel(format!("layer {k} has non-finite parameters")));
            }
            let expected = if k + 1 == layers.len() {
                Activation::Softmax
            } else {
                Activation::Relu
            };
            if layer.activation != expected {
                return Err(Error::InconsistentModel(format!(
                    "layer {k} must use {expected:?}"
                )));
            }
        }
        if last.out_dim() < 2 {
            return Err(Error::InconsistentModel("output layer needs >= 2 classes".into()));
        }
        let spec = NetworkSpec {
            input_dim: layers[0].in_dim(),
            layer_widths: layers[..layers.len() - 1].iter().map(Layer::out_dim).collect(),
            output_classes: last.out_dim(),
        };
        Ok(Self { spec, layers })
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.spec.input_dim
    }

    pub fn num_classes(&self) -> usize {
        self.spec.output_classes
    }

    /// Mutable flat parameter views in the same order as [`GradientSet::tensors`].
    pub fn params_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
            .collect()
    }

    pub fn param_lens(&self) -> Vec<usize> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice().len(), l.bias.len()])
            .collect()
    }

    pub fn forward(&self, batch: &Matrix) -> Result<ForwardTrace> {
        if batch.cols() != self.spec.input_dim {
            return Err(Error::validation(format!(
                "batch has {} features, network expects {}",
                batch.cols(),
                self.spec.input_dim
            )));
        }
        let n = batch.rows();
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut activations: Vec<Matrix> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let input = activations.last().unwrap_or(batch);
            let mut z = Matrix::zeros(n, layer.out_dim());
            for s in 0..n {
                let x = input.row(s);
                let zr = z.row_mut(s);
                for (o, zo) in zr.iter_mut().enumerate() {
                    *zo = dot(layer.weights.row(o), x) + layer.bias[o];
                }
            }
            let mut a = z.clone();
            match layer.activation {
                Activation::Relu => {
                    for v in a.as_mut_slice() {
                        *v = v.max(0.0);
                    }
                }
                Activation::Softmax => {
                    for s in 0..n {
                        softmax_in_place(a.row_mut(s));
                    }
                }
            }
            pre_activations.push(z);
            activations.push(a);
        }
        Ok(ForwardTrace {
            input: batch.clone(),
            pre_activations,
            activations,
        })
    }

    /// Mean sparse cross-entropy of `trace` against `labels`.
    pub fn loss(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<f64> {
        let probs = trace.probabilities();
        if labels.len() != probs.rows() {
            return Err(Error::validation("label count does not match batch size"));
        }
        let mut total = 0.0;
        for (row, &label) in probs.iter_rows().zip(labels) {
            total += sparse_ce_loss(row, label)?;
        }
        Ok(total / labels.len().max(1) as f64)
    }

    pub fn backward(&self, trace: &ForwardTrace, labels: &[usize]) -> Result<GradientSet> {
        let probs = trace.probabilities();
        let n = probs.rows();
        let classes = self.spec.output_classes;
        if labels.len() != n {
            return Err(Error::validation(format!(
                "got {} labels for a batch of {n}",
                labels.len()
            )));
        }
        if trace.activations.len() != self.layers.len() || probs.cols() != classes {
            return Err(Error::validation("trace does not belong to this network"));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= classes) {
            return Err(Error::validation(format!(
                "label {bad} out of range for {classes} classes"
            )));
        }

        let scale = 1.0 / n as f64;
        let mut delta = probs.clone();
        for (s, &label) in labels.iter().enumerate() {
            let row = delta.row_mut(s);
            row[label] -= 1.0;
            for v in row.iter_mut() {
                *v *= scale;
            }
        }

        let mut grads = GradientSet::zeros_like(self);
        for k in (0..self.layers.len()).rev() {
            let layer = &self.layers[k];
            let prev = if k == 0 {
                &trace.input
            } else {
                &trace.activations[k - 1]
            };
            let gw = &mut grads.weights[k];
            let gb = &mut grads.biases[k];
            for s in 0..n {
                let d = delta.row(s);
                let a = prev.row(s);
                for (o, &dso) in d.iter().enumerate() {
                    if dso != 0.0 {
                        axpy(dso, a, gw.row_mut(o));
                        gb[o] += dso;
                    }
                }
            }
            if k > 0 {
                let mut next = Matrix::zeros(n, layer.in_dim());
                let gate = &trace.pre_activations[k - 1];
                for s in 0..n {
                    let d = delta.row(s);
                    let out = next.row_mut(s);
                    for (o, &dso) in d.iter().enumerate() {
                        if dso != 0.0 {
                            axpy(dso, layer.weights.row(o), out);
                        }
                    }
                    for (v, &z) in out.iter_mut().zip(gate.row(s)) {
                        if z <= 0.0 {
                            *v = 0.0;
                        }
                    }
                }
                delta = next;
            }
        }
        Ok(grads)
    }

    pub fn predict_proba(&self, features: &[f64]) -> Result<Vec<f64>> {
        let batch = Matrix::from_vec(1, features.len(), features.to_vec())?;
        let trace = self.forward(&batch)?;
        Ok(trace.probabilities().row(0).to_vec())
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        Ok(argmax(&self.predict_proba(features)?))
    }

    pub fn predict_batch(&self, batch: &Matrix) -> Result<Vec<usize>> {
        let trace = self.forward(batch)?;
        Ok(trace.probabilities().iter_rows().map(argmax).collect())
    }
}
