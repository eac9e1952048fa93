//! Dense feed-forward network with hand-written reverse mode.
//!
//! Batches are stored column-wise: a `DMatrix` of shape `features × batch`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    fn apply(self, z: &mut DMatrix<f64>) {
        match self {
            Activation::Relu => z.apply(|v| *v = v.max(0.0)),
            Activation::Tanh => z.apply(|v| *v = v.tanh()),
        }
    }

    /// Multiply `delta` by the derivative, expressed through the layer output `a`.
    fn backprop(self, delta: &mut DMatrix<f64>, a: &DMatrix<f64>) {
        match self {
            Activation::Relu => delta.zip_apply(a, |d, a| {
                if a <= 0.0 {
                    *d = 0.0
                }
            }),
            Activation::Tanh => delta.zip_apply(a, |d, a| *d *= 1.0 - a * a),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    /// `out × in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl DenseLayer {
    fn zeros_like(&self) -> Self {
        DenseLayer {
            weights: DMatrix::zeros(self.weights.nrows(), self.weights.ncols()),
            bias: DVector::zeros(self.bias.len()),
        }
    }
}

/// Network weights. The activation is applied after every hidden layer; the
/// output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams {
    pub layers: Vec<DenseLayer>,
    pub activation: Activation,
}

/// Layer outputs kept for the backward pass; `outputs[0]` is the input.
pub struct ForwardCache {
    outputs: Vec<DMatrix<f64>>,
}

impl ForwardCache {
    pub fn prediction(&self) -> &DMatrix<f64> {
        self.outputs.last().expect("cache holds at least the input")
    }
}

impl MlpParams {
    /// Uniform fan-in initialisation, `U(-1/√fan_in, 1/√fan_in)` for weights and biases.
    pub fn init<R: Rng>(dims: &[usize], activation: Activation, rng: &mut R) -> Self {
        assert!(dims.len() >= 2, "a network needs input and output dimensions");
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                DenseLayer {
                    weights: DMatrix::from_fn(fan_out, fan_in, |_, _| rng.gen_range(-bound..bound)),
                    bias: DVector::from_fn(fan_out, |_, _| rng.gen_range(-bound..bound)),
                }
            })
            .collect();
        MlpParams { layers, activation }
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().unwrap().weights.nrows()
    }

    pub fn dims(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(|l| l.weights.nrows()))
            .collect()
    }

    pub fn n_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.bias.len()).sum()
    }

    pub fn zeros_like(&self) -> Self {
        MlpParams {
            layers: self.layers.iter().map(DenseLayer::zeros_like).collect(),
            activation: self.activation,
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(l.bias.iter()).all(|v| v.is_finite()))
    }

    /// Every parameter, layer by layer, weights (column-major) then bias.
    pub fn to_flat(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for l in &self.layers {
            out.extend_from_slice(l.weights.as_slice());
            out.extend_from_slice(l.bias.as_slice());
        }
        out
    }

    pub fn set_flat(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch {
                what: "flat parameter vector",
                expected: self.n_params(),
                got: flat.len(),
            });
        }
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.as_mut_slice().copy_from_slice(&flat[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.as_mut_slice().copy_from_slice(&flat[at..at + b]);
            at += b;
        }
        Ok(())
    }

    /// Mutable views over every parameter block, in flat order.
    pub fn blocks_mut(&mut self) -> impl Iterator<Item = &mut [f64]> {
        self.layers
            .iter_mut()
            .flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()])
    }

    pub fn blocks(&self) -> impl Iterator<Item = &[f64]> {
        self.layers
            .iter()
            .flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()])
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::DimensionMismatch {
                what: "network input",
                expected: self.input_dim(),
                got: rows,
            });
        }
        Ok(())
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = DMatrix::from_column_slice(x.len(), 1, x);
        Ok(self.forward_batch(&batch)?.as_slice().to_vec())
    }

    pub fn forward_batch(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(x.nrows())?;
        let mut a = x.clone();
        for (k, layer) in self.layers.iter().enumerate() {
            a = self.affine(layer, &a);
            if k + 1 < self.layers.len() {
                self.activation.apply(&mut a);
            }
        }
        Ok(a)
    }

    pub fn forward_cached(&self, x: DMatrix<f64>) -> Result<ForwardCache> {
        self.check_input(x.nrows())?;
        let mut outputs = Vec::with_capacity(self.layers.len() + 1);
        outputs.push(x);
        for (k, layer) in self.layers.iter().enumerate() {
            let mut z = self.affine(layer, outputs.last().unwrap());
            if k + 1 < self.layers.len() {
                self.activation.apply(&mut z);
            }
            outputs.push(z);
        }
        Ok(ForwardCache { outputs })
    }

    fn affine(&self, layer: &DenseLayer, a: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &layer.weights * a;
        for mut col in z.column_iter_mut() {
            col += &layer.bias;
        }
        z
    }

    /// Gradient of a scalar loss given `∂loss/∂output` for the cached batch.
    pub fn backward(&self, cache: &ForwardCache, grad_output: DMatrix<f64>) -> MlpParams {
        let mut grads = Vec::with_capacity(self.layers.len());
        let mut delta = grad_output;
        for k in (0..self.layers.len()).rev() {
            let input = &cache.outputs[k];
            let weights = &delta * input.transpose();
            let bias = delta.column_sum();
            if k > 0 {
                let mut next = self.layers[k].weights.transpose() * &delta;
                self.activation.backprop(&mut next, input);
                delta = next;
            }
            grads.push(DenseLayer { weights, bias });
        }
        grads.reverse();
        MlpParams {
            layers: grads,
            activation: self.activation,
        }
    }
}
