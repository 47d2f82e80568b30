//! Dense MLP engine.
//!
//! Every layer stores its bias as an extra trailing weight column, so a layer
//! with `in` inputs and `out` units is an `out x (in + 1)` matrix applied to
//! the input vector extended by a constant `1`. Hidden layers apply the model's
//! activation; the final layer is linear and yields the pre-softmax logits.

mod backward;
pub mod io;
mod matrix;
mod ops;
mod train;

use std::hash::Hasher;

use rand::Rng;
use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use backward::{backward, loss, Gradients};
pub use matrix::{dot, Matrix};
pub(crate) use matrix::{gemm, Operand};

pub use ops::{argmax, cross_entropy, softmax, softmax_in_place, PROB_FLOOR};
pub use train::{evaluate_accuracy, init_model, train, train_from, Predictor, TrainConfig};

/// Negative-side slope of [`Activation::LeakyRelu`].
pub const LEAKY_SLOPE: f64 = 0.01;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    LeakyRelu,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::LeakyRelu => {
                if z > 0.0 {
                    z
                } else {
                    LEAKY_SLOPE * z
                }
            }
        }
    }

    /// Derivative with respect to the pre-activation, taking 0 at the kink.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::LeakyRelu => {
                if z > 0.0 {
                    1.0
                } else {
                    LEAKY_SLOPE
                }
            }
        }
    }

    pub(crate) fn tag(self) -> u8 {
        match self {
            Activation::Relu => 0,
            Activation::LeakyRelu => 1,
        }
    }

    pub(crate) fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Relu),
            1 => Some(Activation::LeakyRelu),
            _ => None,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "leaky_relu" => Ok(Activation::LeakyRelu),
            other => Err(Error::InvalidConfig(format!("unknown activation `{other}`"))),
        }
    }
}

/// One augmented weight matrix: `out` rows, `in + 1` columns, the last column
/// holding the bias.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LayerWeights {
    matrix: Matrix,
}

impl LayerWeights {
    pub fn new(matrix: Matrix) -> Result<Self> {
        if matrix.rows() == 0 || matrix.cols() < 2 {
            return Err(Error::InvalidModel(format!(
                "layer must have at least one unit and one input, got {}x{}",
                matrix.rows(),
                matrix.cols()
            )));
        }
        if !matrix.is_finite() {
            return Err(Error::InvalidModel("non-finite layer weight".into()));
        }
        Ok(Self { matrix })
    }

    /// Builds a layer from separate `weights` (`out x in`) and `bias` (`out`).
    pub fn from_parts(weights: &Matrix, bias: &[f64]) -> Result<Self> {
        if bias.len() != weights.rows() {
            return Err(Error::InvalidModel(format!(
                "bias length {} does not match {} rows",
                bias.len(),
                weights.rows()
            )));
        }
        let cols = weights.cols() + 1;
        let mut m = Matrix::zeros(weights.rows(), cols);
        for r in 0..weights.rows() {
            let row = m.row_mut(r);
            row[..cols - 1].copy_from_slice(weights.row(r));
            row[cols - 1] = bias[r];
        }
        Self::new(m)
    }

    #[inline]
    pub fn out_dim(&self) -> usize {
        self.matrix.rows()
    }

    #[inline]
    pub fn in_dim(&self) -> usize {
        self.matrix.cols() - 1
    }

    #[inline]
    pub fn matrix(&self) -> &Matrix {
        &self.matrix
    }

    #[inline]
    pub(crate) fn matrix_mut(&mut self) -> &mut Matrix {
        &mut self.matrix
    }

    #[inline]
    pub fn bias(&self, unit: usize) -> f64 {
        self.matrix.get(unit, self.in_dim())
    }

    /// Weights of one unit, bias excluded.
    #[inline]
    pub fn weights_of(&self, unit: usize) -> &[f64] {
        &self.matrix.row(unit)[..self.in_dim()]
    }

    /// Pre-activation of every unit for a single input vector.
    pub(crate) fn affine(&self, input: &[f64], out: &mut Vec<f64>) {
        debug_assert_eq!(input.len(), self.in_dim());
        out.clear();
        for unit in 0..self.out_dim() {
            out.push(dot(self.weights_of(unit), input) + self.bias(unit));
        }
    }
}

/// A trained (or initialized) MLP: `depth` hidden layers followed by a linear
/// output layer with `num_classes` units.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelWeights {
    layers: Vec<LayerWeights>,
    activation: Activation,
}

impl ModelWeights {
    pub fn new(layers: Vec<LayerWeights>, activation: Activation) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidModel("model has no layers".into()));
        }
        for (l, pair) in layers.windows(2).enumerate() {
            if pair[1].in_dim() != pair[0].out_dim() {
                return Err(Error::DimensionMismatch {
                    layer: l + 1,
                    expected: pair[0].out_dim(),
                    found: pair[1].in_dim(),
                });
            }
        }
        Ok(Self { layers, activation })
    }

    /// Random He-uniform initialization (`U(-sqrt(6/fan_in), sqrt(6/fan_in))`)
    /// with zero biases. `widths` is `[input, hidden.., classes]`.
    pub fn init<R: Rng + ?Sized>(
        widths: &[usize],
        activation: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(Error::InvalidConfig(format!(
                "architecture needs at least input and output widths, all positive: {widths:?}"
            )));
        }
        let mut layers = Vec::with_capacity(widths.len() - 1);
        for pair in widths.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / fan_in as f64).sqrt();
            let dist = Uniform::new(-limit, limit);
            let mut m = Matrix::zeros(fan_out, fan_in + 1);
            for r in 0..fan_out {
                for w in &mut m.row_mut(r)[..fan_in] {
                    *w = dist.sample(rng);
                }
            }
            layers.push(LayerWeights::new(m)?);
        }
        Self::new(layers, activation)
    }

    #[inline]
    pub fn layers(&self) -> &[LayerWeights] {
        &self.layers
    }

    #[inline]
    pub(crate) fn layers_mut(&mut self) -> &mut [LayerWeights] {
        &mut self.layers
    }

    #[inline]
    pub fn activation(&self) -> Activation {
        self.activation
    }

    /// Number of hidden layers.
    #[inline]
    pub fn depth(&self) -> usize {
        self.layers.len() - 1
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    /// `[input, hidden.., classes]`.
    pub fn widths(&self) -> Vec<usize> {
        std::iter::once(self.input_dim())
            .chain(self.layers.iter().map(LayerWeights::out_dim))
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.matrix().as_slice().len())
            .sum()
    }

    pub fn same_shape(&self, other: &ModelWeights) -> bool {
        self.widths() == other.widths()
    }

    /// Pre-softmax outputs for one sample.
    pub fn forward_logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.check_input(x)?;
        let mut cur = x.to_vec();
        let mut next = Vec::new();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            layer.affine(&cur, &mut next);
            if l < last {
                for v in &mut next {
                    *v = self.activation.apply(*v);
                }
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Post-activation outputs of every hidden layer for one sample.
    pub fn hidden_activations(&self, x: &[f64]) -> Result<Vec<Vec<f64>>> {
        self.check_input(x)?;
        let mut out = Vec::with_capacity(self.depth());
        let mut cur = x.to_vec();
        for layer in &self.layers[..self.depth()] {
            let mut next = Vec::new();
            layer.affine(&cur, &mut next);
            for v in &mut next {
                *v = self.activation.apply(*v);
            }
            out.push(next.clone());
            cur = next;
        }
        Ok(out)
    }

    /// Logits for every row of `xs` (`n x input_dim`), returned as `n x C`.
    ///
    /// Uses blocked matrix products, so results agree with
    /// [`ModelWeights::forward_logits`] to rounding but not bit-for-bit.
    pub fn logits_batch(&self, xs: &Matrix) -> Result<Matrix> {
        if xs.cols() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: xs.cols(),
            });
        }
        let n = xs.rows();
        let mut cur = xs.clone();
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
            let ld = in_dim + 1;
            let w = layer.matrix().as_slice();
            let mut next = Matrix::zeros(n, out_dim);
            for r in 0..n {
                let row = next.row_mut(r);
                for (u, v) in row.iter_mut().enumerate() {
                    *v = w[u * ld + in_dim];
                }
            }
            gemm(
                n,
                in_dim,
                out_dim,
                Operand::normal(cur.as_slice(), in_dim),
                Operand::transposed(w, ld),
                1.0,
                next.as_mut_slice(),
                out_dim,
            );
            if l < last {
                for v in next.as_mut_slice() {
                    *v = self.activation.apply(*v);
                }
            }
            cur = next;
        }
        Ok(cur)
    }

    /// FNV-1a over the activation tag, shapes and weight bit patterns.
    pub fn checksum(&self) -> u64 {
        let mut h = Fnv1a::default();
        h.write_u8(self.activation.tag());
        for layer in &self.layers {
            h.write_usize(layer.matrix().rows());
            h.write_usize(layer.matrix().cols());
            for v in layer.matrix().as_slice() {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    fn check_input(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }
}

pub(crate) struct Fnv1a(u64);

impl Default for Fnv1a {
    fn default() -> Self {
        Self(0xcbf2_9ce4_8422_2325)
    }
}

impl Hasher for Fnv1a {
    fn finish(&self) -> u64 {
        self.0
    }

    fn write(&mut self, bytes: &[u8]) {
        for b in bytes {
            self.0 ^= u64::from(*b);
            self.0 = self.0.wrapping_mul(0x0100_0000_01b3);
        }
    }
}
