//! Batched forward/backward pass for softmax cross-entropy with an L1 penalty.

use super::{gemm, LayerWeights, Matrix, ModelWeights, Operand, PROB_FLOOR};
use crate::{Error, Result};

/// Gradient with the same shapes as the model's augmented layer matrices.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub layers: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(model: &ModelWeights) -> Self {
        Self {
            layers: model
                .layers()
                .iter()
                .map(|l| Matrix::zeros(l.out_dim(), l.in_dim() + 1))
                .collect(),
        }
    }

    /// Adds `l1 * sign(w)` (with `sign(0) = 0`) to every coordinate.
    pub(crate) fn add_l1(&mut self, model: &ModelWeights, l1: f64) {
        if l1 == 0.0 {
            return;
        }
        for (g, layer) in self.layers.iter_mut().zip(model.layers()) {
            for (gv, w) in g.as_mut_slice().iter_mut().zip(layer.matrix().as_slice()) {
                if *w > 0.0 {
                    *gv += l1;
                } else if *w < 0.0 {
                    *gv -= l1;
                }
            }
        }
    }
}

/// Buffers reused across mini-batches.
#[derive(Debug, Default)]
pub(crate) struct Workspace {
    /// Pre-activations of every layer, `batch x out`.
    pre: Vec<Matrix>,
    /// Post-activations of every hidden layer, `batch x out`.
    post: Vec<Matrix>,
    delta: Matrix,
    delta_prev: Matrix,
}

impl Default for Matrix {
    fn default() -> Self {
        Matrix::zeros(0, 0)
    }
}

impl Workspace {
    pub fn new(model: &ModelWeights) -> Self {
        let n = model.layers().len();
        Self {
            pre: vec![Matrix::default(); n],
            post: vec![Matrix::default(); n - 1],
            delta: Matrix::default(),
            delta_prev: Matrix::default(),
        }
    }
}

fn affine_batch(layer: &LayerWeights, input: &[f64], batch: usize, out: &mut Matrix) {
    let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
    let ld = in_dim + 1;
    let w = layer.matrix().as_slice();
    out.resize(batch, out_dim);
    for r in 0..batch {
        for (u, v) in out.row_mut(r).iter_mut().enumerate() {
            *v = w[u * ld + in_dim];
        }
    }
    gemm(
        batch,
        in_dim,
        out_dim,
        Operand::normal(input, in_dim),
        Operand::transposed(w, ld),
        1.0,
        out.as_mut_slice(),
        out_dim,
    );
}

/// Mean cross-entropy of the batch and its gradient written into `grads`
/// (overwritten). `inputs` is `batch x input_dim` row-major.
pub(crate) fn forward_backward(
    model: &ModelWeights,
    inputs: &[f64],
    labels: &[usize],
    ws: &mut Workspace,
    grads: &mut Gradients,
) -> f64 {
    let batch = labels.len();
    let layers = model.layers();
    let n_layers = layers.len();
    let act = model.activation();
    debug_assert_eq!(inputs.len(), batch * model.input_dim());

    if batch == 0 {
        for g in &mut grads.layers {
            g.as_mut_slice().fill(0.0);
        }
        return 0.0;
    }

    for l in 0..n_layers {
        let input: &[f64] = if l == 0 {
            inputs
        } else {
            ws.post[l - 1].as_slice()
        };
        affine_batch(&layers[l], input, batch, &mut ws.pre[l]);
        if l + 1 < n_layers {
            let z = &ws.pre[l];
            let a = &mut ws.post[l];
            a.resize(z.rows(), z.cols());
            for (av, zv) in a.as_mut_slice().iter_mut().zip(z.as_slice()) {
                *av = act.apply(*zv);
            }
        }
    }

    // Softmax of the logits, loss, and dL/dz for the output layer.
    let classes = model.num_classes();
    let inv_batch = 1.0 / batch as f64;
    let mut loss = 0.0;
    ws.delta.resize(batch, classes);
    for (i, &y) in labels.iter().enumerate() {
        let z = ws.pre[n_layers - 1].row(i);
        let d = ws.delta.row_mut(i);
        d.copy_from_slice(z);
        super::softmax_in_place(d);
        loss -= d[y].max(PROB_FLOOR).ln();
        d[y] -= 1.0;
        for v in d.iter_mut() {
            *v *= inv_batch;
        }
    }
    loss *= inv_batch;

    for l in (0..n_layers).rev() {
        let layer = &layers[l];
        let (out_dim, in_dim) = (layer.out_dim(), layer.in_dim());
        let ld = in_dim + 1;
        let input: &[f64] = if l == 0 {
            inputs
        } else {
            ws.post[l - 1].as_slice()
        };
        let g = grads.layers[l].as_mut_slice();
        // dW = delta^T * input
        gemm(
            out_dim,
            batch,
            in_dim,
            Operand::transposed(ws.delta.as_slice(), out_dim),
            Operand::normal(input, in_dim),
            0.0,
            g,
            ld,
        );
        for u in 0..out_dim {
            g[u * ld + in_dim] = 0.0;
        }
        for r in 0..batch {
            let d = ws.delta.row(r);
            for (u, dv) in d.iter().enumerate() {
                g[u * ld + in_dim] += dv;
            }
        }

        if l > 0 {
            // delta_prev = (delta * W) .* act'(z_prev)
            ws.delta_prev.resize(batch, in_dim);
            gemm(
                batch,
                out_dim,
                in_dim,
                Operand::normal(ws.delta.as_slice(), out_dim),
                Operand::normal(layer.matrix().as_slice(), ld),
                0.0,
                ws.delta_prev.as_mut_slice(),
                in_dim,
            );
            let z = ws.pre[l - 1].as_slice();
            for (dv, zv) in ws.delta_prev.as_mut_slice().iter_mut().zip(z) {
                *dv *= act.derivative(*zv);
            }
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
    }
    loss
}

fn check_batch(model: &ModelWeights, inputs: &Matrix, labels: &[usize]) -> Result<()> {
    if inputs.cols() != model.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: model.input_dim(),
            found: inputs.cols(),
        });
    }
    if inputs.rows() != labels.len() {
        return Err(Error::InvalidConfig(format!(
            "{} input rows but {} labels",
            inputs.rows(),
            labels.len()
        )));
    }
    if let Some(&y) = labels.iter().find(|&&y| y >= model.num_classes()) {
        return Err(Error::InvalidConfig(format!(
            "label {y} out of range for {} classes",
            model.num_classes()
        )));
    }
    Ok(())
}

/// Regularized objective: mean cross-entropy of `softmax(logits)` plus
/// `l1 * sum |w|` over every weight, biases included.
pub fn loss(model: &ModelWeights, inputs: &Matrix, labels: &[usize], l1: f64) -> Result<f64> {
    check_batch(model, inputs, labels)?;
    let mut ce = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let p = super::softmax(&model.forward_logits(inputs.row(i))?);
        ce -= p[y].max(PROB_FLOOR).ln();
    }
    if !labels.is_empty() {
        ce /= labels.len() as f64;
    }
    let penalty: f64 = model
        .layers()
        .iter()
        .flat_map(|l| l.matrix().as_slice())
        .map(|w| w.abs())
        .sum();
    Ok(ce + l1 * penalty)
}

/// Analytic gradient of [`loss`]. An empty batch yields the L1 subgradient
/// alone.
pub fn backward(
    model: &ModelWeights,
    inputs: &Matrix,
    labels: &[usize],
    l1: f64,
) -> Result<Gradients> {
    check_batch(model, inputs, labels)?;
    let mut ws = Workspace::new(model);
    let mut grads = Gradients::zeros_like(model);
    forward_backward(model, inputs.as_slice(), labels, &mut ws, &mut grads);
    grads.add_l1(model, l1);
    Ok(grads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_batch(rng: &mut ChaCha8Rng, n: usize, dim: usize, classes: usize) -> (Matrix, Vec<usize>) {
        let xs = Matrix::from_vec(n, dim, (0..n * dim).map(|_| rng.gen_range(-1.5..1.5)).collect());
        let ys = (0..n).map(|_| rng.gen_range(0..classes)).collect();
        (xs, ys)
    }

    fn perturbed(model: &ModelWeights, layer: usize, idx: usize, delta: f64) -> ModelWeights {
        let mut m = model.clone();
        m.layers_mut()[layer].matrix_mut().as_mut_slice()[idx] += delta;
        m
    }

    /// Central differences with h = 1e-5 against the analytic gradient.
    fn check_against_finite_differences(model: &ModelWeights, xs: &Matrix, ys: &[usize], l1: f64) {
        let h = 1e-5;
        let grads = backward(model, xs, ys, l1).unwrap();
        for (l, layer) in model.layers().iter().enumerate() {
            for idx in 0..layer.matrix().as_slice().len() {
                let w = layer.matrix().as_slice()[idx];
                if l1 > 0.0 && w.abs() < 10.0 * h {
                    continue;
                }
                let up = loss(&perturbed(model, l, idx, h), xs, ys, l1).unwrap();
                let down = loss(&perturbed(model, l, idx, -h), xs, ys, l1).unwrap();
                let numeric = (up - down) / (2.0 * h);
                let analytic = grads.layers[l].as_slice()[idx];
                let scale = numeric.abs().max(analytic.abs()).max(1e-3);
                assert!(
                    (numeric - analytic).abs() / scale < 1e-4,
                    "layer {l} coord {idx}: analytic {analytic} numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn gradient_matches_finite_differences_two_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let model = ModelWeights::init(&[4, 6, 3], Activation::Relu, &mut rng).unwrap();
        let model = jitter_biases(model, &mut rng);
        let (xs, ys) = random_batch(&mut rng, 7, 4, 3);
        check_against_finite_differences(&model, &xs, &ys, 0.0);
        check_against_finite_differences(&model, &xs, &ys, 1e-3);
    }

    #[test]
    fn gradient_matches_finite_differences_leaky_three_layer() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = ModelWeights::init(&[3, 5, 4, 2], Activation::LeakyRelu, &mut rng).unwrap();
        let model = jitter_biases(model, &mut rng);
        let (xs, ys) = random_batch(&mut rng, 5, 3, 2);
        check_against_finite_differences(&model, &xs, &ys, 0.0);
    }

    pub(crate) fn jitter_biases(model: ModelWeights, rng: &mut ChaCha8Rng) -> ModelWeights {
        let mut m = model;
        for layer in m.layers_mut() {
            let cols = layer.matrix().cols();
            for r in 0..layer.matrix().rows() {
                layer.matrix_mut().set(r, cols - 1, rng.gen_range(-0.3..0.3));
            }
        }
        m
    }

    #[test]
    fn duplicated_sample_has_single_sample_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let model = ModelWeights::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        let x: Vec<f64> = vec![0.3, -0.8, 1.1];
        let single = backward(&model, &Matrix::from_vec(1, 3, x.clone()), &[1], 0.0).unwrap();
        let mut twice = x.clone();
        twice.extend_from_slice(&x);
        let double = backward(&model, &Matrix::from_vec(2, 3, twice), &[1, 1], 0.0).unwrap();
        for (a, b) in single.layers.iter().zip(&double.layers) {
            for (u, v) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((u - v).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn l1_term_in_isolation_is_scaled_sign() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut model = ModelWeights::init(&[3, 4, 2], Activation::Relu, &mut rng).unwrap();
        model.layers_mut()[0].matrix_mut().set(0, 0, 0.0);
        let g = 0.25;
        let grads = backward(&model, &Matrix::zeros(0, 3), &[], g).unwrap();
        for (gm, layer) in grads.layers.iter().zip(model.layers()) {
            for (gv, w) in gm.as_slice().iter().zip(layer.matrix().as_slice()) {
                let expected = if *w > 0.0 {
                    g
                } else if *w < 0.0 {
                    -g
                } else {
                    0.0
                };
                assert_eq!(*gv, expected);
            }
        }
    }

    #[test]
    fn rejects_bad_labels_and_widths() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let model = ModelWeights::init(&[3, 2], Activation::Relu, &mut rng).unwrap();
        assert!(backward(&model, &Matrix::zeros(1, 3), &[2], 0.0).is_err());
        assert!(backward(&model, &Matrix::zeros(1, 4), &[0], 0.0).is_err());
        assert!(backward(&model, &Matrix::zeros(2, 3), &[0], 0.0).is_err());
    }
}
