//! Global block model: client networks laid side by side in one wide network.
//!
//! The first layer stacks the client first layers vertically, every further
//! hidden layer is block-diagonal, and the client output layers are kept as
//! separate heads. Each block therefore computes exactly its client's hidden
//! activations; fusion only happens once the heads are combined.

use super::DisturbingMatrix;
use crate::nn::{Activation, LayerWeights, Matrix, ModelWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct GlobalBlockModel {
    first_layer: LayerWeights,
    middle_layers: Vec<LayerWeights>,
    head_blocks: Vec<LayerWeights>,
    /// Column ranges of each client's block in the final hidden vector.
    head_ranges: Vec<(usize, usize)>,
    activation: Activation,
}

fn check_compatible(models: &[ModelWeights]) -> Result<()> {
    let Some(first) = models.first() else {
        return Err(Error::InvalidModel("no models to fuse".into()));
    };
    if first.depth() == 0 {
        return Err(Error::ArchitectureMismatch {
            model: 0,
            reason: "block fusion needs at least one hidden layer".into(),
        });
    }
    for (j, m) in models.iter().enumerate().skip(1) {
        let reason = if m.depth() != first.depth() {
            format!("depth {} differs from {}", m.depth(), first.depth())
        } else if m.input_dim() != first.input_dim() {
            format!("input width {} differs from {}", m.input_dim(), first.input_dim())
        } else if m.num_classes() != first.num_classes() {
            format!("{} classes differs from {}", m.num_classes(), first.num_classes())
        } else if m.activation() != first.activation() {
            "activation differs".into()
        } else {
            continue;
        };
        return Err(Error::ArchitectureMismatch { model: j, reason });
    }
    Ok(())
}

/// Vertical stack of the given layers (all sharing one input).
fn stack(layers: &[&LayerWeights]) -> Result<LayerWeights> {
    let cols = layers[0].matrix().cols();
    let rows: usize = layers.iter().map(|l| l.out_dim()).sum();
    let mut data = Vec::with_capacity(rows * cols);
    for l in layers {
        data.extend_from_slice(l.matrix().as_slice());
    }
    LayerWeights::new(Matrix::from_vec(rows, cols, data))
}

/// Block-diagonal composition; the shared trailing column holds every
/// block's bias.
fn block_diagonal(layers: &[&LayerWeights]) -> Result<LayerWeights> {
    let rows: usize = layers.iter().map(|l| l.out_dim()).sum();
    let inputs: usize = layers.iter().map(|l| l.in_dim()).sum();
    let mut m = Matrix::zeros(rows, inputs + 1);
    let (mut r0, mut c0) = (0, 0);
    for l in layers {
        for u in 0..l.out_dim() {
            let row = m.row_mut(r0 + u);
            row[c0..c0 + l.in_dim()].copy_from_slice(l.weights_of(u));
            row[inputs] = l.bias(u);
        }
        r0 += l.out_dim();
        c0 += l.in_dim();
    }
    LayerWeights::new(m)
}

impl GlobalBlockModel {
    /// Builds the block model from client models that share depth, input
    /// width, class count and activation.
    pub fn build(models: &[ModelWeights]) -> Result<Self> {
        check_compatible(models)?;
        let depth = models[0].depth();
        let first_layer = stack(&models.iter().map(|m| &m.layers()[0]).collect::<Vec<_>>())?;
        let middle_layers = (1..depth)
            .map(|l| block_diagonal(&models.iter().map(|m| &m.layers()[l]).collect::<Vec<_>>()))
            .collect::<Result<Vec<_>>>()?;
        let head_blocks: Vec<LayerWeights> =
            models.iter().map(|m| m.layers()[depth].clone()).collect();
        let mut head_ranges = Vec::with_capacity(models.len());
        let mut start = 0;
        for h in &head_blocks {
            head_ranges.push((start, start + h.in_dim()));
            start += h.in_dim();
        }
        Ok(Self {
            first_layer,
            middle_layers,
            head_blocks,
            head_ranges,
            activation: models[0].activation(),
        })
    }

    pub fn num_blocks(&self) -> usize {
        self.head_blocks.len()
    }

    pub fn first_layer(&self) -> &LayerWeights {
        &self.first_layer
    }

    pub fn middle_layers(&self) -> &[LayerWeights] {
        &self.middle_layers
    }

    pub fn head_blocks(&self) -> &[LayerWeights] {
        &self.head_blocks
    }

    /// Width of the concatenated final hidden layer.
    pub fn hidden_width(&self) -> usize {
        self.head_ranges.last().map_or(0, |r| r.1)
    }

    pub fn input_dim(&self) -> usize {
        self.first_layer.in_dim()
    }

    pub fn num_classes(&self) -> usize {
        self.head_blocks[0].out_dim()
    }

    /// Final hidden activation vector (all blocks concatenated).
    pub fn hidden(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                layer: 0,
                expected: self.input_dim(),
                found: x.len(),
            });
        }
        let mut cur = Vec::new();
        self.first_layer.affine(x, &mut cur);
        for v in &mut cur {
            *v = self.activation.apply(*v);
        }
        let mut next = Vec::new();
        for layer in &self.middle_layers {
            layer.affine(&cur, &mut next);
            for v in &mut next {
                *v = self.activation.apply(*v);
            }
            std::mem::swap(&mut cur, &mut next);
        }
        Ok(cur)
    }

    /// Disturbing matrix computed through the heads: column `j` is head `j`
    /// applied to block `j` of the shared hidden vector.
    pub fn disturbing_matrix(&self, x: &[f64]) -> Result<DisturbingMatrix> {
        let h = self.hidden(x)?;
        let columns: Vec<Vec<f64>> = self
            .head_blocks
            .iter()
            .zip(&self.head_ranges)
            .map(|(head, &(a, b))| {
                let mut out = Vec::new();
                head.affine(&h[a..b], &mut out);
                out
            })
            .collect();
        DisturbingMatrix::from_columns(&columns)
    }

    /// Collapses the heads into one output layer whose logits are the sum of
    /// every head's logits: weights concatenated side by side, biases summed.
    pub fn to_summed_model(&self) -> Result<ModelWeights> {
        let classes = self.num_classes();
        let width = self.hidden_width();
        let mut out = Matrix::zeros(classes, width + 1);
        for c in 0..classes {
            let row = out.row_mut(c);
            let mut bias = 0.0;
            for (head, &(a, b)) in self.head_blocks.iter().zip(&self.head_ranges) {
                row[a..b].copy_from_slice(head.weights_of(c));
                bias += head.bias(c);
            }
            row[width] = bias;
        }
        let mut layers = Vec::with_capacity(self.middle_layers.len() + 2);
        layers.push(self.first_layer.clone());
        layers.extend(self.middle_layers.iter().cloned());
        layers.push(LayerWeights::new(out)?);
        ModelWeights::new(layers, self.activation)
    }
}

pub fn build_global_block(models: &[ModelWeights]) -> Result<GlobalBlockModel> {
    GlobalBlockModel::build(models)
}

/// Direct concatenation of two single-hidden-layer networks: hidden units
/// stacked, output weights placed side by side. The fused logits are the sum
/// of the two local models' logits.
pub fn fuse_concat_toy(a: &ModelWeights, b: &ModelWeights) -> Result<ModelWeights> {
    for (j, m) in [a, b].into_iter().enumerate() {
        if m.depth() != 1 {
            return Err(Error::ArchitectureMismatch {
                model: j,
                reason: format!("expected one hidden layer, found {}", m.depth()),
            });
        }
    }
    GlobalBlockModel::build(&[a.clone(), b.clone()])?.to_summed_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::disturbing_matrix;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(widths: &[usize], seed: u64) -> ModelWeights {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let m = ModelWeights::init(widths, Activation::Relu, &mut rng).unwrap();
        // Non-zero biases so the bias column is exercised.
        let mut layers = m.layers().to_vec();
        for l in &mut layers {
            let mut mat = l.matrix().clone();
            let cols = mat.cols();
            for r in 0..mat.rows() {
                mat.set(r, cols - 1, rng.gen_range(-0.5..0.5));
            }
            *l = LayerWeights::new(mat).unwrap();
        }
        ModelWeights::new(layers, Activation::Relu).unwrap()
    }

    #[test]
    fn shapes_for_widths_three_and_five() {
        let g = GlobalBlockModel::build(&[model(&[4, 3, 2], 1), model(&[4, 5, 2], 2)]).unwrap();
        assert_eq!(g.first_layer().out_dim(), 8);
        assert_eq!(g.first_layer().in_dim(), 4);
        assert!(g.middle_layers().is_empty());
        assert_eq!(g.hidden_width(), 8);
        let shapes: Vec<_> = g
            .head_blocks()
            .iter()
            .map(|h| (h.matrix().rows(), h.matrix().cols()))
            .collect();
        assert_eq!(shapes, vec![(2, 4), (2, 6)]);
    }

    #[test]
    fn deeper_models_get_block_diagonal_middles() {
        let g =
            GlobalBlockModel::build(&[model(&[4, 3, 2, 2], 1), model(&[4, 5, 6, 2], 2)]).unwrap();
        let mid = &g.middle_layers()[0];
        assert_eq!((mid.out_dim(), mid.in_dim()), (8, 8));
        // off-diagonal blocks are zero
        for u in 0..2 {
            assert!(mid.weights_of(u)[3..].iter().all(|&w| w == 0.0));
        }
        for u in 2..8 {
            assert!(mid.weights_of(u)[..3].iter().all(|&w| w == 0.0));
        }
    }

    #[test]
    fn hidden_vector_is_concatenation_of_local_activations() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for depth_widths in [vec![6, 4, 3], vec![6, 4, 5, 3], vec![6, 2, 7, 3, 3]] {
            let mut w2 = depth_widths.clone();
            for w in &mut w2[1..depth_widths.len() - 1] {
                *w += 2;
            }
            let models = [model(&depth_widths, 7), model(&w2, 8)];
            let g = GlobalBlockModel::build(&models).unwrap();
            for _ in 0..10 {
                let x: Vec<f64> = (0..6).map(|_| rng.gen_range(-2.0..2.0)).collect();
                let h = g.hidden(&x).unwrap();
                let mut expected = Vec::new();
                for m in &models {
                    expected.extend(m.hidden_activations(&x).unwrap().pop().unwrap());
                }
                assert_eq!(h.len(), expected.len());
                for (a, b) in h.iter().zip(&expected) {
                    assert!((a - b).abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn identical_copies_give_identical_blocks() {
        let m = model(&[3, 4, 4, 2], 3);
        let g = GlobalBlockModel::build(&[m.clone(), m.clone(), m]).unwrap();
        let h = g.hidden(&[0.1, -0.4, 0.9]).unwrap();
        assert_eq!(h[0..4], h[4..8]);
        assert_eq!(h[4..8], h[8..12]);
    }

    #[test]
    fn block_heads_reproduce_per_model_logits_exactly() {
        let models = [model(&[5, 6, 4, 3], 1), model(&[5, 3, 2, 3], 2), model(&[5, 4, 4, 3], 3)];
        let g = GlobalBlockModel::build(&models).unwrap();
        let x = [0.3, -1.2, 0.8, 0.05, -0.6];
        assert_eq!(
            g.disturbing_matrix(&x).unwrap(),
            disturbing_matrix(&models, &x).unwrap()
        );
    }

    #[test]
    fn summed_model_adds_logits() {
        let models = [model(&[3, 4, 2, 2], 4), model(&[3, 3, 5, 2], 5)];
        let fused = GlobalBlockModel::build(&models).unwrap().to_summed_model().unwrap();
        let x = [0.7, -0.2, 1.1];
        let got = fused.forward_logits(&x).unwrap();
        let a = models[0].forward_logits(&x).unwrap();
        let b = models[1].forward_logits(&x).unwrap();
        for c in 0..2 {
            assert!((got[c] - (a[c] + b[c])).abs() <= 1e-12);
        }
    }

    #[test]
    fn concat_toy_of_one_neuron_nets() {
        let a = model(&[2, 1, 2], 10);
        let b = model(&[2, 1, 2], 11);
        let fused = fuse_concat_toy(&a, &b).unwrap();
        assert_eq!(fused.widths(), vec![2, 2, 2]);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            let x = [rng.gen_range(-2.0..2.0), rng.gen_range(-1.0..3.0)];
            let y = fused.forward_logits(&x).unwrap();
            let ya = a.forward_logits(&x).unwrap();
            let yb = b.forward_logits(&x).unwrap();
            for c in 0..2 {
                assert!((y[c] - (ya[c] + yb[c])).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn concat_toy_worked_example() {
        // Output-only nets: constant logits (4, -5) and (-2, 2) through a
        // single dead hidden unit.
        let net = |y: [f64; 2]| {
            ModelWeights::new(
                vec![
                    LayerWeights::new(Matrix::from_rows(&[vec![0.0, 0.0, 0.0]])).unwrap(),
                    LayerWeights::new(Matrix::from_rows(&[vec![0.0, y[0]], vec![0.0, y[1]]]))
                        .unwrap(),
                ],
                Activation::Relu,
            )
            .unwrap()
        };
        let fused = fuse_concat_toy(&net([4.0, -5.0]), &net([-2.0, 2.0])).unwrap();
        assert_eq!(fused.forward_logits(&[0.3, 0.3]).unwrap(), vec![2.0, -3.0]);
    }

    #[test]
    fn incompatible_models_rejected() {
        let err = GlobalBlockModel::build(&[model(&[3, 4, 2], 0), model(&[3, 4, 4, 2], 1)]);
        assert!(matches!(err, Err(Error::ArchitectureMismatch { model: 1, .. })));
        let err = GlobalBlockModel::build(&[model(&[3, 4, 2], 0), model(&[2, 4, 2], 1)]);
        assert!(matches!(err, Err(Error::ArchitectureMismatch { model: 1, .. })));
        let err = GlobalBlockModel::build(&[model(&[3, 4, 2], 0), model(&[3, 4, 3], 1)]);
        assert!(matches!(err, Err(Error::ArchitectureMismatch { model: 1, .. })));
        assert!(fuse_concat_toy(&model(&[3, 4, 4, 2], 0), &model(&[3, 4, 4, 2], 1)).is_err());
        assert!(GlobalBlockModel::build(&[]).is_err());
    }
}
