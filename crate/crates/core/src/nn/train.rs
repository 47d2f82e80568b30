use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::backward::{forward_backward, Gradients, Workspace};
use super::{argmax, Activation, Matrix, ModelWeights};
use crate::data::{Dataset, DatasetView};
use crate::{Error, Result};

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Mini-batch Adam schedule. The learning rate is multiplied by
/// `decay_factor` every `decay_period_epochs` epochs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub decay_factor: f64,
    pub decay_period_epochs: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub l1_coefficient: f64,
    /// Overwritten per client by the experiment harness.
    #[serde(default)]
    pub seed: u64,
}

impl TrainConfig {
    /// MNIST MLP recipe: lr 0.001 decayed by 0.8 every 2 epochs, batch 64,
    /// 40 epochs, L1 1e-7.
    pub fn mnist(seed: u64) -> Self {
        Self {
            learning_rate: 1e-3,
            decay_factor: 0.8,
            decay_period_epochs: 2,
            batch_size: 64,
            epochs: 40,
            l1_coefficient: 1e-7,
            seed,
        }
    }

    /// One-neuron 2D demo: lr 0.5 for 600 full-batch epochs, no decay, no L1.
    pub fn demo2d(seed: u64, batch_size: usize) -> Self {
        Self {
            learning_rate: 0.5,
            decay_factor: 1.0,
            decay_period_epochs: 1,
            batch_size,
            epochs: 600,
            l1_coefficient: 0.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::InvalidConfig(msg.to_owned()));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be > 0");
        }
        if !(self.decay_factor > 0.0 && self.decay_factor <= 1.0) {
            return bad("decay_factor must be in (0, 1]");
        }
        if self.decay_period_epochs == 0 {
            return bad("decay_period_epochs must be >= 1");
        }
        if self.epochs == 0 {
            return bad("epochs must be >= 1");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if !(self.l1_coefficient >= 0.0 && self.l1_coefficient.is_finite()) {
            return bad("l1_coefficient must be >= 0");
        }
        Ok(())
    }

    /// Learning rate in effect during `epoch` (0-based).
    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        let steps = (epoch / self.decay_period_epochs) as i32;
        self.learning_rate * self.decay_factor.powi(steps)
    }
}

/// Draws the initial weights for `widths` from a generator seeded with `seed`.
pub fn init_model(widths: &[usize], activation: Activation, seed: u64) -> Result<ModelWeights> {
    ModelWeights::init(widths, activation, &mut ChaCha8Rng::seed_from_u64(seed))
}

/// Initializes and trains a model. Initialization, shuffling and batching all
/// draw from one generator seeded by `cfg.seed`.
pub fn train(
    data: &DatasetView<'_>,
    widths: &[usize],
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    cfg.validate()?;
    check_arch(data, widths)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let model = ModelWeights::init(widths, activation, &mut rng)?;
    fit(model, data, cfg, &mut rng)
}

/// Trains starting from given weights; shuffling is seeded by `cfg.seed`.
pub fn train_from(
    initial: ModelWeights,
    data: &DatasetView<'_>,
    cfg: &TrainConfig,
) -> Result<ModelWeights> {
    cfg.validate()?;
    check_arch(data, &initial.widths())?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    fit(initial, data, cfg, &mut rng)
}

fn check_arch(data: &DatasetView<'_>, widths: &[usize]) -> Result<()> {
    if data.is_empty() {
        return Err(Error::InvalidConfig("training set is empty".into()));
    }
    let (first, last) = (widths[0], widths[widths.len() - 1]);
    if first != data.input_dim() {
        return Err(Error::DimensionMismatch {
            layer: 0,
            expected: first,
            found: data.input_dim(),
        });
    }
    if last != data.num_classes() {
        return Err(Error::InvalidConfig(format!(
            "output width {last} does not match {} classes",
            data.num_classes()
        )));
    }
    Ok(())
}

struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    fn new(model: &ModelWeights) -> Self {
        let zeros = || {
            model
                .layers()
                .iter()
                .map(|l| vec![0.0; l.matrix().as_slice().len()])
                .collect::<Vec<_>>()
        };
        Self {
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut ModelWeights, grads: &Gradients, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - ADAM_BETA1.powi(self.t);
        let bc2 = 1.0 - ADAM_BETA2.powi(self.t);
        for (l, layer) in model.layers_mut().iter_mut().enumerate() {
            let w = layer.matrix_mut().as_mut_slice();
            let g = grads.layers[l].as_slice();
            let (m, v) = (&mut self.m[l], &mut self.v[l]);
            for i in 0..w.len() {
                m[i] = ADAM_BETA1 * m[i] + (1.0 - ADAM_BETA1) * g[i];
                v[i] = ADAM_BETA2 * v[i] + (1.0 - ADAM_BETA2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            }
        }
    }
}

fn fit<R: Rng>(
    mut model: ModelWeights,
    data: &DatasetView<'_>,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<ModelWeights> {
    let dim = data.input_dim();
    let batch_size = cfg.batch_size.min(data.len());
    let mut order: Vec<usize> = data.indices().to_vec();
    let mut ws = Workspace::new(&model);
    let mut grads = Gradients::zeros_like(&model);
    let mut adam = Adam::new(&model);
    let mut xs = vec![0.0; batch_size * dim];
    let mut ys = Vec::with_capacity(batch_size);
    let parent = data.parent();

    for epoch in 0..cfg.epochs {
        let lr = cfg.learning_rate_at(epoch);
        order.shuffle(rng);
        let mut epoch_loss = 0.0;
        // The trailing partial batch is kept.
        for (step, chunk) in order.chunks(batch_size).enumerate() {
            xs.resize(chunk.len() * dim, 0.0);
            ys.clear();
            for (r, &idx) in chunk.iter().enumerate() {
                xs[r * dim..(r + 1) * dim].copy_from_slice(parent.sample(idx));
                ys.push(parent.label(idx));
            }
            let loss = forward_backward(&model, &xs, &ys, &mut ws, &mut grads);
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, step });
            }
            grads.add_l1(&model, cfg.l1_coefficient);
            adam.step(&mut model, &grads, lr);
            epoch_loss += loss * chunk.len() as f64;
        }
        log::trace!(
            "epoch {epoch}: lr {lr:.3e} loss {:.5}",
            epoch_loss / order.len() as f64
        );
    }
    if model.layers().iter().any(|l| !l.matrix().is_finite()) {
        return Err(Error::Divergence {
            epoch: cfg.epochs - 1,
            step: order.len().div_ceil(batch_size) - 1,
        });
    }
    Ok(model)
}

/// Anything that maps a feature vector to a predicted class.
pub trait Predictor {
    fn predict(&self, x: &[f64]) -> usize;

    /// Fraction of samples whose predicted class equals the label.
    fn accuracy(&self, test: &Dataset) -> f64 {
        let hits = (0..test.len())
            .filter(|&i| self.predict(test.sample(i)) == test.label(i))
            .count();
        hits as f64 / test.len() as f64
    }
}

impl<F: Fn(&[f64]) -> usize> Predictor for F {
    fn predict(&self, x: &[f64]) -> usize {
        self(x)
    }
}

impl Predictor for ModelWeights {
    /// Panics if `x` does not match the input width.
    fn predict(&self, x: &[f64]) -> usize {
        argmax(&self.forward_logits(x).expect("input width"))
    }

    fn accuracy(&self, test: &Dataset) -> f64 {
        assert_eq!(test.input_dim(), self.input_dim(), "input width");
        const CHUNK: usize = 2048;
        let mut hits = 0usize;
        let dim = test.input_dim();
        let feats = test.features().as_slice();
        let mut start = 0;
        while start < test.len() {
            let end = (start + CHUNK).min(test.len());
            let xs = Matrix::from_vec(end - start, dim, feats[start * dim..end * dim].to_vec());
            let logits = self.logits_batch(&xs).expect("input width");
            hits += (start..end)
                .filter(|&i| argmax(logits.row(i - start)) == test.label(i))
                .count();
            start = end;
        }
        hits as f64 / test.len() as f64
    }
}

/// Accuracy of `predictor` on `test`, in `[0, 1]`.
pub fn evaluate_accuracy<P: Predictor + ?Sized>(predictor: &P, test: &Dataset) -> f64 {
    predictor.accuracy(test)
}
