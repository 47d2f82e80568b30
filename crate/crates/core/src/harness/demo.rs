use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::data::{gen_diamond2d, Side};
use crate::fusion::fuse_concat_toy;
use crate::nn::{train, Activation, ModelWeights, Predictor, TrainConfig};
use crate::{Error, Result};

/// Samples per side for training and testing.
pub const DEMO_TRAIN: usize = 300;
pub const DEMO_TEST: usize = 150;
/// Global accuracy at or above which a seed counts as a fusion success.
pub const SUCCESS_THRESHOLD: f64 = 0.90;

/// A single ReLU unit trained at this learning rate goes dead in most seeds
/// and leaves the local model at chance level, so the demo defaults to the
/// leaky variant.
pub const DEMO_ACTIVATION: Activation = Activation::LeakyRelu;

const WIDTHS: [usize; 3] = [2, 1, 2];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DemoOutcome {
    /// Global accuracy at least [`SUCCESS_THRESHOLD`].
    Success,
    /// Global accuracy below both local accuracies.
    Fail,
    Neutral,
    /// A local model diverged; accuracies are NaN.
    Diverged,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Demo2dRecord {
    pub seed: u64,
    pub acc_left: f64,
    pub acc_right: f64,
    pub acc_global: f64,
    pub outcome: DemoOutcome,
}

pub fn classify(acc_left: f64, acc_right: f64, acc_global: f64) -> DemoOutcome {
    if acc_global >= SUCCESS_THRESHOLD {
        DemoOutcome::Success
    } else if acc_global < acc_left.min(acc_right) {
        DemoOutcome::Fail
    } else {
        DemoOutcome::Neutral
    }
}

/// Trained artifacts of one demo seed.
#[derive(Debug, Clone)]
pub struct DemoModels {
    pub left: ModelWeights,
    pub right: ModelWeights,
    pub global: ModelWeights,
}

/// Trains both one-neuron models for `seed` and fuses them by concatenation.
/// Returns the models and `(acc_left, acc_right, acc_global)` on the merged
/// test set.
pub fn demo2d_seed(seed: u64, activation: Activation) -> Result<(DemoModels, [f64; 3])> {
    let mut master = ChaCha8Rng::seed_from_u64(seed);
    let sub: Vec<u64> = (0..4).map(|_| master.next_u64()).collect();
    let (ltrain, ltest) = gen_diamond2d(Side::Left, DEMO_TRAIN, DEMO_TEST, sub[0])?;
    let (rtrain, rtest) = gen_diamond2d(Side::Right, DEMO_TRAIN, DEMO_TEST, sub[1])?;
    let test = ltest.concat(&rtest)?;
    let left = train(&ltrain.view(), &WIDTHS, activation, &TrainConfig::demo2d(sub[2], DEMO_TRAIN))?;
    let right = train(&rtrain.view(), &WIDTHS, activation, &TrainConfig::demo2d(sub[3], DEMO_TRAIN))?;
    let global = fuse_concat_toy(&left, &right)?;
    let accs = [left.accuracy(&test), right.accuracy(&test), global.accuracy(&test)];
    Ok((DemoModels { left, right, global }, accs))
}

/// [`run_demo2d_with`] using [`DEMO_ACTIVATION`].
pub fn run_demo2d(seeds: &[u64]) -> Result<Vec<Demo2dRecord>> {
    run_demo2d_with(seeds, DEMO_ACTIVATION)
}

/// One record per seed, in input order. Seeds whose training diverges are
/// reported as [`DemoOutcome::Diverged`] and logged.
pub fn run_demo2d_with(seeds: &[u64], activation: Activation) -> Result<Vec<Demo2dRecord>> {
    if seeds.is_empty() {
        return Err(Error::InvalidConfig("no seeds given".into()));
    }
    let mut out = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let record = match demo2d_seed(seed, activation) {
            Ok((_, [l, r, g])) => Demo2dRecord {
                seed,
                acc_left: l,
                acc_right: r,
                acc_global: g,
                outcome: classify(l, r, g),
            },
            Err(Error::Divergence { epoch, step }) => {
                log::warn!("demo2d seed {seed}: training diverged at epoch {epoch} step {step}; skipped");
                Demo2dRecord {
                    seed,
                    acc_left: f64::NAN,
                    acc_right: f64::NAN,
                    acc_global: f64::NAN,
                    outcome: DemoOutcome::Diverged,
                }
            }
            Err(e) => return Err(e),
        };
        out.push(record);
    }
    Ok(out)
}

pub fn write_demo_csv<W: std::io::Write>(w: W, records: &[Demo2dRecord]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    for r in records {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}
