//! Synthetic two-client 2D dataset.
//!
//! Samples lie in the band between `x2 = |x1| - 1` and `x2 = |x1| + 1` for
//! `x1` in `[-2, 2]`. The label is 1 above the V-shaped boundary `x2 = |x1|`
//! and 0 below. The left client sees `x1 <= 0.5`, the right client
//! `x1 >= -0.5`, so the two share only a narrow strip around the vertex.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{Dataset, Role};
use crate::nn::Matrix;
use crate::{Error, Result};

const X1_LIMIT: f64 = 2.0;
const SPLIT: f64 = 0.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    Left,
    Right,
}

impl Side {
    /// Closed `x1` interval sampled for this side.
    pub fn x1_range(self) -> (f64, f64) {
        match self {
            Side::Left => (-X1_LIMIT, SPLIT),
            Side::Right => (-SPLIT, X1_LIMIT),
        }
    }
}

/// Whether `(x1, x2)` lies in the sampling band.
pub fn in_sampling_region(x1: f64, x2: f64) -> bool {
    x1.abs() <= X1_LIMIT && x2 >= x1.abs() - 1.0 && x2 <= x1.abs() + 1.0
}

/// 1 iff the point lies strictly above `x2 = -x1` (for `x1 < 0`) or
/// `x2 = x1` (for `x1 >= 0`).
pub fn diamond_label(x1: f64, x2: f64) -> usize {
    let boundary = if x1 < 0.0 { -x1 } else { x1 };
    usize::from(x2 > boundary)
}

fn sample_points(side: Side, n: usize, rng: &mut ChaCha8Rng, role: Role) -> Result<Dataset> {
    let (lo, hi) = side.x1_range();
    let mut feats = Vec::with_capacity(2 * n);
    let mut labels = Vec::with_capacity(n);
    while labels.len() < n {
        let x1 = rng.gen_range(lo..=hi);
        let x2 = rng.gen_range(-1.0..=X1_LIMIT + 1.0);
        if in_sampling_region(x1, x2) {
            feats.push(x1);
            feats.push(x2);
            labels.push(diamond_label(x1, x2));
        }
    }
    Dataset::new(Matrix::from_vec(n, 2, feats), labels, 2, role)
}

/// Uniform rejection sampling of `n_train` then `n_test` points for one side.
pub fn gen_diamond2d(side: Side, n_train: usize, n_test: usize, seed: u64) -> Result<(Dataset, Dataset)> {
    if n_train == 0 || n_test == 0 {
        return Err(Error::InvalidConfig("sample counts must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let train = sample_points(side, n_train, &mut rng, Role::Train)?;
    let test = sample_points(side, n_test, &mut rng, Role::Test)?;
    Ok((train, test))
}
