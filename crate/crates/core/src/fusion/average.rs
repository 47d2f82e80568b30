//! Coordinate-wise parameter averaging.

use crate::nn::{Matrix, ModelWeights};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Weighting {
    /// Every client counts equally.
    #[default]
    Uniform,
    /// Clients weighted by local sample count.
    BySamples,
}

/// Averages same-shape models. `sizes` is only read for
/// [`Weighting::BySamples`].
///
/// Computed as `w_0 + sum_j p_j (w_j - w_0)`, so averaging copies of one model
/// returns it bit for bit.
pub fn fuse_fedavg(models: &[ModelWeights], sizes: &[usize], weighting: Weighting) -> Result<ModelWeights> {
    let Some(base) = models.first() else {
        return Err(Error::InvalidModel("no models to average".into()));
    };
    for (j, m) in models.iter().enumerate().skip(1) {
        if !m.same_shape(base) || m.activation() != base.activation() {
            return Err(Error::ArchitectureMismatch {
                model: j,
                reason: format!("shape {:?} differs from {:?}", m.widths(), base.widths()),
            });
        }
    }
    let weights: Vec<f64> = match weighting {
        Weighting::Uniform => vec![1.0 / models.len() as f64; models.len()],
        Weighting::BySamples => {
            if sizes.len() != models.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} sample counts for {} models",
                    sizes.len(),
                    models.len()
                )));
            }
            let total: usize = sizes.iter().sum();
            if total == 0 {
                return Err(Error::InvalidConfig("all clients are empty".into()));
            }
            sizes.iter().map(|&n| n as f64 / total as f64).collect()
        }
    };
    let mut out = base.clone();
    for (l, layer) in out.layers_mut().iter_mut().enumerate() {
        let acc: &mut Matrix = layer.matrix_mut();
        let base_vals = base.layers()[l].matrix().as_slice();
        let mut delta = vec![0.0; base_vals.len()];
        for (m, &p) in models.iter().zip(&weights).skip(1) {
            for ((d, &w), &w0) in delta.iter_mut().zip(m.layers()[l].matrix().as_slice()).zip(base_vals) {
                *d += p * (w - w0);
            }
        }
        for (a, d) in acc.as_mut_slice().iter_mut().zip(delta) {
            *a += d;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn models(count: usize, widths: &[usize]) -> Vec<ModelWeights> {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        (0..count)
            .map(|_| ModelWeights::init(widths, Activation::Relu, &mut rng).unwrap())
            .collect()
    }

    #[test]
    fn copies_average_to_themselves() {
        let m = models(1, &[5, 7, 3]).pop().unwrap();
        let copies = vec![m.clone(); 4];
        assert_eq!(fuse_fedavg(&copies, &[], Weighting::Uniform).unwrap(), m);
        assert_eq!(fuse_fedavg(&copies, &[3, 1, 9, 2], Weighting::BySamples).unwrap(), m);
    }

    #[test]
    fn matches_direct_weighted_mean() {
        let ms = models(3, &[4, 6, 2]);
        let sizes = [10, 30, 60];
        let avg = fuse_fedavg(&ms, &sizes, Weighting::BySamples).unwrap();
        for l in 0..2 {
            let got = avg.layers()[l].matrix().as_slice();
            for (i, g) in got.iter().enumerate() {
                let want: f64 = ms
                    .iter()
                    .zip(sizes)
                    .map(|(m, n)| m.layers()[l].matrix().as_slice()[i] * n as f64 / 100.0)
                    .sum();
                assert!((g - want).abs() < 1e-14);
            }
        }
        let uni = fuse_fedavg(&ms, &[], Weighting::Uniform).unwrap();
        let x = uni.layers()[0].matrix().get(1, 2);
        let want: f64 = ms.iter().map(|m| m.layers()[0].matrix().get(1, 2)).sum::<f64>() / 3.0;
        assert!((x - want).abs() < 1e-14);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut ms = models(2, &[4, 6, 2]);
        ms.extend(models(1, &[4, 5, 2]));
        assert!(matches!(
            fuse_fedavg(&ms, &[], Weighting::Uniform),
            Err(Error::ArchitectureMismatch { model: 2, .. })
        ));
        assert!(fuse_fedavg(&[], &[], Weighting::Uniform).is_err());
        assert!(fuse_fedavg(&models(2, &[2, 2]), &[1], Weighting::BySamples).is_err());
    }
}
