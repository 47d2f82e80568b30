//! Datasets, ingestion, and non-IID client partitioning.

mod diamond;
mod mnist;
mod partition;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::nn::Matrix;
use crate::{Error, Result};

pub use diamond::{diamond_label, gen_diamond2d, in_sampling_region, Side};
pub use mnist::{load_mnist, load_mnist_dir, MnistFiles};
pub use partition::{
    largest_remainder_counts, partition_hetero_dir, partition_hetero_label, sample_dirichlet,
    PartitionKind, PartitionPlan,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Train,
    Test,
}

/// Feature rows with integer labels in `[0, num_classes)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    features: Matrix,
    labels: Vec<usize>,
    num_classes: usize,
    role: Role,
}

impl Dataset {
    pub fn new(features: Matrix, labels: Vec<usize>, num_classes: usize, role: Role) -> Result<Self> {
        if labels.is_empty() {
            return Err(Error::InvalidConfig("dataset has no samples".into()));
        }
        if features.rows() != labels.len() {
            return Err(Error::InvalidConfig(format!(
                "{} feature rows but {} labels",
                features.rows(),
                labels.len()
            )));
        }
        if let Some(&y) = labels.iter().find(|&&y| y >= num_classes) {
            return Err(Error::InvalidConfig(format!(
                "label {y} out of range for {num_classes} classes"
            )));
        }
        if !features.is_finite() {
            return Err(Error::InvalidConfig("non-finite feature".into()));
        }
        Ok(Self {
            features,
            labels,
            num_classes,
            role,
        })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.features.cols()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    #[inline]
    pub fn role(&self) -> Role {
        self.role
    }

    #[inline]
    pub fn features(&self) -> &Matrix {
        &self.features
    }

    #[inline]
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    #[inline]
    pub fn sample(&self, i: usize) -> &[f64] {
        self.features.row(i)
    }

    #[inline]
    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn one_hot(&self, i: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.num_classes];
        v[self.labels[i]] = 1.0;
        v
    }

    /// Per-class sample counts.
    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &y in &self.labels {
            counts[y] += 1;
        }
        counts
    }

    /// Indices of every sample, grouped by class.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_classes];
        for (i, &y) in self.labels.iter().enumerate() {
            out[y].push(i);
        }
        out
    }

    /// Indices of samples whose label is in `classes`.
    pub fn indices_with_labels(&self, classes: &[usize]) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect()
    }

    pub fn view(&self) -> DatasetView<'_> {
        DatasetView {
            parent: self,
            indices: (0..self.len()).collect(),
        }
    }

    pub fn select(&self, indices: Vec<usize>) -> DatasetView<'_> {
        DatasetView {
            parent: self,
            indices,
        }
    }

    /// Copies the selected samples into a new dataset.
    pub fn subset(&self, indices: &[usize]) -> Result<Dataset> {
        let dim = self.input_dim();
        let mut feats = Vec::with_capacity(indices.len() * dim);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            feats.extend_from_slice(self.sample(i));
            labels.push(self.labels[i]);
        }
        Dataset::new(
            Matrix::from_vec(indices.len(), dim, feats),
            labels,
            self.num_classes,
            self.role,
        )
    }

    /// Appends `other`'s samples after this one's.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if other.input_dim() != self.input_dim() || other.num_classes != self.num_classes {
            return Err(Error::InvalidConfig("cannot merge datasets of different shape".into()));
        }
        let mut feats = self.features.as_slice().to_vec();
        feats.extend_from_slice(other.features.as_slice());
        let mut labels = self.labels.clone();
        labels.extend_from_slice(&other.labels);
        Dataset::new(
            Matrix::from_vec(labels.len(), self.input_dim(), feats),
            labels,
            self.num_classes,
            self.role,
        )
    }

    /// Writes `x1,...,xI,label` rows with a header (`x1,x2,label` for 2D data).
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(w);
        let mut header: Vec<String> = (1..=self.input_dim()).map(|i| format!("x{i}")).collect();
        header.push("label".into());
        wtr.write_record(&header)?;
        for i in 0..self.len() {
            let mut rec: Vec<String> = self.sample(i).iter().map(|v| v.to_string()).collect();
            rec.push(self.labels[i].to_string());
            wtr.write_record(&rec)?;
        }
        wtr.flush()?;
        Ok(())
    }
}

/// A subset of a parent dataset addressed by sample indices (which may repeat).
#[derive(Debug, Clone)]
pub struct DatasetView<'a> {
    parent: &'a Dataset,
    indices: Vec<usize>,
}

impl<'a> DatasetView<'a> {
    #[inline]
    pub fn parent(&self) -> &'a Dataset {
        self.parent
    }

    #[inline]
    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    #[inline]
    pub fn input_dim(&self) -> usize {
        self.parent.input_dim()
    }

    #[inline]
    pub fn num_classes(&self) -> usize {
        self.parent.num_classes()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for &i in &self.indices {
            counts[self.parent.label(i)] += 1;
        }
        counts
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::evaluate_accuracy;

    #[test]
    fn construction_validates() {
        assert!(Dataset::new(Matrix::zeros(0, 2), vec![], 2, Role::Train).is_err());
        assert!(Dataset::new(Matrix::zeros(1, 2), vec![2], 2, Role::Train).is_err());
        assert!(Dataset::new(Matrix::zeros(2, 2), vec![0], 2, Role::Train).is_err());
        let nan = Matrix::from_vec(1, 1, vec![f64::NAN]);
        assert!(Dataset::new(nan, vec![0], 2, Role::Train).is_err());
    }

    #[test]
    fn constant_predictor_on_balanced_ten_classes_is_chance() {
        let labels: Vec<usize> = (0..1000).map(|i| i % 10).collect();
        let ds = Dataset::new(Matrix::zeros(1000, 3), labels, 10, Role::Test).unwrap();
        let constant = |_: &[f64]| 4usize;
        assert!((evaluate_accuracy(&constant, &ds) - 0.1).abs() < 1e-12);
    }

    #[test]
    fn csv_export_has_header() {
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![0.5, -1.0], vec![0.0, 0.25]]),
            vec![1, 0],
            2,
            Role::Train,
        )
        .unwrap();
        let mut out = Vec::new();
        ds.write_csv(&mut out).unwrap();
        assert_eq!(String::from_utf8(out).unwrap(), "x1,x2,label\n0.5,-1,1\n0,0.25,0\n");
    }

    #[test]
    fn subset_and_concat() {
        let ds = Dataset::new(
            Matrix::from_rows(&[vec![1.0], vec![2.0], vec![3.0]]),
            vec![0, 1, 0],
            2,
            Role::Train,
        )
        .unwrap();
        let sub = ds.subset(&[2, 0]).unwrap();
        assert_eq!(sub.features().as_slice(), &[3.0, 1.0]);
        let both = ds.concat(&sub).unwrap();
        assert_eq!(both.len(), 5);
        assert_eq!(both.class_counts(), vec![4, 1]);
        assert_eq!(ds.indices_with_labels(&[1]), vec![1]);
        assert_eq!(ds.select(vec![0, 0, 1]).class_counts(), vec![2, 1]);
    }
}
