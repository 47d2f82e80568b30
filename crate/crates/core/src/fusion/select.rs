//! Adaptive model selection over the disturbing matrix.

use std::io::Write;

use crate::nn::{argmax, softmax, Matrix, ModelWeights};
use crate::{Error, Result};

/// `C x J` matrix whose column `j` holds client `j`'s pre-softmax logits on
/// one input.
#[derive(Debug, Clone, PartialEq)]
pub struct DisturbingMatrix {
    values: Matrix,
}

impl DisturbingMatrix {
    pub fn from_columns(columns: &[Vec<f64>]) -> Result<Self> {
        let Some(first) = columns.first() else {
            return Err(Error::InvalidModel("disturbing matrix needs at least one model".into()));
        };
        let classes = first.len();
        if classes == 0 {
            return Err(Error::InvalidModel("empty logit vector".into()));
        }
        let mut values = Matrix::zeros(classes, columns.len());
        for (j, col) in columns.iter().enumerate() {
            if col.len() != classes {
                return Err(Error::ArchitectureMismatch {
                    model: j,
                    reason: format!("{} logits, expected {classes}", col.len()),
                });
            }
            if col.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidModel(format!("non-finite logit from model {j}")));
            }
            for (c, v) in col.iter().enumerate() {
                values.set(c, j, *v);
            }
        }
        Ok(Self { values })
    }

    /// Gathers column `j` from row `sample` of `tables[j]` (one `n x C`
    /// logit table per model).
    pub fn from_tables(tables: &[Matrix], sample: usize) -> Result<Self> {
        let cols: Vec<Vec<f64>> = tables.iter().map(|t| t.row(sample).to_vec()).collect();
        Self::from_columns(&cols)
    }

    pub fn num_classes(&self) -> usize {
        self.values.rows()
    }

    pub fn num_models(&self) -> usize {
        self.values.cols()
    }

    pub fn get(&self, class: usize, model: usize) -> f64 {
        self.values.get(class, model)
    }

    pub fn values(&self) -> &Matrix {
        &self.values
    }

    pub fn column(&self, model: usize) -> Vec<f64> {
        (0..self.num_classes()).map(|c| self.values.get(c, model)).collect()
    }

    /// Largest logit of each model.
    pub fn column_maxima(&self) -> Vec<f64> {
        (0..self.num_models())
            .map(|j| {
                (0..self.num_classes())
                    .map(|c| self.values.get(c, j))
                    .fold(f64::NEG_INFINITY, f64::max)
            })
            .collect()
    }

    /// Model indices ordered by decreasing largest logit, ties to the lower
    /// index.
    pub fn confidence_order(&self) -> Vec<usize> {
        let maxima = self.column_maxima();
        let mut order: Vec<usize> = (0..self.num_models()).collect();
        order.sort_by(|&a, &b| maxima[b].total_cmp(&maxima[a]).then(a.cmp(&b)));
        order
    }

    /// Elementwise sum of the `k` most confident columns.
    pub fn top_k_logits(&self, k: usize) -> Result<Vec<f64>> {
        if k == 0 || k > self.num_models() {
            return Err(Error::InvalidConfig(format!(
                "k = {k} outside [1, {}]",
                self.num_models()
            )));
        }
        let mut sum = vec![0.0; self.num_classes()];
        for j in self.confidence_order().into_iter().take(k) {
            for (c, s) in sum.iter_mut().enumerate() {
                *s += self.values.get(c, j);
            }
        }
        Ok(sum)
    }

    /// Uniform average of the per-model softmax distributions.
    pub fn ensemble_probs(&self) -> Vec<f64> {
        let j_count = self.num_models();
        let mut avg = vec![0.0; self.num_classes()];
        for j in 0..j_count {
            for (a, p) in avg.iter_mut().zip(softmax(&self.column(j))) {
                *a += p;
            }
        }
        for a in &mut avg {
            *a /= j_count as f64;
        }
        avg
    }

    /// Appends `sample_id,c,j,logit` rows.
    pub fn write_csv_rows<W: Write>(&self, wtr: &mut csv::Writer<W>, sample_id: usize) -> Result<()> {
        for c in 0..self.num_classes() {
            for j in 0..self.num_models() {
                wtr.write_record(&[
                    sample_id.to_string(),
                    c.to_string(),
                    j.to_string(),
                    self.values.get(c, j).to_string(),
                ])?;
            }
        }
        Ok(())
    }
}

/// Writes the header plus every matrix's rows, numbering samples from 0.
pub fn write_disturbing_csv<W: Write>(w: W, matrices: &[DisturbingMatrix]) -> Result<()> {
    let mut wtr = csv::Writer::from_writer(w);
    wtr.write_record(["sample_id", "c", "j", "logit"])?;
    for (i, m) in matrices.iter().enumerate() {
        m.write_csv_rows(&mut wtr, i)?;
    }
    wtr.flush()?;
    Ok(())
}

/// Per-model forward passes on `x`, one column per model.
pub fn disturbing_matrix(models: &[ModelWeights], x: &[f64]) -> Result<DisturbingMatrix> {
    let cols = models
        .iter()
        .map(|m| m.forward_logits(x))
        .collect::<Result<Vec<_>>>()?;
    DisturbingMatrix::from_columns(&cols)
}

/// Index of the model with the largest single logit; lowest index on ties.
pub fn ams_select(m: &DisturbingMatrix) -> usize {
    argmax(&m.column_maxima())
}

fn check_same_depth(models: &[ModelWeights]) -> Result<()> {
    if let Some(first) = models.first() {
        if let Some(j) = models.iter().position(|m| m.depth() != first.depth()) {
            return Err(Error::ArchitectureMismatch {
                model: j,
                reason: "depths differ; use the cross-architecture selector".into(),
            });
        }
    }
    Ok(())
}

/// AMS-top1: softmax of the single most confident model's logits.
pub fn predict_ams_top1(models: &[ModelWeights], x: &[f64]) -> Result<Vec<f64>> {
    check_same_depth(models)?;
    let m = disturbing_matrix(models, x)?;
    Ok(softmax(&m.column(ams_select(&m))))
}

/// AMS-top-k: softmax of the summed logits of the `k` most confident models.
/// `k = 1` is AMS-top1 and `k = J` is AMS-full.
pub fn predict_ams_topk(models: &[ModelWeights], x: &[f64], k: usize) -> Result<Vec<f64>> {
    let m = disturbing_matrix(models, x)?;
    Ok(softmax(&m.top_k_logits(k)?))
}

/// AMS-full: softmax of the sum of every model's logits.
pub fn predict_ams_full(models: &[ModelWeights], x: &[f64]) -> Result<Vec<f64>> {
    predict_ams_topk(models, x, models.len())
}

/// Selection across models of any depth that share input width and class
/// count. Logit scales are compared as-is.
pub fn predict_ams_cross(models: &[ModelWeights], x: &[f64]) -> Result<Vec<f64>> {
    let m = disturbing_matrix(models, x)?;
    Ok(softmax(&m.column(ams_select(&m))))
}

/// Largest exponentiated logit `max_c exp(f_c(x))`, held in log space.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd)]
pub struct AbsoluteConfidence {
    max_logit: f64,
}

impl AbsoluteConfidence {
    /// Natural log of the confidence (the largest logit).
    pub fn ln(self) -> f64 {
        self.max_logit
    }

    pub fn log10(self) -> f64 {
        self.max_logit / std::f64::consts::LN_10
    }

    /// The confidence itself; infinite once the logit exceeds ~709.
    pub fn value(self) -> f64 {
        self.max_logit.exp()
    }
}

pub fn absolute_confidence(model: &ModelWeights, x: &[f64]) -> Result<AbsoluteConfidence> {
    let logits = model.forward_logits(x)?;
    Ok(AbsoluteConfidence {
        max_logit: logits.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}
