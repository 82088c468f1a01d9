//! Overall and class-averaged accuracy.

use serde::Serialize;

use crate::error::{BtnError, Result};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    /// Correct predictions over all samples.
    pub overall_acc: f64,
    /// Per-class recall; `NaN` for classes with no samples.
    pub per_class_acc: Vec<f64>,
    /// Unweighted mean of `per_class_acc` over classes that have samples.
    pub mean_acc: f64,
    /// `confusion[true][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

impl Metrics {
    pub fn from_predictions(predicted: &[usize], labels: &[usize], num_classes: usize) -> Result<Metrics> {
        if predicted.len() != labels.len() || labels.is_empty() {
            return Err(BtnError::data(format!(
                "{} predictions for {} labels",
                predicted.len(),
                labels.len()
            )));
        }
        let mut confusion = vec![vec![0usize; num_classes]; num_classes];
        for (&p, &l) in predicted.iter().zip(labels) {
            if p >= num_classes || l >= num_classes {
                return Err(BtnError::data(format!(
                    "class index beyond {num_classes} classes"
                )));
            }
            confusion[l][p] += 1;
        }
        let correct: usize = (0..num_classes).map(|c| confusion[c][c]).sum();
        let per_class_acc: Vec<f64> = confusion
            .iter()
            .enumerate()
            .map(|(c, row)| {
                let support: usize = row.iter().sum();
                if support == 0 {
                    f64::NAN
                } else {
                    row[c] as f64 / support as f64
                }
            })
            .collect();
        let present: Vec<f64> = per_class_acc.iter().copied().filter(|a| !a.is_nan()).collect();
        Ok(Metrics {
            overall_acc: correct as f64 / labels.len() as f64,
            mean_acc: present.iter().sum::<f64>() / present.len() as f64,
            per_class_acc,
            confusion,
        })
    }
}

/// Index of the largest entry of each row of `[B, N]` logits; ties go to the
/// lower index.
pub fn argmax_rows(logits: &[f64], num_classes: usize) -> Vec<usize> {
    logits
        .chunks(num_classes)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold(
                    (0, f64::NEG_INFINITY),
                    |best, (i, &v)| if v > best.1 { (i, v) } else { best },
                )
                .0
        })
        .collect()
}
