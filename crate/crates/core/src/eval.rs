//! Target-domain accuracy and confusion matrix.

use crate::dataset::{Dataset, TargetTruth};
use crate::error::{Error, Result};
use crate::rfnet::{ModelParams, Predictor};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub accuracy: f64,
    /// NaN for classes without samples.
    pub per_class_accuracy: Vec<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
    pub count: usize,
}

impl EvalReport {
    fn from_confusion(confusion: Vec<Vec<usize>>) -> Self {
        let count: usize = confusion.iter().flatten().sum();
        let trace: usize = (0..confusion.len()).map(|i| confusion[i][i]).sum();
        let per_class_accuracy = confusion
            .iter()
            .enumerate()
            .map(|(i, row)| {
                let n: usize = row.iter().sum();
                if n == 0 {
                    f64::NAN
                } else {
                    row[i] as f64 / n as f64
                }
            })
            .collect();
        EvalReport {
            accuracy: if count == 0 { f64::NAN } else { trace as f64 / count as f64 },
            per_class_accuracy,
            confusion,
            count,
        }
    }
}

/// Eval-mode prediction on every sample that has a truth label; argmax with
/// ties to the lowest class.
pub fn evaluate(params: &ModelParams, data: &Dataset, truth: &TargetTruth) -> Result<EvalReport> {
    if truth.len() != data.len() {
        return Err(Error::Usage(format!(
            "{} truth labels for {} samples",
            truth.len(),
            data.len()
        )));
    }
    let labels: Vec<Option<usize>> = truth.labels().to_vec();
    evaluate_pairs(params, data, &labels)
}

/// [`evaluate`] against the dataset's own labels.
pub fn evaluate_labeled(params: &ModelParams, data: &Dataset) -> Result<EvalReport> {
    let labels: Vec<Option<usize>> = data.samples().iter().map(|s| s.label).collect();
    evaluate_pairs(params, data, &labels)
}

fn evaluate_pairs(params: &ModelParams, data: &Dataset, labels: &[Option<usize>]) -> Result<EvalReport> {
    let arch = params.arch();
    if let Some(g) = data.geometry() {
        if g.grid != arch.grid {
            return Err(Error::Usage(format!(
                "model expects {0}x{0} frames, dataset has {1}x{1}",
                arch.grid, g.grid
            )));
        }
    }
    if data.class_count() != arch.classes {
        return Err(Error::Usage(format!(
            "model has {} classes, dataset {}",
            arch.classes,
            data.class_count()
        )));
    }
    let c = arch.classes;
    let mut confusion = vec![vec![0usize; c]; c];
    let mut predictor = Predictor::new(params);
    for (s, label) in data.samples().iter().zip(labels) {
        let Some(label) = *label else { continue };
        let p = predictor.predict(&s.frames)?;
        confusion[label][Tensor::argmax(&p)] += 1;
    }
    Ok(EvalReport::from_confusion(confusion))
}
