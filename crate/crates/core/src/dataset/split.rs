use super::{Dataset, Factor, GestureSample};
use crate::error::{Error, Result};

/// Ground-truth labels of the target split, index-aligned with
/// `DomainSplit::target`. Only evaluation and diagnostics read it.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetTruth {
    labels: Vec<Option<usize>>,
}

impl TargetTruth {
    pub fn new(labels: Vec<Option<usize>>) -> Self {
        TargetTruth { labels }
    }

    pub fn label(&self, index: usize) -> Option<usize> {
        self.labels.get(index).copied().flatten()
    }

    pub fn labels(&self) -> &[Option<usize>] {
        &self.labels
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct DomainSplit {
    pub source: Dataset,
    pub target: Dataset,
    pub target_truth: TargetTruth,
}

/// Hold out every sample whose `factor` equals `held` as the unlabeled target;
/// everything else is the labeled source.
pub fn split_leave_one_out(ds: &Dataset, factor: Factor, held: &str) -> Result<DomainSplit> {
    if !ds.samples().iter().any(|s| s.domain.get(factor) == held) {
        return Err(Error::Usage(format!(
            "{factor} `{held}` does not occur in the dataset (values: {})",
            ds.domain_values(factor).join(", ")
        )));
    }
    let mut source = Vec::new();
    let mut target = Vec::new();
    let mut truth = Vec::new();
    for s in ds.samples() {
        if s.domain.get(factor) == held {
            truth.push(s.label);
            target.push(GestureSample {
                label: None,
                ..s.clone()
            });
        } else {
            source.push(s.clone());
        }
    }
    Ok(DomainSplit {
        source: Dataset::new(ds.class_count(), source)?,
        target: Dataset::new(ds.class_count(), target)?,
        target_truth: TargetTruth::new(truth),
    })
}
