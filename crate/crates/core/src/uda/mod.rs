//! Pseudo-labeling with a growing confidence threshold, consistency loss on
//! erased views, the confidence-control constraint and the combined
//! objective.

mod batch;
mod train;

use std::fmt;
use std::str::FromStr;

pub use batch::{compose_batch, Batch, EpochOrder};
pub use train::{EpochReport, Trainer, EPOCH_CSV_HEADER};

use crate::augment::AugmentPolicy;
use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Denominator of the confidence constraint.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LcDivisor {
    /// Number of pseudo labels in the step, falling back to `muB` when there
    /// are none.
    PseudoCount,
    /// Number of unlabeled rows, `muB`.
    MuB,
}

impl LcDivisor {
    pub fn name(self) -> &'static str {
        match self {
            LcDivisor::PseudoCount => "pseudo_count",
            LcDivisor::MuB => "mu_b",
        }
    }

    pub fn resolve(self, pseudo_count: usize, unlabeled_rows: usize) -> f64 {
        match self {
            LcDivisor::PseudoCount if pseudo_count > 0 => pseudo_count as f64,
            _ => unlabeled_rows as f64,
        }
    }
}

impl fmt::Display for LcDivisor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for LcDivisor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pseudo_count" => Ok(LcDivisor::PseudoCount),
            "mu_b" => Ok(LcDivisor::MuB),
            _ => Err(Error::Config(format!("lc_divisor `{s}` (expected pseudo_count or mu_b)"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Labeled rows per step (`B`).
    pub batch_size: usize,
    /// Unlabeled rows per step are `mu * batch_size`.
    pub mu: usize,
    pub tau0: f64,
    /// Threshold increment per epoch.
    pub tau_step: f64,
    pub tau_max: f64,
    /// Weight of the consistency loss.
    pub lambda_u: f64,
    /// Weight of the confidence constraint.
    pub eta_c: f64,
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub seed: u64,
    pub augment: AugmentPolicy,
    pub lc_divisor: LcDivisor,
    /// Compute the unlabeled predictions without dropout.
    pub clean_pseudo_forward: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            mu: 1,
            tau0: 0.92,
            tau_step: 0.001,
            tau_max: 0.99,
            lambda_u: 1.0,
            eta_c: 0.92,
            learning_rate: 0.01,
            momentum: 0.9,
            epochs: 50,
            seed: 0,
            augment: AugmentPolicy::default_for(16, 24),
            lc_divisor: LcDivisor::PseudoCount,
            clean_pseudo_forward: false,
        }
    }
}

impl TrainConfig {
    pub fn unlabeled_per_batch(&self) -> usize {
        self.mu * self.batch_size
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return fail("batch_size must be >= 1".into());
        }
        if !(self.tau0 > 0.0 && self.tau0 < 1.0) {
            return fail(format!("tau0 {} outside (0, 1)", self.tau0));
        }
        if !(self.tau_max <= 1.0 && self.tau_max.is_finite()) {
            return fail(format!("tau_max {} must be <= 1", self.tau_max));
        }
        if !(self.tau_step.is_finite() && self.tau_step >= 0.0) {
            return fail(format!("tau_step {} must be >= 0", self.tau_step));
        }
        if !(self.lambda_u >= 0.0 && self.lambda_u.is_finite()) {
            return fail(format!("lambda_u {} must be >= 0", self.lambda_u));
        }
        if !(self.eta_c >= 0.0 && self.eta_c.is_finite()) {
            return fail(format!("eta_c {} must be >= 0", self.eta_c));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return fail(format!("momentum {} outside [0, 1)", self.momentum));
        }
        Ok(())
    }
}

/// `min(tau0 + tau_step * epoch, tau_max)`.
pub fn dynamic_threshold(tau0: f64, tau_step: f64, epoch: usize, tau_max: f64) -> f64 {
    (tau0 + tau_step * epoch as f64).min(tau_max)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PseudoLabel {
    /// Row within the unlabeled partition.
    pub row: usize,
    pub class: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PseudoLabelSet {
    pub labels: Vec<PseudoLabel>,
    pub classes: usize,
    /// `|labels| / rows`; zero for an empty partition.
    pub coverage: f64,
}

impl PseudoLabelSet {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// One-hot target vector of an entry.
    pub fn one_hot(&self, label: &PseudoLabel) -> Vec<f64> {
        let mut v = vec![0.0; self.classes];
        v[label.class] = 1.0;
        v
    }
}

/// Hard labels for every row whose largest probability reaches `tau`.
/// Ties resolve to the lowest class index. The result holds plain values, so
/// nothing downstream can differentiate through it.
pub fn pseudo_label(probs: &Tensor, tau: f64) -> PseudoLabelSet {
    let (rows, classes) = match probs.shape() {
        &[r, c] => (r, c),
        s => panic!("pseudo_label expects a matrix, got {s:?}"),
    };
    let labels: Vec<PseudoLabel> = (0..rows)
        .filter_map(|row| {
            let p = probs.outer(row);
            let class = Tensor::argmax(p);
            (p[class] >= tau).then_some(PseudoLabel { row, class })
        })
        .collect();
    let coverage = if rows == 0 { 0.0 } else { labels.len() as f64 / rows as f64 };
    PseudoLabelSet {
        labels,
        classes,
        coverage,
    }
}

/// Cross-entropy between pseudo labels and the augmented-view predictions,
/// averaged over the pseudo labels; a constant zero when there are none.
pub fn consistency_loss(tape: &mut Tape, pseudo: &PseudoLabelSet, augmented: Option<Var>) -> Result<Var> {
    let Some(augmented) = augmented.filter(|_| !pseudo.is_empty()) else {
        return Ok(tape.constant(Tensor::scalar(0.0)));
    };
    let p = tape.value(augmented);
    let (rows, classes) = (p.shape()[0], p.shape()[1]);
    if classes != pseudo.classes {
        return Err(Error::dim("consistency_loss", "classes", pseudo.classes, classes));
    }
    let mut weights = vec![0.0; rows * classes];
    for l in &pseudo.labels {
        if l.row >= rows {
            return Err(Error::Usage(format!("pseudo label row {} outside {rows} rows", l.row)));
        }
        weights[l.row * classes + l.class] = 1.0;
    }
    tape.neg_weighted_log(augmented, weights, 1.0 / pseudo.len() as f64)
}

/// `-(1 / divisor) * sum over all unlabeled rows and classes of ln p`.
pub fn confidence_constraint(tape: &mut Tape, unlabeled: Var, divisor: f64) -> Result<Var> {
    if !(divisor > 0.0) {
        return Err(Error::Usage(format!("confidence constraint divisor {divisor} must be positive")));
    }
    let n = tape.value(unlabeled).numel();
    tape.neg_weighted_log(unlabeled, vec![1.0; n], 1.0 / divisor)
}

/// `L_a + lambda_u * L_u + eta_c * L_c`.
pub fn total_objective(
    tape: &mut Tape,
    loss_a: Var,
    loss_u: Var,
    loss_c: Var,
    lambda_u: f64,
    eta_c: f64,
) -> Result<Var> {
    let u = tape.scale(loss_u, lambda_u);
    let c = tape.scale(loss_c, eta_c);
    let au = tape.add(loss_a, u)?;
    tape.add(au, c)
}
