use super::{
    compose_batch, confidence_constraint, consistency_loss, dynamic_threshold, pseudo_label,
    total_objective, Batch, EpochOrder, TrainConfig,
};
use crate::dataset::{Dataset, TargetTruth};
use crate::error::{Error, Result};
use crate::eval::evaluate;
use crate::rfnet::{classification_loss, one_hot, ModelParams};
use crate::rng::{stream, Purpose, Stream};
use crate::tensor::{Mode, SgdState, Tape, Tensor};

pub const EPOCH_CSV_HEADER: &str =
    "epoch,L_a,L_u,L_c,L,tau_d,pseudo_count,pseudo_coverage,pseudo_acc,target_acc";

/// Per-epoch summary. Loss columns are means over the epoch's steps.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochReport {
    pub epoch: usize,
    pub loss_a: f64,
    pub loss_u: f64,
    pub loss_c: f64,
    pub loss_total: f64,
    pub tau_d: f64,
    pub pseudo_count: usize,
    pub pseudo_coverage: f64,
    /// Fraction of pseudo labels matching the sequestered truth; NaN without
    /// truth or pseudo labels.
    pub pseudo_acc: f64,
    /// Eval-mode accuracy on the target pool after the epoch; NaN without
    /// truth.
    pub target_acc: f64,
    pub confusion: Option<Vec<Vec<usize>>>,
}

impl EpochReport {
    /// One CSV line (no newline) in [`EPOCH_CSV_HEADER`] order. Floats use
    /// the shortest round-trip representation.
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{}",
            self.epoch,
            self.loss_a,
            self.loss_u,
            self.loss_c,
            self.loss_total,
            self.tau_d,
            self.pseudo_count,
            self.pseudo_coverage,
            self.pseudo_acc,
            self.target_acc
        )
    }
}

/// Losses and pseudo-label bookkeeping of one optimizer step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepStats {
    pub loss_a: f64,
    pub loss_u: f64,
    pub loss_c: f64,
    pub loss_total: f64,
    pub pseudo_count: usize,
    pub pseudo_correct: usize,
}

/// Model parameters plus optimizer state across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    params: ModelParams,
    sgd: SgdState,
    config: TrainConfig,
}

impl Trainer {
    pub fn new(params: ModelParams, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let arch = params.arch();
        config.augment.validate(arch.grid, arch.frames)?;
        let sgd = SgdState::new(config.learning_rate, config.momentum, &params.sizes())?;
        Ok(Trainer { params, sgd, config })
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn into_params(self) -> ModelParams {
        self.params
    }

    pub fn config(&self) -> &TrainConfig {
        &self.config
    }

    /// One pass over the labeled pool.
    pub fn train_epoch(
        &mut self,
        source: &Dataset,
        target: &Dataset,
        truth: Option<&TargetTruth>,
        epoch: usize,
    ) -> Result<EpochReport> {
        let cfg = self.config.clone();
        let order = EpochOrder::new(source.len(), target.len(), &cfg, epoch);
        if order.steps() == 0 {
            return Err(Error::Usage(format!(
                "batch_size {} exceeds the {} labeled samples",
                cfg.batch_size,
                source.len()
            )));
        }
        let tau_d = dynamic_threshold(cfg.tau0, cfg.tau_step, epoch, cfg.tau_max);
        let (mut la, mut lu, mut lc, mut lt) = (0.0, 0.0, 0.0, 0.0);
        let (mut pseudo, mut pseudo_correct) = (0usize, 0usize);
        for step in 0..order.steps() {
            let batch = compose_batch(source, target, &order, step, &cfg.augment, cfg.seed, epoch)?;
            let s = self.step(&batch, tau_d, epoch, step, truth)?;
            la += s.loss_a;
            lu += s.loss_u;
            lc += s.loss_c;
            lt += s.loss_total;
            pseudo += s.pseudo_count;
            pseudo_correct += s.pseudo_correct;
        }
        let steps = order.steps() as f64;
        let unlabeled_total = order.steps() * cfg.unlabeled_per_batch();
        let eval = match truth {
            Some(t) if !target.is_empty() => Some(evaluate(&self.params, target, t)?),
            _ => None,
        };
        Ok(EpochReport {
            epoch,
            loss_a: la / steps,
            loss_u: lu / steps,
            loss_c: lc / steps,
            loss_total: lt / steps,
            tau_d,
            pseudo_count: pseudo,
            pseudo_coverage: if unlabeled_total == 0 {
                0.0
            } else {
                pseudo as f64 / unlabeled_total as f64
            },
            pseudo_acc: if truth.is_some() && pseudo > 0 {
                pseudo_correct as f64 / pseudo as f64
            } else {
                f64::NAN
            },
            target_acc: eval.as_ref().map_or(f64::NAN, |e| e.accuracy),
            confusion: eval.map(|e| e.confusion),
        })
    }

    /// Forward, loss, backward and SGD update on one composed batch.
    pub fn step(
        &mut self,
        batch: &Batch,
        tau_d: f64,
        epoch: usize,
        step: usize,
        truth: Option<&TargetTruth>,
    ) -> Result<StepStats> {
        let cfg = &self.config;
        let classes = self.params.arch().classes;
        let mut tape = Tape::new();
        let net = self.params.register(&mut tape, true);
        let mut streams: Vec<Stream> = (0..batch.inputs.len())
            .map(|row| stream(cfg.seed, Purpose::Dropout, &[epoch as u64, step as u64, row as u64]))
            .collect();
        let inputs: Vec<&Tensor> = batch.inputs.iter().collect();
        let pred = net.forward_batch(
            &mut tape,
            &inputs,
            batch.labeled_rows(),
            Mode::Train,
            cfg.clean_pseudo_forward,
            &mut streams,
        )?;
        let labeled = pred
            .labeled
            .ok_or_else(|| Error::Usage("batch without labeled rows".into()))?;
        let loss_a = classification_loss(&mut tape, labeled, &one_hot(&batch.labels, classes)?)?;

        let mut pseudo_count = 0;
        let mut pseudo_correct = 0;
        let (loss_u, loss_c) = match pred.unlabeled {
            Some(unlabeled) => {
                let labels = pseudo_label(tape.value(unlabeled), tau_d);
                pseudo_count = labels.len();
                if let Some(truth) = truth {
                    pseudo_correct = labels
                        .labels
                        .iter()
                        .filter(|l| truth.label(batch.unlabeled_indices[l.row]) == Some(l.class))
                        .count();
                }
                let lu = consistency_loss(&mut tape, &labels, pred.augmented)?;
                let divisor = cfg.lc_divisor.resolve(labels.len(), batch.unlabeled_rows());
                let lc = confidence_constraint(&mut tape, unlabeled, divisor)?;
                (lu, lc)
            }
            None => (
                tape.constant(Tensor::scalar(0.0)),
                tape.constant(Tensor::scalar(0.0)),
            ),
        };
        let total = total_objective(&mut tape, loss_a, loss_u, loss_c, cfg.lambda_u, cfg.eta_c)?;
        if !tape.value(total).is_finite() {
            let (var, op) = tape.first_non_finite().unwrap_or((total, "total_objective"));
            return Err(Error::Numerical {
                op,
                node: var.index(),
            });
        }
        tape.backward(total)?;
        let grads = net.grads(&tape);
        self.sgd.step(&mut self.params.tensors_mut(), &grads)?;
        if let Some(i) = self.params.tensors().iter().position(|t| !t.is_finite()) {
            return Err(Error::Numerical {
                op: "sgd_step",
                node: net.vars()[i].index(),
            });
        }
        Ok(StepStats {
            loss_a: tape.value(loss_a).item(),
            loss_u: tape.value(loss_u).item(),
            loss_c: tape.value(loss_c).item(),
            loss_total: tape.value(total).item(),
            pseudo_count,
            pseudo_correct,
        })
    }
}
