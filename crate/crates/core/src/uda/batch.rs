use rand::seq::SliceRandom;

use super::TrainConfig;
use crate::augment::{augment, AugmentPolicy};
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::rng::{fnv1a, stream, Purpose};
use crate::tensor::Tensor;

/// Shuffled visiting order of both pools for one epoch.
///
/// The labeled pool is split into `floor(n / B)` batches (a trailing partial
/// batch is dropped). The unlabeled order is cycled when an epoch needs more
/// unlabeled rows than the pool holds.
#[derive(Debug, Clone)]
pub struct EpochOrder {
    labeled: Vec<usize>,
    unlabeled: Vec<usize>,
    batch_size: usize,
    unlabeled_per_batch: usize,
}

impl EpochOrder {
    pub fn new(labeled_len: usize, unlabeled_len: usize, config: &TrainConfig, epoch: usize) -> Self {
        let mut labeled: Vec<usize> = (0..labeled_len).collect();
        labeled.shuffle(&mut stream(config.seed, Purpose::ShuffleLabeled, &[epoch as u64]));
        let mut unlabeled: Vec<usize> = (0..unlabeled_len).collect();
        unlabeled.shuffle(&mut stream(config.seed, Purpose::ShuffleUnlabeled, &[epoch as u64]));
        EpochOrder {
            labeled,
            unlabeled,
            batch_size: config.batch_size,
            unlabeled_per_batch: config.unlabeled_per_batch(),
        }
    }

    pub fn steps(&self) -> usize {
        self.labeled.len() / self.batch_size
    }

    pub fn labeled(&self, step: usize) -> &[usize] {
        &self.labeled[step * self.batch_size..(step + 1) * self.batch_size]
    }

    /// `(pool index, cycle)` of every unlabeled row of `step`.
    pub fn unlabeled(&self, step: usize) -> Vec<(usize, usize)> {
        let n = self.unlabeled.len();
        (0..self.unlabeled_per_batch)
            .map(|j| {
                let k = step * self.unlabeled_per_batch + j;
                (self.unlabeled[k % n], k / n)
            })
            .collect()
    }
}

/// Model input `X_l ++ X_u ++ A(X_u)` of one step.
#[derive(Debug, Clone)]
pub struct Batch {
    pub inputs: Vec<Tensor>,
    /// Labels of the first `labels.len()` rows.
    pub labels: Vec<usize>,
    /// Target-pool index of every unlabeled row.
    pub unlabeled_indices: Vec<usize>,
}

impl Batch {
    pub fn labeled_rows(&self) -> usize {
        self.labels.len()
    }

    pub fn unlabeled_rows(&self) -> usize {
        self.unlabeled_indices.len()
    }
}

/// Assemble step `step` of `epoch`. Each augmented row draws its erasures
/// from a stream keyed by `(seed, sample id, epoch, cycle)`.
pub fn compose_batch(
    source: &Dataset,
    target: &Dataset,
    order: &EpochOrder,
    step: usize,
    policy: &AugmentPolicy,
    seed: u64,
    epoch: usize,
) -> Result<Batch> {
    if step >= order.steps() {
        return Err(Error::Usage(format!("step {step} beyond {} steps", order.steps())));
    }
    let mut inputs = Vec::with_capacity(order.batch_size + 2 * order.unlabeled_per_batch);
    let mut labels = Vec::with_capacity(order.batch_size);
    for &i in order.labeled(step) {
        let s = &source.samples()[i];
        let label = s
            .label
            .ok_or_else(|| Error::Usage(format!("source sample `{}` has no label", s.id)))?;
        inputs.push(s.frames.clone());
        labels.push(label);
    }
    if order.unlabeled_per_batch == 0 {
        return Ok(Batch {
            inputs,
            labels,
            unlabeled_indices: Vec::new(),
        });
    }
    if target.is_empty() {
        return Err(Error::Usage("unlabeled pool is empty but mu > 0".into()));
    }
    let slots = order.unlabeled(step);
    for &(i, _) in &slots {
        inputs.push(target.samples()[i].frames.clone());
    }
    for &(i, cycle) in &slots {
        let s = &target.samples()[i];
        let mut rng = stream(
            seed,
            Purpose::Augment,
            &[fnv1a(s.id.as_bytes()), epoch as u64, cycle as u64],
        );
        inputs.push(augment(&s.frames, policy, &mut rng)?);
    }
    Ok(Batch {
        inputs,
        labels,
        unlabeled_indices: slots.into_iter().map(|(i, _)| i).collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{synth_generate, SynthSpec};

    fn pools() -> (Dataset, Dataset) {
        let spec = SynthSpec {
            grid: 8,
            frames: 4,
            radius: 2.0,
            location_shift: 0.5,
            environments: 1,
            subjects: 1,
            locations: 2,
            orientations: 2,
            ..SynthSpec::default()
        };
        let ds = synth_generate(&spec, 3).unwrap();
        let split = crate::dataset::split_leave_one_out(&ds, crate::dataset::Factor::Orientation, "o2").unwrap();
        (split.source, split.target)
    }

    #[test]
    fn sizes_follow_batch_arithmetic() {
        let (src, tgt) = pools();
        let cfg = TrainConfig {
            batch_size: 2,
            mu: 2,
            ..Default::default()
        };
        let order = EpochOrder::new(src.len(), tgt.len(), &cfg, 0);
        let policy = AugmentPolicy::default_for(8, 4);
        let b = compose_batch(&src, &tgt, &order, 0, &policy, 1, 0).unwrap();
        assert_eq!(b.inputs.len(), 10);
        assert_eq!(b.labeled_rows(), 2);
        assert_eq!(b.unlabeled_rows(), 4);

        let cfg0 = TrainConfig { mu: 0, ..cfg };
        let order = EpochOrder::new(src.len(), tgt.len(), &cfg0, 0);
        let b = compose_batch(&src, &tgt, &order, 0, &policy, 1, 0).unwrap();
        assert_eq!(b.inputs.len(), 2);
    }

    #[test]
    fn augmented_rows_differ_only_by_erasure() {
        let (src, tgt) = pools();
        let cfg = TrainConfig {
            batch_size: 3,
            mu: 1,
            ..Default::default()
        };
        let order = EpochOrder::new(src.len(), tgt.len(), &cfg, 2);
        let policy = AugmentPolicy::default_for(8, 4);
        let b = compose_batch(&src, &tgt, &order, 1, &policy, 9, 2).unwrap();
        for j in 0..3 {
            let (u, a) = (&b.inputs[3 + j], &b.inputs[6 + j]);
            let mut changed = 0;
            for (x, y) in u.data().iter().zip(a.data()) {
                if x.to_bits() != y.to_bits() {
                    assert_eq!(*y, 0.0);
                    changed += 1;
                }
            }
            assert!(changed > 0);
        }
    }

    #[test]
    fn partial_batch_dropped_and_unlabeled_cycles() {
        let cfg = TrainConfig {
            batch_size: 4,
            mu: 3,
            ..Default::default()
        };
        let order = EpochOrder::new(10, 5, &cfg, 0);
        assert_eq!(order.steps(), 2);
        let all: Vec<(usize, usize)> = (0..2).flat_map(|s| order.unlabeled(s)).collect();
        assert_eq!(all.len(), 24);
        // Each pool entry appears once per cycle.
        for cycle in 0..4 {
            let mut seen: Vec<usize> = all.iter().filter(|(_, c)| *c == cycle).map(|(i, _)| *i).collect();
            seen.sort();
            assert_eq!(seen, vec![0, 1, 2, 3, 4]);
        }
    }
}
