use std::collections::BTreeMap;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{MrisError, Result};
use crate::types::RecordId;

/// Subject → available timepoints.
pub type SubjectIndex = BTreeMap<String, Vec<u32>>;

/// One epoch's minibatches; each subject contributes exactly one sample.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchPlan {
    pub epoch: usize,
    pub batches: Vec<Vec<RecordId>>,
}

impl BatchPlan {
    pub fn num_samples(&self) -> usize {
        self.batches.iter().map(Vec::len).sum()
    }
}

/// Picks one timepoint per subject uniformly at random, shuffles subjects and
/// cuts consecutive batches. A trailing batch of one sample is dropped since
/// it has no negative; any larger remainder is kept.
///
/// The stream is a function of `(seed, epoch)` only.
pub fn sample_epoch(
    index: &SubjectIndex,
    batch_size: usize,
    seed: u64,
    epoch: usize,
) -> Result<BatchPlan> {
    if batch_size < 2 {
        return Err(MrisError::Config(format!("batch size must be >= 2, got {batch_size}")));
    }
    if index.len() < 2 {
        return Err(MrisError::Constraint(format!(
            "epoch sampling needs at least 2 subjects, got {}",
            index.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64);

    let mut picks = Vec::with_capacity(index.len());
    for (subject, timepoints) in index {
        let tp = timepoints
            .choose(&mut rng)
            .ok_or_else(|| MrisError::Constraint(format!("subject {subject} has no timepoints")))?;
        picks.push(RecordId::new(subject.clone(), *tp));
    }
    picks.shuffle(&mut rng);

    let batches = picks
        .chunks(batch_size)
        .filter(|c| c.len() >= 2)
        .map(<[RecordId]>::to_vec)
        .collect();
    Ok(BatchPlan { epoch, batches })
}

#[cfg(test)]
mod tests {
    use std::collections::{HashMap, HashSet};

    use super::*;

    fn index(n: usize, tps: &[u32]) -> SubjectIndex {
        (0..n).map(|i| (format!("s{i:03}"), tps.to_vec())).collect()
    }

    #[test]
    fn drops_only_singleton_tail() {
        let idx = index(5, &[0]);
        let plan = sample_epoch(&idx, 2, 7, 0).unwrap();
        let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![2, 2]);
        assert_eq!(plan.num_samples(), 4);

        let plan = sample_epoch(&index(7, &[0]), 3, 7, 0).unwrap();
        let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3]);
        let plan = sample_epoch(&index(8, &[0]), 3, 7, 0).unwrap();
        let sizes: Vec<usize> = plan.batches.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![3, 3, 2]);
    }

    #[test]
    fn single_timepoint_subjects_reuse_the_same_sample_set() {
        let idx = index(10, &[3]);
        let a = sample_epoch(&idx, 4, 1, 0).unwrap();
        let b = sample_epoch(&idx, 4, 1, 1).unwrap();
        let set = |p: &BatchPlan| p.batches.iter().flatten().cloned().collect::<HashSet<_>>();
        assert_eq!(set(&a), set(&b));
    }

    #[test]
    fn timepoint_frequencies_are_uniform() {
        let idx: SubjectIndex = [("a".to_string(), vec![0, 1, 2, 3]), ("b".to_string(), vec![0])]
            .into_iter()
            .collect();
        let mut counts: HashMap<u32, usize> = HashMap::new();
        let epochs = 1000;
        for e in 0..epochs {
            let plan = sample_epoch(&idx, 2, 99, e).unwrap();
            let tp = plan.batches[0].iter().find(|r| r.subject == "a").unwrap().timepoint;
            *counts.entry(tp).or_default() += 1;
        }
        for tp in 0..4 {
            let f = counts[&tp] as f64 / epochs as f64;
            assert!((f - 0.25).abs() <= 0.05, "timepoint {tp} frequency {f}");
        }
    }

    #[test]
    fn deterministic_per_seed_and_epoch() {
        let idx = index(30, &[0, 1, 2]);
        assert_eq!(sample_epoch(&idx, 8, 5, 3).unwrap(), sample_epoch(&idx, 8, 5, 3).unwrap());
        assert_ne!(sample_epoch(&idx, 8, 5, 3).unwrap(), sample_epoch(&idx, 8, 5, 4).unwrap());
    }

    #[test]
    fn argument_errors() {
        assert!(sample_epoch(&index(1, &[0]), 2, 0, 0).is_err());
        assert!(sample_epoch(&index(4, &[0]), 1, 0, 0).is_err());
    }
}
