//! Paired-sample datasets, normalization rules, the synthetic generator and
//! on-disk dataset directories.

mod generator;
mod io;
mod normalize;

pub use generator::{generate_synthetic, GeneratorConfig, SplitSpec, Synthetic};
pub use io::{array_load, array_save, dataset_load, dataset_save, ARRAY_MAGIC, MANIFEST_SCHEMA};
pub use normalize::{
    denormalize_target, normalize_query, normalize_target, percentile, TARGET_SCALE,
};

use std::collections::{BTreeMap, HashSet};

use crate::embedding_db::TargetShape;
use crate::error::{ensure_len, MrisError, Result};
use crate::metric::SubjectIndex;
use crate::types::RecordId;

#[derive(Debug, Clone, PartialEq)]
pub struct PairedSample {
    pub id: RecordId,
    pub query: Vec<f32>,
    pub target: Vec<f32>,
    /// Severity stratum, 0..=3 for generated data.
    pub stratum: u8,
    pub progression: Option<bool>,
}

impl PairedSample {
    pub fn query_f64(&self) -> Vec<f64> {
        self.query.iter().map(|&v| v as f64).collect()
    }

    pub fn target_f64(&self) -> Vec<f64> {
        self.target.iter().map(|&v| v as f64).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    TrainDb,
    Downstream,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::TrainDb, Split::Downstream, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::TrainDb => "train_db",
            Split::Downstream => "downstream",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Split::ALL.into_iter().find(|x| x.name() == s)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub query_dim: usize,
    pub shape: TargetShape,
    pub seed: u64,
    pub samples: Vec<PairedSample>,
    /// Split of every subject; splits are disjoint by construction.
    pub splits: BTreeMap<String, Split>,
}

impl Dataset {
    /// Checks shared dimensions, id uniqueness and split coverage.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::with_capacity(self.samples.len());
        for s in &self.samples {
            ensure_len("sample query", self.query_dim, s.query.len())?;
            ensure_len("sample target", self.shape.len(), s.target.len())?;
            if !seen.insert(&s.id) {
                return Err(MrisError::DuplicateId(s.id.to_string()));
            }
            if !self.splits.contains_key(&s.id.subject) {
                return Err(MrisError::Constraint(format!(
                    "subject {} has no split assignment",
                    s.id.subject
                )));
            }
        }
        Ok(())
    }

    pub fn split_of(&self, subject: &str) -> Option<Split> {
        self.splits.get(subject).copied()
    }

    pub fn samples_in(&self, split: Split) -> Vec<&PairedSample> {
        self.samples
            .iter()
            .filter(|s| self.split_of(&s.id.subject) == Some(split))
            .collect()
    }

    /// Earliest timepoint of every subject in `split`, sorted by subject.
    pub fn baseline_samples(&self, split: Split) -> Vec<&PairedSample> {
        let mut first: BTreeMap<&str, &PairedSample> = BTreeMap::new();
        for s in self.samples_in(split) {
            first
                .entry(s.id.subject.as_str())
                .and_modify(|cur| {
                    if s.id.timepoint < cur.id.timepoint {
                        *cur = s;
                    }
                })
                .or_insert(s);
        }
        first.into_values().collect()
    }

    pub fn subject_index(&self, split: Split) -> SubjectIndex {
        let mut idx: SubjectIndex = BTreeMap::new();
        for s in self.samples_in(split) {
            idx.entry(s.id.subject.clone()).or_default().push(s.id.timepoint);
        }
        for tps in idx.values_mut() {
            tps.sort_unstable();
        }
        idx
    }

    pub fn subjects_in(&self, split: Split) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(k, _)| k.as_str())
            .collect()
    }
}
