//! Weighted k-NN regression in the shared embedding space.
//!
//! `ŷ = Σ wᵢ ỹᵢ` over the `k` nearest stored targets, with weights
//! proportional to the cosine similarities `1 − dᵢ`.

use std::fmt::Write as _;

use crate::embedding_db::{EmbeddingDatabase, NeighborSet};
use crate::error::{MrisError, Result};
use crate::numerics::{EncoderParams, Real};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SynthesisConfig {
    pub k: usize,
}

impl Default for SynthesisConfig {
    fn default() -> Self {
        SynthesisConfig { k: 20 }
    }
}

/// Which branch of the weighting rule produced the weights.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WeightPolicy {
    /// All similarities positive; plain normalization.
    Similarity,
    /// Some negative similarities were clamped to zero.
    Clamped,
    /// No positive similarity; uniform weights.
    Uniform,
}

impl WeightPolicy {
    pub fn name(self) -> &'static str {
        match self {
            WeightPolicy::Similarity => "similarity",
            WeightPolicy::Clamped => "clamped",
            WeightPolicy::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisResult {
    pub image: Vec<f64>,
    pub neighbors: NeighborSet,
    pub weights: Vec<f64>,
    pub policy: WeightPolicy,
    /// Set when `k` exceeded the database size and was truncated.
    pub truncated_k: Option<usize>,
}

impl SynthesisResult {
    /// Sidecar text: one `rank id distance weight` line per neighbor.
    pub fn report(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# policy {}", self.policy.name());
        if let Some(k) = self.truncated_k {
            let _ = writeln!(out, "# warning: k={k} truncated to {}", self.neighbors.len());
        }
        let _ = writeln!(out, "rank\tsubject\ttimepoint\tdistance\tweight");
        for (i, (n, w)) in self.neighbors.iter().zip(&self.weights).enumerate() {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{:.9}\t{:.9}",
                i + 1,
                n.id.subject,
                n.id.timepoint,
                n.distance,
                w
            );
        }
        out
    }
}

/// `sᵢ = max(1 − dᵢ, 0)`, `wᵢ = sᵢ / Σs`; uniform if every `sᵢ` is zero.
pub fn synthesis_weights(distances: &[f64]) -> Result<(Vec<f64>, WeightPolicy)> {
    if distances.is_empty() {
        return Err(MrisError::Empty("neighbor distances"));
    }
    if !distances.iter().all(|d| d.is_finite()) {
        return Err(MrisError::NonFinite("neighbor distances"));
    }
    let raw: Vec<f64> = distances.iter().map(|d| 1.0 - d).collect();
    let sims: Vec<f64> = raw.iter().map(|s| s.max(0.0)).collect();
    let total: f64 = sims.iter().sum();
    if total > 0.0 {
        let policy = if raw.iter().any(|&s| s < 0.0) {
            WeightPolicy::Clamped
        } else {
            WeightPolicy::Similarity
        };
        Ok((sims.iter().map(|s| s / total).collect(), policy))
    } else {
        let w = 1.0 / distances.len() as f64;
        Ok((vec![w; distances.len()], WeightPolicy::Uniform))
    }
}

/// Synthesizes from an already computed query embedding.
pub fn synthesize_from_embedding(
    embedding: &[f64],
    db: &EmbeddingDatabase,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    if cfg.k == 0 {
        return Err(MrisError::Config("k must be >= 1".into()));
    }
    let neighbors = db.knn_query(embedding, cfg.k)?;
    let truncated_k = (cfg.k > neighbors.len()).then_some(cfg.k);
    if truncated_k.is_some() {
        log::warn!("k={} exceeds database size {}; truncated", cfg.k, db.len());
    }
    let distances: Vec<f64> = neighbors.iter().map(|n| n.distance).collect();
    let (weights, policy) = synthesis_weights(&distances)?;

    let pixels = db.target_shape().map_or(0, |s| s.len());
    let mut image = vec![0.0; pixels];
    for (n, &w) in neighbors.iter().zip(&weights) {
        let target = db.target(db.records()[n.index].target_ref);
        for (o, &t) in image.iter_mut().zip(target) {
            *o += w * t as f64;
        }
    }
    Ok(SynthesisResult {
        image,
        neighbors,
        weights,
        policy,
        truncated_k,
    })
}

/// Encodes `query_features` with the query encoder and synthesizes.
pub fn synthesize<S: Real>(
    query_features: &[f64],
    query_encoder: &EncoderParams<S>,
    db: &EmbeddingDatabase,
    cfg: &SynthesisConfig,
) -> Result<SynthesisResult> {
    if !db.is_empty() && query_encoder.output_dim() != db.dim() {
        return Err(MrisError::DimensionMismatch {
            context: "encoder output vs database dim",
            expected: db.dim(),
            actual: query_encoder.output_dim(),
        });
    }
    let embedding = query_encoder.embed(query_features)?;
    synthesize_from_embedding(&embedding, db, cfg)
}
