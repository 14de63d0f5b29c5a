//! Cosine feature distance and the query-anchored triplet loss.
//!
//! For query embeddings `q_a` and target embeddings `t_a` the loss is
//!
//! ```text
//! Σ_a Σ_{b: subject(b) ≠ subject(a)} max(d(q_a, t_a) − d(q_a, t_b) + m, 0)
//! ```
//!
//! with `d(u, v) = 1 − u·v / (‖u‖‖v‖)`. Only queries act as anchors.

mod sampling;

pub use sampling::{sample_epoch, BatchPlan, SubjectIndex};

use crate::error::{ensure_finite, ensure_len, MrisError, Result};
use crate::numerics::{dot, norm};
use crate::types::RecordId;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduction {
    Sum,
    /// Sum divided by the number of (anchor, negative) terms.
    Mean,
}

impl Reduction {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "sum" => Some(Reduction::Sum),
            "mean" => Some(Reduction::Mean),
            _ => None,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Reduction::Sum => "sum",
            Reduction::Mean => "mean",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossConfig {
    pub margin: f64,
    pub reduction: Reduction,
}

impl Default for LossConfig {
    fn default() -> Self {
        LossConfig {
            margin: 0.1,
            reduction: Reduction::Sum,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if self.margin.is_finite() && self.margin >= 0.0 {
            Ok(())
        } else {
            Err(MrisError::Config(format!("margin must be finite and >= 0, got {}", self.margin)))
        }
    }
}

/// Aligned query/target embeddings: index `a` is the matching pair.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingPairBatch {
    pub queries: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
    pub subject_ids: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TripletLoss {
    pub loss: f64,
    pub query_grads: Vec<Vec<f64>>,
    pub target_grads: Vec<Vec<f64>>,
    /// Number of (anchor, negative) terms in the sum.
    pub terms: usize,
    /// Terms with a strictly positive hinge.
    pub active_terms: usize,
    /// Smallest `|d_pos − d_neg + m|` over all terms; distance to a kink.
    pub min_kink_distance: f64,
}

pub fn cosine_distance(u: &[f64], v: &[f64]) -> Result<f64> {
    ensure_len("cosine distance operands", u.len(), v.len())?;
    if u.len() < 2 {
        return Err(MrisError::Degenerate(format!(
            "cosine distance needs vectors of length >= 2, got {}",
            u.len()
        )));
    }
    ensure_finite(u, "cosine distance operand")?;
    ensure_finite(v, "cosine distance operand")?;
    let (nu, nv) = (norm(u), norm(v));
    if nu == 0.0 || nv == 0.0 {
        return Err(MrisError::Degenerate("cosine distance of a zero vector".into()));
    }
    let cos = (dot(u, v) / (nu * nv)).clamp(-1.0, 1.0);
    Ok(1.0 - cos)
}

/// Hinge `max(d_pos − d_neg + m, 0)`.
pub fn triplet_term(d_pos: f64, d_neg: f64, margin: f64) -> Result<f64> {
    if !(d_pos.is_finite() && d_neg.is_finite() && margin.is_finite()) {
        return Err(MrisError::NonFinite("triplet term"));
    }
    Ok((d_pos - d_neg + margin).max(0.0))
}

/// Standard form: every sample in the batch belongs to a distinct subject.
pub fn triplet_loss_batch(batch: &EmbeddingPairBatch, cfg: &LossConfig) -> Result<TripletLoss> {
    let n = batch.queries.len();
    ensure_len("batch targets", n, batch.targets.len())?;
    ensure_len("batch subject ids", n, batch.subject_ids.len())?;
    if n < 2 {
        return Err(MrisError::Constraint(format!("triplet loss needs N >= 2, got {n}")));
    }
    let mut seen = std::collections::HashSet::with_capacity(n);
    for s in &batch.subject_ids {
        if !seen.insert(s.as_str()) {
            return Err(MrisError::Constraint(format!(
                "subject {s} appears twice in one batch"
            )));
        }
    }
    hinge_loss(&batch.queries, &batch.targets, &batch.subject_ids, cfg)
}

/// Longitudinal form: several timepoints per subject may be present; pairs
/// of samples from the same subject are never used as negatives.
pub fn triplet_loss_longitudinal(
    queries: &[Vec<f64>],
    targets: &[Vec<f64>],
    ids: &[RecordId],
    cfg: &LossConfig,
) -> Result<TripletLoss> {
    ensure_len("longitudinal targets", queries.len(), targets.len())?;
    ensure_len("longitudinal ids", queries.len(), ids.len())?;
    let subjects: Vec<String> = ids.iter().map(|id| id.subject.clone()).collect();
    let distinct: std::collections::HashSet<&str> = subjects.iter().map(String::as_str).collect();
    if distinct.len() < 2 {
        return Err(MrisError::Constraint(
            "longitudinal triplet loss needs at least 2 distinct subjects".into(),
        ));
    }
    hinge_loss(queries, targets, &subjects, cfg)
}

struct Normalized {
    unit: Vec<f64>,
    norm: f64,
}

fn normalize(v: &[f64], dim: usize) -> Result<Normalized> {
    ensure_len("embedding", dim, v.len())?;
    ensure_finite(v, "embedding")?;
    let n = norm(v);
    if n == 0.0 {
        return Err(MrisError::Degenerate("zero-norm embedding in triplet loss".into()));
    }
    Ok(Normalized {
        unit: v.iter().map(|x| x / n).collect(),
        norm: n,
    })
}

fn hinge_loss(
    queries: &[Vec<f64>],
    targets: &[Vec<f64>],
    subjects: &[String],
    cfg: &LossConfig,
) -> Result<TripletLoss> {
    cfg.validate()?;
    let n = queries.len();
    let dim = queries[0].len();
    if dim < 2 {
        return Err(MrisError::Degenerate("embeddings must have dimension >= 2".into()));
    }
    let q: Vec<Normalized> = queries.iter().map(|v| normalize(v, dim)).collect::<Result<_>>()?;
    let t: Vec<Normalized> = targets.iter().map(|v| normalize(v, dim)).collect::<Result<_>>()?;

    // cos[a][b] = q̂_a · t̂_b
    let cos: Vec<Vec<f64>> = q
        .iter()
        .map(|qa| t.iter().map(|tb| dot(&qa.unit, &tb.unit)).collect())
        .collect();

    // ∂d(q, t)/∂q = −(t̂ − c·q̂)/‖q‖ and ∂d(q, t)/∂t = −(q̂ − c·t̂)/‖t‖.
    let mut q_grads = vec![vec![0.0; dim]; n];
    let mut t_grads = vec![vec![0.0; dim]; n];
    let mut loss = 0.0;
    let mut terms = 0usize;
    let mut active = 0usize;
    let mut min_kink = f64::INFINITY;

    for a in 0..n {
        let d_pos = 1.0 - cos[a][a];
        // Accumulated coefficients for the anchor's gradient:
        // Σ_active [∂d_pos/∂q − ∂d_neg/∂q] = (−n_act·t̂_a + Σ t̂_b + (n_act·c_aa − Σ c_ab)·q̂_a)/‖q_a‖
        let mut n_act = 0usize;
        let mut sum_neg_unit = vec![0.0; dim];
        let mut sum_neg_cos = 0.0;
        for b in 0..n {
            if subjects[b] == subjects[a] {
                continue;
            }
            terms += 1;
            let d_neg = 1.0 - cos[a][b];
            let h = d_pos - d_neg + cfg.margin;
            min_kink = min_kink.min(h.abs());
            if h <= 0.0 {
                continue;
            }
            loss += h;
            n_act += 1;
            sum_neg_cos += cos[a][b];
            for (s, x) in sum_neg_unit.iter_mut().zip(&t[b].unit) {
                *s += x;
            }
            // −∂d_neg/∂t_b = (q̂_a − c_ab·t̂_b)/‖t_b‖
            let c = cos[a][b];
            let inv = 1.0 / t[b].norm;
            for ((g, &qa), &tb) in t_grads[b].iter_mut().zip(&q[a].unit).zip(&t[b].unit) {
                *g += (qa - c * tb) * inv;
            }
        }
        if n_act == 0 {
            continue;
        }
        active += n_act;
        let k = n_act as f64;
        let c_aa = cos[a][a];
        let inv_q = 1.0 / q[a].norm;
        let coef_q = k * c_aa - sum_neg_cos;
        for d in 0..dim {
            q_grads[a][d] += (-k * t[a].unit[d] + sum_neg_unit[d] + coef_q * q[a].unit[d]) * inv_q;
        }
        // n_act copies of ∂d_pos/∂t_a
        let inv_t = 1.0 / t[a].norm;
        for d in 0..dim {
            t_grads[a][d] += -k * (q[a].unit[d] - c_aa * t[a].unit[d]) * inv_t;
        }
    }

    if terms == 0 {
        return Err(MrisError::Constraint("no valid negative pairs in batch".into()));
    }
    if cfg.reduction == Reduction::Mean {
        let s = 1.0 / terms as f64;
        loss *= s;
        q_grads.iter_mut().chain(t_grads.iter_mut()).flatten().for_each(|g| *g *= s);
    }
    if !loss.is_finite() {
        return Err(MrisError::NonFinite("triplet loss"));
    }
    Ok(TripletLoss {
        loss,
        query_grads: q_grads,
        target_grads: t_grads,
        terms,
        active_terms: active,
        min_kink_distance: min_kink,
    })
}
