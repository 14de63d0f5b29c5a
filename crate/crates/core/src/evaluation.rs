//! Retrieval recall, synthesis error statistics and the downstream
//! classification probe.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;

use rand::seq::index::sample as sample_indices;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::datakit::{denormalize_target, normalize_target, PairedSample};
use crate::embedding_db::EmbeddingDatabase;
use crate::error::{MrisError, Result};
use crate::numerics::{
    Activation, AdamW, AdamWConfig, DenseMatrix, EncoderGrads, EncoderParams, Layer,
    OptimizerState, Real,
};
use crate::pipeline::{Preprocess, Synthesizer};

pub const RECALL_KS: [usize; 4] = [1, 5, 10, 20];

/// Median and unscaled median absolute deviation. Even counts use the mean
/// of the two middle values.
pub fn median_mad(values: &[f64]) -> Result<(f64, f64)> {
    if values.is_empty() {
        return Err(MrisError::Empty("median input"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(MrisError::NonFinite("median input"));
    }
    let mut buf = values.to_vec();
    let med = median_in_place(&mut buf);
    for v in buf.iter_mut() {
        *v = (*v - med).abs();
    }
    let mad = median_in_place(&mut buf);
    Ok((med, mad))
}

fn median_in_place(v: &mut [f64]) -> f64 {
    let n = v.len();
    let mid = n / 2;
    let (lower, upper, _) = v.select_nth_unstable_by(mid, f64::total_cmp);
    let upper = *upper;
    if n % 2 == 1 {
        upper
    } else {
        let lower_max = lower.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        0.5 * (lower_max + upper)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallReport {
    pub queries: usize,
    /// `(k, R@k in percent)` in ascending k.
    pub recall: Vec<(usize, f64)>,
}

impl RecallReport {
    pub fn at(&self, k: usize) -> Option<f64> {
        self.recall.iter().find(|(kk, _)| *kk == k).map(|r| r.1)
    }
}

/// R@k over already computed query embeddings. A query counts as a hit at k
/// when the database record with the same id ranks within the top k.
pub fn recall_from_embeddings(
    queries: &[(crate::RecordId, Vec<f64>)],
    db: &EmbeddingDatabase,
    ks: &[usize],
) -> Result<RecallReport> {
    if queries.is_empty() {
        return Err(MrisError::Empty("recall queries"));
    }
    if ks.is_empty() || ks.contains(&0) {
        return Err(MrisError::Config("recall ks must be non-empty and >= 1".into()));
    }
    let mut subjects = HashSet::new();
    for (id, _) in queries {
        if !subjects.insert(id.subject.as_str()) {
            return Err(MrisError::Constraint(format!(
                "recall expects one query per subject; {} repeats",
                id.subject
            )));
        }
        if !db.contains(id) {
            return Err(MrisError::MissingId(id.to_string()));
        }
    }
    let max_k = *ks.iter().max().unwrap_or(&1);
    let ranks: Vec<Option<usize>> = queries
        .par_iter()
        .map(|(id, emb)| {
            let nn = db.knn_query(emb, max_k)?;
            Ok(nn.iter().position(|n| &n.id == id))
        })
        .collect::<Result<_>>()?;
    let mut sorted_ks = ks.to_vec();
    sorted_ks.sort_unstable();
    sorted_ks.dedup();
    let recall = sorted_ks
        .iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| r.is_some_and(|r| r < k)).count();
            (k, 100.0 * hits as f64 / queries.len() as f64)
        })
        .collect();
    Ok(RecallReport {
        queries: queries.len(),
        recall,
    })
}

/// Encodes each query and measures R@k against `db`, which must hold the
/// paired target of every query.
pub fn recall_at_k<S: Real>(
    queries: &[&PairedSample],
    query_encoder: &EncoderParams<S>,
    prep: &Preprocess,
    db: &EmbeddingDatabase,
    ks: &[usize],
) -> Result<RecallReport> {
    let embedded: Vec<(crate::RecordId, Vec<f64>)> = queries
        .par_iter()
        .map(|s| Ok((s.id.clone(), query_encoder.embed(&prep.query_input(s)?)?)))
        .collect::<Result<_>>()?;
    recall_from_embeddings(&embedded, db, ks)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ErrorStats {
    pub images: usize,
    /// Median and MAD of all pixelwise absolute errors.
    pub median: f64,
    pub mad: f64,
    /// Median and MAD of per-image median absolute errors.
    pub image_median: f64,
    pub image_mad: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorReport {
    /// `None` marks a requested stratum with no samples.
    pub strata: BTreeMap<u8, Option<ErrorStats>>,
    pub pooled: ErrorStats,
}

fn error_stats(per_image: &[Vec<f64>]) -> Result<ErrorStats> {
    let pixels: Vec<f64> = per_image.iter().flatten().copied().collect();
    let (median, mad) = median_mad(&pixels)?;
    let medians = per_image
        .iter()
        .map(|e| median_mad(e).map(|m| m.0))
        .collect::<Result<Vec<_>>>()?;
    let (image_median, image_mad) = median_mad(&medians)?;
    Ok(ErrorStats {
        images: per_image.len(),
        median,
        mad,
        image_median,
        image_mad,
    })
}

/// Error statistics for predictions from `predict`, which returns an image
/// in normalized target units. Errors are reported in raw target units.
pub fn error_report_with<F>(samples: &[&PairedSample], strata: &[u8], predict: F) -> Result<ErrorReport>
where
    F: Fn(&PairedSample) -> Result<Vec<f64>> + Sync,
{
    if samples.is_empty() {
        return Err(MrisError::Empty("error report samples"));
    }
    let errors: Vec<(u8, Vec<f64>)> = samples
        .par_iter()
        .map(|s| {
            let pred = denormalize_target(&predict(s)?);
            crate::error::ensure_len("synthesized image", s.target.len(), pred.len())?;
            let err = pred
                .iter()
                .zip(&s.target)
                .map(|(p, &t)| (p - t as f64).abs())
                .collect();
            Ok((s.stratum, err))
        })
        .collect::<Result<_>>()?;
    let pooled: Vec<Vec<f64>> = errors.iter().map(|e| e.1.clone()).collect();
    let mut by_stratum = BTreeMap::new();
    for &label in strata {
        let group: Vec<Vec<f64>> = errors
            .iter()
            .filter(|e| e.0 == label)
            .map(|e| e.1.clone())
            .collect();
        let stats = if group.is_empty() {
            None
        } else {
            Some(error_stats(&group)?)
        };
        by_stratum.insert(label, stats);
    }
    Ok(ErrorReport {
        strata: by_stratum,
        pooled: error_stats(&pooled)?,
    })
}

/// Synthesizes every sample and reports its error. Test subjects must not
/// appear in any database.
pub fn synthesis_error_report(
    samples: &[&PairedSample],
    synth: &Synthesizer,
    strata: &[u8],
) -> Result<ErrorReport> {
    for s in samples {
        if synth.knows_subject(&s.id.subject) {
            return Err(MrisError::Constraint(format!(
                "subject {} appears in the database",
                s.id.subject
            )));
        }
    }
    error_report_with(samples, strata, |s| Ok(synth.synthesize(s)?.image))
}

/// Baseline that replaces retrieval with the plain average of `k` database
/// records drawn uniformly without replacement per query.
pub fn random_neighbor_baseline(
    samples: &[&PairedSample],
    synth: &Synthesizer,
    strata: &[u8],
    seed: u64,
) -> Result<ErrorReport> {
    let index: BTreeMap<&crate::RecordId, usize> =
        samples.iter().enumerate().map(|(i, s)| (&s.id, i)).collect();
    error_report_with(samples, strata, |s| {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(index[&s.id] as u64);
        let mut image = Vec::with_capacity(synth.shape.len());
        for g in &synth.groups {
            let k = synth.cfg.k.min(g.db.len());
            let pixels = g.db.target_shape().map_or(0, |t| t.len());
            let mut part = vec![0.0; pixels];
            for i in sample_indices(&mut rng, g.db.len(), k) {
                let t = g.db.target(g.db.records()[i].target_ref);
                for (o, &v) in part.iter_mut().zip(t) {
                    *o += v as f64 / k as f64;
                }
            }
            image.extend(part);
        }
        Ok(image)
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbeConfig {
    pub epochs: usize,
    pub lr: f64,
    pub weight_decay: f64,
    /// Center and scale each feature by training-set statistics.
    pub standardize: bool,
    pub seed: u64,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        ProbeConfig {
            epochs: 300,
            lr: 0.05,
            weight_decay: 0.01,
            standardize: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScore {
    /// Percent correct.
    pub accuracy: f64,
    /// Percent correct per class; `None` for classes absent from the test set.
    pub per_class: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProbeReport {
    pub num_classes: usize,
    pub chance: f64,
    pub synthesized: ProbeScore,
    pub ground_truth: ProbeScore,
}

impl ProbeReport {
    /// Ground-truth accuracy minus synthesized accuracy, in points.
    pub fn gap(&self) -> f64 {
        self.ground_truth.accuracy - self.synthesized.accuracy
    }
}

/// Multinomial logistic regression on standardized features, fitted by
/// full-batch AdamW on the mean cross-entropy.
#[derive(Debug, Clone)]
pub struct LinearProbe {
    mean: Vec<f64>,
    scale: Vec<f64>,
    model: EncoderParams<f64>,
}

impl LinearProbe {
    pub fn fit(features: &[Vec<f64>], labels: &[usize], num_classes: usize, cfg: &ProbeConfig) -> Result<Self> {
        if features.is_empty() {
            return Err(MrisError::Empty("probe training set"));
        }
        crate::error::ensure_len("probe labels", features.len(), labels.len())?;
        let distinct: HashSet<usize> = labels.iter().copied().collect();
        if distinct.len() < 2 {
            return Err(MrisError::Degenerate(
                "probe training labels contain a single class".into(),
            ));
        }
        if labels.iter().any(|&l| l >= num_classes) {
            return Err(MrisError::Constraint("probe label out of range".into()));
        }
        let dim = features[0].len();
        for f in features {
            crate::error::ensure_len("probe feature", dim, f.len())?;
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; dim];
        for f in features {
            for (m, v) in mean.iter_mut().zip(f) {
                *m += v / n;
            }
        }
        let mut var = vec![0.0; dim];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(f).zip(&mean) {
                *s += (v - m).powi(2) / n;
            }
        }
        let scale: Vec<f64> = var
            .iter()
            .map(|v| if *v > 1e-12 { 1.0 / v.sqrt() } else { 0.0 })
            .collect();
        let (mean, scale) = if cfg.standardize {
            (mean, scale)
        } else {
            (vec![0.0; dim], vec![1.0; dim])
        };
        let layer = Layer::new(
            DenseMatrix::<f64>::zeros(num_classes, dim),
            vec![0.0; num_classes],
            Activation::Identity,
        )?;
        let mut probe = LinearProbe {
            mean,
            scale,
            model: EncoderParams::new(vec![layer])?,
        };
        let x: Vec<Vec<f64>> = features.iter().map(|f| probe.standardize(f)).collect();
        let adam = AdamWConfig {
            weight_decay: cfg.weight_decay,
            ..AdamWConfig::default()
        };
        let mut state = OptimizerState::new(adam, &probe.model)?;
        for _ in 0..cfg.epochs {
            let mut grads = EncoderGrads::zeros_like(&probe.model);
            for (xi, &yi) in x.iter().zip(labels) {
                let (logits, tape) = probe.model.forward(xi)?;
                let mut g = softmax(&logits);
                g[yi] -= 1.0;
                g.iter_mut().for_each(|v| *v /= n);
                let (gi, _) = probe.model.backward(&tape, &g)?;
                grads.add_assign(&gi);
            }
            AdamW::step(&mut probe.model, &grads, &mut state, cfg.lr)?;
        }
        Ok(probe)
    }

    fn standardize(&self, f: &[f64]) -> Vec<f64> {
        f.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) * s)
            .collect()
    }

    pub fn predict(&self, features: &[f64]) -> Result<usize> {
        crate::error::ensure_len("probe feature", self.mean.len(), features.len())?;
        let logits = self.model.embed(&self.standardize(features))?;
        Ok(logits
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1).then(b.0.cmp(&a.0)))
            .map_or(0, |(i, _)| i))
    }

    pub fn score(&self, features: &[Vec<f64>], labels: &[usize], num_classes: usize) -> Result<ProbeScore> {
        if features.is_empty() {
            return Err(MrisError::Empty("probe test set"));
        }
        let mut correct = vec![0usize; num_classes];
        let mut total = vec![0usize; num_classes];
        for (f, &l) in features.iter().zip(labels) {
            total[l] += 1;
            if self.predict(f)? == l {
                correct[l] += 1;
            }
        }
        let hits: usize = correct.iter().sum();
        Ok(ProbeScore {
            accuracy: 100.0 * hits as f64 / features.len() as f64,
            per_class: correct
                .iter()
                .zip(&total)
                .map(|(&c, &t)| (t > 0).then(|| 100.0 * c as f64 / t as f64))
                .collect(),
        })
    }
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let z: f64 = exp.iter().sum();
    exp.into_iter().map(|v| v / z).collect()
}

/// Fits the same probe on synthesized and on ground-truth images of `train`
/// and scores each on the matching images of `test`. Labels are strata.
pub fn downstream_probe(
    train: &[&PairedSample],
    test: &[&PairedSample],
    synth: &Synthesizer,
    num_classes: usize,
    cfg: &ProbeConfig,
) -> Result<ProbeReport> {
    let features = |samples: &[&PairedSample]| -> Result<(Vec<Vec<f64>>, Vec<Vec<f64>>, Vec<usize>)> {
        let synthesized = samples
            .par_iter()
            .map(|s| Ok(synth.synthesize(s)?.image))
            .collect::<Result<Vec<_>>>()?;
        let truth = samples
            .iter()
            .map(|s| normalize_target(&s.target_f64()))
            .collect();
        let labels = samples.iter().map(|s| s.stratum as usize).collect();
        Ok((synthesized, truth, labels))
    };
    let (train_syn, train_gt, train_y) = features(train)?;
    let (test_syn, test_gt, test_y) = features(test)?;
    if test_y.iter().any(|&l| l >= num_classes) {
        return Err(MrisError::Constraint("probe label out of range".into()));
    }
    let syn = LinearProbe::fit(&train_syn, &train_y, num_classes, cfg)?;
    let gt = LinearProbe::fit(&train_gt, &train_y, num_classes, cfg)?;
    Ok(ProbeReport {
        num_classes,
        chance: 100.0 / num_classes as f64,
        synthesized: syn.score(&test_syn, &test_y, num_classes)?,
        ground_truth: gt.score(&test_gt, &test_y, num_classes)?,
    })
}

fn error_lines(out: &mut String, prefix: &str, e: &ErrorReport) {
    let row = |out: &mut String, stratum: &str, s: &ErrorStats| {
        let _ = writeln!(out, "{prefix}_median,{stratum},{:.6}", s.median);
        let _ = writeln!(out, "{prefix}_mad,{stratum},{:.6}", s.mad);
        let _ = writeln!(out, "{prefix}_image_median,{stratum},{:.6}", s.image_median);
        let _ = writeln!(out, "{prefix}_image_mad,{stratum},{:.6}", s.image_mad);
        let _ = writeln!(out, "{prefix}_images,{stratum},{}", s.images);
    };
    for (label, stats) in &e.strata {
        match stats {
            Some(s) => row(out, &label.to_string(), s),
            None => {
                let _ = writeln!(out, "{prefix}_median,{label},absent");
            }
        }
    }
    row(out, "all", &e.pooled);
}

/// Machine-readable `metric,stratum,value` lines with a header row.
pub fn metric_lines(
    recall: Option<&RecallReport>,
    errors: Option<&ErrorReport>,
    baseline: Option<&ErrorReport>,
    probe: Option<&ProbeReport>,
) -> String {
    let mut out = String::from("metric,stratum,value\n");
    if let Some(r) = recall {
        for (k, v) in &r.recall {
            let _ = writeln!(out, "recall_at_{k},all,{v:.4}");
        }
    }
    if let Some(e) = errors {
        error_lines(&mut out, "abs_error", e);
    }
    if let Some(e) = baseline {
        error_lines(&mut out, "baseline_abs_error", e);
    }
    if let Some(p) = probe {
        for (name, s) in [("probe_synth", &p.synthesized), ("probe_truth", &p.ground_truth)] {
            let _ = writeln!(out, "{name}_accuracy,all,{:.4}", s.accuracy);
            for (c, v) in s.per_class.iter().enumerate() {
                match v {
                    Some(v) => {
                        let _ = writeln!(out, "{name}_accuracy,{c},{v:.4}");
                    }
                    None => {
                        let _ = writeln!(out, "{name}_accuracy,{c},absent");
                    }
                }
            }
        }
        let _ = writeln!(out, "probe_gap,all,{:.4}", p.gap());
    }
    out
}

fn error_table(out: &mut String, title: &str, e: &ErrorReport) {
    let _ = writeln!(out, "{title}");
    let _ = writeln!(
        out,
        "  {:<8} {:>7} {:>21} {:>21}",
        "stratum", "images", "pixel median ± MAD", "image median ± MAD"
    );
    let row = |out: &mut String, name: &str, s: &ErrorStats| {
        let _ = writeln!(
            out,
            "  {name:<8} {:>7} {:>10.4} ± {:<8.4} {:>10.4} ± {:<8.4}",
            s.images, s.median, s.mad, s.image_median, s.image_mad
        );
    };
    for (label, stats) in &e.strata {
        match stats {
            Some(s) => row(out, &label.to_string(), s),
            None => {
                let _ = writeln!(out, "  {label:<8} {:>7}", "absent");
            }
        }
    }
    row(out, "pooled", &e.pooled);
}

/// Human-readable summary table.
pub fn summary_table(
    recall: Option<&RecallReport>,
    errors: Option<&ErrorReport>,
    baseline: Option<&ErrorReport>,
    probe: Option<&ProbeReport>,
) -> String {
    let mut out = String::new();
    if let Some(r) = recall {
        let _ = writeln!(out, "Retrieval ({} queries)", r.queries);
        for (k, v) in &r.recall {
            let _ = writeln!(out, "  R@{k:<3} {v:7.2}%");
        }
    }
    if let Some(e) = errors {
        error_table(&mut out, "Synthesis absolute error", e);
    }
    if let Some(e) = baseline {
        error_table(&mut out, "Random-neighbor baseline absolute error", e);
    }
    if let Some(p) = probe {
        let _ = writeln!(out, "Downstream probe ({} classes, chance {:.1}%)", p.num_classes, p.chance);
        let _ = writeln!(out, "  synthesized   {:7.2}%", p.synthesized.accuracy);
        let _ = writeln!(out, "  ground truth  {:7.2}%", p.ground_truth.accuracy);
        let _ = writeln!(out, "  gap           {:7.2} points", p.gap());
    }
    out
}
