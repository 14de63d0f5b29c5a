//! Glue between datasets, encoders and databases: input preprocessing,
//! target row groups, database construction and multi-group synthesis.

use std::ops::Range;

use rayon::prelude::*;

use crate::datakit::{normalize_query, normalize_target, PairedSample};
use crate::embedding_db::{EmbeddingDatabase, TargetShape};
use crate::error::{ensure_len, MrisError, Result};
use crate::numerics::{EncoderParams, Real};
use crate::synthesis::{synthesize, SynthesisConfig, SynthesisResult};

/// How raw samples become encoder inputs.
///
/// Targets are always divided by the target scale. `rows` restricts the
/// target to a band of image rows, used when each band gets its own encoder
/// pair and database.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Preprocess {
    pub normalize_query: bool,
    pub clip_query: bool,
    pub rows: Option<Range<usize>>,
}

impl Preprocess {
    pub fn with_rows(&self, rows: Option<Range<usize>>) -> Self {
        Preprocess {
            rows,
            ..self.clone()
        }
    }

    pub fn query_input(&self, s: &PairedSample) -> Result<Vec<f64>> {
        let x = s.query_f64();
        if self.normalize_query {
            normalize_query(&x, self.clip_query)
        } else {
            Ok(x)
        }
    }

    fn row_range(&self, shape: TargetShape) -> Result<Range<usize>> {
        let rows = self.rows.clone().unwrap_or(0..shape.height);
        if rows.is_empty() || rows.end > shape.height {
            return Err(MrisError::Config(format!(
                "row group {}..{} invalid for height {}",
                rows.start, rows.end, shape.height
            )));
        }
        Ok(rows)
    }

    /// Shape of the (possibly row-restricted) target.
    pub fn group_shape(&self, shape: TargetShape) -> Result<TargetShape> {
        let rows = self.row_range(shape)?;
        Ok(TargetShape::new(rows.len(), shape.width))
    }

    pub fn target_dim(&self, shape: TargetShape) -> Result<usize> {
        Ok(self.group_shape(shape)?.len())
    }

    /// Normalized target restricted to this group's rows.
    pub fn target_input(&self, s: &PairedSample, shape: TargetShape) -> Result<Vec<f64>> {
        ensure_len("target image", shape.len(), s.target.len())?;
        let rows = self.row_range(shape)?;
        let band = &s.target[rows.start * shape.width..rows.end * shape.width];
        Ok(normalize_target(
            &band.iter().map(|&v| v as f64).collect::<Vec<_>>(),
        ))
    }
}

/// Row bands of the target image. `Combined` is a single band covering the
/// whole image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TargetGroups {
    Combined,
    Rows(Vec<Range<usize>>),
}

impl TargetGroups {
    /// Parses `combined` or a comma list of half-open row ranges such as
    /// `0-8,8-16`.
    pub fn parse(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "combined" {
            return Ok(TargetGroups::Combined);
        }
        let mut out = Vec::new();
        for part in s.split(',') {
            let (a, b) = part
                .trim()
                .split_once('-')
                .ok_or_else(|| MrisError::Config(format!("bad row group '{part}'")))?;
            let parse = |v: &str| {
                v.trim()
                    .parse::<usize>()
                    .map_err(|_| MrisError::Config(format!("bad row group '{part}'")))
            };
            out.push(parse(a)?..parse(b)?);
        }
        Ok(TargetGroups::Rows(out))
    }

    pub fn name(&self) -> String {
        match self {
            TargetGroups::Combined => "combined".into(),
            TargetGroups::Rows(r) => r
                .iter()
                .map(|r| format!("{}-{}", r.start, r.end))
                .collect::<Vec<_>>()
                .join(","),
        }
    }

    /// Bands in order; they must tile `0..height` without gaps or overlap.
    pub fn ranges(&self, height: usize) -> Result<Vec<Range<usize>>> {
        let ranges = match self {
            TargetGroups::Combined => vec![0..height],
            TargetGroups::Rows(r) => r.clone(),
        };
        let mut next = 0;
        for r in &ranges {
            if r.start != next || r.is_empty() {
                return Err(MrisError::Config(format!(
                    "row groups must tile 0..{height} in order, got '{}'",
                    self.name()
                )));
            }
            next = r.end;
        }
        if next != height {
            return Err(MrisError::Config(format!(
                "row groups must tile 0..{height}, got '{}'",
                self.name()
            )));
        }
        Ok(ranges)
    }
}

/// Embeds every sample's target and indexes it with its (normalized,
/// row-restricted) target image.
pub fn build_database<S: Real>(
    target_encoder: &EncoderParams<S>,
    samples: &[&PairedSample],
    prep: &Preprocess,
    shape: TargetShape,
) -> Result<EmbeddingDatabase> {
    let group_shape = prep.group_shape(shape)?;
    let rows: Vec<(Vec<f64>, Vec<f64>)> = samples
        .par_iter()
        .map(|s| {
            let y = prep.target_input(s, shape)?;
            Ok((target_encoder.embed(&y)?, y))
        })
        .collect::<Result<_>>()?;
    let mut db = EmbeddingDatabase::new();
    for (s, (emb, y)) in samples.iter().zip(rows) {
        let y32: Vec<f32> = y.iter().map(|&v| v as f32).collect();
        db.insert(s.id.clone(), &emb, &y32, group_shape)?;
    }
    Ok(db)
}

/// Query encoder and database for one row band.
#[derive(Debug, Clone)]
pub struct GroupModel {
    pub prep: Preprocess,
    pub query: EncoderParams<f32>,
    pub db: EmbeddingDatabase,
}

/// A synthesized full image in normalized units with per-band details.
#[derive(Debug, Clone)]
pub struct SynthesizedImage {
    pub image: Vec<f64>,
    pub parts: Vec<SynthesisResult>,
}

/// One or more row bands that together cover the target image.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    pub shape: TargetShape,
    pub groups: Vec<GroupModel>,
    pub cfg: SynthesisConfig,
}

impl Synthesizer {
    pub fn new(shape: TargetShape, groups: Vec<GroupModel>, cfg: SynthesisConfig) -> Result<Self> {
        if groups.is_empty() {
            return Err(MrisError::Empty("synthesizer groups"));
        }
        let mut next = 0;
        for g in &groups {
            let gs = g.prep.group_shape(shape)?;
            let start = g.prep.rows.as_ref().map_or(0, |r| r.start);
            if start != next {
                return Err(MrisError::Config("synthesizer row groups must tile the image".into()));
            }
            next += gs.height;
            if g.db.target_shape().is_some_and(|s| s != gs) {
                return Err(MrisError::DimensionMismatch {
                    context: "database target shape vs row group",
                    expected: gs.len(),
                    actual: g.db.target_shape().map_or(0, |s| s.len()),
                });
            }
        }
        if next != shape.height {
            return Err(MrisError::Config("synthesizer row groups must tile the image".into()));
        }
        Ok(Synthesizer { shape, groups, cfg })
    }

    pub fn synthesize(&self, sample: &PairedSample) -> Result<SynthesizedImage> {
        let mut image = Vec::with_capacity(self.shape.len());
        let mut parts = Vec::with_capacity(self.groups.len());
        for g in &self.groups {
            let x = g.prep.query_input(sample)?;
            let r = synthesize(&x, &g.query, &g.db, &self.cfg)?;
            image.extend_from_slice(&r.image);
            parts.push(r);
        }
        Ok(SynthesizedImage { image, parts })
    }

    /// True when any database holds a record of `subject`.
    pub fn knows_subject(&self, subject: &str) -> bool {
        self.groups
            .iter()
            .any(|g| g.db.records().iter().any(|r| r.id.subject == subject))
    }
}
