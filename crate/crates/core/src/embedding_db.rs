//! Target-modality embedding store with exact cosine top-k search.
//!
//! Embeddings are stored unit-normalized, so cosine distance to a normalized
//! query is `1 − dot`.
//!
//! File layout (little-endian):
//!
//! ```text
//! "MRDB" | version u32 | D u32 | H u32 | W u32 | count u64
//! per record: subject (u32 length + utf-8) | timepoint u32 | D × f32
//! per record, same order: H·W × f32 target image
//! crc64 u64
//! ```

use std::cmp::Ordering;
use std::collections::HashMap;
use std::path::Path;

use crate::binio::{FrameReader, FrameWriter};
use crate::error::{ensure_finite, ensure_len, MrisError, Result};
use crate::numerics::norm;
use crate::types::RecordId;

pub const DB_MAGIC: &[u8; 4] = b"MRDB";
pub const DB_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TargetShape {
    pub height: usize,
    pub width: usize,
}

impl TargetShape {
    pub fn new(height: usize, width: usize) -> Self {
        TargetShape { height, width }
    }

    pub fn len(&self) -> usize {
        self.height * self.width
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingRecord {
    pub id: RecordId,
    pub embedding: Vec<f32>,
    pub target_ref: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Neighbor {
    pub id: RecordId,
    pub distance: f64,
    /// Position of the record in the database.
    pub index: usize,
}

/// Neighbors sorted by ascending distance, ties by ascending id.
pub type NeighborSet = Vec<Neighbor>;

#[derive(Debug, Clone, Default)]
pub struct EmbeddingDatabase {
    dim: usize,
    shape: Option<TargetShape>,
    records: Vec<EmbeddingRecord>,
    targets: Vec<Vec<f32>>,
    by_id: HashMap<RecordId, usize>,
}

impl PartialEq for EmbeddingDatabase {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim
            && self.shape == other.shape
            && self.records == other.records
            && self.targets == other.targets
    }
}

impl EmbeddingDatabase {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Embedding dimension; 0 until the first insert.
    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn target_shape(&self) -> Option<TargetShape> {
        self.shape
    }

    pub fn records(&self) -> &[EmbeddingRecord] {
        &self.records
    }

    pub fn target(&self, target_ref: usize) -> &[f32] {
        &self.targets[target_ref]
    }

    pub fn record_index(&self, id: &RecordId) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &RecordId) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn insert(
        &mut self,
        id: RecordId,
        embedding: &[f64],
        target: &[f32],
        shape: TargetShape,
    ) -> Result<()> {
        if self.by_id.contains_key(&id) {
            return Err(MrisError::DuplicateId(id.to_string()));
        }
        if self.is_empty() {
            if embedding.is_empty() {
                return Err(MrisError::Empty("embedding"));
            }
        } else {
            ensure_len("database embedding", self.dim, embedding.len())?;
            if Some(shape) != self.shape {
                let expected = self.shape.map_or(0, |s| s.len());
                return Err(MrisError::DimensionMismatch {
                    context: "database target shape",
                    expected,
                    actual: shape.len(),
                });
            }
        }
        ensure_len("database target", shape.len(), target.len())?;
        ensure_finite(embedding, "database embedding")?;
        if !target.iter().all(|v| v.is_finite()) {
            return Err(MrisError::NonFinite("database target"));
        }
        let n = norm(embedding);
        if n == 0.0 {
            return Err(MrisError::Degenerate(format!("zero-norm embedding for {id}")));
        }
        self.dim = embedding.len();
        self.shape = Some(shape);
        let target_ref = self.targets.len();
        self.targets.push(target.to_vec());
        self.by_id.insert(id.clone(), self.records.len());
        self.records.push(EmbeddingRecord {
            id,
            embedding: embedding.iter().map(|v| (v / n) as f32).collect(),
            target_ref,
        });
        Ok(())
    }

    /// Exact top-`k` by cosine distance (exhaustive scan).
    pub fn knn_query(&self, query: &[f64], k: usize) -> Result<NeighborSet> {
        if self.is_empty() {
            return Err(MrisError::Empty("embedding database"));
        }
        if k == 0 {
            return Err(MrisError::Config("k must be >= 1".into()));
        }
        ensure_len("query embedding", self.dim, query.len())?;
        ensure_finite(query, "query embedding")?;
        let qn = norm(query);
        if qn == 0.0 {
            return Err(MrisError::Degenerate("zero-norm query embedding".into()));
        }
        let unit: Vec<f64> = query.iter().map(|v| v / qn).collect();

        let mut all: Vec<Neighbor> = self
            .records
            .iter()
            .enumerate()
            .map(|(index, r)| {
                let dot: f64 = r.embedding.iter().zip(&unit).map(|(&e, q)| e as f64 * q).sum();
                Neighbor {
                    id: r.id.clone(),
                    distance: (1.0 - dot).clamp(0.0, 2.0),
                    index,
                }
            })
            .collect();
        let k = k.min(all.len());
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, neighbor_order);
            all.truncate(k);
        }
        all.sort_by(neighbor_order);
        Ok(all)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let shape = self.shape.unwrap_or(TargetShape::new(0, 0));
        let mut w = FrameWriter::new(DB_MAGIC);
        w.u32(DB_VERSION);
        w.u32(self.dim as u32);
        w.u32(shape.height as u32);
        w.u32(shape.width as u32);
        w.u64(self.records.len() as u64);
        for r in &self.records {
            w.string(&r.id.subject);
            w.u32(r.id.timepoint);
            w.f32s(&r.embedding);
        }
        for r in &self.records {
            w.f32s(&self.targets[r.target_ref]);
        }
        w.write_to(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = FrameReader::open(path, DB_MAGIC)?;
        r.version(DB_VERSION)?;
        let dim = r.u32()? as usize;
        let height = r.u32()? as usize;
        let width = r.u32()? as usize;
        let count = r.u64()? as usize;
        let shape = TargetShape::new(height, width);

        let mut db = EmbeddingDatabase::new();
        if count == 0 {
            r.finish()?;
            return Ok(db);
        }
        db.dim = dim;
        db.shape = Some(shape);
        for _ in 0..count {
            let subject = r.string()?;
            let timepoint = r.u32()?;
            let embedding = r.f32s(dim)?;
            let id = RecordId::new(subject, timepoint);
            if db.by_id.insert(id.clone(), db.records.len()).is_some() {
                return Err(MrisError::format(path, format!("duplicate record {id}")));
            }
            let target_ref = db.records.len();
            db.records.push(EmbeddingRecord {
                id,
                embedding,
                target_ref,
            });
        }
        for _ in 0..count {
            db.targets.push(r.f32s(shape.len())?);
        }
        r.finish()?;
        Ok(db)
    }
}

fn neighbor_order(a: &Neighbor, b: &Neighbor) -> Ordering {
    a.distance
        .total_cmp(&b.distance)
        .then_with(|| a.id.cmp(&b.id))
}
