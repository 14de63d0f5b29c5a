//! Cross-modal retrieval and synthesis engine.
//!
//! Two encoders map paired samples of a query modality and a target modality
//! into a shared embedding space under cosine distance. They are trained with
//! a query-anchored triplet loss that never uses another timepoint of the same
//! subject as a negative. Unseen queries are then synthesized by weighted
//! k-nearest-neighbor regression over a database of target embeddings.

mod binio;
pub mod config;
pub mod datakit;
pub mod embedding_db;
pub mod error;
pub mod evaluation;
pub mod metric;
pub mod numerics;
pub mod pipeline;
pub mod synthesis;
pub mod train;
pub mod types;

pub use error::{ErrorClass, MrisError, Result};
pub use types::RecordId;
