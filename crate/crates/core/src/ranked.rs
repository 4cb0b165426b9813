//! Ranked recommendation lists shared by every retriever.

use std::time::Duration;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedEntry {
    pub artifact_id: String,
    pub score: f64,
}

/// Ordered recommendations for one intent.
///
/// Lists produced by similarity carry non-increasing scores. After an LLM
/// re-rank the order is the model's, and each entry keeps the similarity
/// score it arrived with.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub intent: String,
    pub entries: Vec<RankedEntry>,
    /// Similarity computations spent producing the list.
    pub node_evaluations: usize,
    #[serde(with = "secs")]
    pub elapsed: Duration,
    #[serde(default)]
    pub reranked: bool,
}

impl RankedList {
    pub fn new(intent: impl Into<String>, entries: Vec<RankedEntry>) -> Self {
        Self {
            intent: intent.into(),
            entries,
            node_evaluations: 0,
            elapsed: Duration::ZERO,
            reranked: false,
        }
    }

    pub fn from_scored(intent: impl Into<String>, scored: impl IntoIterator<Item = (String, f64)>) -> Self {
        Self::new(
            intent,
            scored
                .into_iter()
                .map(|(artifact_id, score)| RankedEntry { artifact_id, score })
                .collect(),
        )
    }

    pub fn ids(&self) -> Vec<&str> {
        self.entries.iter().map(|e| e.artifact_id.as_str()).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// 1-based position of `id`, if present.
    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.entries.iter().position(|e| e.artifact_id == id).map(|p| p + 1)
    }

    pub fn truncate(&mut self, k: usize) {
        self.entries.truncate(k);
    }
}

/// Error surfaced by any retriever; each solution keeps its own error type.
pub type RetrieveError = Box<dyn std::error::Error + Send + Sync>;

/// One recommendation solution: the tree engine or a comparative baseline.
pub trait Retriever: Send + Sync {
    /// Registry name, e.g. `bm25`.
    fn name(&self) -> &str;

    fn retrieve(&self, intent: &str) -> Result<RankedList, RetrieveError>;
}

mod secs {
    use serde::{Deserialize, Deserializer, Serializer};
    use std::time::Duration;

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(d.as_secs_f64())
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        let v = f64::deserialize(d)?;
        Duration::try_from_secs_f64(v).map_err(serde::de::Error::custom)
    }
}
