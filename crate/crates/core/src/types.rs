//! Ranked result containers shared by every retrieval stage.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A single scored document reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scored {
    pub doc_id: String,
    pub score: f64,
}

impl Scored {
    pub fn new(doc_id: impl Into<String>, score: f64) -> Self {
        Self {
            doc_id: doc_id.into(),
            score,
        }
    }
}

/// Descending by score, then ascending by id. Every ranking in the crate
/// uses this order. `0.0` and `-0.0` tie; NaN falls back to `total_cmp`.
pub fn score_desc_id_asc(a: &Scored, b: &Scored) -> Ordering {
    b.score
        .partial_cmp(&a.score)
        .unwrap_or_else(|| b.score.total_cmp(&a.score))
        .then_with(|| a.doc_id.cmp(&b.doc_id))
}

/// Ordered retrieval results. Position 0 is rank 1.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RankedList {
    pub items: Vec<Scored>,
}

impl RankedList {
    pub fn new(items: Vec<Scored>) -> Self {
        Self { items }
    }

    /// Sorts with [`score_desc_id_asc`] and keeps the first `k` entries.
    pub fn from_unsorted(mut items: Vec<Scored>, k: usize) -> Self {
        items.sort_by(score_desc_id_asc);
        items.truncate(k);
        Self { items }
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.doc_id.as_str())
    }

    pub fn id_vec(&self) -> Vec<String> {
        self.ids().map(str::to_owned).collect()
    }

    /// 1-based rank of `doc_id`, if present.
    pub fn rank_of(&self, doc_id: &str) -> Option<usize> {
        self.items.iter().position(|s| s.doc_id == doc_id).map(|p| p + 1)
    }

    pub fn truncated(mut self, k: usize) -> Self {
        self.items.truncate(k);
        self
    }

    /// First duplicated id, if any.
    pub fn first_duplicate(&self) -> Option<&str> {
        let mut seen = HashSet::new();
        self.ids().find(|id| !seen.insert(*id))
    }
}

/// Failure of a first-stage retriever, carried as text so heterogeneous
/// backends share one error type at the agent boundary.
#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct RetrievalError(pub String);

/// Anything that can turn a query into a ranking.
pub trait Retriever: Sync {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum EvidenceError {
    #[error("duplicate document id {0} in evidence set")]
    Duplicate(String),
    #[error("non-finite score for document {0}")]
    NonFinite(String),
    #[error("evidence set is not ordered by non-increasing score at position {0}")]
    Unordered(usize),
}

/// The evidence retrieved for one case, ordered by decreasing score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidenceSet {
    pub case_id: String,
    pub items: Vec<Scored>,
}

impl EvidenceSet {
    pub fn new(case_id: impl Into<String>, items: Vec<Scored>) -> Result<Self, EvidenceError> {
        let set = Self {
            case_id: case_id.into(),
            items,
        };
        set.validate()?;
        Ok(set)
    }

    /// Takes the first `n` entries of a ranking. Scores are rewritten so the
    /// order invariant holds even when the source ranking is not score-sorted
    /// (for instance after a selection stage).
    pub fn from_ranking(case_id: impl Into<String>, ranking: &RankedList, n: usize) -> Self {
        let total = ranking.len().min(n);
        let items = ranking
            .items
            .iter()
            .take(total)
            .enumerate()
            .map(|(i, s)| Scored::new(s.doc_id.clone(), (total - i) as f64))
            .collect();
        Self {
            case_id: case_id.into(),
            items,
        }
    }

    pub fn validate(&self) -> Result<(), EvidenceError> {
        let mut seen = HashSet::new();
        for (i, item) in self.items.iter().enumerate() {
            if !seen.insert(item.doc_id.as_str()) {
                return Err(EvidenceError::Duplicate(item.doc_id.clone()));
            }
            if !item.score.is_finite() {
                return Err(EvidenceError::NonFinite(item.doc_id.clone()));
            }
            if i > 0 && self.items[i - 1].score < item.score {
                return Err(EvidenceError::Unordered(i));
            }
        }
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.items.iter().map(|s| s.doc_id.as_str())
    }
}
