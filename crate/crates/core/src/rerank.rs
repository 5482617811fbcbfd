//! Second-stage reranking with a pluggable pairwise relevance scorer.

use std::collections::HashMap;
use std::path::Path;

use log::warn;
use serde::Deserialize;
use thiserror::Error;

use crate::corpus::Corpus;
use crate::text::{Tokenizer, TokenizerMode};
use crate::types::{RankedList, Scored};

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ScorerError(pub String);

/// Joint (query, document) relevance model. `doc_id` is passed alongside the
/// text so lookup-table scorers can key on it.
pub trait PairScorer: Sync {
    fn scorer_id(&self) -> &str;
    fn score(&self, query: &str, doc_id: &str, doc_text: &str) -> Result<f64, ScorerError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum RerankError {
    #[error("top_m must be >= 1")]
    ZeroTopM,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankFailure {
    pub doc_id: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RerankOutcome {
    pub ranking: RankedList,
    /// Candidates whose scoring failed; they are kept at the tail in prior order.
    pub failures: Vec<RerankFailure>,
}

/// Reorders `candidates` by scorer score (descending, ties by prior rank)
/// and keeps the first `top_m`. Documents missing from the corpus are scored
/// against an empty text.
pub fn rerank(
    candidates: &RankedList,
    query: &str,
    corpus: &Corpus,
    scorer: &dyn PairScorer,
    top_m: usize,
) -> Result<RerankOutcome, RerankError> {
    if top_m == 0 {
        return Err(RerankError::ZeroTopM);
    }
    let mut scored: Vec<(usize, f64, &str)> = Vec::with_capacity(candidates.len());
    let mut failed: Vec<&str> = Vec::new();
    let mut failures = Vec::new();
    for (pos, item) in candidates.items.iter().enumerate() {
        let text = corpus.get(&item.doc_id).map(|d| d.text.as_str()).unwrap_or("");
        match scorer.score(query, &item.doc_id, text) {
            Ok(s) if s.is_finite() => scored.push((pos, s, &item.doc_id)),
            Ok(s) => {
                failures.push(RerankFailure {
                    doc_id: item.doc_id.clone(),
                    message: format!("non-finite score {s}"),
                });
                failed.push(&item.doc_id);
            }
            Err(e) => {
                failures.push(RerankFailure {
                    doc_id: item.doc_id.clone(),
                    message: e.0,
                });
                failed.push(&item.doc_id);
            }
        }
    }
    for f in &failures {
        warn!("scorer {} failed on {}: {}", scorer.scorer_id(), f.doc_id, f.message);
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap_or(std::cmp::Ordering::Equal).then(a.0.cmp(&b.0)));
    let tail_score = scored.last().map(|s| s.1).unwrap_or(0.0);
    let mut items: Vec<Scored> = scored
        .into_iter()
        .map(|(_, s, id)| Scored::new(id, s))
        .collect();
    items.extend(failed.into_iter().map(|id| Scored::new(id, tail_score)));
    items.truncate(top_m);
    Ok(RerankOutcome {
        ranking: RankedList::new(items),
        failures,
    })
}

/// Deterministic lexical stand-in for a cross-encoder.
///
/// The query is split into sentences; each sentence scores the document by
/// the fraction of its distinct tokens the document contains, and the
/// document keeps its best sentence score plus a small bonus for the mean.
/// Long multi-issue fact descriptions thus do not drown out a document that
/// fully answers one issue.
#[derive(Debug, Clone)]
pub struct LexicalScorer {
    tokenizer: Tokenizer,
}

impl Default for LexicalScorer {
    fn default() -> Self {
        Self {
            tokenizer: Tokenizer::new(TokenizerMode::Auto),
        }
    }
}

pub(crate) fn split_sentences(text: &str) -> Vec<&str> {
    text.split(['.', '!', '?', ';', '\n', '。', '！', '？', '；'])
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .collect()
}

impl PairScorer for LexicalScorer {
    fn scorer_id(&self) -> &str {
        "lexical-sentence-coverage"
    }

    fn score(&self, query: &str, _doc_id: &str, doc_text: &str) -> Result<f64, ScorerError> {
        let doc: std::collections::HashSet<String> =
            self.tokenizer.tokenize(doc_text).into_iter().collect();
        let mut best = 0.0f64;
        let mut sum = 0.0;
        let mut n = 0usize;
        for sentence in split_sentences(query) {
            let toks: std::collections::BTreeSet<String> =
                self.tokenizer.tokenize(sentence).into_iter().collect();
            if toks.is_empty() {
                continue;
            }
            let hit = toks.iter().filter(|t| doc.contains(*t)).count() as f64 / toks.len() as f64;
            best = best.max(hit);
            sum += hit;
            n += 1;
        }
        if n == 0 {
            return Ok(0.0);
        }
        Ok(best + 0.1 * sum / n as f64)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    #[serde(default)]
    query: Option<String>,
    doc_id: String,
    score: f64,
}

/// Lookup-table scorer for tests and offline fixtures. Records with a query
/// take precedence over query-less (wildcard) records for the same document.
/// A missing entry is a scoring failure.
#[derive(Debug, Clone, Default)]
pub struct TableScorer {
    id: String,
    exact: HashMap<(String, String), f64>,
    wildcard: HashMap<String, f64>,
}

impl TableScorer {
    pub fn new(id: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            ..Default::default()
        }
    }

    pub fn with(mut self, doc_id: &str, score: f64) -> Self {
        self.wildcard.insert(doc_id.to_owned(), score);
        self
    }

    pub fn with_query(mut self, query: &str, doc_id: &str, score: f64) -> Self {
        self.exact.insert((query.to_owned(), doc_id.to_owned()), score);
        self
    }

    /// Loads newline-delimited records `{"query"?, "doc_id", "score"}`.
    pub fn load(path: &Path) -> Result<Self, ScorerError> {
        let body = std::fs::read_to_string(path)
            .map_err(|e| ScorerError(format!("{}: {e}", path.display())))?;
        let name = path.file_name().map_or_else(|| path.display().to_string(), |n| n.to_string_lossy().into_owned());
        let mut t = TableScorer::new(format!("table:{name}"));
        for (i, line) in body.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: TableRecord = serde_json::from_str(line)
                .map_err(|e| ScorerError(format!("{}:{}: {e}", path.display(), i + 1)))?;
            t = match r.query {
                Some(q) => t.with_query(&q, &r.doc_id, r.score),
                None => t.with(&r.doc_id, r.score),
            };
        }
        Ok(t)
    }
}

impl PairScorer for TableScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn score(&self, query: &str, doc_id: &str, _doc_text: &str) -> Result<f64, ScorerError> {
        self.exact
            .get(&(query.to_owned(), doc_id.to_owned()))
            .or_else(|| self.wildcard.get(doc_id))
            .copied()
            .ok_or_else(|| ScorerError(format!("no table entry for {doc_id}")))
    }
}

/// Remote scoring service: POST `{"query", "doc_id", "document"}` and read
/// `{"score"}` back.
#[derive(Debug, Clone)]
pub struct EndpointScorer {
    id: String,
    url: String,
    agent: ureq::Agent,
}

impl EndpointScorer {
    pub fn new(url: &str, timeout: std::time::Duration) -> Self {
        Self {
            id: format!("endpoint:{url}"),
            url: url.to_owned(),
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }
}

impl PairScorer for EndpointScorer {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn score(&self, query: &str, doc_id: &str, doc_text: &str) -> Result<f64, ScorerError> {
        crate::llm::count_network_call();
        let resp: serde_json::Value = self
            .agent
            .post(&self.url)
            .send_json(serde_json::json!({"query": query, "doc_id": doc_id, "document": doc_text}))
            .map_err(|e| ScorerError(e.to_string()))?
            .into_json()
            .map_err(|e| ScorerError(e.to_string()))?;
        resp.get("score")
            .and_then(serde_json::Value::as_f64)
            .ok_or_else(|| ScorerError("response has no numeric score".into()))
    }
}
