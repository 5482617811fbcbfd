//! Lexical baselines: Okapi BM25 and cosine TF-IDF over an inverted index.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Corpus;
pub use crate::text::{tokenize, Tokenizer, TokenizerMode};
use crate::types::{RankedList, RetrievalError, Retriever, Scored};

#[derive(Debug, Error, PartialEq)]
pub enum SparseError {
    #[error("cannot build a sparse index over an empty corpus")]
    EmptyCorpus,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
}

/// One (term, document) occurrence count.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Posting {
    pub term: String,
    pub doc_id: String,
    pub term_frequency: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PostingEntry {
    doc: u32,
    tf: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndexStats {
    pub doc_count: usize,
    pub avg_doc_len: f64,
    pub doc_lengths: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

impl Bm25Params {
    pub fn validate(&self) -> Result<(), SparseError> {
        if !(self.k1 > 0.0 && self.k1.is_finite()) {
            return Err(SparseError::InvalidParam(format!("k1 must be > 0, got {}", self.k1)));
        }
        if !(0.0..=1.0).contains(&self.b) {
            return Err(SparseError::InvalidParam(format!("b must be in [0,1], got {}", self.b)));
        }
        Ok(())
    }
}

/// Inverted index with per-document lengths and TF-IDF norms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SparseIndex {
    tokenizer: Tokenizer,
    doc_ids: Vec<String>,
    doc_lengths: Vec<u32>,
    avg_doc_len: f64,
    postings: BTreeMap<String, Vec<PostingEntry>>,
    tfidf_norms: Vec<f64>,
}

/// ln((N - df + 0.5) / (df + 0.5) + 1); never negative.
pub fn bm25_idf(n_docs: usize, df: usize) -> f64 {
    let (n, df) = (n_docs as f64, df as f64);
    ((n - df + 0.5) / (df + 0.5) + 1.0).ln()
}

/// Smoothed ln(N/df) + 1, so a term present in every document still counts.
pub fn tfidf_idf(n_docs: usize, df: usize) -> f64 {
    (n_docs as f64 / df as f64).ln() + 1.0
}

fn term_counts(tokens: Vec<String>) -> BTreeMap<String, u32> {
    let mut counts = BTreeMap::new();
    for t in tokens {
        *counts.entry(t).or_insert(0) += 1;
    }
    counts
}

pub fn build_sparse_index(corpus: &Corpus, tokenizer: Tokenizer) -> Result<SparseIndex, SparseError> {
    if corpus.is_empty() {
        return Err(SparseError::EmptyCorpus);
    }
    let mut doc_ids = Vec::with_capacity(corpus.len());
    let mut doc_lengths = Vec::with_capacity(corpus.len());
    let mut postings: BTreeMap<String, Vec<PostingEntry>> = BTreeMap::new();
    for (i, doc) in corpus.documents().iter().enumerate() {
        let tokens = tokenizer.tokenize(&format!("{}\n{}", doc.title, doc.text));
        doc_lengths.push(tokens.len() as u32);
        doc_ids.push(doc.id.clone());
        for (term, tf) in term_counts(tokens) {
            postings.entry(term).or_default().push(PostingEntry { doc: i as u32, tf });
        }
    }
    let n = doc_ids.len();
    let total: u64 = doc_lengths.iter().map(|&l| l as u64).sum();
    let avg_doc_len = total as f64 / n as f64;

    let mut sq = vec![0.0f64; n];
    for entries in postings.values() {
        let idf = tfidf_idf(n, entries.len());
        for e in entries {
            let w = e.tf as f64 * idf;
            sq[e.doc as usize] += w * w;
        }
    }
    let tfidf_norms = sq.into_iter().map(f64::sqrt).collect();

    Ok(SparseIndex {
        tokenizer,
        doc_ids,
        doc_lengths,
        avg_doc_len,
        postings,
        tfidf_norms,
    })
}

impl SparseIndex {
    pub fn tokenizer(&self) -> Tokenizer {
        self.tokenizer
    }

    pub fn doc_count(&self) -> usize {
        self.doc_ids.len()
    }

    pub fn vocabulary_size(&self) -> usize {
        self.postings.len()
    }

    pub fn stats(&self) -> SparseIndexStats {
        SparseIndexStats {
            doc_count: self.doc_ids.len(),
            avg_doc_len: self.avg_doc_len,
            doc_lengths: self
                .doc_ids
                .iter()
                .cloned()
                .zip(self.doc_lengths.iter().map(|&l| l as usize))
                .collect(),
        }
    }

    pub fn postings(&self, term: &str) -> Vec<Posting> {
        self.postings
            .get(term)
            .map(|entries| {
                entries
                    .iter()
                    .map(|e| Posting {
                        term: term.to_owned(),
                        doc_id: self.doc_ids[e.doc as usize].clone(),
                        term_frequency: e.tf,
                    })
                    .collect()
            })
            .unwrap_or_default()
    }

    fn check_k(k: usize) -> Result<(), SparseError> {
        if k == 0 {
            return Err(SparseError::InvalidParam("k must be >= 1".into()));
        }
        Ok(())
    }

    fn finish(&self, scores: HashMap<u32, f64>, k: usize) -> RankedList {
        let items = scores
            .into_iter()
            .map(|(doc, s)| Scored::new(self.doc_ids[doc as usize].clone(), s))
            .collect();
        RankedList::from_unsorted(items, k)
    }

    /// Okapi BM25 over the distinct query terms. Documents sharing no term
    /// with the query are not returned.
    pub fn search_bm25(&self, query: &str, k: usize, params: Bm25Params) -> Result<RankedList, SparseError> {
        Self::check_k(k)?;
        params.validate()?;
        let n = self.doc_ids.len();
        let mut scores: HashMap<u32, f64> = HashMap::new();
        for term in term_counts(self.tokenizer.tokenize(query)).keys() {
            let Some(entries) = self.postings.get(term) else {
                continue;
            };
            let idf = bm25_idf(n, entries.len());
            for e in entries {
                let tf = e.tf as f64;
                let dl = self.doc_lengths[e.doc as usize] as f64;
                let norm = params.k1 * (1.0 - params.b + params.b * dl / self.avg_doc_len);
                *scores.entry(e.doc).or_insert(0.0) += idf * tf * (params.k1 + 1.0) / (tf + norm);
            }
        }
        Ok(self.finish(scores, k))
    }

    /// Cosine similarity between tf·idf vectors of the query and each document.
    pub fn search_tfidf(&self, query: &str, k: usize) -> Result<RankedList, SparseError> {
        Self::check_k(k)?;
        let n = self.doc_ids.len();
        let mut dots: HashMap<u32, f64> = HashMap::new();
        let mut q_sq = 0.0;
        for (term, qtf) in term_counts(self.tokenizer.tokenize(query)) {
            let Some(entries) = self.postings.get(&term) else {
                continue;
            };
            let idf = tfidf_idf(n, entries.len());
            let qw = qtf as f64 * idf;
            q_sq += qw * qw;
            for e in entries {
                *dots.entry(e.doc).or_insert(0.0) += qw * e.tf as f64 * idf;
            }
        }
        let q_norm = q_sq.sqrt();
        let scores = dots
            .into_iter()
            .map(|(doc, dot)| (doc, dot / (q_norm * self.tfidf_norms[doc as usize])))
            .collect();
        Ok(self.finish(scores, k))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "method")]
pub enum SparseMethod {
    Bm25 { k1: f64, b: f64 },
    Tfidf,
}

impl Default for SparseMethod {
    fn default() -> Self {
        let p = Bm25Params::default();
        SparseMethod::Bm25 { k1: p.k1, b: p.b }
    }
}

/// A sparse index bound to a scoring method.
pub struct SparseRetriever<'a> {
    pub index: &'a SparseIndex,
    pub method: SparseMethod,
}

impl Retriever for SparseRetriever<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        let out = match self.method {
            SparseMethod::Bm25 { k1, b } => self.index.search_bm25(query, k, Bm25Params { k1, b }),
            SparseMethod::Tfidf => self.index.search_tfidf(query, k),
        };
        out.map_err(|e| RetrievalError(e.to_string()))
    }
}
