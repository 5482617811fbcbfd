#![allow(dead_code)]

use std::collections::BTreeMap;

use judgeflow_core::corpus::{Corpus, DocKind, LegalDocument};
use judgeflow_core::dense::{EmbeddingProvider, ProviderError};
use judgeflow_core::fusion::RouteRanking;

/// Parses the text itself as a comma-separated vector.
pub struct VecProvider {
    pub dim: usize,
}

impl EmbeddingProvider for VecProvider {
    fn provider_id(&self) -> &str {
        "vec-text"
    }
    fn dimension(&self) -> usize {
        self.dim
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        texts
            .iter()
            .map(|t| {
                t.split(',')
                    .map(|x| x.trim().parse::<f32>().map_err(|e| ProviderError(e.to_string())))
                    .collect()
            })
            .collect()
    }
}

/// Provider `k` of `K`: documents whose numeric suffix is `k mod K` point
/// along the query direction, all others are orthogonal to it. Its top
/// ranking therefore consists only of documents from partition `k`.
pub struct PartitionProvider {
    pub id: String,
    pub part: usize,
    pub parts: usize,
}

impl PartitionProvider {
    pub fn new(part: usize, parts: usize) -> Self {
        Self {
            id: format!("partition-{part}-of-{parts}"),
            part,
            parts,
        }
    }
}

pub fn doc_number(text: &str) -> Option<usize> {
    text.strip_prefix("doc ")?.split_whitespace().next()?.parse().ok()
}

impl EmbeddingProvider for PartitionProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }
    fn dimension(&self) -> usize {
        2
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| match doc_number(t) {
                Some(n) if n % self.parts == self.part => vec![1.0, (n % 97) as f32 / 1000.0],
                Some(n) => vec![0.0, (n % 89) as f32 / 1000.0],
                None => vec![1.0, 0.0],
            })
            .collect())
    }
}

pub fn numbered_corpus(n: usize) -> Corpus {
    Corpus::from_documents(
        (0..n)
            .map(|i| LegalDocument {
                id: format!("D{i:03}"),
                kind: DocKind::Statute,
                title: format!("T{i}"),
                text: format!("doc {i} text"),
            })
            .collect(),
    )
    .unwrap()
}

/// Straightforward double loop over the set of all ids and all routes.
pub fn naive_rrf(routes: &[RouteRanking], k_rrf: f64) -> Vec<(String, f64)> {
    let mut all: Vec<String> = routes.iter().flat_map(|r| r.ranking.id_vec()).collect();
    all.sort();
    all.dedup();
    let mut scored: Vec<(String, f64)> = Vec::new();
    for id in all {
        let mut s = 0.0;
        for r in routes {
            for (pos, item) in r.ranking.items.iter().enumerate() {
                if item.doc_id == id {
                    s += r.weight / (k_rrf + (pos + 1) as f64);
                }
            }
        }
        scored.push((id, s));
    }
    scored.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then_with(|| a.0.cmp(&b.0)));
    scored
}

pub fn by_id<T: Clone>(items: &[(String, T)]) -> BTreeMap<String, T> {
    items.iter().cloned().collect()
}
