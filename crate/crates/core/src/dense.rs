//! Exact dot-product retrieval over provider embeddings, and K-fold mining
//! of contrastive training triples with static hard negatives.
//!
//! Encoders are not trained here. A provider is anything implementing
//! [`EmbeddingProvider`]; for mining, the caller supplies one provider per
//! fold, where provider `i` must be the model that never saw fold `i`.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{Read, Write};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{CaseRecord, Corpus};
use crate::text::Tokenizer;
use crate::types::{RankedList, RetrievalError, Retriever, Scored};

pub const VECTOR_MAGIC: &[u8; 8] = b"JFVEC001";

#[derive(Debug, Error, Clone, PartialEq)]
#[error("{0}")]
pub struct ProviderError(pub String);

pub trait EmbeddingProvider: Sync {
    fn provider_id(&self) -> &str;
    fn dimension(&self) -> usize;
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError>;
}

#[derive(Debug, Error, PartialEq)]
pub enum DenseError {
    #[error("provider dimension must be >= 1")]
    ZeroDimension,
    #[error("provider failed on document {doc_id}: {source}")]
    Provider {
        doc_id: String,
        #[source]
        source: ProviderError,
    },
    #[error("provider returned {got} vectors for a batch of {expected}")]
    BatchShape { expected: usize, got: usize },
    #[error("vector for {id} has dimension {got}, expected {expected}")]
    DimensionMismatch { id: String, expected: usize, got: usize },
    #[error("index was built with provider {index}, query provider is {query}")]
    ProviderMismatch { index: String, query: String },
    #[error("dense index is empty")]
    EmptyIndex,
    #[error("invalid parameter: {0}")]
    InvalidParam(String),
    #[error("vector file: {0}")]
    Format(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EmbedOptions {
    pub batch_size: usize,
    /// Maximum number of batches embedded concurrently.
    pub max_inflight: usize,
}

impl Default for EmbedOptions {
    fn default() -> Self {
        Self {
            batch_size: 32,
            max_inflight: 4,
        }
    }
}

/// One stored vector per corpus document, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseIndex {
    provider_id: String,
    dimension: usize,
    ids: Vec<String>,
    vectors: Vec<Vec<f32>>,
}

fn embed_checked(
    provider: &dyn EmbeddingProvider,
    ids: &[&str],
    texts: &[&str],
) -> Result<Vec<Vec<f32>>, DenseError> {
    let dim = provider.dimension();
    let vectors = match provider.embed(texts) {
        Ok(v) => v,
        Err(batch_err) => {
            // Re-embed one at a time to name the failing document.
            for (id, text) in ids.iter().zip(texts) {
                if let Err(source) = provider.embed(&[text]) {
                    return Err(DenseError::Provider {
                        doc_id: id.to_string(),
                        source,
                    });
                }
            }
            return Err(DenseError::Provider {
                doc_id: ids.first().unwrap_or(&"").to_string(),
                source: batch_err,
            });
        }
    };
    if vectors.len() != texts.len() {
        return Err(DenseError::BatchShape {
            expected: texts.len(),
            got: vectors.len(),
        });
    }
    for (id, v) in ids.iter().zip(&vectors) {
        if v.len() != dim {
            return Err(DenseError::DimensionMismatch {
                id: id.to_string(),
                expected: dim,
                got: v.len(),
            });
        }
    }
    Ok(vectors)
}

pub fn build_dense_index(
    corpus: &Corpus,
    provider: &dyn EmbeddingProvider,
    opts: EmbedOptions,
) -> Result<DenseIndex, DenseError> {
    if provider.dimension() == 0 {
        return Err(DenseError::ZeroDimension);
    }
    let batch = opts.batch_size.max(1);
    let inflight = opts.max_inflight.max(1);
    let docs = corpus.documents();
    let batches: Vec<_> = docs.chunks(batch).collect();
    let mut vectors = Vec::with_capacity(docs.len());
    // Windows of `inflight` batches run concurrently; results are appended in
    // corpus order regardless of completion order.
    for window in batches.chunks(inflight) {
        let results: Vec<Result<Vec<Vec<f32>>, DenseError>> = std::thread::scope(|s| {
            let handles: Vec<_> = window
                .iter()
                .map(|chunk| {
                    s.spawn(move || {
                        let ids: Vec<&str> = chunk.iter().map(|d| d.id.as_str()).collect();
                        let texts: Vec<&str> = chunk.iter().map(|d| d.text.as_str()).collect();
                        embed_checked(provider, &ids, &texts)
                    })
                })
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("embedding thread panicked"))
                .collect()
        });
        for r in results {
            vectors.extend(r?);
        }
    }
    Ok(DenseIndex {
        provider_id: provider.provider_id().to_owned(),
        dimension: provider.dimension(),
        ids: docs.iter().map(|d| d.id.clone()).collect(),
        vectors,
    })
}

pub fn dot(a: &[f32], b: &[f32]) -> f64 {
    a.iter().zip(b).map(|(&x, &y)| x as f64 * y as f64).sum()
}

impl DenseIndex {
    pub fn provider_id(&self) -> &str {
        &self.provider_id
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn vector(&self, id: &str) -> Option<&[f32]> {
        self.ids.iter().position(|x| x == id).map(|i| self.vectors[i].as_slice())
    }

    /// Exhaustive top-k by dot product against a precomputed query vector.
    pub fn search_vector(&self, query: &[f32], k: usize) -> Result<RankedList, DenseError> {
        if self.ids.is_empty() {
            return Err(DenseError::EmptyIndex);
        }
        if k == 0 {
            return Err(DenseError::InvalidParam("k must be >= 1".into()));
        }
        if query.len() != self.dimension {
            return Err(DenseError::DimensionMismatch {
                id: "<query>".into(),
                expected: self.dimension,
                got: query.len(),
            });
        }
        let items = self
            .ids
            .iter()
            .zip(&self.vectors)
            .map(|(id, v)| Scored::new(id.clone(), dot(query, v)))
            .collect();
        Ok(RankedList::from_unsorted(items, k))
    }

    pub fn search(
        &self,
        query: &str,
        provider: &dyn EmbeddingProvider,
        k: usize,
    ) -> Result<RankedList, DenseError> {
        if provider.provider_id() != self.provider_id {
            return Err(DenseError::ProviderMismatch {
                index: self.provider_id.clone(),
                query: provider.provider_id().to_owned(),
            });
        }
        if self.ids.is_empty() {
            return Err(DenseError::EmptyIndex);
        }
        let q = embed_checked(provider, &["<query>"], &[query])?;
        self.search_vector(&q[0], k)
    }

    /// Little-endian layout: magic, u32 dimension, u32 count, u32 provider-id
    /// length, provider-id bytes, then per document a u32 id length, the id
    /// bytes and `dimension` f32 values.
    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        w.write_all(VECTOR_MAGIC)?;
        w.write_all(&(self.dimension as u32).to_le_bytes())?;
        w.write_all(&(self.ids.len() as u32).to_le_bytes())?;
        w.write_all(&(self.provider_id.len() as u32).to_le_bytes())?;
        w.write_all(self.provider_id.as_bytes())?;
        for (id, v) in self.ids.iter().zip(&self.vectors) {
            w.write_all(&(id.len() as u32).to_le_bytes())?;
            w.write_all(id.as_bytes())?;
            for x in v {
                w.write_all(&x.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from(mut r: impl Read) -> Result<Self, DenseError> {
        fn fmt_err(e: std::io::Error) -> DenseError {
            DenseError::Format(e.to_string())
        }
        fn read_u32(r: &mut impl Read) -> Result<u32, DenseError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(fmt_err)?;
            Ok(u32::from_le_bytes(b))
        }
        fn read_string(r: &mut impl Read) -> Result<String, DenseError> {
            let len = read_u32(r)? as usize;
            let mut b = vec![0u8; len];
            r.read_exact(&mut b).map_err(fmt_err)?;
            String::from_utf8(b).map_err(|e| DenseError::Format(e.to_string()))
        }
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(fmt_err)?;
        if &magic != VECTOR_MAGIC {
            return Err(DenseError::Format("bad magic".into()));
        }
        let dimension = read_u32(&mut r)? as usize;
        let count = read_u32(&mut r)? as usize;
        let provider_id = read_string(&mut r)?;
        let mut ids = Vec::with_capacity(count);
        let mut vectors = Vec::with_capacity(count);
        for _ in 0..count {
            ids.push(read_string(&mut r)?);
            let mut raw = vec![0u8; dimension * 4];
            r.read_exact(&mut raw).map_err(fmt_err)?;
            vectors.push(
                raw.chunks_exact(4)
                    .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                    .collect(),
            );
        }
        Ok(Self {
            provider_id,
            dimension,
            ids,
            vectors,
        })
    }
}

/// A dense index bound to the provider that built it.
pub struct DenseRetriever<'a> {
    pub index: &'a DenseIndex,
    pub provider: &'a dyn EmbeddingProvider,
}

impl Retriever for DenseRetriever<'_> {
    fn retrieve(&self, query: &str, k: usize) -> Result<RankedList, RetrievalError> {
        self.index
            .search(query, self.provider, k)
            .map_err(|e| RetrievalError(e.to_string()))
    }
}

/// Deterministic feature-hashing embedder: each token is hashed into a
/// signed bucket and the result is L2-normalized. Useful as a lexical-ish
/// stand-in when no neural encoder is available.
#[derive(Debug, Clone)]
pub struct HashingProvider {
    id: String,
    dimension: usize,
    salt: u64,
    tokenizer: Tokenizer,
}

impl HashingProvider {
    pub fn new(dimension: usize, salt: u64) -> Self {
        Self {
            id: format!("hashing:{dimension}:{salt}"),
            dimension,
            salt,
            tokenizer: Tokenizer::default(),
        }
    }
}

impl EmbeddingProvider for HashingProvider {
    fn provider_id(&self) -> &str {
        &self.id
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        Ok(texts
            .iter()
            .map(|t| {
                let mut v = vec![0f32; self.dimension];
                for tok in self.tokenizer.tokenize(t) {
                    let h = fnv1a64(tok.as_bytes()) ^ self.salt.wrapping_mul(0x9E37_79B9_7F4A_7C15);
                    let h = h.wrapping_mul(0xff51_afd7_ed55_8ccd);
                    let bucket = (h % self.dimension as u64) as usize;
                    let sign = if (h >> 63) == 0 { 1.0 } else { -1.0 };
                    v[bucket] += sign;
                }
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt();
                if norm > 0.0 {
                    v.iter_mut().for_each(|x| *x /= norm);
                }
                v
            })
            .collect())
    }
}

/// 64-bit FNV-1a. Used for fold assignment, so the value must stay stable
/// across releases and languages.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

pub fn fold_of(case_id: &str, k: usize) -> usize {
    (fnv1a64(case_id.as_bytes()) % k as u64) as usize
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningTriple {
    pub query_text: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
    pub fold_index: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MiningParams {
    pub folds: usize,
    pub n_neg: usize,
    pub depth: usize,
}

impl Default for MiningParams {
    fn default() -> Self {
        Self {
            folds: 5,
            n_neg: 4,
            depth: 100,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MiningOutput {
    pub triples: Vec<MiningTriple>,
    pub warnings: Vec<String>,
}

/// Mines one triple per (case, gold positive). Each case's negatives come
/// from the provider of its own fold: the first `n_neg` documents of that
/// provider's top-`depth` ranking that are not gold for the case.
pub fn mine_triples_kfold(
    cases: &[CaseRecord],
    corpus: &Corpus,
    fold_providers: &[&dyn EmbeddingProvider],
    params: MiningParams,
    embed: EmbedOptions,
) -> Result<MiningOutput, DenseError> {
    let MiningParams { folds, n_neg, depth } = params;
    if folds < 2 {
        return Err(DenseError::InvalidParam(format!("K must be >= 2, got {folds}")));
    }
    if fold_providers.len() != folds {
        return Err(DenseError::InvalidParam(format!(
            "expected {folds} fold providers, got {}",
            fold_providers.len()
        )));
    }
    if n_neg == 0 || depth < n_neg {
        return Err(DenseError::InvalidParam(format!(
            "need 1 <= n_neg <= depth, got n_neg={n_neg} depth={depth}"
        )));
    }
    let indexes = fold_providers
        .iter()
        .map(|p| build_dense_index(corpus, *p, embed))
        .collect::<Result<Vec<_>, _>>()?;

    let mut triples = Vec::new();
    let mut warnings = Vec::new();
    for case in cases {
        let fold = fold_of(&case.id, folds);
        if case.gold_evidence_ids.is_empty() {
            warnings.push(format!("case {}: no gold evidence, skipped", case.id));
            continue;
        }
        let ranking = indexes[fold].search(&case.facts, fold_providers[fold], depth)?;
        let negatives: Vec<String> = ranking
            .ids()
            .filter(|id| !case.gold_evidence_ids.contains(*id))
            .take(n_neg)
            .map(str::to_owned)
            .collect();
        if negatives.len() < n_neg {
            let msg = format!(
                "case {}: only {} non-positive candidates in top {depth} (wanted {n_neg})",
                case.id,
                negatives.len()
            );
            warn!("{msg}");
            warnings.push(msg);
        }
        for positive in &case.gold_evidence_ids {
            triples.push(MiningTriple {
                query_text: case.facts.clone(),
                positive_id: positive.clone(),
                negative_ids: negatives.clone(),
                fold_index: fold,
            });
        }
    }
    Ok(MiningOutput { triples, warnings })
}

/// Checks both triple invariants against the gold labels.
pub fn validate_triples(
    triples: &[MiningTriple],
    gold_by_query: &BTreeMap<&str, &BTreeSet<String>>,
) -> Result<(), String> {
    for t in triples {
        if t.negative_ids.contains(&t.positive_id) {
            return Err(format!("positive {} appears among negatives", t.positive_id));
        }
        if let Some(gold) = gold_by_query.get(t.query_text.as_str()) {
            if let Some(bad) = t.negative_ids.iter().find(|n| gold.contains(*n)) {
                return Err(format!("gold document {bad} mined as a negative"));
            }
        }
    }
    Ok(())
}
