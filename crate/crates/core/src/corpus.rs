//! Legal corpus and case records: ingestion, validation and snapshots.
//!
//! Both input files are newline-delimited JSON, one record per line. Blank
//! lines are ignored. Identifiers, charges and evidence ids are NFC-normalized
//! and trimmed on the way in.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fsio::write_atomic;
use crate::text::normalize_key;

pub const SNAPSHOT_MAGIC: &str = "JFSTORE1";
pub const SNAPSHOT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: malformed record: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id}")]
    DuplicateId { id: String, line: usize },
    #[error("line {line}: document {id} has empty text")]
    EmptyText { id: String, line: usize },
    #[error("case {case_id}: gold evidence id {doc_id} does not exist in the corpus")]
    DanglingEvidence { case_id: String, doc_id: String },
    #[error("case {case_id}: {field} must be a nonnegative finite number")]
    NegativePenalty { case_id: String, field: &'static str },
    #[error("unsupported snapshot header {found:?} (expected {SNAPSHOT_MAGIC} version {SNAPSHOT_VERSION})")]
    Version { found: String },
    #[error("snapshot is truncated or inconsistent: {0}")]
    Corrupt(String),
}

impl StoreError {
    fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.to_owned(),
            source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DocKind {
    Statute,
    Precedent,
}

impl DocKind {
    pub fn as_str(self) -> &'static str {
        match self {
            DocKind::Statute => "statute",
            DocKind::Precedent => "precedent",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LegalDocument {
    pub id: String,
    pub kind: DocKind,
    pub title: String,
    pub text: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Conviction,
    Acquittal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseRecord {
    pub id: String,
    pub facts: String,
    pub gold_evidence_ids: BTreeSet<String>,
    pub gold_charges: BTreeSet<String>,
    /// `None` means no custodial sentence; `Some(0)` is a valid value.
    pub gold_prison_months: Option<u32>,
    pub gold_fine_amount: Option<f64>,
    pub gold_verdict: Verdict,
    pub gold_judgment_text: String,
}

/// On-disk case shape: penalties are read signed so negative values are
/// reported as validation errors rather than parse errors.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCase {
    id: String,
    facts: String,
    gold_evidence_ids: Vec<String>,
    gold_charges: Vec<String>,
    gold_prison_months: Option<i64>,
    gold_fine_amount: Option<f64>,
    gold_verdict: Verdict,
    gold_judgment_text: String,
}

/// A value produced by ingestion together with non-fatal warnings.
#[derive(Debug, Clone)]
pub struct Ingest<T> {
    pub value: T,
    pub warnings: Vec<String>,
}

/// Immutable, id-indexed set of legal documents.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    docs: Vec<LegalDocument>,
    by_id: HashMap<String, usize>,
}

impl Corpus {
    /// Builds a corpus from in-memory documents, applying the same
    /// validation as file ingestion (line numbers are 1-based positions).
    pub fn from_documents(docs: Vec<LegalDocument>) -> Result<Self, StoreError> {
        let mut corpus = Corpus::default();
        for (i, doc) in docs.into_iter().enumerate() {
            corpus.push(doc, i + 1)?;
        }
        Ok(corpus)
    }

    fn push(&mut self, mut doc: LegalDocument, line: usize) -> Result<(), StoreError> {
        doc.id = normalize_key(&doc.id);
        if doc.id.is_empty() {
            return Err(StoreError::Malformed {
                line,
                message: "empty id".into(),
            });
        }
        if doc.text.trim().is_empty() {
            return Err(StoreError::EmptyText { id: doc.id, line });
        }
        if self.by_id.contains_key(&doc.id) {
            return Err(StoreError::DuplicateId { id: doc.id, line });
        }
        self.by_id.insert(doc.id.clone(), self.docs.len());
        self.docs.push(doc);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.docs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.docs.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&LegalDocument> {
        self.by_id.get(id).map(|&i| &self.docs[i])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn documents(&self) -> &[LegalDocument] {
        &self.docs
    }

    pub fn kind_of(&self, id: &str) -> Option<DocKind> {
        self.get(id).map(|d| d.kind)
    }
}

/// Validated case records in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CaseSet {
    cases: Vec<CaseRecord>,
    by_id: HashMap<String, usize>,
}

impl CaseSet {
    pub fn from_cases(cases: Vec<CaseRecord>, corpus: &Corpus) -> Result<Self, StoreError> {
        let mut set = CaseSet::default();
        for (i, case) in cases.into_iter().enumerate() {
            let raw = RawCase {
                id: case.id,
                facts: case.facts,
                gold_evidence_ids: case.gold_evidence_ids.into_iter().collect(),
                gold_charges: case.gold_charges.into_iter().collect(),
                gold_prison_months: case.gold_prison_months.map(i64::from),
                gold_fine_amount: case.gold_fine_amount,
                gold_verdict: case.gold_verdict,
                gold_judgment_text: case.gold_judgment_text,
            };
            set.push(raw, i + 1, corpus)?;
        }
        Ok(set)
    }

    fn push(&mut self, raw: RawCase, line: usize, corpus: &Corpus) -> Result<(), StoreError> {
        let id = normalize_key(&raw.id);
        if id.is_empty() {
            return Err(StoreError::Malformed {
                line,
                message: "empty case id".into(),
            });
        }
        if self.by_id.contains_key(&id) {
            return Err(StoreError::DuplicateId { id, line });
        }
        let gold_prison_months = match raw.gold_prison_months {
            None => None,
            Some(m) => Some(u32::try_from(m).map_err(|_| StoreError::NegativePenalty {
                case_id: id.clone(),
                field: "gold_prison_months",
            })?),
        };
        if let Some(f) = raw.gold_fine_amount {
            if !(f.is_finite() && f >= 0.0) {
                return Err(StoreError::NegativePenalty {
                    case_id: id,
                    field: "gold_fine_amount",
                });
            }
        }
        let mut gold_evidence_ids = BTreeSet::new();
        for doc_id in &raw.gold_evidence_ids {
            let doc_id = normalize_key(doc_id);
            if !corpus.contains(&doc_id) {
                return Err(StoreError::DanglingEvidence {
                    case_id: id,
                    doc_id,
                });
            }
            gold_evidence_ids.insert(doc_id);
        }
        let gold_charges = raw
            .gold_charges
            .iter()
            .map(|c| normalize_key(c))
            .filter(|c| !c.is_empty())
            .collect();
        self.by_id.insert(id.clone(), self.cases.len());
        self.cases.push(CaseRecord {
            id,
            facts: raw.facts,
            gold_evidence_ids,
            gold_charges,
            gold_prison_months,
            gold_fine_amount: raw.gold_fine_amount,
            gold_verdict: raw.gold_verdict,
            gold_judgment_text: raw.gold_judgment_text,
        });
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.cases.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cases.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&CaseRecord> {
        self.by_id.get(id).map(|&i| &self.cases[i])
    }

    pub fn cases(&self) -> &[CaseRecord] {
        &self.cases
    }
}

/// A corpus together with the cases validated against it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Store {
    pub corpus: Corpus,
    pub cases: CaseSet,
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, StoreError> {
    let file = fs::File::open(path).map_err(|e| StoreError::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| StoreError::io(path, e))?;
        if !line.trim().is_empty() {
            out.push((i + 1, line));
        }
    }
    Ok(out)
}

pub fn ingest_corpus(path: &Path) -> Result<Ingest<Corpus>, StoreError> {
    let mut corpus = Corpus::default();
    for (line_no, line) in read_lines(path)? {
        let doc: LegalDocument =
            serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
                line: line_no,
                message: e.to_string(),
            })?;
        corpus.push(doc, line_no)?;
    }
    let mut warnings = Vec::new();
    if corpus.is_empty() {
        let msg = format!("{}: corpus file contains no documents", path.display());
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Ingest {
        value: corpus,
        warnings,
    })
}

pub fn ingest_cases(path: &Path, corpus: &Corpus) -> Result<Ingest<CaseSet>, StoreError> {
    let mut set = CaseSet::default();
    for (line_no, line) in read_lines(path)? {
        let raw: RawCase = serde_json::from_str(&line).map_err(|e| StoreError::Malformed {
            line: line_no,
            message: e.to_string(),
        })?;
        set.push(raw, line_no, corpus)?;
    }
    let mut warnings = Vec::new();
    if set.is_empty() {
        let msg = format!("{}: case file contains no records", path.display());
        warn!("{msg}");
        warnings.push(msg);
    }
    Ok(Ingest {
        value: set,
        warnings,
    })
}

#[derive(Serialize, Deserialize)]
struct SnapshotHeader {
    version: u32,
    documents: usize,
    cases: usize,
}

impl Store {
    /// Serialized snapshot: the magic line, a JSON header line, then one
    /// JSON line per document followed by one per case.
    pub fn to_snapshot_bytes(&self) -> Vec<u8> {
        let mut out = format!("{SNAPSHOT_MAGIC}\n").into_bytes();
        let header = SnapshotHeader {
            version: SNAPSHOT_VERSION,
            documents: self.corpus.len(),
            cases: self.cases.len(),
        };
        // Serializing plain data structs to a Vec cannot fail.
        serde_json::to_writer(&mut out, &header).expect("header serializes");
        out.push(b'\n');
        for doc in self.corpus.documents() {
            serde_json::to_writer(&mut out, doc).expect("document serializes");
            out.push(b'\n');
        }
        for case in self.cases.cases() {
            serde_json::to_writer(&mut out, case).expect("case serializes");
            out.push(b'\n');
        }
        out
    }

    pub fn snapshot(&self, path: &Path) -> Result<(), StoreError> {
        write_atomic(path, &self.to_snapshot_bytes()).map_err(|e| StoreError::io(path, e))
    }

    pub fn from_snapshot_bytes(bytes: &[u8]) -> Result<Self, StoreError> {
        let text = std::str::from_utf8(bytes)
            .map_err(|e| StoreError::Corrupt(format!("not UTF-8: {e}")))?;
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or("");
        if magic != SNAPSHOT_MAGIC {
            return Err(StoreError::Version {
                found: magic.chars().take(16).collect(),
            });
        }
        let header: SnapshotHeader = lines
            .next()
            .ok_or_else(|| StoreError::Corrupt("missing header".into()))
            .and_then(|l| {
                serde_json::from_str(l).map_err(|e| StoreError::Corrupt(e.to_string()))
            })?;
        if header.version != SNAPSHOT_VERSION {
            return Err(StoreError::Version {
                found: format!("{SNAPSHOT_MAGIC} version {}", header.version),
            });
        }
        let mut docs = Vec::with_capacity(header.documents);
        for _ in 0..header.documents {
            let line = lines
                .next()
                .ok_or_else(|| StoreError::Corrupt("missing document record".into()))?;
            docs.push(
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt(e.to_string()))?,
            );
        }
        let corpus = Corpus::from_documents(docs)?;
        let mut cases = Vec::with_capacity(header.cases);
        for _ in 0..header.cases {
            let line = lines
                .next()
                .ok_or_else(|| StoreError::Corrupt("missing case record".into()))?;
            cases.push(
                serde_json::from_str(line).map_err(|e| StoreError::Corrupt(e.to_string()))?,
            );
        }
        if lines.next().is_some() {
            return Err(StoreError::Corrupt("trailing records".into()));
        }
        let cases = CaseSet::from_cases(cases, &corpus)?;
        Ok(Store { corpus, cases })
    }

    pub fn load_snapshot(path: &Path) -> Result<Self, StoreError> {
        let bytes = fs::read(path).map_err(|e| StoreError::io(path, e))?;
        Self::from_snapshot_bytes(&bytes)
    }
}
