//! Shared plumbing: error classes, path defaults, file readers and backend
//! construction.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use judgeflow_core::corpus::{Corpus, Store};
use judgeflow_core::dense::{DenseIndex, HashingProvider};
use judgeflow_core::llm::{RemoteClient, RetryPolicy, TextGenerator, TranscriptStub};
use judgeflow_core::rerank::{rerank, EndpointScorer, LexicalScorer, PairScorer, TableScorer};
use judgeflow_core::rubric::{CompiledPatterns, PatternSet};
use judgeflow_core::sparse::{SparseIndex, SparseRetriever};
use judgeflow_core::types::Retriever;
use judgeflow_core::{RankedList, Scored};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{resolve, Backend, ConfigError, PipelineConfig};
use crate::manifest::{OutputDir, OutputError};

pub const SPARSE_FILE: &str = "sparse.json";
pub const DENSE_FILE: &str = "dense.jfv";
pub const STORE_FILE: &str = "store.jfs";
pub const RANKINGS_FILE: &str = "rankings.jsonl";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Validation(String),
    #[error("{0}")]
    Backend(String),
    #[error("internal invariant violated: {0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Validation(_) => 2,
            CliError::Backend(_) => 3,
            CliError::Internal(_) => 4,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        CliError::Validation(e.to_string())
    }
}

impl From<OutputError> for CliError {
    fn from(e: OutputError) -> Self {
        match e {
            OutputError::Occupied(..) => CliError::Validation(e.to_string()),
            OutputError::Io { .. } => CliError::Internal(e.to_string()),
        }
    }
}

/// Loaded configuration plus where its relative paths are anchored.
pub struct Env {
    pub config: PipelineConfig,
    pub base: PathBuf,
}

impl Env {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let (config, base) = match path {
            Some(p) => {
                let text = fs::read_to_string(p)
                    .map_err(|e| CliError::Validation(format!("{}: {e}", p.display())))?;
                let base = p.parent().map(Path::to_owned).unwrap_or_default();
                (PipelineConfig::from_toml(&text)?, base)
            }
            None => (PipelineConfig::default(), PathBuf::new()),
        };
        Ok(Self { config, base })
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        resolve(&self.base, p)
    }

    pub fn outputs(&self) -> PathBuf {
        self.resolve(&self.config.paths.outputs)
    }

    /// `--out` if given (relative to the working directory), else
    /// `<outputs>/<name>`.
    pub fn out_dir(&self, flag: Option<&Path>, name: &str) -> PathBuf {
        flag.map_or_else(|| self.outputs().join(name), Path::to_owned)
    }

    pub fn store_path(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.config.paths.store) {
            (Some(f), _) => f.to_owned(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => self.outputs().join("ingest").join(STORE_FILE),
        }
    }

    pub fn index_dir(&self, flag: Option<&Path>) -> PathBuf {
        match (flag, &self.config.paths.indexes) {
            (Some(f), _) => f.to_owned(),
            (None, Some(p)) => self.resolve(p),
            (None, None) => self.outputs().join("build-index"),
        }
    }

    pub fn input_or(&self, flag: Option<&Path>, configured: Option<&PathBuf>, what: &str) -> Result<PathBuf, CliError> {
        match (flag, configured) {
            (Some(f), _) => Ok(f.to_owned()),
            (None, Some(p)) => Ok(self.resolve(p)),
            (None, None) => Err(CliError::Validation(format!(
                "no {what} given: pass --{what} or set paths.{what}"
            ))),
        }
    }
}

/// Reads a whole input file and records it in the manifest.
pub fn read_input(path: &Path, out: &mut OutputDir) -> Result<Vec<u8>, CliError> {
    let bytes = fs::read(path).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))?;
    out.input_bytes(path, &bytes);
    Ok(bytes)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path, out: &mut OutputDir) -> Result<Vec<T>, CliError> {
    let bytes = read_input(path, out)?;
    let text = String::from_utf8(bytes)
        .map_err(|_| CliError::Validation(format!("{}: not valid UTF-8", path.display())))?;
    let mut items = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item = serde_json::from_str(line)
            .map_err(|e| CliError::Validation(format!("{}:{}: {e}", path.display(), i + 1)))?;
        items.push(item);
    }
    Ok(items)
}

pub fn jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    judgeflow_core::fsio::to_json_lines(items).expect("records serialize")
}

pub fn pretty<T: Serialize>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("value serializes");
    v.push(b'\n');
    v
}

pub fn load_store(path: &Path, out: &mut OutputDir) -> Result<Store, CliError> {
    let bytes = read_input(path, out)?;
    Store::from_snapshot_bytes(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_sparse(dir: &Path, out: &mut OutputDir) -> Result<SparseIndex, CliError> {
    let path = dir.join(SPARSE_FILE);
    let bytes = read_input(&path, out)?;
    serde_json::from_slice(&bytes).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn load_dense(dir: &Path, out: &mut OutputDir) -> Result<DenseIndex, CliError> {
    let path = dir.join(DENSE_FILE);
    let bytes = read_input(&path, out)?;
    DenseIndex::read_from(bytes.as_slice()).map_err(|e| CliError::Validation(format!("{}: {e}", path.display())))
}

pub fn hashing_provider(config: &PipelineConfig) -> Option<HashingProvider> {
    let r = &config.retrieval;
    (Backend::parse(&r.dense_provider) == Backend::Builtin("hashing".into()))
        .then(|| HashingProvider::new(r.dense_dim, r.dense_salt))
}

fn timeout(config: &PipelineConfig) -> Duration {
    Duration::from_secs(config.llm.timeout_secs)
}

/// The configured reranker, or `None` when reranking is disabled.
pub fn pair_scorer(env: &Env, out: &mut OutputDir) -> Result<Option<Box<dyn PairScorer>>, CliError> {
    Ok(match Backend::parse(&env.config.retrieval.rerank) {
        Backend::None => None,
        Backend::Table(p) => {
            let path = env.resolve(Path::new(&p));
            read_input(&path, out)?;
            let t = TableScorer::load(&path).map_err(|e| CliError::Validation(e.to_string()))?;
            Some(Box::new(t))
        }
        Backend::Endpoint(url) => Some(Box::new(EndpointScorer::new(&url, timeout(&env.config)))),
        _ => Some(Box::new(LexicalScorer::default())),
    })
}

/// A text generator for `spec`, or `None` for the built-in fallback.
pub fn generator(env: &Env, spec: &str, out: &mut OutputDir) -> Result<Option<Box<dyn TextGenerator>>, CliError> {
    let llm = &env.config.llm;
    Ok(match Backend::parse(spec) {
        Backend::Stub(p) => {
            let path = env.resolve(Path::new(&p));
            read_input(&path, out)?;
            let stub = TranscriptStub::load(&path, llm.strict_stub).map_err(|e| CliError::Validation(e.to_string()))?;
            Some(Box::new(stub))
        }
        Backend::Remote => {
            let retry = RetryPolicy {
                max_retries: llm.max_retries,
                ..RetryPolicy::default()
            };
            let client = RemoteClient::from_env(llm.model.clone(), retry, timeout(&env.config))
                .map_err(|e| CliError::Validation(e.to_string()))?;
            Some(Box::new(client))
        }
        _ => None,
    })
}

pub fn patterns(env: &Env, out: &mut OutputDir) -> Result<CompiledPatterns, CliError> {
    let spec = &env.config.extraction.patterns;
    let set = match spec.as_str() {
        "tagged" => PatternSet::tagged(),
        "chinese" => PatternSet::chinese(),
        p => {
            let path = env.resolve(Path::new(p));
            read_input(&path, out)?;
            PatternSet::load(&path).map_err(|e| CliError::Validation(format!("extraction.patterns: {e}")))?
        }
    };
    set.compile()
        .map_err(|e| CliError::Validation(format!("extraction.patterns: {e}")))
}

/// One ranking per line in every ranking file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RankingRecord {
    pub case_id: String,
    pub route: String,
    pub items: Vec<Scored>,
}

impl RankingRecord {
    pub fn new(case_id: &str, route: &str, ranking: RankedList) -> Self {
        Self {
            case_id: case_id.to_owned(),
            route: route.to_owned(),
            items: ranking.items,
        }
    }

    pub fn ranking(&self) -> RankedList {
        RankedList::new(self.items.clone())
    }
}

/// Reads a ranking file keyed by case id, keeping file order.
pub fn read_rankings(path: &Path, out: &mut OutputDir) -> Result<Vec<(String, RankedList)>, CliError> {
    let records: Vec<RankingRecord> = read_jsonl(path, out)?;
    let mut seen = BTreeMap::new();
    let mut result = Vec::with_capacity(records.len());
    for r in records {
        if seen.insert(r.case_id.clone(), ()).is_some() {
            return Err(CliError::Validation(format!("{}: duplicate case {}", path.display(), r.case_id)));
        }
        let ranking = r.ranking();
        if let Some(d) = ranking.first_duplicate() {
            return Err(CliError::Validation(format!(
                "{}: case {} lists {d} twice",
                path.display(),
                r.case_id
            )));
        }
        result.push((r.case_id, ranking));
    }
    Ok(result)
}

/// First-stage sparse retrieval followed by optional reranking. Reranker
/// failures are reported as warnings; the affected candidates keep their
/// place at the tail.
pub fn standard_route(
    index: &SparseIndex,
    env: &Env,
    corpus: &Corpus,
    scorer: Option<&dyn PairScorer>,
    query: &str,
) -> Result<(RankedList, Vec<String>), CliError> {
    let r = &env.config.retrieval;
    let retriever = SparseRetriever {
        index,
        method: r.sparse_method(),
    };
    let first = retriever
        .retrieve(query, r.top_k)
        .map_err(|e| CliError::Validation(e.to_string()))?;
    let Some(scorer) = scorer else {
        return Ok((first, Vec::new()));
    };
    let outcome = rerank(&first, query, corpus, scorer, r.rerank_top_m)
        .map_err(|e| CliError::Validation(format!("retrieval.rerank_top_m: {e}")))?;
    if !first.is_empty() && outcome.failures.len() == first.len() {
        return Err(CliError::Backend(format!(
            "reranker {} failed on every candidate: {}",
            scorer.scorer_id(),
            outcome.failures[0].message
        )));
    }
    let warnings = outcome
        .failures
        .iter()
        .map(|f| format!("rerank failed for {}: {}", f.doc_id, f.message))
        .collect();
    Ok((outcome.ranking, warnings))
}
