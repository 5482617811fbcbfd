//! The pipeline configuration file.
//!
//! Every section is optional and falls back to the shipped defaults. Unknown
//! keys are rejected. Relative paths are resolved against the directory of
//! the config file.

use std::fmt;
use std::path::{Path, PathBuf};

use judgeflow_core::agent::AgentConfig;
use judgeflow_core::dense::{EmbedOptions, MiningParams};
use judgeflow_core::fusion::{DEFAULT_K_RRF, DEFAULT_W_AGENT, DEFAULT_W_STD};
use judgeflow_core::grpo::{ToyTrainConfig, DEFAULT_EPSILON};
use judgeflow_core::metrics::Averaging;
use judgeflow_core::rubric::RewardConfig;
use judgeflow_core::sparse::{Bm25Params, SparseMethod};
use judgeflow_core::synthetic::SyntheticSpec;
use judgeflow_core::text::{Tokenizer, TokenizerMode};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub paths: Paths,
    pub fixture: SyntheticSpec,
    pub retrieval: RetrievalConfig,
    pub fusion: FusionConfig,
    pub agent: AgentConfig,
    pub generation: GenerationConfig,
    pub reward: RewardConfig,
    pub extraction: ExtractionConfig,
    pub grpo: GrpoConfig,
    pub mining: MiningConfig,
    pub eval: EvalConfig,
    pub llm: LlmConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub corpus: Option<PathBuf>,
    pub cases: Option<PathBuf>,
    /// Defaults to `<outputs>/ingest/store.jfs`.
    pub store: Option<PathBuf>,
    /// Defaults to `<outputs>/build-index`.
    pub indexes: Option<PathBuf>,
    pub outputs: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            corpus: None,
            cases: None,
            store: None,
            indexes: None,
            outputs: PathBuf::from("runs"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    #[default]
    Bm25,
    Tfidf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RetrievalConfig {
    pub tokenizer: TokenizerMode,
    pub method: Method,
    pub k1: f64,
    pub b: f64,
    /// First-stage depth.
    pub top_k: usize,
    /// `lexical`, `table:<path>`, `endpoint:<url>` or `none`.
    pub rerank: String,
    pub rerank_top_m: usize,
    /// `hashing` or `none`.
    pub dense_provider: String,
    pub dense_dim: usize,
    pub dense_salt: u64,
    pub batch_size: usize,
    pub max_inflight: usize,
}

impl Default for RetrievalConfig {
    fn default() -> Self {
        let p = Bm25Params::default();
        let e = EmbedOptions::default();
        Self {
            tokenizer: TokenizerMode::default(),
            method: Method::default(),
            k1: p.k1,
            b: p.b,
            top_k: 100,
            rerank: "lexical".into(),
            rerank_top_m: 50,
            dense_provider: "hashing".into(),
            dense_dim: 256,
            dense_salt: 0,
            batch_size: e.batch_size,
            max_inflight: e.max_inflight,
        }
    }
}

impl RetrievalConfig {
    pub fn tokenizer(&self) -> Tokenizer {
        Tokenizer::new(self.tokenizer)
    }

    pub fn sparse_method(&self) -> SparseMethod {
        match self.method {
            Method::Bm25 => SparseMethod::Bm25 { k1: self.k1, b: self.b },
            Method::Tfidf => SparseMethod::Tfidf,
        }
    }

    pub fn embed_options(&self) -> EmbedOptions {
        EmbedOptions {
            batch_size: self.batch_size,
            max_inflight: self.max_inflight,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FusionConfig {
    pub w_agent: f64,
    pub w_std: f64,
    pub k_rrf: f64,
    pub top_n: usize,
    /// Fuse statutes and precedents separately.
    pub per_kind: bool,
}

impl Default for FusionConfig {
    fn default() -> Self {
        Self {
            w_agent: DEFAULT_W_AGENT,
            w_std: DEFAULT_W_STD,
            k_rrf: DEFAULT_K_RRF,
            top_n: 50,
            per_kind: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenerationConfig {
    /// Evidence items placed in each prompt.
    pub evidence_n: usize,
}

impl Default for GenerationConfig {
    fn default() -> Self {
        Self {
            evidence_n: 8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExtractionConfig {
    /// `tagged`, `chinese` or a path to a pattern file.
    pub patterns: String,
}

impl Default for ExtractionConfig {
    fn default() -> Self {
        Self {
            patterns: "tagged".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GrpoConfig {
    pub group_size: usize,
    pub iterations: usize,
    pub learning_rate: f64,
    pub kl_beta: f64,
    pub epsilon: f64,
    pub seed: u64,
    pub clip_ratio: Option<f64>,
    pub epochs: usize,
    /// Inputs in the toy judgment task.
    pub toy_inputs: usize,
    /// Seed of the toy task generator.
    pub task_seed: u64,
}

impl Default for GrpoConfig {
    fn default() -> Self {
        let t = ToyTrainConfig::default();
        Self {
            group_size: t.group_size,
            iterations: t.iterations,
            learning_rate: t.learning_rate,
            kl_beta: t.kl_beta,
            epsilon: DEFAULT_EPSILON,
            seed: t.seed,
            clip_ratio: t.clip_ratio,
            epochs: t.epochs,
            toy_inputs: 4,
            task_seed: 1,
        }
    }
}

impl GrpoConfig {
    pub fn train_config(&self) -> ToyTrainConfig {
        ToyTrainConfig {
            group_size: self.group_size,
            iterations: self.iterations,
            learning_rate: self.learning_rate,
            kl_beta: self.kl_beta,
            epsilon: self.epsilon,
            seed: self.seed,
            clip_ratio: self.clip_ratio,
            epochs: self.epochs,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MiningConfig {
    pub folds: usize,
    pub n_neg: usize,
    pub depth: usize,
    /// Dimension of the per-fold hashing providers.
    pub dim: usize,
}

impl Default for MiningConfig {
    fn default() -> Self {
        let p = MiningParams::default();
        Self {
            folds: p.folds,
            n_neg: p.n_neg,
            depth: p.depth,
            dim: 256,
        }
    }
}

impl MiningConfig {
    pub fn params(&self) -> MiningParams {
        MiningParams {
            folds: self.folds,
            n_neg: self.n_neg,
            depth: self.depth,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub averaging: Averaging,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmConfig {
    /// Query planner: `fallback`, `stub:<path>` or `remote`.
    pub planner: String,
    /// Evidence selector: `fallback`, `stub:<path>` or `remote`.
    pub selector: String,
    /// Judgment writer: `template`, `stub:<path>` or `remote`.
    pub generator: String,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub max_retries: u32,
    /// Unknown prompts are an error rather than an empty response.
    pub strict_stub: bool,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            planner: "fallback".into(),
            selector: "fallback".into(),
            generator: "template".into(),
            model: None,
            timeout_secs: 60,
            max_retries: 3,
            strict_stub: false,
        }
    }
}

/// A field-level validation failure.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FieldError {
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfigError(pub Vec<FieldError>);

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let lines: Vec<String> = self.0.iter().map(ToString::to_string).collect();
        write!(f, "invalid configuration:\n  {}", lines.join("\n  "))
    }
}

impl std::error::Error for ConfigError {}

/// Parsed form of a backend selector string.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Backend {
    Builtin(String),
    Stub(String),
    Endpoint(String),
    Table(String),
    Remote,
    None,
}

impl Backend {
    pub fn parse(s: &str) -> Self {
        match s.split_once(':') {
            Some(("stub", p)) => Backend::Stub(p.to_owned()),
            Some(("table", p)) => Backend::Table(p.to_owned()),
            Some(("endpoint", u)) => Backend::Endpoint(u.to_owned()),
            _ if s == "remote" => Backend::Remote,
            _ if s == "none" => Backend::None,
            _ => Backend::Builtin(s.to_owned()),
        }
    }
}

struct Checker(Vec<FieldError>);

impl Checker {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        self.0.push(FieldError {
            field: field.to_owned(),
            message: message.into(),
        });
    }

    fn positive(&mut self, field: &str, v: usize) {
        if v == 0 {
            self.fail(field, "must be >= 1");
        }
    }

    fn finite_pos(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v > 0.0) {
            self.fail(field, format!("must be finite and > 0 (got {v})"));
        }
    }

    fn finite_nonneg(&mut self, field: &str, v: f64) {
        if !(v.is_finite() && v >= 0.0) {
            self.fail(field, format!("must be finite and >= 0 (got {v})"));
        }
    }

    fn backend(&mut self, field: &str, value: &str, builtins: &[&str], allowed: &[&str]) {
        let ok = match Backend::parse(value) {
            Backend::Builtin(b) => builtins.contains(&b.as_str()),
            Backend::Stub(p) => allowed.contains(&"stub") && !p.is_empty(),
            Backend::Table(p) => allowed.contains(&"table") && !p.is_empty(),
            Backend::Endpoint(u) => allowed.contains(&"endpoint") && !u.is_empty(),
            Backend::Remote => allowed.contains(&"remote"),
            Backend::None => allowed.contains(&"none"),
        };
        if !ok {
            let mut forms: Vec<String> = builtins.iter().map(|b| b.to_string()).collect();
            forms.extend(allowed.iter().map(|a| match *a {
                "stub" | "table" => format!("{a}:<path>"),
                "endpoint" => "endpoint:<url>".to_owned(),
                other => other.to_owned(),
            }));
            self.fail(field, format!("unknown backend {value:?} (expected one of {})", forms.join(", ")));
        }
    }
}

impl PipelineConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| {
            ConfigError(vec![FieldError {
                field: "config".into(),
                message: e.message().to_owned(),
            }])
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut c = Checker(Vec::new());
        let f = &self.fixture;
        c.positive("fixture.statutes", f.statutes);
        c.positive("fixture.family_size", f.family_size);
        c.positive("fixture.cases", f.cases);

        let r = &self.retrieval;
        c.finite_nonneg("retrieval.k1", r.k1);
        if !(0.0..=1.0).contains(&r.b) {
            c.fail("retrieval.b", format!("must lie in [0,1] (got {})", r.b));
        }
        c.positive("retrieval.top_k", r.top_k);
        c.positive("retrieval.rerank_top_m", r.rerank_top_m);
        c.positive("retrieval.dense_dim", r.dense_dim);
        c.positive("retrieval.batch_size", r.batch_size);
        c.positive("retrieval.max_inflight", r.max_inflight);
        c.backend("retrieval.rerank", &r.rerank, &["lexical"], &["table", "endpoint", "none"]);
        c.backend("retrieval.dense_provider", &r.dense_provider, &["hashing"], &["none"]);

        let fu = &self.fusion;
        c.finite_pos("fusion.w_agent", fu.w_agent);
        c.finite_pos("fusion.w_std", fu.w_std);
        c.finite_pos("fusion.k_rrf", fu.k_rrf);
        c.positive("fusion.top_n", fu.top_n);

        let a = &self.agent;
        c.positive("agent.m_max", a.m_max);
        c.positive("agent.k_per_query", a.k_per_query);
        c.positive("agent.fallback_window", a.fallback_window);
        c.positive("agent.n_min", a.n_min);
        if !(0.0..=1.0).contains(&a.alpha) {
            c.fail("agent.alpha", format!("must lie in [0,1] (got {})", a.alpha));
        }
        c.finite_nonneg("agent.a", a.a);
        c.finite_nonneg("agent.b", a.b);
        c.finite_nonneg("agent.c", a.c);
        c.finite_nonneg("agent.penalty_cap", a.penalty_cap);
        let l = &self.llm;
        c.backend("llm.planner", &l.planner, &["fallback"], &["stub", "remote"]);
        c.backend("llm.selector", &l.selector, &["fallback"], &["stub", "remote"]);
        c.backend("llm.generator", &l.generator, &["template"], &["stub", "remote"]);
        c.positive("llm.timeout_secs", l.timeout_secs as usize);
        c.positive("generation.evidence_n", self.generation.evidence_n);

        let w = self.reward.weights;
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) {
            c.fail("reward.weights", format!("entries must be finite and >= 0 (got {w:?})"));
        } else if (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            c.fail("reward.weights", format!("must sum to 1 (got {w:?}, sum {})", w.iter().sum::<f64>()));
        }
        if let Err(e) = self.reward.sub_weights.validate() {
            c.fail("reward.sub_weights", e.to_string());
        }
        if let Err(e) = self.reward.logic.validate() {
            c.fail("reward.logic", e.to_string());
        }
        if self.extraction.patterns.is_empty() {
            c.fail("extraction.patterns", "must be `tagged`, `chinese` or a file path");
        }

        let g = &self.grpo;
        if g.group_size < 2 {
            c.fail("grpo.group_size", format!("must be >= 2 (got {})", g.group_size));
        }
        c.positive("grpo.iterations", g.iterations);
        c.finite_nonneg("grpo.learning_rate", g.learning_rate);
        c.finite_nonneg("grpo.kl_beta", g.kl_beta);
        c.finite_pos("grpo.epsilon", g.epsilon);
        c.positive("grpo.epochs", g.epochs);
        c.positive("grpo.toy_inputs", g.toy_inputs);
        if let Some(clip) = g.clip_ratio {
            c.finite_pos("grpo.clip_ratio", clip);
        }

        let m = &self.mining;
        if m.folds < 2 {
            c.fail("mining.folds", format!("must be >= 2 (got {})", m.folds));
        }
        c.positive("mining.n_neg", m.n_neg);
        if m.depth < m.n_neg {
            c.fail("mining.depth", format!("must be >= n_neg (got {} < {})", m.depth, m.n_neg));
        }
        c.positive("mining.dim", m.dim);

        if c.0.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(c.0))
        }
    }

    /// SHA-256 of the effective configuration as canonical JSON.
    pub fn sha256(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        hex::encode(Sha256::digest(bytes))
    }
}

/// Resolves `p` against `base` unless it is absolute.
pub fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_owned()
    } else {
        base.join(p)
    }
}
