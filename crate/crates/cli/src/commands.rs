//! One function per subcommand.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use judgeflow_core::agent::{export_rollouts, run_agent_route, AgentContext, AgentError, AgentRun, GENERATION_INSTRUCTION};
use judgeflow_core::agent::build_generation_prompt;
use judgeflow_core::corpus::{ingest_cases, ingest_corpus, CaseRecord, Corpus, DocKind, Store};
use judgeflow_core::dense::{build_dense_index, fold_of, mine_triples_kfold, validate_triples, DenseRetriever, EmbeddingProvider, HashingProvider};
use judgeflow_core::fusion::{fuse_rrf, fuse_rrf_per_kind, RouteId, RouteRanking};
use judgeflow_core::grpo::{train_toy, GrpoError, JudgmentTask, ToyEnv};
use judgeflow_core::llm::GenerationRequest;
use judgeflow_core::metrics::{evaluate_generation, evaluate_retrieval, GenerationRow};
use judgeflow_core::rerank::LexicalScorer;
use judgeflow_core::rubric::{gold_extract, parse_judgment, score_extracts, RewardBreakdown, TokenOverlapScorer};
use judgeflow_core::sparse::{build_sparse_index, SparseRetriever};
use judgeflow_core::synthetic::generate;
use judgeflow_core::types::Retriever;
use judgeflow_core::{EvidenceSet, RankedList};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::manifest::{sha256_hex, OutputDir};
use crate::pipeline::*;

/// Result of a command body: `Ok(None)` on full success, `Ok(Some(e))` when
/// outputs were written but some records failed.
type Body = Result<Option<CliError>, CliError>;

/// Runs `body` against a fresh output directory and always leaves a
/// manifest behind, marked incomplete on any failure.
pub fn with_output(env: &Env, dir: &Path, command: &str, body: impl FnOnce(&mut OutputDir) -> Body) -> Result<(), CliError> {
    let mut out = OutputDir::create(dir, command, &env.config.sha256())?;
    match body(&mut out) {
        Ok(None) => {
            out.finish(true)?;
            Ok(())
        }
        Ok(Some(e)) => {
            out.finish(false)?;
            Err(e)
        }
        Err(e) => {
            out.error(e.to_string());
            out.finish(false)?;
            Err(e)
        }
    }
}

/// Keeps the first per-record failure; later ones only go to the manifest.
#[derive(Default)]
struct Failures(Option<CliError>);

impl Failures {
    fn record(&mut self, out: &mut OutputDir, context: &str, e: CliError) {
        out.error(format!("{context}: {e}"));
        self.0.get_or_insert(e);
    }
}

fn basename(p: &Path) -> String {
    p.file_name().map_or_else(String::new, |n| n.to_string_lossy().into_owned())
}

pub struct FixtureOpts {
    pub statutes: Option<usize>,
    pub cases: Option<usize>,
    pub precedents: Option<usize>,
    pub seed: Option<u64>,
}

pub fn generate_fixture(env: &mut Env, dir: &Path, o: FixtureOpts) -> Result<(), CliError> {
    let spec = &mut env.config.fixture;
    spec.statutes = o.statutes.unwrap_or(spec.statutes);
    spec.cases = o.cases.unwrap_or(spec.cases);
    spec.precedents = o.precedents.unwrap_or(spec.precedents);
    spec.seed = o.seed.unwrap_or(spec.seed);
    env.config.validate()?;
    let spec = env.config.fixture.clone();
    with_output(env, dir, "generate-fixture", |out| {
        out.set_params(json!({ "fixture": spec }));
        out.seed("fixture", spec.seed);
        let fx = generate(&spec);
        out.write("corpus.jsonl", &jsonl(&fx.documents))?;
        out.write("cases.jsonl", &jsonl(&fx.cases))?;
        Ok(None)
    })
}

#[derive(Serialize)]
struct IngestReport {
    documents: usize,
    statutes: usize,
    precedents: usize,
    cases: usize,
    warnings: Vec<String>,
}

pub fn ingest(env: &Env, dir: &Path, corpus: Option<&Path>, cases: Option<&Path>) -> Result<(), CliError> {
    let corpus_path = env.input_or(corpus, env.config.paths.corpus.as_ref(), "corpus")?;
    let cases_path = env.input_or(cases, env.config.paths.cases.as_ref(), "cases")?;
    with_output(env, dir, "ingest", |out| {
        out.set_params(json!({ "corpus": basename(&corpus_path), "cases": basename(&cases_path) }));
        read_input(&corpus_path, out)?;
        read_input(&cases_path, out)?;
        let c = ingest_corpus(&corpus_path).map_err(|e| CliError::Validation(format!("{}: {e}", corpus_path.display())))?;
        let s = ingest_cases(&cases_path, &c.value)
            .map_err(|e| CliError::Validation(format!("{}: {e}", cases_path.display())))?;
        let mut warnings = c.warnings;
        warnings.extend(s.warnings);
        out.warn_all(warnings.clone());
        let store = Store {
            corpus: c.value,
            cases: s.value,
        };
        let count = |k| store.corpus.documents().iter().filter(|d| d.kind == k).count();
        let report = IngestReport {
            documents: store.corpus.len(),
            statutes: count(DocKind::Statute),
            precedents: count(DocKind::Precedent),
            cases: store.cases.len(),
            warnings,
        };
        out.write(STORE_FILE, &store.to_snapshot_bytes())?;
        out.write("report.json", &pretty(&report))?;
        Ok(None)
    })
}

pub fn build_index(env: &Env, dir: &Path, store: Option<&Path>) -> Result<(), CliError> {
    let store_path = env.store_path(store);
    with_output(env, dir, "build-index", |out| {
        out.set_params(json!({ "retrieval": env.config.retrieval }));
        let store = load_store(&store_path, out)?;
        let sparse = build_sparse_index(&store.corpus, env.config.retrieval.tokenizer())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        out.write(SPARSE_FILE, &serde_json::to_vec(&sparse).expect("index serializes"))?;
        if let Some(provider) = hashing_provider(&env.config) {
            out.seed("dense_salt", env.config.retrieval.dense_salt);
            let dense = build_dense_index(&store.corpus, &provider, env.config.retrieval.embed_options())
                .map_err(|e| CliError::Backend(e.to_string()))?;
            out.write(DENSE_FILE, &dense.to_bytes())?;
        }
        out.write("stats.json", &pretty(&sparse.stats()))?;
        Ok(None)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SearchRoute {
    Sparse,
    Dense,
    Standard,
}

impl SearchRoute {
    fn as_str(self) -> &'static str {
        match self {
            SearchRoute::Sparse => "sparse",
            SearchRoute::Dense => "dense",
            SearchRoute::Standard => "standard",
        }
    }
}

pub struct SearchOpts<'a> {
    pub route: SearchRoute,
    pub top_k: Option<usize>,
    pub query: Option<&'a str>,
    pub store: Option<&'a Path>,
    pub index_dir: Option<&'a Path>,
}

pub fn search(env: &mut Env, dir: Option<&Path>, o: SearchOpts<'_>) -> Result<(), CliError> {
    if let Some(k) = o.top_k {
        env.config.retrieval.top_k = k;
    }
    env.config.validate()?;
    let env = &*env;
    let dir = env.out_dir(dir, &format!("search-{}", o.route.as_str()));
    let store_path = env.store_path(o.store);
    let index_dir = env.index_dir(o.index_dir);
    with_output(env, &dir, "search", |out| {
        out.set_params(json!({ "route": o.route, "query": o.query, "retrieval": env.config.retrieval }));
        let store = load_store(&store_path, out)?;
        let queries: Vec<(String, String)> = match o.query {
            Some(q) => vec![("query".to_owned(), q.to_owned())],
            None => store.cases.cases().iter().map(|c| (c.id.clone(), c.facts.clone())).collect(),
        };
        let k = env.config.retrieval.top_k;
        let sparse = load_sparse(&index_dir, out)?;
        let mut records = Vec::with_capacity(queries.len());
        let mut failures = Failures::default();
        match o.route {
            SearchRoute::Sparse => {
                let r = SparseRetriever {
                    index: &sparse,
                    method: env.config.retrieval.sparse_method(),
                };
                for (id, q) in &queries {
                    let ranking = r.retrieve(q, k).map_err(|e| CliError::Validation(e.to_string()))?;
                    records.push(RankingRecord::new(id, "sparse", ranking));
                }
            }
            SearchRoute::Dense => {
                let provider = hashing_provider(&env.config)
                    .ok_or_else(|| CliError::Validation("retrieval.dense_provider: dense search needs a provider".into()))?;
                out.seed("dense_salt", env.config.retrieval.dense_salt);
                let index = load_dense(&index_dir, out)?;
                let r = DenseRetriever {
                    index: &index,
                    provider: &provider,
                };
                for (id, q) in &queries {
                    match r.retrieve(q, k) {
                        Ok(ranking) => records.push(RankingRecord::new(id, "dense", ranking)),
                        Err(e) => failures.record(out, id, CliError::Validation(e.to_string())),
                    }
                }
            }
            SearchRoute::Standard => {
                let scorer = pair_scorer(env, out)?;
                for (id, q) in &queries {
                    match standard_route(&sparse, env, &store.corpus, scorer.as_deref(), q) {
                        Ok((ranking, warnings)) => {
                            out.warn_all(warnings.into_iter().map(|w| format!("{id}: {w}")));
                            records.push(RankingRecord::new(id, "standard", ranking));
                        }
                        Err(e) => failures.record(out, id, e),
                    }
                }
            }
        }
        out.write(RANKINGS_FILE, &jsonl(&records))?;
        Ok(failures.0)
    })
}

fn agent_error(e: AgentError) -> CliError {
    match e {
        AgentError::Retrieval { .. } => CliError::Backend(e.to_string()),
        AgentError::Grpo(_) => CliError::Internal(e.to_string()),
        _ => CliError::Validation(e.to_string()),
    }
}

pub struct StoreOpts<'a> {
    pub store: Option<&'a Path>,
    pub index_dir: Option<&'a Path>,
}

pub fn agent_run(env: &Env, dir: &Path, o: StoreOpts<'_>) -> Result<(), CliError> {
    let store_path = env.store_path(o.store);
    let index_dir = env.index_dir(o.index_dir);
    with_output(env, dir, "agent-run", |out| {
        out.set_params(json!({
            "agent": env.config.agent,
            "planner": env.config.llm.planner,
            "selector": env.config.llm.selector,
            "retrieval": env.config.retrieval,
        }));
        let store = load_store(&store_path, out)?;
        let sparse = load_sparse(&index_dir, out)?;
        let retriever = SparseRetriever {
            index: &sparse,
            method: env.config.retrieval.sparse_method(),
        };
        let scorer = pair_scorer(env, out)?.unwrap_or_else(|| Box::new(LexicalScorer::default()));
        let planner = generator(env, &env.config.llm.planner, out)?;
        let selector = generator(env, &env.config.llm.selector, out)?;
        let ctx = AgentContext {
            corpus: &store.corpus,
            retriever: &retriever,
            scorer: scorer.as_ref(),
            planner: planner.as_deref(),
            selector: selector.as_deref(),
        };
        let mut runs = Vec::new();
        let mut rankings = Vec::new();
        let mut failures = Failures::default();
        for case in store.cases.cases() {
            match run_agent_route(&case.id, &case.facts, &ctx, &env.config.agent) {
                Ok(run) => {
                    run.selection
                        .check_invariants()
                        .map_err(|e| CliError::Internal(format!("{}: {e}", case.id)))?;
                    out.warn_all(run.plan.warnings.iter().map(|w| format!("{}: {w}", case.id)));
                    out.warn_all(run.selection.warnings.iter().map(|w| format!("{}: {w}", case.id)));
                    rankings.push(RankingRecord::new(&case.id, "agentic", run.ranking.clone()));
                    runs.push(run);
                }
                Err(e) => failures.record(out, &case.id, agent_error(e)),
            }
        }
        out.write("agent_runs.jsonl", &jsonl(&runs))?;
        out.write(RANKINGS_FILE, &jsonl(&rankings))?;
        Ok(failures.0)
    })
}

/// Parses `agent=2.0,std=1.0`.
pub fn parse_weights(s: &str) -> Result<(Option<f64>, Option<f64>), CliError> {
    let (mut agent, mut std) = (None, None);
    for part in s.split(',').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part
            .split_once('=')
            .ok_or_else(|| CliError::Validation(format!("--weights: expected key=value, got {part:?}")))?;
        let v: f64 = v
            .trim()
            .parse()
            .map_err(|_| CliError::Validation(format!("--weights: {v:?} is not a number")))?;
        match k.trim() {
            "agent" | "agentic" => agent = Some(v),
            "std" | "standard" => std = Some(v),
            other => return Err(CliError::Validation(format!("--weights: unknown route {other:?}"))),
        }
    }
    Ok((agent, std))
}

pub struct FuseOpts<'a> {
    pub agentic: Option<&'a Path>,
    pub standard: Option<&'a Path>,
    pub weights: Option<&'a str>,
    pub k_rrf: Option<f64>,
    pub top_n: Option<usize>,
    pub per_kind: bool,
    pub store: Option<&'a Path>,
}

pub fn fuse(env: &mut Env, dir: Option<&Path>, o: FuseOpts<'_>) -> Result<(), CliError> {
    {
        let f = &mut env.config.fusion;
        if let Some(w) = o.weights {
            let (a, s) = parse_weights(w)?;
            f.w_agent = a.unwrap_or(f.w_agent);
            f.w_std = s.unwrap_or(f.w_std);
        }
        f.k_rrf = o.k_rrf.unwrap_or(f.k_rrf);
        f.top_n = o.top_n.unwrap_or(f.top_n);
        f.per_kind |= o.per_kind;
    }
    env.config.validate()?;
    let env = &*env;
    let dir = env.out_dir(dir, "fuse");
    let agentic = o
        .agentic
        .map_or_else(|| env.outputs().join("agent-run").join(RANKINGS_FILE), Path::to_owned);
    let standard = o
        .standard
        .map_or_else(|| env.outputs().join("search-standard").join(RANKINGS_FILE), Path::to_owned);
    let store_path = env.store_path(o.store);
    with_output(env, &dir, "fuse", |out| {
        let f = &env.config.fusion;
        out.set_params(json!({ "fusion": f, "agentic": basename(&agentic), "standard": basename(&standard) }));
        let a = read_rankings(&agentic, out)?;
        let s: BTreeMap<String, RankedList> = read_rankings(&standard, out)?.into_iter().collect();
        let mut order: Vec<&str> = a.iter().map(|(id, _)| id.as_str()).collect();
        let a_ids: BTreeSet<&str> = order.iter().copied().collect();
        order.extend(s.keys().map(String::as_str).filter(|id| !a_ids.contains(id)));
        let a: BTreeMap<&str, &RankedList> = a.iter().map(|(id, r)| (id.as_str(), r)).collect();
        let corpus = if f.per_kind { Some(load_store(&store_path, out)?.corpus) } else { None };

        let mut joint = Vec::new();
        let mut by_kind: BTreeMap<DocKind, Vec<RankingRecord>> = BTreeMap::new();
        for id in order {
            let mut routes = Vec::new();
            match a.get(id) {
                Some(r) => routes.push(RouteRanking::new(RouteId::Agentic, f.w_agent, (*r).clone())),
                None => out.warn(format!("{id}: no agentic ranking, fusing the standard route alone")),
            }
            match s.get(id) {
                Some(r) => routes.push(RouteRanking::new(RouteId::Standard, f.w_std, r.clone())),
                None => out.warn(format!("{id}: no standard ranking, fusing the agentic route alone")),
            }
            match &corpus {
                Some(corpus) => {
                    let fused = fuse_rrf_per_kind(&routes, corpus, f.k_rrf, f.top_n)
                        .map_err(|e| CliError::Validation(format!("{id}: {e}")))?;
                    for (kind, ranking) in fused {
                        by_kind
                            .entry(kind)
                            .or_default()
                            .push(RankingRecord::new(id, &format!("fused-{}", kind.as_str()), ranking));
                    }
                }
                None => {
                    let fused =
                        fuse_rrf(&routes, f.k_rrf, f.top_n).map_err(|e| CliError::Validation(format!("{id}: {e}")))?;
                    joint.push(RankingRecord::new(id, "fused", fused));
                }
            }
        }
        if corpus.is_some() {
            for kind in [DocKind::Statute, DocKind::Precedent] {
                let records = by_kind.remove(&kind).unwrap_or_default();
                out.write(&format!("rankings.{}.jsonl", kind.as_str()), &jsonl(&records))?;
            }
        } else {
            out.write(RANKINGS_FILE, &jsonl(&joint))?;
        }
        Ok(None)
    })
}

#[derive(Serialize)]
struct MiningReport {
    folds: usize,
    cases_per_fold: Vec<usize>,
    triples: usize,
    warnings: Vec<String>,
}

pub struct MineOpts<'a> {
    pub store: Option<&'a Path>,
    pub folds: Option<usize>,
    pub n_neg: Option<usize>,
    pub depth: Option<usize>,
}

pub fn mine_triples(env: &mut Env, dir: Option<&Path>, o: MineOpts<'_>) -> Result<(), CliError> {
    {
        let m = &mut env.config.mining;
        m.folds = o.folds.unwrap_or(m.folds);
        m.n_neg = o.n_neg.unwrap_or(m.n_neg);
        m.depth = o.depth.unwrap_or(m.depth);
    }
    env.config.validate()?;
    let env = &*env;
    let dir = env.out_dir(dir, "mine-triples");
    let store_path = env.store_path(o.store);
    with_output(env, &dir, "mine-triples", |out| {
        let m = &env.config.mining;
        out.set_params(json!({ "mining": m, "tokenizer": env.config.retrieval.tokenizer }));
        for k in 0..m.folds {
            out.seed(&format!("fold_{k}_salt"), k as u64);
        }
        let store = load_store(&store_path, out)?;
        // One provider per fold; the fold index salts the hash so every
        // fold sees a different embedding space.
        let providers: Vec<HashingProvider> = (0..m.folds).map(|k| HashingProvider::new(m.dim, k as u64)).collect();
        let refs: Vec<&dyn EmbeddingProvider> = providers.iter().map(|p| p as &dyn EmbeddingProvider).collect();
        let cases = store.cases.cases();
        let mined = mine_triples_kfold(cases, &store.corpus, &refs, m.params(), env.config.retrieval.embed_options())
            .map_err(|e| CliError::Validation(e.to_string()))?;
        let gold: BTreeMap<&str, &BTreeSet<String>> =
            cases.iter().map(|c| (c.facts.as_str(), &c.gold_evidence_ids)).collect();
        validate_triples(&mined.triples, &gold).map_err(CliError::Internal)?;
        out.warn_all(mined.warnings.clone());
        let mut per_fold = vec![0; m.folds];
        for c in cases {
            per_fold[fold_of(&c.id, m.folds)] += 1;
        }
        out.write("triples.jsonl", &jsonl(&mined.triples))?;
        out.write(
            "report.json",
            &pretty(&MiningReport {
                folds: m.folds,
                cases_per_fold: per_fold,
                triples: mined.triples.len(),
                warnings: mined.warnings,
            }),
        )?;
        Ok(None)
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Generation {
    pub case_id: String,
    pub backend: String,
    pub prompt_sha256: String,
    pub evidence_ids: Vec<String>,
    pub text: String,
}

/// Deterministic writer used when no language model is configured: cites
/// every retrieved statute in the tagged grammar and nothing else.
pub fn template_judgment(evidence: &EvidenceSet, corpus: &Corpus) -> String {
    let laws: Vec<String> = evidence
        .ids()
        .filter(|id| corpus.kind_of(id) == Some(DocKind::Statute))
        .map(|id| format!("[LAW:{id}]"))
        .collect();
    let precedents: Vec<&str> = evidence
        .ids()
        .filter(|id| corpus.kind_of(id) == Some(DocKind::Precedent))
        .collect();
    let mut reasoning = format!("[REASONING] The facts engage {}.", laws.join(" "));
    if !precedents.is_empty() {
        reasoning.push_str(&format!(" Guidance is drawn from {}.", precedents.join(", ")));
    }
    format!("{reasoning}\n[JUDGMENT] The defendant is convicted. [VERDICT:conviction]")
}

pub struct GenerateOpts<'a> {
    pub rankings: Option<&'a Path>,
    pub store: Option<&'a Path>,
    pub evidence_n: Option<usize>,
}

pub fn generate_judgments(env: &mut Env, dir: Option<&Path>, o: GenerateOpts<'_>) -> Result<(), CliError> {
    if let Some(n) = o.evidence_n {
        env.config.generation.evidence_n = n;
    }
    env.config.validate()?;
    let env = &*env;
    let dir = env.out_dir(dir, "generate");
    let rankings = o
        .rankings
        .map_or_else(|| env.outputs().join("fuse").join(RANKINGS_FILE), Path::to_owned);
    let store_path = env.store_path(o.store);
    with_output(env, &dir, "generate", |out| {
        out.set_params(json!({
            "generation": env.config.generation,
            "generator": env.config.llm.generator,
            "rankings": basename(&rankings),
        }));
        let store = load_store(&store_path, out)?;
        let ranked = read_rankings(&rankings, out)?;
        let writer = generator(env, &env.config.llm.generator, out)?;
        let backend = writer.as_ref().map_or("template".to_owned(), |w| w.backend_id().to_owned());
        let mut failures = Failures::default();
        let mut rows = Vec::new();
        for (case_id, ranking) in &ranked {
            let Some(case) = store.cases.get(case_id) else {
                out.warn(format!("{case_id}: not in the store, skipped"));
                continue;
            };
            let evidence = EvidenceSet::from_ranking(case_id.clone(), ranking, env.config.generation.evidence_n);
            let prompt = match build_generation_prompt(&case.facts, &evidence, &store.corpus, GENERATION_INSTRUCTION) {
                Ok(p) => p,
                Err(e) => {
                    failures.record(out, case_id, agent_error(e));
                    continue;
                }
            };
            let text = match &writer {
                None => template_judgment(&evidence, &store.corpus),
                Some(w) => match w.generate(&GenerationRequest::new(GENERATION_INSTRUCTION, prompt.clone())) {
                    Ok(r) => r.text,
                    Err(e) => {
                        failures.record(out, case_id, CliError::Backend(e.to_string()));
                        continue;
                    }
                },
            };
            rows.push(Generation {
                case_id: case_id.clone(),
                backend: backend.clone(),
                prompt_sha256: sha256_hex(prompt.as_bytes()),
                evidence_ids: evidence.ids().map(str::to_owned).collect(),
                text,
            });
        }
        out.write("generations.jsonl", &jsonl(&rows))?;
        Ok(failures.0)
    })
}

/// A candidate judgment; extra fields (as in generation output) are ignored.
#[derive(Debug, Clone, Deserialize)]
pub struct Candidate {
    pub case_id: String,
    pub text: String,
}

fn candidates_for<'a>(
    store: &'a Store,
    candidates: &'a [Candidate],
    out: &mut OutputDir,
) -> Vec<(&'a CaseRecord, &'a str)> {
    let mut pairs = Vec::new();
    for c in candidates {
        match store.cases.get(&c.case_id) {
            Some(case) => pairs.push((case, c.text.as_str())),
            None => out.warn(format!("{}: not in the store, skipped", c.case_id)),
        }
    }
    pairs
}

#[derive(Serialize)]
struct ScoredJudgment<'a> {
    case_id: &'a str,
    reward: RewardBreakdown,
}

#[derive(Serialize)]
struct RewardSummary {
    count: usize,
    mean_total: f64,
    mean_r_legal: f64,
    mean_r_struct: f64,
    mean_r_logic: f64,
}

pub struct JudgmentOpts<'a> {
    pub candidates: Option<&'a Path>,
    pub store: Option<&'a Path>,
    /// Score the gold judgments themselves.
    pub gold: bool,
}

fn candidates_path(env: &Env, flag: Option<&Path>) -> PathBuf {
    flag.map_or_else(|| env.outputs().join("generate").join("generations.jsonl"), Path::to_owned)
}

pub fn score_judgment(env: &Env, dir: &Path, o: JudgmentOpts<'_>) -> Result<(), CliError> {
    let store_path = env.store_path(o.store);
    let cand_path = candidates_path(env, o.candidates);
    with_output(env, dir, "score-judgment", |out| {
        out.set_params(json!({
            "reward": env.config.reward,
            "patterns": env.config.extraction.patterns,
            "gold": o.gold,
        }));
        let store = load_store(&store_path, out)?;
        let patterns = patterns(env, out)?;
        let owned: Vec<Candidate>;
        let pairs = if o.gold {
            store.cases.cases().iter().map(|c| (c, c.gold_judgment_text.as_str())).collect()
        } else {
            owned = read_jsonl(&cand_path, out)?;
            candidates_for(&store, &owned, out)
        };
        let scorer = TokenOverlapScorer::default();
        let mut rows = Vec::with_capacity(pairs.len());
        for (case, text) in pairs {
            let cand = parse_judgment(text, &patterns);
            let gold = gold_extract(case, &patterns);
            let reward = score_extracts(&cand, &gold, &env.config.reward, &scorer)
                .map_err(|e| CliError::Validation(format!("{}: {e}", case.id)))?;
            rows.push(ScoredJudgment {
                case_id: &case.id,
                reward,
            });
        }
        let n = rows.len().max(1) as f64;
        let mean = |f: fn(&RewardBreakdown) -> f64| rows.iter().map(|r| f(&r.reward)).sum::<f64>() / n;
        let summary = RewardSummary {
            count: rows.len(),
            mean_total: mean(|r| r.total),
            mean_r_legal: mean(|r| r.r_legal),
            mean_r_struct: mean(|r| r.r_struct),
            mean_r_logic: mean(|r| r.r_logic),
        };
        out.write("rewards.jsonl", &jsonl(&rows))?;
        out.write("summary.json", &pretty(&summary))?;
        Ok(None)
    })
}

pub fn eval_retrieval(env: &Env, dir: &Path, rankings: Option<&Path>, store: Option<&Path>) -> Result<(), CliError> {
    let store_path = env.store_path(store);
    let rankings = rankings.map_or_else(|| env.outputs().join("fuse").join(RANKINGS_FILE), Path::to_owned);
    with_output(env, dir, "eval-retrieval", |out| {
        out.set_params(json!({ "eval": env.config.eval, "rankings": basename(&rankings) }));
        let store = load_store(&store_path, out)?;
        let ranked: BTreeMap<String, RankedList> = read_rankings(&rankings, out)?.into_iter().collect();
        let empty = RankedList::default();
        let mut triples = Vec::new();
        for case in store.cases.cases() {
            let r = ranked.get(&case.id).unwrap_or_else(|| {
                out.warn(format!("{}: no ranking, scored as empty", case.id));
                &empty
            });
            triples.push((case.id.as_str(), r, &case.gold_evidence_ids));
        }
        for id in ranked.keys().filter(|id| store.cases.get(id).is_none()) {
            out.warn(format!("{id}: ranking for a case not in the store, ignored"));
        }
        let report = evaluate_retrieval(triples, env.config.eval.averaging);
        out.warn_all(report.skipped.iter().map(|id| format!("{id}: no gold evidence, skipped")));
        out.write("report.json", &pretty(&report))?;
        out.write("report.txt", report.to_table().as_bytes())?;
        Ok(None)
    })
}

pub fn eval_generation(env: &Env, dir: &Path, o: JudgmentOpts<'_>) -> Result<(), CliError> {
    let store_path = env.store_path(o.store);
    let cand_path = candidates_path(env, o.candidates);
    with_output(env, dir, "eval-generation", |out| {
        out.set_params(json!({
            "eval": env.config.eval,
            "patterns": env.config.extraction.patterns,
            "gold": o.gold,
        }));
        let store = load_store(&store_path, out)?;
        let patterns = patterns(env, out)?;
        let owned: Vec<Candidate>;
        let pairs = if o.gold {
            store.cases.cases().iter().map(|c| (c, c.gold_judgment_text.as_str())).collect()
        } else {
            owned = read_jsonl(&cand_path, out)?;
            candidates_for(&store, &owned, out)
        };
        let scorer = TokenOverlapScorer::default();
        let rows = pairs
            .into_iter()
            .map(|(case, text)| {
                GenerationRow::compute(&case.id, &parse_judgment(text, &patterns), &gold_extract(case, &patterns), &scorer)
            })
            .collect();
        let report = evaluate_generation(rows, env.config.eval.averaging, "token-overlap");
        out.write("report.json", &pretty(&report))?;
        out.write("report.txt", report.to_table().as_bytes())?;
        Ok(None)
    })
}

pub fn export(env: &Env, dir: &Path, runs: Option<&Path>, o: StoreOpts<'_>) -> Result<(), CliError> {
    let store_path = env.store_path(o.store);
    let index_dir = env.index_dir(o.index_dir);
    let runs_path = runs.map_or_else(|| env.outputs().join("agent-run").join("agent_runs.jsonl"), Path::to_owned);
    with_output(env, dir, "export-rollouts", |out| {
        out.set_params(json!({
            "agent": env.config.agent,
            "epsilon": env.config.grpo.epsilon,
            "agent_runs": basename(&runs_path),
        }));
        let store = load_store(&store_path, out)?;
        let sparse = load_sparse(&index_dir, out)?;
        let retriever = SparseRetriever {
            index: &sparse,
            method: env.config.retrieval.sparse_method(),
        };
        let runs: Vec<AgentRun> = read_jsonl(&runs_path, out)?;
        let mut groups = Vec::new();
        let mut failures = Failures::default();
        for run in &runs {
            let id = &run.plan.case_id;
            let Some(case) = store.cases.get(id) else {
                out.warn(format!("{id}: not in the store, skipped"));
                continue;
            };
            if case.gold_evidence_ids.is_empty() {
                out.warn(format!("{id}: no gold evidence, skipped"));
                continue;
            }
            match export_rollouts(run, &case.gold_evidence_ids, &retriever, &env.config.agent, env.config.grpo.epsilon) {
                Ok(g) => groups.extend(g),
                Err(e) => failures.record(out, id, agent_error(e)),
            }
        }
        out.write("rollouts.jsonl", &jsonl(&groups))?;
        Ok(failures.0)
    })
}

#[derive(Serialize)]
struct TrainSummary {
    iterations: usize,
    final_mean_reward: f64,
    final_expected_reward: Option<f64>,
    optimum: Option<f64>,
    max_tv_to_reference: f64,
}

pub struct TrainOpts {
    pub iterations: Option<usize>,
    pub group_size: Option<usize>,
    pub kl_beta: Option<f64>,
    pub learning_rate: Option<f64>,
    pub seed: Option<u64>,
    pub inputs: Option<usize>,
}

pub fn grpo_train(env: &mut Env, dir: Option<&Path>, o: TrainOpts) -> Result<(), CliError> {
    {
        let g = &mut env.config.grpo;
        g.iterations = o.iterations.unwrap_or(g.iterations);
        g.group_size = o.group_size.unwrap_or(g.group_size);
        g.kl_beta = o.kl_beta.unwrap_or(g.kl_beta);
        g.learning_rate = o.learning_rate.unwrap_or(g.learning_rate);
        g.seed = o.seed.unwrap_or(g.seed);
        g.toy_inputs = o.inputs.unwrap_or(g.toy_inputs);
    }
    env.config.validate()?;
    let env = &*env;
    let dir = env.out_dir(dir, "grpo-train");
    with_output(env, &dir, "grpo-train", |out| {
        let g = &env.config.grpo;
        out.set_params(json!({ "grpo": g, "reward": env.config.reward, "task": "toy-judgment" }));
        out.seed("grpo", g.seed);
        out.seed("task", g.task_seed);
        let generated = JudgmentTask::generate(g.toy_inputs, g.task_seed);
        let task = JudgmentTask::from_inputs(generated.inputs, env.config.reward.clone());
        let (trace, policy, failure) = match train_toy(&task, &g.train_config()) {
            Ok(o) => (o.trace, Some(o.policy), None),
            Err(e) => {
                let class = match e.cause {
                    GrpoError::Reward(_) => CliError::Backend(e.to_string()),
                    _ => CliError::Internal(e.to_string()),
                };
                out.error(e.to_string());
                (e.trace, None, Some(class))
            }
        };
        out.write("trace.jsonl", &jsonl(&trace))?;
        if let Some(policy) = &policy {
            let last = trace.last();
            let summary = TrainSummary {
                iterations: trace.len(),
                final_mean_reward: last.map_or(0.0, |t| t.mean_reward),
                final_expected_reward: last.and_then(|t| t.expected_reward),
                optimum: task.optimum(),
                max_tv_to_reference: policy.max_tv_to_reference(),
            };
            out.write("policy.json", &pretty(policy))?;
            out.write("summary.json", &pretty(&summary))?;
        }
        Ok(failure)
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use judgeflow_core::corpus::LegalDocument;

    #[test]
    fn weights_flag() {
        assert_eq!(parse_weights("agent=2.0,std=1.0").unwrap(), (Some(2.0), Some(1.0)));
        assert_eq!(parse_weights("standard=0.5").unwrap(), (None, Some(0.5)));
        assert!(matches!(parse_weights("agent=x"), Err(CliError::Validation(_))));
        assert!(matches!(parse_weights("other=1"), Err(CliError::Validation(_))));
    }

    #[test]
    fn template_cites_statutes_only() {
        let doc = |id: &str, kind| LegalDocument {
            id: id.into(),
            kind,
            title: id.into(),
            text: "t".into(),
        };
        let corpus =
            Corpus::from_documents(vec![doc("ART1", DocKind::Statute), doc("P1", DocKind::Precedent)]).unwrap();
        let ev = EvidenceSet::from_ranking("c", &RankedList::from_unsorted(
            vec![judgeflow_core::Scored::new("ART1", 2.0), judgeflow_core::Scored::new("P1", 1.0)],
            10,
        ), 5);
        let text = template_judgment(&ev, &corpus);
        assert!(text.contains("[LAW:ART1]"));
        assert!(!text.contains("[LAW:P1]"));
        assert!(text.contains("P1"));
    }
}
