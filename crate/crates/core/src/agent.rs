//! Agentic retrieval route: query decomposition, multi-view recall with
//! rerank, evidence selection with back-fill, and the per-stage rewards.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::{Corpus, DocKind};
use crate::grpo::{GrpoError, RolloutGroup};
use crate::llm::{GenerationRequest, TextGenerator};
use crate::metrics::{mrr, recall_at_50};
use crate::rerank::{rerank, split_sentences, PairScorer};
use crate::types::{EvidenceSet, RankedList, Retriever, Scored};

pub const PLANNER_INSTRUCTION: &str = "Decompose the case facts into focused retrieval queries, each targeting \
one legal issue (charge elements, aggravating circumstances, sentencing factors). Output one query per line \
and nothing else.";

pub const SELECTOR_INSTRUCTION: &str = "From the numbered candidate provisions, choose the ones applicable to \
the case facts. Output only their ids, separated by commas.";

pub const GENERATION_INSTRUCTION: &str = "Write the court judgment for the case below. Cite the applicable \
provisions, give the reasoning, then the judgment.";

#[derive(Debug, Error, PartialEq)]
pub enum AgentError {
    #[error("facts are empty")]
    EmptyFacts,
    #[error("invalid parameter: {0}")]
    Param(String),
    #[error("candidate pool is empty")]
    EmptyPool,
    #[error("gold set is empty")]
    EmptyGold,
    #[error("retrieval failed for sub-query {index}: {message}")]
    Retrieval { index: usize, message: String },
    #[error("evidence {0} is not in the corpus")]
    UnresolvedEvidence(String),
    #[error(transparent)]
    Grpo(#[from] GrpoError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub m_max: usize,
    pub k_per_query: usize,
    /// Sentences per sub-query in the fallback planner.
    pub fallback_window: usize,
    pub n_min: usize,
    /// Per-kind floors applied after the overall back-fill.
    pub n_min_per_kind: BTreeMap<DocKind, usize>,
    pub l_target: usize,
    /// Query reward mix: `alpha * MRR + (1 - alpha) * R@50`.
    pub alpha: f64,
    pub a: f64,
    pub b: f64,
    pub c: f64,
    /// The length penalty is clamped at `c * penalty_cap`.
    pub penalty_cap: f64,
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            m_max: 5,
            k_per_query: 20,
            fallback_window: 2,
            n_min: 3,
            n_min_per_kind: BTreeMap::new(),
            l_target: 8,
            alpha: 0.5,
            a: 0.5,
            b: 0.5,
            c: 0.05,
            penalty_cap: 10.0,
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        let positive = [
            ("m_max", self.m_max),
            ("k_per_query", self.k_per_query),
            ("fallback_window", self.fallback_window),
            ("n_min", self.n_min),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(AgentError::Param(format!("{name} must be >= 1")));
            }
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return Err(AgentError::Param("alpha must lie in [0,1]".into()));
        }
        self.selection_weights().validate()
    }

    pub fn selection_weights(&self) -> SelectionWeights {
        SelectionWeights {
            a: self.a,
            b: self.b,
            c: self.c,
            l_target: self.l_target,
            cap: self.penalty_cap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryPlan {
    pub case_id: String,
    pub sub_queries: Vec<String>,
    pub planner_id: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

pub const FALLBACK_PLANNER_ID: &str = "fallback-sentence-window";

fn strip_list_marker(line: &str) -> &str {
    let t = line.trim();
    let t = t.trim_start_matches(['-', '*', '•', '·']).trim_start();
    // "1." "1)" "(1)" "Q1:" "1、"
    let rest = t.strip_prefix('(').unwrap_or(t);
    let rest = rest
        .strip_prefix('Q')
        .or_else(|| rest.strip_prefix('q'))
        .unwrap_or(rest);
    let digits = rest.chars().take_while(|c| c.is_ascii_digit()).count();
    if digits > 0 {
        let after = &rest[digits..];
        for sep in ['.', ')', ':', '、', '）', '：'] {
            if let Some(s) = after.strip_prefix(sep) {
                return s.trim();
            }
        }
    }
    t
}

/// Parses line-delimited planner output. Numbering and bullets are removed,
/// blank and duplicate lines dropped.
pub fn parse_query_lines(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for line in text.lines() {
        let q = strip_list_marker(line);
        if !q.is_empty() && !out.iter().any(|o| o == q) {
            out.push(q.to_owned());
        }
    }
    out
}

/// Deterministic planner: consecutive windows of `window` sentences. If that
/// yields more than `m_max` windows the window widens so all sentences are
/// still covered.
pub fn fallback_queries(facts: &str, window: usize, m_max: usize) -> Vec<String> {
    let sentences = split_sentences(facts);
    if sentences.is_empty() {
        let t = facts.trim();
        return if t.is_empty() { vec![] } else { vec![t.to_owned()] };
    }
    let window = window.max(1).max(sentences.len().div_ceil(m_max.max(1)));
    sentences.chunks(window).map(|c| c.join(". ")).collect()
}

pub fn plan_queries(
    case_id: &str,
    facts: &str,
    planner: Option<&dyn TextGenerator>,
    config: &AgentConfig,
) -> Result<QueryPlan, AgentError> {
    if facts.trim().is_empty() {
        return Err(AgentError::EmptyFacts);
    }
    if config.m_max == 0 {
        return Err(AgentError::Param("m_max must be >= 1".into()));
    }
    let mut warnings = Vec::new();
    if let Some(planner) = planner {
        let request = GenerationRequest::new(PLANNER_INSTRUCTION, facts);
        for attempt in 1..=2 {
            match planner.generate(&request) {
                Ok(resp) => {
                    let mut qs = parse_query_lines(&resp.text);
                    if !qs.is_empty() {
                        if qs.len() > config.m_max {
                            warnings.push(format!("planner returned {} queries, keeping {}", qs.len(), config.m_max));
                            qs.truncate(config.m_max);
                        }
                        return Ok(QueryPlan {
                            case_id: case_id.to_owned(),
                            sub_queries: qs,
                            planner_id: planner.backend_id().to_owned(),
                            warnings,
                        });
                    }
                    warnings.push(format!("planner attempt {attempt}: no parseable query lines"));
                }
                Err(e) => warnings.push(format!("planner attempt {attempt}: {e}")),
            }
        }
        warnings.push("falling back to sentence-window planner after retry".into());
        for w in &warnings {
            warn!("{case_id}: {w}");
        }
    }
    Ok(QueryPlan {
        case_id: case_id.to_owned(),
        sub_queries: fallback_queries(facts, config.fallback_window, config.m_max),
        planner_id: FALLBACK_PLANNER_ID.to_owned(),
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct RecallOutcome {
    /// Deduplicated union, reranked against the full facts.
    pub pool: RankedList,
    /// Per sub-query top-k, in plan order.
    pub per_query: Vec<RankedList>,
    pub warnings: Vec<String>,
}

/// Deduplicated union of rankings keeping each id's best score, sorted by
/// that score (ties by id).
pub fn union_best(rankings: &[RankedList]) -> RankedList {
    let mut best: HashMap<&str, f64> = HashMap::new();
    for r in rankings {
        for s in &r.items {
            best.entry(&s.doc_id)
                .and_modify(|b| *b = b.max(s.score))
                .or_insert(s.score);
        }
    }
    let items: Vec<Scored> = best.into_iter().map(|(id, s)| Scored::new(id, s)).collect();
    let n = items.len();
    RankedList::from_unsorted(items, n)
}

/// Retrieves top-`k_per_query` for every sub-query (concurrently), merges
/// them and reranks the pool against the full facts.
pub fn multi_view_recall(
    plan: &QueryPlan,
    facts: &str,
    retriever: &dyn Retriever,
    corpus: &Corpus,
    scorer: &dyn PairScorer,
    k_per_query: usize,
) -> Result<RecallOutcome, AgentError> {
    if plan.sub_queries.is_empty() {
        return Err(AgentError::Param("plan has no sub-queries".into()));
    }
    if k_per_query == 0 {
        return Err(AgentError::Param("k_per_query must be >= 1".into()));
    }
    let results: Vec<_> = std::thread::scope(|s| {
        let handles: Vec<_> = plan
            .sub_queries
            .iter()
            .map(|q| s.spawn(move || retriever.retrieve(q, k_per_query)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("retrieval thread panicked")).collect()
    });
    let mut per_query = Vec::with_capacity(results.len());
    for (index, r) in results.into_iter().enumerate() {
        per_query.push(r.map_err(|e| AgentError::Retrieval {
            index,
            message: e.0,
        })?);
    }
    let union = union_best(&per_query);
    let mut warnings = Vec::new();
    let pool = if union.is_empty() {
        union
    } else {
        let n = union.len();
        let out = rerank(&union, facts, corpus, scorer, n).map_err(|e| AgentError::Param(e.to_string()))?;
        for f in &out.failures {
            warnings.push(format!("rerank failed on {}: {}", f.doc_id, f.message));
        }
        out.ranking
    };
    Ok(RecallOutcome {
        pool,
        per_query,
        warnings,
    })
}

/// Retrieval depth used when scoring a single query.
pub const QUERY_REWARD_DEPTH: usize = 1000;

/// `alpha * MRR + (1 - alpha) * R@50` of `ranking` against `gold`.
pub fn ranking_reward(ranking: &RankedList, gold: &BTreeSet<String>, alpha: f64) -> Result<f64, AgentError> {
    if gold.is_empty() {
        return Err(AgentError::EmptyGold);
    }
    if ranking.is_empty() {
        return Ok(0.0);
    }
    let r50 = recall_at_50(ranking, gold).map_err(|_| AgentError::EmptyGold)?;
    Ok(alpha * mrr(ranking, gold) + (1.0 - alpha) * r50)
}

pub fn query_reward(
    query: &str,
    retriever: &dyn Retriever,
    gold: &BTreeSet<String>,
    alpha: f64,
) -> Result<f64, AgentError> {
    if gold.is_empty() {
        return Err(AgentError::EmptyGold);
    }
    let ranking = retriever
        .retrieve(query, QUERY_REWARD_DEPTH)
        .map_err(|e| AgentError::Retrieval {
            index: 0,
            message: e.0,
        })?;
    ranking_reward(&ranking, gold, alpha)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionResult {
    pub case_id: String,
    pub selected_ids: Vec<String>,
    pub backfilled: bool,
    /// Selection came from pool rank alone because the selector was
    /// unavailable or unusable.
    #[serde(default)]
    pub fallback: bool,
    pub pool_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl SelectionResult {
    pub fn check_invariants(&self) -> Result<(), String> {
        let pool: BTreeSet<&str> = self.pool_ids.iter().map(String::as_str).collect();
        let mut seen = BTreeSet::new();
        for id in &self.selected_ids {
            if !pool.contains(id.as_str()) {
                return Err(format!("{id} selected but not in pool"));
            }
            if !seen.insert(id) {
                return Err(format!("{id} selected twice"));
            }
        }
        Ok(())
    }
}

/// Splits selector output into candidate ids on commas, semicolons and
/// whitespace, trimming brackets and quotes.
pub fn parse_selected_ids(text: &str) -> Vec<String> {
    text.split(|c: char| c == ',' || c == ';' || c == '，' || c == '、' || c.is_whitespace())
        .map(|t| t.trim_matches(|c: char| "[](){}<>\"'`.:".contains(c)))
        .filter(|t| !t.is_empty())
        .map(str::to_owned)
        .collect()
}

fn selector_prompt(pool: &RankedList, facts: &str, corpus: &Corpus) -> String {
    let mut out = String::from("Candidates:\n");
    for (i, id) in pool.ids().enumerate() {
        let (title, text) = corpus
            .get(id)
            .map(|d| (d.title.as_str(), d.text.as_str()))
            .unwrap_or(("", ""));
        out.push_str(&format!("{}. [{id}] {title}: {text}\n", i + 1));
    }
    out.push_str("\nFacts:\n");
    out.push_str(facts);
    out
}

/// Chooses evidence from `pool` with `selector`, then tops up from the best
/// remaining pool candidates until `n_min` (and any per-kind floor) holds.
pub fn select_evidence(
    case_id: &str,
    pool: &RankedList,
    facts: &str,
    corpus: &Corpus,
    selector: Option<&dyn TextGenerator>,
    config: &AgentConfig,
) -> Result<SelectionResult, AgentError> {
    if pool.is_empty() {
        return Err(AgentError::EmptyPool);
    }
    let pool_ids = pool.id_vec();
    let in_pool: BTreeSet<&str> = pool.ids().collect();
    let mut warnings = Vec::new();
    let mut parsed: Option<Vec<String>> = None;
    if let Some(sel) = selector {
        let request = GenerationRequest::new(SELECTOR_INSTRUCTION, selector_prompt(pool, facts, corpus));
        for attempt in 1..=2 {
            match sel.generate(&request) {
                Ok(resp) => {
                    let ids = parse_selected_ids(&resp.text);
                    if !ids.is_empty() {
                        parsed = Some(ids);
                        break;
                    }
                    warnings.push(format!("selector attempt {attempt}: no ids in output"));
                }
                Err(e) => warnings.push(format!("selector attempt {attempt}: {e}")),
            }
        }
    } else {
        warnings.push("no selector configured".into());
    }
    let fallback = parsed.is_none();
    let mut selected: Vec<String> = Vec::new();
    if let Some(ids) = parsed {
        for id in ids {
            if !in_pool.contains(id.as_str()) {
                warnings.push(format!("selector chose {id}, which is not in the candidate pool; dropped"));
            } else if !selected.contains(&id) {
                selected.push(id);
            }
        }
    } else {
        warnings.push("rank-based selection".into());
    }
    let before = selected.len();
    for id in &pool_ids {
        if selected.len() >= config.n_min {
            break;
        }
        if !selected.contains(id) {
            selected.push(id.clone());
        }
    }
    for (&kind, &floor) in &config.n_min_per_kind {
        let mut have = selected.iter().filter(|id| corpus.kind_of(id) == Some(kind)).count();
        for id in &pool_ids {
            if have >= floor {
                break;
            }
            if corpus.kind_of(id) == Some(kind) && !selected.contains(id) {
                selected.push(id.clone());
                have += 1;
            }
        }
    }
    let backfilled = !fallback && selected.len() > before;
    for w in &warnings {
        warn!("{case_id}: {w}");
    }
    let result = SelectionResult {
        case_id: case_id.to_owned(),
        selected_ids: selected,
        backfilled,
        fallback,
        pool_ids,
        warnings,
    };
    debug_assert!(result.check_invariants().is_ok());
    Ok(result)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SelectionWeights {
    pub a: f64,
    pub b: f64,
    pub c: f64,
    pub l_target: usize,
    pub cap: f64,
}

impl SelectionWeights {
    pub fn validate(&self) -> Result<(), AgentError> {
        for (name, v) in [("a", self.a), ("b", self.b), ("c", self.c), ("penalty_cap", self.cap)] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(AgentError::Param(format!("{name} must be finite and >= 0")));
            }
        }
        Ok(())
    }
}

/// Gold ids present in the candidate pool.
pub fn pool_gold(pool_ids: &[String], gold: &BTreeSet<String>) -> BTreeSet<String> {
    pool_ids.iter().filter(|id| gold.contains(*id)).cloned().collect()
}

/// `a * P@5 + b * pool recall - c * max(0, |selected| - L_target)`, clamped
/// to `[-c * cap, a + b]`.
pub fn selection_reward(
    selected: &[String],
    gold: &BTreeSet<String>,
    pool_gold: &BTreeSet<String>,
    w: &SelectionWeights,
) -> f64 {
    let p5 = selected.iter().take(5).filter(|id| gold.contains(*id)).count() as f64 / 5.0;
    let covered = selected.iter().filter(|id| pool_gold.contains(*id)).count() as f64;
    let recall = covered / pool_gold.len().max(1) as f64;
    let excess = selected.len().saturating_sub(w.l_target) as f64;
    let r = w.a * p5 + w.b * recall - w.c * excess;
    r.clamp(-w.c * w.cap, w.a + w.b)
}

pub const NO_EVIDENCE_MARKER: &str = "(no retrieved evidence)";

/// Instruction, numbered evidence, then facts.
pub fn build_generation_prompt(
    facts: &str,
    evidence: &EvidenceSet,
    corpus: &Corpus,
    instruction: &str,
) -> Result<String, AgentError> {
    let mut out = format!("### Instruction\n{}\n\n### Evidence\n", instruction.trim());
    if evidence.items.is_empty() {
        out.push_str(NO_EVIDENCE_MARKER);
        out.push('\n');
    }
    for (i, item) in evidence.items.iter().enumerate() {
        let doc = corpus
            .get(&item.doc_id)
            .ok_or_else(|| AgentError::UnresolvedEvidence(item.doc_id.clone()))?;
        out.push_str(&format!("[{}] {} | {}\n{}\n", i + 1, doc.id, doc.title, doc.text));
    }
    out.push_str(&format!("\n### Facts\n{}\n", facts.trim()));
    Ok(out)
}

/// Everything the agentic route produces for one case.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AgentRun {
    pub plan: QueryPlan,
    pub pool: RankedList,
    pub per_query: Vec<RankedList>,
    pub selection: SelectionResult,
    /// Ranking handed to fusion: selection order, then the rest of the pool.
    pub ranking: RankedList,
}

pub struct AgentContext<'a> {
    pub corpus: &'a Corpus,
    pub retriever: &'a dyn Retriever,
    pub scorer: &'a dyn PairScorer,
    pub planner: Option<&'a dyn TextGenerator>,
    pub selector: Option<&'a dyn TextGenerator>,
}

pub fn run_agent_route(
    case_id: &str,
    facts: &str,
    ctx: &AgentContext<'_>,
    config: &AgentConfig,
) -> Result<AgentRun, AgentError> {
    config.validate()?;
    let plan = plan_queries(case_id, facts, ctx.planner, config)?;
    let recall = multi_view_recall(&plan, facts, ctx.retriever, ctx.corpus, ctx.scorer, config.k_per_query)?;
    if recall.pool.is_empty() {
        return Err(AgentError::EmptyPool);
    }
    let mut selection = select_evidence(case_id, &recall.pool, facts, ctx.corpus, ctx.selector, config)?;
    selection.warnings.extend(recall.warnings);
    let ranking = crate::fusion::agentic_ranking(&selection.selected_ids, &recall.pool);
    Ok(AgentRun {
        plan,
        pool: recall.pool,
        per_query: recall.per_query,
        selection,
        ranking,
    })
}

/// Reward groups for the two trainable stages of one case, in the rollout
/// format the policy trainer consumes. The query group holds the plan's
/// sub-queries; the selection group contrasts the selector's choice with
/// the rank-only choice of the same size. Groups with fewer than two
/// candidates are skipped.
pub fn export_rollouts(
    run: &AgentRun,
    gold: &BTreeSet<String>,
    retriever: &dyn Retriever,
    config: &AgentConfig,
    epsilon: f64,
) -> Result<Vec<RolloutGroup>, AgentError> {
    let mut out = Vec::new();
    let case_id = &run.plan.case_id;
    if run.plan.sub_queries.len() >= 2 {
        let rewards = run
            .plan
            .sub_queries
            .iter()
            .map(|q| query_reward(q, retriever, gold, config.alpha))
            .collect::<Result<Vec<_>, _>>()?;
        out.push(RolloutGroup::new(
            case_id.clone(),
            "query",
            run.plan.sub_queries.clone(),
            rewards,
            epsilon,
        )?);
    }
    let pg = pool_gold(&run.selection.pool_ids, gold);
    let w = config.selection_weights();
    let rank_only: Vec<String> = run
        .selection
        .pool_ids
        .iter()
        .take(run.selection.selected_ids.len())
        .cloned()
        .collect();
    let candidates = [run.selection.selected_ids.clone(), rank_only];
    let rewards = candidates.iter().map(|c| selection_reward(c, gold, &pg, &w)).collect();
    out.push(RolloutGroup::new(
        case_id.clone(),
        "select",
        candidates.iter().map(|c| c.join(",")).collect(),
        rewards,
        epsilon,
    )?);
    Ok(out)
}
