//! The ten acceptance criteria, each checked at its stated tolerance and
//! time budget. Prints one PASS/FAIL line per criterion and exits non-zero
//! if any fails.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use judgeflow_core::agent::{run_agent_route, AgentConfig, AgentContext};
use judgeflow_core::corpus::{CaseRecord, CaseSet, Corpus, DocKind, LegalDocument, Verdict};
use judgeflow_core::dense::{
    build_dense_index, fold_of, mine_triples_kfold, validate_triples, EmbedOptions, EmbeddingProvider,
    MiningParams, ProviderError,
};
use judgeflow_core::fusion::{fuse_rrf, RouteId, RouteRanking};
use judgeflow_core::grpo::{
    compute_advantages, surrogate_gradient, surrogate_objective, train_toy, JudgmentTask, PolicyGroup,
    RolloutGroup, ToyEnv, ToyPolicy, ToySample, ToyTrainConfig,
};
use judgeflow_core::metrics::{
    evaluate_generation, evaluate_retrieval, harmonic_mean, recall_at_k, Averaging, GenerationRow, RetrievalRow,
};
use judgeflow_core::rerank::{rerank, LexicalScorer};
use judgeflow_core::rubric::{
    gold_extract, legal_reward, numeric_match, parse_judgment, score_extracts, struct_reward, ExtractedVerdict,
    JudgmentExtract, PatternSet, RewardConfig, TokenOverlapScorer,
};
use judgeflow_core::sparse::{build_sparse_index, Bm25Params, SparseMethod, SparseRetriever};
use judgeflow_core::synthetic::{generate, SyntheticSpec};
use judgeflow_core::text::{Tokenizer, TokenizerMode};
use judgeflow_core::types::Retriever;
use judgeflow_core::{RankedList, Scored};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($fmt:tt)+) => {
        let holds: bool = $cond;
        if !holds {
            return Err(format!($($fmt)+));
        }
    };
}

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}

fn set(ids: &[&str]) -> BTreeSet<String> {
    ids.iter().map(|s| s.to_string()).collect()
}

fn list(ids: &[&str]) -> RankedList {
    RankedList::new(ids.iter().map(|i| Scored::new(*i, 0.0)).collect())
}

fn c1_matching_score() -> Outcome {
    for (a, b, want) in [(12.0, 12.0, 1.0), (0.0, 0.0, 1.0), (6.0, 12.0, 0.5), (24.0, 12.0, 0.5)] {
        let s = numeric_match(a, b);
        ensure!(close(s, want, 1e-12), "S({a},{b}) = {s}, want {want}");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for _ in 0..1000 {
        let (a, b) = if rng.gen_bool(0.5) {
            (rng.gen_range(0..400) as f64, rng.gen_range(0..400) as f64)
        } else {
            (rng.gen_range(0.0..5e4), rng.gen_range(0.0..5e4))
        };
        let (ab, ba) = (numeric_match(a, b), numeric_match(b, a));
        ensure!(close(ab, ba, 1e-12), "S({a},{b}) = {ab} but S({b},{a}) = {ba}");
        ensure!((0.0..=1.0).contains(&ab), "S({a},{b}) = {ab} outside [0,1]");
    }
    Ok("4 fixed values, 1000 symmetric pairs".into())
}

fn c2_advantages() -> Outcome {
    let adv = compute_advantages(&[1.0, 0.0, 1.0, 0.0], 1e-9).map_err(|e| e.to_string())?;
    for (a, want) in adv.iter().zip([1.0, -1.0, 1.0, -1.0]) {
        ensure!(close(*a, want, 1e-6), "advantages {adv:?}");
    }
    let flat = compute_advantages(&[0.37; 6], 1e-6).map_err(|e| e.to_string())?;
    ensure!(flat.iter().all(|a| *a == 0.0), "equal rewards gave {flat:?}");
    // Dyadic rewards and shifts keep every shifted reward exactly
    // representable, so invariance must hold bit for bit.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..1000 {
        let g = rng.gen_range(2..=32);
        let r: Vec<f64> = (0..g).map(|_| rng.gen_range(0..=1024) as f64 / 1024.0).collect();
        let c = rng.gen_range(-4096..=4096) as f64 / 1024.0;
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        let a = compute_advantages(&r, 1e-6).map_err(|e| e.to_string())?;
        let b = compute_advantages(&shifted, 1e-6).map_err(|e| e.to_string())?;
        ensure!(a == b, "shift {c} changed advantages of {r:?}");
    }
    Ok("(1,0,1,0) -> ±1, flat -> 0, 1000 shifted groups identical".into())
}

/// Accumulates every (route, position) contribution in a plain map.
fn naive_rrf(routes: &[(f64, Vec<String>)], k_rrf: f64) -> Vec<(String, f64)> {
    let mut acc: BTreeMap<String, f64> = BTreeMap::new();
    for (w, ids) in routes {
        for (i, id) in ids.iter().enumerate() {
            *acc.entry(id.clone()).or_default() += w / (k_rrf + (i + 1) as f64);
        }
    }
    let mut out: Vec<(String, f64)> = acc.into_iter().collect();
    out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

fn c3_rrf() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for n in 0..500 {
        let docs = rng.gen_range(1..=200);
        let pool: Vec<String> = (0..docs).map(|i| format!("d{i:03}")).collect();
        let routes: Vec<(f64, Vec<String>)> = (0..rng.gen_range(1..=10))
            .map(|_| {
                let mut ids = pool.clone();
                ids.shuffle(&mut rng);
                ids.truncate(rng.gen_range(0..=docs));
                let w = if rng.gen_bool(0.3) { rng.gen_range(1..=3) as f64 } else { rng.gen_range(0.05..5.0) };
                (w, ids)
            })
            .collect();
        let k_rrf = if rng.gen_bool(0.5) { 60.0 } else { rng.gen_range(0.5..120.0) };
        let input: Vec<RouteRanking> = routes
            .iter()
            .enumerate()
            .map(|(i, (w, ids))| {
                let items = ids.iter().map(|d| Scored::new(d.clone(), 0.0)).collect();
                let route = if i % 2 == 0 { RouteId::Agentic } else { RouteId::Standard };
                RouteRanking::new(route, *w, RankedList::new(items))
            })
            .collect();
        let got: Vec<(String, f64)> = fuse_rrf(&input, k_rrf, usize::MAX)
            .map_err(|e| e.to_string())?
            .items
            .into_iter()
            .map(|s| (s.doc_id, s.score))
            .collect();
        ensure!(got == naive_rrf(&routes, k_rrf), "instance {n} differs from the naive fusion");
    }
    let fused = fuse_rrf(
        &[
            RouteRanking::new(RouteId::Agentic, 2.0, list(&["A", "B", "C"])),
            RouteRanking::new(RouteId::Standard, 1.0, list(&["B", "D", "A"])),
        ],
        60.0,
        10,
    )
    .map_err(|e| e.to_string())?;
    ensure!(fused.items[0].doc_id == "A", "two-route example ranked {:?}", fused.id_vec());
    Ok("500 random instances exact, two-route example ranks A first".into())
}

/// Reads the document text itself as a comma-separated vector.
struct VecProvider(usize);

impl EmbeddingProvider for VecProvider {
    fn provider_id(&self) -> &str {
        "vec"
    }
    fn dimension(&self) -> usize {
        self.0
    }
    fn embed(&self, texts: &[&str]) -> Result<Vec<Vec<f32>>, ProviderError> {
        texts
            .iter()
            .map(|t| t.split(',').map(|x| x.parse::<f32>().map_err(|e| ProviderError(e.to_string()))).collect())
            .collect()
    }
}

fn doc(id: &str, text: &str) -> LegalDocument {
    LegalDocument {
        id: id.into(),
        kind: DocKind::Statute,
        title: String::new(),
        text: text.into(),
    }
}

fn c4_sparse_dense() -> Outcome {
    let corpus = Corpus::from_documents(vec![doc("D1", "a b"), doc("D2", "a a b"), doc("D3", "c")])
        .map_err(|e| e.to_string())?;
    let index = build_sparse_index(&corpus, Tokenizer::new(TokenizerMode::Whitespace)).map_err(|e| e.to_string())?;
    // N = 3, df(a) = 2, avgdl = 2, k1 = 1.2, b = 0.75.
    let idf = (1.5f64 / 2.5 + 1.0).ln();
    let bm25 = |tf: f64, dl: f64| idf * tf * 2.2 / (tf + 1.2 * (0.25 + 0.75 * dl / 2.0));
    let r = index.search_bm25("a", 3, Bm25Params::default()).map_err(|e| e.to_string())?;
    ensure!(r.id_vec() == ["D2", "D1"], "bm25 order {:?}", r.id_vec());
    ensure!(close(r.items[0].score, bm25(2.0, 3.0), 1e-9), "bm25 D2 = {}", r.items[0].score);
    ensure!(close(r.items[1].score, bm25(1.0, 2.0), 1e-9), "bm25 D1 = {}", r.items[1].score);
    let t = index.search_tfidf("a", 3).map_err(|e| e.to_string())?;
    ensure!(t.id_vec() == ["D2", "D1"], "tfidf order {:?}", t.id_vec());
    ensure!(close(t.items[0].score, 2.0 / 5f64.sqrt(), 1e-9), "tfidf D2 = {}", t.items[0].score);
    ensure!(close(t.items[1].score, 1.0 / 2f64.sqrt(), 1e-9), "tfidf D1 = {}", t.items[1].score);

    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for n in 0..1000 {
        let dim = rng.gen_range(1..=8);
        let count = rng.gen_range(1..=40);
        // Half-integers make exact ties frequent.
        let docs: Vec<(String, Vec<f32>)> = (0..count)
            .map(|i| (format!("d{i:02}"), (0..dim).map(|_| rng.gen_range(-4..=4) as f32 * 0.5).collect()))
            .collect();
        let corpus = Corpus::from_documents(
            docs.iter()
                .map(|(id, v)| doc(id, &v.iter().map(f32::to_string).collect::<Vec<_>>().join(",")))
                .collect(),
        )
        .map_err(|e| e.to_string())?;
        let dense = build_dense_index(&corpus, &VecProvider(dim), EmbedOptions::default()).map_err(|e| e.to_string())?;
        let q: Vec<f32> = (0..dim).map(|_| rng.gen_range(-4..=4) as f32 * 0.5).collect();
        let k = rng.gen_range(1..=50);
        let got: Vec<(String, f64)> = dense
            .search_vector(&q, k)
            .map_err(|e| e.to_string())?
            .items
            .into_iter()
            .map(|s| (s.doc_id, s.score))
            .collect();
        let mut want: Vec<(String, f64)> = docs
            .iter()
            .map(|(id, v)| (id.clone(), v.iter().zip(&q).map(|(a, b)| *a as f64 * *b as f64).sum()))
            .collect();
        // Numeric comparison: 0.0 and -0.0 are the same score and tie on id.
        want.sort_by(|a, b| b.1.partial_cmp(&a.1).expect("finite").then_with(|| a.0.cmp(&b.0)));
        want.truncate(k);
        ensure!(got == want, "dense instance {n} differs from brute force: {got:?} vs {want:?}");
    }
    Ok("BM25 and TF-IDF closed forms, 1000 dense instances".into())
}

/// Provider `part` of `parts`: only documents numbered `part mod parts` lie
/// along the query direction, so its negatives carry its fingerprint.
struct PartitionProvider {
    id: String,
    part: usize,
    parts: usize,
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
            .map(|t| match t.strip_prefix("doc ").and_then(|s| s.parse::<usize>().ok()) {
                Some(n) if n % self.parts == self.part => vec![1.0, (n % 31) as f32 / 100.0],
                Some(n) => vec![0.0, (n % 29) as f32 / 100.0],
                None => vec![1.0, 0.0],
            })
            .collect())
    }
}

fn plain_case(id: &str, facts: String, gold: BTreeSet<String>) -> CaseRecord {
    CaseRecord {
        id: id.into(),
        facts,
        gold_evidence_ids: gold,
        gold_charges: BTreeSet::new(),
        gold_prison_months: None,
        gold_fine_amount: None,
        gold_verdict: Verdict::Conviction,
        gold_judgment_text: String::new(),
    }
}

fn c5_kfold() -> Outcome {
    let corpus = Corpus::from_documents((0..150).map(|i| doc(&format!("D{i:03}"), &format!("doc {i}"))).collect())
        .map_err(|e| e.to_string())?;
    let mut checked = 0;
    for k in 2..=5 {
        let providers: Vec<PartitionProvider> = (0..k)
            .map(|part| PartitionProvider { id: format!("p{part}"), part, parts: k })
            .collect();
        let dyn_providers: Vec<&dyn EmbeddingProvider> = providers.iter().map(|p| p as &dyn EmbeddingProvider).collect();
        let cases: Vec<CaseRecord> = (0..50)
            .map(|i| {
                let gold = (0..1 + i % 3).map(|j| format!("D{:03}", (i * 11 + j * 37) % 150)).collect();
                plain_case(&format!("case-{i:02}"), format!("facts {i}"), gold)
            })
            .collect();
        let params = MiningParams { folds: k, n_neg: 4, depth: 100 };
        let out = mine_triples_kfold(&cases, &corpus, &dyn_providers, params, EmbedOptions::default())
            .map_err(|e| e.to_string())?;
        let gold: BTreeMap<&str, &BTreeSet<String>> =
            cases.iter().map(|c| (c.facts.as_str(), &c.gold_evidence_ids)).collect();
        validate_triples(&out.triples, &gold)?;
        let expected: usize = cases.iter().map(|c| c.gold_evidence_ids.len()).sum();
        ensure!(out.triples.len() == expected, "K={k}: {} triples, want {expected}", out.triples.len());
        for t in &out.triples {
            let case = cases.iter().find(|c| c.facts == t.query_text).ok_or("triple for unknown query")?;
            let fold = fold_of(&case.id, k);
            ensure!(t.fold_index == fold, "K={k}: {} mined in fold {} not {fold}", case.id, t.fold_index);
            ensure!(t.negative_ids.len() == 4, "K={k}: {} negatives for {}", t.negative_ids.len(), case.id);
            for n in &t.negative_ids {
                let num: usize = n[1..].parse().map_err(|_| format!("bad id {n}"))?;
                ensure!(num % k == fold, "K={k}: negative {n} of {} not from provider {fold}", case.id);
                ensure!(!case.gold_evidence_ids.contains(n), "K={k}: positive {n} used as negative");
            }
            checked += 1;
        }
    }
    Ok(format!("{checked} triples over K=2..5, 50 cases each"))
}

fn extract(statutes: &[&str], charges: &[&str], prison: Option<f64>, fine: Option<f64>) -> JudgmentExtract {
    JudgmentExtract {
        statute_ids: set(statutes),
        charges: set(charges),
        prison_months: prison,
        fine_amount: fine,
        verdict: ExtractedVerdict::Conviction,
        reasoning_section: Some("the defendant took the goods".into()),
        judgment_section: Some("sentenced to prison and a fine".into()),
        ..JudgmentExtract::empty()
    }
}

fn c6_rubric() -> Outcome {
    let patterns = PatternSet::tagged().compile().map_err(|e| e.to_string())?;
    let scorer = TokenOverlapScorer::default();
    let config = RewardConfig::default();
    let fx = generate(&SyntheticSpec { cases: 20, ..Default::default() });
    for case in &fx.cases {
        let gold = gold_extract(case, &patterns);
        let cand = parse_judgment(&case.gold_judgment_text, &patterns);
        let r = score_extracts(&cand, &gold, &config, &scorer).map_err(|e| e.to_string())?;
        ensure!(r.r_legal == 1.0 && r.r_struct == 1.0, "{}: gold text scored legal {} struct {}", case.id, r.r_legal, r.r_struct);
    }

    let gold = extract(&["a", "b", "d"], &["theft"], Some(12.0), Some(1000.0));
    let cand = extract(&["a", "b", "c"], &["theft"], Some(6.0), Some(1000.0));
    let l = legal_reward(&cand, &gold, &config.sub_weights).map_err(|e| e.to_string())?;
    ensure!(close(l.statutes_f1, 2.0 / 3.0, 1e-12), "statute F1 {}", l.statutes_f1);
    ensure!(l.charges_f1 == 1.0 && l.prison == 0.5 && l.fine == 1.0, "components {l:?}");
    ensure!(close(l.value, 0.7917, 1e-4), "worked example r_legal = {}", l.value);

    let mut missing = cand.clone();
    missing.reasoning_section = None;
    ensure!(struct_reward(&missing, &gold, &scorer) == 0.5, "missing reasoning not zeroed");
    missing.judgment_section = None;
    ensure!(struct_reward(&missing, &gold, &scorer) == 0.0, "missing sections not zeroed");

    let mut acquit = cand.clone();
    acquit.verdict = ExtractedVerdict::Acquittal;
    acquit.prison_months = Some(12.0);
    let l = legal_reward(&acquit, &gold, &config.sub_weights).map_err(|e| e.to_string())?;
    ensure!(l.verdict_conflict && l.prison == 0.0 && l.fine == 0.0, "conflict not zeroed: {l:?}");
    Ok(format!("{} gold texts, worked example r_legal = 0.7917", fx.cases.len()))
}

fn random_instance(rng: &mut ChaCha8Rng) -> Result<(ToyPolicy, Vec<PolicyGroup>, f64), String> {
    let inputs = rng.gen_range(1..=2);
    let shape: Vec<Vec<usize>> = (0..inputs)
        .map(|_| (0..rng.gen_range(1..=3)).map(|_| rng.gen_range(2..=4)).collect())
        .collect();
    let mut draw = |shape: &[Vec<usize>]| -> Vec<Vec<Vec<f64>>> {
        shape
            .iter()
            .map(|s| s.iter().map(|&n| (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect()).collect())
            .collect()
    };
    let policy = ToyPolicy { logits: draw(&shape), reference: draw(&shape) };
    let mut groups = Vec::new();
    for (input, slots) in shape.iter().enumerate() {
        let g = rng.gen_range(2..=4);
        let samples: Vec<ToySample> = (0..g)
            .map(|_| {
                let choices: Vec<usize> = slots.iter().map(|&n| rng.gen_range(0..n)).collect();
                ToySample { log_prob: policy.log_prob(input, &choices), choices }
            })
            .collect();
        let rewards: Vec<f64> = (0..g).map(|_| rng.gen_range(0.0..1.0)).collect();
        let rollout = RolloutGroup::new(format!("x{input}"), "t", vec![String::new(); g], rewards, 1e-6)
            .map_err(|e| e.to_string())?;
        groups.push(PolicyGroup { input, samples, rollout });
    }
    Ok((policy, groups, rng.gen_range(0.0..1.0)))
}

fn c7_grpo() -> Outcome {
    let task = JudgmentTask::generate(4, 1);
    let optimum = task.optimum().unwrap_or(1.0);
    let cfg = ToyTrainConfig { group_size: 16, kl_beta: 0.05, iterations: 200, ..Default::default() };
    let out = train_toy(&task, &cfg).map_err(|e| e.to_string())?;
    let last = out.trace.last().ok_or("empty trace")?;
    ensure!(last.mean_reward >= 0.9 * optimum, "final mean reward {} < 0.9 × {optimum}", last.mean_reward);

    let flat = train_toy(&task, &ToyTrainConfig { learning_rate: 0.0, ..cfg.clone() }).map_err(|e| e.to_string())?;
    ensure!(flat.policy.logits == ToyPolicy::uniform(&flat.policy.shape()).logits, "lr=0 moved the policy");
    let e0 = flat.trace[0].expected_reward;
    ensure!(flat.trace.iter().all(|t| t.expected_reward == e0), "lr=0 expected reward drifted");

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let h = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let (policy, groups, beta) = random_instance(&mut rng)?;
        let grad = surrogate_gradient(&policy, &groups, beta, None).map_err(|e| e.to_string())?;
        for (i, slots) in grad.iter().enumerate() {
            for (s, choices) in slots.iter().enumerate() {
                for (j, &a) in choices.iter().enumerate() {
                    let mut p = policy.clone();
                    p.logits[i][s][j] += h;
                    let mut m = policy.clone();
                    m.logits[i][s][j] -= h;
                    let fd = (surrogate_objective(&p, &groups, beta, None) - surrogate_objective(&m, &groups, beta, None))
                        / (2.0 * h);
                    let err = (fd - a).abs() / a.abs().max(fd.abs()).max(1e-3);
                    worst = worst.max(err);
                    ensure!(err < 1e-5, "analytic {a} vs finite difference {fd}");
                }
            }
        }
    }
    Ok(format!(
        "final mean reward {:.4} (optimum {optimum}), lr=0 flat, worst gradient error {worst:.1e}",
        last.mean_reward
    ))
}

fn c8_agentic_direction() -> Outcome {
    let fx = generate(&SyntheticSpec::default());
    let corpus = Corpus::from_documents(fx.documents).map_err(|e| e.to_string())?;
    let cases = CaseSet::from_cases(fx.cases, &corpus).map_err(|e| e.to_string())?;
    ensure!(corpus.len() == 200 && cases.cases().len() == 50, "fixture has {} docs, {} cases", corpus.len(), cases.cases().len());
    let index = build_sparse_index(&corpus, Tokenizer::default()).map_err(|e| e.to_string())?;
    let retriever = SparseRetriever { index: &index, method: SparseMethod::default() };
    let scorer = LexicalScorer::default();
    let ctx = AgentContext { corpus: &corpus, retriever: &retriever, scorer: &scorer, planner: None, selector: None };
    let cfg = AgentConfig::default();
    let (mut sparse_sum, mut agent_sum, mut fused_sum) = (0.0, 0.0, 0.0);
    let mut fused_ok = 0;
    for case in cases.cases() {
        let gold = &case.gold_evidence_ids;
        let agentic = run_agent_route(&case.id, &case.facts, &ctx, &cfg).map_err(|e| e.to_string())?.ranking;
        let sparse = retriever.retrieve(&case.facts, 100).map_err(|e| e.to_string())?;
        let standard = rerank(&sparse, &case.facts, &corpus, &scorer, 50).map_err(|e| e.to_string())?.ranking;
        let fused = fuse_rrf(
            &[
                RouteRanking::new(RouteId::Agentic, 2.0, agentic.clone()),
                RouteRanking::new(RouteId::Standard, 1.0, standard.clone()),
            ],
            60.0,
            50,
        )
        .map_err(|e| e.to_string())?;
        let r = |l: &RankedList| recall_at_k(l, gold, 10).map_err(|e| e.to_string());
        let (ra, rs, rstd, rf) = (r(&agentic)?, r(&sparse)?, r(&standard)?, r(&fused)?);
        sparse_sum += rs;
        agent_sum += ra;
        fused_sum += rf;
        if rf >= ra.max(rs).max(rstd) {
            fused_ok += 1;
        }
    }
    let n = cases.cases().len() as f64;
    let (sparse, agent, fused) = (sparse_sum / n, agent_sum / n, fused_sum / n);
    ensure!(agent > sparse, "agentic R@10 {agent:.4} not above sparse {sparse:.4}");
    let share = fused_ok as f64 / n;
    ensure!(share >= 0.9, "fused ≥ both routes on only {:.0}% of cases", share * 100.0);
    Ok(format!(
        "macro R@10 sparse {sparse:.3} < agentic {agent:.3}; fused {fused:.3}, ≥ every single route on {fused_ok}/50 cases"
    ))
}

fn c9_metrics() -> Outcome {
    let gold = set(&["a", "b", "c"]);
    let row = RetrievalRow::compute("h1", &list(&["a", "x", "b", "y", "z", "c"]), &gold).map_err(|e| e.to_string())?;
    ensure!(row.p_at_5 == 0.4 && row.r_at_5 == 2.0 / 3.0 && row.mrr == 1.0, "example 1: {row:?}");
    let row = RetrievalRow::compute("h2", &list(&["x", "y", "c", "a", "b"]), &gold).map_err(|e| e.to_string())?;
    ensure!(row.p_at_5 == 0.6 && row.r_at_5 == 1.0 && row.mrr == 1.0 / 3.0, "example 2: {row:?}");
    let row = RetrievalRow::compute("h3", &list(&["x", "y"]), &gold).map_err(|e| e.to_string())?;
    ensure!(row.p_at_5 == 0.0 && row.r_at_5 == 0.0 && row.mrr == 0.0, "example 3: {row:?}");
    let report = evaluate_retrieval(
        [("h1", list(&["a", "x", "b", "y", "z", "c"]), &gold), ("h2", list(&["x", "y", "c", "a", "b"]), &gold)]
            .iter()
            .map(|(id, l, g)| (*id, l, *g)),
        Averaging::Macro,
    );
    ensure!(report.summary.p_at_5 == 0.5 && report.summary.mrr == (1.0 + 1.0 / 3.0) / 2.0, "macro summary {:?}", report.summary);

    let patterns = PatternSet::tagged().compile().map_err(|e| e.to_string())?;
    let scorer = TokenOverlapScorer::default();
    let fx = generate(&SyntheticSpec { cases: 30, ..Default::default() });
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let rows: Vec<GenerationRow> = fx
        .cases
        .iter()
        .map(|c| {
            let g = gold_extract(c, &patterns);
            let mut cand = g.clone();
            cand.statute_ids.retain(|_| rng.gen_bool(0.6));
            if rng.gen_bool(0.5) {
                cand.statute_ids.insert(format!("X{}", rng.gen_range(0..5)));
            }
            cand.charges.retain(|_| rng.gen_bool(0.7));
            GenerationRow::compute(&c.id, &cand, &g, &scorer)
        })
        .collect();
    let mut checked = 0;
    for averaging in [Averaging::Macro, Averaging::Micro] {
        let report = evaluate_generation(rows.clone(), averaging, "token-overlap");
        for prf in report.prf_rows() {
            ensure!(
                close(prf.f1, harmonic_mean(prf.precision, prf.recall), 1e-9),
                "F1 {} is not the harmonic mean of P {} and R {}",
                prf.f1,
                prf.precision,
                prf.recall
            );
            let hm = if prf.precision + prf.recall == 0.0 {
                0.0
            } else {
                2.0 * prf.precision * prf.recall / (prf.precision + prf.recall)
            };
            ensure!(close(prf.f1, hm, 1e-9), "F1 {} vs hand harmonic mean {hm}", prf.f1);
            checked += 1;
        }
    }
    Ok(format!("3 hand-checked rankings, {checked} P/R/F1 rows consistent"))
}

const PIPELINE_CONFIG: &str = r#"
[paths]
corpus = "runs/fixture/corpus.jsonl"
cases = "runs/fixture/cases.jsonl"
outputs = "runs"

[llm]
planner = "stub:planner.jsonl"
selector = "stub:planner.jsonl"
generator = "template"
"#;

const PIPELINE: &[&[&str]] = &[
    &["generate-fixture"],
    &["ingest"],
    &["build-index"],
    &["search", "--route", "standard"],
    &["search", "--route", "sparse"],
    &["search", "--route", "dense"],
    &["agent-run"],
    &["fuse"],
    &["generate", "--rankings", "runs/fuse/rankings.jsonl"],
    &["score-judgment"],
    &["eval-retrieval", "--rankings", "runs/fuse/rankings.jsonl"],
    &["eval-generation"],
    &["export-rollouts"],
    &["mine-triples"],
    &["grpo-train", "--toy", "--iters", "40"],
];

fn run_pipeline(dir: &Path) -> Result<(), String> {
    fs::write(dir.join("cfg.toml"), PIPELINE_CONFIG).map_err(|e| e.to_string())?;
    // A one-line transcript that never matches: every stub call misses and
    // the fallback path is taken, exercising the stub backend end to end.
    fs::write(
        dir.join("planner.jsonl"),
        "{\"system_instruction\":\"unused\",\"user_content\":\"unused\",\"response\":\"[]\"}\n",
    )
    .map_err(|e| e.to_string())?;
    for args in PIPELINE {
        let out = Command::new(env!("CARGO_BIN_EXE_judgeflow"))
            .current_dir(dir)
            .args(["--config", "cfg.toml"])
            .args(*args)
            .env("RUST_LOG", "error")
            .output()
            .map_err(|e| e.to_string())?;
        ensure!(out.status.success(), "{args:?} failed: {}", String::from_utf8_lossy(&out.stderr));
    }
    Ok(())
}

fn files_under(root: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![root.to_owned()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(root).expect("under root").to_owned());
            }
        }
    }
    out.sort();
    out
}

fn c10_reproducible() -> Outcome {
    let a = tempfile::tempdir().map_err(|e| e.to_string())?;
    let b = tempfile::tempdir().map_err(|e| e.to_string())?;
    run_pipeline(a.path())?;
    run_pipeline(b.path())?;
    let (fa, fb) = (files_under(a.path()), files_under(b.path()));
    ensure!(fa == fb, "file sets differ");
    let manifests = fa.iter().filter(|p| p.ends_with("manifest.json")).count();
    ensure!(manifests == PIPELINE.len(), "{manifests} manifests for {} commands", PIPELINE.len());
    for rel in &fa {
        let (x, y) = (fs::read(a.path().join(rel)), fs::read(b.path().join(rel)));
        ensure!(x.map_err(|e| e.to_string())? == y.map_err(|e| e.to_string())?, "{} differs", rel.display());
    }
    Ok(format!("{} files identical across two runs, {manifests} manifests", fa.len()))
}

/// Name, time budget in seconds, check.
type Criterion = (&'static str, u64, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 10] = [
        ("matching score", 1, c1_matching_score),
        ("group-relative advantages", 1, c2_advantages),
        ("RRF oracle equivalence", 5, c3_rrf),
        ("sparse and dense oracles", 10, c4_sparse_dense),
        ("K-fold no-leakage", 5, c5_kfold),
        ("rubric composition", 1, c6_rubric),
        ("GRPO end-to-end", 60, c7_grpo),
        ("agentic mechanism direction", 30, c8_agentic_direction),
        ("metric consistency", 1, c9_metrics),
        ("reproducibility", 60, c10_reproducible),
    ];
    let mut failed = 0;
    for (i, (name, budget, check)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = check();
        let took = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if took > Duration::from_secs(*budget) => {
                Err(format!("{detail}; took {took:.2?}, budget {budget}s"))
            }
            other => other,
        };
        match outcome {
            Ok(detail) => println!("PASS {:>2} {name}: {detail} ({took:.2?})", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why} ({took:.2?})", i + 1);
            }
        }
    }
    println!("acceptance: {}/{} criteria pass", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}
