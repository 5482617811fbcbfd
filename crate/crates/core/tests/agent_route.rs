use judgeflow_core::agent::{export_rollouts, run_agent_route, AgentConfig, AgentContext};
use judgeflow_core::corpus::{CaseSet, Corpus};
use judgeflow_core::fusion::{fuse_rrf, RouteId, RouteRanking};
use judgeflow_core::metrics::recall_at_k;
use judgeflow_core::rerank::LexicalScorer;
use judgeflow_core::sparse::{build_sparse_index, SparseMethod, SparseRetriever};
use judgeflow_core::synthetic::{generate, SyntheticSpec};
use judgeflow_core::text::Tokenizer;
use judgeflow_core::types::Retriever;

#[test]
fn decomposition_recovers_minor_issues() {
    let fx = generate(&SyntheticSpec { cases: 12, ..Default::default() });
    let corpus = Corpus::from_documents(fx.documents).unwrap();
    let cases = CaseSet::from_cases(fx.cases, &corpus).unwrap();
    let index = build_sparse_index(&corpus, Tokenizer::default()).unwrap();
    let retriever = SparseRetriever { index: &index, method: SparseMethod::default() };
    let scorer = LexicalScorer::default();
    let ctx = AgentContext { corpus: &corpus, retriever: &retriever, scorer: &scorer, planner: None, selector: None };
    let cfg = AgentConfig::default();
    let (mut single, mut agent) = (0.0, 0.0);
    for case in cases.cases() {
        let run = run_agent_route(&case.id, &case.facts, &ctx, &cfg).unwrap();
        run.selection.check_invariants().unwrap();
        assert!(run.selection.fallback);
        let s = retriever.retrieve(&case.facts, 50).unwrap();
        let g = &case.gold_evidence_ids;
        single += recall_at_k(&s, g, 10).unwrap();
        agent += recall_at_k(&run.ranking, g, 10).unwrap();
        let fused = fuse_rrf(
            &[RouteRanking::new(RouteId::Agentic, 2.0, run.ranking.clone()), RouteRanking::new(RouteId::Standard, 1.0, s)],
            60.0,
            50,
        )
        .unwrap();
        assert!(recall_at_k(&fused, g, 10).unwrap() >= recall_at_k(&run.ranking, g, 10).unwrap());

        let groups = export_rollouts(&run, g, &retriever, &cfg, 1e-6).unwrap();
        assert_eq!(groups.last().unwrap().stage, "select");
        for grp in &groups {
            grp.validate().unwrap();
        }
    }
    assert!(agent > single, "agent {agent} single {single}");
}
