//! Property tests for the stated invariants.

use std::collections::{BTreeSet, HashMap};

use judgeflow_core::agent::{
    ranking_reward, select_evidence, union_best, AgentConfig, SelectionWeights, selection_reward,
};
use judgeflow_core::corpus::{CaseRecord, CaseSet, Corpus, DocKind, LegalDocument, Store, Verdict};
use judgeflow_core::grpo::compute_advantages;
use judgeflow_core::llm::{GenerationRequest, GenerationResponse, LlmError, TextGenerator, Usage};
use judgeflow_core::metrics::{
    evaluate_retrieval, harmonic_mean, precision_at_k, recall_at_k, set_prf, Averaging, RetrievalAccumulator,
};
use judgeflow_core::rubric::{
    legal_reward, logic_reward, numeric_match, parse_judgment, ExtractedVerdict, JudgmentExtract, LogicThresholds,
    PatternSet,
};
use judgeflow_core::{RankedList, Scored};
use proptest::prelude::*;

fn id_set(max: usize) -> impl Strategy<Value = BTreeSet<String>> {
    prop::collection::btree_set((0..max).prop_map(|i| format!("d{i}")), 0..12)
}

fn ranking(max: usize) -> impl Strategy<Value = RankedList> {
    prop::sample::subsequence((0..max).collect::<Vec<_>>(), 0..max).prop_shuffle().prop_map(|ids| {
        let n = ids.len();
        RankedList::new(ids.iter().enumerate().map(|(i, d)| Scored::new(format!("d{d}"), (n - i) as f64)).collect())
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(300))]

    #[test]
    fn matching_score_symmetric_and_bounded(a in 0.0f64..1e6, b in 0.0f64..1e6) {
        let s = numeric_match(a, b);
        prop_assert_eq!(s, numeric_match(b, a));
        prop_assert!((0.0..=1.0).contains(&s));
        prop_assert_eq!(numeric_match(a, a), 1.0);
    }

    #[test]
    fn advantages_are_normalised(r in prop::collection::vec(-10.0f64..10.0, 2..40)) {
        let a = compute_advantages(&r, 1e-9).unwrap();
        let mean = a.iter().sum::<f64>() / a.len() as f64;
        let std = (a.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / a.len() as f64).sqrt();
        prop_assert!(mean.abs() < 1e-9);
        let degenerate = r.iter().all(|x| *x == r[0]);
        if degenerate {
            prop_assert!(a.iter().all(|x| *x == 0.0));
        } else {
            prop_assert!(std > 0.0 && std <= 1.0 + 1e-12, "{}", std);
            prop_assert!((std - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn advantages_shift_invariant(ks in prop::collection::vec(-4096i32..4096, 2..32), shift in -4096i32..4096) {
        // Dyadic rewards: every addition is exact.
        let r: Vec<f64> = ks.iter().map(|k| *k as f64 / 1024.0).collect();
        let c = shift as f64 / 256.0;
        let shifted: Vec<f64> = r.iter().map(|x| x + c).collect();
        prop_assert_eq!(compute_advantages(&r, 1e-6).unwrap(), compute_advantages(&shifted, 1e-6).unwrap());
    }

    #[test]
    fn advantage_signs_survive_scaling(r in prop::collection::vec(-10.0f64..10.0, 2..30), c in 0.01f64..100.0) {
        let a = compute_advantages(&r, 1e-9).unwrap();
        let scaled: Vec<f64> = r.iter().map(|x| x * c).collect();
        let b = compute_advantages(&scaled, 1e-9).unwrap();
        for (x, y) in a.iter().zip(&b) {
            if x.abs() > 1e-6 {
                prop_assert_eq!(x.signum(), y.signum());
            }
        }
    }

    #[test]
    fn set_prf_consistent(p in id_set(20), g in id_set(20)) {
        let m = set_prf(&p, &g);
        prop_assert!((m.f1 - harmonic_mean(m.precision, m.recall)).abs() < 1e-12);
        for x in [m.recall, m.precision, m.f1] {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    #[test]
    fn hit_counts_are_integral(r in ranking(30), g in id_set(30), k in 1usize..20) {
        prop_assume!(!g.is_empty());
        let p = precision_at_k(&r, &g, k).unwrap() * k as f64;
        let rc = recall_at_k(&r, &g, k).unwrap() * g.len() as f64;
        prop_assert!((p - p.round()).abs() < 1e-9);
        prop_assert!((rc - rc.round()).abs() < 1e-9);
    }

    #[test]
    fn streaming_equals_batch(rows in prop::collection::vec((ranking(25), id_set(25)), 0..12), micro in any::<bool>()) {
        let avg = if micro { Averaging::Micro } else { Averaging::Macro };
        let ids: Vec<String> = (0..rows.len()).map(|i| format!("c{i}")).collect();
        let mut acc = RetrievalAccumulator::new(avg);
        for (id, (r, g)) in ids.iter().zip(&rows) {
            acc.push(id, r, g);
        }
        let batch = evaluate_retrieval(ids.iter().zip(&rows).map(|(id, (r, g))| (id.as_str(), r, g)), avg);
        prop_assert_eq!(acc.finish(), batch);
    }

    #[test]
    fn query_reward_bounds(r in ranking(80), g in id_set(80)) {
        prop_assume!(!g.is_empty());
        let v = ranking_reward(&r, &g, 0.5).unwrap();
        prop_assert!((0.0..=1.0).contains(&v));
        let top50: BTreeSet<&str> = r.ids().take(50).collect();
        let full = r.items.first().is_some_and(|s| g.contains(&s.doc_id)) && g.iter().all(|x| top50.contains(x.as_str()));
        prop_assert_eq!(v == 1.0, full);
    }

    #[test]
    fn union_is_exact(lists in prop::collection::vec(ranking(40), 1..6)) {
        let u = union_best(&lists);
        let mut want: HashMap<String, f64> = HashMap::new();
        for l in &lists {
            for s in &l.items {
                let e = want.entry(s.doc_id.clone()).or_insert(f64::MIN);
                if s.score > *e { *e = s.score; }
            }
        }
        prop_assert_eq!(u.len(), want.len());
        for s in &u.items {
            prop_assert_eq!(want[&s.doc_id], s.score);
        }
        prop_assert!(u.first_duplicate().is_none());
    }

    #[test]
    fn selection_containment_and_floor(
        pool in ranking(30),
        chosen in prop::collection::vec(0usize..40, 0..10),
        n_min in 1usize..8,
    ) {
        prop_assume!(!pool.is_empty());
        let docs: Vec<LegalDocument> = (0..40)
            .map(|i| LegalDocument { id: format!("d{i}"), kind: DocKind::Statute, title: String::new(), text: "t".into() })
            .collect();
        let corpus = Corpus::from_documents(docs).unwrap();
        let out = chosen.iter().map(|i| format!("d{i}")).collect::<Vec<_>>().join(", ");
        let sel = Canned(out);
        let cfg = AgentConfig { n_min, ..Default::default() };
        let r = select_evidence("c", &pool, "facts", &corpus, Some(&sel), &cfg).unwrap();
        prop_assert!(r.check_invariants().is_ok());
        prop_assert!(r.selected_ids.len() >= n_min.min(pool.len()));
        let w = SelectionWeights { a: 0.5, b: 0.5, c: 0.05, l_target: 8, cap: 10.0 };
        let g: BTreeSet<String> = pool.ids().take(3).map(str::to_owned).collect();
        let v = selection_reward(&r.selected_ids, &g, &g, &w);
        prop_assert!((-0.5..=1.0).contains(&v));
    }

    #[test]
    fn rewards_stay_in_unit_interval(
        cs in id_set(8), gs in id_set(8), cp in prop::option::of(0.0f64..500.0), gp in prop::option::of(0.0f64..500.0),
        words in prop::collection::vec(0usize..50, 0..1500),
    ) {
        let mut cand = JudgmentExtract::empty();
        cand.statute_ids = cs;
        cand.prison_months = cp;
        cand.verdict = ExtractedVerdict::Conviction;
        let mut gold = JudgmentExtract::empty();
        gold.statute_ids = gs;
        gold.prison_months = gp;
        gold.verdict = ExtractedVerdict::Conviction;
        let l = legal_reward(&cand, &gold, &Default::default()).unwrap().value;
        prop_assert!((0.0..=1.0).contains(&l));
        let trace: Vec<String> = words.iter().map(|w| format!("w{w}")).collect();
        let lr = logic_reward(Some(&trace.join(" ")), &LogicThresholds::default()).value;
        prop_assert!((0.0..=1.0).contains(&lr));
    }

    #[test]
    fn tagged_grammar_round_trips(laws in id_set(30), charges in id_set(10), prison in 0u32..600, fine in 0u32..100000) {
        let p = PatternSet::tagged().compile().unwrap();
        let law_tags: Vec<String> = laws.iter().map(|l| format!("[LAW:{l}]")).collect();
        let charge_tags: Vec<String> = charges.iter().map(|c| format!("[CHARGE:{c}]")).collect();
        let text = format!(
            "[REASONING] {} [JUDGMENT] {} [PRISON:{prison}] [FINE:{fine}] [VERDICT:conviction]",
            law_tags.join(" "), charge_tags.join(" ")
        );
        let ex = parse_judgment(&text, &p);
        prop_assert_eq!(ex.statute_ids, laws);
        prop_assert_eq!(ex.charges, charges);
        prop_assert_eq!(ex.prison_months, Some(prison as f64));
        prop_assert_eq!(ex.fine_amount, Some(fine as f64));
    }

    #[test]
    fn snapshot_round_trips(texts in prop::collection::vec("[a-z 盗窃罪]{1,20}", 1..10)) {
        let docs: Vec<LegalDocument> = texts
            .iter()
            .enumerate()
            .filter(|(_, t)| !t.trim().is_empty())
            .map(|(i, t)| LegalDocument { id: format!("d{i}"), kind: DocKind::Statute, title: format!("t{i}"), text: t.clone() })
            .collect();
        prop_assume!(!docs.is_empty());
        let first = docs[0].id.clone();
        let corpus = Corpus::from_documents(docs).unwrap();
        let case = CaseRecord {
            id: "c1".into(),
            facts: "f".into(),
            gold_evidence_ids: BTreeSet::from([first]),
            gold_charges: BTreeSet::new(),
            gold_prison_months: Some(0),
            gold_fine_amount: None,
            gold_verdict: Verdict::Acquittal,
            gold_judgment_text: String::new(),
        };
        let cases = CaseSet::from_cases(vec![case], &corpus).unwrap();
        let store = Store { corpus, cases };
        let bytes = store.to_snapshot_bytes();
        prop_assert_eq!(Store::from_snapshot_bytes(&bytes).unwrap(), store);
    }
}

struct Canned(String);

impl TextGenerator for Canned {
    fn backend_id(&self) -> &str {
        "canned"
    }
    fn generate(&self, _r: &GenerationRequest) -> Result<GenerationResponse, LlmError> {
        Ok(GenerationResponse { text: self.0.clone(), usage: Usage::default() })
    }
}
