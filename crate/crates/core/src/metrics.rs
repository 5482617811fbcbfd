//! Retrieval and generation metrics.
//!
//! Conventions:
//! - `precision_at_k` always divides by `k`, even when the ranking is shorter.
//! - Recall is undefined for an empty gold set; such cases are skipped by the
//!   report builders and listed in `skipped`.
//! - `set_prf(∅, ∅)` is (1, 1, 1); empty prediction against non-empty gold
//!   is (0, 0, 0).
//! - Summary F1 is the harmonic mean of the summary precision and recall.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rubric::{numeric_match_opt, JudgmentExtract, SimilarityScorer};
use crate::types::RankedList;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("k must be >= 1")]
    ZeroK,
    #[error("gold set is empty; recall is undefined")]
    EmptyGold,
}

fn hits_at_k(ranking: &RankedList, gold: &BTreeSet<String>, k: usize) -> usize {
    ranking.ids().take(k).filter(|id| gold.contains(*id)).count()
}

pub fn precision_at_k(ranking: &RankedList, gold: &BTreeSet<String>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    Ok(hits_at_k(ranking, gold, k) as f64 / k as f64)
}

pub fn recall_at_k(ranking: &RankedList, gold: &BTreeSet<String>, k: usize) -> Result<f64, MetricError> {
    if k == 0 {
        return Err(MetricError::ZeroK);
    }
    if gold.is_empty() {
        return Err(MetricError::EmptyGold);
    }
    Ok(hits_at_k(ranking, gold, k) as f64 / gold.len() as f64)
}

pub fn recall_at_50(ranking: &RankedList, gold: &BTreeSet<String>) -> Result<f64, MetricError> {
    recall_at_k(ranking, gold, 50)
}

/// Reciprocal rank of the first gold document; 0 when none is retrieved.
pub fn mrr(ranking: &RankedList, gold: &BTreeSet<String>) -> f64 {
    ranking
        .ids()
        .position(|id| gold.contains(id))
        .map_or(0.0, |p| 1.0 / (p + 1) as f64)
}

pub fn harmonic_mean(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub recall: f64,
    pub precision: f64,
    pub f1: f64,
}

impl Prf {
    pub fn from_pr(precision: f64, recall: f64) -> Self {
        Self {
            recall,
            precision,
            f1: harmonic_mean(precision, recall),
        }
    }
}

pub fn set_prf(pred: &BTreeSet<String>, gold: &BTreeSet<String>) -> Prf {
    if pred.is_empty() && gold.is_empty() {
        return Prf::from_pr(1.0, 1.0);
    }
    if pred.is_empty() || gold.is_empty() {
        return Prf::from_pr(0.0, 0.0);
    }
    let inter = pred.intersection(gold).count() as f64;
    Prf::from_pr(inter / pred.len() as f64, inter / gold.len() as f64)
}

/// Matching score on prison months and fine amount, with the null rules of
/// the rubric (null/null = 1, null/value = 0).
pub fn penalty_accuracy(cand: &JudgmentExtract, gold: &JudgmentExtract) -> (f64, f64) {
    (
        numeric_match_opt(cand.prison_months, gold.prison_months),
        numeric_match_opt(cand.fine_amount, gold.fine_amount),
    )
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SectionScores {
    pub reasoning: f64,
    pub judgment: f64,
}

/// Per-section similarity; a section missing from the candidate scores 0,
/// a section missing from the reference compares against empty text.
pub fn section_similarity(
    cand: &JudgmentExtract,
    gold: &JudgmentExtract,
    scorer: &dyn SimilarityScorer,
) -> SectionScores {
    let one = |c: &Option<String>, g: &Option<String>| match c {
        None => 0.0,
        Some(c) => scorer.similarity(c, g.as_deref().unwrap_or("")),
    };
    SectionScores {
        reasoning: one(&cand.reasoning_section, &gold.reasoning_section),
        judgment: one(&cand.judgment_section, &gold.judgment_section),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Averaging {
    #[default]
    Macro,
    Micro,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalRow {
    pub case_id: String,
    pub gold_count: usize,
    pub hits_at_5: usize,
    pub hits_at_10: usize,
    pub hits_at_50: usize,
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub r_at_50: f64,
    pub mrr: f64,
}

impl RetrievalRow {
    pub fn compute(case_id: &str, ranking: &RankedList, gold: &BTreeSet<String>) -> Result<Self, MetricError> {
        Ok(Self {
            case_id: case_id.to_owned(),
            gold_count: gold.len(),
            hits_at_5: hits_at_k(ranking, gold, 5),
            hits_at_10: hits_at_k(ranking, gold, 10),
            hits_at_50: hits_at_k(ranking, gold, 50),
            p_at_5: precision_at_k(ranking, gold, 5)?,
            p_at_10: precision_at_k(ranking, gold, 10)?,
            r_at_5: recall_at_k(ranking, gold, 5)?,
            r_at_10: recall_at_k(ranking, gold, 10)?,
            r_at_50: recall_at_50(ranking, gold)?,
            mrr: mrr(ranking, gold),
        })
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RetrievalSummary {
    pub p_at_5: f64,
    pub p_at_10: f64,
    pub r_at_5: f64,
    pub r_at_10: f64,
    pub r_at_50: f64,
    pub mrr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    pub averaging: Averaging,
    pub case_count: usize,
    pub rows: Vec<RetrievalRow>,
    pub skipped: Vec<String>,
    pub summary: RetrievalSummary,
}

/// Streaming accumulator; [`evaluate_retrieval`] is the batch path and must
/// agree with it exactly.
#[derive(Debug, Clone, Default)]
pub struct RetrievalAccumulator {
    averaging: Averaging,
    rows: Vec<RetrievalRow>,
    skipped: Vec<String>,
}

impl RetrievalAccumulator {
    pub fn new(averaging: Averaging) -> Self {
        Self {
            averaging,
            ..Default::default()
        }
    }

    pub fn push(&mut self, case_id: &str, ranking: &RankedList, gold: &BTreeSet<String>) {
        match RetrievalRow::compute(case_id, ranking, gold) {
            Ok(row) => self.rows.push(row),
            Err(_) => self.skipped.push(case_id.to_owned()),
        }
    }

    pub fn finish(self) -> RetrievalReport {
        let n = self.rows.len();
        let summary = if n == 0 {
            RetrievalSummary::default()
        } else {
            match self.averaging {
                Averaging::Macro => {
                    let mean = |f: fn(&RetrievalRow) -> f64| self.rows.iter().map(f).sum::<f64>() / n as f64;
                    RetrievalSummary {
                        p_at_5: mean(|r| r.p_at_5),
                        p_at_10: mean(|r| r.p_at_10),
                        r_at_5: mean(|r| r.r_at_5),
                        r_at_10: mean(|r| r.r_at_10),
                        r_at_50: mean(|r| r.r_at_50),
                        mrr: mean(|r| r.mrr),
                    }
                }
                Averaging::Micro => {
                    let total = |f: fn(&RetrievalRow) -> usize| self.rows.iter().map(f).sum::<usize>() as f64;
                    let gold = total(|r| r.gold_count);
                    RetrievalSummary {
                        p_at_5: total(|r| r.hits_at_5) / (5 * n) as f64,
                        p_at_10: total(|r| r.hits_at_10) / (10 * n) as f64,
                        r_at_5: total(|r| r.hits_at_5) / gold,
                        r_at_10: total(|r| r.hits_at_10) / gold,
                        r_at_50: total(|r| r.hits_at_50) / gold,
                        mrr: self.rows.iter().map(|r| r.mrr).sum::<f64>() / n as f64,
                    }
                }
            }
        };
        RetrievalReport {
            averaging: self.averaging,
            case_count: n,
            rows: self.rows,
            skipped: self.skipped,
            summary,
        }
    }
}

pub fn evaluate_retrieval<'a>(
    cases: impl IntoIterator<Item = (&'a str, &'a RankedList, &'a BTreeSet<String>)>,
    averaging: Averaging,
) -> RetrievalReport {
    let mut rows = Vec::new();
    let mut skipped = Vec::new();
    for (id, ranking, gold) in cases {
        match RetrievalRow::compute(id, ranking, gold) {
            Ok(r) => rows.push(r),
            Err(_) => skipped.push(id.to_owned()),
        }
    }
    RetrievalAccumulator {
        averaging,
        rows,
        skipped,
    }
    .finish()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationRow {
    pub case_id: String,
    pub prison: f64,
    pub fine: f64,
    pub convicting: Prf,
    pub referencing: Prf,
    pub reasoning_similarity: f64,
    pub judgment_similarity: f64,
    #[serde(skip)]
    counts: SetCounts,
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
struct SetCounts {
    charge_tp: usize,
    charge_pred: usize,
    charge_gold: usize,
    law_tp: usize,
    law_pred: usize,
    law_gold: usize,
}

impl GenerationRow {
    pub fn compute(
        case_id: &str,
        cand: &JudgmentExtract,
        gold: &JudgmentExtract,
        scorer: &dyn SimilarityScorer,
    ) -> Self {
        let (prison, fine) = penalty_accuracy(cand, gold);
        let sections = section_similarity(cand, gold, scorer);
        Self {
            case_id: case_id.to_owned(),
            prison,
            fine,
            convicting: set_prf(&cand.charges, &gold.charges),
            referencing: set_prf(&cand.statute_ids, &gold.statute_ids),
            reasoning_similarity: sections.reasoning,
            judgment_similarity: sections.judgment,
            counts: SetCounts {
                charge_tp: cand.charges.intersection(&gold.charges).count(),
                charge_pred: cand.charges.len(),
                charge_gold: gold.charges.len(),
                law_tp: cand.statute_ids.intersection(&gold.statute_ids).count(),
                law_pred: cand.statute_ids.len(),
                law_gold: gold.statute_ids.len(),
            },
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct GenerationSummary {
    pub prison: f64,
    pub fine: f64,
    pub convicting: Option<Prf>,
    pub referencing: Option<Prf>,
    pub reasoning_similarity: f64,
    pub judgment_similarity: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenerationReport {
    pub averaging: Averaging,
    /// Identifies the similarity backend so numbers are never confused with
    /// neural text-similarity metrics.
    pub scorer_id: String,
    pub case_count: usize,
    pub rows: Vec<GenerationRow>,
    pub summary: GenerationSummary,
}

pub fn evaluate_generation(rows: Vec<GenerationRow>, averaging: Averaging, scorer_id: &str) -> GenerationReport {
    let n = rows.len();
    let summary = if n == 0 {
        GenerationSummary::default()
    } else {
        let mean = |f: &dyn Fn(&GenerationRow) -> f64| rows.iter().map(f).sum::<f64>() / n as f64;
        let (convicting, referencing) = match averaging {
            Averaging::Macro => (
                Prf::from_pr(mean(&|r| r.convicting.precision), mean(&|r| r.convicting.recall)),
                Prf::from_pr(mean(&|r| r.referencing.precision), mean(&|r| r.referencing.recall)),
            ),
            Averaging::Micro => {
                let c: SetCounts = rows.iter().fold(SetCounts::default(), |mut a, r| {
                    a.charge_tp += r.counts.charge_tp;
                    a.charge_pred += r.counts.charge_pred;
                    a.charge_gold += r.counts.charge_gold;
                    a.law_tp += r.counts.law_tp;
                    a.law_pred += r.counts.law_pred;
                    a.law_gold += r.counts.law_gold;
                    a
                });
                let ratio = |a: usize, b: usize| if b == 0 { 1.0 } else { a as f64 / b as f64 };
                (
                    Prf::from_pr(ratio(c.charge_tp, c.charge_pred), ratio(c.charge_tp, c.charge_gold)),
                    Prf::from_pr(ratio(c.law_tp, c.law_pred), ratio(c.law_tp, c.law_gold)),
                )
            }
        };
        GenerationSummary {
            prison: mean(&|r| r.prison),
            fine: mean(&|r| r.fine),
            convicting: Some(convicting),
            referencing: Some(referencing),
            reasoning_similarity: mean(&|r| r.reasoning_similarity),
            judgment_similarity: mean(&|r| r.judgment_similarity),
        }
    };
    GenerationReport {
        averaging,
        scorer_id: scorer_id.to_owned(),
        case_count: n,
        rows,
        summary,
    }
}

impl GenerationReport {
    /// Every (precision, recall, f1) triple in the report, per case and summary.
    pub fn prf_rows(&self) -> Vec<Prf> {
        let mut out: Vec<Prf> = self
            .rows
            .iter()
            .flat_map(|r| [r.convicting, r.referencing])
            .collect();
        out.extend(self.summary.convicting);
        out.extend(self.summary.referencing);
        out
    }

    pub fn to_table(&self) -> String {
        let s = &self.summary;
        let (c, r) = (s.convicting.unwrap_or(Prf::from_pr(0.0, 0.0)), s.referencing.unwrap_or(Prf::from_pr(0.0, 0.0)));
        format!(
            "cases  prison  fine    conv.R  conv.P  conv.F1 ref.R   ref.P   ref.F1  reason  judgmt  (scorer: {})\n\
             {:<6} {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}\n",
            self.scorer_id,
            self.case_count,
            s.prison,
            s.fine,
            c.recall,
            c.precision,
            c.f1,
            r.recall,
            r.precision,
            r.f1,
            s.reasoning_similarity,
            s.judgment_similarity
        )
    }
}

impl RetrievalReport {
    pub fn to_table(&self) -> String {
        let s = &self.summary;
        format!(
            "cases  P@5     P@10    R@5     R@10    R@50    MRR\n{:<6} {:.4}  {:.4}  {:.4}  {:.4}  {:.4}  {:.4}\n",
            self.case_count, s.p_at_5, s.p_at_10, s.r_at_5, s.r_at_10, s.r_at_50, s.mrr
        )
    }
}
