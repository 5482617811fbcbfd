//! Rubric reward for judgment documents:
//! `total = w1 * r_legal + w2 * r_struct + w3 * r_logic`.
//!
//! - `r_legal` compares extracted statutes and charges by set F1 and prison
//!   and fine by the matching score `S(A,B) = max(0, 1 - |A-B| / max(A,B,1))`.
//!   An acquittal/conviction conflict zeroes the penalty components.
//! - `r_struct` averages section similarity for the reasoning and judgment
//!   sections; a section missing from the candidate scores 0.
//! - `r_logic = min(1, S_len + S_rep)` over the think trace.

mod extract;
mod patterns;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use extract::{gold_extract, parse_judgment, ExtractedVerdict, JudgmentExtract};
pub use patterns::{
    AmountPart, AmountPattern, CompiledPatterns, EntityPattern, NumeralTable, PatternError, PatternSet,
    SectionMarkers,
};

use crate::corpus::CaseRecord;
use crate::dense::EmbeddingProvider;
use crate::metrics::{section_similarity, set_prf};
use crate::text::Tokenizer;

#[derive(Debug, Error, PartialEq)]
pub enum RubricError {
    #[error("reward weights must be nonnegative and sum to 1 (got {0:?})")]
    Weights([f64; 3]),
    #[error("legal sub-weights must be nonnegative with a positive sum")]
    SubWeights,
    #[error("gold verdict is unknown")]
    UnknownGoldVerdict,
    #[error("logic thresholds: {0}")]
    Thresholds(String),
}

/// `max(0, 1 - |a - b| / max(a, b, 1))`.
pub fn numeric_match(a: f64, b: f64) -> f64 {
    let denom = a.max(b).max(1.0);
    (1.0 - (a - b).abs() / denom).max(0.0)
}

/// Matching score with null handling: both null = 1, one null = 0.
pub fn numeric_match_opt(a: Option<f64>, b: Option<f64>) -> f64 {
    match (a, b) {
        (None, None) => 1.0,
        (Some(a), Some(b)) => numeric_match(a, b),
        _ => 0.0,
    }
}

pub trait SimilarityScorer: Sync {
    fn scorer_id(&self) -> &str;
    /// Similarity in [0, 1].
    fn similarity(&self, candidate: &str, reference: &str) -> f64;
}

/// Bag-of-tokens F1. Identical texts score 1; two empty texts score 1.
#[derive(Debug, Clone, Default)]
pub struct TokenOverlapScorer {
    tokenizer: Tokenizer,
}

impl SimilarityScorer for TokenOverlapScorer {
    fn scorer_id(&self) -> &str {
        "token-overlap-f1"
    }

    fn similarity(&self, candidate: &str, reference: &str) -> f64 {
        let c = self.tokenizer.tokenize(candidate);
        let r = self.tokenizer.tokenize(reference);
        if c.is_empty() && r.is_empty() {
            return 1.0;
        }
        if c.is_empty() || r.is_empty() {
            return 0.0;
        }
        let mut counts = std::collections::HashMap::<&str, i64>::new();
        for t in &r {
            *counts.entry(t).or_default() += 1;
        }
        let mut overlap = 0usize;
        for t in &c {
            if let Some(n) = counts.get_mut(t.as_str()) {
                if *n > 0 {
                    *n -= 1;
                    overlap += 1;
                }
            }
        }
        let p = overlap as f64 / c.len() as f64;
        let rc = overlap as f64 / r.len() as f64;
        crate::metrics::harmonic_mean(p, rc)
    }
}

/// Cosine similarity of provider embeddings, clamped to [0, 1]. Lets a
/// remote encoder stand in for a neural text-similarity metric.
pub struct EmbeddingSimilarity<'a> {
    provider: &'a dyn EmbeddingProvider,
    id: String,
}

impl<'a> EmbeddingSimilarity<'a> {
    pub fn new(provider: &'a dyn EmbeddingProvider) -> Self {
        Self {
            id: format!("embedding-cosine:{}", provider.provider_id()),
            provider,
        }
    }
}

impl SimilarityScorer for EmbeddingSimilarity<'_> {
    fn scorer_id(&self) -> &str {
        &self.id
    }

    fn similarity(&self, candidate: &str, reference: &str) -> f64 {
        if candidate == reference {
            return 1.0;
        }
        let Ok(v) = self.provider.embed(&[candidate, reference]) else {
            return 0.0;
        };
        if v.len() != 2 {
            return 0.0;
        }
        let dot = crate::dense::dot(&v[0], &v[1]);
        let n = (crate::dense::dot(&v[0], &v[0]) * crate::dense::dot(&v[1], &v[1])).sqrt();
        if n == 0.0 {
            0.0
        } else {
            (dot / n).clamp(0.0, 1.0)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LegalSubWeights {
    pub statutes: f64,
    pub charges: f64,
    pub prison: f64,
    pub fine: f64,
}

impl Default for LegalSubWeights {
    fn default() -> Self {
        Self {
            statutes: 0.25,
            charges: 0.25,
            prison: 0.25,
            fine: 0.25,
        }
    }
}

impl LegalSubWeights {
    pub fn validate(&self) -> Result<(), RubricError> {
        let w = [self.statutes, self.charges, self.prison, self.fine];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || w.iter().sum::<f64>() <= 0.0 {
            return Err(RubricError::SubWeights);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegalBreakdown {
    pub statutes_f1: f64,
    pub charges_f1: f64,
    pub prison: f64,
    pub fine: f64,
    pub verdict_conflict: bool,
    pub value: f64,
}

fn conflicting(a: ExtractedVerdict, b: ExtractedVerdict) -> bool {
    use ExtractedVerdict::*;
    matches!((a, b), (Acquittal, Conviction) | (Conviction, Acquittal))
}

pub fn legal_reward(
    cand: &JudgmentExtract,
    gold: &JudgmentExtract,
    sub: &LegalSubWeights,
) -> Result<LegalBreakdown, RubricError> {
    sub.validate()?;
    if gold.verdict == ExtractedVerdict::Unknown {
        return Err(RubricError::UnknownGoldVerdict);
    }
    let verdict_conflict = conflicting(cand.verdict, gold.verdict);
    let statutes_f1 = set_prf(&cand.statute_ids, &gold.statute_ids).f1;
    let charges_f1 = set_prf(&cand.charges, &gold.charges).f1;
    let (prison, fine) = if verdict_conflict {
        (0.0, 0.0)
    } else {
        (
            numeric_match_opt(cand.prison_months, gold.prison_months),
            numeric_match_opt(cand.fine_amount, gold.fine_amount),
        )
    };
    let total_w = sub.statutes + sub.charges + sub.prison + sub.fine;
    let value = (sub.statutes * statutes_f1 + sub.charges * charges_f1 + sub.prison * prison + sub.fine * fine)
        / total_w;
    Ok(LegalBreakdown {
        statutes_f1,
        charges_f1,
        prison,
        fine,
        verdict_conflict,
        value,
    })
}

pub fn struct_reward(cand: &JudgmentExtract, gold: &JudgmentExtract, scorer: &dyn SimilarityScorer) -> f64 {
    let s = section_similarity(cand, gold, scorer);
    (s.reasoning + s.judgment) / 2.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LengthBand {
    /// Inclusive lower bound on trace length in tokens.
    pub min_tokens: usize,
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LogicThresholds {
    /// Ascending by `min_tokens`; the band with the largest bound not
    /// exceeding the trace length applies.
    pub bands: Vec<LengthBand>,
    pub s_rep_max: f64,
    pub ngram: usize,
}

impl Default for LogicThresholds {
    fn default() -> Self {
        let band = |min_tokens, score| LengthBand { min_tokens, score };
        Self {
            bands: vec![band(0, 0.0), band(32, 0.3), band(128, 0.6), band(1024, 0.3)],
            s_rep_max: 0.4,
            ngram: 3,
        }
    }
}

impl LogicThresholds {
    pub fn validate(&self) -> Result<(), RubricError> {
        if self.bands.is_empty() {
            return Err(RubricError::Thresholds("no length bands".into()));
        }
        if self.bands.windows(2).any(|w| w[0].min_tokens >= w[1].min_tokens) {
            return Err(RubricError::Thresholds("band bounds must be strictly increasing".into()));
        }
        if self.bands.iter().any(|b| !(0.0..=1.0).contains(&b.score)) {
            return Err(RubricError::Thresholds("band scores must lie in [0,1]".into()));
        }
        if !(0.0..=1.0).contains(&self.s_rep_max) {
            return Err(RubricError::Thresholds("s_rep_max must lie in [0,1]".into()));
        }
        if self.ngram == 0 {
            return Err(RubricError::Thresholds("ngram must be >= 1".into()));
        }
        Ok(())
    }

    pub fn length_score(&self, tokens: usize) -> f64 {
        if tokens == 0 {
            return 0.0;
        }
        self.bands
            .iter()
            .rev()
            .find(|b| b.min_tokens <= tokens)
            .map_or(0.0, |b| b.score)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogicBreakdown {
    pub tokens: usize,
    pub s_len: f64,
    pub repetition_ratio: f64,
    pub s_rep: f64,
    pub value: f64,
}

/// `min(1, S_len + S_rep)`, where `S_rep = s_rep_max * (1 - rep_ratio)` and
/// `rep_ratio = 1 - distinct n-grams / total n-grams`. Traces too short to
/// form an n-gram get `S_rep = 0`.
pub fn logic_reward(trace: Option<&str>, thresholds: &LogicThresholds) -> LogicBreakdown {
    let tokens = trace.map(|t| Tokenizer::default().tokenize(t)).unwrap_or_default();
    let n = tokens.len();
    let s_len = thresholds.length_score(n);
    let g = thresholds.ngram;
    let (repetition_ratio, s_rep) = if n >= g && g > 0 {
        let total = n - g + 1;
        let distinct: std::collections::HashSet<&[String]> = tokens.windows(g).collect();
        let ratio = 1.0 - distinct.len() as f64 / total as f64;
        (ratio, thresholds.s_rep_max * (1.0 - ratio))
    } else {
        (0.0, 0.0)
    };
    LogicBreakdown {
        tokens: n,
        s_len,
        repetition_ratio,
        s_rep,
        value: (s_len + s_rep).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardConfig {
    /// (legal, struct, logic).
    pub weights: [f64; 3],
    pub sub_weights: LegalSubWeights,
    pub logic: LogicThresholds,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            weights: [0.6, 0.3, 0.1],
            sub_weights: LegalSubWeights::default(),
            logic: LogicThresholds::default(),
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<(), RubricError> {
        let w = self.weights;
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0)) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(RubricError::Weights(w));
        }
        self.sub_weights.validate()?;
        self.logic.validate()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub r_legal: f64,
    pub r_struct: f64,
    pub r_logic: f64,
    pub total: f64,
    pub weights: [f64; 3],
    pub legal: LegalBreakdown,
    pub logic: LogicBreakdown,
    pub scorer_id: String,
    pub diagnostics: Vec<String>,
}

/// Scores a candidate extract against a reference extract.
pub fn score_extracts(
    cand: &JudgmentExtract,
    gold: &JudgmentExtract,
    config: &RewardConfig,
    scorer: &dyn SimilarityScorer,
) -> Result<RewardBreakdown, RubricError> {
    config.validate()?;
    let legal = legal_reward(cand, gold, &config.sub_weights)?;
    let r_struct = struct_reward(cand, gold, scorer);
    let logic = logic_reward(cand.think_trace.as_deref(), &config.logic);
    let [w1, w2, w3] = config.weights;
    Ok(RewardBreakdown {
        r_legal: legal.value,
        r_struct,
        r_logic: logic.value,
        total: w1 * legal.value + w2 * r_struct + w3 * logic.value,
        weights: config.weights,
        legal,
        logic,
        scorer_id: scorer.scorer_id().to_owned(),
        diagnostics: cand.diagnostics.clone(),
    })
}

/// Parses `cand_text` and scores it against the case's gold judgment.
pub fn total_reward(
    cand_text: &str,
    gold: &CaseRecord,
    config: &RewardConfig,
    patterns: &CompiledPatterns,
    scorer: &dyn SimilarityScorer,
) -> Result<RewardBreakdown, RubricError> {
    let cand = parse_judgment(cand_text, patterns);
    let reference = gold_extract(gold, patterns);
    score_extracts(&cand, &reference, config, scorer)
}
