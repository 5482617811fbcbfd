//! Deterministic synthetic corpora and cases.
//!
//! Statutes are grouped into families that share vocabulary; each statute
//! also carries a few words of its own. A case combines several issues from
//! different families. Major issues are described at length with family
//! vocabulary, minor issues in one short sentence, so a single query over
//! the whole fact text is dominated by the major families while each minor
//! issue is easy to find on its own.

use std::collections::{BTreeSet, HashSet};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CaseRecord, DocKind, LegalDocument, Verdict};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub statutes: usize,
    pub family_size: usize,
    pub cases: usize,
    pub major_issues: usize,
    pub minor_issues: usize,
    pub precedents: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            statutes: 200,
            family_size: 8,
            cases: 50,
            major_issues: 2,
            minor_issues: 2,
            precedents: 0,
            seed: 2024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticFixture {
    pub documents: Vec<LegalDocument>,
    pub cases: Vec<CaseRecord>,
}

const SYLLABLES: [&str; 24] = [
    "ka", "ro", "mi", "te", "su", "na", "lo", "vi", "de", "pa", "ri", "go", "sha", "ne", "tu", "bel", "dor", "fi",
    "ham", "jo", "quin", "ze", "wu", "yar",
];

struct Words {
    used: HashSet<String>,
}

impl Words {
    fn fresh(&mut self, rng: &mut ChaCha8Rng) -> String {
        loop {
            let n = rng.gen_range(2..=3);
            let w: String = (0..n).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
            if self.used.insert(w.clone()) {
                return w;
            }
        }
    }

    fn many(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
        (0..n).map(|_| self.fresh(rng)).collect()
    }
}

struct Family {
    words: Vec<String>,
    charge: String,
    members: Vec<usize>,
}

struct Statute {
    id: String,
    family: usize,
    own: Vec<String>,
}

const FAMILY_WORDS: usize = 6;
const OWN_WORDS: usize = 4;

pub fn generate(spec: &SyntheticSpec) -> SyntheticFixture {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut words = Words { used: HashSet::new() };
    let family_size = spec.family_size.max(1);
    let n_families = spec.statutes.div_ceil(family_size).max(1);
    let mut families: Vec<Family> = (0..n_families)
        .map(|_| Family {
            words: words.many(FAMILY_WORDS, &mut rng),
            charge: words.fresh(&mut rng),
            members: Vec::new(),
        })
        .collect();
    let mut statutes = Vec::with_capacity(spec.statutes);
    let mut documents = Vec::new();
    for i in 0..spec.statutes {
        let family = i % n_families;
        families[family].members.push(i);
        let own = words.many(OWN_WORDS, &mut rng);
        let fam = &families[family];
        let id = format!("ART{:03}", i + 1);
        let text = format!(
            "A defendant who {} {} {} {} {} {} commits {} and is punished. Aggravation applies when {} {}.",
            fam.words[0], fam.words[1], own[0], own[1], fam.words[2], fam.words[3], fam.charge, fam.words[4],
            fam.words[5]
        ) + &format!(" Specific elements: {} {}.", own[2], own[3]);
        documents.push(LegalDocument {
            id: id.clone(),
            kind: DocKind::Statute,
            title: format!("Article {} on {}", i + 1, fam.charge),
            text,
        });
        statutes.push(Statute { id, family, own });
    }

    let mut cases = Vec::with_capacity(spec.cases);
    let issues = spec.major_issues + spec.minor_issues;
    for c in 0..spec.cases {
        let mut fam_ids: Vec<usize> = (0..n_families).filter(|&f| !families[f].members.is_empty()).collect();
        fam_ids.shuffle(&mut rng);
        fam_ids.truncate(issues.min(fam_ids.len()));
        let mut sentences: Vec<String> = Vec::new();
        let mut gold = BTreeSet::new();
        let mut charges = BTreeSet::new();
        for (k, &f) in fam_ids.iter().enumerate() {
            let fam = &families[f];
            let s = &statutes[*fam.members.choose(&mut rng).expect("non-empty family")];
            debug_assert_eq!(s.family, f);
            gold.insert(s.id.clone());
            charges.insert(fam.charge.clone());
            let w = &fam.words;
            if k < spec.major_issues {
                sentences.push(format!("The defendant {} {} {} {} {}", w[0], w[1], w[2], s.own[0], s.own[1]));
                sentences.push(format!("Later the defendant {} {} {} {}", w[3], w[4], w[1], s.own[2]));
                sentences.push(format!("Witnesses saw the defendant {} {} {} {}", w[0], w[5], w[4], w[2]));
            } else {
                sentences.push(format!("The defendant also {} {} {}", s.own[0], s.own[1], s.own[3]));
            }
        }
        let prison = 6 * rng.gen_range(1..=12u32);
        let fine = 1000.0 * f64::from(rng.gen_range(1..=20u32));
        let facts = sentences.join(". ") + ".";
        let laws: Vec<String> = gold.iter().map(|g| format!("[LAW:{g}]")).collect();
        let charge_tags: Vec<String> = charges.iter().map(|c| format!("[CHARGE:{c}]")).collect();
        let trace: Vec<String> = (0..160).map(|i| format!("r{i}")).collect();
        let judgment = format!(
            "<think>{}</think>\n[REASONING] The facts establish each element under {}.\n[JUDGMENT] The defendant is guilty of {}. [PRISON:{prison}] months and [FINE:{fine}]. [VERDICT:conviction]",
            trace.join(" "),
            laws.join(" "),
            charge_tags.join(" ")
        );
        cases.push(CaseRecord {
            id: format!("case-{:03}", c + 1),
            facts,
            gold_evidence_ids: gold,
            gold_charges: charges,
            gold_prison_months: Some(prison),
            gold_fine_amount: Some(fine),
            gold_verdict: Verdict::Conviction,
            gold_judgment_text: judgment,
        });
    }

    for p in 0..spec.precedents {
        let case = &cases[p % cases.len().max(1)];
        let cited: Vec<&str> = case.gold_evidence_ids.iter().map(String::as_str).collect();
        documents.push(LegalDocument {
            id: format!("PREC{:03}", p + 1),
            kind: DocKind::Precedent,
            title: format!("Precedent {}", p + 1),
            text: format!("{} The court applied {}.", case.facts, cited.join(", ")),
        });
    }

    SyntheticFixture { documents, cases }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{CaseSet, Corpus};

    #[test]
    fn deterministic_and_valid() {
        let spec = SyntheticSpec {
            statutes: 40,
            cases: 6,
            precedents: 3,
            ..Default::default()
        };
        let a = generate(&spec);
        assert_eq!(a, generate(&spec));
        assert_eq!(a.documents.len(), 43);
        let corpus = Corpus::from_documents(a.documents.clone()).unwrap();
        let cases = CaseSet::from_cases(a.cases.clone(), &corpus).unwrap();
        assert_eq!(cases.len(), 6);
        assert!(a.cases.iter().all(|c| c.gold_evidence_ids.len() == 4));
    }
}
