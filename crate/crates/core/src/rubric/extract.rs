//! Judgment document parsing.

use std::collections::BTreeSet;
use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::patterns::{AmountPattern, CompiledPatterns, EntityPattern, NumeralTable};
use crate::corpus::{CaseRecord, Verdict};
use crate::text::normalize_key;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExtractedVerdict {
    Conviction,
    Acquittal,
    Unknown,
}

impl From<Verdict> for ExtractedVerdict {
    fn from(v: Verdict) -> Self {
        match v {
            Verdict::Conviction => Self::Conviction,
            Verdict::Acquittal => Self::Acquittal,
        }
    }
}

/// Structured entities parsed from one judgment document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JudgmentExtract {
    pub statute_ids: BTreeSet<String>,
    pub charges: BTreeSet<String>,
    pub prison_months: Option<f64>,
    pub fine_amount: Option<f64>,
    pub verdict: ExtractedVerdict,
    pub reasoning_section: Option<String>,
    pub judgment_section: Option<String>,
    pub think_trace: Option<String>,
    pub diagnostics: Vec<String>,
}

impl JudgmentExtract {
    pub fn empty() -> Self {
        Self {
            statute_ids: BTreeSet::new(),
            charges: BTreeSet::new(),
            prison_months: None,
            fine_amount: None,
            verdict: ExtractedVerdict::Unknown,
            reasoning_section: None,
            judgment_section: None,
            think_trace: None,
            diagnostics: Vec::new(),
        }
    }
}

fn find_outside(text: &str, needle: &str, exclude: &Option<Range<usize>>) -> Option<Range<usize>> {
    if needle.is_empty() {
        return None;
    }
    let mut from = 0;
    while let Some(pos) = text[from..].find(needle) {
        let start = from + pos;
        let r = start..start + needle.len();
        match exclude {
            Some(ex) if r.start < ex.end && ex.start < r.end => from = ex.end.max(start + 1),
            _ => return Some(r),
        }
        if from >= text.len() {
            break;
        }
    }
    None
}

fn render_entity(p: &EntityPattern, caps: &regex::Captures<'_>, numerals: &NumeralTable) -> Option<String> {
    let mut out = p.template.clone();
    for g in 1..caps.len() {
        let key = format!("{{{g}}}");
        if !out.contains(&key) {
            continue;
        }
        let raw = caps.get(g).map(|m| m.as_str()).unwrap_or("");
        let val = if p.numeric_groups.contains(&g) {
            let n = numerals.parse(raw)?;
            format!("{}", n as u64)
        } else {
            raw.to_owned()
        };
        out = out.replace(&key, &val);
    }
    let out = normalize_key(&out);
    (!out.is_empty()).then_some(out)
}

fn amount_value(p: &AmountPattern, caps: &regex::Captures<'_>, numerals: &NumeralTable) -> Option<f64> {
    let mut total = 0.0;
    let mut any = false;
    for part in &p.parts {
        if let Some(m) = caps.get(part.group) {
            total += numerals.parse(m.as_str())? * part.multiplier;
            any = true;
        }
    }
    any.then_some(total)
}

/// Last matched amount over all patterns, in document order.
fn extract_amount(
    body: &str,
    patterns: &[(AmountPattern, regex::Regex)],
    numerals: &NumeralTable,
    what: &str,
    diagnostics: &mut Vec<String>,
) -> Option<f64> {
    let mut found: Vec<(usize, f64)> = Vec::new();
    for (p, re) in patterns {
        for caps in re.captures_iter(body) {
            let start = caps.get(0).map_or(0, |m| m.start());
            match amount_value(p, &caps, numerals) {
                Some(v) => found.push((start, v)),
                None if caps.iter().skip(1).any(|g| g.is_some()) => {
                    diagnostics.push(format!("{what}: unparseable numeral in {:?}", &caps[0]))
                }
                None => {}
            }
        }
    }
    found.sort_by_key(|&(s, _)| s);
    let distinct: BTreeSet<u64> = found.iter().map(|(_, v)| v.to_bits()).collect();
    if distinct.len() > 1 {
        diagnostics.push(format!("{what}: {} distinct values, using the last", distinct.len()));
    }
    found.last().map(|&(_, v)| v)
}

/// Parses a judgment document. Never fails: unextractable fields are left
/// null/unknown and explained in `diagnostics`.
///
/// Entities are extracted from the text outside the think trace. Verdict
/// markers are looked for in the judgment section when one exists.
pub fn parse_judgment(text: &str, patterns: &CompiledPatterns) -> JudgmentExtract {
    let set = &patterns.set;
    let mut ex = JudgmentExtract::empty();

    let mut think_span = None;
    if let Some(open) = find_outside(text, &set.think_open, &None) {
        match text[open.end..].find(&set.think_close) {
            Some(rel) => {
                let close_start = open.end + rel;
                ex.think_trace = Some(text[open.end..close_start].trim().to_owned());
                think_span = Some(open.start..close_start + set.think_close.len());
            }
            None => ex.diagnostics.push("think trace opened but never closed".into()),
        }
    }

    let body: String = match &think_span {
        Some(r) => format!("{}\n{}", &text[..r.start], &text[r.end..]),
        None => text.to_owned(),
    };

    // Section boundaries: every marker occurrence (outside the trace) and the
    // trace itself end the preceding section.
    let first = |markers: &[String]| {
        markers
            .iter()
            .filter_map(|m| find_outside(text, m, &think_span))
            .min_by_key(|r| r.start)
    };
    let reasoning_at = first(&set.sections.reasoning);
    let judgment_at = first(&set.sections.judgment);
    let mut stops: Vec<usize> = [&reasoning_at, &judgment_at]
        .iter()
        .filter_map(|r| r.as_ref().map(|r| r.start))
        .collect();
    if let Some(t) = &think_span {
        stops.push(t.start);
    }
    let section = |at: &Option<Range<usize>>| {
        at.as_ref().map(|r| {
            let end = stops.iter().copied().filter(|&s| s >= r.end).min().unwrap_or(text.len());
            text[r.end..end].trim().to_owned()
        })
    };
    ex.reasoning_section = section(&reasoning_at);
    ex.judgment_section = section(&judgment_at);
    if ex.reasoning_section.is_none() {
        ex.diagnostics.push("reasoning section marker not found".into());
    }
    if ex.judgment_section.is_none() {
        ex.diagnostics.push("judgment section marker not found".into());
    }

    for (p, re) in &patterns.statute {
        for caps in re.captures_iter(&body) {
            match render_entity(p, &caps, &set.numerals) {
                Some(id) => {
                    ex.statute_ids.insert(id);
                }
                None => ex.diagnostics.push(format!("statute: cannot normalize {:?}", &caps[0])),
            }
        }
    }
    for (p, re) in &patterns.charge {
        for caps in re.captures_iter(&body) {
            if let Some(c) = render_entity(p, &caps, &set.numerals) {
                ex.charges.insert(c);
            }
        }
    }
    ex.prison_months = extract_amount(&body, &patterns.prison, &set.numerals, "prison", &mut ex.diagnostics);
    ex.fine_amount = extract_amount(&body, &patterns.fine, &set.numerals, "fine", &mut ex.diagnostics);

    let verdict_scope = ex.judgment_section.as_deref().unwrap_or(&body);
    let acquitted = patterns.acquittal.iter().any(|re| re.is_match(verdict_scope));
    let convicted = patterns.conviction.iter().any(|re| re.is_match(verdict_scope));
    ex.verdict = if acquitted {
        ExtractedVerdict::Acquittal
    } else if convicted || !ex.charges.is_empty() {
        ExtractedVerdict::Conviction
    } else {
        ExtractedVerdict::Unknown
    };
    if ex.verdict == ExtractedVerdict::Acquittal && (ex.prison_months.is_some() || ex.fine_amount.is_some()) {
        ex.diagnostics.push("acquittal with penalty values; penalties dropped".into());
        ex.prison_months = None;
        ex.fine_amount = None;
    }
    if ex.verdict == ExtractedVerdict::Unknown {
        ex.diagnostics.push("verdict not determined".into());
    }
    ex
}

/// Reference extract for a case: sections, trace and statute citations come
/// from parsing the gold judgment text; charges, penalties and verdict come
/// from the structured labels.
pub fn gold_extract(case: &CaseRecord, patterns: &CompiledPatterns) -> JudgmentExtract {
    let mut ex = parse_judgment(&case.gold_judgment_text, patterns);
    ex.charges = case.gold_charges.clone();
    ex.verdict = case.gold_verdict.into();
    match case.gold_verdict {
        Verdict::Acquittal => {
            ex.prison_months = None;
            ex.fine_amount = None;
        }
        Verdict::Conviction => {
            ex.prison_months = case.gold_prison_months.map(f64::from);
            ex.fine_amount = case.gold_fine_amount;
        }
    }
    ex
}
