//! Declarative extraction patterns and numeral tables.
//!
//! A [`PatternSet`] is plain data (serializable to JSON) so new document
//! conventions can be added without code changes. Two sets are bundled:
//! [`PatternSet::tagged`] for the synthetic bracket-tag grammar and
//! [`PatternSet::chinese`] for common Chinese criminal-judgment phrasing.

use std::collections::BTreeMap;
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PatternError {
    #[error("pattern {name}: {source}")]
    Regex {
        name: String,
        #[source]
        source: regex::Error,
    },
    #[error("pattern file {path}: {message}")]
    File { path: String, message: String },
}

/// Entity pattern: every match yields one string built from `template`,
/// where `{1}`, `{2}`… are replaced by capture groups. Groups listed in
/// `numeric_groups` are rewritten as arabic integers via the numeral table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EntityPattern {
    pub name: String,
    pub regex: String,
    #[serde(default = "default_template")]
    pub template: String,
    #[serde(default)]
    pub numeric_groups: Vec<usize>,
}

fn default_template() -> String {
    "{1}".into()
}

/// One captured numeral contributes `value * multiplier` to the total.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmountPart {
    pub group: usize,
    pub multiplier: f64,
}

/// Numeric pattern, e.g. a prison term split into years and months.
/// A match where no part captured anything is ignored.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AmountPattern {
    pub name: String,
    pub regex: String,
    pub parts: Vec<AmountPart>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SectionMarkers {
    pub reasoning: Vec<String>,
    pub judgment: Vec<String>,
}

/// Digit characters and positional unit characters. Units at or above
/// `section_unit` (e.g. 万) close the current section, as in 三万五千.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NumeralTable {
    pub digits: BTreeMap<char, u64>,
    pub units: BTreeMap<char, u64>,
    pub section_unit: u64,
}

impl Default for NumeralTable {
    fn default() -> Self {
        let digits = [
            ('零', 0), ('〇', 0), ('一', 1), ('二', 2), ('两', 2), ('三', 3), ('四', 4),
            ('五', 5), ('六', 6), ('七', 7), ('八', 8), ('九', 9),
        ]
        .into_iter()
        .collect();
        let units = [('十', 10), ('百', 100), ('千', 1000), ('万', 10_000), ('亿', 100_000_000)]
            .into_iter()
            .collect();
        Self {
            digits,
            units,
            section_unit: 10_000,
        }
    }
}

impl NumeralTable {
    /// Parses arabic digits (with thousands separators), table numerals or a
    /// mix such as `2万`. Returns `None` for anything else.
    pub fn parse(&self, s: &str) -> Option<f64> {
        let s: String = s.chars().filter(|c| !matches!(c, ',' | '，' | ' ')).collect();
        if s.is_empty() {
            return None;
        }
        if let Ok(v) = s.parse::<f64>() {
            return Some(v);
        }
        let mut total = 0.0f64;
        let mut section = 0.0f64;
        let mut num: Option<f64> = None;
        let mut arabic = String::new();
        let flush_arabic = |arabic: &mut String, num: &mut Option<f64>| -> Option<()> {
            if !arabic.is_empty() {
                *num = Some(arabic.parse::<f64>().ok()?);
                arabic.clear();
            }
            Some(())
        };
        for c in s.chars() {
            if c.is_ascii_digit() || c == '.' {
                arabic.push(c);
                continue;
            }
            flush_arabic(&mut arabic, &mut num)?;
            if let Some(&d) = self.digits.get(&c) {
                num = Some(d as f64);
            } else if let Some(&u) = self.units.get(&c) {
                if u >= self.section_unit {
                    total = (total + section + num.unwrap_or(0.0)) * u as f64;
                    section = 0.0;
                } else {
                    section += num.unwrap_or(1.0) * u as f64;
                }
                num = None;
            } else {
                return None;
            }
        }
        flush_arabic(&mut arabic, &mut num)?;
        Some(total + section + num.unwrap_or(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PatternSet {
    pub name: String,
    pub statute: Vec<EntityPattern>,
    pub charge: Vec<EntityPattern>,
    pub prison: Vec<AmountPattern>,
    pub fine: Vec<AmountPattern>,
    pub acquittal: Vec<String>,
    pub conviction: Vec<String>,
    pub sections: SectionMarkers,
    pub think_open: String,
    pub think_close: String,
    #[serde(default)]
    pub numerals: NumeralTable,
}

fn entity(name: &str, regex: &str) -> EntityPattern {
    EntityPattern {
        name: name.into(),
        regex: regex.into(),
        template: default_template(),
        numeric_groups: vec![],
    }
}

fn amount(name: &str, regex: &str, parts: &[(usize, f64)]) -> AmountPattern {
    AmountPattern {
        name: name.into(),
        regex: regex.into(),
        parts: parts
            .iter()
            .map(|&(group, multiplier)| AmountPart { group, multiplier })
            .collect(),
    }
}

const CN_NUM: &str = "[零〇一二两三四五六七八九十百千万亿0-9,，.]+";

impl PatternSet {
    /// The synthetic grammar: `[LAW:id]`, `[CHARGE:name]`, `[PRISON:months]`,
    /// `[FINE:amount]`, `[VERDICT:acquittal|conviction]`, section headers
    /// `[REASONING]` / `[JUDGMENT]` and a `<think>…</think>` trace.
    pub fn tagged() -> Self {
        Self {
            name: "tagged".into(),
            statute: vec![entity("law-tag", r"\[LAW:([^\]]+)\]")],
            charge: vec![entity("charge-tag", r"\[CHARGE:([^\]]+)\]")],
            prison: vec![amount("prison-tag", r"\[PRISON:([0-9]+(?:\.[0-9]+)?)\]", &[(1, 1.0)])],
            fine: vec![amount("fine-tag", r"\[FINE:([0-9]+(?:\.[0-9]+)?)\]", &[(1, 1.0)])],
            acquittal: vec![r"\[VERDICT:acquittal\]".into()],
            conviction: vec![r"\[VERDICT:conviction\]".into()],
            sections: SectionMarkers {
                reasoning: vec!["[REASONING]".into()],
                judgment: vec!["[JUDGMENT]".into()],
            },
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            numerals: NumeralTable::default(),
        }
    }

    /// Chinese criminal-judgment conventions: 《法》第N条 citations, 犯X罪
    /// charges, 有期徒刑/拘役 terms in months, 罚金 amounts in yuan.
    pub fn chinese() -> Self {
        Self {
            name: "chinese".into(),
            statute: vec![EntityPattern {
                name: "article".into(),
                regex: format!("《([^》]+)》第({CN_NUM})条"),
                template: "{1}第{2}条".into(),
                numeric_groups: vec![2],
            }],
            charge: vec![entity("charge", "犯([^，,。；;、：:\\s犯]{1,15}?罪)")],
            prison: vec![
                amount(
                    "fixed-term",
                    &format!("有期徒刑(?:({CN_NUM})年)?(?:({CN_NUM})个月)?"),
                    &[(1, 12.0), (2, 1.0)],
                ),
                amount("criminal-detention", &format!("拘役({CN_NUM})个月"), &[(1, 1.0)]),
            ],
            fine: vec![amount("fine", &format!("罚金(?:人民币)?({CN_NUM})元"), &[(1, 1.0)])],
            acquittal: vec!["无罪".into()],
            conviction: vec!["犯[^，。；]*?罪".into()],
            sections: SectionMarkers {
                reasoning: vec!["本院认为".into()],
                judgment: vec!["判决如下".into()],
            },
            think_open: "<think>".into(),
            think_close: "</think>".into(),
            numerals: NumeralTable::default(),
        }
    }

    pub fn load(path: &Path) -> Result<Self, PatternError> {
        let body = std::fs::read_to_string(path).map_err(|e| PatternError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        serde_json::from_str(&body).map_err(|e| PatternError::File {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    pub fn compile(&self) -> Result<CompiledPatterns, PatternError> {
        let re = |name: &str, src: &str| {
            Regex::new(src).map_err(|source| PatternError::Regex {
                name: name.to_owned(),
                source,
            })
        };
        let entities = |ps: &[EntityPattern]| {
            ps.iter()
                .map(|p| Ok((p.clone(), re(&p.name, &p.regex)?)))
                .collect::<Result<Vec<_>, PatternError>>()
        };
        let amounts = |ps: &[AmountPattern]| {
            ps.iter()
                .map(|p| Ok((p.clone(), re(&p.name, &p.regex)?)))
                .collect::<Result<Vec<_>, PatternError>>()
        };
        let plain = |ps: &[String], what: &str| {
            ps.iter()
                .map(|p| re(what, p))
                .collect::<Result<Vec<_>, PatternError>>()
        };
        Ok(CompiledPatterns {
            set: self.clone(),
            statute: entities(&self.statute)?,
            charge: entities(&self.charge)?,
            prison: amounts(&self.prison)?,
            fine: amounts(&self.fine)?,
            acquittal: plain(&self.acquittal, "acquittal")?,
            conviction: plain(&self.conviction, "conviction")?,
        })
    }
}

/// A [`PatternSet`] with its regular expressions compiled.
#[derive(Debug, Clone)]
pub struct CompiledPatterns {
    pub set: PatternSet,
    pub(crate) statute: Vec<(EntityPattern, Regex)>,
    pub(crate) charge: Vec<(EntityPattern, Regex)>,
    pub(crate) prison: Vec<(AmountPattern, Regex)>,
    pub(crate) fine: Vec<(AmountPattern, Regex)>,
    pub(crate) acquittal: Vec<Regex>,
    pub(crate) conviction: Vec<Regex>,
}
