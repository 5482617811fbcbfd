//! Text normalization and tokenization.

use serde::{Deserialize, Serialize};
use unicode_normalization::UnicodeNormalization;

/// NFC-normalize and trim. Identifiers, charges and statute citations are
/// compared in this form.
pub fn normalize_key(s: &str) -> String {
    s.nfc().collect::<String>().trim().to_owned()
}

/// Han ideographs and Japanese kana: scripts written without spaces.
pub fn is_unsegmented(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30FF
        | 0x3400..=0x4DBF
        | 0x4E00..=0x9FFF
        | 0xF900..=0xFAFF
        | 0x20000..=0x2A6DF)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TokenizerMode {
    /// Split on whitespace and punctuation, lowercase.
    Whitespace,
    /// Character bigrams over every punctuation-delimited chunk.
    CharBigram,
    /// Bigrams over runs of unsegmented script, words elsewhere.
    #[default]
    Auto,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tokenizer {
    pub mode: TokenizerMode,
}

impl Tokenizer {
    pub fn new(mode: TokenizerMode) -> Self {
        Self { mode }
    }

    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let mut out = Vec::new();
        for chunk in text.split(|c: char| !c.is_alphanumeric()) {
            if chunk.is_empty() {
                continue;
            }
            match self.mode {
                TokenizerMode::Whitespace => out.push(chunk.to_lowercase()),
                TokenizerMode::CharBigram => push_bigrams(chunk, &mut out),
                TokenizerMode::Auto => {
                    let mut run = String::new();
                    let mut run_cjk = false;
                    for c in chunk.chars() {
                        let cjk = is_unsegmented(c);
                        if !run.is_empty() && cjk != run_cjk {
                            flush_run(&run, run_cjk, &mut out);
                            run.clear();
                        }
                        run_cjk = cjk;
                        run.push(c);
                    }
                    if !run.is_empty() {
                        flush_run(&run, run_cjk, &mut out);
                    }
                }
            }
        }
        out
    }
}

fn flush_run(run: &str, cjk: bool, out: &mut Vec<String>) {
    if cjk {
        push_bigrams(run, out);
    } else {
        out.push(run.to_lowercase());
    }
}

fn push_bigrams(chunk: &str, out: &mut Vec<String>) {
    let chars: Vec<char> = chunk.chars().collect();
    if chars.len() == 1 {
        out.push(chars[0].to_lowercase().collect());
        return;
    }
    for pair in chars.windows(2) {
        out.push(pair.iter().flat_map(|c| c.to_lowercase()).collect());
    }
}

/// Convenience wrapper using the default (auto) tokenizer.
pub fn tokenize(text: &str) -> Vec<String> {
    Tokenizer::default().tokenize(text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_mode() {
        let t = Tokenizer::new(TokenizerMode::Whitespace);
        assert_eq!(t.tokenize("theft of property"), ["theft", "of", "property"]);
        assert_eq!(t.tokenize("Theft, of; PROPERTY."), ["theft", "of", "property"]);
        assert!(t.tokenize("").is_empty());
        assert!(t.tokenize("  ,. ").is_empty());
    }

    #[test]
    fn bigram_mode() {
        let t = Tokenizer::new(TokenizerMode::CharBigram);
        assert_eq!(t.tokenize("盗窃罪"), ["盗窃", "窃罪"]);
        assert_eq!(t.tokenize("盗"), ["盗"]);
    }

    #[test]
    fn auto_mode_mixes_scripts() {
        let t = Tokenizer::default();
        assert_eq!(t.tokenize("盗窃罪"), ["盗窃", "窃罪"]);
        assert_eq!(t.tokenize("theft of property"), ["theft", "of", "property"]);
        assert_eq!(t.tokenize("刑法264条 Art"), ["刑法", "264", "条", "art"]);
    }

    #[test]
    fn normalize_key_composes_and_trims() {
        assert_eq!(normalize_key("  e\u{301} "), "\u{e9}");
    }
}
