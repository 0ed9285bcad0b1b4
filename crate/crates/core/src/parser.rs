//! Turns raw completion text into a catalog-validated ranked list.
//!
//! Off-catalog titles and repeats are dropped rather than failing the parse;
//! every drop is counted in [`ParseDiagnostics`] so it can be reported.

use std::collections::HashSet;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::{Catalog, MatchKind};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostics {
    /// Non-empty lines in the response.
    pub raw_lines: usize,
    /// Candidates matching no catalog item (hallucinations).
    pub unmatched: usize,
    pub duplicates_removed: usize,
    pub fuzzy_matched: usize,
}

impl ParseDiagnostics {
    pub fn accumulate(&mut self, other: &ParseDiagnostics) {
        self.raw_lines += other.raw_lines;
        self.unmatched += other.unmatched;
        self.duplicates_removed += other.duplicates_removed;
        self.fuzzy_matched += other.fuzzy_matched;
    }
}

/// A validated top-k list. An item's rank is its 1-based position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RankedList {
    pub item_ids: Vec<String>,
    pub k_requested: usize,
    pub diagnostics: ParseDiagnostics,
    /// Fewer than `k_requested` items survived parsing.
    pub degraded: bool,
}

impl RankedList {
    /// A clean list, e.g. produced directly by a synthetic model.
    pub fn from_ids(item_ids: Vec<String>, k_requested: usize) -> Self {
        let degraded = item_ids.len() < k_requested;
        Self {
            item_ids,
            k_requested,
            diagnostics: ParseDiagnostics::default(),
            degraded,
        }
    }

    pub fn len(&self) -> usize {
        self.item_ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.item_ids.is_empty()
    }

    pub fn rank_of(&self, id: &str) -> Option<usize> {
        self.item_ids.iter().position(|i| i == id).map(|p| p + 1)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ParseError {
    #[error("no catalog item could be recovered from the response ({diagnostics:?})")]
    EmptyParse { diagnostics: ParseDiagnostics },
}

fn marker_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^\s*(\d+[\.\)]|[-*•])\s+").expect("valid marker regex"))
}

fn year_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\s*\(\d{4}\)\s*$").expect("valid year regex"))
}

const QUOTE_PAIRS: &[(char, char)] = &[('"', '"'), ('\'', '\''), ('“', '”'), ('‘', '’'), ('`', '`'), ('«', '»')];

fn clean_candidate(raw: &str) -> String {
    let mut s = raw.trim().to_string();
    loop {
        let before = s.clone();
        s = year_re().replace(&s, "").into_owned();
        s = s
            .trim_matches(|c: char| c == '*' || c == '_' || c.is_whitespace())
            .to_string();
        for &(open, close) in QUOTE_PAIRS {
            if s.chars().count() >= 2 && s.starts_with(open) && s.ends_with(close) {
                s = s[open.len_utf8()..s.len() - close.len_utf8()].trim().to_string();
            }
        }
        if s == before {
            return s;
        }
    }
}

/// Pulls candidate titles out of a completion, in order.
///
/// Lines with a numbered or bulleted marker are candidates. If no line in the
/// whole text carries a marker, every non-empty line is a candidate instead.
pub fn extract_candidates(text: &str) -> Vec<String> {
    let marked: Vec<&str> = text
        .lines()
        .filter_map(|line| marker_re().find(line).map(|m| &line[m.end()..]))
        .collect();
    let raw: Vec<&str> = if marked.is_empty() {
        text.lines().filter(|l| !l.trim().is_empty()).collect()
    } else {
        marked
    };
    raw.into_iter().map(clean_candidate).filter(|c| !c.is_empty()).collect()
}

/// Matches candidates against the catalog, keeping the first `k` distinct hits.
pub fn parse_response(text: &str, catalog: &Catalog, k: usize, fuzzy_threshold: f64) -> Result<RankedList, ParseError> {
    let mut diagnostics = ParseDiagnostics {
        raw_lines: text.lines().filter(|l| !l.trim().is_empty()).count(),
        ..Default::default()
    };
    let mut seen = HashSet::new();
    let mut item_ids = Vec::with_capacity(k);
    for candidate in extract_candidates(text) {
        if item_ids.len() == k {
            break;
        }
        let m = catalog.match_item(&candidate, fuzzy_threshold);
        let Some(id) = m.item_id else {
            diagnostics.unmatched += 1;
            continue;
        };
        if !seen.insert(id.clone()) {
            diagnostics.duplicates_removed += 1;
            continue;
        }
        if m.kind == MatchKind::Fuzzy {
            diagnostics.fuzzy_matched += 1;
        }
        item_ids.push(id);
    }
    if item_ids.is_empty() {
        return Err(ParseError::EmptyParse { diagnostics });
    }
    Ok(RankedList {
        degraded: item_ids.len() < k,
        item_ids,
        k_requested: k,
        diagnostics,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;

    fn catalog() -> Catalog {
        let titles = ["Inception", "The Matrix", "Heat", "Up", "Amélie", "Titanic", "Alien"];
        Catalog::from_items(
            "movie",
            titles
                .iter()
                .map(|t| Item::new(crate::catalog::normalize_title(t).replace(' ', "-"), *t))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn extracts_numbered_lines_and_strips_bold() {
        assert_eq!(
            extract_candidates("1. Inception\n2. **The Matrix**\n"),
            ["Inception", "The Matrix"]
        );
    }

    #[test]
    fn skips_preamble_and_strips_year() {
        assert_eq!(extract_candidates("Here you go:\n1. Heat (1995)\n"), ["Heat"]);
    }

    #[test]
    fn falls_back_to_plain_lines() {
        assert_eq!(extract_candidates("Inception\nThe Matrix"), ["Inception", "The Matrix"]);
    }

    #[test]
    fn handles_bullets_parens_and_quotes() {
        let text = "- \"Up\"\n* 'Alien'\n• “Titanic”\n3) __Heat__";
        assert_eq!(extract_candidates(text), ["Up", "Alien", "Titanic", "Heat"]);
    }

    #[test]
    fn year_stripping_only_applies_to_trailing_four_digits() {
        assert_eq!(extract_candidates("1. Blade Runner 2049"), ["Blade Runner 2049"]);
        assert_eq!(extract_candidates("1. Apollo 13 (film)"), ["Apollo 13 (film)"]);
    }

    #[test]
    fn repetition_artifacts_are_deduplicated() {
        let text = "1. Heat\n2. Heat\n3. Heat\n4. Heat\n5. Heat\n6. Up\n7. Alien\n8. Titanic\n9. Inception";
        let list = parse_response(text, &catalog(), 5, 0.2).unwrap();
        assert_eq!(list.item_ids, ["heat", "up", "alien", "titanic", "inception"]);
        assert_eq!(list.diagnostics.duplicates_removed, 4);
        assert!(!list.degraded);
    }

    #[test]
    fn hallucinations_degrade_the_list() {
        let text = "1. Heat\n2. Made Up Movie\n3. Up\n4. Another Invention Entirely\n5. Alien";
        let list = parse_response(text, &catalog(), 5, 0.2).unwrap();
        assert_eq!(list.item_ids, ["heat", "up", "alien"]);
        assert_eq!(list.diagnostics.unmatched, 2);
        assert!(list.degraded);
    }

    #[test]
    fn truncates_at_k() {
        let list = parse_response("1. Heat\n2. Up\n3. Alien", &catalog(), 2, 0.2).unwrap();
        assert_eq!(list.item_ids, ["heat", "up"]);
        assert_eq!(list.rank_of("up"), Some(2));
        assert_eq!(list.rank_of("alien"), None);
    }

    #[test]
    fn counts_fuzzy_matches() {
        let list = parse_response("1. The Matrixx\n2. Amelie", &catalog(), 2, 0.2).unwrap();
        assert_eq!(list.item_ids, ["the-matrix", "amelie"]);
        assert_eq!(list.diagnostics.fuzzy_matched, 1);
    }

    #[test]
    fn empty_parse_is_an_error() {
        let err = parse_response("Sorry, I cannot help with that.", &catalog(), 5, 0.2).unwrap_err();
        let ParseError::EmptyParse { diagnostics } = err;
        assert_eq!(diagnostics.raw_lines, 1);
        assert_eq!(diagnostics.unmatched, 1);
        assert!(parse_response("", &catalog(), 5, 0.2).is_err());
    }
}
