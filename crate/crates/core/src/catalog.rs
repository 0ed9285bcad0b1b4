//! Recommendation catalogs: the fixed universe of items the model re-ranks.
//!
//! A catalog is loaded from a CSV file with the header `id,title,tags`, where
//! `tags` is a `;`-separated list of `namespace:value` labels. Item order is
//! the file order and never changes after load, so two catalogs with the same
//! [`Catalog::content_hash`] always render identical prompts.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fs::File;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;
use unicode_normalization::char::is_combining_mark;
use unicode_normalization::UnicodeNormalization;

/// Default fuzzy-match threshold on normalized edit distance.
pub const DEFAULT_FUZZY_THRESHOLD: f64 = 0.2;

#[derive(Debug, Error)]
pub enum CatalogError {
    #[error("catalog file not found: {0}")]
    MissingFile(PathBuf),
    #[error("malformed catalog row at line {line}: {reason}")]
    MalformedRow { line: u64, reason: String },
    #[error("duplicate item id `{0}`")]
    DuplicateId(String),
    #[error("titles of items {0:?} are identical after normalization")]
    DuplicateNormalizedTitle(Vec<String>),
    #[error("catalog contains no items")]
    EmptyCatalog,
    #[error("failed to read catalog: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Item {
    pub id: String,
    /// Exact string shown to the model.
    pub title: String,
    #[serde(default)]
    pub tags: BTreeSet<String>,
}

impl Item {
    pub fn new(id: impl Into<String>, title: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            title: title.into(),
            tags: BTreeSet::new(),
        }
    }

    pub fn with_tags<I, S>(mut self, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.tags.extend(tags.into_iter().map(Into::into));
        self
    }

    pub fn has_tag(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }
}

/// Hex-encoded SHA-256 of a catalog's canonical item sequence.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct CatalogHash(pub String);

impl fmt::Display for CatalogHash {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

#[derive(Debug, Clone)]
pub struct Catalog {
    domain: String,
    items: Vec<Item>,
    normalized: Vec<String>,
    by_normalized: HashMap<String, usize>,
    by_id: HashMap<String, usize>,
    content_hash: CatalogHash,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchKind {
    Exact,
    Fuzzy,
    None,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchResult {
    pub kind: MatchKind,
    pub item_id: Option<String>,
    /// Normalized edit distance in `[0, 1]`; zero for exact matches.
    pub distance: f64,
}

impl MatchResult {
    fn none(distance: f64) -> Self {
        Self {
            kind: MatchKind::None,
            item_id: None,
            distance,
        }
    }
}

#[derive(Debug, Deserialize)]
struct CatalogRow {
    id: String,
    title: String,
    #[serde(default)]
    tags: String,
}

impl Catalog {
    /// Builds a catalog from in-memory items, enforcing the same invariants as
    /// [`load_catalog`].
    pub fn from_items(domain: impl Into<String>, items: Vec<Item>) -> Result<Self, CatalogError> {
        if items.is_empty() {
            return Err(CatalogError::EmptyCatalog);
        }
        let mut by_id = HashMap::with_capacity(items.len());
        let mut by_normalized: HashMap<String, usize> = HashMap::with_capacity(items.len());
        let mut normalized = Vec::with_capacity(items.len());
        for (idx, item) in items.iter().enumerate() {
            if by_id.insert(item.id.clone(), idx).is_some() {
                return Err(CatalogError::DuplicateId(item.id.clone()));
            }
            let norm = normalize_title(&item.title);
            if let Some(&prev) = by_normalized.get(&norm) {
                return Err(CatalogError::DuplicateNormalizedTitle(vec![
                    items[prev].id.clone(),
                    item.id.clone(),
                ]));
            }
            by_normalized.insert(norm.clone(), idx);
            normalized.push(norm);
        }
        let content_hash = hash_items(&items);
        Ok(Self {
            domain: domain.into(),
            items,
            normalized,
            by_normalized,
            by_id,
            content_hash,
        })
    }

    pub fn domain(&self) -> &str {
        &self.domain
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn content_hash(&self) -> &CatalogHash {
        &self.content_hash
    }

    pub fn get(&self, id: &str) -> Option<&Item> {
        self.by_id.get(id).map(|&i| &self.items[i])
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    /// Resolves a raw model-produced title against the catalog.
    ///
    /// An exact match on the normalized title always wins. Otherwise the item
    /// with the smallest normalized Levenshtein distance is returned as a fuzzy
    /// match if that distance is within `fuzzy_threshold`; ties go to the item
    /// that appears first in the catalog.
    pub fn match_item(&self, raw: &str, fuzzy_threshold: f64) -> MatchResult {
        let query = normalize_title(raw);
        if let Some(&idx) = self.by_normalized.get(&query) {
            return MatchResult {
                kind: MatchKind::Exact,
                item_id: Some(self.items[idx].id.clone()),
                distance: 0.0,
            };
        }
        let mut best: Option<(usize, f64)> = None;
        for (idx, candidate) in self.normalized.iter().enumerate() {
            let d = normalized_edit_distance(&query, candidate);
            // strict comparison keeps the lowest index on ties
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((idx, d));
            }
        }
        match best {
            Some((idx, d)) if d > 0.0 && d <= fuzzy_threshold => MatchResult {
                kind: MatchKind::Fuzzy,
                item_id: Some(self.items[idx].id.clone()),
                distance: d,
            },
            Some((_, d)) => MatchResult::none(d),
            None => MatchResult::none(1.0),
        }
    }
}

/// Loads and validates a catalog CSV.
pub fn load_catalog(path: impl AsRef<Path>, domain: &str) -> Result<Catalog, CatalogError> {
    let path = path.as_ref();
    if !path.is_file() {
        return Err(CatalogError::MissingFile(path.to_path_buf()));
    }
    let file = File::open(path)?;
    read_catalog(file, domain)
}

/// Parses catalog CSV from any reader.
pub fn read_catalog<R: std::io::Read>(reader: R, domain: &str) -> Result<Catalog, CatalogError> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::None)
        .from_reader(reader);

    let headers = rdr.headers().map_err(|e| malformed(1, e.to_string()))?.clone();
    let expected = ["id", "title", "tags"];
    if headers.len() != expected.len() || headers.iter().zip(expected).any(|(h, e)| h.trim() != e) {
        return Err(malformed(
            1,
            format!(
                "expected header `id,title,tags`, got `{}`",
                headers.iter().collect::<Vec<_>>().join(",")
            ),
        ));
    }

    let mut items = Vec::new();
    for result in rdr.deserialize::<CatalogRow>() {
        let row = result.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line());
            malformed(line, e.to_string())
        })?;
        // header is line 1, so the n-th record sits on line n + 1
        let line = items.len() as u64 + 2;
        let id = row.id.trim();
        if id.is_empty() {
            return Err(malformed(line, "empty id".into()));
        }
        if row.title.trim().is_empty() {
            return Err(malformed(line, "empty title".into()));
        }
        let mut tags = BTreeSet::new();
        for tag in row.tags.split(';').map(str::trim).filter(|t| !t.is_empty()) {
            match tag.split_once(':') {
                Some((ns, value)) if !ns.is_empty() && !value.is_empty() => {
                    tags.insert(tag.to_string());
                }
                _ => {
                    return Err(malformed(
                        line,
                        format!("tag `{tag}` is not of the form namespace:value"),
                    ))
                }
            }
        }
        items.push(Item {
            id: id.to_string(),
            title: row.title.trim().to_string(),
            tags,
        });
    }
    Catalog::from_items(domain, items)
}

fn malformed(line: u64, reason: String) -> CatalogError {
    CatalogError::MalformedRow { line, reason }
}

fn hash_items(items: &[Item]) -> CatalogHash {
    let mut hasher = Sha256::new();
    for item in items {
        hasher.update(item.id.as_bytes());
        hasher.update([0x1f]);
        hasher.update(item.title.as_bytes());
        hasher.update([0x1f]);
        for (i, tag) in item.tags.iter().enumerate() {
            if i > 0 {
                hasher.update(b";");
            }
            hasher.update(tag.as_bytes());
        }
        hasher.update([0x1e]);
    }
    CatalogHash(hex::encode(hasher.finalize()))
}

/// Canonical matching form of a title.
///
/// Applies, in order: compatibility decomposition with diacritics removed,
/// lowercasing, removal of everything that is not a letter, digit or
/// whitespace, whitespace collapse and trimming.
pub fn normalize_title(raw: &str) -> String {
    let stripped: String = raw.nfkd().filter(|c| !is_combining_mark(*c)).collect();
    let lowered = stripped.to_lowercase();
    let mut out = String::with_capacity(lowered.len());
    let mut pending_space = false;
    for c in lowered.chars() {
        if c.is_whitespace() {
            pending_space = true;
        } else if c.is_alphanumeric() {
            if pending_space && !out.is_empty() {
                out.push(' ');
            }
            pending_space = false;
            out.push(c);
        }
    }
    out
}

/// Levenshtein distance over chars divided by the longer string's char count.
pub fn normalized_edit_distance(a: &str, b: &str) -> f64 {
    let longest = a.chars().count().max(b.chars().count());
    if longest == 0 {
        return 0.0;
    }
    strsim::levenshtein(a, b) as f64 / longest as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_catalog(body: &str) -> Result<Catalog, CatalogError> {
        read_catalog(body.as_bytes(), "movie")
    }

    #[test]
    fn loads_rows_in_file_order() {
        let cat = csv_catalog(
            "id,title,tags\ninception,\"Inception\",\"genre:action;region:western\"\namelie,\"Amélie\",\"region:western\"\n",
        )
        .unwrap();
        assert_eq!(cat.len(), 2);
        let ids: Vec<_> = cat.items().iter().map(|i| i.id.as_str()).collect();
        assert_eq!(ids, ["inception", "amelie"]);
        assert!(cat.get("inception").unwrap().has_tag("genre:action"));
        assert_eq!(cat.get("amelie").unwrap().title, "Amélie");
    }

    #[test]
    fn empty_tags_column_is_allowed() {
        let cat = csv_catalog("id,title,tags\nheat,Heat,\n").unwrap();
        assert!(cat.items()[0].tags.is_empty());
    }

    #[test]
    fn duplicate_normalized_titles_are_rejected() {
        let err = csv_catalog("id,title,tags\nm1,The Matrix,\nm2,\"the  matrix!\",\n").unwrap_err();
        match err {
            CatalogError::DuplicateNormalizedTitle(ids) => assert_eq!(ids, ["m1", "m2"]),
            other => panic!("unexpected error {other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = csv_catalog("id,title,tags\nx,A,\nx,B,\n").unwrap_err();
        assert!(matches!(err, CatalogError::DuplicateId(id) if id == "x"));
    }

    #[test]
    fn empty_catalog_is_an_error() {
        assert!(matches!(
            csv_catalog("id,title,tags\n"),
            Err(CatalogError::EmptyCatalog)
        ));
    }

    #[test]
    fn malformed_rows_report_line_numbers() {
        let err = csv_catalog("id,title,tags\na,A,\nb,,\n").unwrap_err();
        assert!(matches!(err, CatalogError::MalformedRow { line: 3, .. }), "{err:?}");
        let err = csv_catalog("id,title,tags\na,A,notatag\n").unwrap_err();
        assert!(matches!(err, CatalogError::MalformedRow { line: 2, .. }), "{err:?}");
        let err = csv_catalog("name,title\na,A\n").unwrap_err();
        assert!(matches!(err, CatalogError::MalformedRow { line: 1, .. }), "{err:?}");
    }

    #[test]
    fn missing_file() {
        let err = load_catalog("/definitely/not/here.csv", "movie").unwrap_err();
        assert!(matches!(err, CatalogError::MissingFile(_)));
    }

    #[test]
    fn music_titles_are_kept_verbatim() {
        let cat = read_catalog(
            "id,title,tags\nhey-ya,Hey Ya! by OutKast,genre:hiphop\n".as_bytes(),
            "music",
        )
        .unwrap();
        assert_eq!(cat.items()[0].title, "Hey Ya! by OutKast");
        assert_eq!(cat.domain(), "music");
    }

    #[test]
    fn normalization_examples() {
        assert_eq!(normalize_title("The Godfather: Part II"), "the godfather part ii");
        assert_eq!(normalize_title("Amélie"), "amelie");
        assert_eq!(normalize_title("  Hey Ya!   by OutKast "), "hey ya by outkast");
        assert_eq!(normalize_title(""), "");
        assert_eq!(normalize_title("!!!"), "");
    }

    #[test]
    fn exact_match_has_zero_distance() {
        let cat = csv_catalog("id,title,tags\ninception,Inception,\n").unwrap();
        let m = cat.match_item("Inception", 0.2);
        assert_eq!(m.kind, MatchKind::Exact);
        assert_eq!(m.item_id.as_deref(), Some("inception"));
        assert_eq!(m.distance, 0.0);
    }

    #[test]
    fn fuzzy_ties_go_to_lower_index() {
        // "abcx" is one substitution away from both titles
        let cat = csv_catalog("id,title,tags\nfirst,abcd,\nsecond,abce,\n").unwrap();
        let m = cat.match_item("abcx", 0.5);
        assert_eq!(m.kind, MatchKind::Fuzzy);
        assert_eq!(m.item_id.as_deref(), Some("first"));
        assert!((m.distance - 0.25).abs() < 1e-12);
    }

    #[test]
    fn zero_threshold_disables_fuzzy() {
        let cat = csv_catalog("id,title,tags\na,Heat,\n").unwrap();
        assert_eq!(cat.match_item("Heap", 0.0).kind, MatchKind::None);
    }

    #[test]
    fn hash_changes_with_single_character_edit() {
        let a = csv_catalog("id,title,tags\na,Heat,\n").unwrap();
        let b = csv_catalog("id,title,tags\na,Heat,\n").unwrap();
        let c = csv_catalog("id,title,tags\na,Heal,\n").unwrap();
        assert_eq!(a.content_hash(), b.content_hash());
        assert_ne!(a.content_hash(), c.content_hash());
    }
}
