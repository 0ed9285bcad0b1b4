mod common;

use recaudit::catalog::{normalize_title, normalized_edit_distance, MatchKind, DEFAULT_FUZZY_THRESHOLD};

/// Textbook full-matrix Levenshtein over chars, divided by the longer length.
fn oracle_distance(a: &str, b: &str) -> f64 {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() && b.is_empty() {
        return 0.0;
    }
    let mut d = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for (i, row) in d.iter_mut().enumerate() {
        row[0] = i;
    }
    for (j, cell) in d[0].iter_mut().enumerate() {
        *cell = j;
    }
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            let sub = d[i - 1][j - 1] + usize::from(a[i - 1] != b[j - 1]);
            d[i][j] = sub.min(d[i - 1][j] + 1).min(d[i][j - 1] + 1);
        }
    }
    d[a.len()][b.len()] as f64 / a.len().max(b.len()) as f64
}

#[test]
fn sequel_numeral_matches_fuzzily() {
    let movies = common::fixture_catalog("movie");
    let m = movies.match_item("The Godfather Part 2", DEFAULT_FUZZY_THRESHOLD);
    assert_eq!(m.kind, MatchKind::Fuzzy);
    assert_eq!(m.item_id.as_deref(), Some("the-godfather-part-ii"));
    let expected = oracle_distance("the godfather part 2", "the godfather part ii");
    assert!((m.distance - expected).abs() < 1e-12);
    assert!(m.distance <= 0.25);
}

#[test]
fn invented_title_matches_nothing() {
    let movies = common::fixture_catalog("movie");
    let raw = "A Completely Invented Film 9000";
    let m = movies.match_item(raw, DEFAULT_FUZZY_THRESHOLD);
    assert_eq!(m.kind, MatchKind::None);
    assert!(m.item_id.is_none());
    let closest = movies
        .items()
        .iter()
        .map(|it| oracle_distance(&normalize_title(raw), &normalize_title(&it.title)))
        .fold(f64::INFINITY, f64::min);
    assert!(closest > DEFAULT_FUZZY_THRESHOLD, "{closest}");
}

#[test]
fn exact_titles_match_at_zero() {
    let music = common::fixture_catalog("music");
    let m = music.match_item("hey ya! by outkast", DEFAULT_FUZZY_THRESHOLD);
    assert_eq!(
        (m.kind, m.item_id.as_deref(), m.distance),
        (MatchKind::Exact, Some("hey-ya-by-outkast"), 0.0)
    );
    assert_eq!(music.get("hey-ya-by-outkast").unwrap().title, "Hey Ya! by OutKast");
}

#[test]
fn library_distance_agrees_with_oracle_across_catalogs() {
    for domain in ["movie", "music", "college"] {
        let cat = common::fixture_catalog(domain);
        let titles: Vec<String> = cat.items().iter().map(|i| normalize_title(&i.title)).collect();
        for a in titles.iter().take(12) {
            for b in &titles {
                assert!(
                    (normalized_edit_distance(a, b) - oracle_distance(a, b)).abs() < 1e-12,
                    "{a} / {b}"
                );
            }
        }
    }
}
