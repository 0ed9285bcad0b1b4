#![allow(dead_code)]

use std::path::PathBuf;
use std::sync::Arc;

use recaudit::catalog::{load_catalog, Catalog, Item};

pub fn repo_root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

pub fn fixture_catalog(domain: &str) -> Arc<Catalog> {
    let path = repo_root().join(format!("fixtures/catalogs/{domain}.csv"));
    Arc::new(load_catalog(path, domain).expect("fixture catalog loads"))
}

/// Catalog of `n` items `i0..i{n-1}`; every third item carries `genre:a`.
pub fn toy_catalog(n: usize) -> Catalog {
    let items = (0..n)
        .map(|i| {
            let item = Item::new(format!("i{i}"), format!("Title {i}"));
            if i % 3 == 0 {
                item.with_tags(["genre:a"])
            } else {
                item.with_tags(["genre:b"])
            }
        })
        .collect();
    Catalog::from_items("toy", items).unwrap()
}

pub fn ids(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Minimal TOML for a synthetic run writing into `dir`.
pub fn synthetic_config_toml(dir: &std::path::Path, extra: &str, backend_extra: &str) -> String {
    format!(
        r#"
cache_dir = "{cache}"
output_dir = "{out}"
{extra}

[[catalogs]]
path = "{catalog}"
domain = "movie"

[attributes]
categories = ["gender"]

[backend]
kind = "synthetic"
{backend_extra}
"#,
        cache = dir.join("cache").display(),
        out = dir.join("runs").display(),
        catalog = repo_root().join("fixtures/catalogs/movie.csv").display(),
    )
}
