use std::path::PathBuf;
use std::sync::Arc;

use criterion::{black_box, criterion_group, criterion_main, BatchSize, Criterion};
use recaudit::backends::{synth_complete_text, synth_rank, SyntheticBiasModel};
use recaudit::catalog::{load_catalog, Catalog, DEFAULT_FUZZY_THRESHOLD};
use recaudit::config::validate_config;
use recaudit::metrics::{b_iou, b_prag, b_serp, PragMode};
use recaudit::parse_response;
use recaudit::promptgen::{builtin_attributes, UserSpec};
use recaudit::runner::{build_backend, execute, load_catalogs};

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn movies() -> Catalog {
    load_catalog(root().join("fixtures/catalogs/movie.csv"), "movie").unwrap()
}

fn boy() -> UserSpec {
    UserSpec::with_attribute(builtin_attributes(Some("gender")).unwrap().remove(0))
}

fn metrics(c: &mut Criterion) {
    let catalog = movies();
    let model = SyntheticBiasModel::new(1.0).with_affinity("boy", ["genre:action"]);
    let a = synth_rank(&model, &boy(), &catalog, 20, 0).unwrap();
    let n = synth_rank(&model, &UserSpec::neutral(), &catalog, 20, 0).unwrap();
    c.bench_function("metrics/all_three_k20", |b| {
        b.iter(|| {
            (
                b_iou(black_box(&a), black_box(&n)).unwrap(),
                b_serp(&a, &n, 20).unwrap(),
                b_prag(&a, &n, 20, PragMode::Corrected).unwrap(),
            )
        })
    });
}

fn parsing(c: &mut Criterion) {
    let catalog = movies();
    let model = SyntheticBiasModel::new(0.5);
    let text = format!(
        "Here are some picks:\n{}\nEnjoy!",
        synth_complete_text(&model, &UserSpec::neutral(), &catalog, 20, 3).unwrap()
    );
    c.bench_function("parser/twenty_lines", |b| {
        b.iter(|| parse_response(black_box(&text), &catalog, 20, DEFAULT_FUZZY_THRESHOLD).unwrap())
    });
}

fn sampling(c: &mut Criterion) {
    let catalog = movies();
    let model = SyntheticBiasModel::new(1.5).with_affinity("boy", ["genre:action"]);
    let user = boy();
    c.bench_function("synthetic/rank_k20", |b| {
        b.iter(|| synth_rank(&model, &user, &catalog, 20, black_box(11)).unwrap())
    });
}

fn end_to_end(c: &mut Criterion) {
    let dir = std::env::temp_dir().join(format!("recaudit-bench-{}", std::process::id()));
    let doc = format!(
        r#"seeds = [0, 1, 2, 3, 4]
cache_dir = "cache"
output_dir = "runs"
max_concurrency = 4

[[catalogs]]
path = "{}"
domain = "movie"

[attributes]
categories = ["gender", "religion"]

[backend]
kind = "synthetic"
bias_strength = 1.0
affinity = {{ boy = ["genre:action"] }}
"#,
        root().join("fixtures/catalogs/movie.csv").display()
    );
    let config = validate_config(&doc, &dir).unwrap();
    let catalogs: Vec<Arc<Catalog>> = load_catalogs(&config).unwrap();
    let backend = build_backend(&config, &catalogs).unwrap();

    let mut group = c.benchmark_group("execute");
    group.sample_size(20);
    group.bench_function("cold_cache", |b| {
        b.iter_batched(
            || {
                let _ = std::fs::remove_dir_all(&config.cache_dir);
            },
            |_| execute(&config, &catalogs, backend.as_ref()).unwrap(),
            BatchSize::PerIteration,
        )
    });
    execute(&config, &catalogs, backend.as_ref()).unwrap();
    group.bench_function("warm_cache", |b| {
        b.iter(|| execute(&config, &catalogs, backend.as_ref()).unwrap())
    });
    group.finish();
    let _ = std::fs::remove_dir_all(&dir);
}

criterion_group!(benches, metrics, parsing, sampling, end_to_end);
criterion_main!(benches);
