//! Preloaded artifacts holding fixed aggregate values, used to check the
//! report format. Run `cargo test -p recaudit --test reference_fixtures -- --ignored`
//! to rewrite them.

mod common;

use std::collections::BTreeMap;
use std::path::PathBuf;

use recaudit::analysis::{AggregateScore, AttributeReport, DatasetReport, MetricAggregates};
use recaudit::parser::ParseDiagnostics;
use recaudit::runner::{RunArtifact, RunStats, ARTIFACT_FORMAT};
use recaudit::PragMode;
use sha2::{Digest, Sha256};

fn agg(mean: f64, std: f64) -> AggregateScore {
    AggregateScore { mean, std, n: 5 }
}

fn neutral_row(tag_ratios: BTreeMap<String, AggregateScore>) -> AttributeReport {
    AttributeReport {
        attribute_id: "neutral".into(),
        scores: None,
        excluded_seeds: vec![],
        tag_ratios,
        degraded_share: 0.0,
        seed_scores: vec![],
    }
}

fn report(model: &str, dataset: &str, attributes: Vec<AttributeReport>) -> DatasetReport {
    DatasetReport {
        model_id: model.into(),
        dataset: dataset.into(),
        catalog_hash: hex::encode(Sha256::digest(format!("reference:{dataset}").as_bytes())),
        context: None,
        prag_mode: PragMode::Literal,
        k: 20,
        seeds: vec![0, 1, 2, 3, 4],
        attributes,
        diagnostics: ParseDiagnostics::default(),
    }
}

fn artifact(label: &str, model_id: &str, preloaded: Vec<DatasetReport>) -> RunArtifact {
    let mut a = RunArtifact {
        format_version: ARTIFACT_FORMAT,
        config_digest: hex::encode(Sha256::digest(label.as_bytes())),
        artifact_digest: String::new(),
        model_id: model_id.into(),
        backend_id: "preloaded".into(),
        context: None,
        k: 20,
        seeds: vec![0, 1, 2, 3, 4],
        prag_mode: PragMode::Literal,
        fuzzy_threshold: 0.2,
        analysis_tags: vec![],
        attribute_ids: vec![],
        datasets: vec![],
        preloaded,
        stats: RunStats::default(),
    };
    a.seal();
    a
}

type Row = (&'static str, &'static str, [(f64, f64); 3]);

/// Overall mean ± std per (model, dataset) for IOU, SERP, PRAG.
pub fn model_comparison() -> RunArtifact {
    #[rustfmt::skip]
    let rows: [Row; 6] = [
        ("gemma-3-4b", "college", [(0.55, 0.12), (0.83, 0.03), (0.47, 0.09)]),
        ("llama-3.2-3b", "college", [(0.50, 0.14), (0.80, 0.05), (0.46, 0.12)]),
        ("gemma-3-4b", "music", [(0.27, 0.09), (0.77, 0.02), (0.20, 0.06)]),
        ("llama-3.2-3b", "music", [(0.46, 0.15), (0.76, 0.05), (0.37, 0.14)]),
        ("gemma-3-4b", "movie", [(0.55, 0.09), (0.81, 0.03), (0.46, 0.08)]),
        ("llama-3.2-3b", "movie", [(0.54, 0.11), (0.80, 0.04), (0.50, 0.13)]),
    ];
    let reports = rows
        .iter()
        .map(|(model, dataset, [iou, serp, prag])| {
            let overall = AttributeReport {
                attribute_id: "all-attributes".into(),
                scores: Some(MetricAggregates {
                    iou: agg(iou.0, iou.1),
                    serp: agg(serp.0, serp.1),
                    prag: agg(prag.0, prag.1),
                }),
                excluded_seeds: vec![],
                tag_ratios: BTreeMap::new(),
                degraded_share: 0.0,
                seed_scores: vec![],
            };
            report(model, dataset, vec![neutral_row(BTreeMap::new()), overall])
        })
        .collect();
    artifact("reference-model-comparison", "gemma-3-4b+llama-3.2-3b", reports)
}

pub const ACTION_TAG: &str = "genre:action";

/// Share of action movies in the top 20 per gender attribute.
pub fn action_ratios() -> RunArtifact {
    let ratios = [
        ("neutral", 0.350),
        ("boy", 0.405),
        ("girl", 0.148),
        ("male", 0.320),
        ("female", 0.180),
    ];
    let attributes = ratios
        .iter()
        .map(|&(id, r)| {
            let tags = BTreeMap::from([(
                ACTION_TAG.to_string(),
                AggregateScore {
                    mean: r,
                    std: 0.0,
                    n: 5,
                },
            )]);
            if id == "neutral" {
                neutral_row(tags)
            } else {
                AttributeReport {
                    attribute_id: id.into(),
                    scores: None,
                    excluded_seeds: vec![],
                    tag_ratios: tags,
                    degraded_share: 0.0,
                    seed_scores: vec![],
                }
            }
        })
        .collect();
    artifact(
        "reference-action-ratios",
        "gemma-3-4b",
        vec![report("gemma-3-4b", "movie", attributes)],
    )
}

fn fixture_dir(name: &str) -> PathBuf {
    common::repo_root().join("fixtures/artifacts").join(name)
}

#[test]
fn committed_fixtures_are_current() {
    for (name, built) in [("model-comparison", model_comparison()), ("action-ratios", action_ratios())] {
        let loaded = RunArtifact::load(&fixture_dir(name)).unwrap();
        assert_eq!(loaded, built, "fixtures/artifacts/{name} is stale");
    }
}

#[test]
#[ignore]
fn regenerate() {
    for (name, built) in [("model-comparison", model_comparison()), ("action-ratios", action_ratios())] {
        built.save(&fixture_dir(name)).unwrap();
    }
}
