mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use recaudit::analysis::MetricKind;
use recaudit::config::validate_config;
use recaudit::report::{load_summary, validate_summary, CONTEXT_RADAR_SVG, SUMMARY_JSON};
use recaudit::runner::{self, RunArtifact};

const SEEDS: &str = "seeds = [0, 1, 2, 3, 4, 5, 6, 7]\nk = 10";

fn run(dir: &Path, extra: &str, backend: &str) -> RunArtifact {
    let doc = common::synthetic_config_toml(dir, extra, backend);
    runner::run(&validate_config(&doc, dir).unwrap()).unwrap().artifact
}

#[test]
fn summary_validates_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(
        dir.path(),
        &format!("{SEEDS}\nanalysis_tags = [\"genre:action\"]"),
        "bias_strength = 1.0\naffinity = { boy = [\"genre:action\"] }",
    );
    let out = dir.path().join("rep");
    runner::report_artifacts(&[a], &out).unwrap();
    let text = fs::read_to_string(out.join(SUMMARY_JSON)).unwrap();
    validate_summary(&serde_json::from_str(&text).unwrap()).unwrap();
    let summary = load_summary(&out.join(SUMMARY_JSON)).unwrap();
    assert_eq!(summary.to_canonical_json().unwrap(), text);

    let mut broken: serde_json::Value = serde_json::from_str(&text).unwrap();
    broken.as_object_mut().unwrap().remove("run_metadata");
    assert!(validate_summary(&broken).is_err());
}

#[test]
fn every_number_traces_back_to_an_artifact() {
    let dir = tempfile::tempdir().unwrap();
    let movie = run(
        dir.path(),
        SEEDS,
        "bias_strength = 0.5\naffinity = { girl = [\"genre:romance\"] }",
    );
    let out = dir.path().join("rep");
    runner::report_artifacts(std::slice::from_ref(&movie), &out).unwrap();
    let summary = load_summary(&out.join(SUMMARY_JSON)).unwrap();
    let refs = &summary.run_metadata.artifacts;
    assert_eq!(refs.len(), 1);
    assert_eq!(refs[0].artifact_digest, movie.artifact_digest);
    assert_eq!(refs[0].config_digest, movie.config_digest);
    for d in &summary.datasets {
        assert!(refs.iter().any(|r| r.model_id == d.model_id));
        assert_eq!(summary.run_metadata.catalog_hashes[&d.dataset], d.catalog_hash);
        assert_eq!(d.catalog_hash, movie.datasets[0].catalog_hash);
        for attr in d.attributes.iter().filter(|a| !a.is_neutral()) {
            for s in &attr.seed_scores {
                let rec = movie.datasets[0]
                    .records
                    .iter()
                    .find(|r| r.attribute_id == attr.attribute_id && r.seed == s.seed)
                    .unwrap();
                assert_eq!(rec.scores.as_ref().unwrap(), &s.scores);
            }
        }
    }
}

#[test]
fn two_model_comparison_matches_hand_averages() {
    let dir = tempfile::tempdir().unwrap();
    let mild = run(
        &dir.path().join("a"),
        &format!("{SEEDS}\nmodel_id = \"mild\""),
        "bias_strength = 0.3\naffinity = { boy = [\"genre:action\"], girl = [\"genre:romance\"] }",
    );
    let strong = run(
        &dir.path().join("b"),
        &format!("{SEEDS}\nmodel_id = \"strong\""),
        "bias_strength = 2.5\naffinity = { boy = [\"genre:action\"], girl = [\"genre:romance\"], male = [\"genre:crime\"] }",
    );
    let out = dir.path().join("rep");
    runner::report_artifacts(&[mild.clone(), strong.clone()], &out).unwrap();
    let summary = load_summary(&out.join(SUMMARY_JSON)).unwrap();

    let hand = |a: &RunArtifact| {
        let mut per_attr: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
        for r in &a.datasets[0].records {
            if let Some(s) = &r.scores {
                per_attr.entry(&r.attribute_id).or_default().push(s.b_iou);
            }
        }
        let means: Vec<f64> = per_attr
            .values()
            .map(|v| v.iter().sum::<f64>() / v.len() as f64)
            .collect();
        means.iter().sum::<f64>() / means.len() as f64
    };
    let rows: Vec<_> = summary
        .model_comparison
        .iter()
        .filter(|r| r.metric == MetricKind::Iou)
        .collect();
    assert_eq!(rows.len(), 2);
    for (row, artifact) in rows.iter().zip([&mild, &strong]) {
        assert_eq!(row.model_id, artifact.model_id);
        assert!((row.score.mean - hand(artifact)).abs() < 1e-9, "{}", row.model_id);
    }
    assert!(rows[0].best && !rows[1].best);
    let csv = fs::read_to_string(out.join("model_comparison.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + summary.model_comparison.len());
}

#[test]
fn context_runs_produce_effects_and_radar() {
    let dir = tempfile::tempdir().unwrap();
    let backend = "bias_strength = 1.0\naffinity = { boy = [\"genre:action\"] }\n\
                   context_strength = 3.0\ncontext_affinity = { \"who likes dramas\" = [\"genre:drama\"] }";
    let plain = run(&dir.path().join("a"), SEEDS, backend);
    let ctx = run(
        &dir.path().join("b"),
        &format!("{SEEDS}\ncontext = \"who likes dramas\""),
        backend,
    );
    let out = dir.path().join("rep");
    let files = runner::report_artifacts(&[plain, ctx], &out).unwrap();
    assert!(files.iter().any(|f| f.ends_with(CONTEXT_RADAR_SVG)));
    let summary = load_summary(&out.join(SUMMARY_JSON)).unwrap();
    assert!(!summary.context_effects.is_empty());
    let c = &summary.context_effects[0];
    assert_eq!(c.context, "who likes dramas");
    assert_eq!(c.effects.len(), 4);
    for e in &c.effects {
        assert!((e.delta - (e.with_context.mean - e.without_context.mean)).abs() < 1e-12);
    }
}

#[test]
fn reporting_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let a = run(dir.path(), SEEDS, "");
    let (x, y) = (dir.path().join("x"), dir.path().join("y"));
    let fx = runner::report_artifacts(std::slice::from_ref(&a), &x).unwrap();
    runner::report_artifacts(&[a], &y).unwrap();
    for f in fx {
        let name = f.file_name().unwrap();
        assert_eq!(fs::read(&f).unwrap(), fs::read(y.join(name)).unwrap(), "{name:?}");
    }
}
