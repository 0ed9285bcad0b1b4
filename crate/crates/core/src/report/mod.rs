//! Report bundle: CSV tables, SVG plots and a schema-checked JSON summary.
//!
//! Every file is rendered fully in memory first and then written atomically.
//! Floats in tables are printed with four decimals.

pub mod charts;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{
    context_effect, model_comparison, AnalysisError, ComparisonRow, ContextEffect, DatasetReport, MetricKind,
};
use crate::fsutil::write_atomic;
use crate::metrics::PragMode;
use crate::parser::ParseDiagnostics;
use charts::{Bar, BarGroup, RadarSeries};

pub const SUMMARY_SCHEMA: &str = include_str!("../../../../schema/summary.schema.json");
pub const SCHEMA_VERSION: u32 = 1;

pub const DIVERGENCE_CSV: &str = "divergence_by_attribute.csv";
pub const COMPARISON_CSV: &str = "model_comparison.csv";
pub const TAG_RATIOS_CSV: &str = "tag_ratios.csv";
pub const TAG_RATIO_SVG: &str = "tag_ratio_bar.svg";
pub const CONTEXT_RADAR_SVG: &str = "context_radar.svg";
pub const DIVERGENCE_SVG: &str = "divergence_bar.svg";
pub const SUMMARY_JSON: &str = "summary.json";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("nothing to report: no scored attributes or tag ratios")]
    EmptyReport,
    #[error("failed to write {path}: {source}")]
    IoFailure {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("summary does not match schema: {}", .0.join("; "))]
    SchemaViolation(Vec<String>),
    #[error("radar plot supports at most {max} axes, got {got}", max = charts::MAX_RADAR_AXES)]
    TooManyAxes { got: usize },
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error("invalid summary JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::IoFailure {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArtifactRef {
    pub model_id: String,
    pub config_digest: String,
    pub artifact_digest: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub artifacts: Vec<ArtifactRef>,
    /// dataset → catalog content hash
    pub catalog_hashes: BTreeMap<String, String>,
    pub prag_modes: Vec<PragMode>,
    pub std_estimator: String,
    pub float_decimals: u8,
}

impl RunMetadata {
    pub fn new(artifacts: Vec<ArtifactRef>, reports: &[DatasetReport]) -> Self {
        let catalog_hashes = reports
            .iter()
            .map(|r| (r.dataset.clone(), r.catalog_hash.clone()))
            .collect();
        let modes: BTreeSet<&str> = reports.iter().map(|r| r.prag_mode.as_str()).collect();
        Self {
            artifacts,
            catalog_hashes,
            prag_modes: modes.into_iter().map(|m| m.parse().expect("known mode")).collect(),
            std_estimator: "sample (n-1)".to_string(),
            float_decimals: 4,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextComparison {
    pub model_id: String,
    pub dataset: String,
    pub context: String,
    pub metric: MetricKind,
    pub effects: Vec<ContextEffect>,
}

/// The machine-readable summary document.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub schema_version: u32,
    pub run_metadata: RunMetadata,
    pub datasets: Vec<DatasetReport>,
    pub model_comparison: Vec<ComparisonRow>,
    pub context_effects: Vec<ContextComparison>,
    pub diagnostics_total: ParseDiagnostics,
}

impl Summary {
    /// Canonical serialization: pretty-printed, fields in declaration order,
    /// trailing newline.
    pub fn to_canonical_json(&self) -> Result<String, ReportError> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }
}

#[derive(Debug, Clone, Default)]
pub struct ReportInput {
    pub artifacts: Vec<ArtifactRef>,
    pub reports: Vec<DatasetReport>,
    /// Tag shown in the ratio bar chart; defaults to the first tag found.
    pub plot_tag: Option<String>,
}

#[derive(Debug, Clone)]
pub struct ReportBundle {
    pub summary: Summary,
    pub tables: BTreeMap<&'static str, String>,
    pub plots: BTreeMap<&'static str, String>,
}

fn condition_label(r: &DatasetReport) -> String {
    match &r.context {
        Some(ctx) => format!("{} [{}]", r.dataset, ctx),
        None => r.dataset.clone(),
    }
}

fn f4(x: f64) -> String {
    format!("{x:.4}")
}

/// Reports without a context clause when any exist, all reports otherwise.
fn baseline_reports(reports: &[DatasetReport]) -> Vec<DatasetReport> {
    let plain: Vec<DatasetReport> = reports.iter().filter(|r| r.context.is_none()).cloned().collect();
    if plain.is_empty() {
        reports.to_vec()
    } else {
        plain
    }
}

fn context_comparisons(reports: &[DatasetReport]) -> Result<Vec<ContextComparison>, ReportError> {
    let mut out = Vec::new();
    for with in reports.iter().filter(|r| r.context.is_some()) {
        let Some(without) = reports.iter().find(|r| {
            r.context.is_none()
                && r.model_id == with.model_id
                && r.dataset == with.dataset
                && r.catalog_hash == with.catalog_hash
        }) else {
            continue;
        };
        for metric in MetricKind::ALL {
            out.push(ContextComparison {
                model_id: with.model_id.clone(),
                dataset: with.dataset.clone(),
                context: with.context.clone().unwrap_or_default(),
                metric,
                effects: context_effect(without, with, metric)?,
            });
        }
    }
    Ok(out)
}

fn csv_string(header: &[&str], rows: Vec<Vec<String>>) -> String {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for row in rows {
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 csv")
}

fn divergence_table(reports: &[DatasetReport]) -> String {
    let mut rows = Vec::new();
    for r in reports {
        for (attr, scores) in r.scored_attributes() {
            for metric in MetricKind::ALL {
                let s = scores.get(metric);
                rows.push(vec![
                    r.model_id.clone(),
                    condition_label(r),
                    attr.attribute_id.clone(),
                    metric.to_string(),
                    f4(s.mean),
                    f4(s.std),
                    s.n.to_string(),
                    r.prag_mode.to_string(),
                    f4(attr.degraded_share),
                ]);
            }
        }
    }
    csv_string(
        &[
            "model",
            "dataset",
            "attribute",
            "metric",
            "mean",
            "std",
            "n",
            "prag_mode",
            "degraded_share",
        ],
        rows,
    )
}

fn comparison_table(rows: &[ComparisonRow]) -> String {
    csv_string(
        &["model", "dataset", "metric", "mean", "std", "n", "best"],
        rows.iter()
            .map(|r| {
                vec![
                    r.model_id.clone(),
                    r.dataset.clone(),
                    r.metric.to_string(),
                    f4(r.score.mean),
                    f4(r.score.std),
                    r.score.n.to_string(),
                    r.best.to_string(),
                ]
            })
            .collect(),
    )
}

fn tag_ratio_csv(reports: &[DatasetReport]) -> String {
    let mut rows = Vec::new();
    for r in reports {
        let tags: BTreeSet<&String> = r.attributes.iter().flat_map(|a| a.tag_ratios.keys()).collect();
        for tag in tags {
            for attr in &r.attributes {
                if let Some(s) = attr.tag_ratios.get(tag) {
                    rows.push(vec![
                        r.model_id.clone(),
                        condition_label(r),
                        tag.clone(),
                        attr.attribute_id.clone(),
                        f4(s.mean),
                        f4(s.std),
                        s.n.to_string(),
                    ]);
                }
            }
        }
    }
    csv_string(&["model", "dataset", "tag", "attribute", "mean", "std", "n"], rows)
}

fn tag_ratio_plot(reports: &[DatasetReport], plot_tag: Option<&str>) -> Option<String> {
    let ordered = baseline_reports(reports);
    let (report, tag) = ordered.iter().find_map(|r| {
        let tags: BTreeSet<&String> = r.attributes.iter().flat_map(|a| a.tag_ratios.keys()).collect();
        match plot_tag {
            Some(t) => tags.iter().find(|x| x.as_str() == t).map(|x| (r, (*x).clone())),
            None => tags.first().map(|x| (r, (*x).clone())),
        }
    })?;
    let groups: Vec<BarGroup> = report
        .attributes
        .iter()
        .filter_map(|a| {
            a.tag_ratios.get(&tag).map(|s| BarGroup {
                label: a.attribute_id.clone(),
                bars: vec![Bar {
                    label: tag.clone(),
                    value: s.mean,
                    error: s.std,
                }],
            })
        })
        .collect();
    Some(charts::bar_chart(
        &format!(
            "Ratio of {tag} items recommended ({}, {})",
            report.model_id,
            condition_label(report)
        ),
        "ratio",
        std::slice::from_ref(&tag),
        &groups,
    ))
}

fn divergence_plot(reports: &[DatasetReport], comparison: &[ComparisonRow]) -> String {
    let series: Vec<String> = MetricKind::ALL.iter().map(|m| m.as_str().to_uppercase()).collect();
    let baseline = baseline_reports(reports);
    if baseline.len() == 1 {
        let r = &baseline[0];
        let groups = r
            .scored_attributes()
            .map(|(a, s)| BarGroup {
                label: a.attribute_id.clone(),
                bars: MetricKind::ALL
                    .iter()
                    .map(|&m| Bar {
                        label: m.as_str().to_uppercase(),
                        value: s.get(m).mean,
                        error: s.get(m).std,
                    })
                    .collect(),
            })
            .collect::<Vec<_>>();
        return charts::bar_chart(
            &format!(
                "Divergence from neutral by attribute ({}, {})",
                r.model_id,
                condition_label(r)
            ),
            "divergence",
            &series,
            &groups,
        );
    }
    let mut groups: Vec<BarGroup> = Vec::new();
    for row in comparison {
        let label = format!("{} / {}", row.dataset, row.model_id);
        let bar = Bar {
            label: row.metric.as_str().to_uppercase(),
            value: row.score.mean,
            error: row.score.std,
        };
        match groups.iter_mut().find(|g| g.label == label) {
            Some(g) => g.bars.push(bar),
            None => groups.push(BarGroup { label, bars: vec![bar] }),
        }
    }
    charts::bar_chart("Overall divergence from neutral", "divergence", &series, &groups)
}

fn context_plot(comparisons: &[ContextComparison]) -> Result<Option<String>, ReportError> {
    let Some(c) = comparisons.iter().find(|c| c.metric == MetricKind::Iou) else {
        return Ok(None);
    };
    let axes: Vec<String> = c.effects.iter().map(|e| e.attribute_id.clone()).collect();
    let series = [
        RadarSeries {
            name: "no context".into(),
            values: c.effects.iter().map(|e| e.without_context.mean).collect(),
        },
        RadarSeries {
            name: "with context".into(),
            values: c.effects.iter().map(|e| e.with_context.mean).collect(),
        },
    ];
    let title = format!(
        "Impact of \"{}\" on IOU divergence ({}, {})",
        c.context, c.model_id, c.dataset
    );
    charts::radar_chart(&title, &axes, &series)
        .map(Some)
        .ok_or(ReportError::TooManyAxes { got: axes.len() })
}

/// Renders every output in memory.
pub fn build_bundle(input: &ReportInput) -> Result<ReportBundle, ReportError> {
    let has_content = |r: &DatasetReport| {
        r.scored_attributes().next().is_some() || r.attributes.iter().any(|a| !a.tag_ratios.is_empty())
    };
    if !input.reports.iter().any(has_content) {
        return Err(ReportError::EmptyReport);
    }
    let comparison = model_comparison(&baseline_reports(&input.reports));
    let contexts = context_comparisons(&input.reports)?;
    let mut diagnostics_total = ParseDiagnostics::default();
    for r in &input.reports {
        diagnostics_total.accumulate(&r.diagnostics);
    }
    let summary = Summary {
        schema_version: SCHEMA_VERSION,
        run_metadata: RunMetadata::new(input.artifacts.clone(), &input.reports),
        datasets: input.reports.clone(),
        model_comparison: comparison.clone(),
        context_effects: contexts.clone(),
        diagnostics_total,
    };

    let mut tables = BTreeMap::new();
    tables.insert(DIVERGENCE_CSV, divergence_table(&input.reports));
    tables.insert(COMPARISON_CSV, comparison_table(&comparison));
    tables.insert(TAG_RATIOS_CSV, tag_ratio_csv(&input.reports));

    let mut plots = BTreeMap::new();
    if let Some(svg) = tag_ratio_plot(&input.reports, input.plot_tag.as_deref()) {
        plots.insert(TAG_RATIO_SVG, svg);
    }
    plots.insert(DIVERGENCE_SVG, divergence_plot(&input.reports, &comparison));
    if let Some(svg) = context_plot(&contexts)? {
        plots.insert(CONTEXT_RADAR_SVG, svg);
    }
    Ok(ReportBundle { summary, tables, plots })
}

fn write_all<'a>(
    out_dir: &Path,
    files: impl IntoIterator<Item = (&'a str, &'a str)>,
) -> Result<Vec<PathBuf>, ReportError> {
    std::fs::create_dir_all(out_dir).map_err(io_err(out_dir))?;
    let mut written = Vec::new();
    for (name, body) in files {
        let path = out_dir.join(name);
        write_atomic(&path, body.as_bytes()).map_err(io_err(&path))?;
        written.push(path);
    }
    Ok(written)
}

pub fn emit_tables(input: &ReportInput, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let bundle = build_bundle(input)?;
    write_all(out_dir, bundle.tables.iter().map(|(k, v)| (*k, v.as_str())))
}

pub fn emit_plots(input: &ReportInput, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let bundle = build_bundle(input)?;
    write_all(out_dir, bundle.plots.iter().map(|(k, v)| (*k, v.as_str())))
}

pub fn emit_summary_json(input: &ReportInput, out_path: &Path) -> Result<PathBuf, ReportError> {
    let bundle = build_bundle(input)?;
    write_summary(&bundle.summary, out_path)
}

fn write_summary(summary: &Summary, out_path: &Path) -> Result<PathBuf, ReportError> {
    let json = summary.to_canonical_json()?;
    validate_summary(&serde_json::from_str(&json)?)?;
    write_atomic(out_path, json.as_bytes()).map_err(io_err(out_path))?;
    Ok(out_path.to_path_buf())
}

/// Writes the whole bundle (tables, plots, `summary.json`) into `out_dir`.
pub fn emit_all(input: &ReportInput, out_dir: &Path) -> Result<Vec<PathBuf>, ReportError> {
    let bundle = build_bundle(input)?;
    let json = bundle.summary.to_canonical_json()?;
    validate_summary(&serde_json::from_str(&json)?)?;
    let files = bundle
        .tables
        .iter()
        .chain(bundle.plots.iter())
        .map(|(k, v)| (*k, v.as_str()))
        .chain(std::iter::once((SUMMARY_JSON, json.as_str())));
    write_all(out_dir, files)
}

pub fn load_summary(path: &Path) -> Result<Summary, ReportError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    validate_summary(&value)?;
    Ok(serde_json::from_value(value)?)
}

fn compiled_schema() -> &'static jsonschema::JSONSchema {
    static SCHEMA: OnceLock<jsonschema::JSONSchema> = OnceLock::new();
    SCHEMA.get_or_init(|| {
        let value: serde_json::Value = serde_json::from_str(SUMMARY_SCHEMA).expect("shipped schema is valid JSON");
        jsonschema::JSONSchema::compile(&value).expect("shipped schema compiles")
    })
}

/// Checks a summary document against `schema/summary.schema.json`.
pub fn validate_summary(value: &serde_json::Value) -> Result<(), ReportError> {
    compiled_schema()
        .validate(value)
        .map_err(|errors| ReportError::SchemaViolation(errors.map(|e| format!("{}: {}", e.instance_path, e)).collect()))
}
