//! Seed aggregation and the content analyses built on top of the scores.
//!
//! Attribute lists are always compared with the neutral list of the same
//! seed. Standard deviations are sample standard deviations (`n - 1`).

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::catalog::Catalog;
use crate::metrics::{all_scores, BiasScores, MetricError, PragMode};
use crate::parser::{ParseDiagnostics, RankedList};
use crate::promptgen::NEUTRAL_ID;

#[derive(Debug, Error, PartialEq)]
pub enum AnalysisError {
    #[error("cannot aggregate an empty sequence")]
    EmptyInput,
    #[error("cannot compute a ratio over an empty list")]
    EmptyList,
    #[error("runs contain no neutral row")]
    MissingNeutral,
    #[error("run sets cover different attributes or seeds: {0}")]
    AttributeSetMismatch(String),
    #[error("attribute `{attribute}` seed {seed}: {source}")]
    Metric {
        attribute: String,
        seed: u64,
        #[source]
        source: MetricError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MetricKind {
    Iou,
    Serp,
    Prag,
}

impl MetricKind {
    pub const ALL: [MetricKind; 3] = [MetricKind::Iou, MetricKind::Serp, MetricKind::Prag];

    pub fn as_str(self) -> &'static str {
        match self {
            MetricKind::Iou => "iou",
            MetricKind::Serp => "serp",
            MetricKind::Prag => "prag",
        }
    }

    pub fn of(self, scores: &BiasScores) -> f64 {
        match self {
            MetricKind::Iou => scores.b_iou,
            MetricKind::Serp => scores.b_serp,
            MetricKind::Prag => scores.b_prag,
        }
    }
}

impl fmt::Display for MetricKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AggregateScore {
    pub mean: f64,
    /// Sample standard deviation; zero when `n == 1`.
    pub std: f64,
    pub n: usize,
}

/// Mean and sample standard deviation.
pub fn aggregate(values: &[f64]) -> Result<AggregateScore, AnalysisError> {
    if values.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    let n = values.len();
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n == 1 {
        0.0
    } else {
        let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
        (ss / (n - 1) as f64).sqrt()
    };
    Ok(AggregateScore { mean, std, n })
}

/// Pools per-attribute aggregates into one overall score.
///
/// Each group's mean carries equal weight. The spread is the sample standard
/// deviation of all underlying observations around that overall mean,
/// reconstructed from each group's mean, std and count; with equal group
/// sizes this is exactly the std of the pooled observations.
pub fn combine(groups: &[AggregateScore]) -> Result<AggregateScore, AnalysisError> {
    if groups.is_empty() {
        return Err(AnalysisError::EmptyInput);
    }
    if groups.len() == 1 {
        return Ok(groups[0]);
    }
    let mean = groups.iter().map(|g| g.mean).sum::<f64>() / groups.len() as f64;
    let n: usize = groups.iter().map(|g| g.n).sum();
    let ss: f64 = groups
        .iter()
        .map(|g| (g.n.saturating_sub(1)) as f64 * g.std.powi(2) + g.n as f64 * (g.mean - mean).powi(2))
        .sum();
    let std = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
    Ok(AggregateScore { mean, std, n })
}

/// Fraction of the list's items that carry `tag`.
pub fn tag_ratio(list: &RankedList, tag: &str, catalog: &Catalog) -> Result<f64, AnalysisError> {
    if list.is_empty() {
        return Err(AnalysisError::EmptyList);
    }
    let hits = list
        .item_ids
        .iter()
        .filter(|id| catalog.get(id).is_some_and(|item| item.has_tag(tag)))
        .count();
    Ok(hits as f64 / list.len() as f64)
}

/// Successful parsed lists for one user description, keyed by seed.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct AttributeRuns {
    pub attribute_id: String,
    pub lists: BTreeMap<u64, RankedList>,
}

impl AttributeRuns {
    pub fn new(attribute_id: impl Into<String>) -> Self {
        Self {
            attribute_id: attribute_id.into(),
            lists: BTreeMap::new(),
        }
    }

    pub fn is_neutral(&self) -> bool {
        self.attribute_id == NEUTRAL_ID
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TagRatioRow {
    pub attribute_id: String,
    pub score: AggregateScore,
}

/// Mean ± std of a tag ratio per attribute across seeds, neutral row first.
pub fn tag_ratio_table(
    runs: &[AttributeRuns],
    tag: &str,
    catalog: &Catalog,
) -> Result<Vec<TagRatioRow>, AnalysisError> {
    let neutral = runs
        .iter()
        .find(|r| r.is_neutral())
        .ok_or(AnalysisError::MissingNeutral)?;
    let mut rows = Vec::with_capacity(runs.len());
    for run in std::iter::once(neutral).chain(runs.iter().filter(|r| !r.is_neutral())) {
        if run.lists.is_empty() {
            continue;
        }
        let ratios = run
            .lists
            .values()
            .map(|l| tag_ratio(l, tag, catalog))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(TagRatioRow {
            attribute_id: run.attribute_id.clone(),
            score: aggregate(&ratios)?,
        });
    }
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricAggregates {
    pub iou: AggregateScore,
    pub serp: AggregateScore,
    pub prag: AggregateScore,
}

impl MetricAggregates {
    pub fn get(&self, metric: MetricKind) -> AggregateScore {
        match metric {
            MetricKind::Iou => self.iou,
            MetricKind::Serp => self.serp,
            MetricKind::Prag => self.prag,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedScore {
    pub seed: u64,
    pub scores: BiasScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributeReport {
    pub attribute_id: String,
    /// Absent for the neutral row and for attributes with every seed excluded.
    pub scores: Option<MetricAggregates>,
    pub excluded_seeds: Vec<u64>,
    pub tag_ratios: BTreeMap<String, AggregateScore>,
    /// Share of contributing comparisons with a degraded input list.
    pub degraded_share: f64,
    #[serde(default)]
    pub seed_scores: Vec<SeedScore>,
}

impl AttributeReport {
    pub fn is_neutral(&self) -> bool {
        self.attribute_id == NEUTRAL_ID
    }
}

/// Everything measured for one (model, dataset, context) condition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetReport {
    pub model_id: String,
    pub dataset: String,
    pub catalog_hash: String,
    pub context: Option<String>,
    pub prag_mode: PragMode,
    pub k: usize,
    pub seeds: Vec<u64>,
    /// Neutral row first, then attributes in configuration order.
    pub attributes: Vec<AttributeReport>,
    pub diagnostics: ParseDiagnostics,
}

impl DatasetReport {
    pub fn scored_attributes(&self) -> impl Iterator<Item = (&AttributeReport, &MetricAggregates)> {
        self.attributes
            .iter()
            .filter(|a| !a.is_neutral())
            .filter_map(|a| a.scores.as_ref().map(|s| (a, s)))
    }
}

/// Static description of the condition a [`DatasetReport`] covers.
#[derive(Debug, Clone)]
pub struct Condition<'a> {
    pub model_id: &'a str,
    pub catalog: &'a Catalog,
    pub context: Option<&'a str>,
    pub prag_mode: PragMode,
    pub k: usize,
    pub seeds: &'a [u64],
    pub tags: &'a [String],
}

/// Scores every attribute against the same-seed neutral list and aggregates.
///
/// A seed contributes to an attribute only when both that attribute's list
/// and the neutral list for the same seed exist; otherwise it is recorded in
/// `excluded_seeds`.
pub fn analyze_condition(
    cond: &Condition<'_>,
    runs: &[AttributeRuns],
    diagnostics: ParseDiagnostics,
) -> Result<DatasetReport, AnalysisError> {
    let neutral = runs
        .iter()
        .find(|r| r.is_neutral())
        .ok_or(AnalysisError::MissingNeutral)?;
    let mut attributes = Vec::with_capacity(runs.len());
    for run in std::iter::once(neutral).chain(runs.iter().filter(|r| !r.is_neutral())) {
        let mut seed_scores = Vec::new();
        let mut excluded = Vec::new();
        for &seed in cond.seeds {
            let pair = run.lists.get(&seed).zip(neutral.lists.get(&seed));
            match pair {
                Some((list, neu)) if !run.is_neutral() => {
                    let scores =
                        all_scores(&run.attribute_id, list, neu, cond.k, cond.prag_mode).map_err(|source| {
                            AnalysisError::Metric {
                                attribute: run.attribute_id.clone(),
                                seed,
                                source,
                            }
                        })?;
                    seed_scores.push(SeedScore { seed, scores });
                }
                Some(_) => {}
                None => excluded.push(seed),
            }
        }

        let scores = if seed_scores.is_empty() {
            None
        } else {
            let series = |m: MetricKind| seed_scores.iter().map(|s| m.of(&s.scores)).collect::<Vec<_>>();
            Some(MetricAggregates {
                iou: aggregate(&series(MetricKind::Iou))?,
                serp: aggregate(&series(MetricKind::Serp))?,
                prag: aggregate(&series(MetricKind::Prag))?,
            })
        };
        let degraded_share = if run.is_neutral() {
            share(run.lists.values().filter(|l| l.degraded).count(), run.lists.len())
        } else {
            share(
                seed_scores.iter().filter(|s| s.scores.degraded_input).count(),
                seed_scores.len(),
            )
        };

        let mut tag_ratios = BTreeMap::new();
        if !run.lists.is_empty() {
            for tag in cond.tags {
                let ratios = run
                    .lists
                    .values()
                    .map(|l| tag_ratio(l, tag, cond.catalog))
                    .collect::<Result<Vec<_>, _>>()?;
                tag_ratios.insert(tag.clone(), aggregate(&ratios)?);
            }
        }

        attributes.push(AttributeReport {
            attribute_id: run.attribute_id.clone(),
            scores,
            excluded_seeds: excluded,
            tag_ratios,
            degraded_share,
            seed_scores,
        });
    }
    Ok(DatasetReport {
        model_id: cond.model_id.to_string(),
        dataset: cond.catalog.domain().to_string(),
        catalog_hash: cond.catalog.content_hash().to_string(),
        context: cond.context.map(str::to_string),
        prag_mode: cond.prag_mode,
        k: cond.k,
        seeds: cond.seeds.to_vec(),
        attributes,
        diagnostics,
    })
}

fn share(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        part as f64 / whole as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContextEffect {
    pub attribute_id: String,
    pub without_context: AggregateScore,
    pub with_context: AggregateScore,
    /// `with - without`; negative means the context reduced divergence.
    pub delta: f64,
}

/// Paired per-attribute comparison of one metric with and without a context
/// clause.
pub fn context_effect(
    without: &DatasetReport,
    with: &DatasetReport,
    metric: MetricKind,
) -> Result<Vec<ContextEffect>, AnalysisError> {
    let ids = |r: &DatasetReport| -> BTreeSet<String> {
        r.attributes
            .iter()
            .filter(|a| !a.is_neutral())
            .map(|a| a.attribute_id.clone())
            .collect()
    };
    if ids(without) != ids(with) {
        return Err(AnalysisError::AttributeSetMismatch(format!(
            "{:?} vs {:?}",
            ids(without),
            ids(with)
        )));
    }
    let seeds = |r: &DatasetReport| r.seeds.iter().copied().collect::<BTreeSet<_>>();
    if seeds(without) != seeds(with) {
        return Err(AnalysisError::AttributeSetMismatch(format!(
            "seeds {:?} vs {:?}",
            without.seeds, with.seeds
        )));
    }
    let mut out = Vec::new();
    for (attr, base) in without.scored_attributes() {
        let Some(other) = with
            .attributes
            .iter()
            .find(|a| a.attribute_id == attr.attribute_id)
            .and_then(|a| a.scores.as_ref())
        else {
            continue;
        };
        let before = base.get(metric);
        let after = other.get(metric);
        out.push(ContextEffect {
            attribute_id: attr.attribute_id.clone(),
            without_context: before,
            with_context: after,
            delta: after.mean - before.mean,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub model_id: String,
    pub dataset: String,
    pub metric: MetricKind,
    pub score: AggregateScore,
    /// Lowest mean divergence for its (dataset, metric) among two or more models.
    pub best: bool,
}

/// Overall divergence per (model, dataset, metric), attributes weighted
/// equally, with the minimum per (dataset, metric) flagged.
pub fn model_comparison(reports: &[DatasetReport]) -> Vec<ComparisonRow> {
    let mut datasets: Vec<&str> = Vec::new();
    let mut models: Vec<&str> = Vec::new();
    for r in reports {
        if !datasets.contains(&r.dataset.as_str()) {
            datasets.push(&r.dataset);
        }
        if !models.contains(&r.model_id.as_str()) {
            models.push(&r.model_id);
        }
    }
    let mut rows = Vec::new();
    for dataset in &datasets {
        for metric in MetricKind::ALL {
            let start = rows.len();
            for model in &models {
                let groups: Vec<AggregateScore> = reports
                    .iter()
                    .filter(|r| r.dataset == *dataset && r.model_id == *model)
                    .flat_map(|r| r.scored_attributes().map(move |(_, s)| s.get(metric)))
                    .collect();
                if let Ok(score) = combine(&groups) {
                    rows.push(ComparisonRow {
                        model_id: model.to_string(),
                        dataset: dataset.to_string(),
                        metric,
                        score,
                        best: false,
                    });
                }
            }
            let block = &mut rows[start..];
            if block.len() >= 2 {
                let min = block.iter().map(|r| r.score.mean).fold(f64::INFINITY, f64::min);
                for row in block.iter_mut() {
                    row.best = row.score.mean == min;
                }
            }
        }
    }
    rows
}
