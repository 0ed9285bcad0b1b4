//! Counterfactual bias auditing for LLM-generated cold-start recommendations.
//!
//! The pipeline renders one prompt per sensitive attribute plus a neutral
//! baseline, collects ranked top-k lists from a backend, and scores each
//! attribute list against the same-seed neutral list with three divergence
//! metrics (IOU, SERP, PRAG). Results are aggregated over seeds and emitted as
//! CSV tables, SVG charts and a JSON summary.

pub mod analysis;
pub mod backends;
pub mod catalog;
pub mod config;
pub mod fsutil;
pub mod metrics;
pub mod parser;
pub mod promptgen;
pub mod report;
pub mod runner;

pub use backends::{Backend, BackendError, DecodingParams, RawResponse, SyntheticBiasModel};
pub use catalog::{load_catalog, normalize_title, Catalog, CatalogError, Item, MatchKind, MatchResult};
pub use config::{load_config, validate_config, ConfigError, ExperimentConfig};
pub use metrics::{all_scores, b_iou, b_prag, b_serp, BiasScores, MetricError, PragMode};
pub use parser::{extract_candidates, parse_response, ParseDiagnostics, ParseError, RankedList};
pub use promptgen::{
    builtin_attributes, counterfactual_set, render_prompt, AttributeCategory, PromptInstance, SensitiveAttribute,
    UserSpec,
};
pub use report::{emit_all, emit_plots, emit_summary_json, emit_tables, ReportError};
pub use runner::{run, RunArtifact, RunError, RunOutcome};
