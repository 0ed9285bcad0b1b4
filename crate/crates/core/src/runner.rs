//! Experiment execution: prompts go through the response cache to the
//! backend, responses are parsed and scored against the same-seed neutral
//! list, and everything lands in a [`RunArtifact`].

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::analysis::{analyze_condition, AnalysisError, AttributeRuns, Condition, DatasetReport};
use crate::backends::{
    fingerprint, sanitize_id, Backend, BackendError, DecodingParams, FixtureBackend, LiveBackend, RawResponse,
    SyntheticBackend, API_KEY_ENV,
};
use crate::catalog::{load_catalog, Catalog, CatalogError, Item};
use crate::config::{BackendSpec, ConfigError, ExperimentConfig};
use crate::fsutil::write_atomic;
use crate::metrics::{all_scores, BiasScores, PragMode};
use crate::parser::{parse_response, ParseDiagnostics, ParseError, RankedList};
use crate::promptgen::{PromptError, PromptInstance, PromptTemplate, TemplateRegistry, NEUTRAL_ID};
use crate::report::{emit_all, ArtifactRef, ReportError, ReportInput};

pub const ARTIFACT_FILE: &str = "artifact.json";
pub const REPORT_DIR: &str = "report";
pub const ARTIFACT_FORMAT: u32 = 1;

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Catalog(#[from] CatalogError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Analysis(#[from] AnalysisError),
    #[error(transparent)]
    Report(#[from] ReportError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed artifact {path}: {source}")]
    BadArtifact {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("artifact digest mismatch in {0}")]
    DigestMismatch(PathBuf),
    #[error("embedded catalog for `{dataset}` hashes to {got}, artifact says {expected}")]
    CatalogMismatch {
        dataset: String,
        expected: String,
        got: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One successfully parsed response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub attribute_id: String,
    pub seed: u64,
    pub response: RawResponse,
    pub ranked_list: RankedList,
    /// Divergence from the same-seed neutral list; absent for neutral records
    /// and when the neutral response for this seed failed.
    pub scores: Option<BiasScores>,
}

/// A prompt that produced no usable list.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Exclusion {
    pub attribute_id: String,
    pub seed: u64,
    pub prompt_fingerprint: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRun {
    pub domain: String,
    pub catalog_hash: String,
    /// Embedded so that reports can be rebuilt without the original file.
    pub catalog: Vec<Item>,
    pub diagnostics: ParseDiagnostics,
    pub records: Vec<RunRecord>,
    pub exclusions: Vec<Exclusion>,
}

/// Execution statistics. Not covered by the artifact digest.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub started_unix_ms: u64,
    pub finished_unix_ms: u64,
    pub wall_clock_ms: f64,
    pub backend_calls: usize,
    pub cache_hits: usize,
    pub total_latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunArtifact {
    pub format_version: u32,
    pub config_digest: String,
    pub artifact_digest: String,
    pub model_id: String,
    pub backend_id: String,
    pub context: Option<String>,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub prag_mode: PragMode,
    pub fuzzy_threshold: f64,
    pub analysis_tags: Vec<String>,
    /// Attribute ids in configuration order, neutral excluded.
    pub attribute_ids: Vec<String>,
    pub datasets: Vec<DatasetRun>,
    /// Already-aggregated reports carried verbatim, e.g. imported results.
    #[serde(default)]
    pub preloaded: Vec<DatasetReport>,
    #[serde(default)]
    pub stats: RunStats,
}

impl RunArtifact {
    /// SHA-256 over the artifact with stats, latencies and cache flags
    /// blanked, so reruns served from the cache hash identically.
    pub fn compute_digest(&self) -> String {
        let mut canonical = self.clone();
        canonical.artifact_digest.clear();
        canonical.stats = RunStats::default();
        for d in &mut canonical.datasets {
            for r in &mut d.records {
                r.response.latency_ms = 0.0;
                r.response.retrieved_from_cache = false;
            }
        }
        let bytes = serde_json::to_vec(&canonical).expect("artifact serializes");
        hex::encode(Sha256::digest(&bytes))
    }

    pub fn seal(&mut self) {
        self.artifact_digest = self.compute_digest();
    }

    pub fn artifact_ref(&self) -> ArtifactRef {
        ArtifactRef {
            model_id: self.model_id.clone(),
            config_digest: self.config_digest.clone(),
            artifact_digest: self.artifact_digest.clone(),
        }
    }

    pub fn record_count(&self) -> usize {
        self.datasets.iter().map(|d| d.records.len()).sum()
    }

    pub fn exclusion_count(&self) -> usize {
        self.datasets.iter().map(|d| d.exclusions.len()).sum()
    }

    /// Aggregated reports: preloaded ones first, then one per dataset run.
    pub fn reports(&self) -> Result<Vec<DatasetReport>, RunError> {
        let mut out = self.preloaded.clone();
        for d in &self.datasets {
            let catalog = Catalog::from_items(d.domain.clone(), d.catalog.clone())?;
            if catalog.content_hash().0 != d.catalog_hash {
                return Err(RunError::CatalogMismatch {
                    dataset: d.domain.clone(),
                    expected: d.catalog_hash.clone(),
                    got: catalog.content_hash().0.clone(),
                });
            }
            let mut runs: Vec<AttributeRuns> = std::iter::once(NEUTRAL_ID.to_string())
                .chain(self.attribute_ids.iter().cloned())
                .map(AttributeRuns::new)
                .collect();
            for r in &d.records {
                if let Some(run) = runs.iter_mut().find(|x| x.attribute_id == r.attribute_id) {
                    run.lists.insert(r.seed, r.ranked_list.clone());
                }
            }
            let cond = Condition {
                model_id: &self.model_id,
                catalog: &catalog,
                context: self.context.as_deref(),
                prag_mode: self.prag_mode,
                k: self.k,
                seeds: &self.seeds,
                tags: &self.analysis_tags,
            };
            out.push(analyze_condition(&cond, &runs, d.diagnostics)?);
        }
        Ok(out)
    }

    pub fn save(&self, dir: &Path) -> Result<PathBuf, RunError> {
        let path = dir.join(ARTIFACT_FILE);
        let mut json = serde_json::to_string_pretty(self).expect("artifact serializes");
        json.push('\n');
        write_atomic(&path, json.as_bytes()).map_err(io_err(&path))?;
        Ok(path)
    }

    /// Loads `artifact.json` from a run directory (or the file itself) and
    /// checks its digest.
    pub fn load(path: &Path) -> Result<Self, RunError> {
        let file = if path.is_dir() {
            path.join(ARTIFACT_FILE)
        } else {
            path.to_path_buf()
        };
        let text = std::fs::read_to_string(&file).map_err(io_err(&file))?;
        let artifact: RunArtifact = serde_json::from_str(&text).map_err(|source| RunError::BadArtifact {
            path: file.clone(),
            source,
        })?;
        if artifact.artifact_digest != artifact.compute_digest() {
            return Err(RunError::DigestMismatch(file));
        }
        Ok(artifact)
    }
}

/// On-disk response cache keyed by backend id and prompt fingerprint. Stores
/// raw response text only.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn path(&self, backend_id: &str, fingerprint: &str) -> PathBuf {
        self.root
            .join(sanitize_id(backend_id))
            .join(format!("{fingerprint}.txt"))
    }

    pub fn get(&self, backend_id: &str, fingerprint: &str) -> Option<String> {
        std::fs::read_to_string(self.path(backend_id, fingerprint)).ok()
    }

    pub fn put(&self, backend_id: &str, fingerprint: &str, text: &str) -> std::io::Result<()> {
        write_atomic(&self.path(backend_id, fingerprint), text.as_bytes())
    }
}

struct Job {
    dataset: usize,
    prompt: PromptInstance,
    params: DecodingParams,
    fingerprint: String,
}

fn unix_ms() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis() as u64)
        .unwrap_or(0)
}

pub fn load_catalogs(config: &ExperimentConfig) -> Result<Vec<Arc<Catalog>>, RunError> {
    config
        .catalogs
        .iter()
        .map(|c| Ok(Arc::new(load_catalog(&c.resolved, &c.domain)?)))
        .collect()
}

pub fn build_backend(config: &ExperimentConfig, catalogs: &[Arc<Catalog>]) -> Result<Box<dyn Backend>, RunError> {
    Ok(match &config.backend {
        BackendSpec::Live {
            base_url,
            model,
            timeout_secs,
            retry,
            send_seed,
        } => Box::new(
            LiveBackend::new(
                base_url.clone(),
                model.clone(),
                Duration::from_secs_f64(*timeout_secs),
                retry.clone(),
            )
            .with_api_key(std::env::var(API_KEY_ENV).ok())
            .with_seed_forwarding(*send_seed),
        ),
        BackendSpec::Fixture { dir, backend_id } => Box::new(FixtureBackend::new(dir.clone(), backend_id.clone())),
        BackendSpec::Synthetic { model } => Box::new(SyntheticBackend::new(model.clone(), catalogs.iter().cloned())?),
    })
}

fn registry(config: &ExperimentConfig) -> Result<TemplateRegistry, RunError> {
    let mut reg = TemplateRegistry::default();
    if let Some(path) = &config.template_file {
        reg.register(PromptTemplate::from_file(config.template_id.clone(), path)?);
    }
    Ok(reg)
}

/// Runs every prompt of the config through `backend` and assembles the
/// artifact. Only the response cache is written.
pub fn execute(
    config: &ExperimentConfig,
    catalogs: &[Arc<Catalog>],
    backend: &dyn Backend,
) -> Result<RunArtifact, RunError> {
    let started = Instant::now();
    let started_unix_ms = unix_ms();
    let registry = registry(config)?;
    let backend_id = backend.id().to_string();
    let cache = ResponseCache::new(&config.cache_dir);

    let mut jobs = Vec::new();
    for (dataset, catalog) in catalogs.iter().enumerate() {
        let prompts = registry.counterfactual_set(
            &config.attributes,
            config.context.as_deref(),
            catalog,
            config.k,
            &config.seeds,
            &config.template_id,
        )?;
        for prompt in prompts {
            let params = config.decoding(prompt.seed);
            let fingerprint = fingerprint(&prompt.text, &backend_id, &params);
            jobs.push(Job {
                dataset,
                prompt,
                params,
                fingerprint,
            });
        }
    }

    let mut results: Vec<Option<Result<RawResponse, BackendError>>> = jobs
        .iter()
        .map(|job| {
            cache.get(&backend_id, &job.fingerprint).map(|text| {
                Ok(RawResponse {
                    prompt_fingerprint: job.fingerprint.clone(),
                    backend_id: backend_id.clone(),
                    text,
                    latency_ms: 0.0,
                    retrieved_from_cache: true,
                })
            })
        })
        .collect();
    let pending: Vec<usize> = (0..jobs.len()).filter(|&i| results[i].is_none()).collect();
    let cache_hits = jobs.len() - pending.len();
    log::info!(
        "{} prompts, {} cached, {} to request with {} workers",
        jobs.len(),
        cache_hits,
        pending.len(),
        config.max_concurrency
    );

    let fatal: Mutex<Option<BackendError>> = Mutex::new(None);
    {
        let next = AtomicUsize::new(0);
        let abort = AtomicBool::new(false);
        let slots = Mutex::new(&mut results);
        let workers = config.max_concurrency.min(pending.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    if abort.load(Ordering::SeqCst) {
                        break;
                    }
                    let n = next.fetch_add(1, Ordering::SeqCst);
                    let Some(&i) = pending.get(n) else { break };
                    let job = &jobs[i];
                    let outcome = backend.complete(&job.prompt, &job.params);
                    match &outcome {
                        Ok(resp) => {
                            if let Err(e) = cache.put(&backend_id, &job.fingerprint, &resp.text) {
                                log::warn!("cache write failed for {}: {e}", job.fingerprint);
                            }
                        }
                        Err(BackendError::AuthFailure { .. }) => {
                            abort.store(true, Ordering::SeqCst);
                        }
                        Err(e) => log::warn!("{} seed {}: {e}", job.prompt.user_spec.attribute_id(), job.prompt.seed),
                    }
                    match outcome {
                        Err(e @ BackendError::AuthFailure { .. }) => {
                            fatal.lock().unwrap().get_or_insert(e);
                        }
                        other => slots.lock().unwrap()[i] = Some(other),
                    }
                });
            }
        });
    }
    if let Some(e) = fatal.into_inner().unwrap() {
        return Err(e.into());
    }

    let mut datasets: Vec<DatasetRun> = catalogs
        .iter()
        .map(|c| DatasetRun {
            domain: c.domain().to_string(),
            catalog_hash: c.content_hash().0.clone(),
            catalog: c.items().to_vec(),
            diagnostics: ParseDiagnostics::default(),
            records: Vec::new(),
            exclusions: Vec::new(),
        })
        .collect();
    let mut total_latency_ms = 0.0;
    for (job, result) in jobs.iter().zip(results) {
        let d = &mut datasets[job.dataset];
        let attribute_id = job.prompt.user_spec.attribute_id().to_string();
        let exclude = |reason: String| Exclusion {
            attribute_id: attribute_id.clone(),
            seed: job.prompt.seed,
            prompt_fingerprint: job.fingerprint.clone(),
            reason,
        };
        match result.expect("every job resolved") {
            Err(e) => d.exclusions.push(exclude(e.to_string())),
            Ok(response) => {
                total_latency_ms += response.latency_ms;
                match parse_response(&response.text, &catalogs[job.dataset], config.k, config.fuzzy_threshold) {
                    Ok(list) => {
                        d.diagnostics.accumulate(&list.diagnostics);
                        d.records.push(RunRecord {
                            attribute_id,
                            seed: job.prompt.seed,
                            response,
                            ranked_list: list,
                            scores: None,
                        });
                    }
                    Err(ParseError::EmptyParse { diagnostics }) => {
                        d.diagnostics.accumulate(&diagnostics);
                        d.exclusions
                            .push(exclude("no catalog item recovered from the response".into()));
                    }
                }
            }
        }
    }

    for d in &mut datasets {
        let neutral: BTreeMap<u64, RankedList> = d
            .records
            .iter()
            .filter(|r| r.attribute_id == NEUTRAL_ID)
            .map(|r| (r.seed, r.ranked_list.clone()))
            .collect();
        for r in d.records.iter_mut().filter(|r| r.attribute_id != NEUTRAL_ID) {
            if let Some(n) = neutral.get(&r.seed) {
                r.scores = all_scores(&r.attribute_id, &r.ranked_list, n, config.k, config.prag_mode).ok();
            }
        }
    }

    let mut artifact = RunArtifact {
        format_version: ARTIFACT_FORMAT,
        config_digest: config.digest.clone(),
        artifact_digest: String::new(),
        model_id: config.model_id.clone(),
        backend_id,
        context: config.context.clone(),
        k: config.k,
        seeds: config.seeds.clone(),
        prag_mode: config.prag_mode,
        fuzzy_threshold: config.fuzzy_threshold,
        analysis_tags: config.analysis_tags.clone(),
        attribute_ids: config.attributes.iter().map(|a| a.id.clone()).collect(),
        datasets,
        preloaded: Vec::new(),
        stats: RunStats {
            started_unix_ms,
            finished_unix_ms: unix_ms(),
            wall_clock_ms: started.elapsed().as_secs_f64() * 1000.0,
            backend_calls: pending.len(),
            cache_hits,
            total_latency_ms,
        },
    };
    artifact.seal();
    Ok(artifact)
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub artifact: RunArtifact,
    pub run_dir: PathBuf,
    pub artifact_path: PathBuf,
    /// Empty when no attribute could be scored.
    pub report_files: Vec<PathBuf>,
}

/// Loads catalogs, builds the configured backend and runs.
pub fn run(config: &ExperimentConfig) -> Result<RunOutcome, RunError> {
    let catalogs = load_catalogs(config)?;
    let backend = build_backend(config, &catalogs)?;
    run_with_backend(config, &catalogs, backend.as_ref())
}

/// Executes, then writes `artifact.json` and the report bundle under
/// `output_dir/{config digest}/`.
pub fn run_with_backend(
    config: &ExperimentConfig,
    catalogs: &[Arc<Catalog>],
    backend: &dyn Backend,
) -> Result<RunOutcome, RunError> {
    let artifact = execute(config, catalogs, backend)?;
    let run_dir = config.run_dir();
    let artifact_path = artifact.save(&run_dir)?;
    let report_files = match report_artifacts(std::slice::from_ref(&artifact), &run_dir.join(REPORT_DIR)) {
        Ok(files) => files,
        Err(RunError::Report(ReportError::EmptyReport)) => {
            log::warn!("no attribute could be scored; report skipped");
            Vec::new()
        }
        Err(e) => return Err(e),
    };
    Ok(RunOutcome {
        artifact,
        run_dir,
        artifact_path,
        report_files,
    })
}

/// Builds one report over several artifacts.
pub fn report_artifacts(artifacts: &[RunArtifact], out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let mut input = ReportInput::default();
    for a in artifacts {
        input.artifacts.push(a.artifact_ref());
        input.reports.extend(a.reports()?);
        if input.plot_tag.is_none() {
            input.plot_tag = a.analysis_tags.first().cloned();
        }
    }
    Ok(emit_all(&input, out_dir)?)
}

/// Loads artifacts from run directories and reports over all of them.
pub fn report_dirs(dirs: &[PathBuf], out_dir: &Path) -> Result<Vec<PathBuf>, RunError> {
    let artifacts = dirs
        .iter()
        .map(|d| RunArtifact::load(d))
        .collect::<Result<Vec<_>, _>>()?;
    report_artifacts(&artifacts, out_dir)
}
