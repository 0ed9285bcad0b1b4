//! Declarative experiment configuration (TOML).
//!
//! Relative paths are resolved against the directory holding the config
//! file. The config digest covers every field that can change results, and
//! leaves out where things are written and how many workers run.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::backends::{Corruption, RetryPolicy, SyntheticBiasModel, TOKENS_PER_ITEM};
use crate::catalog::DEFAULT_FUZZY_THRESHOLD;
use crate::metrics::PragMode;
use crate::promptgen::{builtin_attributes, AttributeCategory, SensitiveAttribute, DEFAULT_TEMPLATE_ID, NEUTRAL_ID};

pub const DEFAULT_K: usize = 20;
pub const DEFAULT_SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
pub const DEFAULT_MAX_CONCURRENCY: usize = 4;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at {location}: {message}")]
    ParseError { location: String, message: String },
    #[error("invalid field `{name}`: {reason}")]
    InvalidField { name: String, reason: String },
    #[error("catalog file not found: {0}")]
    MissingCatalog(PathBuf),
    #[error("cannot read config {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

fn invalid(name: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::InvalidField {
        name: name.to_string(),
        reason: reason.into(),
    }
}

// ---------------------------------------------------------------------------
// raw document

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawConfig {
    backend: RawBackend,
    catalogs: Vec<RawCatalog>,
    model_id: Option<String>,
    #[serde(default)]
    attributes: RawAttributes,
    context: Option<String>,
    k: Option<i64>,
    seeds: Option<Vec<i64>>,
    #[serde(default)]
    decoding: RawDecoding,
    fuzzy_threshold: Option<f64>,
    prag_mode: Option<String>,
    max_concurrency: Option<i64>,
    cache_dir: Option<PathBuf>,
    output_dir: Option<PathBuf>,
    template: Option<String>,
    template_file: Option<PathBuf>,
    #[serde(default)]
    analysis_tags: Vec<String>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawCatalog {
    path: String,
    domain: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttributes {
    categories: Option<Vec<String>>,
    #[serde(default)]
    custom: Vec<RawAttribute>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawAttribute {
    id: String,
    category: Option<String>,
    phrase: String,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawDecoding {
    temperature: Option<f64>,
    max_tokens: Option<i64>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawBackend {
    kind: String,
    // live
    base_url: Option<String>,
    model: Option<String>,
    timeout_secs: Option<f64>,
    max_retries: Option<i64>,
    initial_backoff_ms: Option<i64>,
    max_backoff_ms: Option<i64>,
    send_seed: Option<bool>,
    // fixture
    fixture_dir: Option<PathBuf>,
    backend_id: Option<String>,
    // synthetic
    bias_strength: Option<f64>,
    #[serde(default)]
    affinity: BTreeMap<String, Vec<String>>,
    #[serde(default)]
    context_affinity: BTreeMap<String, Vec<String>>,
    context_strength: Option<f64>,
    corruption: Option<Corruption>,
    corruption_rate: Option<f64>,
}

// ---------------------------------------------------------------------------
// validated config

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BackendSpec {
    Live {
        base_url: String,
        model: String,
        timeout_secs: f64,
        retry: RetryPolicy,
        send_seed: bool,
    },
    Fixture {
        dir: PathBuf,
        backend_id: String,
    },
    Synthetic {
        model: SyntheticBiasModel,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CatalogSpec {
    /// Path as written in the config.
    pub path: String,
    pub resolved: PathBuf,
    pub domain: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub backend: BackendSpec,
    pub model_id: String,
    pub catalogs: Vec<CatalogSpec>,
    pub attributes: Vec<SensitiveAttribute>,
    pub context: Option<String>,
    pub k: usize,
    pub seeds: Vec<u64>,
    pub temperature: f64,
    pub max_tokens: usize,
    pub fuzzy_threshold: f64,
    pub prag_mode: PragMode,
    pub max_concurrency: usize,
    pub cache_dir: PathBuf,
    pub output_dir: PathBuf,
    pub template_id: String,
    pub template_file: Option<PathBuf>,
    pub analysis_tags: Vec<String>,
    /// SHA-256 over the result-affecting fields.
    pub digest: String,
}

impl ExperimentConfig {
    pub fn decoding(&self, seed: u64) -> crate::backends::DecodingParams {
        crate::backends::DecodingParams {
            temperature: self.temperature,
            max_tokens: self.max_tokens,
            seed,
        }
    }

    /// Directory holding the artifact and report of this config.
    pub fn run_dir(&self) -> PathBuf {
        self.output_dir.join(&self.digest)
    }

    fn compute_digest(&self) -> String {
        let backend = match &self.backend {
            BackendSpec::Live {
                base_url,
                model,
                send_seed,
                ..
            } => {
                json!({"kind": "live", "base_url": base_url, "model": model, "send_seed": send_seed})
            }
            BackendSpec::Fixture { backend_id, .. } => json!({"kind": "fixture", "backend_id": backend_id}),
            BackendSpec::Synthetic { model } => json!({"kind": "synthetic", "model": model}),
        };
        let template = match &self.template_file {
            Some(path) => json!({"id": self.template_id, "body": std::fs::read_to_string(path).unwrap_or_default()}),
            None => json!({"id": self.template_id}),
        };
        let canonical = json!({
            "backend": backend,
            "model_id": self.model_id,
            "catalogs": self.catalogs.iter().map(|c| json!({"path": c.path, "domain": c.domain})).collect::<Vec<_>>(),
            "attributes": self.attributes,
            "context": self.context,
            "k": self.k,
            "seeds": self.seeds,
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
            "fuzzy_threshold": self.fuzzy_threshold,
            "prag_mode": self.prag_mode,
            "template": template,
            "analysis_tags": self.analysis_tags,
        });
        hex::encode(Sha256::digest(canonical.to_string().as_bytes()))
    }
}

/// Reads and validates a config file.
pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig, ConfigError> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    validate_config(&text, &base)
}

/// Parses, checks and fills defaults. `base_dir` anchors relative paths.
pub fn validate_config(raw: &str, base_dir: &Path) -> Result<ExperimentConfig, ConfigError> {
    let doc: RawConfig = toml::from_str(raw).map_err(|e| ConfigError::ParseError {
        location: e
            .span()
            .map(|s| {
                let line = raw[..s.start.min(raw.len())].matches('\n').count() + 1;
                format!("line {line}")
            })
            .unwrap_or_else(|| "document".into()),
        message: e.message().to_string(),
    })?;
    let resolve = |p: &Path| {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            base_dir.join(p)
        }
    };

    let k = match doc.k {
        None => DEFAULT_K,
        Some(k) if k >= 1 => k as usize,
        Some(k) => return Err(invalid("k", format!("must be >= 1, got {k}"))),
    };

    let seeds: Vec<u64> = match doc.seeds {
        None => DEFAULT_SEEDS.to_vec(),
        Some(s) if s.is_empty() => return Err(invalid("seeds", "must not be empty")),
        Some(s) => {
            if s.iter().any(|&x| x < 0) {
                return Err(invalid("seeds", "seeds must be non-negative"));
            }
            let distinct: BTreeSet<i64> = s.iter().copied().collect();
            if distinct.len() != s.len() {
                return Err(invalid("seeds", "seeds must be distinct"));
            }
            s.into_iter().map(|x| x as u64).collect()
        }
    };

    let max_concurrency = match doc.max_concurrency {
        None => DEFAULT_MAX_CONCURRENCY,
        Some(m) if m >= 1 => m as usize,
        Some(m) => return Err(invalid("max_concurrency", format!("must be >= 1, got {m}"))),
    };

    let fuzzy_threshold = doc.fuzzy_threshold.unwrap_or(DEFAULT_FUZZY_THRESHOLD);
    if !(0.0..=1.0).contains(&fuzzy_threshold) {
        return Err(invalid("fuzzy_threshold", "must lie in [0, 1]"));
    }

    let prag_mode = match doc.prag_mode.as_deref() {
        None => PragMode::Corrected,
        Some(s) => s.parse().map_err(|e: String| invalid("prag_mode", e))?,
    };

    let temperature = doc.decoding.temperature.unwrap_or(0.7);
    if !(temperature.is_finite() && temperature >= 0.0) {
        return Err(invalid("decoding.temperature", "must be >= 0"));
    }
    let min_tokens = k * TOKENS_PER_ITEM;
    let max_tokens = match doc.decoding.max_tokens {
        None => 1024.max(min_tokens),
        Some(m) if m >= min_tokens as i64 => m as usize,
        Some(m) => {
            return Err(invalid(
                "decoding.max_tokens",
                format!("{m} is below k x {TOKENS_PER_ITEM} = {min_tokens}"),
            ))
        }
    };

    if doc.catalogs.is_empty() {
        return Err(invalid("catalogs", "at least one catalog is required"));
    }
    let mut domains = HashSet::new();
    let mut catalogs = Vec::new();
    for c in doc.catalogs {
        if c.domain.trim().is_empty() {
            return Err(invalid("catalogs.domain", "must not be empty"));
        }
        if !domains.insert(c.domain.clone()) {
            return Err(invalid("catalogs.domain", format!("duplicate domain `{}`", c.domain)));
        }
        let resolved = resolve(Path::new(&c.path));
        if !resolved.is_file() {
            return Err(ConfigError::MissingCatalog(resolved));
        }
        catalogs.push(CatalogSpec {
            path: c.path,
            resolved,
            domain: c.domain,
        });
    }

    let attributes = resolve_attributes(doc.attributes)?;
    let context = doc.context.map(|c| c.trim().to_string()).filter(|c| !c.is_empty());

    let backend = resolve_backend(doc.backend, &resolve, &attributes)?;
    let model_id = match doc.model_id {
        Some(m) if !m.trim().is_empty() => m,
        Some(_) => return Err(invalid("model_id", "must not be empty")),
        None => match &backend {
            BackendSpec::Live { model, .. } => model.clone(),
            BackendSpec::Fixture { backend_id, .. } => backend_id.clone(),
            BackendSpec::Synthetic { .. } => "synthetic".to_string(),
        },
    };

    let template_file = doc.template_file.as_deref().map(resolve);
    if let Some(tf) = &template_file {
        if !tf.is_file() {
            return Err(invalid("template_file", format!("{} does not exist", tf.display())));
        }
    }
    let template_id = match (doc.template, &template_file) {
        (Some(t), _) => t,
        (None, Some(_)) => "custom".to_string(),
        (None, None) => DEFAULT_TEMPLATE_ID.to_string(),
    };
    if template_file.is_none() && template_id != DEFAULT_TEMPLATE_ID {
        return Err(invalid(
            "template",
            format!("unknown template `{template_id}` (set template_file to load one)"),
        ));
    }

    for tag in &doc.analysis_tags {
        if !tag.split_once(':').is_some_and(|(a, b)| !a.is_empty() && !b.is_empty()) {
            return Err(invalid(
                "analysis_tags",
                format!("`{tag}` is not of the form namespace:value"),
            ));
        }
    }

    let mut config = ExperimentConfig {
        backend,
        model_id,
        catalogs,
        attributes,
        context,
        k,
        seeds,
        temperature,
        max_tokens,
        fuzzy_threshold,
        prag_mode,
        max_concurrency,
        cache_dir: resolve(&doc.cache_dir.unwrap_or_else(|| PathBuf::from("cache"))),
        output_dir: resolve(&doc.output_dir.unwrap_or_else(|| PathBuf::from("runs"))),
        template_id,
        template_file,
        analysis_tags: doc.analysis_tags,
        digest: String::new(),
    };
    config.digest = config.compute_digest();
    Ok(config)
}

fn resolve_attributes(raw: RawAttributes) -> Result<Vec<SensitiveAttribute>, ConfigError> {
    let mut attributes = match raw.categories {
        None => builtin_attributes(None).expect("unfiltered registry"),
        Some(cats) => {
            let mut out = Vec::new();
            for c in cats {
                out.extend(builtin_attributes(Some(&c)).map_err(|e| invalid("attributes.categories", e.to_string()))?);
            }
            out
        }
    };
    for a in raw.custom {
        let category = match a.category.as_deref() {
            None => AttributeCategory::Custom,
            Some(c) => c
                .parse()
                .map_err(|e: crate::promptgen::PromptError| invalid("attributes.custom.category", e.to_string()))?,
        };
        if a.phrase.trim().is_empty() {
            return Err(invalid(
                "attributes.custom.phrase",
                format!("empty phrase for `{}`", a.id),
            ));
        }
        attributes.push(SensitiveAttribute::new(a.id, category, a.phrase.trim()));
    }
    if attributes.is_empty() {
        return Err(invalid("attributes", "no attributes selected"));
    }
    let mut ids = HashSet::new();
    for a in &attributes {
        if a.id.trim().is_empty() || a.id == NEUTRAL_ID {
            return Err(invalid(
                "attributes",
                format!("reserved or empty attribute id `{}`", a.id),
            ));
        }
        if !ids.insert(a.id.as_str()) {
            return Err(invalid("attributes", format!("duplicate attribute id `{}`", a.id)));
        }
    }
    Ok(attributes)
}

fn resolve_backend(
    raw: RawBackend,
    resolve: &dyn Fn(&Path) -> PathBuf,
    attributes: &[SensitiveAttribute],
) -> Result<BackendSpec, ConfigError> {
    match raw.kind.as_str() {
        "live" => {
            let base_url = raw
                .base_url
                .ok_or_else(|| invalid("backend.base_url", "required for live backend"))?;
            url_check(&base_url)?;
            let model = raw
                .model
                .ok_or_else(|| invalid("backend.model", "required for live backend"))?;
            let defaults = RetryPolicy::default();
            let non_neg = |name: &str, v: Option<i64>, d: u64| -> Result<u64, ConfigError> {
                match v {
                    None => Ok(d),
                    Some(x) if x >= 0 => Ok(x as u64),
                    Some(x) => Err(invalid(name, format!("must be >= 0, got {x}"))),
                }
            };
            let timeout_secs = raw.timeout_secs.unwrap_or(120.0);
            if !(timeout_secs.is_finite() && timeout_secs > 0.0) {
                return Err(invalid("backend.timeout_secs", "must be > 0"));
            }
            Ok(BackendSpec::Live {
                base_url,
                model,
                timeout_secs,
                retry: RetryPolicy {
                    max_retries: non_neg("backend.max_retries", raw.max_retries, defaults.max_retries as u64)? as usize,
                    initial_backoff_ms: non_neg(
                        "backend.initial_backoff_ms",
                        raw.initial_backoff_ms,
                        defaults.initial_backoff_ms,
                    )?,
                    max_backoff_ms: non_neg("backend.max_backoff_ms", raw.max_backoff_ms, defaults.max_backoff_ms)?,
                },
                send_seed: raw.send_seed.unwrap_or(true),
            })
        }
        "fixture" => {
            let dir = raw
                .fixture_dir
                .ok_or_else(|| invalid("backend.fixture_dir", "required for fixture backend"))?;
            let dir = resolve(&dir);
            if !dir.is_dir() {
                return Err(invalid(
                    "backend.fixture_dir",
                    format!("{} is not a directory", dir.display()),
                ));
            }
            Ok(BackendSpec::Fixture {
                dir,
                backend_id: raw.backend_id.unwrap_or_else(|| "fixture".to_string()),
            })
        }
        "synthetic" => {
            let known: HashSet<&str> = attributes.iter().map(|a| a.id.as_str()).collect();
            for id in raw.affinity.keys() {
                if !known.contains(id.as_str()) {
                    return Err(invalid("backend.affinity", format!("unknown attribute id `{id}`")));
                }
            }
            let to_sets = |m: BTreeMap<String, Vec<String>>| -> BTreeMap<String, BTreeSet<String>> {
                m.into_iter()
                    .map(|(k, v)| (k.trim().to_string(), v.into_iter().collect()))
                    .collect()
            };
            let model = SyntheticBiasModel {
                base_weights: None,
                bias_strength: raw.bias_strength.unwrap_or(0.0),
                affinity: to_sets(raw.affinity),
                context_affinity: to_sets(raw.context_affinity),
                context_strength: raw.context_strength.unwrap_or(0.0),
                corruption: raw.corruption.unwrap_or_default(),
                corruption_rate: raw.corruption_rate.unwrap_or(1.0),
            };
            model.validate().map_err(|e| invalid("backend", e.to_string()))?;
            Ok(BackendSpec::Synthetic { model })
        }
        other => Err(invalid(
            "backend.kind",
            format!("unknown kind `{other}` (expected live, fixture or synthetic)"),
        )),
    }
}

fn url_check(url: &str) -> Result<(), ConfigError> {
    if url.starts_with("http://") || url.starts_with("https://") {
        Ok(())
    } else {
        Err(invalid("backend.base_url", format!("`{url}` is not an http(s) URL")))
    }
}
