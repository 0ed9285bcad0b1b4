//! Sources of raw completion text.
//!
//! Three interchangeable backends implement [`Backend`]:
//!
//! * [`LiveBackend`] speaks the chat-completion JSON protocol over HTTP
//!   (`POST {base_url}/v1/chat/completions`) with bounded retries.
//! * [`FixtureBackend`] replays stored responses named `{fingerprint}.txt`.
//! * [`SyntheticBackend`] samples rankings from a Plackett–Luce model whose
//!   item weights are boosted by `exp(β)` for attribute-affine tags.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::json;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::catalog::{Catalog, CatalogHash};
use crate::promptgen::{PromptInstance, UserSpec};

/// Env var holding the bearer token for the live backend.
pub const API_KEY_ENV: &str = "AUDIT_API_KEY";

/// Output tokens budgeted per requested item when sizing `max_tokens`.
pub const TOKENS_PER_ITEM: usize = 24;

#[derive(Debug, Error)]
pub enum BackendError {
    #[error("endpoint {url} unreachable after {attempts} attempt(s): {reason}")]
    EndpointUnreachable {
        url: String,
        attempts: usize,
        reason: String,
    },
    #[error("authentication rejected (HTTP {status})")]
    AuthFailure { status: u16 },
    #[error("gave up after {attempts} attempt(s); last error: {last_error}")]
    RetriesExhausted { attempts: usize, last_error: String },
    #[error("endpoint returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },
    #[error("malformed completion payload: {0}")]
    BadResponse(String),
    #[error("no fixture response stored for fingerprint {0}")]
    FixtureMiss(String),
    #[error("k = {k} exceeds catalog size {catalog_size}")]
    KTooLarge { k: usize, catalog_size: usize },
    #[error("synthetic backend has no catalog with hash {0}")]
    UnknownCatalog(CatalogHash),
    #[error("invalid synthetic model: {0}")]
    InvalidModel(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodingParams {
    pub temperature: f64,
    pub max_tokens: usize,
    pub seed: u64,
}

impl Default for DecodingParams {
    fn default() -> Self {
        Self {
            temperature: 0.7,
            max_tokens: 1024,
            seed: 0,
        }
    }
}

impl DecodingParams {
    pub fn with_seed(&self, seed: u64) -> Self {
        Self { seed, ..self.clone() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawResponse {
    pub prompt_fingerprint: String,
    pub backend_id: String,
    pub text: String,
    pub latency_ms: f64,
    pub retrieved_from_cache: bool,
}

/// Cache key for a completion: SHA-256 over the prompt text, backend id and
/// decoding parameters.
pub fn fingerprint(text: &str, backend_id: &str, params: &DecodingParams) -> String {
    let canonical = json!({
        "backend_id": backend_id,
        "max_tokens": params.max_tokens,
        "prompt": text,
        "seed": params.seed,
        "temperature": params.temperature,
    });
    let mut hasher = Sha256::new();
    hasher.update(canonical.to_string().as_bytes());
    hex::encode(hasher.finalize())
}

pub trait Backend: Send + Sync {
    /// Stable identifier; part of every fingerprint and the cache path.
    fn id(&self) -> &str;

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError>;
}

impl<B: Backend + ?Sized> Backend for Arc<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError> {
        (**self).complete(prompt, params)
    }
}

impl<B: Backend + ?Sized> Backend for Box<B> {
    fn id(&self) -> &str {
        (**self).id()
    }

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError> {
        (**self).complete(prompt, params)
    }
}

/// Replaces characters that are unsafe in a path component.
pub fn sanitize_id(raw: &str) -> String {
    raw.chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

// ---------------------------------------------------------------------------
// live

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetryPolicy {
    pub max_retries: usize,
    pub initial_backoff_ms: u64,
    pub max_backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self {
            max_retries: 3,
            initial_backoff_ms: 500,
            max_backoff_ms: 8_000,
        }
    }
}

impl RetryPolicy {
    /// Delay before retry number `retry` (0-based): doubles each time, capped.
    pub fn backoff(&self, retry: usize) -> Duration {
        let factor = 1u64.checked_shl(retry.min(32) as u32).unwrap_or(u64::MAX);
        Duration::from_millis(self.initial_backoff_ms.saturating_mul(factor).min(self.max_backoff_ms))
    }
}

fn is_transient_status(status: u16) -> bool {
    status == 429 || status == 408 || (500..600).contains(&status)
}

#[derive(Debug, Clone)]
pub struct LiveBackend {
    id: String,
    base_url: String,
    model: String,
    api_key: Option<String>,
    send_seed: bool,
    retry: RetryPolicy,
    agent: ureq::Agent,
}

impl LiveBackend {
    pub fn new(base_url: impl Into<String>, model: impl Into<String>, timeout: Duration, retry: RetryPolicy) -> Self {
        let model = model.into();
        Self {
            id: format!("live-{}", sanitize_id(&model)),
            base_url: base_url.into().trim_end_matches('/').to_string(),
            model,
            api_key: std::env::var(API_KEY_ENV).ok().filter(|k| !k.is_empty()),
            send_seed: true,
            retry,
            agent: ureq::AgentBuilder::new().timeout(timeout).build(),
        }
    }

    pub fn with_api_key(mut self, key: Option<String>) -> Self {
        self.api_key = key;
        self
    }

    /// Whether to forward the sampling seed in the request body.
    pub fn with_seed_forwarding(mut self, send_seed: bool) -> Self {
        self.send_seed = send_seed;
        self
    }

    pub fn endpoint(&self) -> String {
        format!("{}/v1/chat/completions", self.base_url)
    }

    fn request_body(&self, prompt: &str, params: &DecodingParams) -> serde_json::Value {
        let mut body = json!({
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": params.temperature,
            "max_tokens": params.max_tokens,
        });
        if self.send_seed {
            body["seed"] = json!(params.seed);
        }
        body
    }

    fn send_once(&self, body: &serde_json::Value) -> Result<String, Attempt> {
        let mut req = self
            .agent
            .post(&self.endpoint())
            .set("Content-Type", "application/json");
        if let Some(key) = &self.api_key {
            req = req.set("Authorization", &format!("Bearer {key}"));
        }
        match req.send_string(&body.to_string()) {
            Ok(resp) => {
                let payload: serde_json::Value = resp
                    .into_json()
                    .map_err(|e| Attempt::Fatal(BackendError::BadResponse(e.to_string())))?;
                payload
                    .pointer("/choices/0/message/content")
                    .and_then(|c| c.as_str())
                    .map(str::to_string)
                    .ok_or_else(|| {
                        Attempt::Fatal(BackendError::BadResponse("missing choices[0].message.content".into()))
                    })
            }
            Err(ureq::Error::Status(status, resp)) => {
                let body = resp.into_string().unwrap_or_default();
                if status == 401 || status == 403 {
                    Err(Attempt::Fatal(BackendError::AuthFailure { status }))
                } else if is_transient_status(status) {
                    Err(Attempt::Http(format!("HTTP {status}")))
                } else {
                    Err(Attempt::Fatal(BackendError::HttpStatus { status, body }))
                }
            }
            Err(ureq::Error::Transport(t)) => Err(Attempt::Transport(t.to_string())),
        }
    }
}

enum Attempt {
    /// No HTTP response at all (refused, DNS, timeout).
    Transport(String),
    /// Transient HTTP status.
    Http(String),
    Fatal(BackendError),
}

impl Backend for LiveBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError> {
        let body = self.request_body(&prompt.text, params);
        let started = Instant::now();
        let attempts = 1 + self.retry.max_retries;
        let mut got_http_response = false;
        let mut last_error = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                std::thread::sleep(self.retry.backoff(attempt - 1));
            }
            match self.send_once(&body) {
                Ok(text) => {
                    return Ok(RawResponse {
                        prompt_fingerprint: fingerprint(&prompt.text, &self.id, params),
                        backend_id: self.id.clone(),
                        text,
                        latency_ms: started.elapsed().as_secs_f64() * 1e3,
                        retrieved_from_cache: false,
                    })
                }
                Err(Attempt::Fatal(e)) => return Err(e),
                Err(Attempt::Http(e)) => {
                    got_http_response = true;
                    log::warn!(
                        "transient failure from {} (attempt {}): {e}",
                        self.endpoint(),
                        attempt + 1
                    );
                    last_error = e;
                }
                Err(Attempt::Transport(e)) => {
                    log::warn!(
                        "transport failure to {} (attempt {}): {e}",
                        self.endpoint(),
                        attempt + 1
                    );
                    last_error = e;
                }
            }
        }
        if got_http_response {
            Err(BackendError::RetriesExhausted { attempts, last_error })
        } else {
            Err(BackendError::EndpointUnreachable {
                url: self.endpoint(),
                attempts,
                reason: last_error,
            })
        }
    }
}

// ---------------------------------------------------------------------------
// fixture

#[derive(Debug, Clone)]
pub struct FixtureBackend {
    id: String,
    dir: PathBuf,
}

impl FixtureBackend {
    /// `backend_id` must be the id of the backend that produced the stored
    /// responses, since it is part of every fingerprint.
    pub fn new(dir: impl Into<PathBuf>, backend_id: impl Into<String>) -> Self {
        Self {
            id: backend_id.into(),
            dir: dir.into(),
        }
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }
}

impl Backend for FixtureBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError> {
        let fp = fingerprint(&prompt.text, &self.id, params);
        let path = self.dir.join(format!("{fp}.txt"));
        match std::fs::read_to_string(&path) {
            Ok(text) => Ok(RawResponse {
                prompt_fingerprint: fp,
                backend_id: self.id.clone(),
                text,
                latency_ms: 0.0,
                retrieved_from_cache: true,
            }),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(BackendError::FixtureMiss(fp)),
            Err(e) => Err(e.into()),
        }
    }
}

// ---------------------------------------------------------------------------
// synthetic

/// Output corruption injected into synthetic responses to exercise the parser.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Corruption {
    #[default]
    None,
    /// First title repeated at positions 1 and 2.
    Repeat,
    /// One off-catalog title replaces the middle entry.
    Hallucinate,
}

/// Title injected by [`Corruption::Hallucinate`]; far from any real title.
pub const HALLUCINATED_TITLE: &str = "Qzxv Wrplk Nonexistent Entry";

/// A Plackett–Luce recommender whose item weights depend on the user.
///
/// Item `i` has weight `base_i`, multiplied by `exp(bias_strength)` when it
/// carries any tag in `affinity[attribute id]` and by `exp(context_strength)`
/// when it carries any tag in `context_affinity[context clause]`. The neutral
/// user never receives the attribute boost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticBiasModel {
    /// Per-item base weights in catalog order; `None` means `1 / (position + 1)`.
    #[serde(default)]
    pub base_weights: Option<Vec<f64>>,
    pub bias_strength: f64,
    #[serde(default)]
    pub affinity: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub context_affinity: BTreeMap<String, BTreeSet<String>>,
    #[serde(default)]
    pub context_strength: f64,
    #[serde(default)]
    pub corruption: Corruption,
    /// Fraction of responses that receive the corruption.
    #[serde(default = "one")]
    pub corruption_rate: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for SyntheticBiasModel {
    fn default() -> Self {
        Self {
            base_weights: None,
            bias_strength: 0.0,
            affinity: BTreeMap::new(),
            context_affinity: BTreeMap::new(),
            context_strength: 0.0,
            corruption: Corruption::None,
            corruption_rate: 1.0,
        }
    }
}

impl SyntheticBiasModel {
    pub fn new(bias_strength: f64) -> Self {
        Self {
            bias_strength,
            ..Default::default()
        }
    }

    pub fn with_affinity<I, S>(mut self, attribute_id: &str, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.affinity
            .entry(attribute_id.to_string())
            .or_default()
            .extend(tags.into_iter().map(Into::into));
        self
    }

    pub fn with_context_affinity<I, S>(mut self, context: &str, strength: f64, tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        self.context_strength = strength;
        self.context_affinity
            .entry(context.to_string())
            .or_default()
            .extend(tags.into_iter().map(Into::into));
        self
    }

    pub fn with_corruption(mut self, corruption: Corruption, rate: f64) -> Self {
        self.corruption = corruption;
        self.corruption_rate = rate;
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        let finite_non_negative = |x: f64| x.is_finite() && x >= 0.0;
        if !finite_non_negative(self.bias_strength) {
            return Err(BackendError::InvalidModel(
                "bias_strength must be finite and >= 0".into(),
            ));
        }
        if !finite_non_negative(self.context_strength) {
            return Err(BackendError::InvalidModel(
                "context_strength must be finite and >= 0".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.corruption_rate) {
            return Err(BackendError::InvalidModel("corruption_rate must lie in [0, 1]".into()));
        }
        if let Some(w) = &self.base_weights {
            if w.iter().any(|&x| !(x.is_finite() && x > 0.0)) {
                return Err(BackendError::InvalidModel("base weights must be finite and > 0".into()));
            }
        }
        Ok(())
    }

    /// Short digest of the model parameters, used in the backend id.
    pub fn digest(&self) -> String {
        let json = serde_json::to_string(self).expect("model serializes");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }

    /// Per-item sampling weights for `user` over `catalog`, in catalog order.
    pub fn weights(&self, user: &UserSpec, catalog: &Catalog) -> Result<Vec<f64>, BackendError> {
        let base: Vec<f64> = match &self.base_weights {
            Some(w) if w.len() == catalog.len() => w.clone(),
            Some(w) => {
                return Err(BackendError::InvalidModel(format!(
                    "{} base weights for a catalog of {} items",
                    w.len(),
                    catalog.len()
                )))
            }
            None => (0..catalog.len()).map(|i| 1.0 / (i as f64 + 1.0)).collect(),
        };
        let attr_tags = user.attribute.as_ref().and_then(|a| self.affinity.get(&a.id));
        let ctx_tags = user.context.as_ref().and_then(|c| self.context_affinity.get(c.trim()));
        let attr_boost = self.bias_strength.exp();
        let ctx_boost = self.context_strength.exp();
        Ok(catalog
            .items()
            .iter()
            .zip(base)
            .map(|(item, w)| {
                let mut w = w;
                if attr_tags.is_some_and(|tags| tags.iter().any(|t| item.has_tag(t))) {
                    w *= attr_boost;
                }
                if ctx_tags.is_some_and(|tags| tags.iter().any(|t| item.has_tag(t))) {
                    w *= ctx_boost;
                }
                w
            })
            .collect())
    }
}

/// The pseudo-random stream used for a synthetic draw.
///
/// Keyed by seed and catalog only, so every user shares the same uniforms for
/// a given seed; with no boosts in play all users draw identical rankings.
pub fn synth_stream(seed: u64, catalog_hash: &CatalogHash) -> ChaCha8Rng {
    let mut hasher = Sha256::new();
    hasher.update(b"recaudit-synthetic-v1");
    hasher.update(seed.to_le_bytes());
    hasher.update(catalog_hash.0.as_bytes());
    ChaCha8Rng::from_seed(hasher.finalize().into())
}

/// Draws a top-k ranking by sequential weighted sampling without replacement.
pub fn synth_rank(
    model: &SyntheticBiasModel,
    user: &UserSpec,
    catalog: &Catalog,
    k: usize,
    seed: u64,
) -> Result<Vec<String>, BackendError> {
    if k > catalog.len() {
        return Err(BackendError::KTooLarge {
            k,
            catalog_size: catalog.len(),
        });
    }
    let weights = model.weights(user, catalog)?;
    let mut rng = synth_stream(seed, catalog.content_hash());
    let mut taken = vec![false; weights.len()];
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let total: f64 = weights.iter().zip(&taken).filter(|(_, t)| !**t).map(|(w, _)| w).sum();
        let target = rng.gen::<f64>() * total;
        let mut acc = 0.0;
        let mut chosen = None;
        for (idx, w) in weights.iter().enumerate() {
            if taken[idx] {
                continue;
            }
            acc += w;
            chosen = Some(idx);
            if target < acc {
                break;
            }
        }
        let idx = chosen.expect("k <= catalog size leaves an item to draw");
        taken[idx] = true;
        out.push(catalog.items()[idx].id.clone());
    }
    Ok(out)
}

/// Renders a synthetic draw as a numbered list of titles, applying the
/// model's corruption mode when selected.
pub fn synth_complete_text(
    model: &SyntheticBiasModel,
    user: &UserSpec,
    catalog: &Catalog,
    k: usize,
    seed: u64,
) -> Result<String, BackendError> {
    let ids = synth_rank(model, user, catalog, k, seed)?;
    let mut titles: Vec<&str> = ids
        .iter()
        .map(|id| catalog.get(id).expect("drawn from catalog").title.as_str())
        .collect();
    if model.corruption != Corruption::None && corruption_selected(model.corruption_rate, user, seed) {
        match model.corruption {
            Corruption::Repeat => {
                titles.insert(1, titles[0]);
                if titles.len() > k.max(2) {
                    titles.pop();
                }
            }
            Corruption::Hallucinate => {
                let mid = titles.len() / 2;
                titles[mid] = HALLUCINATED_TITLE;
            }
            Corruption::None => {}
        }
    }
    Ok(titles
        .iter()
        .enumerate()
        .map(|(i, t)| format!("{}. {}", i + 1, t))
        .collect::<Vec<_>>()
        .join("\n"))
}

fn corruption_selected(rate: f64, user: &UserSpec, seed: u64) -> bool {
    if rate >= 1.0 {
        return true;
    }
    let mut hasher = Sha256::new();
    hasher.update(b"recaudit-corruption");
    hasher.update(seed.to_le_bytes());
    hasher.update(user.attribute_id().as_bytes());
    let mut rng = ChaCha8Rng::from_seed(hasher.finalize().into());
    rng.gen::<f64>() < rate
}

#[derive(Debug, Clone)]
pub struct SyntheticBackend {
    id: String,
    model: SyntheticBiasModel,
    catalogs: HashMap<CatalogHash, Arc<Catalog>>,
}

impl SyntheticBackend {
    pub fn new(
        model: SyntheticBiasModel,
        catalogs: impl IntoIterator<Item = Arc<Catalog>>,
    ) -> Result<Self, BackendError> {
        model.validate()?;
        Ok(Self {
            id: format!("synthetic-{}", model.digest()),
            catalogs: catalogs.into_iter().map(|c| (c.content_hash().clone(), c)).collect(),
            model,
        })
    }

    pub fn model(&self) -> &SyntheticBiasModel {
        &self.model
    }
}

impl Backend for SyntheticBackend {
    fn id(&self) -> &str {
        &self.id
    }

    fn complete(&self, prompt: &PromptInstance, params: &DecodingParams) -> Result<RawResponse, BackendError> {
        let catalog = self
            .catalogs
            .get(&prompt.catalog_hash)
            .ok_or_else(|| BackendError::UnknownCatalog(prompt.catalog_hash.clone()))?;
        let text = synth_complete_text(&self.model, &prompt.user_spec, catalog, prompt.k, params.seed)?;
        Ok(RawResponse {
            prompt_fingerprint: fingerprint(&prompt.text, &self.id, params),
            backend_id: self.id.clone(),
            text,
            latency_ms: 0.0,
            retrieved_from_cache: false,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::catalog::Item;
    use crate::promptgen::{AttributeCategory, SensitiveAttribute};

    fn tagged_catalog(n: usize, action_every: usize) -> Catalog {
        let items = (0..n)
            .map(|i| {
                let item = Item::new(format!("m{i}"), format!("Movie number {i}"));
                if i % action_every == 0 {
                    item.with_tags(["genre:action"])
                } else {
                    item.with_tags(["genre:drama"])
                }
            })
            .collect();
        Catalog::from_items("movie", items).unwrap()
    }

    fn girl() -> UserSpec {
        UserSpec::with_attribute(SensitiveAttribute::new("girl", AttributeCategory::Gender, "a girl"))
    }

    #[test]
    fn fingerprint_is_deterministic_and_sensitive() {
        let p = DecodingParams::default();
        let a = fingerprint("prompt", "b", &p);
        assert_eq!(a, fingerprint("prompt", "b", &p));
        assert_ne!(a, fingerprint("prompt!", "b", &p));
        assert_ne!(a, fingerprint("prompt", "c", &p));
        assert_ne!(a, fingerprint("prompt", "b", &p.with_seed(1)));
        assert_eq!(a.len(), 64);
    }

    #[test]
    fn backoff_doubles_and_caps() {
        let r = RetryPolicy {
            max_retries: 5,
            initial_backoff_ms: 100,
            max_backoff_ms: 350,
        };
        assert_eq!(r.backoff(0), Duration::from_millis(100));
        assert_eq!(r.backoff(1), Duration::from_millis(200));
        assert_eq!(r.backoff(2), Duration::from_millis(350));
        assert_eq!(r.backoff(60), Duration::from_millis(350));
    }

    #[test]
    fn zero_bias_is_user_independent() {
        let cat = tagged_catalog(30, 3);
        let model = SyntheticBiasModel::new(0.0).with_affinity("girl", ["genre:action"]);
        for seed in 0..10 {
            assert_eq!(
                synth_rank(&model, &UserSpec::neutral(), &cat, 10, seed).unwrap(),
                synth_rank(&model, &girl(), &cat, 10, seed).unwrap()
            );
        }
    }

    #[test]
    fn huge_bias_fills_top_k_with_affine_items() {
        let cat = tagged_catalog(40, 2);
        let model = SyntheticBiasModel::new(60.0).with_affinity("girl", ["genre:action"]);
        let ids = synth_rank(&model, &girl(), &cat, 20, 3).unwrap();
        assert!(ids.iter().all(|id| cat.get(id).unwrap().has_tag("genre:action")));
    }

    #[test]
    fn neutral_never_boosted() {
        let cat = tagged_catalog(10, 2);
        let model = SyntheticBiasModel::new(2.0).with_affinity("girl", ["genre:action"]);
        let plain = model.weights(&UserSpec::neutral(), &cat).unwrap();
        assert_eq!(plain, (0..10).map(|i| 1.0 / (i as f64 + 1.0)).collect::<Vec<_>>());
        let boosted = model.weights(&girl(), &cat).unwrap();
        assert!((boosted[0] - 2f64.exp()).abs() < 1e-12);
        assert!((boosted[1] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn k_too_large() {
        let cat = tagged_catalog(5, 2);
        let model = SyntheticBiasModel::default();
        assert!(matches!(
            synth_rank(&model, &girl(), &cat, 6, 0),
            Err(BackendError::KTooLarge { .. })
        ));
    }

    #[test]
    fn renders_numbered_titles() {
        let cat = tagged_catalog(10, 2);
        let model = SyntheticBiasModel::default();
        let ids = synth_rank(&model, &girl(), &cat, 3, 1).unwrap();
        let text = synth_complete_text(&model, &girl(), &cat, 3, 1).unwrap();
        let expected: Vec<String> = ids
            .iter()
            .enumerate()
            .map(|(i, id)| format!("{}. {}", i + 1, cat.get(id).unwrap().title))
            .collect();
        assert_eq!(text, expected.join("\n"));
    }

    #[test]
    fn corruption_modes() {
        let cat = tagged_catalog(10, 2);
        let repeat = SyntheticBiasModel::default().with_corruption(Corruption::Repeat, 1.0);
        let text = synth_complete_text(&repeat, &girl(), &cat, 4, 1).unwrap();
        let lines: Vec<&str> = text.lines().map(|l| l.split_once(". ").unwrap().1).collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[0], lines[1]);

        let halluc = SyntheticBiasModel::default().with_corruption(Corruption::Hallucinate, 1.0);
        let text = synth_complete_text(&halluc, &girl(), &cat, 4, 1).unwrap();
        assert_eq!(text.matches(HALLUCINATED_TITLE).count(), 1);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn invalid_models_are_rejected() {
        assert!(SyntheticBiasModel::new(-1.0).validate().is_err());
        let m = SyntheticBiasModel {
            base_weights: Some(vec![1.0, 0.0]),
            ..Default::default()
        };
        assert!(m.validate().is_err());
    }

    #[test]
    fn fixture_backend_misses_and_hits() {
        let dir = tempfile::tempdir().unwrap();
        let backend = FixtureBackend::new(dir.path(), "fixture");
        let cat = tagged_catalog(5, 2);
        let prompt = crate::promptgen::render_prompt(&UserSpec::neutral(), &cat, 2, "default-v1").unwrap();
        let params = DecodingParams::default();
        let fp = match backend.complete(&prompt, &params) {
            Err(BackendError::FixtureMiss(fp)) => fp,
            other => panic!("expected miss, got {other:?}"),
        };
        std::fs::write(dir.path().join(format!("{fp}.txt")), "1. Movie number 0").unwrap();
        let resp = backend.complete(&prompt, &params).unwrap();
        assert_eq!(resp.text, "1. Movie number 0");
        assert!(resp.retrieved_from_cache);
    }
}
