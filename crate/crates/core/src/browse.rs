//! The browse tool: look up external information about an entity.
//!
//! Providers return raw hits; [`browse`] re-ranks them `1..=k`, truncates
//! snippets, and [`render_results`] turns them into the single tool message
//! handed back to the model.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::kernel::params::{self, ParameterTree};
use crate::kernel::trace::TraceKind;
use crate::kernel::{ArgType, ToolArg, ToolDescriptor, ToolError};
use crate::prepare::normalize_value;

pub const DEFAULT_TOP_K: usize = 5;
pub const SNIPPET_LIMIT: usize = 400;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchResult {
    pub title: String,
    pub snippet: String,
    pub url: String,
    pub rank: usize,
}

/// A hit as stored in fixtures and returned by providers, before ranking.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SearchHit {
    pub title: String,
    #[serde(default)]
    pub snippet: String,
    #[serde(default)]
    pub url: String,
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum BrowseError {
    #[error("search provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("search quota exceeded: {0}")]
    QuotaExceeded(String),
    #[error("invalid search: {0}")]
    InvalidQuery(String),
}

pub trait SearchProvider: Send + Sync {
    /// Returns up to `k` hits in provider order.
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BrowseError>;
}

pub fn browse(provider: &dyn SearchProvider, query: &str, k: usize) -> Result<Vec<SearchResult>, BrowseError> {
    if k == 0 {
        return Err(BrowseError::InvalidQuery("k must be at least 1".into()));
    }
    if query.trim().is_empty() {
        return Err(BrowseError::InvalidQuery("query must not be empty".into()));
    }
    let hits = provider.search(query, k)?;
    Ok(hits
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(i, hit)| SearchResult {
            title: hit.title,
            snippet: hit.snippet.chars().take(SNIPPET_LIMIT).collect(),
            url: hit.url,
            rank: i + 1,
        })
        .collect())
}

pub fn render_results(results: &[SearchResult]) -> String {
    if results.is_empty() {
        return "No search results.".into();
    }
    results
        .iter()
        .map(|r| format!("{}. {} — {} ({})", r.rank, r.title, r.snippet, r.url))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Model-callable `libem.match.browse` tool backed by `provider`.
pub fn browse_tool(provider: Arc<dyn SearchProvider>) -> ToolDescriptor {
    ToolDescriptor::new(
        "libem.match.browse",
        "Search the web for information about an entity, e.g. a product's specifications or release details.",
    )
    .arg(ToolArg::new("query", ArgType::Text, "Search query", true))
    .handler(move |ctx, args| {
        let query = args.require_text("query")?;
        let k = top_k(ctx.params);
        let started = Instant::now();
        let result = browse(provider.as_ref(), query, k).map_err(|e| ToolError::Failed(e.to_string()));
        if let Err(e) = &result {
            ctx.trace.record(
                ctx.trace
                    .event(TraceKind::Error, "libem.match.browse")
                    .duration(started.elapsed())
                    .payload(&e.to_string()),
            );
        }
        result.map(|r| render_results(&r))
    })
}

fn top_k(tree: &ParameterTree) -> usize {
    tree.number(params::BROWSE_TOP_K)
        .ok()
        .filter(|k| *k >= 1.0)
        .map_or(DEFAULT_TOP_K, |k| k as usize)
}

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("fixture line {line}: {message}")]
pub struct FixtureParseError {
    pub line: usize,
    pub message: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct FixtureLine {
    query: String,
    results: Vec<SearchHit>,
}

/// Replays search results from a JSON-lines fixture:
/// `{"query": "...", "results": [{"title", "snippet", "url"}, ...]}`.
/// Queries are matched after lowercasing and whitespace collapsing; an absent
/// query yields no results.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct FixtureProvider {
    entries: BTreeMap<String, Vec<SearchHit>>,
}

impl FixtureProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, query: &str, hits: Vec<SearchHit>) {
        self.entries.entry(normalize_value(query)).or_default().extend(hits);
    }

    pub fn parse(text: &str) -> Result<Self, FixtureParseError> {
        let mut provider = Self::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let parsed: FixtureLine = serde_json::from_str(line).map_err(|e| FixtureParseError {
                line: i + 1,
                message: e.to_string(),
            })?;
            provider.insert(&parsed.query, parsed.results);
        }
        Ok(provider)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FixtureParseError> {
        let text = std::fs::read_to_string(path.as_ref()).map_err(|e| FixtureParseError {
            line: 0,
            message: format!("{}: {e}", path.as_ref().display()),
        })?;
        Self::parse(&text)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> std::io::Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        for (query, results) in &self.entries {
            let line = FixtureLine {
                query: query.clone(),
                results: results.clone(),
            };
            serde_json::to_writer(&mut out, &line)?;
            out.write_all(b"\n")?;
        }
        out.flush()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

impl SearchProvider for FixtureProvider {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BrowseError> {
        Ok(self
            .entries
            .get(&normalize_value(query))
            .map(|hits| hits.iter().take(k).cloned().collect())
            .unwrap_or_default())
    }
}

/// Spaces requests at least `1 / rate` seconds apart.
#[derive(Debug)]
struct RateLimiter {
    interval: Duration,
    next: Mutex<Instant>,
}

impl RateLimiter {
    fn new(per_second: f64) -> Self {
        let interval = if per_second > 0.0 {
            Duration::from_secs_f64(1.0 / per_second)
        } else {
            Duration::ZERO
        };
        Self {
            interval,
            next: Mutex::new(Instant::now()),
        }
    }

    fn acquire(&self) {
        let wait = {
            let mut next = self.next.lock().unwrap_or_else(|p| p.into_inner());
            let now = Instant::now();
            let slot = (*next).max(now);
            *next = slot + self.interval;
            slot - now
        };
        if !wait.is_zero() {
            std::thread::sleep(wait);
        }
    }
}

#[derive(Debug, Clone)]
pub struct HttpSearchConfig {
    pub endpoint: String,
    pub api_key: Option<String>,
    pub requests_per_second: f64,
    pub timeout: Duration,
}

impl HttpSearchConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            api_key: None,
            requests_per_second: 5.0,
            timeout: Duration::from_secs(30),
        }
    }

    /// Reads `EM_SEARCH_URL` and `EM_SEARCH_KEY`; `None` when no URL is set.
    pub fn from_env() -> Option<Self> {
        let url = std::env::var("EM_SEARCH_URL").ok().filter(|u| !u.trim().is_empty())?;
        Some(Self {
            api_key: std::env::var("EM_SEARCH_KEY").ok().filter(|k| !k.trim().is_empty()),
            ..Self::new(url)
        })
    }
}

/// Generic JSON search API client: `GET <endpoint>?q=<query>&num=<k>` with a
/// bearer key. Accepts result arrays under `results`, `items`,
/// `organic_results` or `organic`, with `title`, `snippet`/`description` and
/// `url`/`link` fields.
pub struct HttpSearchProvider {
    config: HttpSearchConfig,
    agent: ureq::Agent,
    limiter: RateLimiter,
}

impl HttpSearchProvider {
    pub fn new(config: HttpSearchConfig) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(config.timeout))
            .http_status_as_error(false)
            .build()
            .into();
        let limiter = RateLimiter::new(config.requests_per_second);
        Self { config, agent, limiter }
    }
}

fn parse_hits(value: &Value) -> Vec<SearchHit> {
    let list = ["results", "items", "organic_results", "organic"]
        .iter()
        .find_map(|k| value.get(*k).and_then(Value::as_array))
        .or_else(|| value.as_array());
    let text = |v: &Value, keys: &[&str]| {
        keys.iter()
            .find_map(|k| v.get(*k).and_then(Value::as_str))
            .unwrap_or_default()
            .trim()
            .to_string()
    };
    list.into_iter()
        .flatten()
        .filter_map(|v| {
            let hit = SearchHit {
                title: text(v, &["title", "name"]),
                snippet: text(v, &["snippet", "description", "content"]),
                url: text(v, &["url", "link"]),
            };
            (!hit.title.is_empty() || !hit.url.is_empty()).then_some(hit)
        })
        .collect()
}

impl SearchProvider for HttpSearchProvider {
    fn search(&self, query: &str, k: usize) -> Result<Vec<SearchHit>, BrowseError> {
        self.limiter.acquire();
        let mut req = self
            .agent
            .get(&self.config.endpoint)
            .query("q", query)
            .query("num", k.to_string());
        if let Some(key) = &self.config.api_key {
            req = req.header("Authorization", &format!("Bearer {key}"));
        }
        let mut resp = req.call().map_err(|e| BrowseError::ProviderUnavailable(e.to_string()))?;
        let status = resp.status().as_u16();
        let body = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| BrowseError::ProviderUnavailable(e.to_string()))?;
        match status {
            200..=299 => {}
            429 => return Err(BrowseError::QuotaExceeded(body)),
            _ => return Err(BrowseError::ProviderUnavailable(format!("HTTP {status}: {body}"))),
        }
        let value: Value = serde_json::from_str(&body)
            .map_err(|e| BrowseError::ProviderUnavailable(format!("invalid JSON: {e}")))?;
        Ok(parse_hits(&value).into_iter().take(k).collect())
    }
}
