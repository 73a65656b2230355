//! Wires settings and flags into a ready [`Matcher`] and catalog store.

use std::fs::File;
use std::path::PathBuf;
use std::sync::Arc;

use anyhow::Context;
use em_core::backend::{
    CachedBackend, ChatBackend, HttpBackend, HttpConfig, MockBackend, ResponseCache, DEFAULT_CACHE_CAPACITY,
};
use em_core::browse::{FixtureProvider, HttpSearchConfig, HttpSearchProvider, SearchProvider};
use em_core::catalog::CatalogStore;
use em_core::kernel::{params, TraceCollector};
use em_core::tools::default_registry;
use em_core::{Matcher, ParamValue, ParameterTree};

use crate::config::Settings;
use crate::error::CliError;

#[derive(Debug, Clone, Default)]
pub struct RuntimeOptions {
    /// Scripted JSONL replies instead of a live model API.
    pub mock_script: Option<PathBuf>,
    /// Recorded search results instead of a live search API.
    pub search_fixture: Option<PathBuf>,
    pub no_cache: bool,
    pub trace_file: Option<PathBuf>,
}

pub struct Runtime {
    pub settings: Settings,
    pub matcher: Matcher,
    pub store: CatalogStore,
    /// Built-in parameters with the configured model applied.
    pub defaults: ParameterTree,
}

impl Runtime {
    pub fn build(settings: &Settings, options: &RuntimeOptions) -> Result<Self, CliError> {
        let backend = chat_backend(settings, options)?;
        let search = search_provider(settings, options)?;
        let registry = default_registry(search).context("building the tool registry")?;
        let mut matcher = Matcher::new(Arc::new(registry), backend);
        if let Some(path) = &options.trace_file {
            let file = File::create(path).with_context(|| format!("cannot create trace file {}", path.display()))?;
            matcher = matcher.with_trace(Arc::new(TraceCollector::with_sink(file)));
        }
        Ok(Self {
            settings: settings.clone(),
            matcher,
            store: CatalogStore::new(settings.catalog_dir()),
            defaults: default_params(settings),
        })
    }
}

pub fn default_params(settings: &Settings) -> ParameterTree {
    let tree = ParameterTree::defaults();
    match &settings.model {
        Some(model) => tree
            .set(params::MATCH_MODEL, ParamValue::Prompt(model.clone()))
            .expect("model parameter is declared"),
        None => tree,
    }
}

fn chat_backend(settings: &Settings, options: &RuntimeOptions) -> Result<Arc<dyn ChatBackend>, CliError> {
    let inner: Arc<dyn ChatBackend> = match &options.mock_script {
        Some(path) => Arc::new(MockBackend::load(path).map_err(|e| CliError::usage(format!("mock script: {e}")))?),
        None => {
            let Some(api_key) = settings.api_key.clone() else {
                return Err(CliError::failed(
                    "no API key configured; set EM_API_KEY, add api_key to the config file, or pass --mock-script",
                ));
            };
            let mut config = HttpConfig {
                api_key: Some(api_key),
                ..HttpConfig::default()
            };
            if let Some(url) = &settings.base_url {
                config.base_url = url.clone();
            }
            Arc::new(HttpBackend::new(config))
        }
    };
    if options.no_cache {
        return Ok(inner);
    }
    let cache = match &settings.cache_dir {
        Some(dir) => ResponseCache::on_disk(dir, DEFAULT_CACHE_CAPACITY)
            .with_context(|| format!("cannot open cache directory {}", dir.display()))?,
        None => ResponseCache::in_memory(DEFAULT_CACHE_CAPACITY),
    };
    Ok(Arc::new(CachedBackend::new(inner, Arc::new(cache))))
}

fn search_provider(settings: &Settings, options: &RuntimeOptions) -> Result<Arc<dyn SearchProvider>, CliError> {
    if let Some(path) = &options.search_fixture {
        let fixture = FixtureProvider::load(path).map_err(|e| CliError::usage(format!("search fixture: {e}")))?;
        return Ok(Arc::new(fixture));
    }
    match &settings.search_url {
        Some(url) => {
            let config = HttpSearchConfig {
                api_key: settings.search_key.clone(),
                ..HttpSearchConfig::new(url.clone())
            };
            Ok(Arc::new(HttpSearchProvider::new(config)))
        }
        None => Ok(Arc::new(FixtureProvider::new())),
    }
}
