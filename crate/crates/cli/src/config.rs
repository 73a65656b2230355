//! Runtime settings: environment variables, optionally overridden by a TOML
//! config file.
//!
//! The file is looked up at `--config <path>`, else `$EM_CONFIG`, else
//! `./em.toml` when it exists. Every key is optional:
//!
//! ```toml
//! api_key = "sk-..."
//! base_url = "https://api.openai.com/v1"
//! model = "gpt-4-turbo"
//! search_url = "https://search.example.com/api"
//! search_key = "..."
//! catalog_dir = "catalog"
//! cache_dir = ".em-cache"
//! seed = 7
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_CONFIG_FILE: &str = "em.toml";
pub const DEFAULT_CATALOG_DIR: &str = "catalog";

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read config file {path}: {message}")]
    Read { path: String, message: String },
    #[error("invalid config file {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid value for {name}: {message}")]
    Env { name: String, message: String },
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Settings {
    pub api_key: Option<String>,
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub search_url: Option<String>,
    pub search_key: Option<String>,
    pub catalog_dir: Option<PathBuf>,
    pub cache_dir: Option<PathBuf>,
    pub seed: Option<u64>,
}

impl Settings {
    /// Reads `EM_API_KEY`, `EM_BASE_URL`, `EM_MODEL`, `EM_SEARCH_URL`,
    /// `EM_SEARCH_KEY`, `EM_CATALOG_DIR`, `EM_CACHE_DIR` and `EM_SEED`
    /// through `var`. Blank values count as unset.
    pub fn from_vars(var: impl Fn(&str) -> Option<String>) -> Result<Self, ConfigError> {
        let get = |name: &str| var(name).map(|v| v.trim().to_string()).filter(|v| !v.is_empty());
        let seed = match get("EM_SEED") {
            Some(s) => Some(s.parse().map_err(|e: std::num::ParseIntError| ConfigError::Env {
                name: "EM_SEED".into(),
                message: e.to_string(),
            })?),
            None => None,
        };
        Ok(Self {
            api_key: get("EM_API_KEY"),
            base_url: get("EM_BASE_URL"),
            model: get("EM_MODEL"),
            search_url: get("EM_SEARCH_URL"),
            search_key: get("EM_SEARCH_KEY"),
            catalog_dir: get("EM_CATALOG_DIR").map(PathBuf::from),
            cache_dir: get("EM_CACHE_DIR").map(PathBuf::from),
            seed,
        })
    }

    pub fn from_env() -> Result<Self, ConfigError> {
        Self::from_vars(|k| std::env::var(k).ok())
    }

    pub fn parse_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        toml::from_str(&text).map_err(|e| ConfigError::Parse {
            path: path.display().to_string(),
            message: e.to_string(),
        })
    }

    /// `self` with every key set in `file` replaced.
    pub fn overridden_by(self, file: Settings) -> Self {
        Self {
            api_key: file.api_key.or(self.api_key),
            base_url: file.base_url.or(self.base_url),
            model: file.model.or(self.model),
            search_url: file.search_url.or(self.search_url),
            search_key: file.search_key.or(self.search_key),
            catalog_dir: file.catalog_dir.or(self.catalog_dir),
            cache_dir: file.cache_dir.or(self.cache_dir),
            seed: file.seed.or(self.seed),
        }
    }

    pub fn catalog_dir(&self) -> PathBuf {
        self.catalog_dir.clone().unwrap_or_else(|| PathBuf::from(DEFAULT_CATALOG_DIR))
    }

    /// Copy safe to print: secrets replaced by `"***"`.
    pub fn redacted(&self) -> Self {
        let hide = |v: &Option<String>| v.as_ref().map(|_| "***".to_string());
        Self {
            api_key: hide(&self.api_key),
            search_key: hide(&self.search_key),
            ..self.clone()
        }
    }
}

/// Config file to use: the explicit path, else `$EM_CONFIG`, else
/// `./em.toml` if present.
pub fn config_path(explicit: Option<&Path>, env_value: Option<String>) -> Option<PathBuf> {
    if let Some(p) = explicit {
        return Some(p.to_path_buf());
    }
    if let Some(p) = env_value.filter(|v| !v.trim().is_empty()) {
        return Some(PathBuf::from(p));
    }
    let local = PathBuf::from(DEFAULT_CONFIG_FILE);
    local.is_file().then_some(local)
}

/// Environment settings with the config file (if any) applied on top.
pub fn load(explicit: Option<&Path>) -> Result<(Settings, Option<PathBuf>), ConfigError> {
    let env = Settings::from_env()?;
    match config_path(explicit, std::env::var("EM_CONFIG").ok()) {
        Some(path) => {
            let file = Settings::parse_file(&path)?;
            Ok((env.overridden_by(file), Some(path)))
        }
        None => Ok((env, None)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashMap;

    fn vars(pairs: &[(&str, &str)]) -> impl Fn(&str) -> Option<String> {
        let map: HashMap<String, String> = pairs.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect();
        move |k| map.get(k).cloned()
    }

    #[test]
    fn env_then_file() {
        let env = Settings::from_vars(vars(&[("EM_API_KEY", "env-key"), ("EM_MODEL", "m1"), ("EM_SEED", "3")])).unwrap();
        assert_eq!(env.seed, Some(3));
        let file: Settings = toml::from_str("model = \"m2\"\ncatalog_dir = \"cat\"").unwrap();
        let merged = env.overridden_by(file);
        assert_eq!(merged.api_key.as_deref(), Some("env-key"));
        assert_eq!(merged.model.as_deref(), Some("m2"));
        assert_eq!(merged.catalog_dir(), PathBuf::from("cat"));
    }

    #[test]
    fn bad_values() {
        assert!(Settings::from_vars(vars(&[("EM_SEED", "x")])).is_err());
        assert!(toml::from_str::<Settings>("colour = 1").is_err());
        assert_eq!(Settings::from_vars(vars(&[("EM_MODEL", "  ")])).unwrap().model, None);
    }

    #[test]
    fn secrets_are_redacted() {
        let s = Settings {
            api_key: Some("sk-secret".into()),
            ..Settings::default()
        };
        assert_eq!(s.redacted().api_key.as_deref(), Some("***"));
        assert_eq!(s.redacted().search_key, None);
    }

    #[test]
    fn explicit_path_wins() {
        let p = config_path(Some(Path::new("/x.toml")), Some("/y.toml".into()));
        assert_eq!(p, Some(PathBuf::from("/x.toml")));
        assert_eq!(config_path(None, Some("/y.toml".into())), Some(PathBuf::from("/y.toml")));
    }
}
